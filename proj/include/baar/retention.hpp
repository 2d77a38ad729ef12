#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "baar/positional.hpp"
#include "baar/tensor.hpp"

namespace baar {

enum class RetentionMode : std::uint8_t { parallel = 0, recurrent = 1, chunkwise = 2 };

struct RetentionHead {
  Tensor w_q, w_k, w_v;  // d_model × head_dim
  double gamma = 0.0;
};

// Cross-chunk / recurrent state: one d×d accumulator per head, anchored at
// the position of the last (forward) or first (backward) token folded in.
struct RetentionState {
  std::vector<Tensor> s;
  double last_position = 0.0;
};

struct RetentionLayer {
  Direction direction = Direction::forward;
  std::vector<RetentionHead> heads;
  Tensor w_o, b_o;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  RotarySpec rotary;
  bool use_rotary = true;

  std::int64_t d_model() const { return heads.empty() ? 0 : heads[0].w_q.dim(0); }
  std::int64_t head_dim() const { return heads.empty() ? 0 : heads[0].w_q.dim(1); }

  static RetentionLayer init(std::int64_t d_model, int num_heads, std::int64_t head_dim,
                             std::int64_t ff_dim, Direction direction, const DecaySpec& decay,
                             const RotarySpec& rotary, std::mt19937_64& rng,
                             Precision prec = Precision::f64, double init_std = 0.02);

  std::vector<std::pair<std::string, Tensor>> parameters(const std::string& prefix) const;
};

struct RetentionResult {
  Tensor y;                        // N×d block output
  std::vector<Tensor> retention;   // per-head N×N score matrices (parallel form with capture)
  std::optional<RetentionState> final_state;  // recurrent form
};

// All three forms compute the same function of (x, layer, positions); they
// differ in work layout. parallel materializes the N×N retention matrices,
// recurrent carries a d×d state across steps, chunkwise mixes both.
// rotary_positions overrides the phase index (decay keeps `positions`);
// null means rotation and decay share the same index.
RetentionResult retention_parallel(const Tensor& x, const RetentionLayer& layer,
                                   const PositionIndex& positions, bool capture = true,
                                   const PositionIndex* rotary_positions = nullptr);
RetentionResult retention_recurrent(const Tensor& x, const RetentionLayer& layer,
                                    const PositionIndex& positions,
                                    const PositionIndex* rotary_positions = nullptr);
RetentionResult retention_chunkwise(const Tensor& x, const RetentionLayer& layer,
                                    const PositionIndex& positions, std::int64_t chunk_size,
                                    const PositionIndex* rotary_positions = nullptr);

RetentionResult retention_forward(const Tensor& x, const RetentionLayer& layer,
                                  const PositionIndex& positions, RetentionMode mode,
                                  std::int64_t chunk_size, bool capture,
                                  const PositionIndex* rotary_positions = nullptr);

// Softmax attention baseline, optionally causal (lower-triangular mask).
struct AttentionParams {
  Tensor w_q, w_k, w_v;  // d_model × d_k
  static AttentionParams init(std::int64_t d_model, std::int64_t d_k, std::mt19937_64& rng,
                              Precision prec = Precision::f64, double init_std = 0.02);
};

struct AttentionResult {
  Tensor y;  // N×d_k
  Tensor a;  // N×N attention matrix
};

AttentionResult causal_attention(const Tensor& x, const AttentionParams& params, bool masked);

}  // namespace baar
