#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "baar/retention.hpp"

namespace baar {

enum class LayerPattern : std::uint8_t { alternating = 0, forward_only = 1, bidirectional = 2 };
enum class ReprMode : std::uint8_t { sos = 0, eos = 1, sos_plus_eos = 2, mean = 3 };
enum class ReprLayers : std::uint8_t { last = 0, last_two = 1 };

const char* layer_pattern_name(LayerPattern p);
LayerPattern layer_pattern_from_name(const std::string& name);
ReprMode repr_mode_from_name(const std::string& name);
ReprLayers repr_layers_from_name(const std::string& name);
const char* repr_mode_name(ReprMode m);
const char* repr_layers_name(ReprLayers l);

struct ModelConfig {
  std::int64_t layers = 4;        // even for the alternating pattern
  std::int64_t d_model = 64;
  int num_heads = 4;
  std::int64_t head_dim = 16;
  std::int64_t ff_dim = 128;
  std::int64_t feature_dim = 1;   // V, continuous mode
  std::int64_t vocab_size = 0;    // > 0 switches to discrete mode
  std::int64_t chunk_size = 64;
  double rotary_base = 10000.0;
  bool use_rotary = true;
  bool rotary_uses_timestamps = true;  // off: rotary sees token order, decay keeps timestamps
  bool use_tokenizer = true;           // continuous mode only
  LayerPattern pattern = LayerPattern::alternating;
  Precision precision = Precision::f32;
  std::vector<double> gammas;          // per head; empty = defaults

  bool discrete() const { return vocab_size > 0; }
  std::int64_t output_dim() const { return discrete() ? vocab_size : feature_dim; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// One encoded sequence: [SOS] + N token embeddings + [EOS], with positions
// extrapolated one unit beyond each end, plus the prediction targets.
struct TokenSequence {
  Tensor embeddings;    // (N+2)×d
  PositionIndex positions;
  std::int64_t n_real = 0;
  Tensor target_values;                  // N×V, detached (continuous)
  std::vector<std::int64_t> target_codes;  // discrete
  std::vector<bool> masked_slots;          // per token slot, masking pre-training

  std::int64_t sos_index() const { return 0; }
  std::int64_t eos_index() const { return n_real + 1; }
};

struct ModelOutput {
  std::vector<Tensor> hidden_per_layer;                 // exactly L entries
  std::vector<std::vector<Tensor>> retention_per_layer; // per layer, per head; filled when captured
  Tensor next_token_logits;  // layer L-1 states through the output head
  Tensor prev_token_logits;  // layer L states; undefined unless alternating
  std::int64_t n_real = 0;
};

struct ForwardOptions {
  RetentionMode mode = RetentionMode::chunkwise;
  bool capture_retention = false;  // forces the parallel form
};

class BaarModel {
 public:
  BaarModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Two stride-2 width-3 convolutions: T×V -> ceil(T/4)×V. Needs T >= 4.
  Tensor tokenize(const Tensor& raw) const;
  TokenSequence embed(const Tensor& tokens, const std::vector<double>* timestamps = nullptr) const;
  TokenSequence embed_codes(const std::vector<std::int64_t>& codes,
                            const std::vector<double>* timestamps = nullptr) const;
  // masking baseline on discrete streams: zeroed embedding rows at the
  // masked slots (no reserved mask code in the vocabulary)
  TokenSequence embed_codes_masked(const std::vector<std::int64_t>& codes,
                                   const std::vector<double>& months,
                                   const std::vector<bool>& zero_slots) const;
  // tokenize (when configured) + embed + detached prediction targets
  TokenSequence encode_series(const Tensor& raw, const std::vector<double>* timestamps = nullptr) const;
  TokenSequence encode_events(const std::vector<std::int64_t>& codes,
                              const std::vector<double>& months) const;

  ModelOutput forward(const TokenSequence& seq, const ForwardOptions& opts = {}) const;

  Tensor sequence_representation(const ModelOutput& out, ReprMode mode, ReprLayers layers) const;

  Direction layer_direction(std::int64_t layer_index_1based) const;
  const std::vector<RetentionLayer>& layers() const { return layers_; }

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  void save(const std::string& path) const;
  static BaarModel load(const std::string& path);

 private:
  ModelConfig cfg_;
  Tensor conv1_k, conv1_b, conv2_k, conv2_b;
  Tensor w_in, b_in;      // continuous projection
  Tensor embed_table;     // discrete lookup
  Tensor sos_vec, eos_vec;
  std::vector<RetentionLayer> layers_;
  Tensor w_out, b_out;

  TokenSequence embed_rows(Tensor x_tokens, PositionIndex positions) const;
};

// Checkpoint container: magic + version + config JSON + named tensors.
// Also used for fine-tuned heads and optimizer-free snapshots.
inline constexpr char kCheckpointMagic[8] = {'B', 'A', 'A', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_named_tensors(const std::string& path, const std::string& config_json,
                        const std::vector<std::pair<std::string, Tensor>>& tensors);
std::pair<std::string, std::vector<std::pair<std::string, Tensor>>> load_named_tensors(
    const std::string& path);

}  // namespace baar
