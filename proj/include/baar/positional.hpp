#pragma once

#include <cstdint>
#include <vector>

#include "baar/tensor.hpp"

namespace baar {

enum class Direction : std::uint8_t { forward = 0, backward = 1, bidirectional = 2 };

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Per-pair rotation angles theta_i = base^(-2i/head_dim).
struct RotarySpec {
  std::int64_t head_dim = 0;
  std::vector<double> angles;  // head_dim/2 entries, strictly decreasing

  RotarySpec() = default;
  RotarySpec(std::int64_t head_dim, double base = 10000.0);
};

// One decay rate per head, each in (0,1). The defaults follow
// gamma_h = 1 - 2^(-5-h).
struct DecaySpec {
  std::vector<double> gammas;
  Direction direction = Direction::forward;

  DecaySpec() = default;
  DecaySpec(std::vector<double> gammas, Direction direction);
  static std::vector<double> default_gammas(int num_heads);
};

// Real-valued token positions: the token index for regular series, months
// since the first record for irregular event streams. Must be non-decreasing.
class PositionIndex {
 public:
  PositionIndex() = default;
  explicit PositionIndex(std::vector<double> positions);
  static PositionIndex regular(std::int64_t n);  // 0,1,...,n-1

  std::int64_t size() const { return static_cast<std::int64_t>(positions_.size()); }
  double operator[](std::int64_t i) const { return positions_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& values() const { return positions_; }

  // [SOS] at min-1 and [EOS] at max+1 around the existing positions.
  PositionIndex with_sentinels() const;

 private:
  std::vector<double> positions_;
};

// Rotates each (even, odd) dimension pair of x by its angle theta_i * p_n.
// sign marks the query (+1) or key (-1) side of the score. The key-side
// phase is conjugate in complex form, which the transpose inside Q K^T
// absorbs, so both sides apply the same forward rotation; this is what
// makes scores depend on position differences only.
Tensor apply_rotation(const Tensor& x, const PositionIndex& positions, const RotarySpec& spec, int sign);

// N×N decay matrix: forward is lower triangular gamma^(p_n-p_m), backward
// its mirror, bidirectional gamma^|p_n-p_m|. Entries are constants (no grad).
Tensor build_decay_matrix(const PositionIndex& positions, double gamma, Direction direction,
                          Precision prec = Precision::f64);

}  // namespace baar
