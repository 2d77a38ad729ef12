#include "baar/positional.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace baar {

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::backward: return "backward";
    case Direction::bidirectional: return "bidirectional";
  }
  return "?";
}

Direction direction_from_name(const std::string& name) {
  if (name == "forward") return Direction::forward;
  if (name == "backward") return Direction::backward;
  if (name == "bidirectional") return Direction::bidirectional;
  throw std::invalid_argument("unknown direction: " + name);
}

RotarySpec::RotarySpec(std::int64_t hd, double base) : head_dim(hd) {
  if (hd <= 0 || hd % 2 != 0) {
    throw std::invalid_argument("RotarySpec: head_dim must be positive and even, got " + std::to_string(hd));
  }
  if (base <= 1.0) throw std::invalid_argument("RotarySpec: base must exceed 1");
  angles.resize(static_cast<std::size_t>(hd / 2));
  for (std::int64_t i = 0; i < hd / 2; ++i) {
    angles[static_cast<std::size_t>(i)] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
  }
}

DecaySpec::DecaySpec(std::vector<double> g, Direction dir) : gammas(std::move(g)), direction(dir) {
  for (double gamma : gammas) {
    if (!(gamma > 0.0 && gamma < 1.0)) {
      throw std::invalid_argument("DecaySpec: gamma must lie in (0,1), got " + std::to_string(gamma));
    }
  }
}

std::vector<double> DecaySpec::default_gammas(int num_heads) {
  std::vector<double> g(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) g[static_cast<std::size_t>(h)] = 1.0 - std::pow(2.0, -5.0 - h);
  return g;
}

PositionIndex::PositionIndex(std::vector<double> positions) : positions_(std::move(positions)) {
  for (std::size_t i = 1; i < positions_.size(); ++i) {
    if (positions_[i] < positions_[i - 1]) {
      throw std::invalid_argument("PositionIndex: decreasing position at index " + std::to_string(i));
    }
  }
}

PositionIndex PositionIndex::regular(std::int64_t n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = static_cast<double>(i);
  return PositionIndex(std::move(p));
}

PositionIndex PositionIndex::with_sentinels() const {
  if (positions_.empty()) throw std::invalid_argument("with_sentinels: empty positions");
  std::vector<double> p;
  p.reserve(positions_.size() + 2);
  p.push_back(positions_.front() - 1.0);
  p.insert(p.end(), positions_.begin(), positions_.end());
  p.push_back(positions_.back() + 1.0);
  return PositionIndex(std::move(p));
}

Tensor apply_rotation(const Tensor& x, const PositionIndex& positions, const RotarySpec& spec, int sign) {
  if (x.ndim() != 2) throw std::invalid_argument("apply_rotation: expected 2-D input, got " + shape_str(x.shape()));
  if (sign != 1 && sign != -1) throw std::invalid_argument("apply_rotation: sign must be +1 or -1");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (d != spec.head_dim) {
    throw std::invalid_argument("apply_rotation: width " + std::to_string(d) + " does not match head_dim " +
                                std::to_string(spec.head_dim));
  }
  if (positions.size() != n) {
    throw std::invalid_argument("apply_rotation: " + std::to_string(positions.size()) + " positions for " +
                                std::to_string(n) + " rows");
  }
  const std::int64_t pairs = d / 2;
  std::vector<double> out(x.data());
  for (std::int64_t r = 0; r < n; ++r) {
    const double p = positions[r];
    for (std::int64_t i = 0; i < pairs; ++i) {
      const double phi = spec.angles[static_cast<std::size_t>(i)] * p;
      const double c = std::cos(phi), s = std::sin(phi);
      double& a = out[static_cast<std::size_t>(r * d + 2 * i)];
      double& b = out[static_cast<std::size_t>(r * d + 2 * i + 1)];
      const double a0 = a, b0 = b;
      a = c * a0 - s * b0;
      b = s * a0 + c * b0;
    }
  }
  const bool needs = grad_enabled() && x.requires_grad() && Tape::active() != nullptr;
  Tensor r = Tensor::from_data({n, d}, std::move(out), needs, x.precision());
  if (r.requires_grad()) {
    Tensor xc = x, rc = r;
    auto pos = positions;
    auto sp = spec;
    Tape::active()->record([xc, rc, pos, sp]() mutable {
      // rotation is orthogonal per pair: grad flows through the inverse rotation
      if (!rc.has_grad()) return;
      std::vector<double> g = rc.grad();
      const std::int64_t n2 = rc.dim(0), d2 = rc.dim(1);
      for (std::int64_t rr = 0; rr < n2; ++rr) {
        const double p = pos[rr];
        for (std::int64_t i = 0; i < d2 / 2; ++i) {
          const double phi = -sp.angles[static_cast<std::size_t>(i)] * p;
          const double c = std::cos(phi), s = std::sin(phi);
          double& a = g[static_cast<std::size_t>(rr * d2 + 2 * i)];
          double& b = g[static_cast<std::size_t>(rr * d2 + 2 * i + 1)];
          const double a0 = a, b0 = b;
          a = c * a0 - s * b0;
          b = s * a0 + c * b0;
        }
      }
      auto& gx = xc.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return r;
}

Tensor build_decay_matrix(const PositionIndex& positions, double gamma, Direction direction, Precision prec) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("build_decay_matrix: gamma must lie in (0,1), got " + std::to_string(gamma));
  }
  const std::int64_t n = positions.size();
  if (n == 0) throw std::invalid_argument("build_decay_matrix: empty positions");

  // Integral positions (token indices, whole months) admit a shared power
  // table; entries stay identical to the direct std::pow evaluation.
  bool integral = true;
  for (std::int64_t i = 0; i < n && integral; ++i) {
    integral = positions[i] == std::floor(positions[i]);
  }
  std::vector<double> pows;
  if (integral) {
    const std::int64_t span = static_cast<std::int64_t>(positions[n - 1] - positions[0]);
    pows.resize(static_cast<std::size_t>(span) + 1);
    for (std::int64_t k = 0; k <= span; ++k) pows[static_cast<std::size_t>(k)] = std::pow(gamma, static_cast<double>(k));
  }
  auto decay = [&](double delta) {
    return integral ? pows[static_cast<std::size_t>(delta)] : std::pow(gamma, delta);
  };

  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double v = 0.0;
      switch (direction) {
        case Direction::forward:
          v = i >= j ? decay(positions[i] - positions[j]) : 0.0;
          break;
        case Direction::backward:
          v = i <= j ? decay(positions[j] - positions[i]) : 0.0;
          break;
        case Direction::bidirectional:
          v = decay(std::abs(positions[i] - positions[j]));
          break;
      }
      out[static_cast<std::size_t>(i * n + j)] = v;
    }
  }
  return Tensor::from_data({n, n}, std::move(out), false, prec);
}

}  // namespace baar
