#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "baar/tensor.hpp"

namespace baar::testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

// Central finite-difference check of d(loss)/d(param) for every entry of
// every listed parameter. make_loss must rebuild the computation from the
// parameters' current buffers on each call.
inline double grad_check(std::vector<Tensor> params, const std::function<Tensor()>& make_loss,
                         double step = 1e-5) {
  std::vector<std::vector<double>> autograd;
  {
    Tape tape;
    Tensor loss = make_loss();
    tape.backward(loss);
    for (auto& p : params) {
      autograd.push_back(p.has_grad() ? p.grad() : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0));
    }
  }
  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& buf = params[pi].mutable_data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double saved = buf[i];
      buf[i] = saved + step;
      const double up = make_loss().item();
      buf[i] = saved - step;
      const double down = make_loss().item();
      buf[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, rel_err(fd, autograd[pi][i]));
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                            double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev, requires_grad, Precision::f64);
}

// Independent spectrum oracle: eigenvalues of M^T M through classic
// two-sided Jacobi on the symmetric Gram matrix; singular values are their
// square roots.
inline std::vector<double> gram_singular_values(const Tensor& m) {
  const std::int64_t n = m.dim(0);
  std::vector<double> a(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < n; ++k) s += m.at(k, i) * m.at(k, j);
      a[static_cast<std::size_t>(i * n + j)] = s;
    }
  auto at = [&](std::int64_t r, std::int64_t c) -> double& { return a[static_cast<std::size_t>(r * n + c)]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        if (i != j) off += at(i, j) * at(i, j);
    if (off < 1e-26) break;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        if (at(p, q) == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> sv(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) sv[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, at(i, i)));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

inline int rank_from_singular_values(const std::vector<double>& sv, double tol = 1e-8) {
  if (sv.empty() || sv.front() <= 0.0) return 0;
  int r = 0;
  for (double s : sv) r += s > tol * sv.front() ? 1 : 0;
  return r;
}

}  // namespace baar::testing
