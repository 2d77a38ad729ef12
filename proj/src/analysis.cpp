#include "baar/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace baar {

namespace {

// One-sided Jacobi: orthogonalize column pairs until the Gram off-diagonals
// vanish; the singular values are the final column norms.
std::vector<double> jacobi_singular_values(const Tensor& m) {
  const std::int64_t n = m.dim(0);
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(n),
                                        std::vector<double>(static_cast<std::size_t>(n)));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = m.at(i, j);

  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
    return s;
  };

  const int max_sweeps = 60;
  const double eps = 1e-14;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool converged = true;
    for (std::int64_t i = 0; i < n - 1; ++i) {
      for (std::int64_t j = i + 1; j < n; ++j) {
        auto& ci = cols[static_cast<std::size_t>(i)];
        auto& cj = cols[static_cast<std::size_t>(j)];
        const double alpha = dot(ci, ci);
        const double beta = dot(cj, cj);
        const double g = dot(ci, cj);
        if (std::abs(g) <= eps * std::sqrt(alpha * beta) || g == 0.0) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * g);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::int64_t r = 0; r < n; ++r) {
          const double a = ci[static_cast<std::size_t>(r)];
          const double b = cj[static_cast<std::size_t>(r)];
          ci[static_cast<std::size_t>(r)] = c * a - s * b;
          cj[static_cast<std::size_t>(r)] = s * a + c * b;
        }
      }
    }
    if (converged) break;
  }

  std::vector<double> sigma(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < n; ++j) sigma[static_cast<std::size_t>(j)] = std::sqrt(dot(cols[static_cast<std::size_t>(j)], cols[static_cast<std::size_t>(j)]));
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

}  // namespace

SpectrumReport svd_spectrum(const Tensor& m, double tol) {
  if (m.ndim() != 2 || m.dim(0) != m.dim(1)) {
    throw std::invalid_argument("svd_spectrum: expected a square matrix, got " + shape_str(m.shape()));
  }
  SpectrumReport rep;
  rep.singular_values = jacobi_singular_values(m);
  const double total = std::accumulate(rep.singular_values.begin(), rep.singular_values.end(), 0.0);
  double cum = 0.0;
  for (double s : rep.singular_values) {
    cum += s;
    rep.normalized_cumulative.push_back(total > 0.0 ? cum / total : 1.0);
  }
  if (!rep.normalized_cumulative.empty()) rep.normalized_cumulative.back() = 1.0;
  const double top = rep.singular_values.empty() ? 0.0 : rep.singular_values.front();
  if (top > 0.0) {
    for (double s : rep.singular_values) rep.numerical_rank += s > tol * top ? 1 : 0;
  }
  return rep;
}

SaliencyMap saliency(const BaarModel& model, const Series& s) {
  const LayerPattern pattern = model.config().pattern;
  PretrainStrategy strategy;
  switch (pattern) {
    case LayerPattern::alternating: strategy.kind = StrategyKind::next_previous; break;
    case LayerPattern::forward_only: strategy.kind = StrategyKind::next_only; break;
    case LayerPattern::bidirectional: strategy.kind = StrategyKind::masking; break;
  }

  Tape tape;
  Tensor raw = series_tensor(s, model.config().precision);
  TokenSequence seq = model.encode_series(raw);
  if (pattern == LayerPattern::bidirectional) {
    seq.masked_slots.assign(static_cast<std::size_t>(seq.n_real), true);  // reconstruct everything
  }
  ModelOutput out = model.forward(seq);
  Tensor loss = pretrain_loss(out, seq, strategy);
  tape.backward(loss);

  // both prediction layers feed the objective; their absolute gradients are
  // summed so every real-token slot is covered
  const std::size_t L = out.hidden_per_layer.size();
  std::vector<const Tensor*> watched{&out.hidden_per_layer[L - 1]};
  if (pattern == LayerPattern::alternating && L >= 2) watched.push_back(&out.hidden_per_layer[L - 2]);
  const std::int64_t rows = watched[0]->dim(0);
  const std::int64_t d = watched[0]->dim(1);
  std::vector<double> absgrad(static_cast<std::size_t>(rows * d), 0.0);
  for (const Tensor* h : watched) {
    if (!h->has_grad()) continue;
    const auto& g = h->grad();
    for (std::size_t i = 0; i < g.size(); ++i) absgrad[i] += std::abs(g[i]);
  }
  SaliencyMap map;
  map.values = Tensor::from_data({rows, d}, std::move(absgrad), false, Precision::f64);

  // token j of the subsampled sequence covers timesteps [4j, 4j+4)
  const std::int64_t per_token = model.config().use_tokenizer ? 4 : 1;
  double shapelet_sum = 0.0, background_sum = 0.0;
  std::int64_t shapelet_rows = 0, background_rows = 0;
  for (std::int64_t slot = 1; slot <= seq.n_real; ++slot) {
    const std::int64_t tok = slot - 1;
    const std::int64_t span_start = tok * per_token;
    const std::int64_t span_end = span_start + per_token;
    double row_mean = 0.0;
    for (std::int64_t c = 0; c < d; ++c) row_mean += map.values.at(slot, c);
    row_mean /= static_cast<double>(d);
    const bool overlaps = s.shapelet_start >= 0 && span_start < s.shapelet_end && s.shapelet_start < span_end;
    if (overlaps) {
      shapelet_sum += row_mean;
      ++shapelet_rows;
    } else {
      background_sum += row_mean;
      ++background_rows;
    }
  }
  map.shapelet_mean = shapelet_rows > 0 ? shapelet_sum / static_cast<double>(shapelet_rows) : 0.0;
  map.background_mean = background_rows > 0 ? background_sum / static_cast<double>(background_rows) : 0.0;
  return map;
}

Tensor combined_bidirectional_heatmap(const ModelOutput& out) {
  const std::size_t L = out.retention_per_layer.size();
  if (L < 2 || out.retention_per_layer[L - 2].empty() || out.retention_per_layer[L - 1].empty()) {
    throw std::invalid_argument("combined_bidirectional_heatmap: retention matrices were not captured");
  }
  auto head_mean = [](const std::vector<Tensor>& heads) {
    Tensor acc = heads[0];
    for (std::size_t h = 1; h < heads.size(); ++h) acc = add(acc, heads[h]);
    return scale(acc, 1.0 / static_cast<double>(heads.size()));
  };
  NoGradGuard ng;
  return add(head_mean(out.retention_per_layer[L - 2]), head_mean(out.retention_per_layer[L - 1]));
}

std::vector<std::string> slot_names(std::int64_t n_real) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(n_real) + 2);
  names.emplace_back("[SOS]");
  for (std::int64_t i = 1; i <= n_real; ++i) names.push_back("t" + std::to_string(i));
  names.emplace_back("[EOS]");
  return names;
}

void write_matrix_csv(const std::string& path, const Tensor& m, const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names) {
  if (m.ndim() != 2) throw std::invalid_argument("write_matrix_csv: expected 2-D matrix");
  if (static_cast<std::int64_t>(row_names.size()) != m.dim(0) ||
      static_cast<std::int64_t>(col_names.size()) != m.dim(1)) {
    throw std::invalid_argument("write_matrix_csv: header sizes do not match the matrix");
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open file for writing");
  os << "slot";
  for (const auto& c : col_names) os << ',' << c;
  os << '\n';
  char buf[32];
  for (std::int64_t i = 0; i < m.dim(0); ++i) {
    os << row_names[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < m.dim(1); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace baar
