#include "baar/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace baar {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ordinary least squares for y ~ polynomial of degree `deg` in x
double fit_r2_poly(const std::vector<double>& xs, const std::vector<double>& ys, int deg) {
  const std::size_t n = xs.size();
  if (n != ys.size() || n < static_cast<std::size_t>(deg + 2)) {
    throw std::invalid_argument("fit_r2: need more points than coefficients");
  }
  const int k = deg + 1;
  // normal equations A c = b with A_ij = sum x^(i+j), b_i = sum y x^i
  std::vector<double> a(static_cast<std::size_t>(k * k), 0.0), b(static_cast<std::size_t>(k), 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    double xp = 1.0;
    std::vector<double> powers(static_cast<std::size_t>(2 * deg + 1));
    for (int p = 0; p <= 2 * deg; ++p) {
      powers[static_cast<std::size_t>(p)] = xp;
      xp *= xs[s];
    }
    for (int i = 0; i < k; ++i) {
      b[static_cast<std::size_t>(i)] += ys[s] * powers[static_cast<std::size_t>(i)];
      for (int j = 0; j < k; ++j) a[static_cast<std::size_t>(i * k + j)] += powers[static_cast<std::size_t>(i + j)];
    }
  }
  // gaussian elimination with partial pivoting
  std::vector<double> c(b);
  for (int col = 0; col < k; ++col) {
    int pivot = col;
    for (int r = col + 1; r < k; ++r)
      if (std::abs(a[static_cast<std::size_t>(r * k + col)]) > std::abs(a[static_cast<std::size_t>(pivot * k + col)])) pivot = r;
    if (a[static_cast<std::size_t>(pivot * k + col)] == 0.0) throw std::runtime_error("fit_r2: singular system");
    if (pivot != col) {
      for (int j = 0; j < k; ++j) std::swap(a[static_cast<std::size_t>(col * k + j)], a[static_cast<std::size_t>(pivot * k + j)]);
      std::swap(c[static_cast<std::size_t>(col)], c[static_cast<std::size_t>(pivot)]);
    }
    for (int r = col + 1; r < k; ++r) {
      const double f = a[static_cast<std::size_t>(r * k + col)] / a[static_cast<std::size_t>(col * k + col)];
      for (int j = col; j < k; ++j) a[static_cast<std::size_t>(r * k + j)] -= f * a[static_cast<std::size_t>(col * k + j)];
      c[static_cast<std::size_t>(r)] -= f * c[static_cast<std::size_t>(col)];
    }
  }
  std::vector<double> coef(static_cast<std::size_t>(k));
  for (int r = k - 1; r >= 0; --r) {
    double acc = c[static_cast<std::size_t>(r)];
    for (int j = r + 1; j < k; ++j) acc -= a[static_cast<std::size_t>(r * k + j)] * coef[static_cast<std::size_t>(j)];
    coef[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r * k + r)];
  }
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(n);
  double sse = 0.0, sst = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    double pred = 0.0, xp = 1.0;
    for (int p = 0; p < k; ++p) {
      pred += coef[static_cast<std::size_t>(p)] * xp;
      xp *= xs[s];
    }
    sse += (ys[s] - pred) * (ys[s] - pred);
    sst += (ys[s] - mean) * (ys[s] - mean);
  }
  return sst > 0.0 ? 1.0 - sse / sst : 1.0;
}

}  // namespace

double fit_r2_linear(const std::vector<double>& xs, const std::vector<double>& ys) {
  return fit_r2_poly(xs, ys, 1);
}

double fit_r2_quadratic(const std::vector<double>& xs, const std::vector<double>& ys) {
  return fit_r2_poly(xs, ys, 2);
}

BenchReport bench_retention(RetentionMode mode, const std::vector<std::int64_t>& lengths,
                            std::int64_t d_model, int num_heads, int reps, std::uint64_t seed,
                            std::int64_t chunk_size) {
  if (lengths.empty()) throw std::invalid_argument("bench_retention: no lengths");
  if (reps < 1) throw std::invalid_argument("bench_retention: reps must be positive");
  const std::int64_t head_dim = d_model / num_heads;
  std::mt19937_64 rng(seed);
  RetentionLayer layer =
      RetentionLayer::init(d_model, num_heads, head_dim, 2 * d_model, Direction::forward,
                           DecaySpec(DecaySpec::default_gammas(num_heads), Direction::forward),
                           RotarySpec(head_dim), rng);
  BenchReport report;
  report.mode = mode;
  NoGradGuard ng;
  for (std::int64_t n : lengths) {
    Tensor x = Tensor::randn({n, d_model}, rng, 1.0);
    PositionIndex pos = PositionIndex::regular(n);
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      RetentionResult res = retention_forward(x, layer, pos, mode, chunk_size, false);
      const auto t1 = std::chrono::steady_clock::now();
      if (!res.y.defined()) throw std::runtime_error("bench_retention: missing output");
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    report.rows.push_back({n, median(times)});
  }
  std::vector<double> xs, ys;
  for (const auto& row : report.rows) {
    xs.push_back(static_cast<double>(row.n));
    ys.push_back(row.seconds);
  }
  if (xs.size() >= 3) report.linear_r2 = fit_r2_linear(xs, ys);
  if (xs.size() >= 4) report.quadratic_r2 = fit_r2_quadratic(xs, ys);
  return report;
}

}  // namespace baar
