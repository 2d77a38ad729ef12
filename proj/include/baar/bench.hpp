#pragma once

#include <cstdint>
#include <vector>

#include "baar/retention.hpp"

namespace baar {

struct BenchRow {
  std::int64_t n = 0;
  double seconds = 0.0;
};

struct BenchReport {
  RetentionMode mode = RetentionMode::recurrent;
  std::vector<BenchRow> rows;
  double linear_r2 = 0.0;
  double quadratic_r2 = 0.0;
};

// Times a single retention block forward (no grad) over the given lengths,
// median of `reps` runs each.
BenchReport bench_retention(RetentionMode mode, const std::vector<std::int64_t>& lengths,
                            std::int64_t d_model, int num_heads, int reps, std::uint64_t seed,
                            std::int64_t chunk_size = 64);

double fit_r2_linear(const std::vector<double>& xs, const std::vector<double>& ys);
double fit_r2_quadratic(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace baar
