#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "baar/data.hpp"
#include "baar/model.hpp"
#include "baar/training.hpp"

namespace baar {

struct SpectrumReport {
  std::vector<double> singular_values;        // descending
  std::vector<double> normalized_cumulative;  // non-decreasing, ends at 1
  std::int64_t numerical_rank = 0;            // count of sigma_i > tol * sigma_1
};

// One-sided Jacobi decomposition of a square matrix.
SpectrumReport svd_spectrum(const Tensor& m, double tol = 1e-8);

struct SaliencyMap {
  Tensor values;  // (N+2)×d absolute gradients of the generative loss
  double shapelet_mean = 0.0;
  double background_mean = 0.0;
};

// Gradient saliency of the prediction-layer states against the model's own
// generative targets (next-previous for the alternating stack, next-token
// for forward-only, full reconstruction for bidirectional). Row means are
// aggregated over token slots whose 4-timestep receptive fields overlap the
// recorded shapelet span; background covers the other real-token slots.
SaliencyMap saliency(const BaarModel& model, const Series& s);

// Head-averaged forward retention of layer L-1 plus head-averaged backward
// retention of layer L; requires captured retention matrices.
Tensor combined_bidirectional_heatmap(const ModelOutput& out);

std::vector<std::string> slot_names(std::int64_t n_real);
void write_matrix_csv(const std::string& path, const Tensor& m, const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names);

}  // namespace baar
