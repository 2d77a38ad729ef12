#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace baar {

// One multichannel series, values row-major T×V. label < 0 means unlabeled.
struct Series {
  std::int64_t t = 0;
  std::int64_t v = 1;
  std::vector<double> values;
  std::vector<double> timestamps;  // optional; empty = regular grid
  int label = -1;
  double reg_target = 0.0;           // regression tasks
  std::int64_t shapelet_start = -1;  // ground-truth span, [start, end)
  std::int64_t shapelet_end = -1;

  double at(std::int64_t ti, std::int64_t vi) const { return values[static_cast<std::size_t>(ti * v + vi)]; }
};

struct ShapeletDataset {
  std::vector<Series> items;
  int n_classes = 0;
  std::int64_t t = 0;
  std::int64_t v = 0;
  std::int64_t shapelet_len = 0;
  // the class templates that were planted, each shapelet_len long
  std::vector<std::vector<double>> waveforms;
};

struct EventStream {
  std::vector<std::int64_t> codes;
  std::vector<double> months;     // non-decreasing
  std::vector<int> labels;        // multi-hot over phenotype rules
};

struct PhenotypeRule {
  std::string name;
  std::vector<std::int64_t> required_codes;  // all present => positive
};

// Gaussian-noise base plus one class waveform planted additively at a random
// offset, then standardized per channel. snr scales the waveform amplitude
// against unit noise.
ShapeletDataset gen_shapelet_dataset(std::int64_t n_seqs, std::int64_t t, std::int64_t v, int n_classes,
                                     double snr, std::uint64_t seed);

// Irregular coded event streams: Poisson month gaps, rule-implied labels.
// Streams are always at least 10 events long.
std::vector<EventStream> gen_event_streams(std::int64_t n_patients, std::int64_t vocab,
                                           double mean_events, const std::vector<PhenotypeRule>& rules,
                                           std::uint64_t seed, double mean_gap_months = 2.0);

void standardize_series(Series& s);  // per channel: zero mean, unit variance

struct SplitIndices {
  std::vector<std::size_t> train, valid, test;
};
// Seed-stable shuffled 80/10/10 split.
SplitIndices split_indices(std::size_t n, std::uint64_t seed);
// Seed-stable subset used when pre-training and fine-tuning share a dataset.
std::vector<std::size_t> take_fraction(const std::vector<std::size_t>& pool, double fraction,
                                       std::uint64_t seed);

// CSV schemas (UTF-8, comma separated, header required):
//   series: seq_id,channel,t,value
//   events: patient_id,month,code
//   labels: seq_id,label[,label...]
void save_series_csv(const std::string& path, const std::vector<Series>& items);
std::vector<Series> load_series_csv(const std::string& path);
void save_events_csv(const std::string& path, const std::vector<EventStream>& streams);
std::vector<EventStream> load_events_csv(const std::string& path);
void save_labels_csv(const std::string& path, const std::vector<std::vector<int>>& labels_per_item);
std::vector<std::vector<int>> load_labels_csv(const std::string& path);

}  // namespace baar
