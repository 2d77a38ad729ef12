#include "baar/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace baar {

namespace {

constexpr double kPi = 3.141592653589793;

// Fixed waveform per class: distinct frequency plus a class-dependent blend
// of sine and triangle so neighbouring classes differ in shape, not just rate.
std::vector<double> class_waveform(int cls, std::int64_t len) {
  std::vector<double> w(static_cast<std::size_t>(len));
  const double freq = 1.5 + 1.0 * static_cast<double>(cls);
  const double blend = (cls % 2 == 0) ? 0.0 : 0.75;
  for (std::int64_t i = 0; i < len; ++i) {
    const double phase = freq * 2.0 * kPi * static_cast<double>(i) / static_cast<double>(len);
    const double tri = 2.0 * std::abs(2.0 * (phase / (2.0 * kPi) - std::floor(phase / (2.0 * kPi) + 0.5))) - 1.0;
    w[static_cast<std::size_t>(i)] = (1.0 - blend) * std::sin(phase) + blend * tri;
  }
  return w;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void check_header(const std::vector<std::string>& got, const std::vector<std::string>& want,
                  const std::string& path) {
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (i >= got.size() || got[i] != want[i]) {
      const std::string found = i < got.size() ? got[i] : "<missing>";
      throw std::runtime_error(path + ": header mismatch at column " + std::to_string(i + 1) +
                               ": expected '" + want[i] + "', found '" + found + "'");
    }
  }
  if (got.size() > want.size()) {
    throw std::runtime_error(path + ": header mismatch at column " + std::to_string(want.size() + 1) +
                             ": unexpected '" + got[want.size()] + "'");
  }
}

double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed number '" + s + "'");
  }
}

std::int64_t parse_int(const std::string& s, const std::string& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed integer '" + s + "'");
  }
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open file");
  return is;
}

}  // namespace

ShapeletDataset gen_shapelet_dataset(std::int64_t n_seqs, std::int64_t t, std::int64_t v, int n_classes,
                                     double snr, std::uint64_t seed) {
  if (snr <= 0.0) throw std::invalid_argument("gen_shapelet_dataset: snr must be positive");
  if (n_classes < 1) throw std::invalid_argument("gen_shapelet_dataset: need at least one class");
  if (v < 1) throw std::invalid_argument("gen_shapelet_dataset: need at least one channel");
  const std::int64_t slen = std::max<std::int64_t>(2, t / 8);
  if (t < 4 * slen) throw std::invalid_argument("gen_shapelet_dataset: series too short for its shapelet");

  ShapeletDataset ds;
  ds.n_classes = n_classes;
  ds.t = t;
  ds.v = v;
  ds.shapelet_len = slen;
  for (int c = 0; c < n_classes; ++c) ds.waveforms.push_back(class_waveform(c, slen));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> offset_dist(0, t - slen);
  for (std::int64_t i = 0; i < n_seqs; ++i) {
    Series s;
    s.t = t;
    s.v = v;
    s.label = static_cast<int>(i % n_classes);
    s.values.resize(static_cast<std::size_t>(t * v));
    for (double& x : s.values) x = noise(rng);
    const std::int64_t off = offset_dist(rng);
    s.shapelet_start = off;
    s.shapelet_end = off + slen;
    const auto& w = ds.waveforms[static_cast<std::size_t>(s.label)];
    for (std::int64_t j = 0; j < slen; ++j)
      for (std::int64_t ch = 0; ch < v; ++ch)
        s.values[static_cast<std::size_t>((off + j) * v + ch)] += snr * w[static_cast<std::size_t>(j)];
    standardize_series(s);
    ds.items.push_back(std::move(s));
  }
  return ds;
}

std::vector<EventStream> gen_event_streams(std::int64_t n_patients, std::int64_t vocab,
                                           double mean_events, const std::vector<PhenotypeRule>& rules,
                                           std::uint64_t seed, double mean_gap_months) {
  if (vocab < 2) throw std::invalid_argument("gen_event_streams: vocab must be at least 2");
  for (const auto& r : rules)
    for (auto c : r.required_codes)
      if (c < 0 || c >= vocab) throw std::invalid_argument("gen_event_streams: rule code outside vocab");

  std::mt19937_64 rng(seed);
  std::poisson_distribution<std::int64_t> length_dist(mean_events);
  std::poisson_distribution<std::int64_t> gap_dist(mean_gap_months);
  std::uniform_int_distribution<std::int64_t> code_dist(0, vocab - 1);
  std::bernoulli_distribution carry(0.5);

  std::vector<EventStream> out;
  out.reserve(static_cast<std::size_t>(n_patients));
  for (std::int64_t p = 0; p < n_patients; ++p) {
    EventStream es;
    const std::int64_t len = std::max<std::int64_t>(10, length_dist(rng));
    es.codes.resize(static_cast<std::size_t>(len));
    for (auto& c : es.codes) c = code_dist(rng);
    // each rule combination is planted in roughly half of the patients
    for (const auto& rule : rules) {
      if (!carry(rng)) continue;
      for (auto code : rule.required_codes) {
        std::uniform_int_distribution<std::int64_t> pos_dist(0, len - 1);
        es.codes[static_cast<std::size_t>(pos_dist(rng))] = code;
      }
    }
    es.months.resize(static_cast<std::size_t>(len));
    double month = 0.0;
    for (auto& m : es.months) {
      m = month;
      month += static_cast<double>(gap_dist(rng));
    }
    es.labels.assign(rules.size(), 0);
    for (std::size_t ri = 0; ri < rules.size(); ++ri) {
      bool all = true;
      for (auto code : rules[ri].required_codes) {
        if (std::find(es.codes.begin(), es.codes.end(), code) == es.codes.end()) {
          all = false;
          break;
        }
      }
      es.labels[ri] = all ? 1 : 0;
    }
    out.push_back(std::move(es));
  }
  return out;
}

void standardize_series(Series& s) {
  for (std::int64_t ch = 0; ch < s.v; ++ch) {
    double mu = 0.0;
    for (std::int64_t ti = 0; ti < s.t; ++ti) mu += s.at(ti, ch);
    mu /= static_cast<double>(s.t);
    double var = 0.0;
    for (std::int64_t ti = 0; ti < s.t; ++ti) {
      const double d = s.at(ti, ch) - mu;
      var += d * d;
    }
    var /= static_cast<double>(s.t);
    const double sd = std::sqrt(var);
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::int64_t ti = 0; ti < s.t; ++ti) {
      double& x = s.values[static_cast<std::size_t>(ti * s.v + ch)];
      x = (x - mu) * inv;
    }
  }
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices s;
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
  return s;
}

std::vector<std::size_t> take_fraction(const std::vector<std::size_t>& pool, double fraction,
                                       std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) throw std::invalid_argument("take_fraction: fraction in (0,1]");
  std::vector<std::size_t> order = pool;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(static_cast<double>(pool.size()) * fraction));
  return order;
}

void save_series_csv(const std::string& path, const std::vector<Series>& items) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open file for writing");
  os << "seq_id,channel,t,value\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Series& s = items[i];
    for (std::int64_t ti = 0; ti < s.t; ++ti) {
      const double tv = s.timestamps.empty() ? static_cast<double>(ti) : s.timestamps[static_cast<std::size_t>(ti)];
      for (std::int64_t ch = 0; ch < s.v; ++ch) {
        os << i << ',' << ch << ',' << format_value(tv) << ',' << format_value(s.at(ti, ch)) << '\n';
      }
    }
  }
}

std::vector<Series> load_series_csv(const std::string& path) {
  std::ifstream is = open_for_read(path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  check_header(split_csv_line(line), {"seq_id", "channel", "t", "value"}, path);

  struct Cell {
    double t;
    double value;
  };
  std::map<std::int64_t, std::map<std::int64_t, std::vector<Cell>>> rows;  // seq -> channel -> cells
  std::size_t line_no = 1;
  bool any = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 4 fields, found " +
                               std::to_string(f.size()));
    }
    const std::int64_t seq = parse_int(f[0], path, line_no);
    const std::int64_t ch = parse_int(f[1], path, line_no);
    const double tv = parse_double(f[2], path, line_no);
    const double val = parse_double(f[3], path, line_no);
    auto& cells = rows[seq][ch];
    if (!cells.empty() && tv < cells.back().t) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-monotonic timestamp " +
                               format_value(tv) + " for sequence " + std::to_string(seq));
    }
    cells.push_back({tv, val});
    any = true;
  }
  if (!any) throw std::runtime_error(path + ": no data rows");

  std::vector<Series> out;
  for (auto& [seq, channels] : rows) {
    Series s;
    s.v = static_cast<std::int64_t>(channels.size());
    s.t = static_cast<std::int64_t>(channels.begin()->second.size());
    std::int64_t expected_ch = 0;
    for (auto& [ch, cells] : channels) {
      if (ch != expected_ch) {
        throw std::runtime_error(path + ": sequence " + std::to_string(seq) + " is missing channel " +
                                 std::to_string(expected_ch));
      }
      if (static_cast<std::int64_t>(cells.size()) != s.t) {
        throw std::runtime_error(path + ": sequence " + std::to_string(seq) + " channel " +
                                 std::to_string(ch) + " has ragged length");
      }
      ++expected_ch;
    }
    s.values.resize(static_cast<std::size_t>(s.t * s.v));
    s.timestamps.resize(static_cast<std::size_t>(s.t));
    for (auto& [ch, cells] : channels) {
      for (std::int64_t ti = 0; ti < s.t; ++ti) {
        s.values[static_cast<std::size_t>(ti * s.v + ch)] = cells[static_cast<std::size_t>(ti)].value;
        s.timestamps[static_cast<std::size_t>(ti)] = cells[static_cast<std::size_t>(ti)].t;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_events_csv(const std::string& path, const std::vector<EventStream>& streams) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open file for writing");
  os << "patient_id,month,code\n";
  for (std::size_t i = 0; i < streams.size(); ++i) {
    const EventStream& es = streams[i];
    for (std::size_t j = 0; j < es.codes.size(); ++j) {
      os << i << ',' << format_value(es.months[j]) << ',' << es.codes[j] << '\n';
    }
  }
}

std::vector<EventStream> load_events_csv(const std::string& path) {
  std::ifstream is = open_for_read(path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  check_header(split_csv_line(line), {"patient_id", "month", "code"}, path);

  std::map<std::int64_t, EventStream> streams;
  std::size_t line_no = 1;
  bool any = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 3 fields, found " +
                               std::to_string(f.size()));
    }
    const std::int64_t pid = parse_int(f[0], path, line_no);
    const double month = parse_double(f[1], path, line_no);
    const std::int64_t code = parse_int(f[2], path, line_no);
    EventStream& es = streams[pid];
    if (!es.months.empty() && month < es.months.back()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-monotonic timestamp " +
                               format_value(month) + " for patient " + std::to_string(pid));
    }
    es.months.push_back(month);
    es.codes.push_back(code);
    any = true;
  }
  if (!any) throw std::runtime_error(path + ": no data rows");
  std::vector<EventStream> out;
  out.reserve(streams.size());
  for (auto& [pid, es] : streams) out.push_back(std::move(es));
  return out;
}

void save_labels_csv(const std::string& path, const std::vector<std::vector<int>>& labels_per_item) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path + ": cannot open file for writing");
  os << "seq_id,label\n";
  for (std::size_t i = 0; i < labels_per_item.size(); ++i) {
    os << i;
    for (int l : labels_per_item[i]) os << ',' << l;
    os << '\n';
  }
}

std::vector<std::vector<int>> load_labels_csv(const std::string& path) {
  std::ifstream is = open_for_read(path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "seq_id") {
    throw std::runtime_error(path + ": header mismatch at column 1: expected 'seq_id', found '" +
                             (header.empty() ? "<missing>" : header[0]) + "'");
  }
  std::map<std::int64_t, std::vector<int>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::int64_t seq = parse_int(f[0], path, line_no);
    std::vector<int> labels;
    for (std::size_t i = 1; i < f.size(); ++i) {
      if (f[i].empty()) continue;
      labels.push_back(static_cast<int>(parse_int(f[i], path, line_no)));
    }
    rows[seq] = std::move(labels);
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  std::vector<std::vector<int>> out;
  out.reserve(rows.size());
  for (auto& [seq, labels] : rows) out.push_back(std::move(labels));
  return out;
}

}  // namespace baar
