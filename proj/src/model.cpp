#include "baar/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace baar {

using nlohmann::json;

const char* layer_pattern_name(LayerPattern p) {
  switch (p) {
    case LayerPattern::alternating: return "alternating";
    case LayerPattern::forward_only: return "forward_only";
    case LayerPattern::bidirectional: return "bidirectional";
  }
  return "?";
}

LayerPattern layer_pattern_from_name(const std::string& name) {
  if (name == "alternating") return LayerPattern::alternating;
  if (name == "forward_only") return LayerPattern::forward_only;
  if (name == "bidirectional") return LayerPattern::bidirectional;
  throw std::invalid_argument("unknown layer pattern: " + name);
}

ReprMode repr_mode_from_name(const std::string& name) {
  if (name == "sos") return ReprMode::sos;
  if (name == "eos") return ReprMode::eos;
  if (name == "sos_eos" || name == "sos_plus_eos") return ReprMode::sos_plus_eos;
  if (name == "mean") return ReprMode::mean;
  throw std::invalid_argument("unknown representation mode: " + name);
}

ReprLayers repr_layers_from_name(const std::string& name) {
  if (name == "last") return ReprLayers::last;
  if (name == "last_two") return ReprLayers::last_two;
  throw std::invalid_argument("unknown representation layers: " + name);
}

const char* repr_mode_name(ReprMode m) {
  switch (m) {
    case ReprMode::sos: return "sos";
    case ReprMode::eos: return "eos";
    case ReprMode::sos_plus_eos: return "sos_eos";
    case ReprMode::mean: return "mean";
  }
  return "?";
}

const char* repr_layers_name(ReprLayers l) { return l == ReprLayers::last ? "last" : "last_two"; }

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("ModelConfig: need at least one layer");
  if (pattern == LayerPattern::alternating && layers % 2 != 0) {
    throw std::invalid_argument("ModelConfig: alternating pattern needs an even layer count, got " +
                                std::to_string(layers));
  }
  if (d_model != num_heads * head_dim) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " != num_heads*head_dim " + std::to_string(num_heads * head_dim));
  }
  if (head_dim % 2 != 0) throw std::invalid_argument("ModelConfig: head_dim must be even");
  if (ff_dim < 1) throw std::invalid_argument("ModelConfig: ff_dim must be positive");
  if (!discrete() && feature_dim < 1) throw std::invalid_argument("ModelConfig: feature_dim must be positive");
  if (chunk_size < 1) throw std::invalid_argument("ModelConfig: chunk_size must be positive");
  if (!gammas.empty() && static_cast<int>(gammas.size()) != num_heads) {
    throw std::invalid_argument("ModelConfig: gamma count does not match num_heads");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["layers"] = layers;
  j["d_model"] = d_model;
  j["num_heads"] = num_heads;
  j["head_dim"] = head_dim;
  j["ff_dim"] = ff_dim;
  j["feature_dim"] = feature_dim;
  j["vocab_size"] = vocab_size;
  j["chunk_size"] = chunk_size;
  j["rotary_base"] = rotary_base;
  j["use_rotary"] = use_rotary;
  j["rotary_uses_timestamps"] = rotary_uses_timestamps;
  j["use_tokenizer"] = use_tokenizer;
  j["pattern"] = layer_pattern_name(pattern);
  j["precision"] = precision == Precision::f32 ? "f32" : "f64";
  j["gammas"] = gammas;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.layers = j.at("layers").get<std::int64_t>();
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.num_heads = j.at("num_heads").get<int>();
  c.head_dim = j.at("head_dim").get<std::int64_t>();
  c.ff_dim = j.at("ff_dim").get<std::int64_t>();
  c.feature_dim = j.at("feature_dim").get<std::int64_t>();
  c.vocab_size = j.at("vocab_size").get<std::int64_t>();
  c.chunk_size = j.at("chunk_size").get<std::int64_t>();
  c.rotary_base = j.at("rotary_base").get<double>();
  c.use_rotary = j.at("use_rotary").get<bool>();
  c.rotary_uses_timestamps = j.at("rotary_uses_timestamps").get<bool>();
  c.use_tokenizer = j.at("use_tokenizer").get<bool>();
  c.pattern = layer_pattern_from_name(j.at("pattern").get<std::string>());
  c.precision = j.at("precision").get<std::string>() == "f32" ? Precision::f32 : Precision::f64;
  c.gammas = j.at("gammas").get<std::vector<double>>();
  c.validate();
  return c;
}

BaarModel::BaarModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const Precision prec = cfg_.precision;
  const std::int64_t d = cfg_.d_model;
  const double init_std = 0.02;
  auto param = [&](Shape s) { return Tensor::randn(std::move(s), rng, init_std, true, prec); };

  if (!cfg_.discrete() && cfg_.use_tokenizer) {
    // fan-in scaling keeps token values near the input scale; the 0.02
    // initialization is reserved for the retention projections
    const std::int64_t v = cfg_.feature_dim;
    const double conv_std = 1.0 / std::sqrt(3.0 * static_cast<double>(v));
    conv1_k = Tensor::randn({v, v, 3}, rng, conv_std, true, prec);
    conv1_b = Tensor::zeros({v}, true, prec);
    conv2_k = Tensor::randn({v, v, 3}, rng, conv_std, true, prec);
    conv2_b = Tensor::zeros({v}, true, prec);
  }
  if (cfg_.discrete()) {
    embed_table = param({cfg_.vocab_size, d});
  } else {
    w_in = Tensor::randn({cfg_.feature_dim, d}, rng, 1.0 / std::sqrt(static_cast<double>(cfg_.feature_dim)),
                         true, prec);
    b_in = Tensor::zeros({d}, true, prec);
  }
  sos_vec = param({1, d});
  eos_vec = param({1, d});

  RotarySpec rotary(cfg_.head_dim, cfg_.rotary_base);
  const std::vector<double> gammas =
      cfg_.gammas.empty() ? DecaySpec::default_gammas(cfg_.num_heads) : cfg_.gammas;
  for (std::int64_t l = 1; l <= cfg_.layers; ++l) {
    const Direction dir = layer_direction(l);
    RetentionLayer layer = RetentionLayer::init(d, cfg_.num_heads, cfg_.head_dim, cfg_.ff_dim, dir,
                                                DecaySpec(gammas, dir), rotary, rng, prec, init_std);
    layer.use_rotary = cfg_.use_rotary;
    layers_.push_back(std::move(layer));
  }
  w_out = param({d, cfg_.output_dim()});
  b_out = Tensor::zeros({cfg_.output_dim()}, true, prec);
}

Direction BaarModel::layer_direction(std::int64_t l) const {
  switch (cfg_.pattern) {
    case LayerPattern::alternating: return l % 2 == 1 ? Direction::forward : Direction::backward;
    case LayerPattern::forward_only: return Direction::forward;
    case LayerPattern::bidirectional: return Direction::bidirectional;
  }
  throw std::invalid_argument("layer_direction: unknown pattern");
}

Tensor BaarModel::tokenize(const Tensor& raw) const {
  if (cfg_.discrete()) throw std::logic_error("tokenize: model is in discrete mode");
  if (!cfg_.use_tokenizer) throw std::logic_error("tokenize: tokenizer disabled in config");
  if (raw.ndim() != 2 || raw.dim(1) != cfg_.feature_dim) {
    throw std::invalid_argument("tokenize: expected T×" + std::to_string(cfg_.feature_dim) +
                                " input, got " + shape_str(raw.shape()));
  }
  if (raw.dim(0) < 4) {
    throw std::invalid_argument("tokenize: need at least 4 timesteps, got " + std::to_string(raw.dim(0)));
  }
  Tensor h = gelu(add_rowvec(conv1d(raw, conv1_k), conv1_b));
  return add_rowvec(conv1d(h, conv2_k), conv2_b);
}

TokenSequence BaarModel::embed_rows(Tensor x_tokens, PositionIndex positions) const {
  TokenSequence seq;
  seq.n_real = x_tokens.dim(0);
  seq.embeddings = concat({sos_vec, x_tokens, eos_vec}, 0);
  seq.positions = positions.with_sentinels();
  return seq;
}

TokenSequence BaarModel::embed(const Tensor& tokens, const std::vector<double>* timestamps) const {
  if (cfg_.discrete()) throw std::logic_error("embed: model is in discrete mode");
  if (tokens.ndim() != 2 || tokens.dim(1) != cfg_.feature_dim) {
    throw std::invalid_argument("embed: expected N×" + std::to_string(cfg_.feature_dim) + " tokens, got " +
                                shape_str(tokens.shape()));
  }
  const std::int64_t n = tokens.dim(0);
  if (timestamps && static_cast<std::int64_t>(timestamps->size()) != n) {
    throw std::invalid_argument("embed: timestamp count does not match tokens");
  }
  Tensor x = add_rowvec(matmul(tokens, w_in), b_in);
  PositionIndex pos = timestamps ? PositionIndex(*timestamps) : PositionIndex::regular(n);
  return embed_rows(x, pos);
}

TokenSequence BaarModel::embed_codes(const std::vector<std::int64_t>& codes,
                                     const std::vector<double>* timestamps) const {
  if (!cfg_.discrete()) throw std::logic_error("embed_codes: model is in continuous mode");
  if (codes.empty()) throw std::invalid_argument("embed_codes: empty code sequence");
  if (timestamps && timestamps->size() != codes.size()) {
    throw std::invalid_argument("embed_codes: timestamp count does not match codes");
  }
  Tensor x = embedding(embed_table, codes);
  PositionIndex pos = timestamps ? PositionIndex(*timestamps)
                                 : PositionIndex::regular(static_cast<std::int64_t>(codes.size()));
  TokenSequence seq = embed_rows(x, pos);
  seq.target_codes = codes;
  return seq;
}

TokenSequence BaarModel::embed_codes_masked(const std::vector<std::int64_t>& codes,
                                            const std::vector<double>& months,
                                            const std::vector<bool>& zero_slots) const {
  if (!cfg_.discrete()) throw std::logic_error("embed_codes_masked: model is in continuous mode");
  if (zero_slots.size() != codes.size()) {
    throw std::invalid_argument("embed_codes_masked: mask length does not match codes");
  }
  Tensor x = embedding(embed_table, codes);
  Tensor keep = Tensor::zeros({x.dim(0)}, false, x.precision());
  auto& kd = keep.mutable_data();
  for (std::size_t i = 0; i < zero_slots.size(); ++i) kd[i] = zero_slots[i] ? 0.0 : 1.0;
  TokenSequence seq = embed_rows(scale_rows(x, keep), PositionIndex(months));
  seq.target_codes = codes;
  return seq;
}

TokenSequence BaarModel::encode_series(const Tensor& raw, const std::vector<double>* timestamps) const {
  Tensor tokens = cfg_.use_tokenizer ? tokenize(raw) : raw;
  // targets are the token values themselves, held out of the gradient path
  Tensor targets = tokens.detach();
  TokenSequence seq = embed(tokens, timestamps);
  seq.target_values = targets;
  return seq;
}

TokenSequence BaarModel::encode_events(const std::vector<std::int64_t>& codes,
                                       const std::vector<double>& months) const {
  return embed_codes(codes, &months);
}

ModelOutput BaarModel::forward(const TokenSequence& seq, const ForwardOptions& opts) const {
  if (!seq.embeddings.defined()) throw std::invalid_argument("forward: empty token sequence");
  ModelOutput out;
  out.n_real = seq.n_real;
  Tensor h = seq.embeddings;
  PositionIndex order = PositionIndex::regular(h.dim(0));
  const PositionIndex* rot_pos = cfg_.rotary_uses_timestamps ? nullptr : &order;
  for (const RetentionLayer& layer : layers_) {
    RetentionMode mode = opts.capture_retention ? RetentionMode::parallel : opts.mode;
    if (layer.direction == Direction::bidirectional) mode = RetentionMode::parallel;
    RetentionResult res = retention_forward(h, layer, seq.positions, mode, cfg_.chunk_size,
                                            opts.capture_retention, rot_pos);
    h = res.y;
    out.hidden_per_layer.push_back(h);
    out.retention_per_layer.push_back(std::move(res.retention));
  }
  const auto idx = [&](std::int64_t l) { return static_cast<std::size_t>(l - 1); };
  const std::int64_t L = cfg_.layers;
  if (cfg_.pattern == LayerPattern::alternating) {
    out.next_token_logits = add_rowvec(matmul(out.hidden_per_layer[idx(L - 1)], w_out), b_out);
    out.prev_token_logits = add_rowvec(matmul(out.hidden_per_layer[idx(L)], w_out), b_out);
  } else {
    out.next_token_logits = add_rowvec(matmul(out.hidden_per_layer[idx(L)], w_out), b_out);
  }
  return out;
}

Tensor BaarModel::sequence_representation(const ModelOutput& out, ReprMode mode, ReprLayers layers) const {
  if (out.hidden_per_layer.empty()) throw std::invalid_argument("sequence_representation: empty output");
  auto one = [&](const Tensor& h) -> Tensor {
    const std::int64_t rows = h.dim(0);
    switch (mode) {
      case ReprMode::sos: return slice(h, 0, 0, 1);
      case ReprMode::eos: return slice(h, 0, rows - 1, 1);
      case ReprMode::sos_plus_eos: return concat({slice(h, 0, 0, 1), slice(h, 0, rows - 1, 1)}, 1);
      case ReprMode::mean: {
        Tensor ones = Tensor::full({1, rows}, 1.0 / static_cast<double>(rows), false, h.precision());
        return matmul(ones, h);
      }
    }
    throw std::invalid_argument("sequence_representation: unknown mode");
  };
  const std::size_t nl = out.hidden_per_layer.size();
  if (layers == ReprLayers::last) return one(out.hidden_per_layer[nl - 1]);
  if (nl < 2) throw std::invalid_argument("sequence_representation: last_two needs at least two layers");
  return concat({one(out.hidden_per_layer[nl - 2]), one(out.hidden_per_layer[nl - 1])}, 1);
}

std::vector<std::pair<std::string, Tensor>> BaarModel::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (!cfg_.discrete() && cfg_.use_tokenizer) {
    out.emplace_back("tokenizer.conv1.k", conv1_k);
    out.emplace_back("tokenizer.conv1.b", conv1_b);
    out.emplace_back("tokenizer.conv2.k", conv2_k);
    out.emplace_back("tokenizer.conv2.b", conv2_b);
  }
  if (cfg_.discrete()) {
    out.emplace_back("embed.table", embed_table);
  } else {
    out.emplace_back("embed.w_in", w_in);
    out.emplace_back("embed.b_in", b_in);
  }
  out.emplace_back("embed.sos", sos_vec);
  out.emplace_back("embed.eos", eos_vec);
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    auto lp = layers_[li].parameters("layer" + std::to_string(li + 1));
    out.insert(out.end(), lp.begin(), lp.end());
  }
  out.emplace_back("head.w_out", w_out);
  out.emplace_back("head.b_out", b_out);
  return out;
}

// ---- checkpoint io ----

namespace {

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_named_tensors(const std::string& path, const std::string& config_json,
                        const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint32_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_pod(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint8_t>(t.precision()));
    write_pod(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) write_pod(os, d);
    if (t.precision() == Precision::f32) {
      for (double v : t.data()) write_pod(os, static_cast<float>(v));
    } else {
      for (double v : t.data()) write_pod(os, v);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::pair<std::string, std::vector<std::pair<std::string, Tensor>>> load_named_tensors(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto json_len = read_pod<std::uint32_t>(is);
  std::string config_json(json_len, '\0');
  is.read(config_json.data(), json_len);
  if (!is) throw std::runtime_error("checkpoint: truncated config");
  const auto count = read_pod<std::uint32_t>(is);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto prec = static_cast<Precision>(read_pod<std::uint8_t>(is));
    const auto ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<std::int64_t>(is);
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    if (prec == Precision::f32) {
      for (double& v : data) v = static_cast<double>(read_pod<float>(is));
    } else {
      for (double& v : data) v = read_pod<double>(is);
    }
    tensors.emplace_back(std::move(name),
                         Tensor::from_data(std::move(shape), std::move(data), false, prec));
  }
  return {std::move(config_json), std::move(tensors)};
}

void BaarModel::save(const std::string& path) const { save_named_tensors(path, cfg_.to_json(), parameters()); }

BaarModel BaarModel::load(const std::string& path) {
  auto [config_json, tensors] = load_named_tensors(path);
  BaarModel model(ModelConfig::from_json(config_json), 0);
  auto params = model.parameters();
  if (params.size() != tensors.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                             std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != tensors[i].first) {
      throw std::runtime_error("checkpoint: tensor name mismatch: " + params[i].first + " vs " +
                               tensors[i].first);
    }
    if (params[i].second.shape() != tensors[i].second.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + params[i].first);
    }
    params[i].second.mutable_data() = tensors[i].second.data();
  }
  return model;
}

}  // namespace baar
