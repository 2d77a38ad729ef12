#include "baar/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace baar {

using nlohmann::json;

const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::next_previous: return "next_previous";
    case StrategyKind::next_only: return "next_only";
    case StrategyKind::masking: return "masking";
  }
  return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "next_previous") return StrategyKind::next_previous;
  if (name == "next_only") return StrategyKind::next_only;
  if (name == "masking") return StrategyKind::masking;
  throw std::invalid_argument("unknown strategy: " + name);
}

LayerPattern pattern_for_strategy(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::next_previous: return LayerPattern::alternating;
    case StrategyKind::next_only: return LayerPattern::forward_only;
    case StrategyKind::masking: return LayerPattern::bidirectional;
  }
  throw std::invalid_argument("unknown strategy");
}

ReprMode default_repr_for_pattern(LayerPattern pattern) {
  switch (pattern) {
    case LayerPattern::alternating: return ReprMode::sos;
    case LayerPattern::forward_only: return ReprMode::eos;
    case LayerPattern::bidirectional: return ReprMode::mean;
  }
  throw std::invalid_argument("unknown pattern");
}

void TrainConfig::validate() const {
  if (lr < 0.0) throw std::invalid_argument("TrainConfig: negative learning rate");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epoch count");
}

std::string MetricsRecord::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["loss"] = loss;
  if (accuracy >= 0.0) j["accuracy"] = accuracy;
  if (mae >= 0.0) j["mae"] = mae;
  if (mean_auprc >= 0.0) {
    j["mean_auprc"] = mean_auprc;
    j["auprc_per_class"] = auprc_per_class;
  }
  if (!warnings.empty()) j["warnings"] = warnings;
  return j.dump();
}

MetricsRecord EvalReport::to_record(std::int64_t epoch, const std::string& split) const {
  MetricsRecord r;
  r.epoch = epoch;
  r.split = split;
  r.loss = loss;
  r.accuracy = accuracy;
  r.mae = mae;
  r.mean_auprc = mean_auprc;
  r.auprc_per_class = auprc_per_class;
  r.warnings = warnings;
  return r;
}

// ---- optimizer ----

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
    auto& buf = p.mutable_data();
    const bool f32 = p.precision() == Precision::f32;
    for (std::size_t j = 0; j < buf.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * gj;
      v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * gj * gj;
      const double update = lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      double x = buf[j] - update;
      buf[j] = f32 ? static_cast<double>(static_cast<float>(x)) : x;
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- pre-training losses ----

namespace {

Tensor select_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  // 0/1 selection matrix keeps the gather differentiable in one op
  const std::int64_t m = static_cast<std::int64_t>(rows.size());
  Tensor sel = Tensor::zeros({m, x.dim(0)}, false, x.precision());
  auto& sd = sel.mutable_data();
  for (std::int64_t i = 0; i < m; ++i) sd[static_cast<std::size_t>(i * x.dim(0) + rows[static_cast<std::size_t>(i)])] = 1.0;
  return matmul(sel, x);
}

Tensor directional_term(const ModelOutput& out, const TokenSequence& seq, bool forward_dir) {
  const std::int64_t n = seq.n_real;
  const Tensor& logits = forward_dir ? out.next_token_logits : out.prev_token_logits;
  if (!logits.defined()) {
    throw std::invalid_argument("pretrain_loss: model output lacks the " +
                                std::string(forward_dir ? "forward" : "backward") + " prediction head");
  }
  // slot t predicts t+1 in the forward stream and t-1 in the backward one;
  // only real tokens count as targets
  Tensor pred = forward_dir ? slice(logits, 0, 0, n) : slice(logits, 0, 2, n);
  if (!seq.target_codes.empty()) return cross_entropy(pred, seq.target_codes);
  if (!seq.target_values.defined()) throw std::invalid_argument("pretrain_loss: sequence has no targets");
  return mse(pred, seq.target_values);
}

Tensor masked_term(const ModelOutput& out, const TokenSequence& seq) {
  const std::int64_t n = seq.n_real;
  if (seq.masked_slots.empty()) {
    throw std::invalid_argument("pretrain_loss: masking strategy needs masked slots");
  }
  if (static_cast<std::int64_t>(seq.masked_slots.size()) != n) {
    throw std::invalid_argument("pretrain_loss: mask length does not match token count");
  }
  std::vector<std::int64_t> masked;
  for (std::int64_t i = 0; i < n; ++i)
    if (seq.masked_slots[static_cast<std::size_t>(i)]) masked.push_back(i);
  if (masked.empty()) throw std::invalid_argument("pretrain_loss: no masked slots to reconstruct");
  Tensor recon = slice(out.next_token_logits, 0, 1, n);  // real-token slots reconstruct themselves
  Tensor pred = select_rows(recon, masked);
  if (!seq.target_codes.empty()) {
    std::vector<std::int64_t> targets;
    for (auto i : masked) targets.push_back(seq.target_codes[static_cast<std::size_t>(i)]);
    return cross_entropy(pred, targets);
  }
  if (!seq.target_values.defined()) throw std::invalid_argument("pretrain_loss: sequence has no targets");
  Tensor target = select_rows(seq.target_values, masked);
  return mse(pred, target);
}

}  // namespace

Tensor pretrain_loss(const ModelOutput& out, const TokenSequence& targets, const PretrainStrategy& strategy) {
  switch (strategy.kind) {
    case StrategyKind::next_previous:
      return add(directional_term(out, targets, true), directional_term(out, targets, false));
    case StrategyKind::next_only:
      return directional_term(out, targets, true);
    case StrategyKind::masking:
      return masked_term(out, targets);
  }
  throw std::invalid_argument("pretrain_loss: unknown strategy");
}

// ---- masking helpers ----

Tensor series_tensor(const Series& s, Precision prec) {
  return Tensor::from_data({s.t, s.v}, s.values, false, prec);
}

std::vector<bool> mask_timesteps(std::int64_t t, double ratio, std::mt19937_64& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mask_timesteps: ratio must lie in (0,1)");
  std::bernoulli_distribution pick(ratio);
  std::vector<bool> mask(static_cast<std::size_t>(t));
  for (auto&& m : mask) m = pick(rng);
  return mask;
}

Tensor zero_masked(const Tensor& raw, const std::vector<bool>& mask) {
  if (static_cast<std::int64_t>(mask.size()) != raw.dim(0)) {
    throw std::invalid_argument("zero_masked: mask length does not match timesteps");
  }
  Tensor keep = Tensor::zeros({raw.dim(0)}, false, raw.precision());
  auto& kd = keep.mutable_data();
  for (std::size_t i = 0; i < mask.size(); ++i) kd[i] = mask[i] ? 0.0 : 1.0;
  return scale_rows(raw, keep);
}

std::vector<bool> token_mask_from_timesteps(const std::vector<bool>& mask, std::int64_t n_tokens,
                                            bool tokenizer_on) {
  std::vector<bool> out(static_cast<std::size_t>(n_tokens), false);
  if (!tokenizer_on) {
    for (std::int64_t j = 0; j < n_tokens; ++j) out[static_cast<std::size_t>(j)] = mask[static_cast<std::size_t>(j)];
    return out;
  }
  for (std::int64_t j = 0; j < n_tokens; ++j) {
    for (std::int64_t k = 4 * j; k < std::min<std::int64_t>(4 * j + 4, static_cast<std::int64_t>(mask.size())); ++k) {
      if (mask[static_cast<std::size_t>(k)]) {
        out[static_cast<std::size_t>(j)] = true;
        break;
      }
    }
  }
  return out;
}

TokenSequence encode_for_pretraining(const BaarModel& model, const Series& s,
                                     const PretrainStrategy& strategy, std::mt19937_64& rng) {
  const Precision prec = model.config().precision;
  Tensor raw = series_tensor(s, prec);
  // per-timestep stamps only survive when tokens are timesteps; the
  // subsampling tokenizer works on token order
  const std::vector<double>* ts =
      (!s.timestamps.empty() && !model.config().use_tokenizer) ? &s.timestamps : nullptr;
  if (strategy.kind != StrategyKind::masking) {
    return model.encode_series(raw, ts);
  }
  const std::vector<bool> mask = mask_timesteps(s.t, strategy.masking_ratio, rng);
  Tensor orig_tokens;
  {
    NoGradGuard ng;
    orig_tokens = model.config().use_tokenizer ? model.tokenize(raw).detach() : raw.detach();
  }
  TokenSequence seq = model.encode_series(zero_masked(raw, mask), ts);
  seq.target_values = orig_tokens;
  seq.masked_slots = token_mask_from_timesteps(mask, seq.n_real, model.config().use_tokenizer);
  return seq;
}

TokenSequence encode_for_pretraining(const BaarModel& model, const EventStream& e,
                                     const PretrainStrategy& strategy, std::mt19937_64& rng) {
  if (strategy.kind != StrategyKind::masking) {
    return model.encode_events(e.codes, e.months);
  }
  const std::int64_t n = static_cast<std::int64_t>(e.codes.size());
  const std::vector<bool> mask = mask_timesteps(n, strategy.masking_ratio, rng);
  TokenSequence seq = model.embed_codes_masked(e.codes, e.months, mask);
  seq.masked_slots = mask;
  return seq;
}

// ---- training loops ----

namespace {

struct ItemRef {
  const Series* s = nullptr;
  const EventStream* e = nullptr;
};

TokenSequence encode_item(const BaarModel& model, const ItemRef& item, const PretrainStrategy& strategy,
                          std::mt19937_64& rng) {
  if (item.s) return encode_for_pretraining(model, *item.s, strategy, rng);
  return encode_for_pretraining(model, *item.e, strategy, rng);
}

TokenSequence encode_item_plain(const BaarModel& model, const ItemRef& item) {
  if (item.s) {
    Tensor raw = series_tensor(*item.s, model.config().precision);
    const std::vector<double>* ts =
        (!item.s->timestamps.empty() && !model.config().use_tokenizer) ? &item.s->timestamps : nullptr;
    return model.encode_series(raw, ts);
  }
  return model.encode_events(item.e->codes, item.e->months);
}

template <typename Dataset>
std::vector<ItemRef> make_refs(const Dataset& data, const std::vector<std::size_t>& idx);

template <>
std::vector<ItemRef> make_refs(const std::vector<Series>& data, const std::vector<std::size_t>& idx) {
  std::vector<ItemRef> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ItemRef{&data.at(i), nullptr});
  return out;
}

template <>
std::vector<ItemRef> make_refs(const std::vector<EventStream>& data, const std::vector<std::size_t>& idx) {
  std::vector<ItemRef> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ItemRef{nullptr, &data.at(i)});
  return out;
}

PretrainRun pretrain_impl(BaarModel& model, std::vector<ItemRef> items, const TrainConfig& cfg,
                          const PretrainStrategy& strategy, const MetricsSink& sink) {
  cfg.validate();
  if (items.empty()) throw std::invalid_argument("train_pretrain: empty training set");
  if (strategy.kind == StrategyKind::next_previous && model.config().pattern != LayerPattern::alternating) {
    throw std::invalid_argument("train_pretrain: next_previous needs the alternating pattern");
  }
  std::vector<Tensor> params;
  for (auto& [name, t] : model.parameters()) params.push_back(t);
  Adam opt(params, cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  PretrainRun run;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_items = 0;
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        TokenSequence seq = encode_item(model, items[i], strategy, rng);
        ModelOutput out = model.forward(seq);
        Tensor item_loss = pretrain_loss(out, seq, strategy);
        batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double lv = batch_loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("pretrain diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += lv * static_cast<double>(end - start);
      n_items += end - start;
      opt.zero_grad();
      tape.backward(batch_loss);
      opt.step();
    }
    const double epoch_loss = loss_sum / static_cast<double>(n_items);
    run.train_loss_per_epoch.push_back(epoch_loss);
    if (sink) {
      MetricsRecord rec;
      rec.epoch = epoch;
      rec.split = "train";
      rec.loss = epoch_loss;
      sink(rec);
    }
  }
  return run;
}

double item_regression_target(const ItemRef& item) { return item.s ? item.s->reg_target : 0.0; }

int item_class_label(const ItemRef& item) {
  if (item.s) return item.s->label;
  throw std::invalid_argument("classification task needs labeled series");
}

std::vector<int> item_multilabels(const ItemRef& item) {
  if (item.e) return item.e->labels;
  throw std::invalid_argument("multilabel task needs event streams");
}

Tensor finetune_item_loss(const BaarModel& model, const FinetuneHead& head, const ItemRef& item,
                          const FinetuneOptions& opts) {
  TokenSequence seq = encode_item_plain(model, item);
  ModelOutput out = model.forward(seq);
  Tensor logits = finetune_logits(model, head, out, opts);
  switch (opts.task) {
    case TaskKind::classification:
      return cross_entropy(logits, {item_class_label(item)});
    case TaskKind::regression: {
      Tensor target = Tensor::from_data({1, 1}, {item_regression_target(item)}, false, logits.precision());
      return mse(logits, target);
    }
    case TaskKind::multilabel: {
      const auto labels = item_multilabels(item);
      std::vector<double> t01(labels.begin(), labels.end());
      const std::int64_t n_labels = static_cast<std::int64_t>(t01.size());
      Tensor target = Tensor::from_data({1, n_labels}, std::move(t01), false, logits.precision());
      return bce_with_logits(logits, target);
    }
  }
  throw std::invalid_argument("finetune: unknown task");
}

FinetuneRun finetune_impl(BaarModel& model, std::vector<ItemRef> items, const TrainConfig& cfg,
                          const FinetuneOptions& opts, const MetricsSink& sink) {
  cfg.validate();
  if (items.empty()) throw std::invalid_argument("finetune: empty training set");
  FinetuneRun run;
  run.head = make_finetune_head(model.config(), opts, cfg.seed + 1);
  std::vector<Tensor> params;
  for (auto& [name, t] : model.parameters()) params.push_back(t);
  params.push_back(run.head.w);
  params.push_back(run.head.b);
  Adam opt(params, cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_items = 0;
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        Tensor item_loss = finetune_item_loss(model, run.head, items[i], opts);
        batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double lv = batch_loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("finetune diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += lv * static_cast<double>(end - start);
      n_items += end - start;
      opt.zero_grad();
      tape.backward(batch_loss);
      opt.step();
    }
    const double epoch_loss = loss_sum / static_cast<double>(n_items);
    run.train_loss_per_epoch.push_back(epoch_loss);
    if (sink) {
      MetricsRecord rec;
      rec.epoch = epoch;
      rec.split = "train";
      rec.loss = epoch_loss;
      sink(rec);
    }
  }
  return run;
}

EvalReport evaluate_impl(const BaarModel& model, const FinetuneHead& head, std::vector<ItemRef> items,
                         const FinetuneOptions& opts) {
  if (items.empty()) throw std::invalid_argument("evaluate: empty dataset");
  NoGradGuard ng;
  EvalReport rep;
  rep.count = items.size();
  double loss_sum = 0.0;
  std::vector<std::vector<double>> scores;  // per item, per output
  std::vector<int> class_truth;
  std::vector<std::vector<int>> multi_truth;
  std::vector<double> reg_pred, reg_truth;
  std::size_t correct = 0;
  for (const ItemRef& item : items) {
    TokenSequence seq = encode_item_plain(model, item);
    ModelOutput out = model.forward(seq);
    Tensor logits = finetune_logits(model, head, out, opts);
    switch (opts.task) {
      case TaskKind::classification: {
        const int truth = item_class_label(item);
        loss_sum += cross_entropy(logits, {truth}).item();
        Tensor probs = softmax_rows(logits);
        scores.push_back(probs.data());
        class_truth.push_back(truth);
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < logits.dim(1); ++j)
          if (logits.at(0, j) > logits.at(0, arg)) arg = j;
        if (arg == truth) ++correct;
        break;
      }
      case TaskKind::regression: {
        const double truth = item_regression_target(item);
        Tensor target = Tensor::from_data({1, 1}, {truth}, false, logits.precision());
        loss_sum += mse(logits, target).item();
        reg_pred.push_back(logits.item());
        reg_truth.push_back(truth);
        break;
      }
      case TaskKind::multilabel: {
        const auto labels = item_multilabels(item);
        std::vector<double> t01(labels.begin(), labels.end());
        Tensor target = Tensor::from_data({1, static_cast<std::int64_t>(t01.size())},
                                          std::vector<double>(t01), false, logits.precision());
        loss_sum += bce_with_logits(logits, target).item();
        std::vector<double> sig(static_cast<std::size_t>(logits.dim(1)));
        std::size_t hit = 0;
        for (std::int64_t j = 0; j < logits.dim(1); ++j) {
          sig[static_cast<std::size_t>(j)] = 1.0 / (1.0 + std::exp(-logits.at(0, j)));
          const int pred = sig[static_cast<std::size_t>(j)] >= 0.5 ? 1 : 0;
          if (pred == labels[static_cast<std::size_t>(j)]) ++hit;
        }
        correct += hit == static_cast<std::size_t>(logits.dim(1)) ? 1 : 0;
        scores.push_back(std::move(sig));
        multi_truth.push_back(labels);
        break;
      }
    }
  }
  rep.loss = loss_sum / static_cast<double>(items.size());
  if (opts.task == TaskKind::classification) {
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    bool degenerate = true;
    for (int t : class_truth)
      if (t != class_truth[0]) degenerate = false;
    if (degenerate) rep.warnings.push_back("degenerate_single_class");
    for (int c = 0; c < opts.n_outputs; ++c) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        s.push_back(scores[i][static_cast<std::size_t>(c)]);
        y.push_back(class_truth[i] == c ? 1 : 0);
      }
      rep.auprc_per_class.push_back(auprc(s, y));
    }
  } else if (opts.task == TaskKind::regression) {
    double mae = 0.0;
    for (std::size_t i = 0; i < reg_pred.size(); ++i) mae += std::abs(reg_pred[i] - reg_truth[i]);
    rep.mae = mae / static_cast<double>(reg_pred.size());
  } else {
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    for (int c = 0; c < opts.n_outputs; ++c) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        s.push_back(scores[i][static_cast<std::size_t>(c)]);
        y.push_back(multi_truth[i][static_cast<std::size_t>(c)]);
      }
      rep.auprc_per_class.push_back(auprc(s, y));
    }
  }
  if (!rep.auprc_per_class.empty()) {
    rep.mean_auprc = std::accumulate(rep.auprc_per_class.begin(), rep.auprc_per_class.end(), 0.0) /
                     static_cast<double>(rep.auprc_per_class.size());
  }
  return rep;
}

}  // namespace

PretrainRun train_pretrain(BaarModel& model, const std::vector<Series>& data,
                           const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                           const PretrainStrategy& strategy, const MetricsSink& sink) {
  return pretrain_impl(model, make_refs(data, train_idx), cfg, strategy, sink);
}

PretrainRun train_pretrain(BaarModel& model, const std::vector<EventStream>& data,
                           const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                           const PretrainStrategy& strategy, const MetricsSink& sink) {
  return pretrain_impl(model, make_refs(data, train_idx), cfg, strategy, sink);
}

FinetuneHead make_finetune_head(const ModelConfig& cfg, const FinetuneOptions& opts, std::uint64_t seed) {
  std::int64_t width = cfg.d_model;
  if (opts.repr == ReprMode::sos_plus_eos) width *= 2;
  if (opts.repr_layers == ReprLayers::last_two) width *= 2;
  std::mt19937_64 rng(seed);
  FinetuneHead head;
  head.w = Tensor::randn({width, opts.n_outputs}, rng, 0.02, true, cfg.precision);
  head.b = Tensor::zeros({opts.n_outputs}, true, cfg.precision);
  return head;
}

std::vector<std::pair<std::string, Tensor>> head_parameters(const FinetuneHead& head) {
  return {{"finetune.w", head.w}, {"finetune.b", head.b}};
}

Tensor finetune_logits(const BaarModel& model, const FinetuneHead& head, const ModelOutput& out,
                       const FinetuneOptions& opts) {
  Tensor repr = model.sequence_representation(out, opts.repr, opts.repr_layers);
  return add_rowvec(matmul(repr, head.w), head.b);
}

FinetuneRun finetune(BaarModel& model, const std::vector<Series>& data,
                     const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                     const FinetuneOptions& opts, const MetricsSink& sink) {
  return finetune_impl(model, make_refs(data, train_idx), cfg, opts, sink);
}

FinetuneRun finetune(BaarModel& model, const std::vector<EventStream>& data,
                     const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                     const FinetuneOptions& opts, const MetricsSink& sink) {
  return finetune_impl(model, make_refs(data, train_idx), cfg, opts, sink);
}

EvalReport evaluate(const BaarModel& model, const FinetuneHead& head, const std::vector<Series>& data,
                    const std::vector<std::size_t>& idx, const FinetuneOptions& opts) {
  return evaluate_impl(model, head, make_refs(data, idx), opts);
}

EvalReport evaluate(const BaarModel& model, const FinetuneHead& head,
                    const std::vector<EventStream>& data, const std::vector<std::size_t>& idx,
                    const FinetuneOptions& opts) {
  return evaluate_impl(model, head, make_refs(data, idx), opts);
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels01) {
  if (scores.empty() || scores.size() != labels01.size()) {
    throw std::invalid_argument("auprc: empty or mismatched inputs");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t positives = 0;
  for (int y : labels01) positives += y == 1 ? 1 : 0;
  if (positives == 0) return 0.0;
  double area = 0.0;
  double prev_recall = 0.0, prev_precision = 1.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels01[order[k]] == 1) ++tp;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

}  // namespace baar
