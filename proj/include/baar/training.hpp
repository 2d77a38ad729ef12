#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "baar/data.hpp"
#include "baar/model.hpp"

namespace baar {

enum class StrategyKind : std::uint8_t { next_previous = 0, next_only = 1, masking = 2 };

const char* strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& name);

struct PretrainStrategy {
  StrategyKind kind = StrategyKind::next_previous;
  double masking_ratio = 0.4;
};

// The pre-training strategies of the ablation pair a loss with a layer
// pattern: next-previous keeps the alternating stack, next-only drops the
// backward layers, masking uses bidirectional retention in every layer.
LayerPattern pattern_for_strategy(StrategyKind kind);
// The aggregating token differs per pattern: [SOS] after a final backward
// layer, [EOS] after a forward-only stack, mean pooling for bidirectional.
ReprMode default_repr_for_pattern(LayerPattern pattern);

struct TrainConfig {
  double lr = 1e-3;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class TaskKind : std::uint8_t { classification = 0, regression = 1, multilabel = 2 };

struct MetricsRecord {
  std::int64_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = -1.0;  // negative = not applicable
  double mae = -1.0;
  double mean_auprc = -1.0;
  std::vector<double> auprc_per_class;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Adaptive-moment gradient descent over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

// Eq-style decomposition: next_previous = forward term (layer L-1 states)
// + backward term (layer L states); next_only keeps the forward term;
// masking reconstructs masked slots only.
Tensor pretrain_loss(const ModelOutput& out, const TokenSequence& targets, const PretrainStrategy& strategy);

Tensor series_tensor(const Series& s, Precision prec);
std::vector<bool> mask_timesteps(std::int64_t t, double ratio, std::mt19937_64& rng);
Tensor zero_masked(const Tensor& raw, const std::vector<bool>& mask);
// token j covers timesteps [4j, 4j+4) through the two stride-2 convolutions
std::vector<bool> token_mask_from_timesteps(const std::vector<bool>& mask, std::int64_t n_tokens,
                                            bool tokenizer_on);

TokenSequence encode_for_pretraining(const BaarModel& model, const Series& s,
                                     const PretrainStrategy& strategy, std::mt19937_64& rng);
TokenSequence encode_for_pretraining(const BaarModel& model, const EventStream& e,
                                     const PretrainStrategy& strategy, std::mt19937_64& rng);

struct PretrainRun {
  std::vector<double> train_loss_per_epoch;
};

PretrainRun train_pretrain(BaarModel& model, const std::vector<Series>& data,
                           const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                           const PretrainStrategy& strategy, const MetricsSink& sink = {});
PretrainRun train_pretrain(BaarModel& model, const std::vector<EventStream>& data,
                           const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                           const PretrainStrategy& strategy, const MetricsSink& sink = {});

struct FinetuneOptions {
  ReprMode repr = ReprMode::sos;
  ReprLayers repr_layers = ReprLayers::last;
  TaskKind task = TaskKind::classification;
  int n_outputs = 2;  // classes, labels, or 1 for regression
};

struct FinetuneHead {
  Tensor w, b;
};

FinetuneHead make_finetune_head(const ModelConfig& cfg, const FinetuneOptions& opts, std::uint64_t seed);
std::vector<std::pair<std::string, Tensor>> head_parameters(const FinetuneHead& head);

Tensor finetune_logits(const BaarModel& model, const FinetuneHead& head, const ModelOutput& out,
                       const FinetuneOptions& opts);

struct FinetuneRun {
  FinetuneHead head;
  std::vector<double> train_loss_per_epoch;
};

FinetuneRun finetune(BaarModel& model, const std::vector<Series>& data,
                     const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                     const FinetuneOptions& opts, const MetricsSink& sink = {});
FinetuneRun finetune(BaarModel& model, const std::vector<EventStream>& data,
                     const std::vector<std::size_t>& train_idx, const TrainConfig& cfg,
                     const FinetuneOptions& opts, const MetricsSink& sink = {});

struct EvalReport {
  double loss = 0.0;
  double accuracy = -1.0;
  double mae = -1.0;
  double mean_auprc = -1.0;
  std::vector<double> auprc_per_class;
  std::size_t count = 0;
  std::vector<std::string> warnings;

  MetricsRecord to_record(std::int64_t epoch, const std::string& split) const;
};

EvalReport evaluate(const BaarModel& model, const FinetuneHead& head, const std::vector<Series>& data,
                    const std::vector<std::size_t>& idx, const FinetuneOptions& opts);
EvalReport evaluate(const BaarModel& model, const FinetuneHead& head,
                    const std::vector<EventStream>& data, const std::vector<std::size_t>& idx,
                    const FinetuneOptions& opts);

// Trapezoidal area under the precision-recall curve; ties broken by
// descending score then stable input order.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels01);

}  // namespace baar
