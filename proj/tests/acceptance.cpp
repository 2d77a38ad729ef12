// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy training artifacts are shared across criteria 6-8.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "baar/analysis.hpp"
#include "baar/bench.hpp"
#include "baar/data.hpp"
#include "baar/model.hpp"
#include "baar/training.hpp"

using namespace baar;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PositionIndex irregular_positions(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> p(static_cast<std::size_t>(n));
  double t = 0.0;
  for (auto& v : p) {
    v = t;
    t += static_cast<double>(rng() % 4);
  }
  return PositionIndex(std::move(p));
}

RetentionLayer make_layer(std::int64_t d, int heads, std::int64_t hd, Direction dir, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return RetentionLayer::init(d, heads, hd, 2 * d, dir,
                              DecaySpec(DecaySpec::default_gammas(heads), dir), RotarySpec(hd), rng);
}

// ---- criterion 1: three-form equivalence ----
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (Direction dir : {Direction::forward, Direction::backward}) {
    for (std::int64_t n : {1, 2, 7, 16, 33}) {
      for (bool irregular : {false, true}) {
        RetentionLayer layer = make_layer(8, 2, 4, dir, 1000 + static_cast<std::uint64_t>(n));
        PositionIndex pos = irregular ? irregular_positions(n, 17 * static_cast<std::uint64_t>(n) + 3)
                                      : PositionIndex::regular(n);
        std::mt19937_64 rng(static_cast<std::uint64_t>(n) * 31 + (irregular ? 7 : 0));
        Tensor x = Tensor::randn({n, 8}, rng, 1.0);
        Tensor yp = retention_parallel(x, layer, pos).y;
        Tensor yr = retention_recurrent(x, layer, pos).y;
        Tensor yc = retention_chunkwise(x, layer, pos, 8).y;
        worst = std::max(worst, max_rel_diff(yp.data(), yr.data()));
        worst = std::max(worst, max_rel_diff(yp.data(), yc.data()));
      }
    }
  }
  const double secs = elapsed_s(t0);
  std::ostringstream os;
  os << "max rel diff " << worst << ", " << secs << " s";
  report(1, "three-form equivalence", worst < 1e-5 && secs < 10.0, os.str());
}

// ---- criterion 2: gradient integrity ----
double grad_check(std::vector<Tensor> params, const std::function<Tensor()>& make_loss,
                  double step = 1e-5) {
  std::vector<std::vector<double>> autograd;
  {
    Tape tape;
    Tensor loss = make_loss();
    tape.backward(loss);
    for (auto& p : params) {
      autograd.push_back(p.has_grad() ? p.grad()
                                      : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0));
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
      worst = std::max(worst, rel_err((up - down) / (2.0 * step), autograd[pi][i]));
    }
  }
  return worst;
}

void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(2024);

  {  // every differentiable primitive, exercised through a composite graph
    Tensor a = Tensor::randn({4, 3}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor g = Tensor::randn({4}, rng, 1.0, true);
    Tensor bias = Tensor::randn({4}, rng, 1.0, true);
    Tensor v = Tensor::randn({4}, rng, 1.0, true);
    Tensor k = Tensor::randn({2, 3, 3}, rng, 1.0, true);
    worst = std::max(worst, grad_check({a, b, g, bias, v}, [&]() {
                       Tensor m = matmul(a, b);
                       Tensor ln = layer_norm(m, g, bias);
                       Tensor sm = softmax_rows(scale_rows(add_rowvec(ln, v), v));
                       Tensor act = gelu(mul(sm, exp_t(scale(m, 0.3))));
                       Tensor cat = concat({act, transpose(reshape(act, {4, 4}))}, 1);
                       return mean_all(mul(slice(cat, 1, 1, 5), slice(cat, 1, 2, 5)));
                     }));
    worst = std::max(worst, grad_check({a, k}, [&]() {
                       Tensor c = conv1d(a, k);
                       return sum_all(mul(c, c));
                     }));
    Tensor logits = Tensor::randn({5, 4}, rng, 1.0, true);
    worst = std::max(worst, grad_check({logits}, [&]() {
                       return add(cross_entropy(logits, {0, 2, 1, 3, 2}),
                                  add(mse(logits, Tensor::zeros({5, 4})),
                                      bce_with_logits(logits, Tensor::full({5, 4}, 1.0))));
                     }));
    Tensor table = Tensor::randn({7, 3}, rng, 1.0, true);
    worst = std::max(worst, grad_check({table}, [&]() {
                       Tensor e = embedding(table, {1, 6, 1});
                       return sum_all(mul(log_t(exp_t(e)), sub(e, scale(e, 0.5))));
                     }));
  }

  {  // the full L=2 model end to end at 64-bit
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.ff_dim = 16;
    cfg.feature_dim = 1;
    cfg.chunk_size = 4;
    cfg.precision = Precision::f64;
    BaarModel model(cfg, 77);
    Tensor raw = Tensor::randn({16, 1}, rng, 1.0);
    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    worst = std::max(worst, grad_check(params, [&]() {
                       TokenSequence seq = model.encode_series(raw);
                       ModelOutput out = model.forward(seq);
                       return pretrain_loss(out, seq, {StrategyKind::next_previous, 0.4});
                     }));
  }
  const double secs = elapsed_s(t0);
  std::ostringstream os;
  os << "max rel err " << worst << ", " << secs << " s";
  report(2, "gradient integrity", worst < 1e-4 && secs < 120.0, os.str());
}

// ---- criterion 3: full-rankness ----
void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  // Random triangular matrices carry exponentially bad conditioning, so a
  // handful of genuinely full-rank draws dip below 1e-8 relative; rank is
  // certified structurally (triangular, nonzero diagonal) plus numerically
  // at 1e-12, three decades above the machine-zero level of the truly
  // deficient baselines checked at the same tolerance.
  const double tol = 1e-12;
  bool ok = true;
  std::string detail;
  std::mt19937_64 rng(303);
  int instances = 0;
  for (int trial = 0; trial < 20 && ok; ++trial) {
    for (Direction dir : {Direction::forward, Direction::backward}) {
      RetentionLayer layer = make_layer(16, 2, 8, dir, 4000 + static_cast<std::uint64_t>(trial));
      Tensor x = Tensor::randn({16, 16}, rng, 1.0);
      RetentionResult res = retention_parallel(x, layer, PositionIndex::regular(16));
      for (const Tensor& r : res.retention) {
        ++instances;
        bool triangular = true, diag_nonzero = true;
        for (std::int64_t i = 0; i < 16; ++i) {
          if (r.at(i, i) == 0.0) diag_nonzero = false;
          for (std::int64_t j = 0; j < 16; ++j) {
            if (dir == Direction::forward && j > i && r.at(i, j) != 0.0) triangular = false;
            if (dir == Direction::backward && j < i && r.at(i, j) != 0.0) triangular = false;
          }
        }
        const auto spec = svd_spectrum(r, tol);
        if (!triangular || !diag_nonzero || spec.numerical_rank != 16) {
          ok = false;
          detail = "retention instance " + std::to_string(instances) + " rank " +
                   std::to_string(spec.numerical_rank);
        }
      }
    }
  }
  // low-rank contrast: unmasked rotated scores with head_dim 4 < N = 16
  for (int trial = 0; trial < 5 && ok; ++trial) {
    RetentionLayer layer = make_layer(4, 1, 4, Direction::bidirectional, 4400 + static_cast<std::uint64_t>(trial));
    Tensor x = Tensor::randn({16, 4}, rng, 1.0);
    Tensor h = layer_norm(x, layer.ln1_g, layer.ln1_b);
    PositionIndex pos = PositionIndex::regular(16);
    Tensor q = apply_rotation(matmul(h, layer.heads[0].w_q), pos, layer.rotary, +1);
    Tensor k = apply_rotation(matmul(h, layer.heads[0].w_k), pos, layer.rotary, -1);
    const auto spec = svd_spectrum(matmul(q, transpose(k)), tol);
    if (spec.numerical_rank != 4) {
      ok = false;
      detail = "unmasked scores rank " + std::to_string(spec.numerical_rank) + " != 4";
    }
  }
  // masked softmax attention is full rank
  for (int trial = 0; trial < 5 && ok; ++trial) {
    std::mt19937_64 arng(4800 + static_cast<std::uint64_t>(trial));
    AttentionParams params = AttentionParams::init(8, 4, arng);
    Tensor x = Tensor::randn({16, 8}, rng, 1.0);
    AttentionResult res = causal_attention(x, params, true);
    const auto spec = svd_spectrum(res.a, tol);
    if (spec.numerical_rank != 16) {
      ok = false;
      detail = "masked attention rank " + std::to_string(spec.numerical_rank) + " != 16";
    }
  }
  const double secs = elapsed_s(t0);
  std::ostringstream os;
  os << (detail.empty() ? std::to_string(instances) + " retention instances full rank, deficient baselines at head_dim"
                        : detail)
     << ", tol 1e-12, " << secs << " s";
  report(3, "full-rankness", ok && secs < 10.0, os.str());
}

// ---- criterion 4: spectrum ordering ----
void criterion_4() {
  std::mt19937_64 rng(404);
  int wins = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t seed = 5000 + static_cast<std::uint64_t>(trial);
    RetentionLayer fwd = make_layer(4, 1, 4, Direction::forward, seed);
    RetentionLayer bwd = make_layer(4, 1, 4, Direction::backward, seed);
    RetentionLayer bid = make_layer(4, 1, 4, Direction::bidirectional, seed);
    Tensor x = Tensor::randn({16, 4}, rng, 1.0);
    PositionIndex pos = PositionIndex::regular(16);
    const double cf = svd_spectrum(retention_parallel(x, fwd, pos).retention[0]).normalized_cumulative[3];
    const double cb = svd_spectrum(retention_parallel(x, bwd, pos).retention[0]).normalized_cumulative[3];
    const double ci = svd_spectrum(retention_parallel(x, bid, pos).retention[0]).normalized_cumulative[3];
    if (cf < ci && cb < ci) ++wins;
  }
  std::ostringstream os;
  os << wins << "/" << trials << " trials ordered";
  report(4, "spectrum ordering", wins >= 18, os.str());
}

// ---- criterion 5: complexity scaling ----
void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::int64_t> lengths{1000, 2000, 4000, 8000};
  BenchReport rec = bench_retention(RetentionMode::recurrent, lengths, 32, 2, 3, 55);
  BenchReport par = bench_retention(RetentionMode::parallel, lengths, 32, 2, 1, 56);
  const double secs = elapsed_s(t0);
  const bool ok = rec.linear_r2 > 0.98 && par.quadratic_r2 > par.linear_r2 && secs < 300.0;
  std::ostringstream os;
  os << "recurrent linear R2 " << rec.linear_r2 << "; parallel quadratic R2 " << par.quadratic_r2
     << " > linear R2 " << par.linear_r2 << ", " << secs << " s";
  report(5, "complexity scaling", ok, os.str());
}

// ---- criteria 6-8 share trained artifacts ----

struct DeskRun {
  StrategyKind kind;
  std::uint64_t seed;
  double accuracy = 0.0;
};

struct DeskScale {
  ShapeletDataset data;
  SplitIndices split;
  std::vector<std::size_t> tune_idx;
  // per-seed next_previous fine-tuned artifacts, reused by criteria 7 and 8
  std::vector<BaarModel> np_models;
  std::vector<FinetuneHead> np_heads;
  double median_acc[3] = {0, 0, 0};
  bool trained = false;
};

ModelConfig desk_config(LayerPattern pattern) {
  ModelConfig mc;
  mc.layers = 4;
  mc.d_model = 64;
  mc.num_heads = 4;
  mc.head_dim = 16;
  mc.ff_dim = 128;
  mc.chunk_size = 64;
  mc.precision = Precision::f32;
  mc.pattern = pattern;
  return mc;
}

constexpr std::int64_t kDeskPretrainEpochs = 6;
constexpr std::int64_t kDeskFinetuneEpochs = 20;
constexpr double kDeskFinetuneLr = 1e-3;
constexpr double kDeskSnr = 3.5;
constexpr int kDeskSeeds = 5;

double run_desk(DeskScale& ds, StrategyKind kind, std::uint64_t seed, BaarModel* keep_model,
                FinetuneHead* keep_head) {
  ModelConfig mc = desk_config(pattern_for_strategy(kind));
  BaarModel model(mc, seed);
  TrainConfig pre;
  pre.lr = 1e-3;
  pre.epochs = kDeskPretrainEpochs;
  pre.batch_size = 16;
  pre.seed = seed + 1;
  train_pretrain(model, ds.data.items, ds.split.train, pre, {kind, 0.4});
  FinetuneOptions fo;
  fo.task = TaskKind::classification;
  fo.n_outputs = 2;
  fo.repr = default_repr_for_pattern(mc.pattern);
  TrainConfig ft;
  ft.lr = kDeskFinetuneLr;
  ft.epochs = kDeskFinetuneEpochs;
  ft.batch_size = 16;
  ft.seed = seed + 2;
  FinetuneRun run = finetune(model, ds.data.items, ds.tune_idx, ft, fo);
  EvalReport rep = evaluate(model, run.head, ds.data.items, ds.split.test, fo);
  if (keep_model) *keep_model = std::move(model);
  if (keep_head) *keep_head = std::move(run.head);
  return rep.accuracy;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 == 1 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

void criterion_6(DeskScale& ds) {
  const auto t0 = std::chrono::steady_clock::now();
  ds.data = gen_shapelet_dataset(1000, 512, 1, 2, kDeskSnr, 42);
  ds.split = split_indices(ds.data.items.size(), 1234);
  ds.tune_idx = take_fraction(ds.split.train, 0.2, 1235);  // fine-tune on 20% of train

  // two worker threads; every run is independently seeded
  std::vector<std::pair<StrategyKind, std::uint64_t>> jobs;
  for (int s = 0; s < kDeskSeeds; ++s) {
    for (StrategyKind kind :
         {StrategyKind::next_previous, StrategyKind::next_only, StrategyKind::masking}) {
      jobs.emplace_back(kind, static_cast<std::uint64_t>(100 + 10 * s));
    }
  }
  ds.np_models.resize(kDeskSeeds, BaarModel(desk_config(LayerPattern::alternating), 0));
  ds.np_heads.resize(kDeskSeeds);
  std::vector<double> acc(jobs.size(), 0.0);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const auto [kind, seed] = jobs[j];
      const int seed_slot = static_cast<int>((seed - 100) / 10);
      if (kind == StrategyKind::next_previous) {
        acc[j] = run_desk(ds, kind, seed, &ds.np_models[static_cast<std::size_t>(seed_slot)],
                          &ds.np_heads[static_cast<std::size_t>(seed_slot)]);
      } else {
        acc[j] = run_desk(ds, kind, seed, nullptr, nullptr);
      }
    }
  };
  std::thread t1(worker), t2(worker);
  t1.join();
  t2.join();

  std::vector<double> per_kind[3];
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    per_kind[static_cast<int>(jobs[j].first)].push_back(acc[j]);
  }
  for (int k = 0; k < 3; ++k) ds.median_acc[k] = median(per_kind[k]);
  ds.trained = true;

  const double np = ds.median_acc[0], no = ds.median_acc[1], ma = ds.median_acc[2];
  const double secs = elapsed_s(t0);
  const bool ok = np >= no && no >= ma && np - ma >= 0.03 && secs < 1800.0;
  std::ostringstream os;
  os << "median acc next_previous " << np << " >= next_only " << no << " >= masking " << ma << ", gap "
     << (np - ma) << ", " << secs << " s";
  report(6, "desk-scale pre-training ordering", ok, os.str());
}

void criterion_7(DeskScale& ds) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!ds.trained) {
    report(7, "representation probing", false, "skipped: criterion 6 artifacts unavailable");
    return;
  }
  struct Variant {
    ReprMode mode;
    ReprLayers layers;
  };
  const std::vector<Variant> variants{
      {ReprMode::sos, ReprLayers::last},          {ReprMode::eos, ReprLayers::last},
      {ReprMode::sos_plus_eos, ReprLayers::last}, {ReprMode::mean, ReprLayers::last},
      {ReprMode::sos, ReprLayers::last_two},      {ReprMode::eos, ReprLayers::last_two},
      {ReprMode::sos_plus_eos, ReprLayers::last_two}, {ReprMode::mean, ReprLayers::last_two}};

  // each variant fine-tunes the same pre-trained trunks (fresh copies)
  std::vector<std::vector<double>> accs(variants.size());
  std::vector<std::pair<std::size_t, int>> jobs;  // (variant, seed slot)
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (int s = 0; s < kDeskSeeds; ++s) jobs.emplace_back(v, s);
  for (auto& a : accs) a.resize(kDeskSeeds);

  // pre-trained trunks are re-created deterministically per seed to avoid
  // sharing fine-tuned state between variants
  std::vector<BaarModel> trunks;
  for (int s = 0; s < kDeskSeeds; ++s) {
    const std::uint64_t seed = static_cast<std::uint64_t>(100 + 10 * s);
    ModelConfig mc = desk_config(LayerPattern::alternating);
    BaarModel model(mc, seed);
    TrainConfig pre;
    pre.lr = 1e-3;
    pre.epochs = kDeskPretrainEpochs;
    pre.batch_size = 16;
    pre.seed = seed + 1;
    train_pretrain(model, ds.data.items, ds.split.train, pre, {StrategyKind::next_previous, 0.4});
    model.save("probe_trunk_" + std::to_string(s) + ".ckpt");
    trunks.push_back(std::move(model));
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const auto [v, s] = jobs[j];
      BaarModel model = BaarModel::load("probe_trunk_" + std::to_string(s) + ".ckpt");
      FinetuneOptions fo;
      fo.task = TaskKind::classification;
      fo.n_outputs = 2;
      fo.repr = variants[v].mode;
      fo.repr_layers = variants[v].layers;
      TrainConfig ft;
      ft.lr = kDeskFinetuneLr;
      ft.epochs = kDeskFinetuneEpochs;
      ft.batch_size = 16;
      ft.seed = static_cast<std::uint64_t>(100 + 10 * s) + 2;
      FinetuneRun run = finetune(model, ds.data.items, ds.tune_idx, ft, fo);
      accs[v][static_cast<std::size_t>(s)] =
          evaluate(model, run.head, ds.data.items, ds.split.test, fo).accuracy;
    }
  };
  std::thread t1(worker), t2(worker);
  t1.join();
  t2.join();
  for (int s = 0; s < kDeskSeeds; ++s) std::remove(("probe_trunk_" + std::to_string(s) + ".ckpt").c_str());

  std::vector<double> medians(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) medians[v] = median(accs[v]);
  // rank of sos/last (variant 0) among the eight
  int better = 0;
  for (std::size_t v = 1; v < variants.size(); ++v)
    if (medians[v] > medians[0]) ++better;
  const double secs = elapsed_s(t0);
  std::ostringstream os;
  os << "sos/last median " << medians[0] << ", outranked by " << better << " variants [";
  for (std::size_t v = 0; v < medians.size(); ++v) os << (v ? " " : "") << medians[v];
  os << "], " << secs << " s";
  report(7, "representation probing", better <= 1, os.str());
}

void criterion_8(DeskScale& ds) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!ds.trained) {
    report(8, "saliency localization", false, "skipped: criterion 6 artifacts unavailable");
    return;
  }
  // fine-tuned next_previous model from seed slot 0
  const BaarModel& model = ds.np_models[0];
  std::size_t wins = 0, total = 0;
  for (std::size_t idx : ds.split.test) {
    const Series& s = ds.data.items[idx];
    SaliencyMap map = saliency(model, s);
    ++total;
    wins += map.shapelet_mean > map.background_mean ? 1 : 0;
  }
  const double rate = static_cast<double>(wins) / static_cast<double>(total);
  const double secs = elapsed_s(t0);
  std::ostringstream os;
  os << "shapelet saliency above background on " << wins << "/" << total << " = " << rate << ", " << secs
     << " s";
  report(8, "saliency localization", rate >= 0.70, os.str());
}

// ---- criterion 9: loss decomposition and floors ----
void criterion_9() {
  std::mt19937_64 rng(909);
  bool ok = true;
  std::ostringstream os;
  {
    TokenSequence seq;
    seq.n_real = 7;
    seq.target_values = Tensor::randn({7, 2}, rng, 1.0);
    ModelOutput out;
    out.n_real = 7;
    out.next_token_logits = Tensor::randn({9, 2}, rng, 1.0);
    out.prev_token_logits = Tensor::randn({9, 2}, rng, 1.0);
    const double np = pretrain_loss(out, seq, {StrategyKind::next_previous, 0.4}).item();
    const double no = pretrain_loss(out, seq, {StrategyKind::next_only, 0.4}).item();
    const double prev = mse(slice(out.prev_token_logits, 0, 2, 7), seq.target_values).item();
    ok = ok && std::abs(np - (no + prev)) < 1e-6;
    os << "additivity gap " << std::abs(np - (no + prev));
  }
  {
    TokenSequence seq;
    seq.n_real = 5;
    seq.target_codes = {0, 11, 46, 3, 22};
    ModelOutput out;
    out.n_real = 5;
    out.next_token_logits = Tensor::full({7, 47}, 1.25);
    out.prev_token_logits = Tensor::full({7, 47}, 1.25);
    const double loss = pretrain_loss(out, seq, {StrategyKind::next_previous, 0.4}).item();
    ok = ok && std::abs(loss - 2.0 * std::log(47.0)) < 2e-6;
    os << "; uniform-logit ce per direction " << loss / 2.0 << " vs ln(47) " << std::log(47.0);
  }
  report(9, "loss decomposition and floors", ok, os.str());
}

// ---- criterion 10: irregular-gap correctness ----
void criterion_10() {
  bool ok = true;
  std::ostringstream os;
  std::mt19937_64 rng(1010);
  // month-stamped decay matches direct evaluation exactly
  std::vector<double> months{0, 0, 2, 5, 5, 9, 14};
  PositionIndex pos{std::vector<double>(months)};
  for (double gamma : {0.9, 0.96875}) {
    for (Direction dir : {Direction::forward, Direction::backward, Direction::bidirectional}) {
      Tensor d = build_decay_matrix(pos, gamma, dir);
      for (std::int64_t i = 0; i < pos.size() && ok; ++i) {
        for (std::int64_t j = 0; j < pos.size(); ++j) {
          double want = 0.0;
          if (dir == Direction::forward) want = i >= j ? std::pow(gamma, months[i] - months[j]) : 0.0;
          if (dir == Direction::backward) want = i <= j ? std::pow(gamma, months[j] - months[i]) : 0.0;
          if (dir == Direction::bidirectional) want = std::pow(gamma, std::abs(months[i] - months[j]));
          if (d.at(i, j) != want) {
            ok = false;
            break;
          }
        }
      }
    }
  }
  os << (ok ? "decay entries exact" : "decay entries differ from direct evaluation");
  // recurrent and parallel agree on irregular streams
  double worst = 0.0;
  for (Direction dir : {Direction::forward, Direction::backward}) {
    RetentionLayer layer = make_layer(8, 2, 4, dir, 7000 + static_cast<std::uint64_t>(dir));
    Tensor x = Tensor::randn({7, 8}, rng, 1.0);
    Tensor yp = retention_parallel(x, layer, pos).y;
    Tensor yr = retention_recurrent(x, layer, pos).y;
    worst = std::max(worst, max_rel_diff(yp.data(), yr.data()));
  }
  ok = ok && worst < 1e-5;
  os << "; irregular form agreement " << worst;
  report(10, "irregular-gap correctness", ok, os.str());
}

// ---- criterion 11: determinism ----
void criterion_11() {
  ShapeletDataset data = gen_shapelet_dataset(24, 64, 1, 2, 4.0, 1111);
  std::vector<std::size_t> idx(24);
  std::iota(idx.begin(), idx.end(), 0);
  auto run = [&](const std::string& path) {
    ModelConfig mc;
    mc.layers = 2;
    mc.d_model = 16;
    mc.num_heads = 2;
    mc.head_dim = 8;
    mc.ff_dim = 32;
    mc.chunk_size = 8;
    mc.precision = Precision::f64;
    BaarModel model(mc, 9);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 10;
    PretrainRun pr = train_pretrain(model, data.items, idx, tc, {StrategyKind::next_previous, 0.4});
    model.save(path);
    return pr.train_loss_per_epoch;
  };
  const auto l1 = run("det_a.ckpt");
  const auto l2 = run("det_b.ckpt");
  std::ifstream a("det_a.ckpt", std::ios::binary), b("det_b.ckpt", std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  const bool ok = l1 == l2 && sa.str() == sb.str() && !sa.str().empty();
  std::remove("det_a.ckpt");
  std::remove("det_b.ckpt");
  std::ostringstream os;
  os << "loss curves " << (l1 == l2 ? "identical" : "differ") << ", checkpoints "
     << (sa.str() == sb.str() ? "byte-identical" : "differ");
  report(11, "determinism", ok, os.str());
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();  // timing-sensitive: runs before the training criteria load the machine
  DeskScale desk;
  criterion_6(desk);
  criterion_7(desk);
  criterion_8(desk);
  criterion_9();
  criterion_10();
  criterion_11();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
