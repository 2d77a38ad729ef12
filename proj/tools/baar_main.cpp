#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "baar/analysis.hpp"
#include "baar/bench.hpp"
#include "baar/data.hpp"
#include "baar/model.hpp"
#include "baar/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace baar;

namespace {

std::string run_root() {
  const char* env = std::getenv("BAAR_RUN_ROOT");
  return env && *env ? env : "runs";
}

fs::path prepare_run_dir(const std::string& explicit_dir, const std::string& command) {
  fs::path dir = explicit_dir.empty() ? fs::path(run_root()) / command : fs::path(explicit_dir);
  fs::create_directories(dir);
  return dir;
}

void write_snapshot(const fs::path& run_dir, const json& resolved) {
  std::ofstream os(run_dir / "config.json", std::ios::trunc);
  os << resolved.dump(2) << "\n";
}

MetricsSink make_sink(const fs::path& run_dir) {
  auto file = std::make_shared<std::ofstream>(run_dir / "metrics.jsonl", std::ios::trunc);
  return [file](const MetricsRecord& rec) {
    const std::string line = rec.to_json();
    std::cout << line << "\n";
    (*file) << line << "\n";
    file->flush();
  };
}

bool file_is_events(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path + ": cannot open file");
  std::string header;
  std::getline(is, header);
  return header.rfind("patient_id", 0) == 0;
}

std::vector<Series> load_labeled_series(const std::string& data_path, const std::string& labels_path) {
  std::vector<Series> items = load_series_csv(data_path);
  fs::path lp = labels_path.empty() ? fs::path(data_path).parent_path() / "labels.csv" : fs::path(labels_path);
  if (fs::exists(lp)) {
    auto labels = load_labels_csv(lp.string());
    if (labels.size() != items.size()) {
      throw std::runtime_error(lp.string() + ": " + std::to_string(labels.size()) + " label rows for " +
                               std::to_string(items.size()) + " sequences");
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!labels[i].empty()) items[i].label = labels[i][0];
    }
  }
  return items;
}

std::vector<EventStream> load_labeled_events(const std::string& data_path, const std::string& labels_path) {
  std::vector<EventStream> streams = load_events_csv(data_path);
  fs::path lp = labels_path.empty() ? fs::path(data_path).parent_path() / "labels.csv" : fs::path(labels_path);
  if (fs::exists(lp)) {
    auto labels = load_labels_csv(lp.string());
    if (labels.size() != streams.size()) {
      throw std::runtime_error(lp.string() + ": " + std::to_string(labels.size()) + " label rows for " +
                               std::to_string(streams.size()) + " streams");
    }
    for (std::size_t i = 0; i < streams.size(); ++i) streams[i].labels = labels[i];
  }
  return streams;
}

struct ModelFlags {
  std::int64_t layers = 4;
  std::int64_t d_model = 64;
  int heads = 4;
  std::int64_t ff_dim = 0;  // 0 = 2*d_model
  std::int64_t chunk = 64;
  std::int64_t vocab = 0;
  double rotary_base = 10000.0;
  bool no_rotary = false;
  bool rotary_token_order = false;
  bool no_tokenizer = false;
  std::string precision = "f32";
  std::string pattern;  // empty = derived from the strategy

  ModelConfig build(std::int64_t feature_dim, const std::string& strategy_name) const {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.d_model = d_model;
    cfg.num_heads = heads;
    if (heads < 1 || d_model % heads != 0) throw std::runtime_error("d_model must be divisible by heads");
    cfg.head_dim = d_model / heads;
    cfg.ff_dim = ff_dim > 0 ? ff_dim : 2 * d_model;
    cfg.feature_dim = feature_dim;
    cfg.vocab_size = vocab;
    cfg.chunk_size = chunk;
    cfg.rotary_base = rotary_base;
    cfg.use_rotary = !no_rotary;
    cfg.rotary_uses_timestamps = !rotary_token_order;
    cfg.use_tokenizer = !no_tokenizer && vocab == 0;
    cfg.pattern = pattern.empty() ? pattern_for_strategy(strategy_from_name(strategy_name))
                                  : layer_pattern_from_name(pattern);
    cfg.precision = precision == "f64" ? Precision::f64 : Precision::f32;
    return cfg;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--layers", layers, "Retention layer count")->capture_default_str();
    cmd->add_option("--d-model", d_model, "Model width")->capture_default_str();
    cmd->add_option("--heads", heads, "Retention heads")->capture_default_str();
    cmd->add_option("--ff", ff_dim, "Feed-forward width (0 = 2*d_model)")->capture_default_str();
    cmd->add_option("--chunk", chunk, "Chunk size for the chunkwise forward pass")->capture_default_str();
    cmd->add_option("--vocab", vocab, "Vocabulary size (discrete event mode when > 0)")->capture_default_str();
    cmd->add_option("--rotary-base", rotary_base, "Rotary angle base")->capture_default_str();
    cmd->add_flag("--no-rotary", no_rotary, "Disable rotary phase");
    cmd->add_flag("--rotary-token-order", rotary_token_order,
                  "Rotary phase uses token order even when decay uses timestamps");
    cmd->add_flag("--no-tokenizer", no_tokenizer, "Feed raw timesteps as tokens");
    cmd->add_option("--precision", precision, "Numeric precision: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    cmd->add_option("--pattern", pattern, "Layer pattern override: alternating, forward_only, bidirectional")
        ->check(CLI::IsMember({"alternating", "forward_only", "bidirectional"}));
  }
};

json model_config_json(const ModelConfig& cfg) { return json::parse(cfg.to_json()); }

void save_finetuned(const std::string& path, const BaarModel& model, const FinetuneHead& head,
                    const FinetuneOptions& opts) {
  json meta;
  meta["model"] = model_config_json(model.config());
  meta["finetune"] = {{"repr", repr_mode_name(opts.repr)},
                      {"repr_layers", repr_layers_name(opts.repr_layers)},
                      {"task", opts.task == TaskKind::classification ? "classification"
                               : opts.task == TaskKind::regression   ? "regression"
                                                                     : "multilabel"},
                      {"n_outputs", opts.n_outputs}};
  auto tensors = model.parameters();
  for (auto& p : head_parameters(head)) tensors.push_back(p);
  save_named_tensors(path, meta.dump(), tensors);
}

struct LoadedCheckpoint {
  std::optional<BaarModel> model;
  std::optional<FinetuneHead> head;
  std::optional<FinetuneOptions> opts;
};

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto [config_json, tensors] = load_named_tensors(path);
  LoadedCheckpoint out;
  json meta = json::parse(config_json);
  json model_cfg = meta.contains("model") ? meta.at("model") : meta;
  out.model.emplace(ModelConfig::from_json(model_cfg.dump()), 0);
  auto params = out.model->parameters();
  std::size_t ti = 0;
  for (auto& [name, t] : params) {
    if (ti >= tensors.size() || tensors[ti].first != name) {
      throw std::runtime_error("checkpoint: tensor name mismatch at " + name);
    }
    if (t.shape() != tensors[ti].second.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    t.mutable_data() = tensors[ti].second.data();
    ++ti;
  }
  if (meta.contains("finetune")) {
    FinetuneOptions opts;
    opts.repr = repr_mode_from_name(meta["finetune"].at("repr").get<std::string>());
    opts.repr_layers = repr_layers_from_name(meta["finetune"].at("repr_layers").get<std::string>());
    const std::string task = meta["finetune"].at("task").get<std::string>();
    opts.task = task == "classification" ? TaskKind::classification
                : task == "regression"   ? TaskKind::regression
                                         : TaskKind::multilabel;
    opts.n_outputs = meta["finetune"].at("n_outputs").get<int>();
    FinetuneHead head = make_finetune_head(out.model->config(), opts, 0);
    for (auto& [name, t] : head_parameters(head)) {
      if (ti >= tensors.size() || tensors[ti].first != name) {
        throw std::runtime_error("checkpoint: tensor name mismatch at " + name);
      }
      t.mutable_data() = tensors[ti].second.data();
      ++ti;
    }
    out.head = std::move(head);
    out.opts = opts;
  }
  if (ti != tensors.size()) throw std::runtime_error("checkpoint: trailing tensors");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"baar: bidirectional alternating retention for time series"};
  app.require_subcommand(1);

  std::string config_path, run_dir, data_path, labels_path, checkpoint_path, out_path;
  std::uint64_t seed = 0, split_seed = 1234;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--run-dir", run_dir, "Run directory (default $BAAR_RUN_ROOT/<command>)");
    cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  };

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset as CSV files");
  std::string gen_kind = "shapelet";
  std::int64_t gen_n = 1000, gen_t = 512, gen_v = 1, gen_vocab = 47;
  int gen_classes = 2;
  double gen_snr = 5.0, gen_mean_events = 20.0, gen_mean_gap = 2.0;
  std::vector<std::string> gen_rules{"pheno_a:3", "pheno_b:5,7", "pheno_c:11,13"};
  gen->add_option("--kind", gen_kind, "shapelet or events")
      ->check(CLI::IsMember({"shapelet", "events"}))
      ->capture_default_str();
  gen->add_option("--out", out_path, "Output directory");
  gen->add_option("--n", gen_n, "Sequences / patients")->capture_default_str();
  gen->add_option("--t", gen_t, "Timesteps per sequence")->capture_default_str();
  gen->add_option("--v", gen_v, "Channels")->capture_default_str();
  gen->add_option("--classes", gen_classes, "Shapelet classes")->capture_default_str();
  gen->add_option("--snr", gen_snr, "Shapelet amplitude against unit noise")->capture_default_str();
  gen->add_option("--vocab", gen_vocab, "Event vocabulary size")->capture_default_str();
  gen->add_option("--mean-events", gen_mean_events, "Mean events per stream")->capture_default_str();
  gen->add_option("--mean-gap", gen_mean_gap, "Mean month gap between events")->capture_default_str();
  gen->add_option("--rule", gen_rules, "Phenotype rule name:code[,code...] (repeatable)")->capture_default_str();
  add_common(gen);

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "Generative pre-training");
  ModelFlags pre_model;
  std::string pre_strategy = "next_previous";
  double pre_lr = 1e-3, mask_ratio = 0.4;
  std::int64_t pre_epochs = 20, pre_batch = 16;
  pre->add_option("--data", data_path, "series.csv or events.csv");
  pre->add_option("--strategy", pre_strategy, "next_previous, next_only, or masking")
      ->check(CLI::IsMember({"next_previous", "next_only", "masking"}))
      ->capture_default_str();
  pre->add_option("--mask-ratio", mask_ratio, "Masked timestep fraction for the masking strategy")
      ->capture_default_str();
  pre->add_option("--epochs", pre_epochs, "Pre-training epochs")->capture_default_str();
  pre->add_option("--lr", pre_lr, "Learning rate")->capture_default_str();
  pre->add_option("--batch", pre_batch, "Batch size")->capture_default_str();
  pre->add_option("--split-seed", split_seed, "Train/valid/test split seed")->capture_default_str();
  pre_model.attach(pre);
  add_common(pre);

  // ---- finetune ----
  auto* fin = app.add_subcommand("finetune", "Fine-tune a linear head end to end");
  ModelFlags fin_model;
  std::string fin_repr, fin_repr_layers = "last", fin_task = "classification";
  double fin_lr = 1e-4, tune_frac = 1.0;
  std::int64_t fin_epochs = 5, fin_batch = 16;
  bool no_pretrain = false;
  fin->add_option("--data", data_path, "series.csv or events.csv");
  fin->add_option("--labels", labels_path, "Labels CSV (default: labels.csv next to --data)");
  fin->add_option("--checkpoint", checkpoint_path, "Pre-trained checkpoint to start from");
  fin->add_flag("--no-pretrain", no_pretrain, "Start from random initialization instead of a checkpoint");
  fin->add_option("--repr", fin_repr, "Sequence representation: sos, eos, sos_eos, mean (default per pattern)")
      ->check(CLI::IsMember({"sos", "eos", "sos_eos", "mean"}));
  fin->add_option("--repr-layers", fin_repr_layers, "Representation layers: last or last_two")
      ->check(CLI::IsMember({"last", "last_two"}))
      ->capture_default_str();
  fin->add_option("--task", fin_task, "classification, regression, or multilabel")
      ->check(CLI::IsMember({"classification", "regression", "multilabel"}))
      ->capture_default_str();
  fin->add_option("--epochs", fin_epochs, "Fine-tuning epochs")->capture_default_str();
  fin->add_option("--lr", fin_lr, "Learning rate")->capture_default_str();
  fin->add_option("--batch", fin_batch, "Batch size")->capture_default_str();
  fin->add_option("--tune-frac", tune_frac, "Fraction of the train split used for fine-tuning")
      ->capture_default_str();
  fin->add_option("--split-seed", split_seed, "Train/valid/test split seed")->capture_default_str();
  fin_model.attach(fin);
  add_common(fin);

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  std::string eval_split = "test";
  ev->add_option("--checkpoint", checkpoint_path, "Fine-tuned checkpoint");
  ev->add_option("--data", data_path, "series.csv or events.csv");
  ev->add_option("--labels", labels_path, "Labels CSV (default: labels.csv next to --data)");
  ev->add_option("--split", eval_split, "train, valid, test, or all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}))
      ->capture_default_str();
  ev->add_option("--split-seed", split_seed, "Train/valid/test split seed")->capture_default_str();
  add_common(ev);

  // ---- analyze ----
  auto* an = app.add_subcommand("analyze", "Export saliency, retention heatmaps, and spectra");
  std::int64_t an_max_seqs = 8;
  an->add_option("--checkpoint", checkpoint_path, "Model or fine-tuned checkpoint");
  an->add_option("--data", data_path, "series.csv");
  an->add_option("--labels", labels_path, "Labels CSV (default: labels.csv next to --data)");
  an->add_option("--max-sequences", an_max_seqs, "Sequences to analyze from the test split")
      ->capture_default_str();
  an->add_option("--split-seed", split_seed, "Train/valid/test split seed")->capture_default_str();
  add_common(an);

  // ---- bench ----
  auto* be = app.add_subcommand("bench", "Wall-time scaling of the retention forms");
  std::string be_mode = "recurrent";
  std::string be_lengths = "1000,2000,4000,8000";
  std::int64_t be_d = 32, be_chunk = 64;
  int be_heads = 2, be_reps = 3;
  be->add_option("--mode", be_mode, "recurrent, parallel, or chunkwise")
      ->check(CLI::IsMember({"recurrent", "parallel", "chunkwise"}))
      ->capture_default_str();
  be->add_option("--lengths", be_lengths, "Comma-separated sequence lengths")->capture_default_str();
  be->add_option("--d-model", be_d, "Model width")->capture_default_str();
  be->add_option("--heads", be_heads, "Heads")->capture_default_str();
  be->add_option("--reps", be_reps, "Repetitions per length (median)")->capture_default_str();
  be->add_option("--chunk", be_chunk, "Chunk size (chunkwise mode)")->capture_default_str();
  add_common(be);

  // --config file values become defaults; explicit flags still win
  try {
    std::string cfg_arg;
    for (int i = 1; i + 1 < argc; ++i)
      if (std::string(argv[i]) == "--config") cfg_arg = argv[i + 1];
    if (!cfg_arg.empty()) {
      std::ifstream is(cfg_arg);
      if (!is) throw std::runtime_error(cfg_arg + ": cannot open config file");
      json cfg = json::parse(is);
      auto set_if = [&](const char* key, auto& var) {
        if (cfg.contains(key)) cfg.at(key).get_to(var);
      };
      set_if("run_dir", run_dir);
      set_if("seed", seed);
      set_if("split_seed", split_seed);
      set_if("data", data_path);
      set_if("labels", labels_path);
      set_if("checkpoint", checkpoint_path);
      set_if("out", out_path);
      set_if("strategy", pre_strategy);
      set_if("mask_ratio", mask_ratio);
      set_if("pretrain_epochs", pre_epochs);
      set_if("pretrain_lr", pre_lr);
      set_if("finetune_epochs", fin_epochs);
      set_if("finetune_lr", fin_lr);
      set_if("batch", pre_batch);
      set_if("batch", fin_batch);
      set_if("repr", fin_repr);
      set_if("repr_layers", fin_repr_layers);
      set_if("task", fin_task);
      set_if("tune_frac", tune_frac);
      for (ModelFlags* mf : {&pre_model, &fin_model}) {
        set_if("layers", mf->layers);
        set_if("d_model", mf->d_model);
        set_if("heads", mf->heads);
        set_if("ff", mf->ff_dim);
        set_if("chunk", mf->chunk);
        set_if("vocab", mf->vocab);
        set_if("precision", mf->precision);
        set_if("pattern", mf->pattern);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    auto require_value = [](const std::string& value, const char* flag) {
      if (value.empty()) throw std::runtime_error(std::string(flag) + " is required");
    };
    if (pre->parsed() || fin->parsed() || ev->parsed() || an->parsed()) require_value(data_path, "--data");
    if (ev->parsed() || an->parsed()) require_value(checkpoint_path, "--checkpoint");
    if (gen->parsed()) require_value(out_path, "--out");

    if (gen->parsed()) {
      fs::path out_dir(out_path);
      fs::create_directories(out_dir);
      fs::path rd = prepare_run_dir(run_dir, "gen");
      json snapshot{{"command", "gen"},         {"kind", gen_kind},     {"n", gen_n},
                    {"t", gen_t},               {"v", gen_v},           {"classes", gen_classes},
                    {"snr", gen_snr},           {"vocab", gen_vocab},   {"mean_events", gen_mean_events},
                    {"mean_gap", gen_mean_gap}, {"rules", gen_rules},   {"seed", seed},
                    {"out", out_path}};
      write_snapshot(rd, snapshot);
      if (gen_kind == "shapelet") {
        ShapeletDataset ds = gen_shapelet_dataset(gen_n, gen_t, gen_v, gen_classes, gen_snr, seed);
        save_series_csv((out_dir / "series.csv").string(), ds.items);
        std::vector<std::vector<int>> labels;
        for (const Series& s : ds.items) labels.push_back({s.label});
        save_labels_csv((out_dir / "labels.csv").string(), labels);
        std::ofstream spans_os(out_dir / "shapelet_spans.csv", std::ios::trunc);
        spans_os << "seq_id,start,end\n";
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
          spans_os << i << ',' << ds.items[i].shapelet_start << ',' << ds.items[i].shapelet_end << '\n';
        }
        std::cout << json{{"written", (out_dir / "series.csv").string()}, {"sequences", gen_n}}.dump()
                  << "\n";
      } else {
        std::vector<PhenotypeRule> rules;
        for (const std::string& spec : gen_rules) {
          const auto colon = spec.find(':');
          if (colon == std::string::npos) throw std::runtime_error("rule must look like name:code[,code...]");
          PhenotypeRule rule;
          rule.name = spec.substr(0, colon);
          std::stringstream ss(spec.substr(colon + 1));
          std::string tok;
          while (std::getline(ss, tok, ',')) rule.required_codes.push_back(std::stoll(tok));
          rules.push_back(std::move(rule));
        }
        auto streams = gen_event_streams(gen_n, gen_vocab, gen_mean_events, rules, seed, gen_mean_gap);
        save_events_csv((out_dir / "events.csv").string(), streams);
        std::vector<std::vector<int>> labels;
        for (const auto& es : streams) labels.push_back(es.labels);
        save_labels_csv((out_dir / "labels.csv").string(), labels);
        std::cout << json{{"written", (out_dir / "events.csv").string()}, {"patients", gen_n}}.dump()
                  << "\n";
      }
      return 0;
    }

    if (pre->parsed()) {
      fs::path rd = prepare_run_dir(run_dir, "pretrain");
      const bool events = file_is_events(data_path);
      TrainConfig tc;
      tc.lr = pre_lr;
      tc.epochs = pre_epochs;
      tc.batch_size = pre_batch;
      tc.seed = seed;
      PretrainStrategy strategy{strategy_from_name(pre_strategy), mask_ratio};

      json snapshot{{"command", "pretrain"},    {"data", data_path},    {"strategy", pre_strategy},
                    {"mask_ratio", mask_ratio}, {"epochs", pre_epochs}, {"lr", pre_lr},
                    {"batch", pre_batch},       {"seed", seed},         {"split_seed", split_seed}};
      const fs::path ckpt = rd / "model.ckpt";
      MetricsSink sink = make_sink(rd);
      if (events) {
        auto streams = load_labeled_events(data_path, labels_path);
        std::int64_t max_code = 0;
        for (const auto& es : streams)
          for (auto c : es.codes) max_code = std::max(max_code, c);
        if (pre_model.vocab == 0) pre_model.vocab = max_code + 1;
        ModelConfig mc = pre_model.build(1, pre_strategy);
        snapshot["model"] = model_config_json(mc);
        write_snapshot(rd, snapshot);
        BaarModel model(mc, seed);
        SplitIndices split = split_indices(streams.size(), split_seed);
        train_pretrain(model, streams, split.train, tc, strategy, sink);
        model.save(ckpt.string());
      } else {
        auto items = load_labeled_series(data_path, labels_path);
        ModelConfig mc = pre_model.build(items.at(0).v, pre_strategy);
        snapshot["model"] = model_config_json(mc);
        write_snapshot(rd, snapshot);
        BaarModel model(mc, seed);
        SplitIndices split = split_indices(items.size(), split_seed);
        train_pretrain(model, items, split.train, tc, strategy, sink);
        model.save(ckpt.string());
      }
      std::cout << json{{"checkpoint", ckpt.string()}}.dump() << "\n";
      return 0;
    }

    if (fin->parsed()) {
      fs::path rd = prepare_run_dir(run_dir, "finetune");
      if (checkpoint_path.empty() && !no_pretrain) {
        throw std::runtime_error("finetune needs --checkpoint or --no-pretrain");
      }
      const bool events = file_is_events(data_path);
      TrainConfig tc;
      tc.lr = fin_lr;
      tc.epochs = fin_epochs;
      tc.batch_size = fin_batch;
      tc.seed = seed;
      FinetuneOptions opts;
      opts.repr_layers = repr_layers_from_name(fin_repr_layers);
      opts.task = fin_task == "classification" ? TaskKind::classification
                  : fin_task == "regression"   ? TaskKind::regression
                                               : TaskKind::multilabel;

      MetricsSink sink = make_sink(rd);
      const fs::path ckpt = rd / "finetuned.ckpt";
      json snapshot{{"command", "finetune"},      {"data", data_path}, {"checkpoint", checkpoint_path},
                    {"no_pretrain", no_pretrain}, {"task", fin_task},  {"repr_layers", fin_repr_layers},
                    {"epochs", fin_epochs},       {"lr", fin_lr},      {"batch", fin_batch},
                    {"tune_frac", tune_frac},     {"seed", seed},      {"split_seed", split_seed}};

      auto run_one = [&](auto& dataset) {
        using DataT = std::decay_t<decltype(dataset)>;
        std::optional<BaarModel> model;
        if (!checkpoint_path.empty()) {
          model.emplace(std::move(*load_checkpoint(checkpoint_path).model));
        } else {
          std::int64_t feature_dim = 1;
          if constexpr (std::is_same_v<DataT, std::vector<Series>>) {
            feature_dim = dataset.at(0).v;
          } else {
            std::int64_t max_code = 0;
            for (const auto& es : dataset)
              for (auto c : es.codes) max_code = std::max(max_code, c);
            if (fin_model.vocab == 0) fin_model.vocab = max_code + 1;
          }
          model.emplace(fin_model.build(feature_dim, "next_previous"), seed);
        }
        opts.repr = fin_repr.empty() ? default_repr_for_pattern(model->config().pattern)
                                     : repr_mode_from_name(fin_repr);
        if constexpr (std::is_same_v<DataT, std::vector<Series>>) {
          if (opts.task == TaskKind::regression) {
            opts.n_outputs = 1;
          } else {
            int max_label = 0;
            for (const auto& s : dataset) max_label = std::max(max_label, s.label);
            opts.n_outputs = max_label + 1;
          }
        } else {
          opts.n_outputs = dataset.at(0).labels.empty() ? 1 : static_cast<int>(dataset.at(0).labels.size());
        }
        snapshot["repr"] = repr_mode_name(opts.repr);
        snapshot["model"] = model_config_json(model->config());
        write_snapshot(rd, snapshot);

        SplitIndices split = split_indices(dataset.size(), split_seed);
        std::vector<std::size_t> tune_idx =
            tune_frac < 1.0 ? take_fraction(split.train, tune_frac, split_seed + 1) : split.train;
        FinetuneRun run = finetune(*model, dataset, tune_idx, tc, opts, sink);
        EvalReport valid = evaluate(*model, run.head, dataset, split.valid, opts);
        sink(valid.to_record(tc.epochs, "valid"));
        EvalReport test = evaluate(*model, run.head, dataset, split.test, opts);
        sink(test.to_record(tc.epochs, "test"));
        save_finetuned(ckpt.string(), *model, run.head, opts);
      };
      if (events) {
        auto streams = load_labeled_events(data_path, labels_path);
        run_one(streams);
      } else {
        auto items = load_labeled_series(data_path, labels_path);
        run_one(items);
      }
      std::cout << json{{"checkpoint", ckpt.string()}}.dump() << "\n";
      return 0;
    }

    if (ev->parsed()) {
      fs::path rd = prepare_run_dir(run_dir, "eval");
      LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
      if (!ck.head) throw std::runtime_error("eval needs a fine-tuned checkpoint");
      json snapshot{{"command", "eval"},   {"checkpoint", checkpoint_path}, {"data", data_path},
                    {"split", eval_split}, {"split_seed", split_seed}};
      write_snapshot(rd, snapshot);
      MetricsSink sink = make_sink(rd);
      auto pick = [&](std::size_t n) {
        SplitIndices split = split_indices(n, split_seed);
        if (eval_split == "train") return split.train;
        if (eval_split == "valid") return split.valid;
        if (eval_split == "test") return split.test;
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
      };
      EvalReport rep;
      if (file_is_events(data_path)) {
        auto streams = load_labeled_events(data_path, labels_path);
        rep = evaluate(*ck.model, *ck.head, streams, pick(streams.size()), *ck.opts);
      } else {
        auto items = load_labeled_series(data_path, labels_path);
        rep = evaluate(*ck.model, *ck.head, items, pick(items.size()), *ck.opts);
      }
      sink(rep.to_record(0, eval_split));
      return 0;
    }

    if (an->parsed()) {
      fs::path rd = prepare_run_dir(run_dir, "analyze");
      LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
      BaarModel& model = *ck.model;
      if (model.config().discrete()) throw std::runtime_error("analyze expects a continuous-series model");
      auto items = load_labeled_series(data_path, labels_path);
      const fs::path span_file = fs::path(data_path).parent_path() / "shapelet_spans.csv";
      if (fs::exists(span_file)) {
        std::ifstream is(span_file);
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
          std::stringstream ss(line);
          std::string a, b, c;
          std::getline(ss, a, ',');
          std::getline(ss, b, ',');
          std::getline(ss, c, ',');
          const std::size_t idx = std::stoul(a);
          if (idx < items.size()) {
            items[idx].shapelet_start = std::stoll(b);
            items[idx].shapelet_end = std::stoll(c);
          }
        }
      }
      json snapshot{{"command", "analyze"},         {"checkpoint", checkpoint_path}, {"data", data_path},
                    {"max_sequences", an_max_seqs}, {"split_seed", split_seed}};
      write_snapshot(rd, snapshot);

      SplitIndices split = split_indices(items.size(), split_seed);
      const std::size_t take = std::min<std::size_t>(split.test.size(), static_cast<std::size_t>(an_max_seqs));
      std::vector<std::size_t> chosen(split.test.begin(), split.test.begin() + static_cast<std::ptrdiff_t>(take));
      json report;
      report["sequences"] = json::array();
      std::size_t saliency_wins = 0, with_spans = 0;
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        const Series& s = items[chosen[k]];
        SaliencyMap map = saliency(model, s);
        ForwardOptions fo;
        fo.capture_retention = true;
        TokenSequence seq = model.encode_series(series_tensor(s, model.config().precision));
        ModelOutput out = model.forward(seq, fo);
        Tensor heat = combined_bidirectional_heatmap(out);
        SpectrumReport fwd_spec =
            svd_spectrum(out.retention_per_layer[out.retention_per_layer.size() - 2][0]);
        SpectrumReport combined_spec = svd_spectrum(heat);

        json entry;
        entry["index"] = chosen[k];
        entry["label"] = s.label;
        entry["saliency_shapelet_mean"] = map.shapelet_mean;
        entry["saliency_background_mean"] = map.background_mean;
        entry["forward_retention_rank"] = fwd_spec.numerical_rank;
        entry["forward_retention_cumulative"] = fwd_spec.normalized_cumulative;
        entry["combined_rank"] = combined_spec.numerical_rank;
        report["sequences"].push_back(entry);
        if (s.shapelet_start >= 0) {
          ++with_spans;
          saliency_wins += map.shapelet_mean > map.background_mean ? 1 : 0;
        }
        if (k == 0) {
          const auto names = slot_names(seq.n_real);
          write_matrix_csv((rd / "combined_heatmap.csv").string(), heat, names, names);
          std::vector<std::string> cols;
          for (std::int64_t c = 0; c < map.values.dim(1); ++c) cols.push_back("d" + std::to_string(c));
          write_matrix_csv((rd / "saliency.csv").string(), map.values, names, cols);
        }
      }
      if (with_spans > 0) {
        report["saliency_win_rate"] = static_cast<double>(saliency_wins) / static_cast<double>(with_spans);
      }
      std::ofstream ros(rd / "report.json", std::ios::trunc);
      ros << report.dump(2) << "\n";
      std::cout << json{{"report", (rd / "report.json").string()}}.dump() << "\n";
      return 0;
    }

    if (be->parsed()) {
      fs::path rd = prepare_run_dir(run_dir, "bench");
      std::vector<std::int64_t> lengths;
      std::stringstream ss(be_lengths);
      std::string tok;
      while (std::getline(ss, tok, ',')) lengths.push_back(std::stoll(tok));
      const RetentionMode mode = be_mode == "recurrent"  ? RetentionMode::recurrent
                                 : be_mode == "parallel" ? RetentionMode::parallel
                                                         : RetentionMode::chunkwise;
      json snapshot{{"command", "bench"}, {"mode", be_mode},   {"lengths", lengths},
                    {"d_model", be_d},    {"heads", be_heads}, {"reps", be_reps},
                    {"chunk", be_chunk},  {"seed", seed}};
      write_snapshot(rd, snapshot);
      BenchReport rep = bench_retention(mode, lengths, be_d, be_heads, be_reps, seed, be_chunk);
      json out;
      out["mode"] = be_mode;
      out["rows"] = json::array();
      for (const auto& row : rep.rows) {
        out["rows"].push_back({{"n", row.n}, {"seconds", row.seconds}});
        std::cout << "n=" << row.n << " seconds=" << row.seconds << "\n";
      }
      out["linear_r2"] = rep.linear_r2;
      out["quadratic_r2"] = rep.quadratic_r2;
      std::cout << json{{"linear_r2", rep.linear_r2}, {"quadratic_r2", rep.quadratic_r2}}.dump() << "\n";
      std::ofstream bos(rd / "bench.json", std::ios::trunc);
      bos << out.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
