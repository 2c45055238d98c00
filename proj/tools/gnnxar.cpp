// gnnxar: prepare, train, evaluate, explain, export-pairs, selfcheck.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "gnnxar/pipeline.hpp"
#include "gnnxar/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace gnnxar;

namespace {

// Flags left unset keep whatever the config file (or the defaults) say.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<double> window_secs, overlap;
  std::optional<double> lr;
  std::optional<std::size_t> epochs, patience, batch, embed_dim, hidden_dim;
  std::optional<std::size_t> runs, mask_epochs;
  std::optional<std::string> entropy_reduction;
  std::optional<std::size_t> synthetic_per_class;
  std::optional<double> synthetic_noise;
  std::optional<std::string> subset, class_filter;
  std::optional<std::size_t> per_class;
  bool correct_only = false, dump_graphs = false;

  RunConfig resolve() const {
    RunConfig c;
    if (config) c = run_config_from_json(io::read_json(*config));
    if (seed) c.seed = *seed;
    if (window_secs) c.segment.window_secs = *window_secs;
    if (overlap) c.segment.overlap = *overlap;
    if (lr) c.train.learning_rate = *lr;
    if (epochs) c.train.max_epochs = *epochs;
    if (patience) c.train.patience = *patience;
    if (batch) c.train.batch_size = *batch;
    if (embed_dim) c.model.embed_dim = *embed_dim;
    if (hidden_dim) c.model.hidden_dim = *hidden_dim;
    if (runs) c.explain.runs = *runs;
    if (mask_epochs) c.explain.epochs = *mask_epochs;
    if (entropy_reduction) c = run_config_from_json({{"explain", {{"entropy_reduction", *entropy_reduction}}}}, c);
    if (synthetic_per_class) c.synthetic.windows_per_class = *synthetic_per_class;
    if (synthetic_noise) c.synthetic.noise_fraction = *synthetic_noise;
    if (subset) c.subset = *subset;
    if (class_filter) c.class_filter = *class_filter;
    if (per_class) c.per_class = *per_class;
    if (correct_only) c.correct_only = true;
    if (dump_graphs) c.dump_graphs = true;
    c.apply_seed();
    return c;
  }
};

void echo_config(const fs::path& out, const RunConfig& c) { io::write_json(out / "run_config.json", run_config_to_json(c)); }

void write_metrics(const fs::path& out, const MetricsReport& m, const std::vector<std::string>& names) {
  io::write_text(out / "metrics.csv", io::metrics_csv(m, names));
  io::write_text(out / "confusion.csv", io::confusion_csv(m, names));
}

void print_metrics(const char* what, const MetricsReport& m) {
  std::printf("%s: accuracy %.4f, weighted F1 %.4f over %zu windows\n", what, m.accuracy, m.weighted_f1, m.total);
}

int cmd_prepare(const std::string& log, const std::optional<std::string>& spec, const fs::path& out,
                const RunConfig& cfg) {
  io::DatasetConfig dc;
  if (spec) dc = io::load_dataset_config(*spec);
  std::ifstream in(log);
  if (!in) throw DataError("cannot open log '" + log + "'");
  PrepareReport report;
  const auto corpus = prepare_corpus(in, dc, cfg.segment, report);
  io::save_corpus(out / "windows.json", corpus);
  io::write_json(out / "prepare_report.json", prepare_report_to_json(report));
  echo_config(out, cfg);
  std::printf("%zu lines, %zu binary events, %zu parse errors -> %zu windows in %zu classes\n", report.lines,
              report.binary_events, report.parse_errors.size(), corpus.windows.size(), corpus.class_names.size());
  for (const auto& [label, n] : report.kept_by_class) std::printf("  %-28s %zu\n", label.c_str(), n);
  return 0;
}

int cmd_train(const std::optional<std::string>& windows, bool synthetic, const fs::path& out, const RunConfig& cfg) {
  io::Corpus corpus;
  if (synthetic) {
    corpus = synthetic_corpus(cfg.synthetic);
    io::save_corpus(out / "windows.json", corpus);
  } else if (windows) {
    corpus = io::load_corpus(*windows);
  } else {
    throw CLI::RequiredError("--windows or --synthetic");
  }
  const auto graphs = build_graphs(corpus);
  auto outcome = train_corpus(corpus, graphs, cfg, [](const EpochRecord& e) {
    if (e.epoch % 10 == 0 || e.epoch == 1)
      std::fprintf(stderr, "epoch %4zu  train %.5f  val %.5f\n", e.epoch, e.train_loss, e.val_loss);
  });
  for (const auto& w : outcome.split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  io::save_checkpoint(out / "checkpoint.json", outcome.checkpoint);
  write_metrics(out, outcome.test_metrics, corpus.class_names);
  io::write_text(out / "history.csv", io::history_csv(outcome.result.history));
  echo_config(out, cfg);
  std::printf("best epoch %zu of %zu (val loss %.5f)%s\n", outcome.result.best_epoch, outcome.result.history.size(),
              outcome.result.best_val_loss, outcome.result.early_stopped ? ", early stopped" : "");
  print_metrics("validation", outcome.validation_metrics);
  print_metrics("test", outcome.test_metrics);
  return 0;
}

struct Loaded {
  io::Checkpoint ck;
  io::Corpus corpus;
  std::vector<ActivityGraph> graphs;
  GnnModel model;
};

Loaded load(const std::string& checkpoint, const std::string& windows) {
  auto ck = io::load_checkpoint(checkpoint);
  auto corpus = io::load_corpus(windows);
  check_compatible(ck, corpus);
  auto graphs = build_graphs(corpus);
  GnnModel model(ck.config, ck.params);
  return {std::move(ck), std::move(corpus), std::move(graphs), std::move(model)};
}

int cmd_evaluate(const std::string& checkpoint, const std::string& windows, const fs::path& out, const RunConfig& cfg) {
  auto l = load(checkpoint, windows);
  const auto idx = subset_indices(l.graphs, l.ck.split, cfg.subset);
  if (idx.empty()) throw DataError("subset '" + cfg.subset + "' is empty");
  const auto set = pick(l.graphs, idx);
  const auto m = evaluate(l.model, std::span<const ActivityGraph>(set), l.ck.config.num_classes);
  write_metrics(out, m, l.corpus.class_names);
  echo_config(out, cfg);
  print_metrics(cfg.subset.c_str(), m);
  return 0;
}

int cmd_explain(const std::string& checkpoint, const std::string& windows, const fs::path& out, const RunConfig& cfg) {
  auto l = load(checkpoint, windows);
  const auto candidates = subset_indices(l.graphs, l.ck.split, cfg.subset);
  auto sel = select_windows(l.model, l.graphs, l.corpus, candidates, cfg);
  for (const auto& w : sel.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto explained = explain_windows(l.model, l.graphs, l.corpus, sel.indices, cfg.explain);

  std::vector<io::json> records, subgraphs;
  for (const auto& e : explained) {
    const auto& g = l.graphs[e.graph_index];
    records.push_back(io::explanation_record_to_json(e.record));
    subgraphs.push_back(io::subgraph_to_json(g.window_id, e.result, g, l.corpus.registry, cfg.explain));
    if (cfg.dump_graphs)
      io::write_text(out / "graphs" / ("window_" + std::to_string(g.window_id) + ".dot"),
                     io::graph_to_dot(g, l.corpus.registry, &e.result.subgraph));
  }
  io::write_jsonl(out / "explanations.jsonl", records);
  io::write_jsonl(out / "subgraphs.jsonl", subgraphs);
  io::write_json(out / "explain_report.json",
                 {{"candidates", candidates.size()}, {"explained", explained.size()}, {"warnings", sel.warnings}});
  echo_config(out, cfg);
  std::printf("explained %zu of %zu candidate windows\n", explained.size(), candidates.size());
  return 0;
}

std::vector<ExplanationRecord> load_records(const std::string& path) {
  std::vector<ExplanationRecord> out;
  for (const auto& j : io::read_jsonl(path))
    out.push_back(io::guarded(path, [&] { return io::explanation_record_from_json(j); }));
  return out;
}

int cmd_export_pairs(const std::string& a, const std::string& b, std::size_t per_class, const fs::path& out,
                     const RunConfig& cfg) {
  const auto pairs = export_pairs(load_records(a), load_records(b), per_class, cfg.seed);
  std::vector<io::json> rows;
  for (const auto& p : pairs) rows.push_back(io::pair_to_json(p));
  io::write_jsonl(out / "pairs.jsonl", rows);
  echo_config(out, cfg);
  std::printf("wrote %zu pairs\n", pairs.size());
  return 0;
}

int cmd_selfcheck() {
  bool ok = true;
  for (const auto& r : {check_graph_oracle(), check_gradients(), check_rescale_and_cluster(), check_fridge_sentence()}) {
    std::printf("[%s] %s: %s (%.2f s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
    ok = ok && r.passed;
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based activity recognition with natural-language explanations"};
  app.require_subcommand(1);
  Overrides ov;
  std::string out = "gnnxar_out";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", ov.config, "run configuration JSON; flags override it");
    sub->add_option("--seed", ov.seed, "run seed");
    sub->add_option("--out", out, "output directory")->capture_default_str();
  };

  auto* prepare = app.add_subcommand("prepare", "raw CASAS log -> labelled windows");
  std::string log;
  std::optional<std::string> spec;
  common(prepare);
  prepare->add_option("--log", log, "raw sensor log")->required();
  prepare->add_option("--spec", spec, "dataset spec JSON (sensors, drops, merges)");
  prepare->add_option("--window-secs", ov.window_secs, "window length in seconds");
  prepare->add_option("--overlap", ov.overlap, "window overlap in [0, 1)");

  auto* train = app.add_subcommand("train", "train the classifier and report test metrics");
  std::optional<std::string> windows;
  bool synthetic = false;
  common(train);
  train->add_option("--windows", windows, "windows.json from prepare");
  train->add_flag("--synthetic", synthetic, "use the built-in synthetic generator");
  train->add_option("--synthetic-per-class", ov.synthetic_per_class, "synthetic windows per class");
  train->add_option("--synthetic-noise", ov.synthetic_noise, "synthetic noise fraction");
  train->add_option("--lr", ov.lr, "Adam learning rate");
  train->add_option("--epochs", ov.epochs, "maximum epochs");
  train->add_option("--patience", ov.patience, "early stopping patience");
  train->add_option("--batch", ov.batch, "batch size");
  train->add_option("--embed-dim", ov.embed_dim, "sensor embedding size");
  train->add_option("--hidden-dim", ov.hidden_dim, "classifier hidden size");

  std::string checkpoint, windows_req;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "metrics of a checkpoint on a split");
  common(evaluate_cmd);
  evaluate_cmd->add_option("--checkpoint", checkpoint)->required();
  evaluate_cmd->add_option("--windows", windows_req)->required();
  evaluate_cmd->add_option("--subset", ov.subset, "test | validation | train | all");

  auto* explain_cmd = app.add_subcommand("explain", "explain predictions in natural language");
  common(explain_cmd);
  explain_cmd->add_option("--checkpoint", checkpoint)->required();
  explain_cmd->add_option("--windows", windows_req)->required();
  explain_cmd->add_option("--subset", ov.subset, "test | validation | train | all");
  explain_cmd->add_flag("--correct-only", ov.correct_only, "only correctly classified windows");
  explain_cmd->add_option("--per-class", ov.per_class, "sample at most N windows per class");
  explain_cmd->add_option("--class", ov.class_filter, "only this class");
  explain_cmd->add_flag("--dump-graphs", ov.dump_graphs, "write a DOT file per window");
  explain_cmd->add_option("--runs", ov.runs, "explainer runs to average");
  explain_cmd->add_option("--mask-epochs", ov.mask_epochs, "mask optimisation epochs per run");
  explain_cmd->add_option("--entropy-reduction", ov.entropy_reduction, "mean | sum");

  auto* pairs_cmd = app.add_subcommand("export-pairs", "pair two explanation sets for judging");
  std::string side_a, side_b;
  std::size_t pairs_per_class = 30;
  common(pairs_cmd);
  pairs_cmd->add_option("--a", side_a, "explanations.jsonl of system A")->required();
  pairs_cmd->add_option("--b", side_b, "explanations.jsonl of system B")->required();
  pairs_cmd->add_option("--per-class", pairs_per_class, "windows per class")->capture_default_str();

  auto* self = app.add_subcommand("selfcheck", "gradient checks and graph oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (self->parsed()) return cmd_selfcheck();
    const RunConfig cfg = ov.resolve();
    fs::create_directories(out);
    if (prepare->parsed()) return cmd_prepare(log, spec, out, cfg);
    if (train->parsed()) return cmd_train(windows, synthetic, out, cfg);
    if (evaluate_cmd->parsed()) return cmd_evaluate(checkpoint, windows_req, out, cfg);
    if (explain_cmd->parsed()) return cmd_explain(checkpoint, windows_req, out, cfg);
    if (pairs_cmd->parsed()) return cmd_export_pairs(side_a, side_b, pairs_per_class, out, cfg);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  }
  return 1;
}
