#pragma once

// End-to-end steps shared by the command-line tool and the acceptance suite:
// raw log -> corpus, corpus -> graphs -> trained checkpoint, evaluation,
// explanation and pair export.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <random>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gnnxar/explain.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/ingest.hpp"
#include "gnnxar/io.hpp"
#include "gnnxar/model.hpp"
#include "gnnxar/narrate.hpp"
#include "gnnxar/parallel.hpp"
#include "gnnxar/synthetic.hpp"
#include "gnnxar/train.hpp"

namespace gnnxar {

using io::json;

struct RunConfig {
  SegmentConfig segment;  // 360 s, 80 % overlap
  SplitSpec split;        // 70 / 20 / 10
  TrainConfig train;
  ModelConfig model;      // num_classes / num_sensors filled from data
  ExplainConfig explain;
  SyntheticConfig synthetic;
  std::uint64_t seed = 0;

  // Explanation selection.
  std::string subset = "test";  // test | validation | train | all
  bool correct_only = false;
  std::size_t per_class = 0;  // 0 = no cap
  std::string class_filter;
  bool dump_graphs = false;

  // Every seeded component derives from the one run seed.
  void apply_seed() {
    split.seed = seed;
    train.seed = seed;
    explain.base_seed = seed;
  }
};

inline json run_config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"window_secs", c.segment.window_secs},
          {"overlap", c.segment.overlap},
          {"split", {{"train", c.split.train}, {"test", c.split.test}, {"validation", c.split.validation}}},
          {"train",
           {{"learning_rate", c.train.learning_rate},
            {"patience", c.train.patience},
            {"max_epochs", c.train.max_epochs},
            {"batch_size", c.train.batch_size}}},
          {"model",
           {{"embed_dim", c.model.embed_dim},
            {"hidden_dim", c.model.hidden_dim},
            {"num_mp_rounds", c.model.num_mp_rounds},
            {"leaky_slope", c.model.leaky_slope}}},
          {"explain",
           {{"runs", c.explain.runs},
            {"epochs", c.explain.epochs},
            {"mask_lr", c.explain.mask_lr},
            {"size_coef", c.explain.size_coef},
            {"entropy_coef", c.explain.entropy_coef},
            {"entropy_reduction", c.explain.entropy_reduction == EntropyReduction::Mean ? "mean" : "sum"}}},
          {"synthetic",
           {{"num_classes", c.synthetic.num_classes},
            {"windows_per_class", c.synthetic.windows_per_class},
            {"noise_fraction", c.synthetic.noise_fraction}}},
          {"selection",
           {{"subset", c.subset},
            {"correct_only", c.correct_only},
            {"per_class", c.per_class},
            {"class", c.class_filter},
            {"dump_graphs", c.dump_graphs}}}};
}

// Overlays whatever keys are present in j onto base.
inline RunConfig run_config_from_json(const json& j, RunConfig c = {}) {
  return io::guarded("run config", [&] {
    auto get = [](const json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "seed", c.seed);
    get(j, "window_secs", c.segment.window_secs);
    get(j, "overlap", c.segment.overlap);
    if (j.contains("split")) {
      const auto& s = j["split"];
      get(s, "train", c.split.train);
      get(s, "test", c.split.test);
      get(s, "validation", c.split.validation);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      get(t, "learning_rate", c.train.learning_rate);
      get(t, "patience", c.train.patience);
      get(t, "max_epochs", c.train.max_epochs);
      get(t, "batch_size", c.train.batch_size);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      get(m, "embed_dim", c.model.embed_dim);
      get(m, "hidden_dim", c.model.hidden_dim);
      get(m, "num_mp_rounds", c.model.num_mp_rounds);
      get(m, "leaky_slope", c.model.leaky_slope);
    }
    if (j.contains("explain")) {
      const auto& e = j["explain"];
      get(e, "runs", c.explain.runs);
      get(e, "epochs", c.explain.epochs);
      get(e, "mask_lr", c.explain.mask_lr);
      get(e, "size_coef", c.explain.size_coef);
      get(e, "entropy_coef", c.explain.entropy_coef);
      if (e.contains("entropy_reduction")) {
        const auto r = e["entropy_reduction"].get<std::string>();
        if (r != "mean" && r != "sum") throw DataError("entropy_reduction must be 'mean' or 'sum'");
        c.explain.entropy_reduction = r == "mean" ? EntropyReduction::Mean : EntropyReduction::Sum;
      }
    }
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      get(s, "num_classes", c.synthetic.num_classes);
      get(s, "windows_per_class", c.synthetic.windows_per_class);
      get(s, "noise_fraction", c.synthetic.noise_fraction);
    }
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      get(s, "subset", c.subset);
      get(s, "correct_only", c.correct_only);
      get(s, "per_class", c.per_class);
      get(s, "class", c.class_filter);
      get(s, "dump_graphs", c.dump_graphs);
    }
    return c;
  });
}

// ---------------------------------------------------------------- prepare

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

struct PrepareReport {
  std::size_t lines = 0;
  std::size_t blank_or_nonbinary = 0;
  std::size_t binary_events = 0;
  std::vector<LineIssue> parse_errors;
  std::vector<std::string> label_warnings;
  std::size_t unknown_sensor_events = 0;
  std::vector<std::string> inferred_sensors;
  SegmentStats segments;
  std::map<std::string, std::size_t> dropped_by_class;
  std::map<std::string, std::size_t> merged_by_class;
  std::size_t empty_graph_windows = 0;
  std::map<std::string, std::size_t> kept_by_class;
};

inline json prepare_report_to_json(const PrepareReport& r) {
  json errors = json::array();
  for (const auto& e : r.parse_errors) errors.push_back({{"line", e.line}, {"error", e.message}});
  return {{"lines", r.lines},
          {"blank_or_nonbinary_lines", r.blank_or_nonbinary},
          {"binary_events", r.binary_events},
          {"parse_errors", errors},
          {"label_warnings", r.label_warnings},
          {"unknown_sensor_events", r.unknown_sensor_events},
          {"inferred_sensors", r.inferred_sensors},
          {"windows_considered", r.segments.considered},
          {"windows_empty", r.segments.empty},
          {"windows_unlabeled", r.segments.unlabeled},
          {"windows_dropped_by_class", r.dropped_by_class},
          {"windows_merged_by_class", r.merged_by_class},
          {"windows_without_graph_nodes", r.empty_graph_windows},
          {"windows_kept_by_class", r.kept_by_class}};
}

inline std::string display_name(const std::string& label, const io::DatasetConfig& cfg) {
  if (auto it = cfg.activity_names.find(label); it != cfg.activity_names.end()) return it->second;
  std::string out = label;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

// Would the window produce at least one event or state node?
inline bool has_graph_items(const Window& w, const SensorRegistry& reg) {
  for (const auto& e : w.events) {
    const std::size_t s = reg.require(e.sensor_id);
    if (reg[s].kind == SensorKind::Explicit || e.type == EventType::On) return true;
  }
  return false;
}

inline io::Corpus prepare_corpus(std::istream& log, const io::DatasetConfig& cfg, const SegmentConfig& seg,
                                 PrepareReport& report) {
  std::vector<MarkedEvent> marked;
  std::string line;
  std::set<std::string> unseen;
  while (std::getline(log, line)) {
    ++report.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      auto ev = parse_event_line(line, report.lines);
      if (!ev) {
        ++report.blank_or_nonbinary;
        continue;
      }
      if (!cfg.spec.sensor_registry.index_of(ev->event.sensor_id)) {
        if (!cfg.infer_sensors) {
          ++report.unknown_sensor_events;
          continue;
        }
        unseen.insert(ev->event.sensor_id);
      }
      ++report.binary_events;
      marked.push_back(std::move(*ev));
    } catch (const ParseError& e) {
      report.parse_errors.push_back({e.line(), e.what()});
    }
  }

  io::Corpus corpus;
  corpus.name = cfg.name;
  corpus.registry = cfg.spec.sensor_registry;
  for (const auto& id : unseen) {
    corpus.registry.add({id, infer_sensor_kind(id), ""});
    report.inferred_sensors.push_back(id);
  }

  enforce_total_order(marked);
  auto labelled = label_stream(marked);
  report.label_warnings = std::move(labelled.warnings);
  auto windows = segment(labelled.events, seg, &report.segments);

  for (const auto& w : windows) {
    if (cfg.spec.dropped_classes.count(w.label)) ++report.dropped_by_class[w.label];
    else if (cfg.spec.merged_classes.count(w.label)) ++report.merged_by_class[w.label];
  }
  windows = apply_dataset_spec(std::move(windows), cfg.spec);

  std::vector<char> usable(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) { usable[i] = has_graph_items(windows[i], corpus.registry); });
  std::set<std::string> labels;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto& w = windows[i];
    if (!usable[i]) {
      ++report.empty_graph_windows;
      continue;
    }
    labels.insert(w.label);
    ++report.kept_by_class[w.label];
    corpus.windows.push_back(std::move(w));
  }
  corpus.class_names.assign(labels.begin(), labels.end());

  for (const auto& s : corpus.registry.sensors()) {
    auto it = cfg.phrase_overrides.find(s.id);
    corpus.phrases.sensors[s.id] = it != cfg.phrase_overrides.end() ? it->second : PhraseMap::defaults_for(s);
  }
  for (const auto& c : corpus.class_names) corpus.phrases.activities.push_back(display_name(c, cfg));
  corpus.phrases.resident = cfg.resident;
  corpus.phrases.pronoun = cfg.pronoun;
  return corpus;
}

inline io::Corpus synthetic_corpus(const SyntheticConfig& cfg) {
  auto ds = make_synthetic_dataset(cfg);
  io::Corpus c;
  c.name = "synthetic";
  c.registry = ds.registry;
  c.class_names = ds.class_names;
  c.phrases = PhraseMap::from_registry(ds.registry, ds.display_names);
  c.phrases.resident = "Bob";
  c.phrases.pronoun = "he";
  c.windows = std::move(ds.windows);
  return c;
}

// ---------------------------------------------------------------- graphs

// Featurized graphs, labelled with class indices, built in parallel.
inline std::vector<ActivityGraph> build_graphs(const io::Corpus& c) {
  std::vector<ActivityGraph> out(c.windows.size());
  parallel_for(c.windows.size(), [&](std::size_t i) {
    out[i] = featurize(build_graph(c.windows[i], c.registry, c.label_index(c.windows[i].label)));
  });
  return out;
}

inline std::vector<int> labels_of(const std::vector<ActivityGraph>& graphs) {
  std::vector<int> out;
  out.reserve(graphs.size());
  for (const auto& g : graphs) out.push_back(g.label);
  return out;
}

inline std::vector<ActivityGraph> pick(const std::vector<ActivityGraph>& graphs, const std::vector<std::size_t>& idx) {
  std::vector<ActivityGraph> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(graphs[i]);
  return out;
}

// ---------------------------------------------------------------- train

struct TrainOutcome {
  io::Checkpoint checkpoint;
  TrainResult result;
  SplitResult split;
  MetricsReport test_metrics;
  MetricsReport validation_metrics;
};

inline ModelConfig resolved_model_config(const RunConfig& cfg, const io::Corpus& c) {
  ModelConfig m = cfg.model;
  m.num_classes = c.class_names.size();
  m.num_sensors = c.registry.size();
  m.validate();
  return m;
}

inline TrainOutcome train_corpus(const io::Corpus& corpus, const std::vector<ActivityGraph>& graphs, RunConfig cfg,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.apply_seed();
  if (graphs.empty()) throw DataError("no windows to train on");
  TrainOutcome out;
  out.split = split(labels_of(graphs), cfg.split);
  if (out.split.validation.empty()) throw DataError("validation split is empty");
  const auto train_set = pick(graphs, out.split.train);
  const auto val_set = pick(graphs, out.split.validation);
  const auto test_set = pick(graphs, out.split.test);

  const ModelConfig mc = resolved_model_config(cfg, corpus);
  GnnModel model = GnnModel::create(mc, cfg.seed);
  out.result = train_loop(model, std::span<const ActivityGraph>(train_set), std::span<const ActivityGraph>(val_set),
                          cfg.train, on_epoch);
  if (!test_set.empty()) out.test_metrics = evaluate(model, std::span<const ActivityGraph>(test_set), mc.num_classes);
  out.validation_metrics = evaluate(model, std::span<const ActivityGraph>(val_set), mc.num_classes);

  auto& ck = out.checkpoint;
  ck.config = mc;
  ck.params = model.params().clone(false);
  ck.class_names = corpus.class_names;
  for (const auto& s : corpus.registry.sensors()) ck.sensor_ids.push_back(s.id);
  ck.split = cfg.split;
  ck.seed = cfg.seed;
  ck.extra = {{"best_epoch", out.result.best_epoch},
              {"best_val_loss", out.result.best_val_loss},
              {"epochs_run", out.result.history.size()},
              {"early_stopped", out.result.early_stopped},
              {"run_config", run_config_to_json(cfg)}};
  return out;
}

inline void check_compatible(const io::Checkpoint& ck, const io::Corpus& c) {
  std::vector<std::string> ids;
  for (const auto& s : c.registry.sensors()) ids.push_back(s.id);
  if (ids != ck.sensor_ids) throw DataError("checkpoint sensor registry does not match the windows file");
  if (c.class_names != ck.class_names) throw DataError("checkpoint classes do not match the windows file");
}

// Indices of the requested subset, recomputed from the checkpoint's split.
inline std::vector<std::size_t> subset_indices(const std::vector<ActivityGraph>& graphs, const SplitSpec& spec,
                                               const std::string& subset) {
  if (subset == "all") {
    std::vector<std::size_t> all(graphs.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto s = split(labels_of(graphs), spec);
  if (subset == "test") return s.test;
  if (subset == "validation") return s.validation;
  if (subset == "train") return s.train;
  throw DataError("unknown subset '" + subset + "' (expected test, validation, train or all)");
}

// ---------------------------------------------------------------- explain

struct ExplainedWindow {
  std::size_t graph_index = 0;
  ExplanationResult result;
  ExplanationRecord record;
};

struct ExplainSelection {
  std::vector<std::size_t> indices;
  std::vector<std::string> warnings;
};

// Applies the class / correct-only / per-class filters to candidate indices.
inline ExplainSelection select_windows(const GnnModel& model, const std::vector<ActivityGraph>& graphs,
                                       const io::Corpus& corpus, std::vector<std::size_t> candidates,
                                       const RunConfig& cfg) {
  ExplainSelection sel;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i : candidates) {
    const auto& g = graphs[i];
    if (!cfg.class_filter.empty() && corpus.class_names[static_cast<std::size_t>(g.label)] != cfg.class_filter) continue;
    if (cfg.correct_only && model.predict(g) != static_cast<std::size_t>(g.label)) continue;
    by_class[g.label].push_back(i);
  }
  std::mt19937_64 rng(cfg.seed ^ 0x5EEDULL);
  for (auto& [label, idx] : by_class) {
    if (cfg.per_class > 0 && idx.size() > cfg.per_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(cfg.per_class);
      std::sort(idx.begin(), idx.end());
    } else if (cfg.per_class > 0 && idx.size() < cfg.per_class) {
      sel.warnings.push_back("class " + corpus.class_names[static_cast<std::size_t>(label)] + ": only " +
                             std::to_string(idx.size()) + " eligible windows");
    }
    sel.indices.insert(sel.indices.end(), idx.begin(), idx.end());
  }
  std::sort(sel.indices.begin(), sel.indices.end());
  if (sel.indices.empty()) sel.warnings.push_back("selection matched no windows");
  return sel;
}

inline std::vector<ExplainedWindow> explain_windows(const GnnModel& model, const std::vector<ActivityGraph>& graphs,
                                                    const io::Corpus& corpus, const std::vector<std::size_t>& indices,
                                                    const ExplainConfig& cfg) {
  const GnnModel frozen = frozen_view(model);
  std::vector<ExplainedWindow> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t k) {
    const auto& g = graphs[indices[k]];
    auto& e = out[k];
    e.graph_index = indices[k];
    e.result = explain(frozen, g, cfg);
    const auto path = longest_path(e.result.subgraph, g);
    const auto text = render(path, g, corpus.registry, corpus.phrases, e.result.subgraph.predicted_class);
    e.record.window_id = g.window_id;
    e.record.predicted = corpus.class_names.at(e.result.subgraph.predicted_class);
    e.record.truth = corpus.class_names.at(static_cast<std::size_t>(g.label));
    e.record.text = text.text;
    e.record.path = text.path;
  });
  return out;
}

}  // namespace gnnxar
