#pragma once

// On-disk formats: dataset spec, prepared windows, checkpoints, graph dumps,
// explanation records and CSV reports. Everything JSON carries a
// "format_version" so readers can refuse files they do not understand.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnxar/error.hpp"
#include "gnnxar/explain.hpp"
#include "gnnxar/graph.hpp"
#include "gnnxar/ingest.hpp"
#include "gnnxar/model.hpp"
#include "gnnxar/narrate.hpp"
#include "gnnxar/train.hpp"

namespace gnnxar::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + p.string() + "'");
}

inline json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline void check_version(const json& j, const std::string& what, const char* kind) {
  if (!j.is_object()) throw DataError(what + ": expected a JSON object");
  if (j.value("kind", std::string()) != kind) {
    throw DataError(what + ": expected kind '" + kind + "', found '" + j.value("kind", std::string("?")) + "'");
  }
  if (j.value("format_version", 0) != kFormatVersion) {
    throw DataError(what + ": unsupported format_version " + j.value("format_version", json()).dump());
  }
}

// Wraps nlohmann access errors (missing keys, wrong types) as DataError.
template <class F>
auto guarded(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------- dataset spec

struct DatasetConfig {
  std::string name;
  DatasetSpec spec;
  bool infer_sensors = true;  // sensors missing from the registry are added as they appear
  std::map<std::string, SensorPhrases> phrase_overrides;
  std::map<std::string, std::string> activity_names;  // raw label -> display name
  std::string resident = "the resident";
  std::string pronoun = "they";
};

inline DatasetConfig dataset_config_from_json(const json& j, const std::string& what = "dataset spec") {
  return guarded(what, [&] {
    DatasetConfig c;
    c.name = j.value("name", std::string());
    c.infer_sensors = j.value("infer_sensors", true);
    c.resident = j.value("resident", c.resident);
    c.pronoun = j.value("pronoun", c.pronoun);
    for (const auto& s : j.value("sensors", json::array())) {
      SensorMeta m;
      m.id = s.at("id").get<std::string>();
      m.kind = s.contains("kind") ? parse_sensor_kind(s.at("kind").get<std::string>()) : infer_sensor_kind(m.id);
      m.location_phrase = s.value("phrase", std::string());
      SensorPhrases p = PhraseMap::defaults_for(m);
      p.approach = s.value("approach", p.approach);
      p.open = s.value("open", p.open);
      p.close = s.value("close", p.close);
      c.phrase_overrides[m.id] = p;
      c.spec.sensor_registry.add(std::move(m));
    }
    for (const auto& d : j.value("drop", json::array())) c.spec.dropped_classes.insert(d.get<std::string>());
    const json merge = j.value("merge", json::object()), names = j.value("activities", json::object());
    for (const auto& [from, to] : merge.items()) c.spec.merged_classes[from] = to.get<std::string>();
    for (const auto& [raw, shown] : names.items())
      c.activity_names[raw] = shown.get<std::string>();
    c.spec.validate();
    return c;
  });
}

inline DatasetConfig load_dataset_config(const std::filesystem::path& p) {
  return dataset_config_from_json(read_json(p), p.string());
}

// ---------------------------------------------------------------- corpus

// Prepared windows plus everything downstream commands need to interpret
// them: the sensor registry, class list and phrase templates.
struct Corpus {
  std::string name;
  SensorRegistry registry;
  std::vector<std::string> class_names;
  PhraseMap phrases;
  std::vector<Window> windows;

  int label_index(const std::string& label) const {
    auto it = std::find(class_names.begin(), class_names.end(), label);
    if (it == class_names.end()) throw DataError("unknown class label '" + label + "'");
    return static_cast<int>(it - class_names.begin());
  }
};

inline json registry_to_json(const SensorRegistry& r) {
  json out = json::array();
  for (const auto& s : r.sensors()) out.push_back({{"id", s.id}, {"kind", to_string(s.kind)}, {"phrase", s.location_phrase}});
  return out;
}

inline SensorRegistry registry_from_json(const json& j) {
  SensorRegistry r;
  for (const auto& s : j)
    r.add({s.at("id").get<std::string>(), parse_sensor_kind(s.at("kind").get<std::string>()),
           s.value("phrase", std::string())});
  return r;
}

inline json corpus_to_json(const Corpus& c) {
  json j;
  j["kind"] = "gnnxar.windows";
  j["format_version"] = kFormatVersion;
  j["name"] = c.name;
  j["sensors"] = registry_to_json(c.registry);
  j["classes"] = c.class_names;
  j["activity_names"] = c.phrases.activities;
  j["resident"] = c.phrases.resident;
  j["pronoun"] = c.phrases.pronoun;
  json phrases = json::object();
  for (const auto& [id, p] : c.phrases.sensors) phrases[id] = {{"approach", p.approach}, {"open", p.open}, {"close", p.close}};
  j["phrases"] = phrases;
  json windows = json::array();
  for (const auto& w : c.windows) {
    json ev = json::array();
    for (const auto& e : w.events) {
      json row = {e.sensor_id, to_string(e.type), e.timestamp};
      if (e.activity) row.push_back(*e.activity);
      ev.push_back(std::move(row));
    }
    windows.push_back({{"id", w.id}, {"label", w.label}, {"start", w.start_ts}, {"end", w.end_ts}, {"events", ev}});
  }
  j["windows"] = std::move(windows);
  return j;
}

inline Corpus corpus_from_json(const json& j, const std::string& what = "windows file") {
  check_version(j, what, "gnnxar.windows");
  return guarded(what, [&] {
    Corpus c;
    c.name = j.value("name", std::string());
    c.registry = registry_from_json(j.at("sensors"));
    c.class_names = j.at("classes").get<std::vector<std::string>>();
    c.phrases.activities = j.at("activity_names").get<std::vector<std::string>>();
    c.phrases.resident = j.value("resident", c.phrases.resident);
    c.phrases.pronoun = j.value("pronoun", c.phrases.pronoun);
    for (const auto& [id, p] : j.at("phrases").items())
      c.phrases.sensors[id] = {p.at("approach").get<std::string>(), p.at("open").get<std::string>(),
                               p.at("close").get<std::string>()};
    for (const auto& wj : j.at("windows")) {
      Window w;
      w.id = wj.at("id").get<std::size_t>();
      w.label = wj.at("label").get<std::string>();
      w.start_ts = wj.at("start").get<double>();
      w.end_ts = wj.at("end").get<double>();
      for (const auto& e : wj.at("events")) {
        SensorEvent ev;
        ev.sensor_id = e.at(0).get<std::string>();
        const auto t = e.at(1).get<std::string>();
        if (t != "ON" && t != "OFF") throw DataError(what + ": bad event type '" + t + "'");
        ev.type = t == "ON" ? EventType::On : EventType::Off;
        ev.timestamp = e.at(2).get<double>();
        if (e.size() > 3) ev.activity = e.at(3).get<std::string>();
        w.events.push_back(std::move(ev));
      }
      c.windows.push_back(std::move(w));
    }
    return c;
  });
}

inline void save_corpus(const std::filesystem::path& p, const Corpus& c) { write_text(p, corpus_to_json(c).dump() + "\n"); }
inline Corpus load_corpus(const std::filesystem::path& p) { return corpus_from_json(read_json(p), p.string()); }

// ---------------------------------------------------------------- checkpoints

inline json model_config_to_json(const ModelConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"hidden_dim", c.hidden_dim},   {"num_mp_rounds", c.num_mp_rounds},
          {"num_classes", c.num_classes}, {"num_sensors", c.num_sensors}, {"leaky_slope", c.leaky_slope}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_mp_rounds = j.at("num_mp_rounds").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.num_sensors = j.at("num_sensors").get<std::size_t>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<std::string> class_names;
  std::vector<std::string> sensor_ids;
  SplitSpec split;
  std::uint64_t seed = 0;
  json extra = json::object();  // free-form provenance (train config, best epoch)
};

inline json checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["kind"] = "gnnxar.checkpoint";
  j["format_version"] = kFormatVersion;
  j["seed"] = c.seed;
  j["config"] = model_config_to_json(c.config);
  j["classes"] = c.class_names;
  j["sensors"] = c.sensor_ids;
  j["split"] = {{"train", c.split.train}, {"test", c.split.test}, {"validation", c.split.validation}, {"seed", c.split.seed}};
  j["extra"] = c.extra;
  json params = json::object();
  for (const auto& p : c.params.named()) {
    params[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}},
                      {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}};
  }
  j["params"] = std::move(params);
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j, const std::string& what = "checkpoint") {
  check_version(j, what, "gnnxar.checkpoint");
  return guarded(what, [&] {
    Checkpoint c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config = model_config_from_json(j.at("config"));
    c.class_names = j.at("classes").get<std::vector<std::string>>();
    c.sensor_ids = j.at("sensors").get<std::vector<std::string>>();
    const auto& s = j.at("split");
    c.split = {s.at("train").get<double>(), s.at("test").get<double>(), s.at("validation").get<double>(),
               s.at("seed").get<std::uint64_t>()};
    c.extra = j.value("extra", json::object());
    auto names = c.params.named();
    auto slots = c.params.mutable_list();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& pj = j.at("params").at(names[i].name);
      const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw DataError(what + ": parameter '" + names[i].name + "' must be 2-D");
      *slots[i] = Tensor({shape[0], shape[1]}, pj.at("values").get<std::vector<double>>());
    }
    c.config.validate();
    c.params.check_shapes(c.config);
    return c;
  });
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& c) { write_json(p, checkpoint_to_json(c)); }
inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return checkpoint_from_json(read_json(p), p.string()); }

// ---------------------------------------------------------------- graphs

inline json graph_to_json(const ActivityGraph& g, const SensorRegistry& reg) {
  json nodes = json::array(), arcs = json::array();
  for (const auto& n : g.nodes) {
    json nj = {{"id", n.id}, {"kind", to_string(n.kind)}, {"sensor", reg[n.sensor].id}, {"sensor_index", n.sensor}};
    if (n.event_type) nj["event_type"] = to_string(*n.event_type);
    if (n.kind != NodeKind::Super) nj["anchor_ts"] = n.anchor_ts;
    nj["duration"] = n.duration;
    nj["duration_feature"] = n.duration_feature;
    nodes.push_back(std::move(nj));
  }
  for (const auto& a : g.arcs)
    arcs.push_back({{"src", a.src}, {"dst", a.dst}, {"kind", to_string(a.kind)}, {"delta_t", a.delta_t}, {"feature", a.feature}});
  return {{"kind", "gnnxar.graph"},
          {"format_version", kFormatVersion},
          {"window_id", g.window_id},
          {"label", g.label},
          {"num_sensors", g.num_sensors},
          {"feature_transform", g.feature_transform},
          {"nodes", nodes},
          {"arcs", arcs}};
}

// DOT text; important nodes/arcs (if given) are drawn bold.
inline std::string graph_to_dot(const ActivityGraph& g, const SensorRegistry& reg,
                                const ExplanationSubgraph* sub = nullptr) {
  std::set<std::size_t> hot_nodes, hot_arcs;
  if (sub) {
    for (const auto& [id, s] : sub->nodes) hot_nodes.insert(id);
    for (const auto& [id, s] : sub->arcs) hot_arcs.insert(id);
  }
  std::ostringstream out;
  out << "digraph window_" << g.window_id << " {\n  rankdir=LR;\n";
  for (const auto& n : g.nodes) {
    std::string label = reg[n.sensor].id;
    if (n.kind == NodeKind::Event) label += std::string(" ") + to_string(*n.event_type);
    if (n.kind == NodeKind::State) label += " state";
    if (n.kind == NodeKind::Super) label = "SN " + label;
    out << "  n" << n.id << " [label=\"" << label << "\"" << (n.kind == NodeKind::Super ? ", shape=box" : "")
        << (hot_nodes.count(n.id) ? ", style=bold, color=red" : "") << "];\n";
  }
  for (std::size_t i = 0; i < g.arcs.size(); ++i) {
    const auto& a = g.arcs[i];
    out << "  n" << a.src << " -> n" << a.dst;
    if (a.kind == ArcKind::ToSuper) {
      out << " [style=dashed]";
    } else {
      out << " [label=\"" << std::setprecision(4) << a.delta_t << "s\"" << (hot_arcs.count(i) ? ", style=bold, color=red" : "")
          << "]";
    }
    out << ";\n";
  }
  out << "}\n";
  return out.str();
}

// ---------------------------------------------------------------- explanations

inline json explanation_record_to_json(const ExplanationRecord& r) {
  return {{"window_id", r.window_id}, {"predicted", r.predicted}, {"true", r.truth}, {"text", r.text}, {"path", r.path}};
}

inline ExplanationRecord explanation_record_from_json(const json& j) {
  ExplanationRecord r;
  r.window_id = j.at("window_id").get<std::size_t>();
  r.predicted = j.at("predicted").get<std::string>();
  r.truth = j.at("true").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.path = j.at("path").get<std::vector<std::size_t>>();
  return r;
}

inline json subgraph_to_json(std::size_t window_id, const ExplanationResult& r, const ActivityGraph& g,
                             const SensorRegistry& reg, const ExplainConfig& cfg) {
  json nodes = json::array(), arcs = json::array();
  for (const auto& [id, s] : r.subgraph.nodes) nodes.push_back({{"id", id}, {"sensor", reg[g.nodes[id].sensor].id}, {"score", s}});
  for (const auto& [id, s] : r.subgraph.arcs) arcs.push_back({{"src", g.arcs[id].src}, {"dst", g.arcs[id].dst}, {"score", s}});
  return {{"window_id", window_id},
          {"predicted_class", r.subgraph.predicted_class},
          {"cluster_boundary", r.subgraph.cluster_boundary},
          {"degenerate_cluster", r.subgraph.degenerate_cluster},
          {"node_fallback", r.subgraph.node_fallback},
          {"arc_fallback", r.subgraph.arc_fallback},
          {"rescale_factor", r.scores.rescale_factor},
          {"rescale_skipped", r.scores.rescale_skipped},
          {"nodes", nodes},
          {"arcs", arcs},
          {"config",
           {{"runs", cfg.runs},
            {"epochs", cfg.epochs},
            {"mask_lr", cfg.mask_lr},
            {"size_coef", cfg.size_coef},
            {"entropy_coef", cfg.entropy_coef},
            {"entropy_reduction", cfg.entropy_reduction == EntropyReduction::Mean ? "mean" : "sum"},
            {"base_seed", cfg.base_seed}}},
          {"seeds", r.seeds}};
}

inline json pair_to_json(const ExplanationPair& p) {
  return {{"window_id", p.window_id},
          {"true_label", p.true_label},
          {"explanation_a", p.explanation_a},
          {"explanation_b", p.explanation_b},
          {"presented_first", p.a_first ? "a" : "b"}};
}

inline std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::istringstream in(read_text(p));
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(p.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& p, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text(p, text);
}

// ---------------------------------------------------------------- CSV

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed << v;
  return ss.str();
}

inline std::string metrics_csv(const MetricsReport& r, const std::vector<std::string>& names) {
  std::string out = "class,precision,recall,f1,support\n";
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    out += csv_field(names.at(c)) + "," + fmt(r.precision[c]) + "," + fmt(r.recall[c]) + "," + fmt(r.f1[c]) + "," +
           std::to_string(r.support[c]) + "\n";
  }
  out += "weighted_avg,,," + fmt(r.weighted_f1) + "," + std::to_string(r.total) + "\n";
  out += "accuracy,,," + fmt(r.accuracy) + "," + std::to_string(r.total) + "\n";
  return out;
}

// Rows are ground truth, columns predictions.
inline std::string confusion_csv(const MetricsReport& r, const std::vector<std::string>& names) {
  std::string out = "true\\predicted";
  for (std::size_t c = 0; c < r.num_classes; ++c) out += "," + csv_field(names.at(c));
  out += "\n";
  for (std::size_t t = 0; t < r.num_classes; ++t) {
    out += csv_field(names.at(t));
    for (std::size_t p = 0; p < r.num_classes; ++p) out += "," + std::to_string(r.confusion[t][p]);
    out += "\n";
  }
  return out;
}

inline std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n" << std::setprecision(10);
  for (const auto& r : h) out << r.epoch << "," << r.train_loss << "," << r.val_loss << "\n";
  return out.str();
}

}  // namespace gnnxar::io
