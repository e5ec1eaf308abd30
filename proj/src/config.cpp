#include "ctcdro/config.hpp"

#include <fstream>
#include <set>

#include "ctcdro/errors.hpp"

namespace ctcdro {

namespace {

using json = nlohmann::json;

// Strict reader: every key of `j` must be consumed by a get() call before
// finish(), otherwise the document has a typo or a stale field.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigInvalid(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigInvalid(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    get(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigInvalid(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void version() {
    int v = kSchemaVersion;
    const bool present = j_.contains("version");
    get("version", v);
    if (present && v != kSchemaVersion)
      throw ConfigInvalid(where_ + ": unsupported version " + std::to_string(v));
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigInvalid(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigInvalid("unknown optimizer '" + s + "'");
}

}  // namespace

nlohmann::ordered_json to_json(const GroupSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["utterance_count"] = s.utterance_count;
  j["vocab_size"] = s.vocab_size;
  j["target_min"] = s.target_min;
  j["target_max"] = s.target_max;
  j["frames_per_label"] = s.frames_per_label;
  j["jitter"] = s.jitter;
  j["noise_sigma"] = s.noise_sigma;
  j["seconds_per_frame"] = s.seconds_per_frame;
  return j;
}

nlohmann::ordered_json to_json(const GenOptions& o) {
  nlohmann::ordered_json j;
  j["gap_prob"] = o.gap_prob;
  j["disjoint_vocab"] = o.disjoint_vocab;
  j["embedding_scale"] = o.embedding_scale;
  return j;
}

GroupSpec group_spec_from_json(const nlohmann::json& j) {
  GroupSpec s;
  Reader r(j, "group");
  r.get("name", s.name);
  r.get("utterance_count", s.utterance_count);
  r.get("vocab_size", s.vocab_size);
  r.get("target_min", s.target_min);
  r.get("target_max", s.target_max);
  r.get("frames_per_label", s.frames_per_label);
  r.get("jitter", s.jitter);
  r.get("noise_sigma", s.noise_sigma);
  r.get("seconds_per_frame", s.seconds_per_frame);
  r.finish();
  return s;
}

GenOptions gen_options_from_json(const nlohmann::json& j) {
  GenOptions o;
  Reader r(j, "options");
  r.get("gap_prob", o.gap_prob);
  r.get("disjoint_vocab", o.disjoint_vocab);
  r.get("embedding_scale", o.embedding_scale);
  r.finish();
  return o;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["version"] = c.version;
  j["mode"] = to_string(c.mode);
  j["eta_theta"] = c.eta_theta;
  j["eta_q"] = c.dro.eta_q;
  j["alpha"] = c.dro.alpha;
  j["batch_duration"] = c.batch_duration;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["accumulate"] = c.accumulate;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["norm"] = to_string(c.norm);
  j["lid_prefix"] = c.lid_prefix;
  j["group_sampling"] = to_string(c.group_sampling);
  j["with_replacement"] = c.with_replacement;
  j["context"] = c.context;
  j["hidden"] = c.hidden;
  j["optimizer"] = c.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
  j["selector"] = to_string(c.selector);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  Reader r(j, "config");
  r.version();
  r.get_enum("mode", c.mode, parse_mode);
  r.get("eta_theta", c.eta_theta);
  r.get("eta_q", c.dro.eta_q);
  r.get("alpha", c.dro.alpha);
  r.get("batch_duration", c.batch_duration);
  r.get("batch_size", c.batch_size);
  r.get("steps", c.steps);
  r.get("accumulate", c.accumulate);
  r.get("eval_every", c.eval_every);
  r.get("seed", c.seed);
  r.get_enum("norm", c.norm, parse_loss_norm);
  r.get("lid_prefix", c.lid_prefix);
  r.get_enum("group_sampling", c.group_sampling, parse_group_sampling);
  r.get("with_replacement", c.with_replacement);
  r.get("context", c.context);
  r.get("hidden", c.hidden);
  r.get_enum("optimizer", c.optimizer, parse_optimizer);
  r.get_enum("selector", c.selector, parse_selector);
  r.finish();
  validate(c);
  return c;
}

nlohmann::ordered_json to_json(const CorpusSpec& s) {
  nlohmann::ordered_json j;
  j["version"] = kSchemaVersion;
  j["seed"] = s.seed;
  j["feature_dim"] = s.feature_dim;
  j["options"] = to_json(s.options);
  j["split"] = s.split;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : s.groups) j["groups"].push_back(to_json(g));
  return j;
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  Reader r(j, "corpus spec");
  r.version();
  r.get("seed", s.seed);
  r.get("feature_dim", s.feature_dim);
  r.get("split", s.split);
  if (const json* o = r.child("options")) s.options = gen_options_from_json(*o);
  const json* groups = r.child("groups");
  if (!groups || !groups->is_array() || groups->empty())
    throw ConfigInvalid("corpus spec: 'groups' must be a nonempty array");
  for (const auto& g : *groups) s.groups.push_back(group_spec_from_json(g));
  r.finish();
  return s;
}

ExperimentManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentManifest m;
  Reader r(j, "manifest");
  r.version();
  std::string corpus, out;
  r.get("corpus", corpus);
  r.get("output_root", out);
  r.get("seeds", m.seeds);
  if (corpus.empty()) throw ConfigInvalid("manifest: 'corpus' is required");
  if (out.empty()) throw ConfigInvalid("manifest: 'output_root' is required");
  if (m.seeds.empty()) throw ConfigInvalid("manifest: 'seeds' must be nonempty");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  m.corpus = resolve(corpus);
  m.output_root = resolve(out);
  const json* variants = r.child("variants");
  if (!variants || !variants->is_array() || variants->empty())
    throw ConfigInvalid("manifest: 'variants' must be a nonempty array");
  std::set<std::string> names;
  for (const auto& v : *variants) {
    Variant var;
    Reader vr(v, "variant");
    vr.get("name", var.name);
    const json* cfg = vr.child("config");
    vr.finish();
    if (var.name.empty()) throw ConfigInvalid("manifest: every variant needs a name");
    if (!names.insert(var.name).second) throw ConfigInvalid("manifest: duplicate variant name '" + var.name + "'");
    var.config = cfg ? train_config_from_json(*cfg) : TrainConfig{};
    m.variants.push_back(std::move(var));
  }
  r.finish();
  return m;
}

nlohmann::json read_json_file(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigInvalid("cannot read " + file.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(file.string() + ": " + e.what());
  }
}

}  // namespace ctcdro
