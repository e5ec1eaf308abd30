#include "ctcdro/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ctcdro/config.hpp"
#include "ctcdro/errors.hpp"

namespace ctcdro {

namespace {

double standard_normal(Rng& rng) {
  // Box-Muller on portable uniforms; the second variate is discarded so each
  // draw consumes a fixed two words.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t run_length(const GroupSpec& spec, Rng& rng) {
  const double j = spec.jitter;
  const double scale = 1.0 - j + 2.0 * j * uniform01(rng);
  return static_cast<std::size_t>(std::max(1.0, std::ceil(spec.frames_per_label * scale)));
}

// Distribution of max(1, ceil(x)) for x ~ U[lo, hi]: returns E[C] and E[C^2].
std::pair<double, double> run_length_moments(const GroupSpec& spec) {
  const double lo = spec.frames_per_label * (1.0 - spec.jitter);
  const double hi = spec.frames_per_label * (1.0 + spec.jitter);
  auto len = [](double c) { return std::max(1.0, std::ceil(c)); };
  if (hi - lo < 1e-15) {
    const double c = len(lo);
    return {c, c * c};
  }
  double m1 = 0.0, m2 = 0.0;
  for (double k = std::ceil(lo); k - 1.0 < hi; k += 1.0) {
    const double a = std::max(lo, k - 1.0), b = std::min(hi, k);
    if (b <= a) continue;
    const double w = (b - a) / (hi - lo);
    const double c = std::max(1.0, k);
    m1 += w * c;
    m2 += w * c * c;
  }
  return {m1, m2};
}

void write_le(std::ostream& os, const void* data, std::size_t bytes) {
  static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

const std::vector<std::size_t>& Corpus::split_ids(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

void validate(const GroupSpec& s) {
  auto fail = [&](const std::string& why) { throw InvalidSpec("group '" + s.name + "': " + why); };
  if (s.utterance_count == 0) fail("utterance_count must be positive");
  if (s.vocab_size < 1) fail("vocab_size must be at least 1");
  if (s.target_min < 1) fail("target_min must be at least 1");
  if (s.target_max < s.target_min) fail("target_max below target_min");
  if (!(s.frames_per_label >= 1.0)) fail("frames_per_label must be at least 1");
  if (!(s.jitter >= 0.0 && s.jitter < 1.0)) fail("jitter must be in [0, 1)");
  if (!(s.noise_sigma >= 0.0)) fail("noise_sigma must be nonnegative");
  if (!(s.seconds_per_frame > 0.0)) fail("seconds_per_frame must be positive");
}

RowMatrix label_embeddings(std::size_t vocab_size, std::size_t feature_dim, std::uint64_t seed, double scale) {
  Rng rng = make_rng(seed, "embeddings");
  RowMatrix e(static_cast<Eigen::Index>(vocab_size + 1), static_cast<Eigen::Index>(feature_dim));
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c) e(r, c) = scale * standard_normal(rng);
  return e;
}

Corpus generate_corpus(std::span<const GroupSpec> specs, std::size_t feature_dim, std::uint64_t seed,
                       const GenOptions& options) {
  if (specs.empty()) throw InvalidSpec("corpus needs at least one group");
  if (feature_dim == 0) throw InvalidSpec("feature_dim must be positive");
  if (!(options.gap_prob >= 0.0 && options.gap_prob <= 1.0)) throw InvalidSpec("gap_prob must be in [0, 1]");
  for (const auto& s : specs) validate(s);

  Corpus c;
  c.feature_dim = feature_dim;
  c.seed = seed;
  c.options = options;
  c.specs.assign(specs.begin(), specs.end());
  int offset = 0;
  for (const auto& s : specs) {
    c.vocab_offset.push_back(options.disjoint_vocab ? offset : 0);
    offset = options.disjoint_vocab ? offset + s.vocab_size : std::max(offset, s.vocab_size);
  }
  c.vocab_size = offset;

  const RowMatrix emb = label_embeddings(static_cast<std::size_t>(c.vocab_size), feature_dim, seed,
                                         options.embedding_scale);
  const int blank = c.vocab_size;

  std::size_t next_id = 0;
  for (std::size_t g = 0; g < specs.size(); ++g) {
    const GroupSpec& s = specs[g];
    for (std::size_t i = 0; i < s.utterance_count; ++i) {
      Rng rng = make_rng(seed, "utterance", (static_cast<std::uint64_t>(g) << 32) | i);
      Utterance u;
      u.id = next_id++;
      u.group = static_cast<int>(g);
      u.feature_dim = feature_dim;
      const auto span = static_cast<std::uint64_t>(s.target_max - s.target_min + 1);
      const int len = s.target_min + static_cast<int>(uniform_index(rng, span));
      for (int k = 0; k < len; ++k)
        u.target.push_back(c.vocab_offset[g] + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(s.vocab_size))));

      std::vector<int> symbols{blank};
      for (int k = 0; k < len; ++k) {
        const int label = u.target[static_cast<std::size_t>(k)];
        symbols.insert(symbols.end(), run_length(s, rng), label);
        const bool coin = uniform01(rng) < options.gap_prob;
        const bool repeat = k + 1 < len && u.target[static_cast<std::size_t>(k + 1)] == label;
        if (coin || repeat) symbols.insert(symbols.end(), run_length(s, rng), blank);
      }
      u.frames = symbols.size();
      u.duration = static_cast<double>(u.frames) * s.seconds_per_frame;
      u.features.resize(u.frames * feature_dim);
      for (std::size_t d = 0; d < u.frames; ++d)
        for (std::size_t f = 0; f < feature_dim; ++f) {
          const double clean = emb(symbols[d], static_cast<Eigen::Index>(f));
          const double noise = s.noise_sigma > 0.0 ? s.noise_sigma * standard_normal(rng) : 0.0;
          u.features[d * feature_dim + f] = static_cast<float>(clean + noise);
        }
      c.utterances.push_back(std::move(u));
    }
  }
  return c;
}

Corpus split(Corpus corpus, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.size() != 3) throw InvalidFractions("expected three fractions (train, dev, test)");
  for (double f : fractions)
    if (!(f >= 0.0)) throw InvalidFractions("fractions must be nonnegative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw InvalidFractions("fractions must sum to 1");

  corpus.train.clear();
  corpus.dev.clear();
  corpus.test.clear();
  corpus.warnings.clear();
  // Membership is decided on (group, id) so the split is independent of order.
  std::vector<std::vector<std::pair<std::uint64_t, std::size_t>>> by_group(corpus.groups());
  for (std::size_t idx = 0; idx < corpus.utterances.size(); ++idx) {
    const Utterance& u = corpus.utterances[idx];
    if (u.group < 0 || static_cast<std::size_t>(u.group) >= corpus.groups())
      throw DataError("utterance " + std::to_string(u.id) + " has an unknown group");
    Rng key = make_rng(seed, "split", u.id);
    by_group[static_cast<std::size_t>(u.group)].emplace_back(key(), idx);
  }
  for (std::size_t g = 0; g < by_group.size(); ++g) {
    auto& items = by_group[g];
    std::sort(items.begin(), items.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return corpus.utterances[a.second].id < corpus.utterances[b.second].id;
    });
    const double n = static_cast<double>(items.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * fractions[0]));
    const auto n_dev = std::min(items.size() - n_train, static_cast<std::size_t>(std::llround(n * fractions[1])));
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto& dst = k < n_train ? corpus.train : (k < n_train + n_dev ? corpus.dev : corpus.test);
      dst.push_back(items[k].second);
    }
    const std::size_t n_test = items.size() - n_train - n_dev;
    const std::string& name = corpus.specs[g].name;
    if (n_train == 0) corpus.warnings.push_back("group '" + name + "' has no train utterances");
    if (n_dev == 0) corpus.warnings.push_back("group '" + name + "' has no dev utterances");
    if (n_test == 0) corpus.warnings.push_back("group '" + name + "' has no test utterances");
  }
  auto by_id = [&](std::size_t a, std::size_t b) { return corpus.utterances[a].id < corpus.utterances[b].id; };
  std::sort(corpus.train.begin(), corpus.train.end(), by_id);
  std::sort(corpus.dev.begin(), corpus.dev.end(), by_id);
  std::sort(corpus.test.begin(), corpus.test.end(), by_id);
  return corpus;
}

Moments expected_duration_moments(const GroupSpec& spec, const GenOptions& options) {
  validate(spec);
  const auto [c1, c2] = run_length_moments(spec);
  const double run_var = c2 - c1 * c1;
  const double p_last = options.gap_prob;
  const double p_inner = 1.0 - (1.0 - options.gap_prob) * (1.0 - 1.0 / spec.vocab_size);
  // A gap contributes G * C with G ~ Bernoulli(p) independent of C.
  auto gap_mean = [&](double p) { return p * c1; };
  auto gap_var = [&](double p) { return p * c2 - p * p * c1 * c1; };

  double mean_of_mean = 0.0, mean_of_sq = 0.0, mean_of_var = 0.0;
  const int count = spec.target_max - spec.target_min + 1;
  for (int u = spec.target_min; u <= spec.target_max; ++u) {
    const double inner = static_cast<double>(u - 1);
    const double m = 1.0 + u * c1 + inner * gap_mean(p_inner) + gap_mean(p_last);
    const double v = u * run_var + inner * gap_var(p_inner) + gap_var(p_last);
    mean_of_mean += m / count;
    mean_of_sq += m * m / count;
    mean_of_var += v / count;
  }
  const double spf = spec.seconds_per_frame;
  return Moments{mean_of_mean * spf, (mean_of_var + mean_of_sq - mean_of_mean * mean_of_mean) * spf * spf};
}

void write_features(const Utterance& u, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw DataError("cannot write " + file.string());
  const auto d = static_cast<std::int32_t>(u.frames);
  const auto f = static_cast<std::int32_t>(u.feature_dim);
  write_le(os, &d, sizeof d);
  write_le(os, &f, sizeof f);
  write_le(os, u.features.data(), u.features.size() * sizeof(float));
}

void read_features(Utterance& u, const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot read " + file.string());
  std::int32_t d = 0, f = 0;
  is.read(reinterpret_cast<char*>(&d), sizeof d);
  is.read(reinterpret_cast<char*>(&f), sizeof f);
  if (!is || d <= 0 || f <= 0) throw DataError("bad feature header in " + file.string());
  u.frames = static_cast<std::size_t>(d);
  u.feature_dim = static_cast<std::size_t>(f);
  u.features.resize(u.frames * u.feature_dim);
  is.read(reinterpret_cast<char*>(u.features.data()), static_cast<std::streamsize>(u.features.size() * sizeof(float)));
  if (!is) throw DataError("truncated feature file " + file.string());
}

namespace {

std::vector<std::string> split_names(const Corpus& c) {
  std::vector<std::string> names(c.utterances.size());
  for (std::size_t idx : c.train) names[idx] = "train";
  for (std::size_t idx : c.dev) names[idx] = "dev";
  for (std::size_t idx : c.test) names[idx] = "test";
  return names;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");

  nlohmann::ordered_json meta;
  meta["version"] = 1;
  meta["feature_dim"] = corpus.feature_dim;
  meta["vocab_size"] = corpus.vocab_size;
  meta["seed"] = corpus.seed;
  meta["options"] = to_json(corpus.options);
  meta["vocab_offset"] = corpus.vocab_offset;
  meta["groups"] = nlohmann::ordered_json::array();
  for (const auto& s : corpus.specs) meta["groups"].push_back(to_json(s));
  {
    std::ofstream os(dir / "corpus.json");
    if (!os) throw DataError("cannot write " + (dir / "corpus.json").string());
    os << meta.dump(2) << "\n";
  }

  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  const auto names = split_names(corpus);
  for (std::size_t idx = 0; idx < corpus.utterances.size(); ++idx) {
    const Utterance& u = corpus.utterances[idx];
    nlohmann::ordered_json rec;
    rec["id"] = u.id;
    rec["group"] = u.group;
    rec["split"] = names[idx];
    rec["duration"] = u.duration;
    rec["frames"] = u.frames;
    rec["target"] = u.target;
    manifest << rec.dump() << "\n";
    write_features(u, dir / "features" / (std::to_string(u.id) + ".bin"));
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "corpus.json");
  if (!ms) throw DataError("no corpus.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus.json: ") + e.what());
  }
  Corpus c;
  try {
    c.feature_dim = meta.at("feature_dim").get<std::size_t>();
    c.vocab_size = meta.at("vocab_size").get<int>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.options = gen_options_from_json(meta.at("options"));
    c.vocab_offset = meta.at("vocab_offset").get<std::vector<int>>();
    for (const auto& g : meta.at("groups")) c.specs.push_back(group_spec_from_json(g));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus.json: ") + e.what());
  } catch (const ConfigInvalid& e) {
    throw DataError(std::string("corpus.json: ") + e.what());
  }

  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("no manifest.jsonl in " + dir.string());
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    Utterance u;
    std::string which;
    try {
      const auto rec = nlohmann::json::parse(line);
      u.id = rec.at("id").get<std::size_t>();
      u.group = rec.at("group").get<int>();
      which = rec.at("split").get<std::string>();
      u.duration = rec.at("duration").get<double>();
      u.target = rec.at("target").get<LabelSequence>();
      u.frames = rec.at("frames").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("manifest.jsonl: ") + e.what());
    }
    const std::size_t declared = u.frames;
    read_features(u, dir / "features" / (std::to_string(u.id) + ".bin"));
    if (u.frames != declared || u.feature_dim != c.feature_dim)
      throw DataError("feature shape mismatch for utterance " + std::to_string(u.id));
    if (u.group < 0 || static_cast<std::size_t>(u.group) >= c.specs.size())
      throw DataError("utterance " + std::to_string(u.id) + " has an unknown group");
    check_labels(u.target, c.vocab_size);
    const std::size_t idx = c.utterances.size();
    if (which == "train") c.train.push_back(idx);
    else if (which == "dev") c.dev.push_back(idx);
    else if (which == "test") c.test.push_back(idx);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

}  // namespace ctcdro
