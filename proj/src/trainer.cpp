#include "ctcdro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "ctcdro/config.hpp"
#include "ctcdro/errors.hpp"

namespace ctcdro {

Mode parse_mode(std::string_view s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "gdro") return Mode::gdro;
  if (s == "ctcdro") return Mode::ctcdro;
  if (s == "ctcdro_no_dur") return Mode::ctcdro_no_dur;
  if (s == "ctcdro_no_smooth") return Mode::ctcdro_no_smooth;
  throw ConfigInvalid("unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::gdro: return "gdro";
    case Mode::ctcdro: return "ctcdro";
    case Mode::ctcdro_no_dur: return "ctcdro_no_dur";
    case Mode::ctcdro_no_smooth: return "ctcdro_no_smooth";
  }
  return "baseline";
}

bool is_dro(Mode m) { return m != Mode::baseline; }
bool uses_mixed_batches(Mode m) { return m == Mode::gdro || m == Mode::ctcdro_no_dur; }

Selector parse_selector(std::string_view s) {
  if (s == "auto") return Selector::automatic;
  if (s == "dev_loss") return Selector::dev_loss;
  if (s == "worst_dev_cer") return Selector::worst_dev_cer;
  throw ConfigInvalid("unknown selector '" + std::string(s) + "'");
}

std::string_view to_string(Selector s) {
  switch (s) {
    case Selector::automatic: return "auto";
    case Selector::dev_loss: return "dev_loss";
    case Selector::worst_dev_cer: return "worst_dev_cer";
  }
  return "auto";
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& why) { throw ConfigInvalid(why); };
  if (c.version != kSchemaVersion) fail("unsupported config version " + std::to_string(c.version));
  if (c.steps < 1) fail("steps must be at least 1");
  if (!(c.eta_theta >= 0.0) || !std::isfinite(c.eta_theta)) fail("eta_theta must be finite and nonnegative");
  if (c.accumulate < 1) fail("accumulate must be at least 1");
  if (c.eval_every < 1) fail("eval_every must be at least 1");
  if (c.hidden < 1) fail("hidden must be at least 1");
  if (!uses_mixed_batches(c.mode) && !(c.batch_duration > 0.0)) fail("batch_duration must be positive");
  if (uses_mixed_batches(c.mode) && c.batch_size == 0 && !(c.batch_duration > 0.0))
    fail("mixed batches need batch_size or a positive batch_duration");
  if (is_dro(c.mode) && (!(c.dro.eta_q >= 0.0) || !std::isfinite(c.dro.eta_q)))
    fail("eta_q must be finite and nonnegative");
  const bool smoothed = c.mode == Mode::ctcdro || c.mode == Mode::ctcdro_no_dur;
  if (smoothed && !(c.dro.alpha > 0.0)) fail("alpha must be positive for smoothed updates");
}

std::size_t resolve_batch_size(const TrainConfig& c, const Corpus& corpus) {
  if (c.batch_size > 0) return c.batch_size;
  if (corpus.train.empty()) throw DataError("train split is empty");
  double total = 0.0;
  for (std::size_t idx : corpus.train) total += corpus.utterances[idx].duration;
  const double mean = total / static_cast<double>(corpus.train.size());
  return static_cast<std::size_t>(std::max(1.0, std::round(c.batch_duration / mean)));
}

ModelDims model_dims(const TrainConfig& c, const Corpus& corpus) {
  ModelDims d;
  d.feature_dim = corpus.feature_dim;
  d.context = c.context;
  d.hidden = c.hidden;
  d.vocab = static_cast<std::size_t>(corpus.vocab_size) + (c.lid_prefix ? corpus.groups() : 0);
  return d;
}

LabelSequence training_target(const Utterance& u, const Corpus& corpus, bool lid_prefix) {
  if (!lid_prefix) return u.target;
  LabelSequence t;
  t.reserve(u.target.size() + 1);
  t.push_back(corpus.vocab_size + u.group);
  t.insert(t.end(), u.target.begin(), u.target.end());
  return t;
}

namespace {

struct Scored {
  std::size_t idx = 0;
  double loss = 0.0;  ///< normalized
  double norm_factor = 1.0;
  ForwardResult fwd;
  RowMatrix grad;  ///< d raw loss / d logprob
};

class Trainer {
 public:
  Trainer(const TrainConfig& c, const Corpus& corpus)
      : c_(c),
        corpus_(corpus),
        groups_(corpus.groups()),
        params_(init_params(model_dims(c, corpus), make_seed("init"))),
        opt_(params_.flat().size(), c.eta_theta, c.accumulate, c.optimizer),
        q_(GroupWeights::uniform(groups_)),
        ledger_(groups_),
        sampler_rng_(make_rng(c.seed, "sampler")) {
    validate(c_);
    if (corpus_.train.empty()) throw DataError("train split is empty");
    targets_.reserve(corpus_.utterances.size());
    for (const auto& u : corpus_.utterances) targets_.push_back(training_target(u, corpus_, c_.lid_prefix));
    durations_.reserve(corpus_.utterances.size());
    for (const auto& u : corpus_.utterances) durations_.push_back(u.duration);

    std::vector<std::vector<std::size_t>> pools(groups_);
    for (std::size_t idx : corpus_.train) pools[static_cast<std::size_t>(corpus_.utterances[idx].group)].push_back(idx);
    std::vector<std::size_t> sizes;
    for (std::size_t g = 0; g < groups_; ++g) {
      if (pools[g].empty()) throw DataError("group '" + corpus_.specs[g].name + "' has no train utterances");
      sizes.push_back(pools[g].size());
      cyclers_.emplace_back(pools[g], c_.with_replacement);
    }
    group_sampler_.emplace(sizes, c_.group_sampling);
    traj_.groups = groups_;
    if (uses_mixed_batches(c_.mode)) {
      traj_.batch_size = resolve_batch_size(c_, corpus_);
      mixed_.emplace(corpus_.train, traj_.batch_size, c_.with_replacement);
    }
  }

  RunTrajectory run() {
    grad_.assign(params_.flat().size(), 0.0);
    for (std::size_t t = 1; t <= c_.steps; ++t) {
      StepRecord rec = uses_mixed_batches(c_.mode) ? mixed_step() : single_group_step();
      rec.step = t;
      rec.q.assign(q_.values().begin(), q_.values().end());
      traj_.steps.push_back(std::move(rec));
      if (t % c_.eval_every == 0 || t == c_.steps) eval_point(t);
    }
    return std::move(traj_);
  }

 private:
  std::uint64_t make_seed(std::string_view stream) const {
    Rng r = make_rng(c_.seed, stream);
    return r();
  }

  std::optional<Scored> score(std::size_t idx) {
    const Utterance& u = corpus_.utterances[idx];
    ForwardResult fwd = forward(params_, u.features, u.frames);
    try {
      CtcResult r = ctc_grad(fwd.logprobs, targets_[idx]);
      const double factor = normalize_loss(UtteranceLoss{1.0, u.frames, targets_[idx].size()}, c_.norm);
      const double loss = c_.norm == LossNorm::none ? r.loss : r.loss * factor;
      return Scored{idx, loss, factor, std::move(fwd), std::move(r.grad)};
    } catch (const NoValidAlignment& e) {
      ++traj_.skipped;
      std::cerr << "skipping utterance " << u.id << ": " << e.what() << "\n";
      return std::nullopt;
    }
  }

  void descend(const std::vector<Scored>& batch, const std::vector<double>& weights) {
    std::fill(grad_.begin(), grad_.end(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i)
      backward_into(params_, batch[i].fwd, batch[i].grad, weights[i] * batch[i].norm_factor, grad_);
    opt_.step(params_, grad_);
  }

  // Length-matched single-group batch (baseline, ctcdro, ctcdro_no_smooth).
  StepRecord single_group_step() {
    StepRecord rec;
    const int g = group_sampler_->sample(sampler_rng_);
    rec.group = g;
    const BatchPlan plan = make_batch(cyclers_[static_cast<std::size_t>(g)], durations_, g, c_.batch_duration,
                                      sampler_rng_);
    std::vector<Scored> batch;
    double summed = 0.0;
    for (std::size_t idx : plan.utterances) {
      if (auto s = score(idx)) {
        summed += s->loss;
        batch.push_back(std::move(*s));
      }
    }
    if (c_.mode != Mode::baseline) {
      ledger_.record(g, summed);
      if (ledger_.ready()) {
        const GroupLosses drained = ledger_.drain();
        q_ = c_.mode == Mode::ctcdro ? ctc_dro_update(q_, drained, c_.dro)
                                     : group_dro_update(q_, drained, c_.dro.eta_q);
        rec.weights_updated = true;
        ++traj_.weight_updates;
      }
    }
    const double scale = c_.mode == Mode::baseline ? 1.0 : q_[static_cast<std::size_t>(g)] * static_cast<double>(groups_);
    rec.train_loss = c_.mode == Mode::baseline ? summed : scale_for_descent(summed, q_[static_cast<std::size_t>(g)], groups_);
    descend(batch, std::vector<double>(batch.size(), scale));
    return rec;
  }

  // Fixed-size mixed batch (gdro, ctcdro_no_dur): per-group mean losses, a
  // weight update every step, descent on B * sum_g q_g mean_g.
  StepRecord mixed_step() {
    StepRecord rec;
    rec.group = -1;
    const std::vector<std::size_t> ids = mixed_->next(sampler_rng_);
    std::vector<Scored> batch;
    std::vector<double> sums(groups_, 0.0);
    std::vector<std::size_t> counts(groups_, 0);
    for (std::size_t idx : ids) {
      if (auto s = score(idx)) {
        const auto g = static_cast<std::size_t>(corpus_.utterances[idx].group);
        sums[g] += s->loss;
        ++counts[g];
        batch.push_back(std::move(*s));
      }
    }
    GroupLosses means(groups_, 0.0);
    for (std::size_t g = 0; g < groups_; ++g)
      if (counts[g] > 0) means[g] = sums[g] / static_cast<double>(counts[g]);
    q_ = c_.mode == Mode::gdro ? group_dro_update(q_, means, c_.dro.eta_q) : ctc_dro_update(q_, means, c_.dro);
    rec.weights_updated = true;
    ++traj_.weight_updates;

    const auto b = static_cast<double>(batch.size());
    double objective = 0.0;
    for (std::size_t g = 0; g < groups_; ++g) objective += q_[g] * means[g];
    rec.train_loss = b * objective;
    std::vector<double> weights;
    weights.reserve(batch.size());
    for (const auto& s : batch) {
      const auto g = static_cast<std::size_t>(corpus_.utterances[s.idx].group);
      weights.push_back(b * q_[g] / static_cast<double>(counts[g]));
    }
    descend(batch, weights);
    return rec;
  }

  void eval_point(std::size_t t) {
    EvalRecord e;
    e.step = t;
    if (!corpus_.dev.empty()) {
      e.dev_loss = length_matched_loss(params_, corpus_, corpus_.dev, c_);
      double sum = 0.0;
      std::size_t n = 0;
      for (double v : e.dev_loss)
        if (std::isfinite(v)) {
          sum += v;
          ++n;
        }
      e.mean_dev_loss = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
      e.dev = evaluate(params_, corpus_, corpus_.dev, c_.lid_prefix);
    } else {
      e.mean_dev_loss = std::numeric_limits<double>::quiet_NaN();
    }
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu", t);
    e.checkpoint = name;
    traj_.evals.push_back(std::move(e));
    traj_.snapshots.push_back(params_);
  }

  const TrainConfig& c_;
  const Corpus& corpus_;
  std::size_t groups_;
  ModelParams params_;
  Optimizer opt_;
  GroupWeights q_;
  LossLedger ledger_;
  Rng sampler_rng_;
  std::vector<LabelSequence> targets_;
  std::vector<double> durations_;
  std::vector<PoolCycler> cyclers_;
  std::optional<GroupSampler> group_sampler_;
  std::optional<MixedBatcher> mixed_;
  std::vector<double> grad_;
  RunTrajectory traj_;
};

}  // namespace

RunTrajectory train(const TrainConfig& config, const Corpus& corpus) {
  validate(config);
  return Trainer(config, corpus).run();
}

Selector resolve_selector(const TrainConfig& c) {
  if (c.selector != Selector::automatic) return c.selector;
  return is_dro(c.mode) ? Selector::worst_dev_cer : Selector::dev_loss;
}

std::size_t select_checkpoint(const RunTrajectory& trajectory, Selector selector,
                              std::optional<double> baseline_worst_dev_cer) {
  if (trajectory.evals.empty()) throw NoEvals("trajectory has no eval points");
  if (selector == Selector::automatic) selector = Selector::dev_loss;
  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trajectory.evals.size(); ++i) {
    const EvalRecord& e = trajectory.evals[i];
    double score = 0.0;
    if (selector == Selector::dev_loss) {
      score = e.mean_dev_loss;
    } else {
      // Largest improvement over the baseline's worst-group CER; without a
      // baseline this is the lowest worst-group CER.
      const double worst = e.dev.cer.empty() ? std::numeric_limits<double>::infinity() : e.dev.summary.max_cer;
      score = baseline_worst_dev_cer ? -(*baseline_worst_dev_cer - worst) : worst;
    }
    if (std::isnan(score)) score = std::numeric_limits<double>::infinity();
    if (score < best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

GroupReport evaluate(const ModelParams& params, const Corpus& corpus, std::span<const std::size_t> split,
                     bool lid_prefix) {
  const std::size_t groups = corpus.groups();
  GroupReport rep;
  rep.counts.assign(groups, EditCounts{});
  std::vector<std::pair<int, int>> lid;
  for (std::size_t idx : split) {
    const Utterance& u = corpus.utterances[idx];
    const ForwardResult fwd = forward(params, u.features, u.frames);
    LabelSequence hyp = greedy_decode(fwd.logprobs);
    if (lid_prefix) {
      const int truth = corpus.vocab_size + u.group;
      const bool has_lid = !hyp.empty() && hyp.front() >= corpus.vocab_size;
      lid.emplace_back(truth, has_lid ? hyp.front() : -1);
      if (has_lid) hyp.erase(hyp.begin());
    }
    rep.counts[static_cast<std::size_t>(u.group)] += edit_distance(u.target, hyp);
  }
  std::map<int, double> per_group;
  rep.cer.assign(groups, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t g = 0; g < groups; ++g) {
    if (rep.counts[g].reference_length == 0) continue;
    rep.cer[g] = cer(rep.counts[g]);
    per_group[static_cast<int>(g)] = rep.cer[g];
  }
  if (!per_group.empty()) rep.summary = aggregate(per_group);
  rep.lid_accuracy = lid_prefix ? lid_accuracy(lid) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

std::vector<double> length_matched_loss(const ModelParams& params, const Corpus& corpus,
                                        std::span<const std::size_t> split, const TrainConfig& config) {
  const std::size_t groups = corpus.groups();
  std::vector<double> loss(groups, 0.0), seconds(groups, 0.0);
  for (std::size_t idx : split) {
    const Utterance& u = corpus.utterances[idx];
    const LabelSequence target = training_target(u, corpus, config.lid_prefix);
    const ForwardResult fwd = forward(params, u.features, u.frames);
    double l = 0.0;
    try {
      l = ctc_forward(fwd.logprobs, target).loss;
    } catch (const NoValidAlignment&) {
      continue;
    }
    const auto g = static_cast<std::size_t>(u.group);
    loss[g] += normalize_loss(UtteranceLoss{l, u.frames, target.size()}, config.norm);
    seconds[g] += u.duration;
  }
  std::vector<double> out(groups, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t g = 0; g < groups; ++g)
    if (seconds[g] > 0.0) out[g] = loss[g] / seconds[g] * config.batch_duration;
  return out;
}

namespace {

nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json report_json(const GroupReport& r, const Corpus& corpus) {
  nlohmann::ordered_json j;
  j["max_cer"] = number_or_null(r.summary.max_cer);
  j["max_group"] = r.summary.max_group;
  j["max_group_name"] = corpus.specs.at(static_cast<std::size_t>(r.summary.max_group)).name;
  j["avg_cer"] = number_or_null(r.summary.avg_cer);
  j["lid_accuracy"] = number_or_null(r.lid_accuracy);
  j["per_group"] = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < r.cer.size(); ++g) {
    nlohmann::ordered_json pg;
    pg["group"] = g;
    pg["name"] = corpus.specs[g].name;
    pg["cer"] = number_or_null(r.cer[g]);
    pg["insertions"] = r.counts[g].insertions;
    pg["substitutions"] = r.counts[g].substitutions;
    pg["deletions"] = r.counts[g].deletions;
    pg["reference_length"] = r.counts[g].reference_length;
    j["per_group"].push_back(pg);
  }
  return j;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunSummary write_run(const TrainConfig& config, const Corpus& corpus, const RunTrajectory& trajectory,
                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "checkpoints");
  {
    std::ofstream os(dir / "config.json");
    if (!os) throw DataError("cannot write " + (dir / "config.json").string());
    auto j = to_json(config);
    j["resolved_batch_size"] = trajectory.batch_size;
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "trajectory.csv");
    if (!os) throw DataError("cannot write trajectory.csv");
    os << "step,group";
    for (std::size_t g = 0; g < trajectory.groups; ++g) os << ",q_" << g;
    os << ",train_loss,dev_loss\n";
    std::size_t next_eval = 0;
    for (const auto& s : trajectory.steps) {
      os << s.step << "," << s.group;
      for (double q : s.q) os << "," << format_double(q);
      os << "," << format_double(s.train_loss) << ",";
      if (next_eval < trajectory.evals.size() && trajectory.evals[next_eval].step == s.step)
        os << format_double(trajectory.evals[next_eval++].mean_dev_loss);
      os << "\n";
    }
  }
  const ModelDims dims = model_dims(config, corpus);
  for (std::size_t i = 0; i < trajectory.evals.size(); ++i) {
    CheckpointMeta meta{dims, trajectory.evals[i].step, ""};
    save_checkpoint(trajectory.snapshots[i], meta, dir / "checkpoints" / trajectory.evals[i].checkpoint);
  }

  RunSummary sum;
  const Selector sel = resolve_selector(config);
  sum.selected_eval = select_checkpoint(trajectory, sel);
  sum.selected_step = trajectory.evals[sum.selected_eval].step;
  const ModelParams& best = trajectory.snapshots[sum.selected_eval];
  sum.dev = trajectory.evals[sum.selected_eval].dev;
  sum.test = evaluate(best, corpus, corpus.test, config.lid_prefix);

  nlohmann::ordered_json m;
  m["mode"] = to_string(config.mode);
  m["eta_q"] = config.dro.eta_q;
  m["alpha"] = config.dro.alpha;
  m["seed"] = config.seed;
  m["selector"] = to_string(sel);
  m["selected_step"] = sum.selected_step;
  m["selected_checkpoint"] = trajectory.evals[sum.selected_eval].checkpoint;
  m["steps"] = trajectory.steps.size();
  m["weight_updates"] = trajectory.weight_updates;
  m["skipped_utterances"] = trajectory.skipped;
  m["final_q"] = trajectory.steps.empty() ? std::vector<double>{} : trajectory.steps.back().q;
  if (!corpus.dev.empty()) m["dev"] = report_json(sum.dev, corpus);
  if (!corpus.test.empty()) m["test"] = report_json(sum.test, corpus);
  nlohmann::ordered_json evals = nlohmann::ordered_json::array();
  for (const auto& e : trajectory.evals) {
    nlohmann::ordered_json ej;
    ej["step"] = e.step;
    ej["mean_dev_loss"] = number_or_null(e.mean_dev_loss);
    nlohmann::ordered_json dl = nlohmann::ordered_json::array();
    for (double v : e.dev_loss) dl.push_back(number_or_null(v));
    ej["dev_loss"] = dl;
    ej["dev_max_cer"] = number_or_null(e.dev.cer.empty() ? NAN : e.dev.summary.max_cer);
    ej["checkpoint"] = e.checkpoint;
    evals.push_back(ej);
  }
  m["evals"] = evals;
  std::ofstream os(dir / "metrics.json");
  if (!os) throw DataError("cannot write metrics.json");
  os << m.dump(2) << "\n";
  return sum;
}

RunSummary run_training(const TrainConfig& config, const Corpus& corpus, const std::filesystem::path& dir) {
  const RunTrajectory t = train(config, corpus);
  return write_run(config, corpus, t, dir);
}

}  // namespace ctcdro
