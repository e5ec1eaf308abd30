#include "ctcdro/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ctcdro/errors.hpp"

namespace ctcdro {

namespace {

struct Layout {
  std::size_t w1 = 0, b1, w2, b2, end;
  explicit Layout(const ModelDims& d) {
    b1 = w1 + d.hidden * d.window();
    w2 = b1 + d.hidden;
    b2 = w2 + d.outputs() * d.hidden;
    end = b2 + d.outputs();
  }
};

void check_dims(const ModelDims& d) {
  if (d.feature_dim == 0 || d.hidden == 0 || d.vocab == 0)
    throw InvalidDims("model dims must be positive (feature_dim, hidden, vocab)");
}

}  // namespace

ModelParams::ModelParams(const ModelDims& dims) : dims_(dims) {
  check_dims(dims_);
  flat_.assign(dims_.parameter_count(), 0.0);
}

#define CTCDRO_PARAM_VIEW(name, offset, rows, cols)                                                   \
  ModelParams::ConstRowMap ModelParams::name() const {                                                \
    const Layout l(dims_);                                                                            \
    return ConstRowMap(flat_.data() + l.offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)); \
  }                                                                                                   \
  ModelParams::RowMap ModelParams::name() {                                                           \
    const Layout l(dims_);                                                                            \
    return RowMap(flat_.data() + l.offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)); \
  }

CTCDRO_PARAM_VIEW(w1, w1, dims_.hidden, dims_.window())
CTCDRO_PARAM_VIEW(b1, b1, 1, dims_.hidden)
CTCDRO_PARAM_VIEW(w2, w2, dims_.outputs(), dims_.hidden)
CTCDRO_PARAM_VIEW(b2, b2, 1, dims_.outputs())

#undef CTCDRO_PARAM_VIEW

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p(dims);
  Rng rng = make_rng(seed, "init");
  const Layout l(dims);
  auto fill = [&](std::size_t from, std::size_t to, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = from; i < to; ++i) p.flat()[i] = bound * (2.0 * uniform01(rng) - 1.0);
  };
  fill(l.w1, l.w2, dims.window());
  fill(l.w2, l.end, dims.hidden);
  return p;
}

double expected_init_sq_norm(const ModelDims& dims) {
  check_dims(dims);
  const double first = static_cast<double>(dims.hidden * dims.window() + dims.hidden);
  const double second = static_cast<double>(dims.outputs() * dims.hidden + dims.outputs());
  return first / (3.0 * static_cast<double>(dims.window())) + second / (3.0 * static_cast<double>(dims.hidden));
}

ForwardResult forward(const ModelParams& p, std::span<const float> features, std::size_t frames) {
  const ModelDims& dims = p.dims();
  if (frames == 0) throw DimMismatch("forward needs at least one frame");
  if (features.size() != frames * dims.feature_dim)
    throw DimMismatch("feature matrix has " + std::to_string(features.size()) + " entries, expected " +
                      std::to_string(frames) + " x " + std::to_string(dims.feature_dim));
  const auto D = static_cast<Eigen::Index>(frames);
  const auto F = static_cast<Eigen::Index>(dims.feature_dim);
  const auto c = static_cast<Eigen::Index>(dims.context);

  ForwardCache cache;
  cache.inputs = RowMatrix::Zero(D, static_cast<Eigen::Index>(dims.window()));
  for (Eigen::Index d = 0; d < D; ++d)
    for (Eigen::Index o = -c; o <= c; ++o) {
      const Eigen::Index src = d + o;
      if (src < 0 || src >= D) continue;
      const float* row = features.data() + src * F;
      for (Eigen::Index f = 0; f < F; ++f) cache.inputs(d, (o + c) * F + f) = row[f];
    }
  cache.hidden = cache.inputs * p.w1().transpose();
  cache.hidden.rowwise() += p.b1().row(0);
  cache.hidden = cache.hidden.array().tanh();
  RowMatrix logits = cache.hidden * p.w2().transpose();
  logits.rowwise() += p.b2().row(0);
  return ForwardResult{LogProbSequence::from_logits(logits), std::move(cache)};
}

void backward_into(const ModelParams& p, const ForwardResult& fwd, const RowMatrix& grad_logprob, double scale,
                   std::span<double> out) {
  const ModelDims& dims = p.dims();
  const RowMatrix& lp = fwd.logprobs.table();
  if (out.size() != dims.parameter_count()) throw ShapeMismatch("gradient buffer has the wrong size");
  if (grad_logprob.rows() != lp.rows() || grad_logprob.cols() != lp.cols())
    throw ShapeMismatch("upstream gradient shape does not match the forward output");
  if (fwd.cache.hidden.rows() != lp.rows() || fwd.cache.hidden.cols() != static_cast<Eigen::Index>(dims.hidden) ||
      fwd.cache.inputs.cols() != static_cast<Eigen::Index>(dims.window()))
    throw ShapeMismatch("forward cache does not match the parameters");

  const RowMatrix dz = scale * logit_gradient(fwd.logprobs, grad_logprob);
  const Layout l(dims);
  auto view = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
    return ModelParams::RowMap(out.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  };
  view(l.w2, dims.outputs(), dims.hidden).noalias() += dz.transpose() * fwd.cache.hidden;
  view(l.b2, 1, dims.outputs()) += dz.colwise().sum();
  RowMatrix dh = dz * p.w2();
  dh.array() *= 1.0 - fwd.cache.hidden.array().square();
  view(l.w1, dims.hidden, dims.window()).noalias() += dh.transpose() * fwd.cache.inputs;
  view(l.b1, 1, dims.hidden) += dh.colwise().sum();
}

std::vector<double> backward(const ModelParams& p, const ForwardResult& fwd, const RowMatrix& grad_logprob) {
  std::vector<double> g(p.dims().parameter_count(), 0.0);
  backward_into(p, fwd, grad_logprob, 1.0, g);
  return g;
}

Optimizer::Optimizer(std::size_t parameter_count, double learning_rate, std::size_t accumulate, OptimizerKind kind)
    : lr_(learning_rate), accumulate_(accumulate), kind_(kind), acc_(parameter_count, 0.0) {
  if (accumulate_ == 0) throw ConfigInvalid("gradient accumulation count must be positive");
  if (kind_ == OptimizerKind::adam) {
    m_.assign(parameter_count, 0.0);
    v_.assign(parameter_count, 0.0);
  }
}

bool Optimizer::step(ModelParams& p, std::span<const double> grad) {
  if (grad.size() != acc_.size()) throw ShapeMismatch("gradient size does not match the optimizer");
  if (accumulate_ == 1) {
    std::copy(grad.begin(), grad.end(), acc_.begin());
  } else {
    for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] += grad[i];
  }
  if (++pending_ < accumulate_) return false;
  apply(p);
  return true;
}

void Optimizer::apply(ModelParams& p) {
  auto theta = p.flat();
  const double inv = accumulate_ == 1 ? 1.0 : 1.0 / static_cast<double>(pending_);
  ++updates_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < acc_.size(); ++i) theta[i] -= lr_ * (acc_[i] * inv);
  } else {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(updates_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(updates_));
    for (std::size_t i = 0; i < acc_.size(); ++i) {
      const double g = acc_[i] * inv;
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }
  std::fill(acc_.begin(), acc_.end(), 0.0);
  pending_ = 0;
}

namespace {

nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"feature_dim", d.feature_dim}, {"context", d.context}, {"hidden", d.hidden}, {"vocab", d.vocab}};
}

}  // namespace

void save_checkpoint(const ModelParams& p, const CheckpointMeta& meta, const std::filesystem::path& stem) {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");
  auto bin = stem;
  bin += ".bin";
  std::ofstream os(bin, std::ios::binary);
  if (!os) throw DataError("cannot write " + bin.string());
  os.write(reinterpret_cast<const char*>(p.flat().data()), static_cast<std::streamsize>(p.flat().size() * sizeof(double)));

  nlohmann::ordered_json side;
  side["dims"] = dims_to_json(meta.dims);
  side["step"] = meta.step;
  side["parameter_count"] = p.flat().size();
  side["rng_state"] = meta.rng_state;
  auto js = stem;
  js += ".json";
  std::ofstream jo(js);
  if (!jo) throw DataError("cannot write " + js.string());
  jo << side.dump(2) << "\n";
}

std::pair<ModelParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& stem) {
  auto js = stem;
  js += ".json";
  std::ifstream ji(js);
  if (!ji) throw DataError("cannot read " + js.string());
  CheckpointMeta meta;
  try {
    const auto side = nlohmann::json::parse(ji);
    const auto& d = side.at("dims");
    meta.dims.feature_dim = d.at("feature_dim").get<std::size_t>();
    meta.dims.context = d.at("context").get<std::size_t>();
    meta.dims.hidden = d.at("hidden").get<std::size_t>();
    meta.dims.vocab = d.at("vocab").get<std::size_t>();
    meta.step = side.at("step").get<std::size_t>();
    meta.rng_state = side.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(js.string() + ": " + e.what());
  }
  ModelParams p(meta.dims);
  auto bin = stem;
  bin += ".bin";
  std::ifstream is(bin, std::ios::binary);
  if (!is) throw DataError("cannot read " + bin.string());
  is.read(reinterpret_cast<char*>(p.flat().data()), static_cast<std::streamsize>(p.flat().size() * sizeof(double)));
  if (!is || is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint size mismatch in " + bin.string());
  return {std::move(p), std::move(meta)};
}

}  // namespace ctcdro
