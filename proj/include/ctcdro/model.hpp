#pragma once

// A windowed two-layer perceptron emitting per-frame log-probabilities, with
// hand-written backpropagation.
//
//   x_d = [f_{d-c}; ...; f_{d+c}]         (zero-padded at the edges)
//   h_d = tanh(W1 x_d + b1)
//   z_d = W2 h_d + b2,   lp_d = log_softmax(z_d)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctcdro/ctc.hpp"
#include "ctcdro/rng.hpp"

namespace ctcdro {

struct ModelDims {
  std::size_t feature_dim = 0;
  std::size_t context = 1;
  std::size_t hidden = 64;
  /// Output labels excluding blank; the model emits vocab + 1 columns.
  std::size_t vocab = 0;

  std::size_t window() const { return feature_dim * (2 * context + 1); }
  std::size_t outputs() const { return vocab + 1; }
  std::size_t parameter_count() const { return hidden * window() + hidden + outputs() * hidden + outputs(); }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Parameters stored contiguously as [W1 | b1 | W2 | b2], weights row-major.
class ModelParams {
 public:
  using RowMap = Eigen::Map<RowMatrix>;
  using ConstRowMap = Eigen::Map<const RowMatrix>;

  explicit ModelParams(const ModelDims& dims);

  const ModelDims& dims() const { return dims_; }
  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }

  ConstRowMap w1() const;
  ConstRowMap b1() const;
  ConstRowMap w2() const;
  ConstRowMap b2() const;
  RowMap w1();
  RowMap b1();
  RowMap w2();
  RowMap b2();

 private:
  ModelDims dims_;
  std::vector<double> flat_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
/// Throws InvalidDims on a zero dimension.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Expected squared L2 norm of `init_params` output: sum over layers of
/// parameter count / (3 fan_in).
double expected_init_sq_norm(const ModelDims& dims);

struct ForwardCache {
  RowMatrix inputs;  ///< D x window
  RowMatrix hidden;  ///< D x H, post-tanh
};

struct ForwardResult {
  LogProbSequence logprobs;
  ForwardCache cache;
};

/// `features` is row-major frames x feature_dim. Throws DimMismatch.
ForwardResult forward(const ModelParams& p, std::span<const float> features, std::size_t frames);

/// Gradient of a loss wrt the flat parameter vector, given d loss / d logprob.
/// Throws ShapeMismatch if the cache or upstream gradient has the wrong shape.
std::vector<double> backward(const ModelParams& p, const ForwardResult& fwd, const RowMatrix& grad_logprob);

/// Accumulating variant: adds `scale` times the gradient into `out`.
void backward_into(const ModelParams& p, const ForwardResult& fwd, const RowMatrix& grad_logprob, double scale,
                   std::span<double> out);

enum class OptimizerKind { sgd, adam };

/// Plain SGD (or Adam) with optional accumulation: every `accumulate` calls to
/// `step` apply the mean of the accumulated gradients once.
class Optimizer {
 public:
  Optimizer(std::size_t parameter_count, double learning_rate, std::size_t accumulate = 1,
            OptimizerKind kind = OptimizerKind::sgd);

  /// Returns true when this call applied an update.
  bool step(ModelParams& p, std::span<const double> grad);
  std::size_t updates() const { return updates_; }

 private:
  void apply(ModelParams& p);

  double lr_;
  std::size_t accumulate_;
  OptimizerKind kind_;
  std::vector<double> acc_;
  std::size_t pending_ = 0;
  std::size_t updates_ = 0;
  std::vector<double> m_, v_;
};

struct CheckpointMeta {
  ModelDims dims;
  std::size_t step = 0;
  std::string rng_state;
};

/// <stem>.bin holds the flat vector as little-endian float64; <stem>.json the
/// dims, step and rng state.
void save_checkpoint(const ModelParams& p, const CheckpointMeta& meta, const std::filesystem::path& stem);
std::pair<ModelParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& stem);

}  // namespace ctcdro
