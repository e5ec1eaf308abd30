#pragma once

// Synthetic grouped-sequence corpora. Each group is a distribution over label
// sequences and how they are rendered as frames: how many frames a label
// occupies, how often silent (blank) gaps occur, and how much Gaussian noise
// sits on top of the per-label embedding. Groups that differ in frames per
// label produce duration distributions that differ in the same ratio; groups
// that differ in noise have different irreducible loss.
//
// Frame layout of one utterance:
//   [onset blank frame] (label run [gap run]?)*
// where each run has max(1, ceil(frames_per_label * J)) frames, J ~ U[1-j, 1+j],
// and a gap follows a label with probability gap_prob (always, when the next
// label repeats the current one).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctcdro/ctc.hpp"
#include "ctcdro/rng.hpp"

namespace ctcdro {

struct GroupSpec {
  std::string name;
  std::size_t utterance_count = 100;
  int vocab_size = 8;
  int target_min = 3;
  int target_max = 10;
  double frames_per_label = 2.0;
  double jitter = 0.0;
  double noise_sigma = 0.0;
  double seconds_per_frame = 0.02;
};

struct GenOptions {
  double gap_prob = 0.2;
  /// Give each group its own label range instead of sharing [0, V).
  bool disjoint_vocab = false;
  double embedding_scale = 1.0;
};

struct Utterance {
  std::size_t id = 0;
  int group = 0;
  LabelSequence target;
  std::size_t frames = 0;
  std::size_t feature_dim = 0;
  /// Row-major frames x feature_dim.
  std::vector<float> features;
  double duration = 0.0;
};

struct Corpus {
  std::size_t feature_dim = 0;
  /// Total label vocabulary (blank excluded).
  int vocab_size = 0;
  std::uint64_t seed = 0;
  std::vector<GroupSpec> specs;
  std::vector<int> vocab_offset;
  GenOptions options;
  std::vector<Utterance> utterances;
  /// Indices into `utterances`.
  std::vector<std::size_t> train, dev, test;
  std::vector<std::string> warnings;

  std::size_t groups() const { return specs.size(); }
  const std::vector<std::size_t>& split_ids(std::string_view name) const;
};

/// Throws InvalidSpec on a malformed spec.
void validate(const GroupSpec& spec);

Corpus generate_corpus(std::span<const GroupSpec> specs, std::size_t feature_dim, std::uint64_t seed,
                       const GenOptions& options = {});

/// Stratified per-group split keyed on utterance ids; reordering
/// `corpus.utterances` does not change membership. Throws InvalidFractions.
Corpus split(Corpus corpus, std::span<const double> fractions, std::uint64_t seed);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact mean and variance of utterance duration (seconds) implied by a spec.
Moments expected_duration_moments(const GroupSpec& spec, const GenOptions& options);

/// The embedding table rows used to render frames: labels 0..V-1 then blank.
RowMatrix label_embeddings(std::size_t vocab_size, std::size_t feature_dim, std::uint64_t seed, double scale);

/// Directory layout: corpus.json, manifest.jsonl, features/<id>.bin.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Feature file: int32 D, int32 F, then D*F float32, all little-endian.
void write_features(const Utterance& u, const std::filesystem::path& file);
void read_features(Utterance& u, const std::filesystem::path& file);

}  // namespace ctcdro
