#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pemr/dsp.hpp"
#include "pemr/repr.hpp"
#include "pemr/tensor.hpp"
#include "pemr/trainer.hpp"

namespace pemr::eval {

// ---------------------------------------------------------------------------
// Ranking metrics

/// Probability that a random positive outscores a random negative; ties
/// count one half. Throws UndefinedMetricError unless both classes appear.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: sum over distinct score thresholds of
/// (recall gain) x (precision at that threshold). Needs one positive.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct TagMetrics {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  std::size_t tags_used = 0;
};

/// Macro average over the columns of [N, T] score and 0/1 label matrices.
/// Columns lacking a positive or a negative are skipped.
TagMetrics macro_metrics(const Tensor& scores, const Tensor& labels);

// ---------------------------------------------------------------------------
// Retrieval

enum class Similarity { kDot, kCosine };

/// Queries and references with their clique (cover group) ids. A reference
/// whose id equals the query's id is the query itself and is skipped.
struct RetrievalSet {
  Tensor queries;                  // [Q, E]
  Tensor references;               // [R, E]
  std::vector<int> query_clique;
  std::vector<int> reference_clique;
  std::vector<std::string> query_ids;      // optional; empty disables self exclusion
  std::vector<std::string> reference_ids;

  void validate() const;
};

struct RetrievalMetrics {
  double map = 0.0;
  double precision_at_10 = 0.0;
  double mr1 = 0.0;
};

/// Per-query ranking, descending similarity, ties by ascending reference index.
std::vector<std::size_t> rank_references(const RetrievalSet& rs, std::size_t query, Similarity sim);

RetrievalMetrics retrieval_eval(const RetrievalSet& rs, Similarity sim = Similarity::kDot);

// ---------------------------------------------------------------------------
// Probing

enum class ProbeTask { kMultiClass, kMultiLabel };

struct ProbeTargets {
  ProbeTask task = ProbeTask::kMultiClass;
  Tensor y;  // [N, C], one-hot or multi-hot

  static ProbeTargets from_classes(std::span<const int> classes, std::size_t n_classes);
  static ProbeTargets from_tags(Tensor multi_hot);
  std::size_t size() const { return y.rows(); }
  std::size_t outputs() const { return y.cols(); }
};

struct ProbeConfig {
  std::size_t epochs = 200;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  bool mlp = false;
  std::size_t hidden = 512;
  std::uint64_t seed = 0;
};

/// Trained classifier on z-scored features.
struct Probe {
  ProbeTask task = ProbeTask::kMultiClass;
  std::vector<double> mean, scale;  // feature standardisation from the training set
  std::vector<Tensor> weights;      // linear: {W, b}; mlp: {W1, b1, W2, b2}

  /// Class probabilities (softmax) or tag probabilities (sigmoid), [N, C].
  Tensor predict(const Tensor& features) const;
};

Probe train_probe(const Tensor& features, const ProbeTargets& targets, const ProbeConfig& cfg);

/// Fraction of rows whose arg-max output matches the one-hot target.
double accuracy(const Probe& probe, const Tensor& features, const ProbeTargets& targets);

TagMetrics evaluate_probe(const Probe& probe, const Tensor& features, const ProbeTargets& targets);

/// Sorted indices of a uniform sample without replacement of size
/// max(1, round(fraction * n)).
std::vector<std::size_t> label_fraction_subsample(std::size_t n, double fraction, std::uint64_t seed);

/// Evaluation-mode 512-d representations, one clip at a time (clips may
/// differ in length). Encoder state is left untouched.
Tensor embed_clips(repr::FcnEncoder& encoder, const dsp::SpectrogramConfig& spec,
                   std::span<const dsp::Waveform> clips);

/// Rows of a matrix picked by index.
Tensor take_rows(const Tensor& m, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------
// Mask-ratio sweep

struct SweepRow {
  double ratio = 0.0;
  double metric = 0.0;
  std::size_t frames = 0;
  std::size_t expected_dropped = 0;
  std::size_t min_dropped = 0;
  std::size_t max_dropped = 0;
  std::uint64_t steps = 0;
  bool verified = false;  // every F''_pos of every step had exactly expected_dropped zero rows
};

using PretrainFn = std::function<trainer::Trainer(const trainer::TrainConfig&, const trainer::PretrainOptions&)>;
using ProbeFn = std::function<double(trainer::Trainer&)>;

/// One pre-training run per ratio from base.seed, each followed by probe().
std::vector<SweepRow> ratio_sweep(const trainer::TrainConfig& base, std::span<const double> ratios,
                                  const PretrainFn& pretrain, const ProbeFn& probe);

inline constexpr std::string_view kSweepCsvHeader =
    "ratio,metric,frames,expected_dropped,min_dropped,max_dropped,steps,verified";
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace pemr::eval
