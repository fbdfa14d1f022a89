#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "xrhead/config.hpp"
#include "xrhead/data.hpp"
#include "xrhead/gradcheck.hpp"
#include "xrhead/model.hpp"
#include "xrhead/report.hpp"

namespace xrhead {

struct RunReport {
  TrainConfig config;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;  // wall time; excluded from same_outcome()
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
  std::size_t dropped_samples = 0;  // singleton tail batches skipped per epoch

  /// Equality of everything but timing.
  bool same_outcome(const RunReport& other) const;
};

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

/// Generates (with data_seed) or loads the dataset a config points at.
Dataset prepare_dataset(const TrainConfig& config);
/// Loads manual prompt features when the config asks for them.
std::optional<PromptFeatures> prepare_prompts(const TrainConfig& config, std::size_t classes);

struct TrainedRun {
  XrModel model;
  Dataset dataset;
  std::vector<Sample> train_split;
  RunReport report;
};

/// Few-shot training with SGD under a cosine schedule; one epoch is one pass
/// over the few-shot split. Deterministic in (config, seeds).
TrainedRun train(const TrainConfig& config);
TrainedRun train(const TrainConfig& config, Dataset dataset);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);
/// Eval-mode predictions for `samples`.
std::vector<std::size_t> predict(XrModel& model, std::span<const Sample> samples);
/// Fraction of correct argmax predictions. Throws DataError on an empty split.
double evaluate(XrModel& model, std::span<const Sample> samples);

struct CompareRow {
  std::string head;
  std::size_t seed_index = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t model_seed = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct HeadSummary {
  std::string head;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;        // ordered by head, then seed
  std::vector<HeadSummary> summary;    // one per head, input order

  const HeadSummary& of(HeadKind kind) const;
  std::string csv() const;
  std::string summary_csv() const;
  std::string svg() const;
};

/// Trains every head kind on the same data and seeds. Seed i uses
/// data_seed + i and model_seed + i.
CompareResult compare_heads(const TrainConfig& config, const std::vector<HeadKind>& kinds, std::size_t seeds);

struct SweepRow {
  std::size_t parts = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;
  bool is_default = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// True when the S=4 row is within one accuracy point of the best row.
  bool default_near_best = true;
  bool runtime_monotone = true;

  std::string csv() const;
  std::string svg() const;
};

SweepResult sweep_parts(const TrainConfig& config, const std::vector<std::size_t>& part_counts);

struct EmbeddingStats {
  std::vector<double> min_distances;  // per row, Euclidean distance to its nearest other row
  std::vector<double> edges;          // bins + 1 edges spanning [min, max] of min_distances
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double median = 0.0;

  std::string histogram_csv() const;
  std::string svg() const;
};

/// Nearest-neighbour distance structure of W embeddings [W x E].
/// Bins are equal-width over [min, max]; the last bin is closed.
EmbeddingStats analyze_embeddings(const Tensor& embeddings, std::size_t bins);

/// Top-2 principal-component coordinates of [W x E] embeddings, [W x 2].
/// Each component is signed so its largest-magnitude coordinate is positive;
/// components with (numerically) zero variance come back as zeros.
Tensor project_2d(const Tensor& embeddings);

/// Normalized attention [N x (S+1)] of one sample in eval mode.
std::vector<std::vector<double>> attention_map(XrModel& model, const Sample& sample);

/// Writes attention_<i>.csv (token, true part, one column per slot) and
/// attention_<i>.svg for the first `count` samples into `dir`.
void export_attention(XrModel& model, std::span<const Sample> samples, std::size_t count, const std::string& dir);

/// Finite-difference check of the full training loss (training-mode forward,
/// cross-entropy on loss_logits) over every trainable parameter, using one
/// batch of batch_size samples cycling through the classes.
std::vector<GradCheckEntry> pipeline_gradcheck(const TrainConfig& config, double eps = 1e-5);

/// Text features of the bare class names: each class token preceded by M zero
/// context vectors, [W x E].
Tensor class_name_embeddings(const XrModel& model);

/// Mutual information (nats) between two discrete labelings of equal length.
double mutual_information(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace xrhead
