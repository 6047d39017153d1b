#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsgnn/analysis.hpp"
#include "tsgnn/graph.hpp"
#include "tsgnn/models.hpp"
#include "tsgnn/tensor.hpp"

namespace tsgnn {

enum class TrainMode { original, two_stage, two_stage_plus };

// "original", "2stg", "2stg+"; parse also accepts "2stg_plus".
std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

inline constexpr std::array<double, 5> kMarginChoices{0.5, 1.0, 1.5, 2.0, 2.5};

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const Triplet&) const = default;
};

struct TripletSample {
  std::vector<Triplet> triplets;
  std::size_t skipped_anchors = 0;  // anchors with no same-class partner
};

// One triplet per anchor in `restricted_to`, in that order. Positive and
// negative are drawn uniformly from `restricted_to`. Throws DomainError when
// fewer than two classes are present.
TripletSample sample_triplets(std::span<const std::size_t> labels, std::span<const std::size_t> restricted_to,
                              std::uint64_t seed);

// relu(|a-p|^2 - |a-n|^2 + margin).
Tensor triplet_loss(Tape& tape, const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin);

struct TrainConfig {
  TrainMode mode = TrainMode::two_stage;
  double margin = 1.0;
  double lr = 1e-3;
  std::size_t stage1_max_epochs = 200;
  std::size_t max_epochs = 100;  // Stage 2 and original
  std::size_t patience = 20;
  std::uint64_t seed = 0;  // split, initialisation and sampling
  ModelConfig model;
  ClassifierConfig classifier;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct Stage1Result {
  GnnModel model;                   // restored to the best validation epoch
  std::vector<double> train_loss;   // mean triplet loss, epochs 1..E
  std::vector<double> val_loss;     // all-triplets loss on validation, epochs 0..E
  std::size_t best_epoch = 0;
  std::vector<double> correlation_trace;  // validation embeddings, epochs 0..E
  // Validation split lacked two classes; stopping used the training loss.
  bool stopped_on_train_loss = false;
};

struct TrialResult {
  TrainConfig config;
  std::vector<double> stage1_train_loss;
  std::vector<double> stage1_val_loss;
  std::size_t stage1_best_epoch = 0;
  double initial_train_loss = 0.0;    // mean cross-entropy before any update
  std::vector<double> train_loss;     // mean cross-entropy, epochs 1..E
  std::vector<double> val_accuracy;   // epochs 0..E
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> correlation_trace;
  EmbeddingMatrix val_embeddings;  // best model, used by the analysis report
  std::optional<GnnModel> model;
  std::optional<ClassifierHead> head;
};

Stage1Result train_stage1(GnnModel model, const GraphDataset& dataset, const SplitPlan& split,
                          const TrainConfig& config);

// 2stg freezes the encoder and trains only the head; 2stg+ trains both.
// The head starts from `warm_start` when given, else zero-output init.
TrialResult train_stage2(Stage1Result stage1, const GraphDataset& dataset, const SplitPlan& split,
                         const TrainConfig& config, const ClassifierHead* warm_start = nullptr);

TrialResult train_original(GnnModel model, const GraphDataset& dataset, const SplitPlan& split,
                           const TrainConfig& config);

// Split from make_splits(n, config.seed), defaults resolved against the
// dataset, then the regime selected by config.mode.
TrialResult run_trial(const GraphDataset& dataset, const TrainConfig& config);

// Embeddings of the listed graphs, one row each, without recording gradients.
EmbeddingMatrix embed_graphs(GnnModel& model, const GraphDataset& dataset, std::span<const std::size_t> indices);

// Mean triplet loss over every (anchor, positive, negative) row triple the
// labels allow. Empty when no such triple exists.
std::optional<double> all_triplets_loss(const EmbeddingMatrix& embeddings, double margin);

// Mean inter-class over mean intra-class squared distance between rows.
double separation_ratio(const EmbeddingMatrix& embeddings);

struct TrialOutcome {
  std::size_t config_index = 0;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct SearchSummary {
  std::size_t best_config = 0;
  double mean_val_accuracy = 0.0;
  RunSummary test;
  std::size_t runs = 0;
  bool complete = false;  // exactly five runs for the chosen config
};

// Config with the highest mean validation accuracy (lowest index on ties) and
// its test mean / sample std.
SearchSummary select_configuration(std::span<const TrialOutcome> outcomes);

struct SearchResult {
  SearchSummary summary;
  std::vector<TrialOutcome> outcomes;
};

// Runs every (config, seed) pair. Throws DomainError on an empty grid.
SearchResult hyperparameter_search(const GraphDataset& dataset, std::span<const TrainConfig> grid,
                                   std::span<const std::uint64_t> seeds);

}  // namespace tsgnn
