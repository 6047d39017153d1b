#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsgnn/graph.hpp"
#include "tsgnn/tensor.hpp"

namespace tsgnn {

enum class Architecture { graphsage, gat, diffpool, sagpool };
enum class PoolMode { mean, max };

std::string to_string(Architecture arch);
std::string to_string(PoolMode mode);
Architecture parse_architecture(const std::string& text);
PoolMode parse_pool_mode(const std::string& text);

// Allowed input/hidden/output widths.
inline constexpr std::array<std::size_t, 5> kDimChoices{16, 32, 64, 96, 128};

struct ModelConfig {
  Architecture architecture = Architecture::graphsage;
  // graphsage/gat: message-passing layers; diffpool: convolutions before the
  // pooling layer; sagpool: convolution + pooling blocks.
  std::size_t num_layers = 2;
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t output_dim = 32;
  PoolMode global_pool = PoolMode::mean;
  std::size_t gat_heads = 4;
  // 0 = ceil(0.25 * largest graph), resolved by resolve_defaults().
  std::size_t diffpool_clusters = 0;
  double sagpool_ratio = 0.5;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Architecture defaults for values left unset: DiffPool uses three
// convolutions and ceil(0.25 * max_nodes) clusters, SAGPool three blocks.
ModelConfig resolve_defaults(ModelConfig config, const GraphDataset& dataset);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Saved parameter values, used for best-epoch checkpoints in memory.
using ParameterSnapshot = std::vector<std::vector<double>>;

class Encoder;

// Intermediate pooling results, filled when requested from embed().
struct ForwardTrace {
  Tensor diffpool_assignment;                       // n x clusters, row-stochastic
  std::vector<std::vector<std::size_t>> sagpool_kept;  // kept node indices per pooling block
};

// Nodes kept by one SAGPool block: ceil(ratio * n), at least 1.
std::size_t sagpool_keep_count(std::size_t n, double ratio);

// Graph encoder: learnable node-feature table followed by one of the four
// architectures, producing an output_dim graph embedding.
class GnnModel {
 public:
  GnnModel(ModelConfig config, std::size_t num_feature_categories, std::uint64_t seed);
  ~GnnModel();
  GnnModel(GnnModel&&) noexcept;
  GnnModel& operator=(GnnModel&&) noexcept;
  GnnModel(const GnnModel&) = delete;
  GnnModel& operator=(const GnnModel&) = delete;

  // Deep copy with independent parameter storage.
  GnnModel clone() const;

  Tensor embed(Tape& tape, const Graph& graph, ForwardTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  std::size_t num_feature_categories() const { return num_categories_; }
  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  void set_trainable(bool trainable);

  ParameterSnapshot snapshot() const;
  void restore(const ParameterSnapshot& snapshot);

 private:
  ModelConfig config_;
  std::size_t num_categories_ = 0;
  std::vector<NamedTensor> params_;
  std::unique_ptr<Encoder> encoder_;
};

// Element-wise mean or max over the rows of an n x d node-embedding matrix.
Tensor global_pool(Tape& tape, const Tensor& node_embeddings, PoolMode mode);

struct ClassifierConfig {
  // Fully-connected layers including the output layer, 1..3.
  std::size_t num_layers = 2;
  // A power of two 2^h with 1 <= h <= log2(embedding dim).
  std::size_t hidden_dim = 16;
  std::size_t num_classes = 2;

  void validate(std::size_t embedding_dim) const;
  bool operator==(const ClassifierConfig&) const = default;
};

enum class HeadInit {
  // Glorot hidden layers, zero output layer: predictions start uniform.
  zero_output,
  zeros,
};

// MLP mapping a graph embedding to class logits, relu between layers.
class ClassifierHead {
 public:
  ClassifierHead(ClassifierConfig config, std::size_t input_dim, std::uint64_t seed,
                 HeadInit init = HeadInit::zero_output);

  ClassifierHead clone() const;

  Tensor logits(Tape& tape, const Tensor& embedding) const;

  const ClassifierConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;

  ParameterSnapshot snapshot() const;
  void restore(const ParameterSnapshot& snapshot);

 private:
  ClassifierConfig config_;
  std::size_t input_dim_;
  std::vector<NamedTensor> params_;
};

// Class-probability vector from the head applied to embedding h.
Tensor classify(Tape& tape, const ClassifierHead& head, const Tensor& h);
// Index of the largest probability; ties go to the lower class.
std::size_t argmax(std::span<const double> probabilities);

// Checkpoint: JSON document with format tag and version, both configs and
// every parameter as (name, shape, values). Doubles round-trip exactly.
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  GnnModel model;
  std::optional<ClassifierHead> head;
};

void save_checkpoint(const std::filesystem::path& path, const GnnModel& model, const ClassifierHead* head);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tsgnn
