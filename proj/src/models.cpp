#include "tsgnn/models.hpp"

#include <algorithm>
#include <cmath>

#include "tsgnn/error.hpp"
#include "tsgnn/rng.hpp"

namespace tsgnn {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::graphsage: return "graphsage";
    case Architecture::gat: return "gat";
    case Architecture::diffpool: return "diffpool";
    case Architecture::sagpool: return "sagpool";
  }
  return "unknown";
}

std::string to_string(PoolMode mode) { return mode == PoolMode::mean ? "mean" : "max"; }

Architecture parse_architecture(const std::string& text) {
  for (auto a : {Architecture::graphsage, Architecture::gat, Architecture::diffpool, Architecture::sagpool}) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("architecture: unknown value '" + text + "'");
}

PoolMode parse_pool_mode(const std::string& text) {
  if (text == "mean") return PoolMode::mean;
  if (text == "max") return PoolMode::max;
  throw ConfigError("global_pool: unknown value '" + text + "'");
}

void ModelConfig::validate() const {
  auto check_dim = [](const char* field, std::size_t v) {
    if (std::find(kDimChoices.begin(), kDimChoices.end(), v) == kDimChoices.end()) {
      throw ConfigError(std::string(field) + ": " + std::to_string(v) + " is not one of {16, 32, 64, 96, 128}");
    }
  };
  check_dim("input_dim", input_dim);
  check_dim("hidden_dim", hidden_dim);
  check_dim("output_dim", output_dim);
  if (num_layers < 1) throw ConfigError("num_layers: must be at least 1");
  if (gat_heads < 1) throw ConfigError("gat_heads: must be positive");
  if (architecture == Architecture::gat && hidden_dim % gat_heads != 0) {
    throw ConfigError("gat_heads: hidden_dim " + std::to_string(hidden_dim) + " is not divisible by " +
                      std::to_string(gat_heads) + " heads");
  }
  if (!(sagpool_ratio > 0.0 && sagpool_ratio <= 1.0)) throw ConfigError("sagpool_ratio: must lie in (0, 1]");
}

ModelConfig resolve_defaults(ModelConfig config, const GraphDataset& dataset) {
  if (config.architecture == Architecture::diffpool && config.diffpool_clusters == 0) {
    config.diffpool_clusters =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(dataset.max_nodes()))));
  }
  return config;
}

// ---------------------------------------------------------------------------
// Dense per-graph structure used at the autodiff boundary.

namespace {

struct DenseGraph {
  std::size_t n = 0;
  Tensor adjacency;  // edge multiplicities
};

DenseGraph densify(const Graph& g) {
  const std::size_t n = g.node_count();
  std::vector<double> a(n * n, 0.0);
  for (const auto& [u, v] : g.edges()) a[u * n + v] += 1.0;
  return {n, Tensor::from({n, n}, std::move(a))};
}

// Row-normalised adjacency without self-loops; isolated nodes get a zero row,
// so their neighbour mean is the zero vector.
Tensor mean_aggregator(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  std::vector<double> p(adjacency.values().begin(), adjacency.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += p[i * n + j];
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= s;
  }
  return Tensor::from({n, n}, std::move(p));
}

// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Tensor gcn_normalized(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  std::vector<double> a(adjacency.values().begin(), adjacency.values().end());
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j];
    inv_sqrt[i] = 1.0 / std::sqrt(s);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
  return Tensor::from({n, n}, std::move(a));
}

Tensor submatrix(const Tensor& m, const std::vector<std::size_t>& keep) {
  const std::size_t n = m.rows(), k = keep.size();
  std::vector<double> out(k * k);
  auto mv = m.values();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = mv[keep[i] * n + keep[j]];
  return Tensor::from({k, k}, std::move(out));
}

class ParamBuilder {
 public:
  ParamBuilder(std::vector<NamedTensor>& out, std::uint64_t seed) : out_(out), rng_(seed) {}

  Tensor glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng_.uniform(-limit, limit);
    return add(name, Tensor::from({fan_in, fan_out}, std::move(v), true));
  }

  Tensor zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape), true)); }

  Tensor normal(const std::string& name, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& x : t.mutable_values()) x = rng_.normal();
    return add(name, t);
  }

 private:
  Tensor add(const std::string& name, Tensor t) {
    out_.push_back({name, t});
    return t;
  }
  std::vector<NamedTensor>& out_;
  Rng rng_;
};

// concat(h, P h) W + b: the neighbour-mean merge used by GraphSAGE and by
// DiffPool's embedding/assignment networks.
struct SageConv {
  Tensor weight, bias;
  SageConv(ParamBuilder& pb, const std::string& name, std::size_t in, std::size_t out)
      : weight(pb.glorot(name + ".weight", 2 * in, out)), bias(pb.zeros(name + ".bias", {out})) {}
  Tensor operator()(Tape& t, const Tensor& aggregator, const Tensor& h) const {
    return t.add(t.matmul(t.concat({h, t.matmul(aggregator, h)}, 1), weight), bias);
  }
};

struct GcnConv {
  Tensor weight, bias;
  GcnConv(ParamBuilder& pb, const std::string& name, std::size_t in, std::size_t out)
      : weight(pb.glorot(name + ".weight", in, out)), bias(pb.zeros(name + ".bias", {out})) {}
  Tensor operator()(Tape& t, const Tensor& norm_adj, const Tensor& h) const {
    return t.add(t.matmul(norm_adj, t.matmul(h, weight)), bias);
  }
};

}  // namespace

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Tensor forward(Tape& tape, const DenseGraph& graph, const Tensor& x, ForwardTrace* trace) const = 0;
};

namespace {

class SageEncoder final : public Encoder {
 public:
  SageEncoder(const ModelConfig& cfg, ParamBuilder& pb) : pool_(cfg.global_pool) {
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
      const std::size_t in = k == 0 ? cfg.input_dim : cfg.hidden_dim;
      const std::size_t out = k + 1 == cfg.num_layers ? cfg.output_dim : cfg.hidden_dim;
      layers_.emplace_back(pb, "sage." + std::to_string(k), in, out);
    }
  }

  Tensor forward(Tape& tape, const DenseGraph& graph, const Tensor& x, ForwardTrace* trace) const override {
    (void)trace;
    const Tensor agg = mean_aggregator(graph.adjacency);
    Tensor h = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      h = layers_[k](tape, agg, h);
      if (k + 1 < layers_.size()) h = tape.relu(h);
    }
    return global_pool(tape, h, pool_);
  }

 private:
  PoolMode pool_;
  std::vector<SageConv> layers_;
};

// Multi-head attention over N(v) plus a self-loop. Hidden layers concatenate
// heads; the last layer averages them.
class GatEncoder final : public Encoder {
 public:
  GatEncoder(const ModelConfig& cfg, ParamBuilder& pb) : pool_(cfg.global_pool) {
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
      const bool last = k + 1 == cfg.num_layers;
      const std::size_t in = k == 0 ? cfg.input_dim : cfg.hidden_dim;
      const std::size_t per_head = last ? cfg.output_dim : cfg.hidden_dim / cfg.gat_heads;
      Layer layer;
      layer.average = last;
      for (std::size_t h = 0; h < cfg.gat_heads; ++h) {
        const std::string name = "gat." + std::to_string(k) + ".head" + std::to_string(h);
        layer.heads.push_back({pb.glorot(name + ".weight", in, per_head), pb.glorot(name + ".att_src", per_head, 1),
                               pb.glorot(name + ".att_dst", per_head, 1)});
      }
      layer.bias = pb.zeros("gat." + std::to_string(k) + ".bias", {last ? cfg.output_dim : cfg.hidden_dim});
      layers_.push_back(std::move(layer));
    }
  }

  Tensor forward(Tape& tape, const DenseGraph& graph, const Tensor& x, ForwardTrace* trace) const override {
    (void)trace;
    const std::size_t n = graph.n;
    std::unique_ptr<bool[]> mask(new bool[n * n]);
    auto adj = graph.adjacency.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = i == j || adj[i * n + j] > 0.0;
    const std::span<const bool> mask_view(mask.get(), n * n);
    const Tensor ones_row = Tensor::filled({1, n}, 1.0);
    const Tensor ones_col = Tensor::filled({n, 1}, 1.0);

    Tensor h = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Layer& layer = layers_[k];
      std::vector<Tensor> outs;
      for (const Head& head : layer.heads) {
        Tensor z = tape.matmul(h, head.weight);
        // e_ij = leaky_relu(a_src . z_i + a_dst . z_j)
        Tensor src = tape.matmul(tape.matmul(z, head.att_src), ones_row);
        Tensor dst = tape.matmul(ones_col, tape.transpose(tape.matmul(z, head.att_dst)));
        Tensor att = tape.row_softmax(tape.leaky_relu(tape.add(src, dst), 0.2), mask_view);
        outs.push_back(tape.matmul(att, z));
      }
      Tensor merged;
      if (layer.average) {
        merged = outs[0];
        for (std::size_t i = 1; i < outs.size(); ++i) merged = tape.add(merged, outs[i]);
        merged = tape.scale(merged, 1.0 / static_cast<double>(outs.size()));
      } else {
        merged = tape.concat(outs, 1);
      }
      h = tape.add(merged, layer.bias);
      if (k + 1 < layers_.size()) h = tape.relu(h);
    }
    return global_pool(tape, h, pool_);
  }

 private:
  struct Head {
    Tensor weight, att_src, att_dst;
  };
  struct Layer {
    std::vector<Head> heads;
    Tensor bias;
    bool average = false;
  };
  PoolMode pool_;
  std::vector<Layer> layers_;
};

// Embedding and assignment networks of num_layers neighbour-mean convolutions,
// one soft-assignment pooling layer into C clusters, a convolution on the
// coarsened graph, then a final assignment of all clusters to one supernode.
class DiffPoolEncoder final : public Encoder {
 public:
  DiffPoolEncoder(const ModelConfig& cfg, ParamBuilder& pb) {
    if (cfg.diffpool_clusters == 0) throw ConfigError("diffpool_clusters: unresolved (call resolve_defaults)");
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
      const std::size_t in = k == 0 ? cfg.input_dim : cfg.hidden_dim;
      const std::size_t assign_out = k + 1 == cfg.num_layers ? cfg.diffpool_clusters : cfg.hidden_dim;
      embed_.emplace_back(pb, "diffpool.embed." + std::to_string(k), in, cfg.hidden_dim);
      assign_.emplace_back(pb, "diffpool.assign." + std::to_string(k), in, assign_out);
    }
    post_ = std::make_unique<SageConv>(pb, "diffpool.post", cfg.hidden_dim, cfg.output_dim);
  }

  Tensor forward(Tape& tape, const DenseGraph& graph, const Tensor& x, ForwardTrace* trace) const override {
    const Tensor agg = mean_aggregator(graph.adjacency);
    Tensor z = x, s = x;
    for (std::size_t k = 0; k < embed_.size(); ++k) {
      z = embed_[k](tape, agg, z);
      s = assign_[k](tape, agg, s);
      if (k + 1 < embed_.size()) {
        z = tape.relu(z);
        s = tape.relu(s);
      }
    }
    z = tape.relu(z);
    Tensor assignment = tape.row_softmax(s);
    if (trace) trace->diffpool_assignment = assignment;
    Tensor st = tape.transpose(assignment);
    Tensor coarse_x = tape.matmul(st, z);
    Tensor coarse_adj = tape.matmul(tape.matmul(st, graph.adjacency), assignment);
    Tensor coarse = (*post_)(tape, tape.row_normalize(coarse_adj), coarse_x);
    // One supernode: the assignment is a column of ones, so pooling sums clusters.
    return tape.reduce_sum_axis(coarse, 0);
  }


 private:
  std::vector<SageConv> embed_;
  std::vector<SageConv> assign_;
  std::unique_ptr<SageConv> post_;
};

// num_layers blocks of GCN convolution + self-attention top-k pooling.
// Each block's readout is concat(mean, max); readouts are summed and
// projected to output_dim.
class SagPoolEncoder final : public Encoder {
 public:
  SagPoolEncoder(const ModelConfig& cfg, ParamBuilder& pb) : ratio_(cfg.sagpool_ratio) {
    for (std::size_t k = 0; k < cfg.num_layers; ++k) {
      const std::size_t in = k == 0 ? cfg.input_dim : cfg.hidden_dim;
      const std::string name = "sagpool." + std::to_string(k);
      convs_.emplace_back(pb, name + ".conv", in, cfg.hidden_dim);
      scores_.emplace_back(pb, name + ".score", cfg.hidden_dim, 1);
    }
    out_weight_ = pb.glorot("sagpool.out.weight", 2 * cfg.hidden_dim, cfg.output_dim);
    out_bias_ = pb.zeros("sagpool.out.bias", {cfg.output_dim});
  }

  Tensor forward(Tape& tape, const DenseGraph& graph, const Tensor& x, ForwardTrace* trace) const override {
    Tensor adj = graph.adjacency;
    Tensor h = x;
    Tensor readout;
    for (std::size_t k = 0; k < convs_.size(); ++k) {
      const Tensor norm = gcn_normalized(adj);
      h = tape.relu(convs_[k](tape, norm, h));
      const std::size_t n = h.rows();
      Tensor score = tape.reshape(scores_[k](tape, norm, h), {n});
      TopK top = tape.top_k_select(score, sagpool_keep_count(n, ratio_));
      if (trace) trace->sagpool_kept.push_back(top.indices);
      const std::size_t k_keep = top.indices.size();
      Tensor gate = tape.reshape(tape.tanh(top.values), {k_keep, 1});
      h = tape.mul(tape.gather_rows(h, top.indices), gate);
      adj = submatrix(adj, top.indices);
      Tensor level = tape.concat({tape.reduce_mean_axis(h, 0), tape.reduce_max_axis(h, 0)}, 0);
      readout = readout.defined() ? tape.add(readout, level) : level;
    }
    return tape.add(tape.matmul(readout, out_weight_), out_bias_);
  }

 private:
  double ratio_;
  std::vector<GcnConv> convs_;
  std::vector<GcnConv> scores_;
  Tensor out_weight_, out_bias_;
};

}  // namespace

std::size_t sagpool_keep_count(std::size_t n, double ratio) {
  const double k = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, std::max<std::size_t>(n, 1));
}

// ---------------------------------------------------------------------------
// GnnModel

GnnModel::GnnModel(ModelConfig config, std::size_t num_feature_categories, std::uint64_t seed)
    : config_(config), num_categories_(num_feature_categories) {
  config_.validate();
  if (num_categories_ == 0) throw ConfigError("num_feature_categories: must be positive");
  ParamBuilder pb(params_, seed);
  pb.normal("feature_table", {num_categories_, config_.input_dim});
  switch (config_.architecture) {
    case Architecture::graphsage: encoder_ = std::make_unique<SageEncoder>(config_, pb); break;
    case Architecture::gat: encoder_ = std::make_unique<GatEncoder>(config_, pb); break;
    case Architecture::diffpool: encoder_ = std::make_unique<DiffPoolEncoder>(config_, pb); break;
    case Architecture::sagpool: encoder_ = std::make_unique<SagPoolEncoder>(config_, pb); break;
  }
}

GnnModel::~GnnModel() = default;
GnnModel::GnnModel(GnnModel&&) noexcept = default;
GnnModel& GnnModel::operator=(GnnModel&&) noexcept = default;

GnnModel GnnModel::clone() const {
  GnnModel copy(config_, num_categories_, 0);
  copy.restore(snapshot());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i].tensor.set_requires_grad(params_[i].tensor.requires_grad());
  }
  return copy;
}

Tensor GnnModel::embed(Tape& tape, const Graph& graph, ForwardTrace* trace) const {
  if (graph.node_count() == 0) throw DomainError("embed: graph " + graph.graph_id() + " has no nodes");
  for (std::size_t c : graph.node_categories()) {
    if (c >= num_categories_) {
      throw ContractViolation("embed: node category " + std::to_string(c) + " outside feature table of " +
                              std::to_string(num_categories_) + " rows");
    }
  }
  const DenseGraph dense = densify(graph);
  const Tensor x = tape.gather_rows(params_[0].tensor, graph.node_categories());
  return encoder_->forward(tape, dense, x, trace);
}

std::vector<Tensor> GnnModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void GnnModel::set_trainable(bool trainable) {
  for (auto& p : params_) {
    p.tensor.set_requires_grad(trainable);
    p.tensor.clear_grad();
  }
}

namespace {

ParameterSnapshot snapshot_of(const std::vector<NamedTensor>& params) {
  ParameterSnapshot out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore_into(std::vector<NamedTensor>& params, const ParameterSnapshot& snap) {
  if (snap.size() != params.size()) throw ContractViolation("restore: snapshot has wrong parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    if (snap[i].size() != dst.size()) {
      throw ContractViolation("restore: size mismatch for parameter " + params[i].name);
    }
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

}  // namespace

ParameterSnapshot GnnModel::snapshot() const { return snapshot_of(params_); }
void GnnModel::restore(const ParameterSnapshot& snap) { restore_into(params_, snap); }

Tensor global_pool(Tape& tape, const Tensor& node_embeddings, PoolMode mode) {
  if (node_embeddings.rank() != 2) {
    throw ConfigError("global_pool: expected n x d node embeddings, got " + shape_string(node_embeddings.shape()));
  }
  if (node_embeddings.rows() == 0) throw DomainError("global_pool: no nodes");
  return mode == PoolMode::mean ? tape.reduce_mean_axis(node_embeddings, 0) : tape.reduce_max_axis(node_embeddings, 0);
}

// ---------------------------------------------------------------------------
// Classifier head

void ClassifierConfig::validate(std::size_t embedding_dim) const {
  if (num_layers < 1 || num_layers > 3) throw ConfigError("classifier_layers: must be 1, 2 or 3");
  if (num_classes < 2) throw ConfigError("num_classes: need at least 2 classes");
  if (num_layers > 1) {
    const bool power_of_two = hidden_dim >= 2 && (hidden_dim & (hidden_dim - 1)) == 0;
    if (!power_of_two || hidden_dim > embedding_dim) {
      throw ConfigError("classifier_hidden: " + std::to_string(hidden_dim) +
                        " is not a power of two in [2, " + std::to_string(embedding_dim) + "]");
    }
  }
}

ClassifierHead::ClassifierHead(ClassifierConfig config, std::size_t input_dim, std::uint64_t seed, HeadInit init)
    : config_(config), input_dim_(input_dim) {
  config_.validate(input_dim);
  ParamBuilder pb(params_, seed);
  for (std::size_t k = 0; k < config_.num_layers; ++k) {
    const bool last = k + 1 == config_.num_layers;
    const std::size_t in = k == 0 ? input_dim : config_.hidden_dim;
    const std::size_t out = last ? config_.num_classes : config_.hidden_dim;
    const std::string name = "head." + std::to_string(k);
    if (last || init == HeadInit::zeros) {
      pb.zeros(name + ".weight", {in, out});
    } else {
      pb.glorot(name + ".weight", in, out);
    }
    pb.zeros(name + ".bias", {out});
  }
}

ClassifierHead ClassifierHead::clone() const {
  ClassifierHead copy(config_, input_dim_, 0, HeadInit::zeros);
  copy.restore(snapshot());
  return copy;
}

Tensor ClassifierHead::logits(Tape& tape, const Tensor& embedding) const {
  if (embedding.size() != input_dim_ || embedding.rows() != 1) {
    throw ContractViolation("classifier: embedding of shape " + shape_string(embedding.shape()) + " for input dim " +
                            std::to_string(input_dim_));
  }
  Tensor h = embedding.rank() == 1 ? embedding : tape.reshape(embedding, {input_dim_});
  for (std::size_t k = 0; k < config_.num_layers; ++k) {
    h = tape.add(tape.matmul(h, params_[2 * k].tensor), params_[2 * k + 1].tensor);
    if (k + 1 < config_.num_layers) h = tape.relu(h);
  }
  return h;
}

std::vector<Tensor> ClassifierHead::parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

ParameterSnapshot ClassifierHead::snapshot() const { return snapshot_of(params_); }
void ClassifierHead::restore(const ParameterSnapshot& snap) { restore_into(params_, snap); }

Tensor classify(Tape& tape, const ClassifierHead& head, const Tensor& h) {
  return tape.row_softmax(head.logits(tape, h));
}

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

}  // namespace tsgnn
