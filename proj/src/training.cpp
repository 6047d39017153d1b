#include "tsgnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "tsgnn/adam.hpp"
#include "tsgnn/error.hpp"
#include "tsgnn/rng.hpp"

namespace tsgnn {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::original: return "original";
    case TrainMode::two_stage: return "2stg";
    case TrainMode::two_stage_plus: return "2stg+";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "original") return TrainMode::original;
  if (text == "2stg") return TrainMode::two_stage;
  if (text == "2stg+" || text == "2stg_plus") return TrainMode::two_stage_plus;
  throw ConfigError("mode: unknown training mode '" + text + "' (expected original, 2stg or 2stg+)");
}

void TrainConfig::validate() const {
  const bool margin_ok = std::any_of(kMarginChoices.begin(), kMarginChoices.end(),
                                     [&](double m) { return std::abs(m - margin) < 1e-12; });
  if (!margin_ok) throw ConfigError("margin: " + std::to_string(margin) + " is not one of 0.5, 1.0, 1.5, 2.0, 2.5");
  if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("lr: must be a finite non-negative number");
  if (stage1_max_epochs == 0) throw ConfigError("stage1_max_epochs: must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs: must be at least 1");
  if (patience >= max_epochs) throw ConfigError("patience: must be smaller than max_epochs");
  if (patience >= stage1_max_epochs) throw ConfigError("patience: must be smaller than stage1_max_epochs");
  model.validate();
  classifier.validate(model.output_dim);
}

namespace {

constexpr std::uint64_t kInitStream = 0x6e6e;
constexpr std::uint64_t kHeadStream = 0x4ead;
constexpr std::uint64_t kTripletStream = 0x7121;
constexpr std::uint64_t kOrderStream = 0x0d3;

// Parameters a loss did not reach get an explicit zero gradient, so Adam can
// still step them.
void ensure_grads(const std::vector<Tensor>& params) {
  for (Tensor p : params) p.mutable_grad();
}

void require_two_classes(const GraphDataset& dataset, std::span<const std::size_t> indices, const char* what) {
  std::set<std::size_t> seen;
  for (std::size_t i : indices) seen.insert(dataset.graphs.at(i).label());
  if (seen.size() < 2) throw DomainError(std::string(what) + ": training split contains a single class");
}

double correlation_or_zero(const EmbeddingMatrix& e) {
  if (e.values.rows() < 2 || e.values.cols() < 2) return 0.0;
  return avg_abs_correlation(e);
}

std::vector<double> row_of(const EmbeddingMatrix& e, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(e.values.cols()));
  for (Eigen::Index c = 0; c < e.values.cols(); ++c) out[static_cast<std::size_t>(c)] = e.values(r, c);
  return out;
}

struct Evaluation {
  double accuracy = 0.0;
  EmbeddingMatrix embeddings;
};

Evaluation evaluate(GnnModel& model, const ClassifierHead& head, const GraphDataset& dataset,
                    std::span<const std::size_t> indices) {
  Evaluation ev;
  ev.embeddings = embed_graphs(model, dataset, indices);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Tape tape;
    const Tensor p = classify(tape, head, Tensor::vector(row_of(ev.embeddings, static_cast<Eigen::Index>(r))));
    if (argmax(p.values()) == dataset.graphs[indices[r]].label()) ++correct;
  }
  ev.accuracy = indices.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(indices.size());
  return ev;
}

// Cross-entropy training of head (and encoder unless frozen) with
// validation-accuracy early stopping. Epoch 0 is the untrained state and is a
// selection candidate; the earliest best epoch wins.
void supervised_training(GnnModel& model, ClassifierHead& head, bool frozen, const GraphDataset& dataset,
                         const SplitPlan& split, const TrainConfig& config, TrialResult& result,
                         bool trace_correlation) {
  model.set_trainable(!frozen);
  std::vector<Tensor> params = head.parameters();
  if (!frozen) {
    const auto encoder = model.parameters();
    params.insert(params.begin(), encoder.begin(), encoder.end());
  }
  Adam adam(params, AdamOptions{.lr = config.lr});

  // With a frozen encoder the train embeddings never change.
  std::unordered_map<std::size_t, std::vector<double>> cached;
  if (frozen) {
    const EmbeddingMatrix e = embed_graphs(model, dataset, split.train);
    for (std::size_t r = 0; r < split.train.size(); ++r) cached[split.train[r]] = row_of(e, static_cast<Eigen::Index>(r));
  }
  auto embedding = [&](Tape& tape, std::size_t idx) {
    if (frozen) return Tensor::vector(cached.at(idx));
    return model.embed(tape, dataset.graphs[idx]);
  };

  double initial = 0.0;
  for (std::size_t idx : split.train) {
    Tape tape;
    initial += tape.cross_entropy(head.logits(tape, embedding(tape, idx)), dataset.graphs[idx].label()).item();
  }
  result.initial_train_loss = initial / static_cast<double>(split.train.size());

  Evaluation ev = evaluate(model, head, dataset, split.val);
  result.val_accuracy.push_back(ev.accuracy);
  if (trace_correlation) result.correlation_trace.push_back(correlation_or_zero(ev.embeddings));
  double best = ev.accuracy;
  std::size_t best_epoch = 0;
  ParameterSnapshot best_model = model.snapshot();
  ParameterSnapshot best_head = head.snapshot();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng order_rng(derive_seed(config.seed, kOrderStream, epoch));
    order_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t idx : order) {
      Tape tape;
      const Tensor loss = tape.cross_entropy(head.logits(tape, embedding(tape, idx)), dataset.graphs[idx].label());
      total += loss.item();
      tape.backward(loss);
      ensure_grads(params);
      adam.step();
    }
    result.train_loss.push_back(total / static_cast<double>(order.size()));

    ev = evaluate(model, head, dataset, split.val);
    result.val_accuracy.push_back(ev.accuracy);
    if (trace_correlation) result.correlation_trace.push_back(correlation_or_zero(ev.embeddings));
    if (ev.accuracy > best) {
      best = ev.accuracy;
      best_epoch = epoch;
      best_model = model.snapshot();
      best_head = head.snapshot();
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }

  model.restore(best_model);
  head.restore(best_head);
  result.best_epoch = best_epoch;
  result.best_val_accuracy = best;
  const Evaluation test = evaluate(model, head, dataset, split.test);
  result.test_accuracy = test.accuracy;
  result.val_embeddings = embed_graphs(model, dataset, split.val);
  model.set_trainable(true);
}

void check_classes(const TrainConfig& config, const GraphDataset& dataset) {
  if (config.classifier.num_classes != dataset.num_classes) {
    throw ConfigError("classifier.num_classes: " + std::to_string(config.classifier.num_classes) +
                      " does not match the dataset's " + std::to_string(dataset.num_classes) + " classes");
  }
}

}  // namespace

EmbeddingMatrix embed_graphs(GnnModel& model, const GraphDataset& dataset, std::span<const std::size_t> indices) {
  std::vector<Tensor> params = model.parameters();
  std::vector<bool> flags;
  for (const auto& p : params) flags.push_back(p.requires_grad());
  struct Restore {
    std::vector<Tensor>& params;
    std::vector<bool>& flags;
    ~Restore() {
      for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(flags[i]);
    }
  } restore{params, flags};
  model.set_trainable(false);

  EmbeddingMatrix e;
  const auto d = static_cast<Eigen::Index>(model.config().output_dim);
  e.values.resize(static_cast<Eigen::Index>(indices.size()), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Tape tape;
    const Tensor h = model.embed(tape, dataset.graphs.at(indices[r]));
    for (Eigen::Index c = 0; c < d; ++c) e.values(static_cast<Eigen::Index>(r), c) = h.at(static_cast<std::size_t>(c));
    e.labels.push_back(dataset.graphs[indices[r]].label());
  }
  return e;
}

double separation_ratio(const EmbeddingMatrix& e) {
  if (e.labels.size() != static_cast<std::size_t>(e.values.rows())) {
    throw ContractViolation("separation_ratio: embeddings need labels");
  }
  double inter = 0.0, intra = 0.0;
  std::size_t n_inter = 0, n_intra = 0;
  for (Eigen::Index i = 0; i < e.values.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < e.values.rows(); ++j) {
      const double d = (e.values.row(i) - e.values.row(j)).squaredNorm();
      if (e.labels[static_cast<std::size_t>(i)] == e.labels[static_cast<std::size_t>(j)]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0) throw DomainError("separation_ratio: need same-class and cross-class pairs");
  intra /= static_cast<double>(n_intra);
  inter /= static_cast<double>(n_inter);
  if (!(intra > 0.0)) throw DomainError("separation_ratio: classes have zero spread");
  return inter / intra;
}

std::optional<double> all_triplets_loss(const EmbeddingMatrix& e, double margin) {
  if (e.labels.size() != static_cast<std::size_t>(e.values.rows())) {
    throw ContractViolation("all_triplets_loss: embeddings need labels");
  }
  const Eigen::Index n = e.values.rows();
  Eigen::MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) dist(i, j) = (e.values.row(i) - e.values.row(j)).squaredNorm();
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const std::size_t la = e.labels[static_cast<std::size_t>(a)];
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == a || e.labels[static_cast<std::size_t>(p)] != la) continue;
      for (Eigen::Index q = 0; q < n; ++q) {
        if (e.labels[static_cast<std::size_t>(q)] == la) continue;
        total += std::max(0.0, dist(a, p) - dist(a, q) + margin);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

Stage1Result train_stage1(GnnModel model, const GraphDataset& dataset, const SplitPlan& split,
                          const TrainConfig& config) {
  config.validate();
  const std::vector<std::size_t> labels = dataset.labels();

  const auto val_labels = [&] {
    std::vector<std::size_t> out;
    for (std::size_t i : split.val) out.push_back(labels[i]);
    return out;
  }();
  const bool val_usable = std::set<std::size_t>(val_labels.begin(), val_labels.end()).size() >= 2;

  Stage1Result res{std::move(model), {}, {}, 0, {}, !val_usable};
  GnnModel& m = res.model;
  m.set_trainable(true);
  const std::vector<Tensor> params = m.parameters();
  Adam adam(params, AdamOptions{.lr = config.lr});

  auto validate_epoch = [&] {
    const EmbeddingMatrix e = embed_graphs(m, dataset, split.val);
    res.correlation_trace.push_back(correlation_or_zero(e));
    if (!val_usable) return;
    const auto loss = all_triplets_loss(e, config.margin);
    if (!loss) {
      res.stopped_on_train_loss = true;
      return;
    }
    res.val_loss.push_back(*loss);
  };

  validate_epoch();
  double best = res.stopped_on_train_loss ? INFINITY : res.val_loss.back();
  ParameterSnapshot best_params = m.snapshot();

  for (std::size_t epoch = 1; epoch <= config.stage1_max_epochs; ++epoch) {
    std::vector<Triplet> triplets =
        sample_triplets(labels, split.train, derive_seed(config.seed, kTripletStream, epoch)).triplets;
    Rng order_rng(derive_seed(config.seed, kOrderStream, epoch));
    order_rng.shuffle(triplets);
    double total = 0.0;
    for (const auto& t : triplets) {
      Tape tape;
      const Tensor a = m.embed(tape, dataset.graphs[t.anchor]);
      const Tensor p = m.embed(tape, dataset.graphs[t.positive]);
      const Tensor n = m.embed(tape, dataset.graphs[t.negative]);
      const Tensor loss = triplet_loss(tape, a, p, n, config.margin);
      total += loss.item();
      tape.backward(loss);
      ensure_grads(params);
      adam.step();
    }
    res.train_loss.push_back(triplets.empty() ? 0.0 : total / static_cast<double>(triplets.size()));
    validate_epoch();

    const double metric = res.stopped_on_train_loss ? res.train_loss.back() : res.val_loss.back();
    if (metric < best) {
      best = metric;
      res.best_epoch = epoch;
      best_params = m.snapshot();
    } else if (epoch - res.best_epoch >= config.patience) {
      break;
    }
  }
  m.restore(best_params);
  return res;
}

TrialResult train_stage2(Stage1Result stage1, const GraphDataset& dataset, const SplitPlan& split,
                         const TrainConfig& config, const ClassifierHead* warm_start) {
  if (config.mode == TrainMode::original) {
    throw ContractViolation("train_stage2: mode 'original' is trained by train_original");
  }
  config.validate();
  check_classes(config, dataset);
  require_two_classes(dataset, split.train, "train_stage2");

  TrialResult result;
  result.config = config;
  result.stage1_train_loss = std::move(stage1.train_loss);
  result.stage1_val_loss = std::move(stage1.val_loss);
  result.stage1_best_epoch = stage1.best_epoch;
  result.correlation_trace = std::move(stage1.correlation_trace);

  GnnModel model = std::move(stage1.model);
  ClassifierHead head = warm_start ? warm_start->clone()
                                   : ClassifierHead(config.classifier, model.config().output_dim,
                                                    derive_seed(config.seed, kHeadStream));
  if (head.config() != config.classifier || head.input_dim() != model.config().output_dim) {
    throw ContractViolation("train_stage2: warm-start head does not match the configuration");
  }
  const bool frozen = config.mode == TrainMode::two_stage;
  supervised_training(model, head, frozen, dataset, split, config, result, !frozen);
  if (!frozen && !result.correlation_trace.empty()) {
    // Stage 2 epoch 0 repeats the restored Stage 1 state.
    result.correlation_trace.erase(result.correlation_trace.end() - static_cast<std::ptrdiff_t>(result.val_accuracy.size()));
  }
  result.model = std::move(model);
  result.head = std::move(head);
  return result;
}

TrialResult train_original(GnnModel model, const GraphDataset& dataset, const SplitPlan& split,
                           const TrainConfig& config) {
  if (config.mode != TrainMode::original) {
    throw ContractViolation("train_original: mode must be 'original', got '" + to_string(config.mode) + "'");
  }
  config.validate();
  check_classes(config, dataset);
  require_two_classes(dataset, split.train, "train_original");

  TrialResult result;
  result.config = config;
  ClassifierHead head(config.classifier, model.config().output_dim, derive_seed(config.seed, kHeadStream));
  supervised_training(model, head, false, dataset, split, config, result, true);
  result.model = std::move(model);
  result.head = std::move(head);
  return result;
}

TrialResult run_trial(const GraphDataset& dataset, const TrainConfig& config) {
  TrainConfig resolved = config;
  resolved.model = resolve_defaults(config.model, dataset);
  resolved.classifier.num_classes = dataset.num_classes;
  resolved.validate();
  const SplitPlan split = make_splits(dataset.graphs.size(), resolved.seed);
  GnnModel model(resolved.model, dataset.num_feature_categories, derive_seed(resolved.seed, kInitStream));
  if (resolved.mode == TrainMode::original) return train_original(std::move(model), dataset, split, resolved);
  require_two_classes(dataset, split.train, "train_stage1");
  return train_stage2(train_stage1(std::move(model), dataset, split, resolved), dataset, split, resolved);
}

}  // namespace tsgnn
