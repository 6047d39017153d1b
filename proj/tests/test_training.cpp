#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gradcheck.hpp"
#include "test_support.hpp"
#include "tsgnn/error.hpp"
#include "tsgnn/training.hpp"

using namespace tsgnn;
using namespace tsgnn::testing;

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

TrainConfig small_train_config(TrainMode mode, std::uint64_t seed = 0) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.lr = 1e-3;
  c.margin = 1.0;
  c.model.input_dim = c.model.hidden_dim = c.model.output_dim = 16;
  c.classifier.num_layers = 2;
  c.classifier.hidden_dim = 8;
  c.stage1_max_epochs = 60;
  c.max_epochs = 40;
  c.patience = 10;
  return c;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<double> row(const EmbeddingMatrix& e, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(e.values.cols()));
  for (Eigen::Index c = 0; c < e.values.cols(); ++c) v[static_cast<std::size_t>(c)] = e.values(r, c);
  return v;
}

}  // namespace

TEST(SampleTripletsTest, ForcedChoices) {
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const auto idx = iota_indices(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = sample_triplets(labels, idx, seed);
    ASSERT_EQ(s.triplets.size(), 4u);
    EXPECT_EQ(s.skipped_anchors, 0u);
    EXPECT_EQ(s.triplets[0].anchor, 0u);
    EXPECT_EQ(s.triplets[0].positive, 1u);
    EXPECT_TRUE(s.triplets[0].negative == 2u || s.triplets[0].negative == 3u);
  }
}

TEST(SampleTripletsTest, SkipsAnchorsWithoutPartner) {
  const std::vector<std::size_t> labels{0, 1, 1};
  const auto s = sample_triplets(labels, iota_indices(3), 4);
  ASSERT_EQ(s.triplets.size(), 2u);
  EXPECT_EQ(s.skipped_anchors, 1u);
  for (const auto& t : s.triplets) EXPECT_NE(t.anchor, 0u);
}

TEST(SampleTripletsTest, SingleClassIsDomainError) {
  const std::vector<std::size_t> labels{1, 1, 1};
  EXPECT_THROW(sample_triplets(labels, iota_indices(3), 0), DomainError);
  EXPECT_THROW(sample_triplets(labels, std::vector<std::size_t>{}, 0), DomainError);
}

TEST(SampleTripletsTest, ThousandBalancedGraphs) {
  std::vector<std::size_t> labels(1000);
  for (std::size_t i = 0; i < 1000; ++i) labels[i] = i % 2;
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto s = sample_triplets(labels, iota_indices(1000), seed);
    ASSERT_EQ(s.triplets.size(), 1000u);
    for (std::size_t i = 0; i < 1000; ++i) ASSERT_EQ(s.triplets[i].anchor, i);
  }
}

TEST(SampleTripletsTest, InvariantsOverManySamples) {
  Rng rng(3);
  std::size_t checked = 0;
  while (checked < 100000) {
    const std::size_t n = 2 + rng.index(60);
    const std::size_t classes = 2 + rng.index(4);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.index(classes);
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.7) subset.push_back(i);
    std::set<std::size_t> present;
    for (std::size_t i : subset) present.insert(labels[i]);
    if (present.size() < 2) {
      EXPECT_THROW(sample_triplets(labels, subset, rng.next()), DomainError);
      continue;
    }
    std::map<std::size_t, std::size_t> class_size;
    for (std::size_t i : subset) ++class_size[labels[i]];
    std::size_t lonely = 0;
    for (std::size_t i : subset) lonely += class_size[labels[i]] == 1;

    const auto s = sample_triplets(labels, subset, rng.next());
    ASSERT_EQ(s.triplets.size() + s.skipped_anchors, subset.size());
    ASSERT_EQ(s.skipped_anchors, lonely);
    const std::set<std::size_t> allowed(subset.begin(), subset.end());
    for (const auto& t : s.triplets) {
      ASSERT_EQ(labels[t.anchor], labels[t.positive]);
      ASSERT_NE(labels[t.anchor], labels[t.negative]);
      ASSERT_NE(t.anchor, t.positive);
      ASSERT_TRUE(allowed.count(t.positive) && allowed.count(t.negative));
    }
    checked += s.triplets.size();
  }
}

TEST(SampleTripletsTest, PositivesAndNegativesAreUniform) {
  // Anchor 0 with class-0 partners {1,2,3} and negatives {4,5}.
  const std::vector<std::size_t> labels{0, 0, 0, 0, 1, 1};
  std::map<std::size_t, int> pos, neg;
  const int draws = 30000;
  for (int s = 0; s < draws; ++s) {
    const auto t = sample_triplets(labels, iota_indices(6), static_cast<std::uint64_t>(s)).triplets[0];
    ++pos[t.positive];
    ++neg[t.negative];
  }
  for (std::size_t p : {1u, 2u, 3u}) EXPECT_NEAR(pos[p] / double(draws), 1.0 / 3.0, 0.015);
  for (std::size_t n : {4u, 5u}) EXPECT_NEAR(neg[n] / double(draws), 0.5, 0.015);
}

TEST(SampleTripletsTest, DeterministicBySeed) {
  std::vector<std::size_t> labels(50);
  for (std::size_t i = 0; i < 50; ++i) labels[i] = i % 3;
  const auto a = sample_triplets(labels, iota_indices(50), 17).triplets;
  const auto b = sample_triplets(labels, iota_indices(50), 17).triplets;
  const auto c = sample_triplets(labels, iota_indices(50), 18).triplets;
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(TripletLossTest, WorkedExamples) {
  Tape tape;
  auto v = [](double x, double y) { return Tensor::vector({x, y}); };
  EXPECT_EQ(triplet_loss(tape, v(0, 0), v(0, 0), v(2, 0), 1.0).item(), 0.0);
  EXPECT_EQ(triplet_loss(tape, v(3, -1), v(3, -1), v(3, -1), 1.5).item(), 1.5);
  EXPECT_EQ(triplet_loss(tape, v(0, 0), v(1, 0), v(0, 0), 0.5).item(), 1.5);
}

TEST(TripletLossTest, NonNegativeAndZeroExactlyAtMargin) {
  Rng rng(8);
  for (int trial = 0; trial < 20000; ++trial) {
    const std::size_t d = 1 + rng.index(6);
    std::vector<double> a(d), p(d), n(d);
    for (std::size_t i = 0; i < d; ++i) a[i] = rng.uniform(-2, 2), p[i] = rng.uniform(-2, 2), n[i] = rng.uniform(-2, 2);
    const double alpha = kMarginChoices[rng.index(kMarginChoices.size())];
    Tape tape;
    const double loss = triplet_loss(tape, Tensor::vector(a), Tensor::vector(p), Tensor::vector(n), alpha).item();
    const double d_ap = sq_dist(a, p), d_an = sq_dist(a, n);
    ASSERT_GE(loss, 0.0);
    ASSERT_EQ(loss == 0.0, d_an >= d_ap + alpha);
    ASSERT_NEAR(loss, std::max(d_ap - d_an + alpha, 0.0), 1e-12);
  }
}

TEST(TripletLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> params;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> v(4);
      for (auto& x : v) x = rng.uniform(-1, 1);
      params.push_back(Tensor::vector(v, true));
    }
    auto res = check_gradients(params, [&](Tape& t) { return triplet_loss(t, params[0], params[1], params[2], 2.5); });
    EXPECT_LT(res.max_rel_error, 1e-6);
  }
}

TEST(TripletLossTest, Errors) {
  Tape tape;
  EXPECT_THROW(triplet_loss(tape, Tensor::vector({0, 0}), Tensor::vector({0, 0, 0}), Tensor::vector({0, 0}), 1.0),
               ContractViolation);
  EXPECT_THROW(triplet_loss(tape, Tensor::vector({0}), Tensor::vector({0}), Tensor::vector({0}), 0.0),
               ContractViolation);
}

TEST(AllTripletsLossTest, MatchesEnumeration) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingMatrix e;
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng.index(8));
    e.values.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) e.values(i, c) = rng.normal();
      e.labels.push_back(rng.index(3));
    }
    double total = 0.0;
    int count = 0;
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index q = 0; q < n; ++q) {
          if (a == p || e.labels[a] != e.labels[p] || e.labels[q] == e.labels[a]) continue;
          Tape tape;
          total += triplet_loss(tape, Tensor::vector(row(e, a)), Tensor::vector(row(e, p)), Tensor::vector(row(e, q)), 1.0)
                       .item();
          ++count;
        }
    const auto got = all_triplets_loss(e, 1.0);
    if (count == 0) {
      EXPECT_FALSE(got.has_value());
    } else {
      ASSERT_TRUE(got.has_value());
      EXPECT_NEAR(*got, total / count, 1e-12);
    }
  }
}

TEST(SeparationRatioTest, HandComputed) {
  EmbeddingMatrix e;
  e.values.resize(4, 1);
  e.values << 0, 1, 10, 11;
  e.labels = {0, 0, 1, 1};
  // Squared distances. Intra: 1, 1. Inter: 100, 121, 81, 100.
  EXPECT_NEAR(separation_ratio(e), 100.5, 1e-12);
  e.labels = {0, 0, 0, 0};
  EXPECT_THROW(separation_ratio(e), DomainError);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  c.margin = 0.7;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("margin"), std::string::npos);
  }
  c.margin = 2.5;
  c.patience = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c.patience = 20;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(parse_train_mode("2stg_plus"), TrainMode::two_stage_plus);
  EXPECT_EQ(to_string(TrainMode::two_stage_plus), "2stg+");
  EXPECT_THROW(parse_train_mode("3stg"), ConfigError);
}

class SyntheticTraining : public ::testing::Test {
 protected:
  GraphDataset ds = make_clique_path_dataset(200, 0);
  SplitPlan split = make_splits(200, 0);

  GnnModel fresh_model(const TrainConfig& c) const {
    return GnnModel(resolve_defaults(c.model, ds), ds.num_feature_categories, 11);
  }
};

TEST_F(SyntheticTraining, StageOneSeparatesCliquesFromPaths) {
  for (double alpha : {1.0, 2.0}) {
    TrainConfig c = small_train_config(TrainMode::two_stage);
    c.margin = alpha;
    Stage1Result r = train_stage1(fresh_model(c), ds, split, c);
    ASSERT_FALSE(r.train_loss.empty());
    EXPECT_LT(r.train_loss.back(), 0.05 * alpha);
    EXPECT_EQ(r.val_loss.size(), r.train_loss.size() + 1);
    EXPECT_EQ(r.correlation_trace.size(), r.val_loss.size());

    // Zero-loss triplets on final embeddings satisfy the margin.
    const EmbeddingMatrix e = embed_graphs(r.model, ds, split.train);
    std::map<std::size_t, Eigen::Index> at;
    for (std::size_t i = 0; i < split.train.size(); ++i) at[split.train[i]] = static_cast<Eigen::Index>(i);
    const auto triplets = sample_triplets(ds.labels(), split.train, 5).triplets;
    for (const auto& t : triplets) {
      Tape tape;
      const auto a = row(e, at[t.anchor]), p = row(e, at[t.positive]), n = row(e, at[t.negative]);
      if (triplet_loss(tape, Tensor::vector(a), Tensor::vector(p), Tensor::vector(n), alpha).item() == 0.0) {
        EXPECT_GE(sq_dist(a, n) - sq_dist(a, p), alpha);
      }
    }
  }
}

TEST_F(SyntheticTraining, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = small_train_config(TrainMode::two_stage);
  c.lr = 0.0;
  c.stage1_max_epochs = 1;
  c.max_epochs = 1;
  c.patience = 0;
  GnnModel m = fresh_model(c);
  const auto before = m.snapshot();
  Stage1Result r = train_stage1(std::move(m), ds, split, c);
  EXPECT_EQ(r.train_loss.size(), 1u);
  EXPECT_EQ(r.model.snapshot(), before);
}

TEST_F(SyntheticTraining, TwoStageFreezesEncoder) {
  TrainConfig c = small_train_config(TrainMode::two_stage);
  Stage1Result s1 = train_stage1(fresh_model(c), ds, split, c);
  const auto encoder_before = s1.model.snapshot();
  TrialResult r = train_stage2(std::move(s1), ds, split, c);
  ASSERT_TRUE(r.model.has_value());
  EXPECT_EQ(r.model->snapshot(), encoder_before);
  EXPECT_EQ(r.best_val_accuracy, 1.0);
  EXPECT_GE(r.test_accuracy, 0.95);
}

TEST_F(SyntheticTraining, TwoStagePlusUpdatesEncoder) {
  TrainConfig c = small_train_config(TrainMode::two_stage_plus);
  Stage1Result s1 = train_stage1(fresh_model(c), ds, split, c);
  const auto encoder_before = s1.model.snapshot();
  TrialResult r = train_stage2(std::move(s1), ds, split, c);
  if (r.best_epoch > 0) EXPECT_NE(r.model->snapshot(), encoder_before);
  EXPECT_GE(r.test_accuracy, 0.95);
}

TEST_F(SyntheticTraining, OriginalModeRejectedByStageTwo) {
  TrainConfig c = small_train_config(TrainMode::original);
  Stage1Result s1{fresh_model(c), {}, {}, 0, {}, false};
  EXPECT_THROW(train_stage2(std::move(s1), ds, split, c), ContractViolation);
  c.mode = TrainMode::two_stage;
  EXPECT_THROW(train_original(fresh_model(c), ds, split, c), ContractViolation);
}

TEST_F(SyntheticTraining, FineTuningFromTrainedHeadCannotLoseValidation) {
  TrainConfig c = small_train_config(TrainMode::two_stage);
  // A weak Stage 1 leaves room for either mode to move validation accuracy.
  c.stage1_max_epochs = 2;
  c.patience = 1;
  Stage1Result s1 = train_stage1(fresh_model(c), ds, split, c);
  TrialResult two = train_stage2(std::move(s1), ds, split, c);

  c.mode = TrainMode::two_stage_plus;
  Stage1Result start{two.model->clone(), {}, {}, 0, {}, false};
  TrialResult plus = train_stage2(std::move(start), ds, split, c, &*two.head);
  EXPECT_EQ(plus.val_accuracy.front(), two.best_val_accuracy);
  EXPECT_GE(plus.best_val_accuracy, two.best_val_accuracy - 0.02);
}

TEST_F(SyntheticTraining, OriginalReachesHighAccuracyFromUniformStart) {
  TrainConfig c = small_train_config(TrainMode::original);
  TrialResult r = train_original(fresh_model(c), ds, split, c);
  EXPECT_NEAR(r.initial_train_loss, std::log(2.0), 1e-12);
  EXPECT_GT(r.test_accuracy, 0.95);
  EXPECT_TRUE(r.stage1_train_loss.empty());
  EXPECT_EQ(r.correlation_trace.size(), r.val_accuracy.size());
}

TEST_F(SyntheticTraining, SelectionUsesEarliestBestEpoch) {
  for (auto mode : {TrainMode::original, TrainMode::two_stage, TrainMode::two_stage_plus}) {
    TrainConfig c = small_train_config(mode, 2);
    c.stage1_max_epochs = 3;
    c.patience = 2;
    c.max_epochs = 8;
    TrialResult r = run_trial(ds, c);
    const auto best = std::max_element(r.val_accuracy.begin(), r.val_accuracy.end());
    EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(best - r.val_accuracy.begin()));
    EXPECT_EQ(r.best_val_accuracy, *best);

    // Re-evaluating the returned checkpoint reproduces the reported numbers.
    const SplitPlan s = make_splits(ds.graphs.size(), 2);
    auto accuracy = [&](std::span<const std::size_t> idx) {
      const EmbeddingMatrix e = embed_graphs(*r.model, ds, idx);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Tape tape;
        correct += argmax(classify(tape, *r.head, Tensor::vector(row(e, static_cast<Eigen::Index>(i)))).values()) ==
                   ds.graphs[idx[i]].label();
      }
      return static_cast<double>(correct) / static_cast<double>(idx.size());
    };
    EXPECT_EQ(accuracy(s.val), r.best_val_accuracy);
    EXPECT_EQ(accuracy(s.test), r.test_accuracy);
  }
}

TEST_F(SyntheticTraining, RunsAreDeterministic) {
  for (auto mode : {TrainMode::original, TrainMode::two_stage_plus}) {
    TrainConfig c = small_train_config(mode, 4);
    c.stage1_max_epochs = 5;
    c.max_epochs = 5;
    c.patience = 2;
    const TrialResult a = run_trial(ds, c), b = run_trial(ds, c);
    EXPECT_EQ(a.stage1_train_loss, b.stage1_train_loss);
    EXPECT_EQ(a.train_loss, b.train_loss);
    EXPECT_EQ(a.val_accuracy, b.val_accuracy);
    EXPECT_EQ(a.correlation_trace, b.correlation_trace);
    EXPECT_EQ(a.model->snapshot(), b.model->snapshot());
  }
}

TEST(TrainOriginalTest, InitialLossIsLogClassCount) {
  Rng rng(12);
  GraphDataset ds;
  ds.num_classes = 3;
  ds.num_feature_categories = 4;
  for (std::size_t i = 0; i < 30; ++i) ds.graphs.push_back(random_graph(rng, 4 + rng.index(4), 0.5, 4, i % 3));
  TrainConfig c = small_train_config(TrainMode::original);
  c.classifier.num_classes = 3;
  c.max_epochs = 2;
  c.patience = 1;
  const SplitPlan split = make_splits(30, 0);
  TrialResult r = train_original(GnnModel(c.model, 4, 1), ds, split, c);
  EXPECT_NEAR(r.initial_train_loss, std::log(3.0), 1e-12);
}

TEST(TrainOriginalTest, ConstantLabelsRejected) {
  GraphDataset ds = make_clique_path_dataset(20, 0);
  std::vector<Graph> same;
  for (const auto& g : ds.graphs) same.emplace_back(g.node_count(), g.edges(), g.node_categories(), 0, g.graph_id());
  ds.graphs = same;
  TrainConfig c = small_train_config(TrainMode::original);
  EXPECT_THROW(train_original(GnnModel(c.model, ds.num_feature_categories, 1), ds, make_splits(20, 0), c),
               DomainError);
  c.mode = TrainMode::two_stage;
  EXPECT_THROW(run_trial(ds, c), DomainError);
}

TEST(SearchTest, SelectsDominantConfig) {
  std::vector<TrialOutcome> outcomes;
  for (std::uint64_t s = 0; s < 5; ++s) {
    outcomes.push_back({0, s, 0.6, 0.9});
    outcomes.push_back({1, s, 0.8, 0.7 + 0.01 * static_cast<double>(s)});
  }
  const auto summary = select_configuration(outcomes);
  EXPECT_EQ(summary.best_config, 1u);
  EXPECT_TRUE(summary.complete);
  EXPECT_NEAR(summary.test.mean, 0.72, 1e-12);
  EXPECT_NEAR(summary.test.stddev, std::sqrt(0.001 / 4.0), 1e-12);
}

TEST(SearchTest, TiesGoToLowerIndexAndPartialRuns) {
  const std::vector<TrialOutcome> outcomes{{2, 0, 0.5, 0.1}, {1, 0, 0.5, 0.2}, {1, 1, 0.5, 0.4}};
  const auto s = select_configuration(outcomes);
  EXPECT_EQ(s.best_config, 1u);
  EXPECT_FALSE(s.complete);
  EXPECT_EQ(s.runs, 2u);
  EXPECT_NEAR(s.test.mean, 0.3, 1e-12);
  EXPECT_THROW(select_configuration(std::span<const TrialOutcome>{}), DomainError);
}

TEST(SearchTest, SingletonGridMatchesItsTrials) {
  GraphDataset ds = make_clique_path_dataset(40, 1);
  TrainConfig c = small_train_config(TrainMode::original);
  c.max_epochs = 3;
  c.patience = 1;
  const std::vector<TrainConfig> grid{c};
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const SearchResult r = hyperparameter_search(ds, grid, seeds);
  ASSERT_EQ(r.outcomes.size(), 5u);
  std::vector<double> test;
  for (const auto& o : r.outcomes) test.push_back(o.test_accuracy);
  const RunSummary direct = aggregate_runs(test);
  EXPECT_NEAR(r.summary.test.mean, direct.mean, 1e-12);
  EXPECT_NEAR(r.summary.test.stddev, direct.stddev, 1e-12);
  for (std::size_t i = 0; i < 5; ++i) {
    TrainConfig one = c;
    one.seed = seeds[i];
    EXPECT_EQ(run_trial(ds, one).test_accuracy, r.outcomes[i].test_accuracy);
  }
  EXPECT_THROW(hyperparameter_search(ds, std::span<const TrainConfig>{}, seeds), DomainError);
}
