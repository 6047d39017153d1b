#include <cmath>
#include <map>

#include "tsgnn/error.hpp"
#include "tsgnn/training.hpp"

namespace tsgnn {

SearchSummary select_configuration(std::span<const TrialOutcome> outcomes) {
  if (outcomes.empty()) throw DomainError("select_configuration: no trial outcomes");
  std::map<std::size_t, std::vector<const TrialOutcome*>> by_config;
  for (const auto& o : outcomes) by_config[o.config_index].push_back(&o);

  SearchSummary s;
  bool first = true;
  for (const auto& [index, runs] : by_config) {
    double val = 0.0;
    for (const auto* r : runs) val += r->val_accuracy;
    val /= static_cast<double>(runs.size());
    if (first || val > s.mean_val_accuracy) {
      first = false;
      s.best_config = index;
      s.mean_val_accuracy = val;
    }
  }

  std::vector<double> test;
  for (const auto* r : by_config[s.best_config]) test.push_back(r->test_accuracy);
  s.runs = test.size();
  s.complete = test.size() == kSplitsPerSetting;
  if (s.complete) {
    s.test = aggregate_runs(test);
  } else {
    for (double v : test) s.test.mean += v;
    s.test.mean /= static_cast<double>(test.size());
    if (test.size() > 1) {
      double ss = 0.0;
      for (double v : test) ss += (v - s.test.mean) * (v - s.test.mean);
      s.test.stddev = std::sqrt(ss / static_cast<double>(test.size() - 1));
    }
  }
  return s;
}

SearchResult hyperparameter_search(const GraphDataset& dataset, std::span<const TrainConfig> grid,
                                   std::span<const std::uint64_t> seeds) {
  if (grid.empty()) throw DomainError("hyperparameter_search: empty grid");
  if (seeds.empty()) throw DomainError("hyperparameter_search: no seeds");
  for (const auto& c : grid) c.validate();
  SearchResult result;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = grid[i];
      c.seed = seed;
      const TrialResult r = run_trial(dataset, c);
      result.outcomes.push_back({i, seed, r.best_val_accuracy, r.test_accuracy});
    }
  }
  result.summary = select_configuration(result.outcomes);
  return result;
}

}  // namespace tsgnn
