#pragma once

#include "spco/core.hpp"
#include "spco/data.hpp"
#include "spco/learn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace spco::eval {

struct Accuracy {
  double macro = 0.0;  // mean over places of correct / total
  std::vector<std::pair<std::string, double>> per_place;  // in first-appearance order
};

// A_n. places[i] is the place of datum i. When expected_places is given,
// each of them must have at least one datum (MetricError otherwise).
Accuracy name_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth,
                       const std::vector<std::string>& places,
                       const std::optional<std::vector<std::string>>& expected_places = std::nullopt);

struct NameSamples {
  std::string name;
  std::vector<Pose> samples;  // may be short (or empty) when prediction failed
  int requested = 0;          // P_l
};

// A_p. A sample is correct iff its (x, y) lies in a rectangle carrying its
// name, boundary inclusive. Names without a rectangle raise MetricError.
Accuracy position_accuracy(const std::vector<NameSamples>& samples, const std::vector<EvaluationRegion>& regions);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct ResultRow {
  std::string setting;
  int trial = 0;
  std::string place;  // "all" for the macro average
  std::string metric; // "A_n" or "A_p"
  double value = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<std::string> settings;  // in requested order

  void write_csv(std::ostream& out) const;
  // {"cells":[{"setting","place","metric","mean","stddev","n"}...]}; stddev is
  // the sample standard deviation (0 for a single trial).
  nlohmann::json summary() const;
  // Mean of the rows matching (setting, place, metric); nullopt when absent.
  std::optional<double> mean(const std::string& setting, const std::string& place, const std::string& metric) const;
};

struct ExperimentConfig {
  learn::TrainConfig train;
  int trials = 20;
  int position_samples = 10;  // P_l
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
};

// One trial's evaluation of a trained model on a test set.
struct TrialScores {
  Accuracy name;
  Accuracy position;
};
TrialScores score_model(const TrainedModel& model, int env, const std::vector<data::RawRecord>& test,
                        const std::vector<EvaluationRegion>& regions, int position_samples, std::uint64_t seed);

// For each n in env_counts: `trials` models trained on n experienced
// environments drawn at random (instructed) plus the new environment with
// every sentence withheld, scored on the new environment.
ResultTable run_transfer_experiment(const std::vector<std::vector<data::RawRecord>>& experienced,
                                    const std::vector<data::RawRecord>& new_env,
                                    const std::vector<data::RawRecord>& test,
                                    const std::vector<EvaluationRegion>& regions, const std::vector<int>& env_counts,
                                    const ExperimentConfig& config);

// For each rate: sentences kept on round(rate * n) of each home-specific
// place's observations and withheld everywhere else in the new environment;
// scored on the home-specific test data.
ResultTable run_adaptive_experiment(const std::vector<std::vector<data::RawRecord>>& experienced,
                                    const std::vector<data::RawRecord>& new_env,
                                    const std::vector<data::RawRecord>& test,
                                    const std::vector<EvaluationRegion>& regions, const std::vector<double>& rates,
                                    const ExperimentConfig& config);

}  // namespace spco::eval
