#pragma once

#include "spco/core.hpp"
#include "spco/rng.hpp"

#include <string>
#include <vector>

namespace spco::predict {

struct NoPredictionError : Error {
  using Error::Error;
};

struct NameScore {
  std::string word;
  double score = 0.0;  // normalized over all candidate words
};

// How the location-name likelihood is weighted. The MI-weighted form uses the
// max over concepts of the binary word/concept mutual information computed
// from (phi_w, g0).
enum class NameWeighting { mutual_info, likelihood_only };

// Default weighting for a model: likelihood only for plain SpCoA.
NameWeighting default_weighting(const TrainedModel& model);

// Per-word MI factor used by the mutual_info weighting (length K).
Vector name_mi_factor(const TrainedModel& model);

// log p(w = k | x, v) up to an additive constant, for every dictionary word;
// -inf for pruned words.
Vector name_log_likelihood(const TrainedModel& model, int env, const Pose& pose, const Vector& visual);

// Unnormalized log scores including the weighting; -inf for pruned words.
Vector name_log_scores(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                       NameWeighting weighting);

// Top-k candidates in descending score. Throws NoPredictionError when every
// candidate scores zero.
std::vector<NameScore> predict_name(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                                    int top_k);
std::vector<NameScore> predict_name(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                                    int top_k, NameWeighting weighting);

struct RegionPrediction {
  int region = 0;     // argmax, lowest index on ties
  Vector posterior;   // normalized over regions
};

// Throws VocabularyError for unknown or pruned words.
RegionPrediction predict_region(const TrainedModel& model, int env, const std::string& word);

// Draws from the Gaussian of the predicted region.
std::vector<Pose> predict_positions(const TrainedModel& model, int env, const std::string& word, int n_samples,
                                    Rng& rng);

}  // namespace spco::predict
