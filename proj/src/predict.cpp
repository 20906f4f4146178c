#include "spco/predict.hpp"

#include "spco/learn.hpp"
#include "spco/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spco::predict {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

double log_sum_exp(const Vector& v) {
  const double hi = v.maxCoeff();
  if (!(hi > kNegInf)) return kNegInf;
  return hi + std::log((v.array() - hi).exp().sum());
}

const EnvParams& env_params(const TrainedModel& model, int env) {
  if (env < 0 || env >= static_cast<int>(model.envs.size()))
    throw ParameterError(fmt::format("environment {} is not part of the model ({} trained)", env, model.envs.size()));
  return model.envs[static_cast<size_t>(env)];
}

int word_index(const TrainedModel& model, const std::string& word) {
  auto k = model.dictionary.find(word);
  if (!k) throw VocabularyError(fmt::format("word '{}' is not in the dictionary", word));
  if (model.pruned_words[static_cast<size_t>(*k)])
    throw VocabularyError(fmt::format("word '{}' was pruned by the mutual-information filter", word));
  return *k;
}

}  // namespace

NameWeighting default_weighting(const TrainedModel& model) {
  return model.mode == Mode::spcoa ? NameWeighting::likelihood_only : NameWeighting::mutual_info;
}

Vector name_mi_factor(const TrainedModel& model) { return learn::word_concept_mi(model.global.phi_w, model.global.g0); }

Vector name_log_likelihood(const TrainedModel& model, int env, const Pose& pose, const Vector& visual) {
  const auto& p = env_params(model, env);
  const int L = model.num_concepts();
  const int M = static_cast<int>(p.mu.size());
  const int K = model.dictionary.size();
  const bool use_visual = model.mode == Mode::transfer && p.theta_v.cols() > 0;
  if (use_visual && visual.size() != p.theta_v.cols())
    throw ParameterError(fmt::format("visual bag has {} entries, model expects {}", visual.size(), p.theta_v.cols()));

  const Vec4 x = pose.vector();
  Vector log_density(M);
  for (int m = 0; m < M; ++m)
    log_density[m] = stats::gaussian_logpdf(x, p.mu[static_cast<size_t>(m)], p.sigma[static_cast<size_t>(m)]);

  // log [ p(v | theta_v_C) G_e[C] sum_R N(x | mu_R, Sigma_R) pi_C[R] ]
  Vector concept_term(L);
  for (int c = 0; c < L; ++c) {
    Vector per_region(M);
    for (int m = 0; m < M; ++m) per_region[m] = log_density[m] + safe_log(p.pi(c, m));
    double term = safe_log(p.ge[c]) + log_sum_exp(per_region);
    if (use_visual) term += stats::multinomial_loglik(visual, Vector(p.theta_v.row(c).transpose()));
    concept_term[c] = term;
  }

  Vector out = Vector::Constant(K, kNegInf);
  for (int k = 0; k < K; ++k) {
    if (model.pruned_words[static_cast<size_t>(k)]) continue;
    Vector per_concept(L);
    for (int c = 0; c < L; ++c) per_concept[c] = safe_log(p.theta_w(c, k)) + concept_term[c];
    out[k] = log_sum_exp(per_concept);
  }
  return out;
}

Vector name_log_scores(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                       NameWeighting weighting) {
  Vector scores = name_log_likelihood(model, env, pose, visual);
  if (weighting == NameWeighting::mutual_info) {
    const Vector mi = name_mi_factor(model);
    for (Eigen::Index k = 0; k < scores.size(); ++k) scores[k] += safe_log(mi[k]);
  }
  return scores;
}

std::vector<NameScore> predict_name(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                                    int top_k) {
  return predict_name(model, env, pose, visual, top_k, default_weighting(model));
}

std::vector<NameScore> predict_name(const TrainedModel& model, int env, const Pose& pose, const Vector& visual,
                                    int top_k, NameWeighting weighting) {
  const Vector log_scores = name_log_scores(model, env, pose, visual, weighting);
  if (log_scores.size() == 0 || !(log_scores.maxCoeff() > kNegInf))
    throw NoPredictionError("every candidate location name has zero score");
  const Vector p = stats::normalize_log(log_scores);
  std::vector<int> order;
  for (int k = 0; k < static_cast<int>(p.size()); ++k)
    if (!model.pruned_words[static_cast<size_t>(k)]) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  if (top_k >= 0 && static_cast<size_t>(top_k) < order.size()) order.resize(static_cast<size_t>(top_k));
  std::vector<NameScore> out;
  for (int k : order) out.push_back({model.dictionary.at(k), p[k]});
  return out;
}

RegionPrediction predict_region(const TrainedModel& model, int env, const std::string& word) {
  const auto& p = env_params(model, env);
  const int k = word_index(model, word);
  const int L = model.num_concepts();
  const int M = static_cast<int>(p.pi.cols());
  Vector log_post(M);
  for (int m = 0; m < M; ++m) {
    Vector per_concept(L);
    for (int c = 0; c < L; ++c)
      per_concept[c] = safe_log(p.pi(c, m)) + safe_log(p.theta_w(c, k)) + safe_log(p.ge[c]);
    log_post[m] = log_sum_exp(per_concept);
  }
  if (!(log_post.maxCoeff() > kNegInf))
    throw NoPredictionError(fmt::format("word '{}' has zero probability under every region", word));
  RegionPrediction out;
  out.posterior = stats::normalize_log(log_post);
  out.region = 0;
  for (int m = 1; m < M; ++m)
    if (out.posterior[m] > out.posterior[out.region]) out.region = m;
  return out;
}

std::vector<Pose> predict_positions(const TrainedModel& model, int env, const std::string& word, int n_samples,
                                    Rng& rng) {
  if (n_samples < 1) throw ParameterError("n_samples must be >= 1");
  const auto region = predict_region(model, env, word);
  const auto& p = env_params(model, env);
  const auto r = static_cast<size_t>(region.region);
  std::vector<Pose> out;
  out.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) out.push_back(Pose::from_vector(stats::sample_gaussian(p.mu[r], p.sigma[r], rng)));
  return out;
}

}  // namespace spco::predict
