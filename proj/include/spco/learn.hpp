#pragma once

#include "spco/core.hpp"
#include "spco/rng.hpp"
#include "spco/stats.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace spco::learn {

struct TrainConfig {
  Hyperparameters hyper;
  Mode mode = Mode::transfer;
  std::uint64_t seed = 0;
  bool record_trace = false;
  // Run the mutual-information reconstruction inside every iteration
  // (Algorithm order) or once after the last sweep.
  bool prune_every_iteration = true;
};

struct PruningError : Error {
  PruningError(const std::string& what, std::vector<int> words) : Error(what), words(std::move(words)) {}
  std::vector<int> words;
};

// Observations of one environment laid out for the sampler.
struct EnvData {
  std::vector<Vec4> x;
  Matrix visual;  // T x Dv
  Matrix words;   // T x Dw, zero rows where absent
  std::vector<char> has_words;
  std::vector<std::vector<std::pair<int, double>>> word_nz;  // nonzero word entries per t
  Vec4 centroid = Vec4::Zero();
  int size() const { return static_cast<int>(x.size()); }
};

struct Dataset {
  std::vector<EnvData> envs;
  int dim_v = 0;
  int dim_w = 0;
  // Groups observations by env_id (dense ids 0..E-1, order of t preserved).
  static Dataset from_observations(const std::vector<Observation>& obs, int dim_w);
};

struct SamplerState {
  GlobalParams global;
  std::vector<EnvParams> envs;
  std::vector<Assignments> assign;
  std::vector<stats::NiwParams> priors;  // per-environment NIW prior
  std::vector<bool> pruned;
};

// Sufficient statistics of one environment under its current assignments.
struct EnvCounts {
  Matrix visual;   // L x Dv, summed bag mass per concept
  Matrix words;    // L x Dw, summed word-bag mass per concept (instructed data only)
  Matrix regions;  // L x M, region tallies per concept
  Vector concepts; // L
};

EnvCounts tally(const EnvData& data, const Assignments& a, int L, int M);

SamplerState init_state(const Dataset& data, const TrainConfig& config, Rng& rng);

// Normalized p(R_t = m | x_t, C_t, mu, Sigma, pi).
Vector region_posterior(const EnvParams& env, const Vec4& x, int label);

// Normalized p(C_t = l | v_t, w_t, R_t, theta, pi, G_e). Visual factor only in
// transfer mode; word factor only when the observation carries words.
Vector concept_posterior(const EnvData& data, int t, const EnvParams& env, int region, Mode mode);

void sample_regions(const EnvData& data, const EnvParams& env, Assignments& a, Rng& rng);
void sample_concepts(const EnvData& data, const EnvParams& env, Assignments& a, Mode mode, Rng& rng);

// R_t then C_t for each t, in order.
void sweep_assignments(const EnvData& data, const EnvParams& env, Assignments& a, Mode mode, Rng& rng);

// NIW posterior per region from its assigned positions, then a draw.
std::vector<stats::NiwParams> gaussian_posteriors(const EnvData& data, const Assignments& a,
                                                  const stats::NiwParams& prior, int M);
void sample_gaussians(const EnvData& data, EnvParams& env, const Assignments& a, const stats::NiwParams& prior,
                      Rng& rng);

struct EnvConcentrations {
  Matrix theta_v;
  Matrix theta_w;
  Matrix pi;
  Vector ge;
};
EnvConcentrations env_concentrations(const EnvCounts& counts, const GlobalParams& global,
                                     const Hyperparameters& h);
void sample_env_emissions(const EnvData& data, EnvParams& env, const GlobalParams& global, const Assignments& a,
                          const Hyperparameters& h, Rng& rng);

struct GlobalConcentrations {
  Matrix phi_v;
  Matrix phi_w;
  Vector g0;
};
GlobalConcentrations global_concentrations(const std::vector<EnvCounts>& counts, const Hyperparameters& h);
void sample_global(const Dataset& data, SamplerState& state, const Hyperparameters& h, Rng& rng);

// Mutual information (nats) between the binary events {word = k} and
// {concept = c} given P(c), P(k | c) and P(k | not c).
double binary_mutual_info(double p_c, double p_w_given_c, double p_w_given_not_c);

// For every word k: max over concepts c of the binary MI under the joint
// P(k | phi_w[c]) P(c | g0).
Vector word_concept_mi(const Matrix& phi_w, const Vector& g0);

// Zeroes every word whose max binary MI is below epsilon in phi_w and every
// theta_w, then renormalizes modified rows. Returns the pruned mask. Leaves
// everything untouched and throws PruningError when a row would vanish.
std::vector<bool> mi_prune(GlobalParams& global, std::vector<EnvParams>& envs, double epsilon);

// Called after every completed iteration.
using SweepObserver = std::function<void(int iteration, const SamplerState& state)>;

struct FitResult {
  TrainedModel model;
  std::vector<std::vector<Assignments>> trace;  // per iteration, when requested
};

FitResult fit_with_trace(const std::vector<Observation>& corpus, const Dictionary& dict, const TrainConfig& config,
                         const SweepObserver& observer = {});
TrainedModel fit(const std::vector<Observation>& corpus, const Dictionary& dict, const TrainConfig& config);

// Simplex rows and SPD covariances of a sampler state; empty when valid.
std::vector<std::string> state_violations(const SamplerState& state, double tol = 1e-9);

}  // namespace spco::learn
