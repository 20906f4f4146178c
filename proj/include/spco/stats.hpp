#pragma once

#include "spco/core.hpp"
#include "spco/rng.hpp"

#include <span>
#include <vector>

namespace spco::stats {

struct NiwParams {
  Vec4 mu = Vec4::Zero();
  double kappa = 1.0;
  Mat4 psi = Mat4::Identity();
  double nu = 5.0;
};

// log of a Gamma(shape, 1) variate. Stays finite for shapes far below 1,
// where the variate itself underflows.
double sample_log_gamma(double shape, Rng& rng);

// Dirichlet draw; every entry must be > 0 (ParameterError otherwise).
Vector sample_dirichlet(const Vector& concentration, Rng& rng);

// Dirichlet draw that tolerates zero entries, which yield exactly 0 (the
// distribution restricted to the positive support). At least one entry must
// be > 0. Entries with positive concentration are never exactly 0 in the
// result: they are floored at the smallest normal double.
Vector sample_dirichlet_support(const Vector& concentration, Rng& rng);

int sample_categorical(std::span<const double> weights, Rng& rng);
int sample_categorical(const Vector& weights, Rng& rng);

// Draw from the distribution whose unnormalized log weights are given.
// Throws DegenerateDistributionError when every entry is -inf.
int sample_log_categorical(const Vector& log_weights, Rng& rng);

// exp(log_weights - max) / sum, computed stably.
Vector normalize_log(const Vector& log_weights);

// Truncated GEM: T-1 Beta(1, concentration) sticks, the last stick takes
// the remainder.
Vector stick_breaking(double concentration, int truncation, Rng& rng);

NiwParams niw_posterior(const NiwParams& prior, std::span<const Vec4> data);

struct GaussianDraw {
  Vec4 mean;
  Mat4 cov;
};

// Sigma ~ IW(psi, nu) via the Bartlett decomposition of W(psi^-1, nu);
// mean ~ N(mu, Sigma / kappa).
GaussianDraw sample_niw(const NiwParams& params, Rng& rng);

// Draws from N(mean, cov); throws ParameterError if cov is not SPD.
Vec4 sample_gaussian(const Vec4& mean, const Mat4& cov, Rng& rng);

// Cached Cholesky factor for repeated density evaluation.
class Gaussian {
 public:
  Gaussian(const Vec4& mean, const Mat4& cov);
  double logpdf(const Vec4& x) const;
  const Vec4& mean() const { return mean_; }

 private:
  Vec4 mean_;
  Eigen::Matrix4d chol_l_;
  double log_norm_;
};

double gaussian_logpdf(const Vec4& x, const Vec4& mean, const Mat4& cov);

// sum_k bag_k * ln(probs_k), skipping bag_k == 0; -inf where bag_k > 0 and
// probs_k == 0. The multinomial coefficient is omitted.
double multinomial_loglik(std::span<const double> bag, std::span<const double> probs);
double multinomial_loglik(const Vector& bag, const Vector& probs);

}  // namespace spco::stats
