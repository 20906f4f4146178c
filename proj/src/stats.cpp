#include "spco/stats.hpp"

#include <fmt/format.h>

#include <cfloat>
#include <cmath>
#include <limits>
#include <numbers>

namespace spco::stats {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_gamma_marsaglia(double shape, Rng& rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d) + std::log(v);
  }
}

Vector dirichlet_from_logs(const Vector& logs, const Vector& concentration) {
  const double hi = logs.maxCoeff();
  Vector out(logs.size());
  for (Eigen::Index i = 0; i < logs.size(); ++i)
    out[i] = concentration[i] > 0.0 ? std::exp(logs[i] - hi) : 0.0;
  out /= out.sum();
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (concentration[i] > 0.0 && out[i] < DBL_MIN) out[i] = DBL_MIN;
  return out;
}

}  // namespace

double sample_log_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0) || !std::isfinite(shape))
    throw ParameterError(fmt::format("gamma shape must be positive and finite (got {})", shape));
  if (shape >= 1.0) return log_gamma_marsaglia(shape, rng);
  // G(a) = G(a + 1) * U^(1/a)
  const double boosted = log_gamma_marsaglia(shape + 1.0, rng);
  return boosted + std::log(rng.uniform_open()) / shape;
}

Vector sample_dirichlet(const Vector& concentration, Rng& rng) {
  if (concentration.size() == 0) throw ParameterError("empty Dirichlet concentration");
  for (Eigen::Index i = 0; i < concentration.size(); ++i)
    if (!(concentration[i] > 0.0))
      throw ParameterError(fmt::format("Dirichlet concentration entry {} is {}", i, concentration[i]));
  return sample_dirichlet_support(concentration, rng);
}

Vector sample_dirichlet_support(const Vector& concentration, Rng& rng) {
  Vector logs = Vector::Constant(concentration.size(), kNegInf);
  bool any = false;
  for (Eigen::Index i = 0; i < concentration.size(); ++i) {
    const double a = concentration[i];
    if (a < 0.0 || !std::isfinite(a))
      throw ParameterError(fmt::format("Dirichlet concentration entry {} is {}", i, a));
    if (a > 0.0) {
      logs[i] = sample_log_gamma(a, rng);
      any = true;
    }
  }
  if (!any) throw ParameterError("Dirichlet concentration has no positive entry");
  return dirichlet_from_logs(logs, concentration);
}

int sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw ParameterError("categorical weight must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw DegenerateDistributionError("categorical weights are all zero");
  const double target = rng.uniform() * total;
  double acc = 0.0;
  int last_positive = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (target < acc) return last_positive;
  }
  return last_positive;
}

int sample_categorical(const Vector& weights, Rng& rng) {
  return sample_categorical(std::span<const double>(weights.data(), static_cast<size_t>(weights.size())), rng);
}

Vector normalize_log(const Vector& log_weights) {
  const double hi = log_weights.maxCoeff();
  if (!(hi > kNegInf)) throw DegenerateDistributionError("all log weights are -inf");
  if (!std::isfinite(hi)) throw NumericalError("log weight is +inf or NaN");
  // Eigen's vectorized exp clamps its argument, so -inf would come back as a
  // denormal rather than 0.
  Vector p = (log_weights.array() == kNegInf).select(0.0, (log_weights.array() - hi).exp()).matrix();
  return p / p.sum();
}

int sample_log_categorical(const Vector& log_weights, Rng& rng) {
  return sample_categorical(normalize_log(log_weights), rng);
}

Vector stick_breaking(double concentration, int truncation, Rng& rng) {
  if (truncation < 1) throw ParameterError("stick-breaking truncation must be >= 1");
  if (!(concentration > 0.0)) throw ParameterError("stick-breaking concentration must be > 0");
  Vector w(truncation);
  double remaining = 1.0;
  for (int i = 0; i + 1 < truncation; ++i) {
    // Beta(1, c) = G1 / (G1 + Gc)
    const double l1 = sample_log_gamma(1.0, rng);
    const double lc = sample_log_gamma(concentration, rng);
    const double v = 1.0 / (1.0 + std::exp(lc - l1));
    w[i] = remaining * v;
    remaining *= (1.0 - v);
  }
  w[truncation - 1] = remaining;
  return w;
}

NiwParams niw_posterior(const NiwParams& prior, std::span<const Vec4> data) {
  if (data.empty()) return prior;
  const double n = static_cast<double>(data.size());
  Vec4 mean = Vec4::Zero();
  for (const auto& x : data) mean += x;
  mean /= n;
  Mat4 scatter = Mat4::Zero();
  for (const auto& x : data) {
    const Vec4 d = x - mean;
    scatter.noalias() += d * d.transpose();
  }
  NiwParams post;
  post.kappa = prior.kappa + n;
  post.nu = prior.nu + n;
  post.mu = (prior.kappa * prior.mu + n * mean) / post.kappa;
  const Vec4 shift = mean - prior.mu;
  post.psi = prior.psi + scatter + (prior.kappa * n / post.kappa) * (shift * shift.transpose());
  post.psi = 0.5 * (post.psi + post.psi.transpose());
  return post;
}

GaussianDraw sample_niw(const NiwParams& params, Rng& rng) {
  constexpr int p = 4;
  Eigen::LLT<Mat4> psi_llt(params.psi);
  if (psi_llt.info() != Eigen::Success) throw ParameterError("NIW scale matrix is not positive definite");
  if (!(params.nu > p - 1)) throw ParameterError("NIW degrees of freedom must exceed 3");
  if (!(params.kappa > 0.0)) throw ParameterError("NIW kappa must be > 0");
  const Mat4 scale = psi_llt.solve(Mat4::Identity());
  Eigen::LLT<Mat4> scale_llt(0.5 * (scale + scale.transpose()));
  if (scale_llt.info() != Eigen::Success) throw ParameterError("inverse NIW scale is not positive definite");
  const Mat4 l = scale_llt.matrixL();

  Mat4 a = Mat4::Zero();
  for (int i = 0; i < p; ++i) {
    // chi^2_k = 2 * Gamma(k / 2)
    a(i, i) = std::sqrt(2.0 * std::exp(sample_log_gamma(0.5 * (params.nu - i), rng)));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // W = (L A)(L A)^T ~ Wishart(psi^-1, nu); Sigma = W^-1.
  const Mat4 la = l * a;
  const Mat4 la_inv = la.triangularView<Eigen::Lower>().solve(Mat4::Identity());
  Mat4 cov = la_inv.transpose() * la_inv;
  cov = 0.5 * (cov + cov.transpose());

  GaussianDraw out;
  out.cov = cov;
  out.mean = sample_gaussian(params.mu, cov / params.kappa, rng);
  return out;
}

Vec4 sample_gaussian(const Vec4& mean, const Mat4& cov, Rng& rng) {
  Eigen::LLT<Mat4> llt(cov);
  if (llt.info() != Eigen::Success) throw ParameterError("covariance is not positive definite");
  Vec4 z;
  for (int i = 0; i < 4; ++i) z[i] = rng.normal();
  return mean + llt.matrixL() * z;
}

Gaussian::Gaussian(const Vec4& mean, const Mat4& cov) : mean_(mean) {
  Eigen::LLT<Mat4> llt(cov);
  if (llt.info() != Eigen::Success) throw ParameterError("covariance is not positive definite");
  chol_l_ = llt.matrixL();
  const double log_det = 2.0 * chol_l_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (4.0 * std::log(2.0 * std::numbers::pi) + log_det);
}

double Gaussian::logpdf(const Vec4& x) const {
  const Vec4 z = chol_l_.triangularView<Eigen::Lower>().solve(x - mean_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

double gaussian_logpdf(const Vec4& x, const Vec4& mean, const Mat4& cov) {
  return Gaussian(mean, cov).logpdf(x);
}

double multinomial_loglik(std::span<const double> bag, std::span<const double> probs) {
  if (bag.size() != probs.size())
    throw ParameterError(fmt::format("bag length {} != probability length {}", bag.size(), probs.size()));
  double acc = 0.0;
  for (size_t k = 0; k < bag.size(); ++k) {
    if (bag[k] == 0.0) continue;
    if (probs[k] <= 0.0) return kNegInf;
    acc += bag[k] * std::log(probs[k]);
  }
  return acc;
}

double multinomial_loglik(const Vector& bag, const Vector& probs) {
  return multinomial_loglik(std::span<const double>(bag.data(), static_cast<size_t>(bag.size())),
                            std::span<const double>(probs.data(), static_cast<size_t>(probs.size())));
}

}  // namespace spco::stats
