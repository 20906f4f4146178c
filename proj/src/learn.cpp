#include "spco/learn.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace spco::learn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

Matrix log_matrix(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = safe_log(m(i, j));
  return out;
}

// Per-concept log-likelihood tables for one environment under fixed
// emission parameters.
class ConceptScorer {
 public:
  ConceptScorer(const EnvData& data, const EnvParams& env, Mode mode)
      : data_(data), mode_(mode), log_theta_w_(log_matrix(env.theta_w)), log_pi_(log_matrix(env.pi)) {
    const auto L = env.ge.size();
    log_ge_.resize(L);
    for (Eigen::Index l = 0; l < L; ++l) log_ge_[l] = safe_log(env.ge[l]);
    // A word zeroed under every concept has been pruned from the dictionary.
    pruned_.resize(static_cast<size_t>(env.theta_w.cols()));
    for (Eigen::Index k = 0; k < env.theta_w.cols(); ++k)
      pruned_[static_cast<size_t>(k)] = L > 0 && (env.theta_w.col(k).array() == 0.0).all();
    if (mode_ == Mode::transfer && data.visual.cols() > 0) {
      log_theta_v_ = log_matrix(env.theta_v);
      dense_visual_ = log_theta_v_.allFinite();
    }
  }

  // Visual log-likelihood of every observation under every concept (T x L).
  Matrix visual_table() const {
    const auto L = log_ge_.size();
    if (mode_ != Mode::transfer || data_.visual.cols() == 0) return Matrix::Zero(data_.size(), L);
    if (dense_visual_) return data_.visual * log_theta_v_.transpose();
    Matrix out(data_.size(), L);
    for (int t = 0; t < data_.size(); ++t) out.row(t) = visual_row(t).transpose();
    return out;
  }

  Vector visual_row(int t) const {
    const auto L = log_ge_.size();
    Vector out = Vector::Zero(L);
    if (mode_ != Mode::transfer || data_.visual.cols() == 0) return out;
    for (Eigen::Index l = 0; l < L; ++l) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < data_.visual.cols(); ++k) {
        const double v = data_.visual(t, k);
        if (v == 0.0) continue;
        acc += v * log_theta_v_(l, k);
      }
      out[l] = acc;
    }
    return out;
  }

  Vector word_row(int t) const {
    const auto L = log_ge_.size();
    Vector out = Vector::Zero(L);
    if (!data_.has_words[static_cast<size_t>(t)]) return out;
    for (Eigen::Index l = 0; l < L; ++l) {
      double acc = 0.0;
      for (const auto& [k, w] : data_.word_nz[static_cast<size_t>(t)]) {
        if (pruned_[static_cast<size_t>(k)]) continue;
        const double lp = log_theta_w_(l, k);
        if (lp == kNegInf) {
          acc = kNegInf;
          break;
        }
        acc += w * lp;
      }
      out[l] = acc;
    }
    return out;
  }

  Vector log_weights(const Vector& visual_ll, const Vector& word_ll, int region) const {
    return visual_ll + word_ll + log_pi_.col(region) + log_ge_;
  }

 private:
  const EnvData& data_;
  Mode mode_;
  Matrix log_theta_v_;
  Matrix log_theta_w_;
  Matrix log_pi_;
  Vector log_ge_;
  std::vector<char> pruned_;
  bool dense_visual_ = false;
};

class RegionScorer {
 public:
  explicit RegionScorer(const EnvParams& env) : log_pi_(log_matrix(env.pi)) {
    for (size_t m = 0; m < env.mu.size(); ++m) gaussians_.emplace_back(env.mu[m], env.sigma[m]);
  }

  Vector log_density(const Vec4& x) const {
    Vector out(static_cast<Eigen::Index>(gaussians_.size()));
    for (size_t m = 0; m < gaussians_.size(); ++m) out[static_cast<Eigen::Index>(m)] = gaussians_[m].logpdf(x);
    return out;
  }

  Vector log_weights(const Vector& log_density, int label) const {
    return log_density + log_pi_.row(label).transpose();
  }

 private:
  Matrix log_pi_;
  std::vector<stats::Gaussian> gaussians_;
};

int draw(const Vector& log_w, Rng& rng, const char* step, int t) {
  try {
    return stats::sample_log_categorical(log_w, rng);
  } catch (const DegenerateDistributionError&) {
    throw NumericalError(fmt::format("{} step: every candidate has zero probability at t={}", step, t));
  }
}

Vector row_vec(const Matrix& m, Eigen::Index r) { return m.row(r).transpose(); }

}  // namespace

Dataset Dataset::from_observations(const std::vector<Observation>& obs, int dim_w) {
  Dataset d;
  d.dim_w = dim_w;
  d.dim_v = obs.empty() ? 0 : static_cast<int>(obs.front().visual.size());
  const int E = env_count(obs);
  d.envs.resize(static_cast<size_t>(E));
  std::vector<int> sizes(static_cast<size_t>(E), 0);
  for (const auto& o : obs) ++sizes[static_cast<size_t>(o.env_id)];
  for (int e = 0; e < E; ++e) {
    auto& env = d.envs[static_cast<size_t>(e)];
    env.visual = Matrix::Zero(sizes[static_cast<size_t>(e)], d.dim_v);
    env.words = Matrix::Zero(sizes[static_cast<size_t>(e)], dim_w);
  }
  std::vector<int> next(static_cast<size_t>(E), 0);
  for (const auto& o : obs) {
    auto& env = d.envs[static_cast<size_t>(o.env_id)];
    const int t = next[static_cast<size_t>(o.env_id)]++;
    env.x.push_back(o.pose.vector());
    env.visual.row(t) = o.visual.transpose();
    env.has_words.push_back(o.words.has_value());
    std::vector<std::pair<int, double>> nz;
    if (o.words) {
      env.words.row(t) = o.words->transpose();
      for (Eigen::Index k = 0; k < o.words->size(); ++k)
        if ((*o.words)[k] != 0.0) nz.emplace_back(static_cast<int>(k), (*o.words)[k]);
    }
    env.word_nz.push_back(std::move(nz));
  }
  for (auto& env : d.envs) {
    env.centroid = Vec4::Zero();
    for (const auto& x : env.x) env.centroid += x;
    if (!env.x.empty()) env.centroid /= static_cast<double>(env.x.size());
  }
  return d;
}

EnvCounts tally(const EnvData& data, const Assignments& a, int L, int M) {
  EnvCounts c;
  c.visual = Matrix::Zero(L, data.visual.cols());
  c.words = Matrix::Zero(L, data.words.cols());
  c.regions = Matrix::Zero(L, M);
  c.concepts = Vector::Zero(L);
  for (int t = 0; t < data.size(); ++t) {
    const int l = a.c[static_cast<size_t>(t)];
    c.visual.row(l) += data.visual.row(t);
    if (data.has_words[static_cast<size_t>(t)]) c.words.row(l) += data.words.row(t);
    c.regions(l, a.r[static_cast<size_t>(t)]) += 1.0;
    c.concepts[l] += 1.0;
  }
  return c;
}

SamplerState init_state(const Dataset& data, const TrainConfig& config, Rng& rng) {
  const auto& h = config.hyper;
  const int L = h.L;
  const int M = h.M;
  const bool transfer = config.mode == Mode::transfer;
  const int dv = transfer ? data.dim_v : 0;
  const int dw = data.dim_w;
  SamplerState s;
  s.global.phi_v = Matrix::Constant(L, dv, dv > 0 ? 1.0 / dv : 0.0);
  s.global.phi_w = Matrix::Constant(L, dw, dw > 0 ? 1.0 / dw : 0.0);
  s.global.g0 = transfer ? stats::stick_breaking(h.gamma0, L, rng) : Vector::Constant(L, 1.0 / L);
  for (size_t e = 0; e < data.envs.size(); ++e) {
    const auto& env_data = data.envs[e];
    if (env_data.size() == 0) throw ConfigError(fmt::format("environment {} has no observations", e));
    Assignments a;
    for (int t = 0; t < env_data.size(); ++t) {
      a.c.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(L))));
      a.r.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(M))));
    }
    stats::NiwParams prior{h.mu0.value_or(env_data.centroid), h.kappa0, h.psi0, h.nu0};
    EnvParams p;
    p.theta_v = Matrix::Constant(L, dv, dv > 0 ? 1.0 / dv : 0.0);
    p.theta_w = Matrix::Constant(L, dw, dw > 0 ? 1.0 / dw : 0.0);
    p.pi.resize(L, M);
    for (int l = 0; l < L; ++l) p.pi.row(l) = stats::stick_breaking(h.beta, M, rng).transpose();
    p.mu.assign(static_cast<size_t>(M), prior.mu);
    p.sigma.assign(static_cast<size_t>(M), Mat4::Identity() * h.sigma_init);
    p.ge = transfer ? Vector::Constant(L, 1.0 / L) : s.global.g0;
    s.envs.push_back(std::move(p));
    s.assign.push_back(std::move(a));
    s.priors.push_back(prior);
  }
  s.pruned.assign(static_cast<size_t>(dw), false);
  return s;
}

Vector region_posterior(const EnvParams& env, const Vec4& x, int label) {
  RegionScorer scorer(env);
  return stats::normalize_log(scorer.log_weights(scorer.log_density(x), label));
}

Vector concept_posterior(const EnvData& data, int t, const EnvParams& env, int region, Mode mode) {
  ConceptScorer scorer(data, env, mode);
  return stats::normalize_log(scorer.log_weights(scorer.visual_row(t), scorer.word_row(t), region));
}

void sample_regions(const EnvData& data, const EnvParams& env, Assignments& a, Rng& rng) {
  RegionScorer scorer(env);
  for (int t = 0; t < data.size(); ++t) {
    const auto ts = static_cast<size_t>(t);
    a.r[ts] = draw(scorer.log_weights(scorer.log_density(data.x[ts]), a.c[ts]), rng, "region", t);
  }
}

void sample_concepts(const EnvData& data, const EnvParams& env, Assignments& a, Mode mode, Rng& rng) {
  ConceptScorer scorer(data, env, mode);
  const Matrix visual = scorer.visual_table();
  for (int t = 0; t < data.size(); ++t) {
    const auto ts = static_cast<size_t>(t);
    a.c[ts] = draw(scorer.log_weights(row_vec(visual, t), scorer.word_row(t), a.r[ts]), rng, "concept", t);
  }
}

void sweep_assignments(const EnvData& data, const EnvParams& env, Assignments& a, Mode mode, Rng& rng) {
  RegionScorer regions(env);
  ConceptScorer concepts(data, env, mode);
  const Matrix visual = concepts.visual_table();
  for (int t = 0; t < data.size(); ++t) {
    const auto ts = static_cast<size_t>(t);
    a.r[ts] = draw(regions.log_weights(regions.log_density(data.x[ts]), a.c[ts]), rng, "region", t);
    a.c[ts] = draw(concepts.log_weights(row_vec(visual, t), concepts.word_row(t), a.r[ts]), rng, "concept", t);
  }
}

std::vector<stats::NiwParams> gaussian_posteriors(const EnvData& data, const Assignments& a,
                                                  const stats::NiwParams& prior, int M) {
  std::vector<std::vector<Vec4>> members(static_cast<size_t>(M));
  for (int t = 0; t < data.size(); ++t)
    members[static_cast<size_t>(a.r[static_cast<size_t>(t)])].push_back(data.x[static_cast<size_t>(t)]);
  std::vector<stats::NiwParams> out;
  out.reserve(static_cast<size_t>(M));
  for (const auto& pts : members) out.push_back(stats::niw_posterior(prior, pts));
  return out;
}

void sample_gaussians(const EnvData& data, EnvParams& env, const Assignments& a, const stats::NiwParams& prior,
                      Rng& rng) {
  const int M = static_cast<int>(env.mu.size());
  const auto post = gaussian_posteriors(data, a, prior, M);
  for (int m = 0; m < M; ++m) {
    auto d = stats::sample_niw(post[static_cast<size_t>(m)], rng);
    env.mu[static_cast<size_t>(m)] = d.mean;
    env.sigma[static_cast<size_t>(m)] = d.cov;
  }
}

EnvConcentrations env_concentrations(const EnvCounts& counts, const GlobalParams& global,
                                     const Hyperparameters& h) {
  EnvConcentrations c;
  c.theta_v = counts.visual + h.delta_v * global.phi_v;
  c.theta_w = counts.words + h.delta_w * global.phi_w;
  c.pi = counts.regions.array() + h.beta;
  c.ge = counts.concepts + h.gamma * global.g0;
  return c;
}

void sample_env_emissions(const EnvData& data, EnvParams& env, const GlobalParams& global, const Assignments& a,
                          const Hyperparameters& h, Rng& rng) {
  const int L = static_cast<int>(env.ge.size());
  const int M = static_cast<int>(env.pi.cols());
  const auto conc = env_concentrations(tally(data, a, L, M), global, h);
  for (int l = 0; l < L; ++l) {
    if (conc.theta_v.cols() > 0)
      env.theta_v.row(l) = stats::sample_dirichlet_support(row_vec(conc.theta_v, l), rng).transpose();
    if (conc.theta_w.cols() > 0)
      env.theta_w.row(l) = stats::sample_dirichlet_support(row_vec(conc.theta_w, l), rng).transpose();
    env.pi.row(l) = stats::sample_dirichlet(row_vec(conc.pi, l), rng).transpose();
  }
  env.ge = stats::sample_dirichlet_support(conc.ge, rng);
}

GlobalConcentrations global_concentrations(const std::vector<EnvCounts>& counts, const Hyperparameters& h) {
  GlobalConcentrations g;
  const auto& first = counts.front();
  g.phi_v = Matrix::Constant(first.visual.rows(), first.visual.cols(), h.alpha_v);
  g.phi_w = Matrix::Constant(first.words.rows(), first.words.cols(), h.alpha_w);
  g.g0 = Vector::Constant(first.concepts.size(), h.gamma0 / static_cast<double>(first.concepts.size()));
  for (const auto& c : counts) {
    g.phi_v += c.visual;
    g.phi_w += c.words;
    g.g0 += c.concepts;
  }
  return g;
}

void sample_global(const Dataset& data, SamplerState& state, const Hyperparameters& h, Rng& rng) {
  const int L = static_cast<int>(state.global.g0.size());
  const int M = state.envs.empty() ? 1 : static_cast<int>(state.envs.front().pi.cols());
  std::vector<EnvCounts> counts;
  for (size_t e = 0; e < data.envs.size(); ++e) counts.push_back(tally(data.envs[e], state.assign[e], L, M));
  const auto conc = global_concentrations(counts, h);
  for (int l = 0; l < L; ++l) {
    if (conc.phi_v.cols() > 0) state.global.phi_v.row(l) = stats::sample_dirichlet(row_vec(conc.phi_v, l), rng).transpose();
    if (conc.phi_w.cols() > 0) state.global.phi_w.row(l) = stats::sample_dirichlet(row_vec(conc.phi_w, l), rng).transpose();
  }
  state.global.g0 = stats::sample_dirichlet(conc.g0, rng);
}

double binary_mutual_info(double p_c, double a, double b) {
  // Joint cells of (word event, concept event).
  const double cells[2][2] = {{a * p_c, b * (1.0 - p_c)}, {(1.0 - a) * p_c, (1.0 - b) * (1.0 - p_c)}};
  const double p_w[2] = {cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]};
  const double p_cat[2] = {p_c, 1.0 - p_c};
  double mi = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double p = cells[i][j];
      if (p <= 0.0) continue;
      mi += p * std::log(p / (p_w[i] * p_cat[j]));
    }
  return std::max(mi, 0.0);
}

Vector word_concept_mi(const Matrix& phi_w, const Vector& g0) {
  const auto L = phi_w.rows();
  const auto K = phi_w.cols();
  Vector out = Vector::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double p_w = 0.0;
    for (Eigen::Index c = 0; c < L; ++c) p_w += phi_w(c, k) * g0[c];
    double best = 0.0;
    for (Eigen::Index c = 0; c < L; ++c) {
      const double pc = g0[c];
      if (pc <= 0.0 || pc >= 1.0) continue;
      const double a = phi_w(c, k);
      const double b = std::clamp((p_w - a * pc) / (1.0 - pc), 0.0, 1.0);
      best = std::max(best, binary_mutual_info(pc, a, b));
    }
    out[k] = best;
  }
  return out;
}

std::vector<bool> mi_prune(GlobalParams& global, std::vector<EnvParams>& envs, double epsilon) {
  const auto K = global.phi_w.cols();
  std::vector<bool> mask(static_cast<size_t>(K), false);
  const Vector mi = word_concept_mi(global.phi_w, global.g0);
  std::vector<int> pruned;
  for (Eigen::Index k = 0; k < K; ++k)
    if (mi[k] < epsilon) {
      mask[static_cast<size_t>(k)] = true;
      pruned.push_back(static_cast<int>(k));
    }
  if (pruned.empty()) return mask;

  auto zeroed = [&](Matrix m, const std::string& what) {
    for (int k : pruned) m.col(k).setZero();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double s = m.row(r).sum();
      if (!(s > 0.0))
        throw PruningError(fmt::format("pruning {} word(s) empties {} row {}", pruned.size(), what, r), pruned);
      m.row(r) /= s;
    }
    return m;
  };
  Matrix phi = zeroed(global.phi_w, "phi_w");
  std::vector<Matrix> thetas;
  for (size_t e = 0; e < envs.size(); ++e) thetas.push_back(zeroed(envs[e].theta_w, fmt::format("env {} theta_w", e)));
  global.phi_w = std::move(phi);
  for (size_t e = 0; e < envs.size(); ++e) envs[e].theta_w = std::move(thetas[e]);
  return mask;
}

std::vector<std::string> state_violations(const SamplerState& s, double tol) {
  std::vector<std::string> out;
  auto rows = [&](const Matrix& m, const std::string& name) {
    if (m.cols() == 0) return;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      if (!is_simplex(row_vec(m, r), tol)) out.push_back(fmt::format("{} row {}", name, r));
  };
  if (!is_simplex(s.global.g0, tol)) out.push_back("g0");
  rows(s.global.phi_v, "phi_v");
  rows(s.global.phi_w, "phi_w");
  for (size_t e = 0; e < s.envs.size(); ++e) {
    const auto& env = s.envs[e];
    const auto tag = fmt::format("env {} ", e);
    rows(env.theta_v, tag + "theta_v");
    rows(env.theta_w, tag + "theta_w");
    rows(env.pi, tag + "pi");
    if (!is_simplex(env.ge, tol)) out.push_back(tag + "ge");
    for (size_t m = 0; m < env.sigma.size(); ++m)
      if (Eigen::LLT<Mat4>(env.sigma[m]).info() != Eigen::Success)
        out.push_back(fmt::format("{}sigma {} fails Cholesky", tag, m));
  }
  return out;
}

namespace {

TrainedModel to_model(const SamplerState& s, const Dictionary& dict, const TrainConfig& config) {
  TrainedModel m;
  m.mode = config.mode;
  m.hyper = config.hyper;
  m.dictionary = dict;
  m.global = s.global;
  m.envs = s.envs;
  m.assignments = s.assign;
  m.pruned_words = s.pruned;
  return m;
}

template <typename F>
void with_locus(int iteration, std::optional<size_t> env, const char* step, F&& f) {
  try {
    f();
  } catch (const PruningError&) {
    throw;
  } catch (const Error& e) {
    throw NumericalError(fmt::format("iteration {}{}, step {}: {}", iteration,
                                     env ? fmt::format(", env {}", *env) : std::string(), step, e.what()));
  }
}

void spcoa_emissions(const EnvData& data, SamplerState& s, const Hyperparameters& h, Rng& rng) {
  auto& env = s.envs.front();
  const int L = static_cast<int>(env.ge.size());
  const int M = static_cast<int>(env.pi.cols());
  const auto counts = tally(data, s.assign.front(), L, M);
  for (int l = 0; l < L; ++l) {
    if (counts.words.cols() > 0) {
      Vector conc = row_vec(counts.words, l).array() + h.alpha_w;
      s.global.phi_w.row(l) = stats::sample_dirichlet(conc, rng).transpose();
    }
    env.pi.row(l) = stats::sample_dirichlet(Vector(row_vec(counts.regions, l).array() + h.beta), rng).transpose();
  }
  env.ge = stats::sample_dirichlet(Vector(counts.concepts.array() + h.gamma / static_cast<double>(L)), rng);
  env.theta_w = s.global.phi_w;
  s.global.g0 = env.ge;
}

void prune_step(SamplerState& s, double epsilon, int iteration) {
  if (s.global.phi_w.cols() == 0) return;
  try {
    s.pruned = mi_prune(s.global, s.envs, epsilon);
  } catch (const PruningError& e) {
    spdlog::info("iteration {}: {}; reconstruction skipped", iteration, e.what());
    s.pruned.assign(s.pruned.size(), false);
  }
}

}  // namespace

FitResult fit_with_trace(const std::vector<Observation>& corpus, const Dictionary& dict, const TrainConfig& config,
                         const SweepObserver& observer) {
  const auto& h = config.hyper;
  h.validate();
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  if (auto v = validate_corpus(corpus, dict); !v.empty())
    throw ConfigError(fmt::format("invalid corpus: {}{}", v.front().what,
                                  v.front().index ? fmt::format(" (observation {})", *v.front().index) : ""));
  const Dataset data = Dataset::from_observations(corpus, dict.size());
  const bool transfer = config.mode == Mode::transfer;
  if (!transfer && data.envs.size() != 1)
    throw ConfigError(fmt::format("{} is single-environment; corpus has {} environments", to_string(config.mode),
                                  data.envs.size()));
  const bool uses_mi = config.mode != Mode::spcoa;

  Rng rng(config.seed);
  FitResult result;
  SamplerState s = init_state(data, config, rng);

  for (int it = 0; it < h.iterations; ++it) {
    for (size_t e = 0; e < data.envs.size(); ++e) {
      const auto& env_data = data.envs[e];
      with_locus(it, e, "assignments",
                 [&] { sweep_assignments(env_data, s.envs[e], s.assign[e], config.mode, rng); });
      with_locus(it, e, "gaussians", [&] { sample_gaussians(env_data, s.envs[e], s.assign[e], s.priors[e], rng); });
      if (transfer) {
        with_locus(it, e, "emissions",
                   [&] { sample_env_emissions(env_data, s.envs[e], s.global, s.assign[e], h, rng); });
      } else {
        with_locus(it, e, "emissions", [&] { spcoa_emissions(env_data, s, h, rng); });
      }
    }
    if (transfer) with_locus(it, std::nullopt, "global", [&] { sample_global(data, s, h, rng); });
    if (uses_mi && config.prune_every_iteration) prune_step(s, h.epsilon, it);
#ifndef NDEBUG
    if (auto v = state_violations(s); !v.empty())
      throw NumericalError(fmt::format("iteration {}: invariant violated: {}", it, v.front()));
#endif
    if (config.record_trace) result.trace.push_back(s.assign);
    if (observer) observer(it, s);
  }
  if (uses_mi && !config.prune_every_iteration && h.iterations > 0) prune_step(s, h.epsilon, h.iterations);

  result.model = to_model(s, dict, config);
  return result;
}

TrainedModel fit(const std::vector<Observation>& corpus, const Dictionary& dict, const TrainConfig& config) {
  return fit_with_trace(corpus, dict, config).model;
}

}  // namespace spco::learn
