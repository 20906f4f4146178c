#include "spco/core.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace spco {

Pose Pose::from_angle(double x, double y, double theta) {
  return Pose{x, y, std::sin(theta), std::cos(theta)};
}

Pose Pose::from_vector(const Vec4& v) { return Pose{v[0], v[1], v[2], v[3]}; }

bool Pose::unit_orientation(double tol) const {
  return std::abs(sin_theta * sin_theta + cos_theta * cos_theta - 1.0) <= tol;
}

Dictionary::Dictionary(std::vector<std::string> entries) {
  for (auto& e : entries) {
    if (find(e)) throw ParameterError(fmt::format("duplicate dictionary entry '{}'", e));
    entries_.push_back(std::move(e));
  }
}

int Dictionary::add(const std::string& word) {
  if (auto k = find(word)) return *k;
  entries_.push_back(word);
  return size() - 1;
}

std::optional<int> Dictionary::find(const std::string& word) const {
  auto it = std::find(entries_.begin(), entries_.end(), word);
  if (it == entries_.end()) return std::nullopt;
  return static_cast<int>(it - entries_.begin());
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::transfer:
      return "transfer";
    case Mode::spcoa:
      return "spcoa";
    case Mode::spcoa_mi:
      return "spcoa-mi";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& s) {
  if (s == "transfer") return Mode::transfer;
  if (s == "spcoa") return Mode::spcoa;
  if (s == "spcoa-mi" || s == "spcoa_mi") return Mode::spcoa_mi;
  throw ConfigError(fmt::format("unknown mode '{}'", s));
}

Hyperparameters Hyperparameters::spcoa_defaults() {
  Hyperparameters h;
  h.alpha_w = 0.1;
  h.gamma = 10.0;
  h.beta = 1.0;
  return h;
}

bool is_spd(const Mat4& m) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    return false;
  Eigen::LLT<Mat4> llt(m);
  return llt.info() == Eigen::Success;
}

void Hyperparameters::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("{} must be > 0 (got {})", name, v));
  };
  positive(alpha_v, "alpha_v");
  positive(alpha_w, "alpha_w");
  positive(delta_v, "delta_v");
  positive(delta_w, "delta_w");
  positive(gamma, "gamma");
  positive(gamma0, "gamma0");
  positive(beta, "beta");
  positive(kappa0, "kappa0");
  positive(s_v, "s_v");
  positive(s_w, "s_w");
  positive(sigma_init, "sigma_init");
  if (!(nu0 > 3.0)) throw ConfigError(fmt::format("nu0 must exceed 3 (got {})", nu0));
  if (!is_spd(psi0)) throw ConfigError("psi0 must be symmetric positive definite");
  if (mu0 && !mu0->allFinite()) throw ConfigError("mu0 must be finite");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (L < 1) throw ConfigError("L must be >= 1");
  if (M < 1) throw ConfigError("M must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
}

int env_count(const std::vector<Observation>& observations) {
  int n = 0;
  for (const auto& o : observations) n = std::max(n, o.env_id + 1);
  return n;
}

bool is_simplex(const Eigen::Ref<const Vector>& row, double tol) {
  if (row.size() == 0) return false;
  if (!row.allFinite() || row.minCoeff() < 0.0) return false;
  return std::abs(row.sum() - 1.0) <= tol;
}

std::vector<Violation> validate_corpus(const std::vector<Observation>& observations,
                                       const Dictionary& dict, std::optional<int> expected_envs) {
  std::vector<Violation> out;
  if (observations.empty()) return out;
  const auto dv = observations.front().visual.size();
  const auto k = dict.size();
  const int envs = expected_envs.value_or(env_count(observations));
  std::vector<int> per_env(static_cast<size_t>(std::max(envs, 0)), 0);
  for (size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    if (o.env_id < 0 || o.env_id >= envs) {
      out.push_back({fmt::format("unknown env id {}", o.env_id), i});
    } else {
      ++per_env[static_cast<size_t>(o.env_id)];
    }
    if (o.visual.size() != dv)
      out.push_back({fmt::format("visual dimension {} != {}", o.visual.size(), dv), i});
    if (o.visual.size() > 0 && (!o.visual.allFinite() || o.visual.minCoeff() < 0.0))
      out.push_back({"negative or non-finite visual entry", i});
    if (!o.pose.vector().allFinite()) out.push_back({"non-finite pose", i});
    if (o.words) {
      if (o.words->size() != k)
        out.push_back({fmt::format("word dimension {} != dictionary size {}", o.words->size(), k), i});
      if (o.words->size() > 0 && (!o.words->allFinite() || o.words->minCoeff() < 0.0))
        out.push_back({"negative or non-finite word entry", i});
    }
  }
  for (size_t e = 0; e < per_env.size(); ++e)
    if (per_env[e] == 0) out.push_back({fmt::format("environment {} has no observations", e), std::nullopt});
  return out;
}

std::vector<Violation> validate_model(const TrainedModel& m, double tol) {
  std::vector<Violation> out;
  const int L = m.num_concepts();
  const auto dv = m.global.phi_v.cols();
  const auto dw = m.global.phi_w.cols();
  auto rows = [&](const Matrix& mat, const std::string& name, Eigen::Index expect_rows,
                  Eigen::Index expect_cols) {
    if (mat.rows() != expect_rows || mat.cols() != expect_cols) {
      out.push_back({fmt::format("{} has shape {}x{}, expected {}x{}", name, mat.rows(), mat.cols(),
                                 expect_rows, expect_cols)});
      return;
    }
    if (expect_cols == 0) return;
    for (Eigen::Index l = 0; l < mat.rows(); ++l)
      if (!is_simplex(mat.row(l).transpose(), tol))
        out.push_back({fmt::format("{} row {} is not a simplex", name, l)});
  };
  if (L < 1) out.push_back({"model has no concepts"});
  if (!is_simplex(m.global.g0, tol)) out.push_back({"g0 is not a simplex"});
  rows(m.global.phi_v, "phi_v", L, dv);
  rows(m.global.phi_w, "phi_w", L, dw);
  if (dw != m.dictionary.size())
    out.push_back({fmt::format("word dimension {} != dictionary size {}", dw, m.dictionary.size())});
  if (static_cast<Eigen::Index>(m.pruned_words.size()) != dw)
    out.push_back({"pruned mask length differs from word dimension"});
  if (m.assignments.size() != m.envs.size()) out.push_back({"assignment list length differs from env count"});
  const int M = m.num_regions();
  for (size_t e = 0; e < m.envs.size(); ++e) {
    const auto& env = m.envs[e];
    const std::string tag = fmt::format("env {} ", e);
    rows(env.theta_v, tag + "theta_v", L, dv);
    rows(env.theta_w, tag + "theta_w", L, dw);
    rows(env.pi, tag + "pi", L, M);
    if (!is_simplex(env.ge, tol)) out.push_back({tag + "ge is not a simplex"});
    if (env.mu.size() != static_cast<size_t>(M) || env.sigma.size() != static_cast<size_t>(M))
      out.push_back({tag + "region count mismatch"});
    for (size_t r = 0; r < env.sigma.size(); ++r)
      if (!is_spd(env.sigma[r])) out.push_back({fmt::format("{}sigma {} is not SPD", tag, r)});
    for (const auto& mu : env.mu)
      if (!mu.allFinite()) out.push_back({tag + "mu not finite"});
    if (e < m.assignments.size()) {
      const auto& a = m.assignments[e];
      if (a.c.size() != a.r.size()) out.push_back({tag + "assignment lengths differ"});
      for (int c : a.c)
        if (c < 0 || c >= L) out.push_back({fmt::format("{}concept index {} out of range", tag, c)});
      for (int r : a.r)
        if (r < 0 || r >= M) out.push_back({fmt::format("{}region index {} out of range", tag, r)});
    }
    if (env.theta_w.cols() == dw && env.theta_w.rows() == L)
      for (Eigen::Index k = 0; k < dw && static_cast<size_t>(k) < m.pruned_words.size(); ++k)
        if (m.pruned_words[static_cast<size_t>(k)] && env.theta_w.col(k).cwiseAbs().maxCoeff() != 0.0)
          out.push_back({fmt::format("{}pruned word {} has nonzero theta_w mass", tag, k)});
  }
  if (m.global.phi_w.rows() == L)
    for (Eigen::Index k = 0; k < dw && static_cast<size_t>(k) < m.pruned_words.size(); ++k)
      if (m.pruned_words[static_cast<size_t>(k)] && m.global.phi_w.col(k).cwiseAbs().maxCoeff() != 0.0)
        out.push_back({fmt::format("pruned word {} has nonzero phi_w mass", k)});
  return out;
}

}  // namespace spco
