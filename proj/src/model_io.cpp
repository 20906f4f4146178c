#include "spco/model_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace spco::io {

using nlohmann::json;

namespace {

json matrix_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(fmt::format("model: missing field '{}'", key));
  return *it;
}

Vector vector_from(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(fmt::format("model: '{}' must be an array", what));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(fmt::format("model: '{}' holds a non-number", what));
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

// An L x 0 matrix is stored as L empty rows, so the row count survives.
Matrix matrix_from(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(fmt::format("model: '{}' must be an array of rows", what));
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vector row = vector_from(j[static_cast<size_t>(i)], what);
    if (row.size() != cols) throw ParseError(fmt::format("model: '{}' has ragged rows", what));
    m.row(i) = row.transpose();
  }
  return m;
}

Vec4 vec4_from(const json& j, const char* what) {
  const Vector v = vector_from(j, what);
  if (v.size() != 4) throw ParseError(fmt::format("model: '{}' must have 4 entries", what));
  return v;
}

Mat4 mat4_from(const json& j, const char* what) {
  const Matrix m = matrix_from(j, what);
  if (m.rows() != 4 || m.cols() != 4) throw ParseError(fmt::format("model: '{}' must be 4x4", what));
  return m;
}

json hyper_json(const Hyperparameters& h) {
  return {{"alpha_v", h.alpha_v},       {"alpha_w", h.alpha_w},   {"delta_v", h.delta_v},
          {"delta_w", h.delta_w},       {"gamma", h.gamma},       {"gamma0", h.gamma0},
          {"beta", h.beta},             {"mu0", h.mu0 ? vector_json(*h.mu0) : json(nullptr)},
          {"kappa0", h.kappa0},         {"psi0", matrix_json(h.psi0)},
          {"nu0", h.nu0},               {"s_v", h.s_v},           {"s_w", h.s_w},
          {"epsilon", h.epsilon},       {"L", h.L},               {"M", h.M},
          {"iterations", h.iterations}, {"sigma_init", h.sigma_init}};
}

Hyperparameters hyper_from(const json& j) {
  Hyperparameters h;
  auto real = [&](const char* key) {
    const auto& v = field(j, key);
    if (!v.is_number()) throw ParseError(fmt::format("model: hyperparameter '{}' must be a number", key));
    return v.get<double>();
  };
  auto integer = [&](const char* key) {
    const auto& v = field(j, key);
    if (!v.is_number_integer()) throw ParseError(fmt::format("model: hyperparameter '{}' must be an integer", key));
    return v.get<int>();
  };
  h.alpha_v = real("alpha_v");
  h.alpha_w = real("alpha_w");
  h.delta_v = real("delta_v");
  h.delta_w = real("delta_w");
  h.gamma = real("gamma");
  h.gamma0 = real("gamma0");
  h.beta = real("beta");
  if (const auto& mu0 = field(j, "mu0"); !mu0.is_null()) h.mu0 = vec4_from(mu0, "mu0");
  h.kappa0 = real("kappa0");
  h.psi0 = mat4_from(field(j, "psi0"), "psi0");
  h.nu0 = real("nu0");
  h.s_v = real("s_v");
  h.s_w = real("s_w");
  h.epsilon = real("epsilon");
  h.L = integer("L");
  h.M = integer("M");
  h.iterations = integer("iterations");
  h.sigma_init = real("sigma_init");
  return h;
}

void dump_into(const json& j, int indent, int depth, std::string& out) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) throw NumericalError("cannot serialize a non-finite real");
      out += fmt::format("{:.17g}", v);
      break;
    }
    case json::value_t::array: {
      // Arrays of scalars stay on one line.
      const bool flat = std::none_of(j.begin(), j.end(), [](const json& e) { return e.is_structured(); });
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += ',';
        first = false;
        if (!flat) newline(depth + 1);
        dump_into(e, indent, depth + 1, out);
      }
      if (!flat && !j.empty()) newline(depth);
      out += ']';
      break;
    }
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += json(k).dump();
        out += indent < 0 ? ":" : ": ";
        dump_into(v, indent, depth + 1, out);
      }
      if (!j.empty()) newline(depth);
      out += '}';
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump_exact(const json& j, int indent) {
  std::string out;
  dump_into(j, indent, 0, out);
  return out;
}

json model_to_json(const TrainedModel& model) {
  json envs = json::array();
  for (const auto& e : model.envs) {
    json mu = json::array(), sigma = json::array();
    for (const auto& m : e.mu) mu.push_back(vector_json(m));
    for (const auto& s : e.sigma) sigma.push_back(matrix_json(s));
    envs.push_back({{"theta_v", matrix_json(e.theta_v)},
                    {"theta_w", matrix_json(e.theta_w)},
                    {"pi", matrix_json(e.pi)},
                    {"mu", std::move(mu)},
                    {"sigma", std::move(sigma)},
                    {"ge", vector_json(e.ge)}});
  }
  json assignments = json::array();
  for (const auto& a : model.assignments) assignments.push_back({{"c", a.c}, {"r", a.r}});
  json pruned = json::array();
  for (bool p : model.pruned_words) pruned.push_back(p);
  return {{"schema_version", kSchemaVersion},
          {"mode", to_string(model.mode)},
          {"hyper", hyper_json(model.hyper)},
          {"dictionary", model.dictionary.entries()},
          {"global",
           {{"phi_v", matrix_json(model.global.phi_v)},
            {"phi_w", matrix_json(model.global.phi_w)},
            {"g0", vector_json(model.global.g0)}}},
          {"envs", std::move(envs)},
          {"assignments", std::move(assignments)},
          {"pruned_words", std::move(pruned)}};
}

TrainedModel model_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ParseError("model: top level must be an object");
    const auto& version = field(j, "schema_version");
    if (!version.is_number_integer() || version.get<int>() != kSchemaVersion)
      throw ParseError(fmt::format("model: unsupported schema_version {} (expected {})", version.dump(), kSchemaVersion));
    TrainedModel m;
    m.mode = mode_from_string(field(j, "mode").get<std::string>());
    m.hyper = hyper_from(field(j, "hyper"));
    m.dictionary = Dictionary(field(j, "dictionary").get<std::vector<std::string>>());
    const auto& g = field(j, "global");
    m.global.phi_v = matrix_from(field(g, "phi_v"), "phi_v");
    m.global.phi_w = matrix_from(field(g, "phi_w"), "phi_w");
    m.global.g0 = vector_from(field(g, "g0"), "g0");
    for (const auto& ej : field(j, "envs")) {
      EnvParams e;
      e.theta_v = matrix_from(field(ej, "theta_v"), "theta_v");
      e.theta_w = matrix_from(field(ej, "theta_w"), "theta_w");
      e.pi = matrix_from(field(ej, "pi"), "pi");
      for (const auto& mu : field(ej, "mu")) e.mu.push_back(vec4_from(mu, "mu"));
      for (const auto& s : field(ej, "sigma")) e.sigma.push_back(mat4_from(s, "sigma"));
      e.ge = vector_from(field(ej, "ge"), "ge");
      m.envs.push_back(std::move(e));
    }
    for (const auto& aj : field(j, "assignments"))
      m.assignments.push_back({field(aj, "c").get<std::vector<int>>(), field(aj, "r").get<std::vector<int>>()});
    for (const auto& p : field(j, "pruned_words")) m.pruned_words.push_back(p.get<bool>());
    // Empty visual rows (SpCoA) come back as L x 0.
    if (m.global.phi_v.rows() == 0) m.global.phi_v.resize(m.global.g0.size(), 0);
    for (auto& e : m.envs)
      if (e.theta_v.rows() == 0) e.theta_v.resize(m.global.g0.size(), 0);

    const auto violations = validate_model(m);
    if (!violations.empty()) {
      std::string msg = "model: invalid parameters";
      for (const auto& v : violations) msg += "; " + v.what;
      throw ParseError(msg);
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("model: {}", e.what()));
  } catch (const ConfigError& e) {
    throw ParseError(fmt::format("model: {}", e.what()));
  }
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
  const std::string text = dump_exact(model_to_json(model)) + "\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("{}: write failed", path.string()));
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("{}: cannot open for reading", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  try {
    return model_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace spco::io
