#include "spco/data.hpp"

#include "spco/stats.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace spco::data {

using nlohmann::json;

Vector encode_visual(const Vector& features, double s_v) {
  if (!(s_v > 0.0)) throw ParameterError("s_v must be > 0");
  return features.cwiseMax(0.0) * s_v;
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    size_t b = 0, e = current.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) out.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

Dictionary build_dictionary(const std::vector<RawRecord>& corpus) {
  Dictionary dict;
  for (const auto& r : corpus)
    if (r.sentence)
      for (const auto& w : tokenize(*r.sentence)) dict.add(w);
  return dict;
}

Vector encode_words(const std::vector<std::string>& sentence, const Dictionary& dict, double s_w) {
  Vector bag = Vector::Zero(dict.size());
  for (const auto& w : sentence) {
    auto k = dict.find(w);
    if (!k) throw VocabularyError(fmt::format("word '{}' is not in the dictionary", w));
    bag[*k] = s_w;
  }
  return bag;
}

Corpus encode_corpus(const std::vector<RawRecord>& records, const std::optional<Dictionary>& dict,
                     const EncodeOptions& opts) {
  Corpus out;
  out.dictionary = dict ? *dict : build_dictionary(records);
  std::map<int, int> next_t;
  std::optional<Eigen::Index> dv;
  size_t off_circle = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Observation o;
    o.env_id = r.env;
    o.t = next_t[r.env]++;
    o.pose = Pose::from_vector(r.pose);
    if (!o.pose.unit_orientation(1e-6)) ++off_circle;
    if (r.visual) {
      o.visual = *r.visual;
    } else if (r.features) {
      o.visual = encode_visual(*r.features, opts.s_v);
    } else {
      throw ParseError(fmt::format("record {}: neither 'visual' nor 'features' given", i + 1));
    }
    if (!dv) dv = o.visual.size();
    if (o.visual.size() != *dv)
      throw ParseError(fmt::format("record {}: visual dimension {} differs from {}", i + 1, o.visual.size(), *dv));
    if (r.sentence) o.words = encode_words(tokenize(*r.sentence), out.dictionary, opts.s_w);
    out.observations.push_back(std::move(o));
  }
  if (off_circle > 0)
    spdlog::debug("{} of {} poses have sin^2+cos^2 away from 1", off_circle, records.size());
  return out;
}

namespace {

Vector vector_from_json(const json& j, const char* field) {
  if (!j.is_array()) throw ParseError(fmt::format("'{}' must be an array", field));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(fmt::format("'{}' entry {} is not a number", field, i));
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    if (!std::isfinite(v[static_cast<Eigen::Index>(i)]))
      throw ParseError(fmt::format("'{}' entry {} is not finite", field, i));
  }
  return v;
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

RawRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  RawRecord r;
  if (!j.contains("env") || !j["env"].is_number_integer()) throw ParseError("missing integer field 'env'");
  r.env = j["env"].get<int>();
  if (r.env < 0) throw ParseError("'env' must be >= 0");
  if (!j.contains("pose")) throw ParseError("missing field 'pose'");
  Vector pose = vector_from_json(j["pose"], "pose");
  if (pose.size() != 4) throw ParseError("'pose' must have 4 entries");
  r.pose = pose;
  if (j.contains("visual") && !j["visual"].is_null()) r.visual = vector_from_json(j["visual"], "visual");
  if (j.contains("features") && !j["features"].is_null())
    r.features = vector_from_json(j["features"], "features");
  if (!r.visual && !r.features) throw ParseError("one of 'visual' or 'features' is required");
  if (r.visual && r.visual->size() > 0 && r.visual->minCoeff() < 0.0)
    throw ParseError("'visual' entries must be >= 0");
  if (j.contains("sentence") && !j["sentence"].is_null()) {
    if (!j["sentence"].is_string()) throw ParseError("'sentence' must be a string or null");
    r.sentence = j["sentence"].get<std::string>();
  }
  if (j.contains("place") && !j["place"].is_null()) r.place = j["place"].get<std::string>();
  if (j.contains("home_specific")) r.home_specific = j["home_specific"].get<bool>();
  return r;
}

json record_to_json(const RawRecord& r) {
  json j;
  j["env"] = r.env;
  j["pose"] = vector_to_json(r.pose);
  if (r.visual) j["visual"] = vector_to_json(*r.visual);
  if (r.features) j["features"] = vector_to_json(*r.features);
  j["sentence"] = r.sentence ? json(*r.sentence) : json(nullptr);
  if (r.place) j["place"] = *r.place;
  if (r.home_specific) j["home_specific"] = true;
  return j;
}

std::vector<RawRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("{}: cannot open", path.string()));
  std::vector<RawRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<RawRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error(fmt::format("{}: write failed", path.string()));
}

Corpus load_corpus(const std::filesystem::path& path, const EncodeOptions& opts) {
  auto records = read_records(path);
  Corpus c = encode_corpus(records, std::nullopt, opts);
  auto violations = validate_corpus(c.observations, c.dictionary);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw ParseError(fmt::format("{}: {}{}", path.string(), v.what,
                                 v.index ? fmt::format(" (record {})", *v.index + 1) : std::string()));
  }
  return c;
}

std::vector<EvaluationRegion> read_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("{}: cannot open", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!j.is_array()) throw ParseError(fmt::format("{}: expected a JSON array", path.string()));
  std::vector<EvaluationRegion> out;
  for (size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    try {
      EvaluationRegion r;
      r.name = e.at("name").get<std::string>();
      r.rect = {e.at("x_min").get<double>(), e.at("x_max").get<double>(), e.at("y_min").get<double>(),
                e.at("y_max").get<double>()};
      if (e.contains("env")) r.env = e["env"].get<int>();
      if (!(r.rect.x_min < r.rect.x_max) || !(r.rect.y_min < r.rect.y_max))
        throw ParseError("degenerate rectangle");
      out.push_back(std::move(r));
    } catch (const std::exception& ex) {
      throw ParseError(fmt::format("{}: region {}: {}", path.string(), i, ex.what()));
    }
  }
  return out;
}

void write_regions(const std::filesystem::path& path, const std::vector<EvaluationRegion>& regions) {
  json a = json::array();
  for (const auto& r : regions) {
    json e;
    e["name"] = r.name;
    e["x_min"] = r.rect.x_min;
    e["x_max"] = r.rect.x_max;
    e["y_min"] = r.rect.y_min;
    e["y_max"] = r.rect.y_max;
    if (r.env) e["env"] = *r.env;
    a.push_back(std::move(e));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  out << a.dump(2) << '\n';
}

std::vector<RawRecord> select_env(const std::vector<RawRecord>& records, int env, int new_id) {
  std::vector<RawRecord> out;
  for (const auto& r : records)
    if (r.env == env) {
      out.push_back(r);
      out.back().env = new_id;
    }
  return out;
}

std::vector<int> env_ids(const std::vector<RawRecord>& records) {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.env);
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// Forward generator

void SynthSpec::validate() const {
  if (envs < 1 || concepts < 0 || specific_concepts < 0 || total_concepts() < 1 ||
      regions_per_place < 1 || n_per_env < 1)
    throw ConfigError("synthetic corpus counts must be >= 1");
  if (!(separation > 0.0)) throw ConfigError("separation must be > 0");
  if (!(name_given_rate >= 0.0 && name_given_rate <= 1.0)) throw ConfigError("name_given_rate must be in [0,1]");
  if (!(peakedness > 0.0)) throw ConfigError("peakedness must be > 0");
  if (visual_dim() < total_concepts() || word_dim() < total_concepts())
    throw ConfigError("bag dimensions must be at least the number of places");
  if (test_per_place < 0 || visual_draws < 1 || word_draws < 1) throw ConfigError("draw counts must be >= 1");
  if (!(region_sd > 0.0) || !(orientation_sd > 0.0)) throw ConfigError("standard deviations must be > 0");
  if (!(wishart_dof > 5.0)) throw ConfigError("wishart_dof must exceed 5");
}

namespace {

const std::vector<std::string> kGeneralNames = {"kitchen", "bedroom", "toilet",  "bath",
                                                "entrance", "dining", "washroom", "living-room"};

// Emission simplex for place l over dim entries: peaked on entry l.
Vector draw_emission_base(int l, int dim, double peakedness, Rng& rng) {
  if (std::isinf(peakedness)) {
    Vector v = Vector::Zero(dim);
    v[l] = 1.0;
    return v;
  }
  Vector conc = Vector::Ones(dim);
  conc[l] = peakedness;
  return stats::sample_dirichlet(conc, rng);
}

Vector multinomial_counts(int draws, const Vector& probs, Rng& rng) {
  Vector counts = Vector::Zero(probs.size());
  for (int i = 0; i < draws; ++i) counts[stats::sample_categorical(probs, rng)] += 1.0;
  return counts;
}

double xy_sd(const Mat4& cov) { return std::sqrt(std::max(cov(0, 0), cov(1, 1))); }

struct ObsDraw {
  int c;
  int r;
  RawRecord record;
};

ObsDraw draw_observation(const SynthResult& s, int env, std::optional<int> fixed_concept, bool with_sentence,
                         Rng& rng) {
  const auto& p = s.envs[static_cast<size_t>(env)];
  const int c = fixed_concept ? *fixed_concept : stats::sample_categorical(p.ge, rng);
  const int r = stats::sample_categorical(Vector(p.pi.row(c).transpose()), rng);
  RawRecord rec;
  rec.env = env;
  rec.pose = stats::sample_gaussian(p.mu[static_cast<size_t>(r)], p.sigma[static_cast<size_t>(r)], rng);
  rec.visual = multinomial_counts(s.spec.visual_draws, p.theta_v.row(c).transpose(), rng);
  rec.place = s.place_names[static_cast<size_t>(c)];
  rec.home_specific = c >= s.spec.concepts;
  // Draw words even when the sentence is dropped so the stream does not
  // depend on withholding.
  std::set<int> drawn;
  const Vector tw = p.theta_w.row(c).transpose();
  for (int i = 0; i < s.spec.word_draws; ++i) drawn.insert(stats::sample_categorical(tw, rng));
  if (with_sentence) {
    std::string sentence;
    for (const auto& sw : s.spec.stopwords) sentence += sw + " ";
    bool first = true;
    for (int k : drawn) {
      if (!first) sentence += " ";
      sentence += s.vocabulary.at(k);
      first = false;
    }
    rec.sentence = sentence;
  }
  return {c, r, std::move(rec)};
}

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthResult s;
  s.spec = spec;
  Rng rng(spec.seed);
  const int L = spec.total_concepts();
  const int dv = spec.visual_dim();
  const int dw = spec.word_dim();
  const int rpp = spec.regions_per_place;
  const int M = L * rpp;

  for (int l = 0; l < L; ++l) {
    if (l < spec.concepts) {
      s.place_names.push_back(l < static_cast<int>(kGeneralNames.size()) ? kGeneralNames[static_cast<size_t>(l)]
                                                                         : fmt::format("place{}", l));
    } else {
      s.place_names.push_back(fmt::format("private-room{}", l - spec.concepts));
    }
  }
  std::vector<std::string> vocab = s.place_names;
  for (int k = L; k < dw; ++k) vocab.push_back(fmt::format("word{}", k));
  for (const auto& sw : spec.stopwords) vocab.push_back(sw);
  s.vocabulary = Dictionary(vocab);

  // Weak-limit G0, then per-environment G_e restricted to present places.
  const Vector g0 = stats::sample_dirichlet(Vector::Constant(L, spec.concept_concentration / L), rng);
  s.global.g0 = g0;
  s.global.phi_v.resize(L, dv);
  s.global.phi_w.resize(L, dw);
  for (int l = 0; l < L; ++l) {
    s.global.phi_v.row(l) = draw_emission_base(l, dv, spec.peakedness, rng).transpose();
    s.global.phi_w.row(l) = draw_emission_base(l, dw, spec.peakedness, rng).transpose();
  }

  const double kappa_gen = 1.0 / (spec.separation * spec.separation);
  const Mat4 psi_gen = (spec.wishart_dof - 5.0) * Vec4(spec.region_sd * spec.region_sd, spec.region_sd * spec.region_sd,
                                                       spec.orientation_sd * spec.orientation_sd,
                                                       spec.orientation_sd * spec.orientation_sd)
                                                      .asDiagonal();
  for (int e = 0; e < spec.envs; ++e) {
    std::vector<int> active;
    const bool last = e == spec.envs - 1;
    for (int l = 0; l < L; ++l)
      if (l < spec.concepts || last) active.push_back(l);
    s.active.push_back(active);

    EnvParams p;
    Vector conc = Vector::Zero(L);
    for (int l : active) conc[l] = spec.concept_concentration * g0[l];
    p.ge = stats::sample_dirichlet_support(conc, rng);
    p.theta_v.resize(L, dv);
    p.theta_w.resize(L, dw);
    p.pi = Matrix::Zero(L, M);
    for (int l = 0; l < L; ++l) {
      p.theta_v.row(l) =
          stats::sample_dirichlet_support(Vector(spec.emission_delta * s.global.phi_v.row(l).transpose()), rng)
              .transpose();
      p.theta_w.row(l) =
          stats::sample_dirichlet_support(Vector(spec.emission_delta * s.global.phi_w.row(l).transpose()), rng)
              .transpose();
      Vector pc = Vector::Zero(M);
      pc.segment(l * rpp, rpp).setConstant(spec.region_concentration);
      p.pi.row(l) = stats::sample_dirichlet_support(pc, rng).transpose();
    }
    stats::NiwParams prior{Vec4(0.0, 0.0, 0.0, 1.0), kappa_gen, psi_gen, spec.wishart_dof};
    for (int m = 0; m < M; ++m) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        auto draw = stats::sample_niw(prior, rng);
        // Headings are drawn on the unit circle; only the spread comes from the NIW draw.
        const double heading = 2.0 * std::numbers::pi * rng.uniform();
        draw.mean[2] = std::sin(heading);
        draw.mean[3] = std::cos(heading);
        const double sd = xy_sd(draw.cov);
        placed = true;
        for (size_t q = 0; q < p.mu.size() && placed; ++q) {
          const double need = spec.separation * std::max(sd, xy_sd(p.sigma[q]));
          if ((draw.mean.head<2>() - p.mu[q].head<2>()).norm() < need) placed = false;
        }
        if (placed) {
          p.mu.push_back(draw.mean);
          p.sigma.push_back(draw.cov);
        }
      }
      if (!placed)
        throw GenerationError(
            fmt::format("env {}: region {} could not be separated by {} sd in 1000 attempts", e, m, spec.separation));
    }
    s.envs.push_back(std::move(p));
  }

  for (int e = 0; e < spec.envs; ++e) {
    Assignments truth;
    std::vector<RawRecord> env_records;
    for (int t = 0; t < spec.n_per_env; ++t) {
      auto d = draw_observation(s, e, std::nullopt, true, rng);
      truth.c.push_back(d.c);
      truth.r.push_back(d.r);
      env_records.push_back(std::move(d.record));
    }
    // Keep sentences on round(rate * n) observations of each place.
    std::map<int, std::vector<size_t>> by_place;
    for (size_t i = 0; i < truth.c.size(); ++i) by_place[truth.c[i]].push_back(i);
    for (auto& [place, idx] : by_place) {
      for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
      const auto keep = static_cast<size_t>(std::llround(spec.name_given_rate * static_cast<double>(idx.size())));
      for (size_t i = keep; i < idx.size(); ++i) env_records[idx[i]].sentence.reset();
    }
    s.truth.push_back(std::move(truth));
    for (auto& r : env_records) s.records.push_back(std::move(r));

    for (const auto& l : s.active[static_cast<size_t>(e)]) {
      for (int j = 0; j < rpp; ++j) {
        const int m = l * rpp + j;
        const auto& mu = s.envs[static_cast<size_t>(e)].mu[static_cast<size_t>(m)];
        const auto& cov = s.envs[static_cast<size_t>(e)].sigma[static_cast<size_t>(m)];
        const double sx = 2.0 * std::sqrt(cov(0, 0));
        const double sy = 2.0 * std::sqrt(cov(1, 1));
        s.regions.push_back({s.place_names[static_cast<size_t>(l)], {mu[0] - sx, mu[0] + sx, mu[1] - sy, mu[1] + sy}, e});
      }
    }
  }

  Rng test_rng(Rng::derive(spec.seed, 1));
  for (int e = 0; e < spec.envs; ++e) {
    auto t = s.sample_held_out(e, spec.test_per_place, false, test_rng);
    s.test.insert(s.test.end(), t.begin(), t.end());
  }
  return s;
}

std::vector<RawRecord> SynthResult::sample_held_out(int env, int per_place, bool with_sentences, Rng& rng) const {
  std::vector<RawRecord> out;
  for (int l : active.at(static_cast<size_t>(env)))
    for (int i = 0; i < per_place; ++i) out.push_back(draw_observation(*this, env, l, with_sentences, rng).record);
  return out;
}

TrainedModel SynthResult::oracle_model(const Hyperparameters& hyper) const {
  TrainedModel m;
  m.mode = Mode::transfer;
  m.hyper = hyper;
  m.hyper.L = spec.total_concepts();
  m.hyper.M = spec.total_concepts() * spec.regions_per_place;
  m.dictionary = vocabulary;
  const int dw = spec.word_dim();
  const int K = vocabulary.size();
  auto widen = [&](const Matrix& w) {
    Matrix out = Matrix::Zero(w.rows(), K);
    out.leftCols(dw) = w;
    return out;
  };
  m.global = global;
  m.global.phi_w = widen(global.phi_w);
  for (const auto& e : envs) {
    EnvParams p = e;
    p.theta_w = widen(e.theta_w);
    m.envs.push_back(std::move(p));
  }
  m.assignments = truth;
  m.pruned_words.assign(static_cast<size_t>(K), false);
  for (int k = dw; k < K; ++k) m.pruned_words[static_cast<size_t>(k)] = true;
  return m;
}

}  // namespace spco::data
