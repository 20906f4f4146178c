#include "spco/cli.hpp"

#include "spco/data.hpp"
#include "spco/eval.hpp"
#include "spco/learn.hpp"
#include "spco/log.hpp"
#include "spco/model_io.hpp"
#include "spco/predict.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace spco::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct HyperFlags {
  std::optional<double> alpha_v, alpha_w, delta_v, delta_w, gamma, gamma0, beta, kappa0, nu0, s_v, s_w, epsilon,
      sigma_init;
  std::optional<int> L, M, iterations;
  std::vector<double> mu0;
  std::vector<double> psi0;

  void attach(CLI::App& app) {
    app.add_option("--alpha_v", alpha_v, "Concentration of the global visual emissions");
    app.add_option("--alpha_w", alpha_w, "Concentration of the global word emissions");
    app.add_option("--delta_v", delta_v, "Strength of the global visual prior");
    app.add_option("--delta_w", delta_w, "Strength of the global word prior");
    app.add_option("--gamma", gamma, "Concentration of the environment concept weights");
    app.add_option("--gamma0", gamma0, "Concentration of the global concept weights");
    app.add_option("--beta", beta, "Concentration of the region weights");
    app.add_option("--mu0", mu0, "Prior mean of the region Gaussians (4 values)")->expected(4);
    app.add_option("--kappa0", kappa0, "NIW mean precision scale");
    app.add_option("--psi0", psi0, "NIW scale matrix: 4 diagonal entries or 16 row-major entries")->expected(4, 16);
    app.add_option("--nu0", nu0, "NIW degrees of freedom");
    app.add_option("--s_v", s_v, "Visual feature scale");
    app.add_option("--s_w", s_w, "Word bag scale");
    app.add_option("--epsilon", epsilon, "Mutual-information pruning threshold");
    app.add_option("--L", L, "Number of concepts");
    app.add_option("--M", M, "Number of regions per environment");
    app.add_option("--iterations", iterations, "Gibbs iterations");
    app.add_option("--sigma_init", sigma_init, "Initial region covariance scale");
  }

  Hyperparameters resolve(Mode mode) const {
    Hyperparameters h = mode == Mode::transfer ? Hyperparameters{} : Hyperparameters::spcoa_defaults();
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(h.alpha_v, alpha_v);
    set(h.alpha_w, alpha_w);
    set(h.delta_v, delta_v);
    set(h.delta_w, delta_w);
    set(h.gamma, gamma);
    set(h.gamma0, gamma0);
    set(h.beta, beta);
    set(h.kappa0, kappa0);
    set(h.nu0, nu0);
    set(h.s_v, s_v);
    set(h.s_w, s_w);
    set(h.epsilon, epsilon);
    set(h.sigma_init, sigma_init);
    set(h.L, L);
    set(h.M, M);
    set(h.iterations, iterations);
    if (!mu0.empty()) h.mu0 = Vec4(mu0[0], mu0[1], mu0[2], mu0[3]);
    if (psi0.size() == 4) {
      h.psi0 = Vec4(psi0[0], psi0[1], psi0[2], psi0[3]).asDiagonal();
    } else if (psi0.size() == 16) {
      for (int i = 0; i < 16; ++i) h.psi0(i / 4, i % 4) = psi0[static_cast<size_t>(i)];
    } else if (!psi0.empty()) {
      throw ConfigError("--psi0 takes 4 or 16 values");
    }
    h.validate();
    return h;
  }
};

const std::map<std::string, Mode> kModes{{"transfer", Mode::transfer}, {"spcoa", Mode::spcoa}, {"spcoa-mi", Mode::spcoa_mi}};

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter";
  if (dynamic_cast<const DegenerateDistributionError*>(&e)) return "degenerate_distribution";
  if (dynamic_cast<const VocabularyError*>(&e)) return "vocabulary";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const MetricError*>(&e)) return "metric";
  if (dynamic_cast<const GenerationError*>(&e)) return "generation";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const predict::NoPredictionError*>(&e)) return "no_prediction";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("{}: write failed", path.string()));
}

std::vector<data::RawRecord> read_all(const std::vector<std::string>& paths) {
  std::vector<data::RawRecord> out;
  for (const auto& p : paths) {
    auto recs = data::read_records(p);
    out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return out;
}

// ---- generate ----

struct GenerateArgs {
  data::SynthSpec spec;
  std::string out_dir = ".";
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const auto result = data::generate_synthetic(a.spec);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  data::write_records(dir / "corpus.jsonl", result.records);
  data::write_records(dir / "test.jsonl", result.test);
  data::write_regions(dir / "regions.json", result.regions);

  json truth = json::array();
  for (size_t e = 0; e < result.truth.size(); ++e)
    truth.push_back({{"env", e}, {"c", result.truth[e].c}, {"r", result.truth[e].r}, {"active", result.active[e]}});
  write_text(dir / "truth.json", json({{"place_names", result.place_names}, {"environments", truth}}).dump(1) + "\n");

  const auto& s = a.spec;
  json manifest = {{"seed", s.seed},
                   {"envs", s.envs},
                   {"concepts", s.concepts},
                   {"specific_concepts", s.specific_concepts},
                   {"regions_per_place", s.regions_per_place},
                   {"n_per_env", s.n_per_env},
                   {"dim_v", s.visual_dim()},
                   {"dim_w", result.vocabulary.size()},
                   {"separation", s.separation},
                   {"peakedness", std::isfinite(s.peakedness) ? json(s.peakedness) : json("inf")},
                   {"name_given_rate", s.name_given_rate},
                   {"test_per_place", s.test_per_place},
                   {"stopwords", s.stopwords},
                   {"vocabulary", result.vocabulary.entries()},
                   {"files", {"corpus.jsonl", "test.jsonl", "truth.json", "regions.json"}}};
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
  out << json({{"command", "generate"}, {"seed", s.seed}, {"out_dir", dir.string()}}).dump() << "\n";
}

// ---- train ----

struct TrainArgs {
  std::vector<std::string> corpus;
  std::string out;
  Mode mode = Mode::transfer;
  std::uint64_t seed = 0;
  bool prune_at_end = false;
  HyperFlags hyper;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  learn::TrainConfig config;
  config.mode = a.mode;
  config.seed = a.seed;
  config.hyper = a.hyper.resolve(a.mode);
  config.prune_every_iteration = !a.prune_at_end;
  const auto records = read_all(a.corpus);
  auto corpus = data::encode_corpus(records, std::nullopt, {config.hyper.s_v, config.hyper.s_w});
  const auto violations = validate_corpus(corpus.observations, corpus.dictionary);
  if (!violations.empty()) throw ConfigError(fmt::format("corpus: {}", violations.front().what));
  spdlog::info("training {} on {} observations, seed {}", to_string(a.mode), corpus.observations.size(), a.seed);
  const auto model = learn::fit(corpus.observations, corpus.dictionary, config);
  io::save_model(a.out, model);
  int pruned = static_cast<int>(std::count(model.pruned_words.begin(), model.pruned_words.end(), true));
  out << json({{"command", "train"},
               {"seed", a.seed},
               {"mode", to_string(a.mode)},
               {"model", a.out},
               {"environments", model.envs.size()},
               {"dictionary", model.dictionary.size()},
               {"pruned_words", pruned}})
             .dump()
      << "\n";
}

// ---- predict ----

struct PredictArgs {
  std::string model;
  int env = 0;
  // name
  std::vector<double> pose;
  std::vector<double> visual;
  std::vector<double> features;
  std::string input;
  int top = 3;
  // position
  std::string word;
  int samples = 10;
  std::uint64_t seed = 0;
};

json name_entry(const TrainedModel& model, int env, const Vec4& pose, const Vector& visual, int top) {
  json preds = json::array();
  for (const auto& s : predict::predict_name(model, env, Pose::from_vector(pose), visual, top))
    preds.push_back({{"word", s.word}, {"score", s.score}});
  return {{"env", env}, {"pose", {pose[0], pose[1], pose[2], pose[3]}}, {"predictions", std::move(preds)}};
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

void cmd_predict_name(const PredictArgs& a, std::ostream& out) {
  const auto model = io::load_model(a.model);
  const double s_v = model.hyper.s_v;
  if (!a.input.empty()) {
    for (const auto& r : data::read_records(a.input)) {
      const Vector v = r.visual ? *r.visual : r.features ? data::encode_visual(*r.features, s_v) : Vector();
      out << name_entry(model, a.env, r.pose, v, a.top).dump() << "\n";
    }
    return;
  }
  if (a.pose.size() != 4) throw ConfigError("predict name needs --pose (4 values) or --input");
  Vector v;
  if (!a.visual.empty()) v = to_vector(a.visual);
  else if (!a.features.empty()) v = data::encode_visual(to_vector(a.features), s_v);
  out << name_entry(model, a.env, Vec4(a.pose[0], a.pose[1], a.pose[2], a.pose[3]), v, a.top).dump() << "\n";
}

void cmd_predict_position(const PredictArgs& a, std::ostream& out) {
  const auto model = io::load_model(a.model);
  const auto region = predict::predict_region(model, a.env, a.word);
  Rng rng(a.seed);
  for (const auto& p : predict::predict_positions(model, a.env, a.word, a.samples, rng))
    out << json({{"word", a.word},
                 {"region", region.region},
                 {"x", p.x},
                 {"y", p.y},
                 {"sin_theta", p.sin_theta},
                 {"cos_theta", p.cos_theta}})
               .dump()
        << "\n";
}

// ---- eval ----

struct EvalArgs {
  std::vector<std::string> corpus;
  std::string test;
  std::string regions;
  int new_env = -1;
  Mode mode = Mode::transfer;
  std::uint64_t seed = 0;
  int trials = 20;
  int position_samples = 10;
  int threads = 0;
  std::vector<int> env_counts{0, 2, 4};
  std::vector<double> rates{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::string out_dir = ".";
  HyperFlags hyper;
};

struct EvalInputs {
  std::vector<std::vector<data::RawRecord>> experienced;
  std::vector<data::RawRecord> target;
  std::vector<data::RawRecord> test;
  std::vector<EvaluationRegion> regions;
};

EvalInputs load_eval_inputs(const EvalArgs& a) {
  const auto records = read_all(a.corpus);
  auto ids = data::env_ids(records);
  const int new_env = a.new_env >= 0 ? a.new_env : (ids.empty() ? 0 : ids.back());
  if (std::find(ids.begin(), ids.end(), new_env) == ids.end())
    throw ConfigError(fmt::format("environment {} does not occur in the corpus", new_env));
  EvalInputs in;
  int next = 0;
  for (int id : ids)
    if (id != new_env) in.experienced.push_back(data::select_env(records, id, next++));
  in.target = data::select_env(records, new_env, next);
  const auto test = data::read_records(a.test);
  in.test = data::select_env(test, new_env, next);
  if (in.test.empty()) throw ConfigError(fmt::format("{}: no test records for environment {}", a.test, new_env));
  for (auto& r : data::read_regions(a.regions))
    if (!r.env || *r.env == new_env) in.regions.push_back(std::move(r));
  return in;
}

void emit_tables(const eval::ResultTable& table, const EvalArgs& a, const char* command, std::ostream& out) {
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  std::ostringstream csv;
  table.write_csv(csv);
  write_text(dir / "results.csv", csv.str());
  json summary = table.summary();
  summary["seed"] = a.seed;
  summary["trials"] = a.trials;
  write_text(dir / "summary.json", summary.dump(1) + "\n");
  json means = json::array();
  for (const auto& s : table.settings)
    means.push_back({{"setting", s},
                     {"A_n", table.mean(s, "all", "A_n").value_or(0.0)},
                     {"A_p", table.mean(s, "all", "A_p").value_or(0.0)}});
  out << json({{"command", command}, {"seed", a.seed}, {"out_dir", dir.string()}, {"means", means}}).dump() << "\n";
}

eval::ExperimentConfig experiment_config(const EvalArgs& a) {
  eval::ExperimentConfig c;
  c.train.mode = a.mode;
  c.train.hyper = a.hyper.resolve(a.mode);
  c.trials = a.trials;
  c.position_samples = a.position_samples;
  c.seed = a.seed;
  c.threads = a.threads;
  return c;
}

void cmd_eval_transfer(const EvalArgs& a, std::ostream& out) {
  const auto in = load_eval_inputs(a);
  const auto table = eval::run_transfer_experiment(in.experienced, in.target, in.test, in.regions, a.env_counts,
                                                   experiment_config(a));
  emit_tables(table, a, "eval transfer", out);
}

void cmd_eval_adaptive(const EvalArgs& a, std::ostream& out) {
  const auto in = load_eval_inputs(a);
  const auto table =
      eval::run_adaptive_experiment(in.experienced, in.target, in.test, in.regions, a.rates, experiment_config(a));
  emit_tables(table, a, "eval adaptive", out);
}

void add_eval_options(CLI::App& cmd, EvalArgs& a) {
  cmd.add_option("--corpus", a.corpus, "JSON-lines corpus file(s) holding every environment")->required();
  cmd.add_option("--test", a.test, "JSON-lines test records with place labels")->required();
  cmd.add_option("--regions", a.regions, "Evaluation rectangles (JSON)")->required();
  cmd.add_option("--new-env", a.new_env, "Environment id used as the new environment (default: the last id)");
  cmd.add_option("--mode", a.mode, "Learner")->transform(CLI::CheckedTransformer(kModes, CLI::ignore_case));
  cmd.add_option("--seed", a.seed, "Base seed");
  cmd.add_option("--trials", a.trials, "Trials per setting");
  cmd.add_option("--position-samples", a.position_samples, "Positions sampled per name");
  cmd.add_option("--threads", a.threads, "Worker threads (0: hardware concurrency)");
  cmd.add_option("--out-dir", a.out_dir, "Directory for results.csv and summary.json");
  a.hyper.attach(cmd);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();
  CLI::App app{"Spatial concept learning with transfer across environments"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic corpus with ground truth");
  auto& s = gen.spec;
  g->add_option("--out-dir", gen.out_dir, "Output directory");
  g->add_option("--seed", s.seed, "Seed");
  g->add_option("--envs", s.envs, "Environments");
  g->add_option("--concepts", s.concepts, "General places present in every environment");
  g->add_option("--specific-concepts", s.specific_concepts, "Home-specific places in the last environment");
  g->add_option("--regions-per-place", s.regions_per_place, "Regions per place");
  g->add_option("--n-per-env", s.n_per_env, "Observations per environment");
  g->add_option("--dim-v", s.dim_v, "Visual dimension (0: one per place)");
  g->add_option("--dim-w", s.dim_w, "Name vocabulary size (0: one per place)");
  g->add_option("--separation", s.separation, "Minimum region separation in standard deviations");
  g->add_option("--peakedness", s.peakedness, "Emission peakedness (inf: one-hot)");
  g->add_option("--name-given-rate", s.name_given_rate, "Fraction of observations with a sentence");
  g->add_option("--test-per-place", s.test_per_place, "Held-out test records per place");
  g->add_option("--stopwords", s.stopwords, "Words added to every sentence");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Fit a model to a corpus");
  t->add_option("--corpus", train.corpus, "JSON-lines corpus file(s)")->required();
  t->add_option("--out", train.out, "Model output path")->required();
  t->add_option("--mode", train.mode, "Learner")->transform(CLI::CheckedTransformer(kModes, CLI::ignore_case));
  t->add_option("--seed", train.seed, "Seed");
  t->add_flag("--prune-at-end", train.prune_at_end, "Prune words once after the last iteration");
  train.hyper.attach(*t);

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Predict from a trained model");
  p->require_subcommand(1);
  auto* pn = p->add_subcommand("name", "Top location names for a pose and visual bag");
  pn->add_option("--model", pred.model, "Model file")->required();
  pn->add_option("--env", pred.env, "Environment index within the model");
  pn->add_option("--pose", pred.pose, "x y sin cos")->expected(4);
  pn->add_option("--visual", pred.visual, "Scaled visual bag");
  pn->add_option("--features", pred.features, "Raw visual activations");
  pn->add_option("--input", pred.input, "JSON-lines records to predict for");
  pn->add_option("--top", pred.top, "Number of names reported");
  auto* pp = p->add_subcommand("position", "Sample poses for a location name");
  pp->add_option("--model", pred.model, "Model file")->required();
  pp->add_option("--env", pred.env, "Environment index within the model");
  pp->add_option("--word", pred.word, "Location name")->required();
  pp->add_option("--samples", pred.samples, "Number of poses");
  pp->add_option("--seed", pred.seed, "Seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run an evaluation experiment");
  e->require_subcommand(1);
  auto* et = e->add_subcommand("transfer", "Accuracy against the number of experienced environments");
  add_eval_options(*et, ev);
  et->add_option("--env-counts", ev.env_counts, "Experienced environment counts")->delimiter(',');
  auto* ea = e->add_subcommand("adaptive", "Accuracy of home-specific names against the name-given rate");
  add_eval_options(*ea, ev);
  ea->add_option("--rates", ev.rates, "Name-given rates")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    err << json({{"error", "usage"}, {"message", ex.what()}}).dump() << "\n";
    return 2;
  }

  try {
    if (g->parsed()) cmd_generate(gen, out);
    else if (t->parsed()) cmd_train(train, out);
    else if (pn->parsed()) cmd_predict_name(pred, out);
    else if (pp->parsed()) cmd_predict_position(pred, out);
    else if (et->parsed()) cmd_eval_transfer(ev, out);
    else if (ea->parsed()) cmd_eval_adaptive(ev, out);
    return 0;
  } catch (const std::exception& ex) {
    err << json({{"error", error_kind(ex)}, {"message", ex.what()}}).dump() << "\n";
    return 1;
  }
}

}  // namespace spco::cli
