#include <doctest.h>

#include "spco/data.hpp"
#include "spco/learn.hpp"
#include "spco/model_io.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

using namespace spco;
namespace fs = std::filesystem;

namespace {

TrainedModel small_fit(Mode mode) {
  data::SynthSpec spec;
  spec.seed = 41;
  spec.n_per_env = 15;
  spec.envs = mode == Mode::transfer ? 2 : 1;
  const auto s = data::generate_synthetic(spec);
  const auto c = data::encode_corpus(s.records, s.vocabulary, {});
  learn::TrainConfig cfg;
  cfg.mode = mode;
  cfg.hyper = mode == Mode::transfer ? Hyperparameters{} : Hyperparameters::spcoa_defaults();
  cfg.hyper.L = 4;
  cfg.hyper.M = 5;
  cfg.hyper.iterations = 3;
  cfg.hyper.mu0 = Vec4(0.5, 0.5, 0.0, 1.0);
  cfg.seed = 1;
  return learn::fit(c.observations, c.dictionary, cfg);
}

void check_same(const TrainedModel& a, const TrainedModel& b) {
  auto near = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           (x.size() == 0 || (x - y).cwiseAbs().maxCoeff() <= 1e-12);
  };
  CHECK(a.mode == b.mode);
  CHECK(a.dictionary == b.dictionary);
  CHECK(a.hyper.L == b.hyper.L);
  CHECK(a.hyper.iterations == b.hyper.iterations);
  CHECK(a.hyper.delta_v == b.hyper.delta_v);
  CHECK(*a.hyper.mu0 == *b.hyper.mu0);
  CHECK(near(a.hyper.psi0, b.hyper.psi0));
  CHECK(near(a.global.phi_v, b.global.phi_v));
  CHECK(near(a.global.phi_w, b.global.phi_w));
  CHECK(near(a.global.g0, b.global.g0));
  REQUIRE(a.envs.size() == b.envs.size());
  for (size_t e = 0; e < a.envs.size(); ++e) {
    CHECK(near(a.envs[e].theta_v, b.envs[e].theta_v));
    CHECK(near(a.envs[e].theta_w, b.envs[e].theta_w));
    CHECK(near(a.envs[e].pi, b.envs[e].pi));
    CHECK(near(a.envs[e].ge, b.envs[e].ge));
    for (size_t m = 0; m < a.envs[e].mu.size(); ++m) {
      CHECK(near(a.envs[e].mu[m], b.envs[e].mu[m]));
      CHECK(near(a.envs[e].sigma[m], b.envs[e].sigma[m]));
    }
    CHECK(a.assignments[e].c == b.assignments[e].c);
    CHECK(a.assignments[e].r == b.assignments[e].r);
  }
  CHECK(a.pruned_words == b.pruned_words);
}

}  // namespace

TEST_CASE("model round trip") {
  for (Mode mode : {Mode::transfer, Mode::spcoa, Mode::spcoa_mi}) {
    const auto m = small_fit(mode);
    const auto back = io::model_from_json(io::model_to_json(m));
    check_same(m, back);
    CHECK(validate_model(back).empty());

    const auto path = fs::temp_directory_path() / "spco_io_test_model.json";
    io::save_model(path, m);
    const auto loaded = io::load_model(path);
    check_same(m, loaded);
    // Seventeen significant digits reproduce every double exactly.
    CHECK(loaded.global.phi_w == m.global.phi_w);
    CHECK(loaded.envs[0].sigma[0] == m.envs[0].sigma[0]);
  }
}

TEST_CASE("model parsing rejects bad input") {
  const auto j = io::model_to_json(small_fit(Mode::transfer));
  auto wrong_version = j;
  wrong_version["schema_version"] = 99;
  CHECK_THROWS_AS(io::model_from_json(wrong_version), ParseError);
  auto missing = j;
  missing.erase("global");
  CHECK_THROWS_AS(io::model_from_json(missing), ParseError);
  auto not_simplex = j;
  not_simplex["global"]["g0"][0] = 5.0;
  CHECK_THROWS_AS(io::model_from_json(not_simplex), ParseError);
  auto bad_mode = j;
  bad_mode["mode"] = "bogus";
  CHECK_THROWS_AS(io::model_from_json(bad_mode), ParseError);
  CHECK_THROWS_AS(io::load_model("/nonexistent/model.json"), Error);
}

TEST_CASE("dump_exact") {
  const nlohmann::json j = {{"a", {0.1, 1.0, 2}}, {"b", "x"}};
  CHECK(io::dump_exact(j, -1) == R"({"a":[0.10000000000000001,1,2],"b":"x"})");
  CHECK(nlohmann::json::parse(io::dump_exact(j)) == j);
  CHECK_THROWS_AS(io::dump_exact(nlohmann::json{std::numeric_limits<double>::quiet_NaN()}), NumericalError);
}
