#include <doctest.h>

#include "spco/core.hpp"

#include <cmath>
#include <numbers>

using namespace spco;

namespace {

Observation obs(int env, int dv, std::optional<int> dw) {
  Observation o;
  o.env_id = env;
  o.visual = Vector::Ones(dv);
  if (dw) o.words = Vector::Zero(*dw);
  return o;
}

TrainedModel tiny_model() {
  TrainedModel m;
  m.dictionary = Dictionary({"a", "b"});
  m.hyper.L = 2;
  m.hyper.M = 1;
  m.global.phi_v = Matrix::Constant(2, 3, 1.0 / 3);
  m.global.phi_w = Matrix::Constant(2, 2, 0.5);
  m.global.g0 = Vector::Constant(2, 0.5);
  EnvParams e;
  e.theta_v = m.global.phi_v;
  e.theta_w = m.global.phi_w;
  e.pi = Matrix::Ones(2, 1);
  e.mu = {Vec4::Zero()};
  e.sigma = {Mat4::Identity()};
  e.ge = m.global.g0;
  m.envs.push_back(e);
  m.assignments.push_back({{0, 1}, {0, 0}});
  m.pruned_words = {false, false};
  return m;
}

}  // namespace

TEST_CASE("pose from angle lies on the unit circle") {
  for (double th : {0.0, 0.3, std::numbers::pi, -2.0}) {
    const Pose p = Pose::from_angle(1.0, 2.0, th);
    CHECK(p.unit_orientation());
    CHECK(p.sin_theta == doctest::Approx(std::sin(th)));
  }
  CHECK_FALSE(Pose::from_vector(Vec4(0, 0, 1, 1)).unit_orientation());
}

TEST_CASE("dictionary") {
  Dictionary d;
  CHECK(d.add("kitchen") == 0);
  CHECK(d.add("toilet") == 1);
  CHECK(d.add("kitchen") == 0);
  CHECK(d.size() == 2);
  CHECK(d.find("toilet") == 1);
  CHECK_FALSE(d.find("bath"));
  CHECK_THROWS_AS(Dictionary({"a", "a"}), ParameterError);
}

TEST_CASE("mode names") {
  CHECK(mode_from_string("spcoa-mi") == Mode::spcoa_mi);
  CHECK(mode_from_string("spcoa_mi") == Mode::spcoa_mi);
  CHECK(mode_from_string(to_string(Mode::transfer)) == Mode::transfer);
  CHECK_THROWS(mode_from_string("bogus"));
}

TEST_CASE("hyperparameter validation") {
  Hyperparameters h;
  CHECK_NOTHROW(h.validate());
  CHECK(h.iterations == 200);
  CHECK(h.L == 15);
  CHECK(h.M == 20);
  CHECK_NOTHROW(Hyperparameters::spcoa_defaults().validate());
  auto bad = h;
  bad.nu0 = 3.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.L = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.psi0(0, 0) = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("validate_corpus") {
  const Dictionary dict({"a", "b", "c"});
  CHECK(validate_corpus({}, dict).empty());

  SUBCASE("word bag of the wrong length") {
    const auto v = validate_corpus({obs(0, 2, 3), obs(0, 2, 2)}, dict);
    REQUIRE(v.size() == 1);
    CHECK(v[0].index == 1);
  }
  SUBCASE("consistent visual dimension across three envs") {
    CHECK(validate_corpus({obs(0, 4, 3), obs(1, 4, std::nullopt), obs(2, 4, 3)}, dict).empty());
  }
  SUBCASE("visual dimension mismatch") { CHECK(validate_corpus({obs(0, 4, 3), obs(0, 5, 3)}, dict).size() == 1); }
  SUBCASE("negative entry") {
    auto o = obs(0, 2, 3);
    o.visual[1] = -1.0;
    CHECK(validate_corpus({o}, dict).size() == 1);
  }
  SUBCASE("env id out of range") { CHECK_FALSE(validate_corpus({obs(0, 2, 3), obs(3, 2, 3)}, dict, 2).empty()); }
}

TEST_CASE("validate_model") {
  auto m = tiny_model();
  CHECK(validate_model(m).empty());
  m.envs[0].theta_w(0, 0) = 0.9;
  CHECK_FALSE(validate_model(m).empty());
  m = tiny_model();
  m.envs[0].sigma[0](0, 0) = -1.0;
  CHECK_FALSE(validate_model(m).empty());
}

TEST_CASE("rect boundaries are inclusive") {
  const Rect r{0, 1, 0, 2};
  CHECK(r.contains(0, 0));
  CHECK(r.contains(1, 2));
  CHECK_FALSE(r.contains(1.0000001, 1));
}
