#include <doctest.h>

#include "../oracles.hpp"
#include "spco/learn.hpp"
#include "spco/predict.hpp"

#include <algorithm>
#include <numeric>

using namespace spco;
using namespace spco::predict;

namespace {

TrainedModel hand_model(int L, int M, int dv, int K, std::mt19937_64& gen) {
  TrainedModel m;
  m.mode = Mode::transfer;
  m.hyper.L = L;
  m.hyper.M = M;
  std::vector<std::string> words;
  for (int k = 0; k < K; ++k) words.push_back("w" + std::to_string(k));
  m.dictionary = Dictionary(words);
  m.global.phi_v.resize(L, dv);
  m.global.phi_w.resize(L, K);
  for (int l = 0; l < L; ++l) {
    m.global.phi_v.row(l) = oracle::random_simplex(dv, gen, 0.5).transpose();
    m.global.phi_w.row(l) = oracle::random_simplex(K, gen, 0.5).transpose();
  }
  m.global.g0 = oracle::random_simplex(L, gen);
  for (int e = 0; e < 2; ++e) {
    EnvParams p;
    p.theta_v.resize(L, dv);
    p.theta_w.resize(L, K);
    p.pi.resize(L, M);
    for (int l = 0; l < L; ++l) {
      p.theta_v.row(l) = oracle::random_simplex(dv, gen, 0.5).transpose();
      p.theta_w.row(l) = oracle::random_simplex(K, gen, 0.5).transpose();
      p.pi.row(l) = oracle::random_simplex(M, gen, 0.5).transpose();
    }
    for (int r = 0; r < M; ++r) {
      p.mu.push_back(oracle::random_vec4(gen, 1.5));
      p.sigma.push_back(oracle::random_spd(gen));
    }
    p.ge = oracle::random_simplex(L, gen);
    m.envs.push_back(std::move(p));
  }
  m.pruned_words.assign(static_cast<size_t>(K), false);
  return m;
}

Vector small_bag(int dv, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> d(0, 2);
  Vector v(dv);
  for (int i = 0; i < dv; ++i) v[i] = d(gen);
  return v;
}

// Brute-force name scores over (C, R, k), normalized.
Vector brute_names(const TrainedModel& m, int env, const Vec4& x, const Vector& v, bool weighted) {
  const auto& p = m.envs[static_cast<size_t>(env)];
  const int L = m.num_concepts(), M = m.num_regions(), K = m.dictionary.size();
  const Vector mi = learn::word_concept_mi(m.global.phi_w, m.global.g0);
  Vector s = Vector::Zero(K);
  for (int k = 0; k < K; ++k) {
    if (m.pruned_words[static_cast<size_t>(k)]) continue;
    for (int c = 0; c < L; ++c)
      for (int r = 0; r < M; ++r)
        s[k] += p.theta_w(c, k) * oracle::bag_product(v, p.theta_v.row(c).transpose()) * p.ge[c] *
                oracle::gaussian_pdf(x, p.mu[static_cast<size_t>(r)], p.sigma[static_cast<size_t>(r)]) * p.pi(c, r);
    if (weighted) s[k] *= mi[k];
  }
  return s / s.sum();
}

Vector brute_regions(const TrainedModel& m, int env, int k) {
  const auto& p = m.envs[static_cast<size_t>(env)];
  Vector post = Vector::Zero(m.num_regions());
  for (int r = 0; r < m.num_regions(); ++r)
    for (int c = 0; c < m.num_concepts(); ++c) post[r] += p.pi(c, r) * p.theta_w(c, k) * p.ge[c];
  return post / post.sum();
}

Vector scores_by_word(const TrainedModel& m, const std::vector<NameScore>& ranked) {
  Vector out = Vector::Zero(m.dictionary.size());
  for (const auto& s : ranked) out[*m.dictionary.find(s.word)] = s.score;
  return out;
}

// Applies a concept relabeling to every concept-indexed quantity.
TrainedModel permute_concepts(const TrainedModel& m, const std::vector<int>& perm) {
  TrainedModel out = m;
  auto rows = [&](const Matrix& a) {
    Matrix b = a;
    for (size_t i = 0; i < perm.size(); ++i) b.row(perm[i]) = a.row(static_cast<Eigen::Index>(i));
    return b;
  };
  auto entries = [&](const Vector& a) {
    Vector b = a;
    for (size_t i = 0; i < perm.size(); ++i) b[perm[i]] = a[static_cast<Eigen::Index>(i)];
    return b;
  };
  out.global.phi_v = rows(m.global.phi_v);
  out.global.phi_w = rows(m.global.phi_w);
  out.global.g0 = entries(m.global.g0);
  for (auto& e : out.envs) {
    e.theta_v = rows(e.theta_v);
    e.theta_w = rows(e.theta_w);
    e.pi = rows(e.pi);
    e.ge = entries(e.ge);
  }
  return out;
}

}  // namespace

TEST_CASE("single concept, single region, one-hot name") {
  std::mt19937_64 gen(1);
  auto m = hand_model(1, 1, 2, 3, gen);
  m.dictionary = Dictionary({"toilet", "kitchen", "bath"});
  m.envs[0].theta_w.row(0) << 0.0, 1.0, 0.0;
  m.envs[0].ge << 1.0;
  m.envs[0].pi << 1.0;
  m.mode = Mode::spcoa;
  const auto top = predict_name(m, 0, Pose{}, Vector::Ones(2), 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].word == "kitchen");
  CHECK(top[0].score == doctest::Approx(1.0));
}

TEST_CASE("name scores match enumeration") {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto m = hand_model(2 + rep % 3, 3, 3, 4, gen);
    const Vec4 x = oracle::random_vec4(gen, 1.5);
    const Vector v = small_bag(3, gen);
    for (auto w : {NameWeighting::mutual_info, NameWeighting::likelihood_only}) {
      const auto ranked = predict_name(m, 1, Pose::from_vector(x), v, -1, w);
      CHECK(ranked.size() == 4);
      const Vector got = scores_by_word(m, ranked);
      const Vector want = brute_names(m, 1, x, v, w == NameWeighting::mutual_info);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
      for (size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].score >= ranked[i].score);
    }
  }
}

TEST_CASE("top-k and default weighting") {
  std::mt19937_64 gen(3);
  auto m = hand_model(3, 3, 3, 6, gen);
  const auto top = predict_name(m, 0, Pose{}, small_bag(3, gen), 3);
  CHECK(top.size() == 3);
  double total = 0.0;
  for (const auto& s : top) total += s.score;
  CHECK(total <= 1.0 + 1e-12);
  CHECK(default_weighting(m) == NameWeighting::mutual_info);
  m.mode = Mode::spcoa;
  CHECK(default_weighting(m) == NameWeighting::likelihood_only);
  m.mode = Mode::spcoa_mi;
  CHECK(default_weighting(m) == NameWeighting::mutual_info);
}

TEST_CASE("ranking ignores a scaled visual likelihood") {
  // Doubling every bag entry squares each concept's visual factor; with a
  // factor shared by all concepts the ranking cannot move.
  std::mt19937_64 gen(4);
  auto m = hand_model(3, 3, 3, 5, gen);
  for (auto& e : m.envs) e.theta_v.setConstant(1.0 / 3);
  const Vector v = small_bag(3, gen);
  const auto a = predict_name(m, 0, Pose{}, v, -1);
  const auto b = predict_name(m, 0, Pose{}, 7.0 * v, -1);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].word == b[i].word);
    CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-10));
  }
}

TEST_CASE("predictions are invariant under concept relabeling") {
  std::mt19937_64 gen(5);
  const auto m = hand_model(4, 3, 3, 5, gen);
  std::vector<int> perm{2, 0, 3, 1};
  const auto pm = permute_concepts(m, perm);
  const Vec4 x = oracle::random_vec4(gen);
  const Vector v = small_bag(3, gen);
  const auto a = predict_name(m, 1, Pose::from_vector(x), v, -1);
  const auto b = predict_name(pm, 1, Pose::from_vector(x), v, -1);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].word == b[i].word);
    CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-10));
  }
  for (int k = 0; k < 5; ++k) {
    const auto ra = predict_region(m, 0, m.dictionary.at(k));
    const auto rb = predict_region(pm, 0, m.dictionary.at(k));
    CHECK(ra.region == rb.region);
    CHECK((ra.posterior - rb.posterior).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("pruned words") {
  std::mt19937_64 gen(6);
  auto m = hand_model(3, 3, 3, 4, gen);
  m.pruned_words[1] = true;
  for (auto* t : {&m.global.phi_w, &m.envs[0].theta_w, &m.envs[1].theta_w}) {
    t->col(1).setZero();
    for (Eigen::Index l = 0; l < t->rows(); ++l) t->row(l) /= t->row(l).sum();
  }
  const auto ranked = predict_name(m, 0, Pose{}, small_bag(3, gen), -1);
  CHECK(ranked.size() == 3);
  for (const auto& s : ranked) CHECK(s.word != "w1");
  CHECK_THROWS_AS(predict_region(m, 0, "w1"), VocabularyError);
  CHECK_THROWS_AS(predict_region(m, 0, "nowhere"), VocabularyError);
  Rng rng(1);
  CHECK_THROWS_AS(predict_positions(m, 0, "w1", 10, rng), VocabularyError);
}

TEST_CASE("no prediction when every word scores zero") {
  std::mt19937_64 gen(7);
  auto m = hand_model(2, 2, 2, 2, gen);
  m.pruned_words = {true, true};
  CHECK_THROWS_AS(predict_name(m, 0, Pose{}, small_bag(2, gen), 3), NoPredictionError);
}

TEST_CASE("predict_region") {
  std::mt19937_64 gen(8);
  SUBCASE("matches enumeration on every hand model up to five concepts and regions") {
    for (int L = 1; L <= 5; ++L)
      for (int M = 1; M <= 5; ++M) {
        const auto m = hand_model(L, M, 2, 3, gen);
        for (int k = 0; k < 3; ++k) {
          const auto r = predict_region(m, 1, m.dictionary.at(k));
          CHECK(std::abs(r.posterior.sum() - 1.0) < 1e-9);
          CHECK((r.posterior - brute_regions(m, 1, k)).cwiseAbs().maxCoeff() < 1e-12);
          Eigen::Index best;
          r.posterior.maxCoeff(&best);
          CHECK(r.posterior[r.region] == r.posterior[best]);
        }
      }
  }
  SUBCASE("one-hot region prior") {
    auto m = hand_model(1, 4, 2, 2, gen);
    m.envs[0].pi.row(0) = Vector::Unit(4, 2).transpose();
    const auto r = predict_region(m, 0, "w0");
    CHECK(r.region == 2);
    CHECK(r.posterior[2] == doctest::Approx(1.0));
  }
  SUBCASE("uniform word rows reduce to pi weighted by G_e") {
    auto m = hand_model(3, 4, 2, 2, gen);
    m.envs[0].theta_w.setConstant(0.5);
    Vector want = Vector::Zero(4);
    for (int c = 0; c < 3; ++c) want += m.envs[0].ge[c] * m.envs[0].pi.row(c).transpose();
    CHECK((predict_region(m, 0, "w1").posterior - want / want.sum()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("ties go to the lowest index") {
    auto m = hand_model(1, 3, 2, 2, gen);
    m.envs[0].pi.row(0) << 0.2, 0.4, 0.4;
    CHECK(predict_region(m, 0, "w0").region == 1);
  }
  SUBCASE("unknown environment") {
    const auto m = hand_model(2, 2, 2, 2, gen);
    CHECK_THROWS_AS(predict_region(m, 5, "w0"), ParameterError);
  }
}

TEST_CASE("predict_positions") {
  std::mt19937_64 gen(9);
  auto m = hand_model(1, 1, 2, 2, gen);
  Rng rng(10);
  const Vec4 mu(2.0, -1.0, 0.0, 1.0);
  m.envs[0].mu[0] = mu;

  m.envs[0].sigma[0] = Mat4::Identity() * 1e-12;
  for (const auto& p : predict_positions(m, 0, "w0", 100, rng)) CHECK((p.vector() - mu).cwiseAbs().maxCoeff() < 1e-5);

  CHECK(predict_positions(m, 0, "w0", 10, rng).size() == 10);

  m.envs[0].sigma[0] = Mat4::Identity();
  const auto many = predict_positions(m, 0, "w0", 100000, rng);
  Vec4 mean = Vec4::Zero();
  for (const auto& p : many) mean += p.vector();
  mean /= static_cast<double>(many.size());
  CHECK((mean - mu).cwiseAbs().maxCoeff() < 0.02);
  CHECK_THROWS_AS(predict_positions(m, 0, "w0", 0, rng), ParameterError);
}
