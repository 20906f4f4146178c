#include <doctest.h>

#include "spco/cli.hpp"
#include "spco/data.hpp"
#include "spco/model_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

using namespace spco;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("spco_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("generate is reproducible and describes itself") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  for (const auto& d : {a, b}) {
    const auto r = run({"generate", "--out-dir", d.string(), "--seed", "5", "--envs", "2", "--n-per-env", "12"});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["seed"] == 5);
  }
  for (const char* f : {"corpus.jsonl", "test.jsonl", "regions.json", "truth.json", "manifest.json"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["dim_v"] == 3);
  CHECK(manifest["dim_w"] == 3);
  CHECK(data::read_records(a / "corpus.jsonl").size() == 24);
}

TEST_CASE("generate honours the name-given rate") {
  const auto d = scratch("gen_rate");
  REQUIRE(run({"generate", "--out-dir", d.string(), "--name-given-rate", "0"}).code == 0);
  for (const auto& r : data::read_records(d / "corpus.jsonl")) CHECK_FALSE(r.sentence);
}

TEST_CASE("train, then predict names and positions") {
  const auto d = scratch("pipeline");
  REQUIRE(run({"generate", "--out-dir", d.string(), "--seed", "6", "--envs", "2", "--n-per-env", "20"}).code == 0);
  const auto model = (d / "model.json").string();
  const auto t = run({"train", "--corpus", (d / "corpus.jsonl").string(), "--out", model, "--seed", "1",
                      "--iterations", "5", "--L", "5", "--M", "6"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const auto trained = io::load_model(model);
  CHECK(trained.envs.size() == 2);
  CHECK(trained.hyper.L == 5);

  const auto one = run({"predict", "name", "--model", model, "--env", "1", "--pose", "0", "0", "0", "1", "--visual",
                        "10", "0", "0", "--top", "2"});
  REQUIRE_MESSAGE(one.code == 0, one.err);
  const auto entry = json::parse(one.out);
  CHECK(entry["predictions"].size() <= 2);

  const auto batch = run({"predict", "name", "--model", model, "--env", "1", "--input", (d / "test.jsonl").string()});
  REQUIRE_MESSAGE(batch.code == 0, batch.err);
  CHECK(json_lines(batch.out).size() == data::read_records(d / "test.jsonl").size());

  const auto pos = run({"predict", "position", "--model", model, "--env", "0", "--word", "kitchen", "--seed", "3"});
  if (pos.code == 0) {
    CHECK(json_lines(pos.out).size() == 10);
  } else {
    // The name may have been pruned in so short a run; the error says so.
    CHECK(json::parse(pos.err)["error"] == "vocabulary");
  }
  const auto unknown = run({"predict", "position", "--model", model, "--word", "attic"});
  CHECK(unknown.code == 1);
  CHECK(json::parse(unknown.err)["error"] == "vocabulary");
}

TEST_CASE("eval writes tables") {
  const auto d = scratch("eval");
  REQUIRE(run({"generate", "--out-dir", d.string(), "--seed", "7", "--envs", "3", "--n-per-env", "15",
               "--test-per-place", "4"})
              .code == 0);
  const auto r = run({"eval", "transfer", "--corpus", (d / "corpus.jsonl").string(), "--test",
                      (d / "test.jsonl").string(), "--regions", (d / "regions.json").string(), "--trials", "1",
                      "--env-counts", "0,2", "--iterations", "2", "--out-dir", (d / "out").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(json::parse(r.out)["means"].size() == 2);
  const auto csv = slurp(d / "out" / "results.csv");
  CHECK(csv.rfind("setting,trial,place,metric,value\r\n", 0) == 0);
  CHECK(json::parse(slurp(d / "out" / "summary.json"))["cells"].size() > 0);
}

TEST_CASE("eval adaptive defaults to six rates") {
  const auto d = scratch("adaptive");
  REQUIRE(run({"generate", "--out-dir", d.string(), "--seed", "8", "--envs", "2", "--specific-concepts", "1",
               "--n-per-env", "15", "--test-per-place", "3"})
              .code == 0);
  const auto r = run({"eval", "adaptive", "--corpus", (d / "corpus.jsonl").string(), "--test",
                      (d / "test.jsonl").string(), "--regions", (d / "regions.json").string(), "--trials", "1",
                      "--iterations", "2", "--out-dir", (d / "out").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto means = json::parse(r.out)["means"];
  REQUIRE(means.size() == 6);
  CHECK(means[0]["setting"] == "rate=0");
  CHECK(means[0]["A_n"] == 0.0);
}

TEST_CASE("cli errors") {
  const auto d = scratch("errors");
  REQUIRE(run({"generate", "--out-dir", d.string(), "--envs", "2", "--n-per-env", "10"}).code == 0);

  SUBCASE("spcoa needs a single environment") {
    const auto r = run({"train", "--corpus", (d / "corpus.jsonl").string(), "--out", (d / "m.json").string(),
                        "--mode", "spcoa", "--iterations", "2"});
    CHECK(r.code != 0);
    CHECK(json::parse(r.err).contains("message"));
  }
  SUBCASE("usage errors") {
    CHECK(run({"train"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"train", "--corpus", "x", "--out", "y", "--mode", "nonsense"}).code == 2);
    const auto r = run({"generate", "--bogus"});
    CHECK(r.code == 2);
    CHECK(json::parse(r.err)["error"] == "usage");
  }
  SUBCASE("bad hyperparameters") {
    const auto r = run({"train", "--corpus", (d / "corpus.jsonl").string(), "--out", (d / "m.json").string(),
                        "--nu0", "2"});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["error"] == "config");
  }
  SUBCASE("missing corpus file") {
    const auto r = run({"train", "--corpus", (d / "absent.jsonl").string(), "--out", (d / "m.json").string()});
    CHECK(r.code == 1);
  }
  SUBCASE("help") {
    const auto r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("generate") != std::string::npos);
  }
}
