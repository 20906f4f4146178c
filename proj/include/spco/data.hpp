#pragma once

#include "spco/core.hpp"
#include "spco/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spco::data {

// One line of a JSON-lines corpus.
struct RawRecord {
  int env = 0;
  Vec4 pose = Vec4(0.0, 0.0, 0.0, 1.0);
  std::optional<Vector> features;  // raw activations, scaled by s_v on encode
  std::optional<Vector> visual;    // already-scaled bag, used as is
  std::optional<std::string> sentence;
  // Evaluation metadata, ignored by the learners.
  std::optional<std::string> place;
  bool home_specific = false;
};

Vector encode_visual(const Vector& features, double s_v);

// Lowercase, split on whitespace, strip leading/trailing punctuation.
std::vector<std::string> tokenize(std::string_view sentence);

Dictionary build_dictionary(const std::vector<RawRecord>& corpus);

// Presence encoding: entry k is s_w when D_k occurs in the sentence, else 0.
Vector encode_words(const std::vector<std::string>& sentence, const Dictionary& dict, double s_w);

struct Corpus {
  std::vector<Observation> observations;
  Dictionary dictionary;
};

struct EncodeOptions {
  double s_v = 5.0;
  double s_w = 5.0e3;
};

// Encodes records with the given dictionary, or one built from the records.
// Timestep indices count records per environment in file order.
Corpus encode_corpus(const std::vector<RawRecord>& records, const std::optional<Dictionary>& dict,
                     const EncodeOptions& opts);

RawRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const RawRecord& r);

std::vector<RawRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<RawRecord>& records);

Corpus load_corpus(const std::filesystem::path& path, const EncodeOptions& opts);

std::vector<EvaluationRegion> read_regions(const std::filesystem::path& path);
void write_regions(const std::filesystem::path& path, const std::vector<EvaluationRegion>& regions);

// Records whose env field equals env, with env rewritten to new_id.
std::vector<RawRecord> select_env(const std::vector<RawRecord>& records, int env, int new_id);
std::vector<int> env_ids(const std::vector<RawRecord>& records);

struct SynthSpec {
  int envs = 3;
  int concepts = 3;           // general places, present in every environment
  int specific_concepts = 0;  // home-specific places, present only in the last environment
  int regions_per_place = 2;
  int n_per_env = 40;
  int dim_v = 0;  // 0: one dimension per place
  int dim_w = 0;  // 0: one name word per place
  double separation = 10.0;
  double peakedness = std::numeric_limits<double>::infinity();
  double name_given_rate = 1.0;
  std::uint64_t seed = 0;

  int test_per_place = 20;
  double region_sd = 1.0;
  double orientation_sd = 0.1;
  int visual_draws = 100;
  int word_draws = 1;
  std::vector<std::string> stopwords;
  // Generator-side concentrations. Large values keep places balanced.
  double concept_concentration = 1000.0;
  double emission_delta = 1000.0;
  double region_concentration = 50.0;
  double wishart_dof = 50.0;

  int total_concepts() const { return concepts + specific_concepts; }
  int visual_dim() const { return dim_v > 0 ? dim_v : total_concepts(); }
  int word_dim() const { return dim_w > 0 ? dim_w : total_concepts(); }
  void validate() const;
};

struct SynthResult {
  SynthSpec spec;
  std::vector<RawRecord> records;  // training corpus, all environments
  std::vector<RawRecord> test;     // per-place held-out test data, no sentences
  Dictionary vocabulary;           // names, filler words, then stopwords
  std::vector<std::string> place_names;
  std::vector<Assignments> truth;  // per environment, in record order
  GlobalParams global;             // over the vocabulary without stopwords
  std::vector<EnvParams> envs;
  std::vector<std::vector<int>> active;  // concepts present per environment
  std::vector<EvaluationRegion> regions;  // +/-2 sigma boxes, env-tagged

  // Fresh held-out draws for one environment, per_place records per active
  // place, with or without sentences.
  std::vector<RawRecord> sample_held_out(int env, int per_place, bool with_sentences, Rng& rng) const;

  // True generator parameters as a TrainedModel over `vocabulary`; stopword
  // columns are zero and marked pruned.
  TrainedModel oracle_model(const Hyperparameters& hyper) const;
};

SynthResult generate_synthetic(const SynthSpec& spec);

}  // namespace spco::data
