#include "spco/eval.hpp"

#include "spco/predict.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace spco::eval {

namespace {

void add_unique(std::vector<std::string>& order, const std::string& s) {
  if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Runs job(i) for i in [0, n) on up to `threads` workers. The first failure
// is rethrown after all workers finish.
template <typename F>
void parallel_for(size_t n, int threads, F&& job) {
  size_t workers = threads > 0 ? static_cast<size_t>(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<data::RawRecord> without_sentences(std::vector<data::RawRecord> records) {
  for (auto& r : records) r.sentence.reset();
  return records;
}

// Dictionary over every sentence of the experienced pool plus whatever the
// new environment was actually told.
Dictionary experiment_dictionary(const std::vector<std::vector<data::RawRecord>>& pool,
                                 const std::vector<data::RawRecord>& new_env) {
  Dictionary dict;
  auto add = [&](const std::vector<data::RawRecord>& recs) {
    for (const auto& r : recs)
      if (r.sentence)
        for (const auto& w : data::tokenize(*r.sentence)) dict.add(w);
  };
  for (const auto& env : pool) add(env);
  add(new_env);
  return dict;
}

struct TrialOutput {
  std::vector<ResultRow> rows;
};

TrialOutput run_trial(const std::string& setting, int trial, const std::vector<data::RawRecord>& training,
                      const Dictionary& dict, int new_env_id, const std::vector<data::RawRecord>& test,
                      const std::vector<EvaluationRegion>& regions, const ExperimentConfig& config,
                      std::uint64_t trial_seed) {
  const auto& h = config.train.hyper;
  auto corpus = data::encode_corpus(training, dict, {h.s_v, h.s_w});
  learn::TrainConfig tc = config.train;
  tc.seed = Rng::derive(trial_seed, 1);
  const auto model = learn::fit(corpus.observations, corpus.dictionary, tc);
  const auto scores = score_model(model, new_env_id, test, regions, config.position_samples, Rng::derive(trial_seed, 2));
  TrialOutput out;
  auto emit = [&](const Accuracy& acc, const char* metric) {
    for (const auto& [place, v] : acc.per_place) out.rows.push_back({setting, trial, place, metric, v});
    out.rows.push_back({setting, trial, "all", metric, acc.macro});
  };
  emit(scores.name, "A_n");
  emit(scores.position, "A_p");
  return out;
}

ResultTable assemble(std::vector<std::string> settings, std::vector<TrialOutput> outputs) {
  ResultTable table;
  table.settings = std::move(settings);
  for (auto& o : outputs)
    for (auto& r : o.rows) table.rows.push_back(std::move(r));
  return table;
}

}  // namespace

Accuracy name_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth,
                       const std::vector<std::string>& places,
                       const std::optional<std::vector<std::string>>& expected_places) {
  if (predicted.size() != truth.size() || truth.size() != places.size())
    throw MetricError("prediction, truth and place lists differ in length");
  std::vector<std::string> order;
  std::map<std::string, std::pair<int, int>> tally;  // correct, total
  if (expected_places)
    for (const auto& p : *expected_places) add_unique(order, p);
  for (size_t i = 0; i < truth.size(); ++i) {
    add_unique(order, places[i]);
    auto& t = tally[places[i]];
    t.second += 1;
    if (predicted[i] == truth[i]) t.first += 1;
  }
  if (order.empty()) throw MetricError("no test data");
  Accuracy acc;
  double sum = 0.0;
  for (const auto& p : order) {
    const auto it = tally.find(p);
    if (it == tally.end() || it->second.second == 0) throw MetricError(fmt::format("place '{}' has no test data", p));
    const double v = static_cast<double>(it->second.first) / it->second.second;
    acc.per_place.emplace_back(p, v);
    sum += v;
  }
  acc.macro = sum / static_cast<double>(order.size());
  return acc;
}

Accuracy position_accuracy(const std::vector<NameSamples>& samples, const std::vector<EvaluationRegion>& regions) {
  if (samples.empty()) throw MetricError("no names to evaluate");
  Accuracy acc;
  double sum = 0.0;
  for (const auto& s : samples) {
    std::vector<Rect> rects;
    for (const auto& r : regions)
      if (r.name == s.name) rects.push_back(r.rect);
    if (rects.empty()) throw MetricError(fmt::format("name '{}' has no evaluation region", s.name));
    if (s.requested <= 0) throw MetricError(fmt::format("name '{}' has no predicted samples", s.name));
    int correct = 0;
    for (const auto& pose : s.samples)
      if (std::any_of(rects.begin(), rects.end(), [&](const Rect& r) { return r.contains(pose.x, pose.y); }))
        ++correct;
    const double v = static_cast<double>(correct) / s.requested;
    acc.per_place.emplace_back(s.name, v);
    sum += v;
  }
  acc.macro = sum / static_cast<double>(samples.size());
  return acc;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw MetricError("partitions differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : joint) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

void ResultTable::write_csv(std::ostream& out) const {
  out << "setting,trial,place,metric,value\r\n";
  for (const auto& r : rows)
    out << csv_field(r.setting) << ',' << r.trial << ',' << csv_field(r.place) << ',' << csv_field(r.metric) << ','
        << fmt::format("{:.17g}", r.value) << "\r\n";
}

nlohmann::json ResultTable::summary() const {
  struct Cell {
    std::vector<double> values;
  };
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  std::map<std::tuple<std::string, std::string, std::string>, Cell> cells;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.setting, r.place, r.metric);
    if (!cells.count(key)) order.push_back(key);
    cells[key].values.push_back(r.value);
  }
  nlohmann::json out;
  out["cells"] = nlohmann::json::array();
  for (const auto& key : order) {
    const auto& v = cells[key].values;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    out["cells"].push_back({{"setting", std::get<0>(key)},
                            {"place", std::get<1>(key)},
                            {"metric", std::get<2>(key)},
                            {"mean", mean},
                            {"stddev", sd},
                            {"n", v.size()}});
  }
  return out;
}

std::optional<double> ResultTable::mean(const std::string& setting, const std::string& place,
                                        const std::string& metric) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.setting == setting && r.place == place && r.metric == metric) {
      sum += r.value;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

TrialScores score_model(const TrainedModel& model, int env, const std::vector<data::RawRecord>& test,
                        const std::vector<EvaluationRegion>& regions, int position_samples, std::uint64_t seed) {
  const auto& h = model.hyper;
  std::vector<std::string> predicted, truth, places;
  std::vector<std::string> names;
  for (const auto& r : test) {
    if (!r.place) throw MetricError("test record without a 'place' label");
    Vector visual = r.visual ? *r.visual : data::encode_visual(*r.features, h.s_v);
    std::string top;
    try {
      auto ranked = predict::predict_name(model, env, Pose::from_vector(r.pose), visual, 1);
      if (!ranked.empty()) top = ranked.front().word;
    } catch (const predict::NoPredictionError&) {
    }
    predicted.push_back(top);
    truth.push_back(*r.place);
    places.push_back(*r.place);
    add_unique(names, *r.place);
  }
  TrialScores out;
  out.name = name_accuracy(predicted, truth, places);

  Rng rng(seed);
  std::vector<NameSamples> samples;
  for (const auto& name : names) {
    NameSamples s{name, {}, position_samples};
    try {
      s.samples = predict::predict_positions(model, env, name, position_samples, rng);
    } catch (const VocabularyError&) {
    } catch (const predict::NoPredictionError&) {
    }
    samples.push_back(std::move(s));
  }
  out.position = position_accuracy(samples, regions);
  return out;
}

ResultTable run_transfer_experiment(const std::vector<std::vector<data::RawRecord>>& experienced,
                                    const std::vector<data::RawRecord>& new_env,
                                    const std::vector<data::RawRecord>& test,
                                    const std::vector<EvaluationRegion>& regions, const std::vector<int>& env_counts,
                                    const ExperimentConfig& config) {
  if (config.trials < 1) throw ConfigError("trials must be >= 1");
  const bool transfer = config.train.mode == Mode::transfer;
  for (int n : env_counts) {
    if (n < 0 || static_cast<size_t>(n) > experienced.size())
      throw ConfigError(fmt::format("{} experienced environments requested, {} available", n, experienced.size()));
    if (!transfer && n > 0)
      throw ConfigError(fmt::format("{} trains on the new environment only; env count must be 0", to_string(config.train.mode)));
  }
  const Dictionary dict = experiment_dictionary(experienced, {});
  const auto hidden = without_sentences(new_env);

  struct Job {
    size_t setting;
    int n;
    int trial;
  };
  std::vector<Job> jobs;
  std::vector<std::string> settings;
  for (size_t i = 0; i < env_counts.size(); ++i) {
    settings.push_back(fmt::format("envs={}", env_counts[i]));
    for (int t = 0; t < config.trials; ++t) jobs.push_back({i, env_counts[i], t});
  }
  std::vector<TrialOutput> outputs(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](size_t j) {
    const auto& job = jobs[j];
    const auto trial_seed = Rng::derive(Rng::derive(config.seed, static_cast<std::uint64_t>(job.n)),
                                        static_cast<std::uint64_t>(job.trial));
    Rng rng(trial_seed);
    std::vector<size_t> idx(experienced.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < job.n; ++i) std::swap(idx[static_cast<size_t>(i)], idx[i + rng.below(idx.size() - i)]);
    std::vector<data::RawRecord> training;
    for (int i = 0; i < job.n; ++i)
      for (auto r : experienced[idx[static_cast<size_t>(i)]]) {
        r.env = i;
        training.push_back(std::move(r));
      }
    for (auto r : hidden) {
      r.env = job.n;
      training.push_back(std::move(r));
    }
    spdlog::info("transfer: {} trial {} (seed {})", settings[job.setting], job.trial, trial_seed);
    outputs[j] = run_trial(settings[job.setting], job.trial, training, dict, job.n, test, regions, config, trial_seed);
  });
  return assemble(std::move(settings), std::move(outputs));
}

ResultTable run_adaptive_experiment(const std::vector<std::vector<data::RawRecord>>& experienced,
                                    const std::vector<data::RawRecord>& new_env,
                                    const std::vector<data::RawRecord>& test,
                                    const std::vector<EvaluationRegion>& regions, const std::vector<double>& rates,
                                    const ExperimentConfig& config) {
  if (config.trials < 1) throw ConfigError("trials must be >= 1");
  if (config.train.mode != Mode::transfer) throw ConfigError("the adaptive experiment uses the transfer model");
  for (double r : rates)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(fmt::format("rate {} outside [0,1]", r));
  std::vector<data::RawRecord> specific_test;
  for (const auto& r : test)
    if (r.home_specific) specific_test.push_back(r);
  if (specific_test.empty()) throw ConfigError("test set has no home-specific records");
  const int new_id = static_cast<int>(experienced.size());

  struct Job {
    size_t setting;
    double rate;
    int trial;
  };
  std::vector<Job> jobs;
  std::vector<std::string> settings;
  for (size_t i = 0; i < rates.size(); ++i) {
    settings.push_back(fmt::format("rate={}", rates[i]));
    for (int t = 0; t < config.trials; ++t) jobs.push_back({i, rates[i], t});
  }
  std::vector<TrialOutput> outputs(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](size_t j) {
    const auto& job = jobs[j];
    const auto trial_seed =
        Rng::derive(Rng::derive(config.seed, std::bit_cast<std::uint64_t>(job.rate)), static_cast<std::uint64_t>(job.trial));
    Rng rng(trial_seed);
    std::vector<data::RawRecord> target = new_env;
    std::map<std::string, std::vector<size_t>> by_place;
    for (size_t i = 0; i < target.size(); ++i) {
      auto& r = target[i];
      r.env = new_id;
      if (!r.home_specific || !r.place) {
        r.sentence.reset();
        continue;
      }
      by_place[*r.place].push_back(i);
    }
    for (auto& [place, idx] : by_place) {
      const auto keep = static_cast<size_t>(std::llround(job.rate * static_cast<double>(idx.size())));
      for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
      for (size_t i = keep; i < idx.size(); ++i) target[idx[i]].sentence.reset();
    }
    std::vector<data::RawRecord> training;
    for (size_t e = 0; e < experienced.size(); ++e)
      for (auto r : experienced[e]) {
        r.env = static_cast<int>(e);
        training.push_back(std::move(r));
      }
    training.insert(training.end(), target.begin(), target.end());
    const Dictionary dict = experiment_dictionary(experienced, target);
    spdlog::info("adaptive: {} trial {} (seed {})", settings[job.setting], job.trial, trial_seed);
    outputs[j] = run_trial(settings[job.setting], job.trial, training, dict, new_id, specific_test, regions, config,
                           trial_seed);
  });
  return assemble(std::move(settings), std::move(outputs));
}

}  // namespace spco::eval
