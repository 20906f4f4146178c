#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace spco {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error hierarchy. Every error the library throws derives from spco::Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct DegenerateDistributionError : Error {
  using Error::Error;
};
struct VocabularyError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};

// Robot pose in the map frame: [x, y, sin(theta), cos(theta)].
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double sin_theta = 0.0;
  double cos_theta = 1.0;

  static Pose from_angle(double x, double y, double theta);
  static Pose from_vector(const Vec4& v);
  Vec4 vector() const { return {x, y, sin_theta, cos_theta}; }
  // |sin^2 + cos^2 - 1| <= tol
  bool unit_orientation(double tol = 1e-6) const;
};

struct Observation {
  int env_id = 0;
  int t = 0;
  Pose pose;
  Vector visual;
  std::optional<Vector> words;  // absent when no instruction was given
};

class Dictionary {
 public:
  Dictionary() = default;
  explicit Dictionary(std::vector<std::string> entries);

  // Appends the word if unseen; returns its index either way.
  int add(const std::string& word);
  std::optional<int> find(const std::string& word) const;
  const std::string& at(int k) const { return entries_.at(static_cast<size_t>(k)); }
  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<std::string>& entries() const { return entries_; }
  bool operator==(const Dictionary& other) const = default;

 private:
  std::vector<std::string> entries_;
};

enum class Mode { transfer, spcoa, spcoa_mi };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);  // accepts spcoa-mi and spcoa_mi

struct Hyperparameters {
  double alpha_v = 3.0;
  double alpha_w = 1.0e-2;
  double delta_v = 3.0e5;
  double delta_w = 1.0e4;
  double gamma = 10.0;
  double gamma0 = 0.2;
  double beta = 3.0;
  // Unset: each environment's positional centroid is used as the prior mean.
  std::optional<Vec4> mu0;
  double kappa0 = 5.0e-2;
  Mat4 psi0 = Vec4(10.0, 10.0, 0.5, 0.5).asDiagonal();
  double nu0 = 10.0;
  double s_v = 5.0;
  double s_w = 5.0e3;
  double epsilon = 0.1;
  int L = 15;
  int M = 20;
  int iterations = 200;
  double sigma_init = 1.0;

  // Values used by the SpCoA(+MI) baselines: alpha_w is SpCoA's word
  // concentration, gamma its concept concentration.
  static Hyperparameters spcoa_defaults();

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

struct GlobalParams {
  Matrix phi_v;  // L x Dv
  Matrix phi_w;  // L x Dw
  Vector g0;     // L
};

struct EnvParams {
  Matrix theta_v;  // L x Dv
  Matrix theta_w;  // L x Dw
  Matrix pi;       // L x M
  std::vector<Vec4> mu;
  std::vector<Mat4> sigma;
  Vector ge;  // L
};

struct Assignments {
  std::vector<int> c;
  std::vector<int> r;
};

struct TrainedModel {
  Mode mode = Mode::transfer;
  Hyperparameters hyper;
  Dictionary dictionary;
  GlobalParams global;
  std::vector<EnvParams> envs;
  std::vector<Assignments> assignments;
  std::vector<bool> pruned_words;

  int num_concepts() const { return static_cast<int>(global.g0.size()); }
  int num_regions() const { return envs.empty() ? 0 : static_cast<int>(envs.front().mu.size()); }
  int visual_dim() const { return static_cast<int>(global.phi_v.cols()); }
  int word_dim() const { return static_cast<int>(global.phi_w.cols()); }
};

struct Rect {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

struct EvaluationRegion {
  std::string name;
  Rect rect;
  std::optional<int> env;  // optional tag for multi-environment region files
};

struct Violation {
  std::string what;
  std::optional<size_t> index;  // offending observation, when there is one
};

// Report-style corpus check: D^v/D^w consistency, non-negative bags, env ids
// within [0, env_count). env_count defaults to max(env_id)+1, and every
// environment below that must be non-empty.
std::vector<Violation> validate_corpus(const std::vector<Observation>& observations,
                                       const Dictionary& dict,
                                       std::optional<int> env_count = std::nullopt);

std::vector<Violation> validate_model(const TrainedModel& model, double tol = 1e-9);

int env_count(const std::vector<Observation>& observations);

// Simplex check for a single row.
bool is_simplex(const Eigen::Ref<const Vector>& row, double tol);
bool is_spd(const Mat4& m);

}  // namespace spco
