#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/detector.hpp"

namespace sallie {

/// Class-mean prototypes per layer for prototype-distance scoring.
struct PrototypeModel {
  LayerRange layers;
  std::vector<std::vector<double>> benign;  // one d-vector per layer in range
  std::vector<std::vector<double>> attack;
  double threshold = 0.0;

  bool operator==(const PrototypeModel&) const = default;
};

/// Layers 0 .. floor(0.75 L) - 1.
LayerRange default_prototype_layers(std::size_t num_layers);

/// Throws kMissingClass unless both classes are present.
PrototypeModel fit_prototypes(const ActivationBundle& data, const LayerRange& layers);

/// 1 - cosine similarity. Throws kZeroNorm for a zero vector.
double cosine_distance(std::span<const float> x, std::span<const double> y);

/// Mean over layers of cosdist(x, benign) - cosdist(x, attack); higher is more attack-like.
/// activations is L x d. Zero-norm rows or prototypes raise kZeroNorm naming the layer.
double prototype_score(const PrototypeModel& model, const Matrix& activations);
std::vector<double> prototype_scores(const PrototypeModel& model, const ActivationBundle& data);

struct LogisticProbe {
  std::size_t layer = 0;
  std::vector<double> weights;
  double bias = 0.0;
  double threshold = 0.5;
  double lambda = 1e-2;
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;

  bool operator==(const LogisticProbe&) const = default;
};

struct LogisticOptions {
  double lambda = 1e-2;
  double tolerance = 1e-6;  // on the Euclidean norm of the full gradient
  std::size_t max_iterations = 5000;
  std::size_t memory = 10;
};

/// Mean logistic loss plus (lambda / 2) ||w||^2; the bias is not regularized. Gradients are
/// written when the pointers are non-null.
double logistic_objective(const Matrix& x, std::span<const std::uint8_t> labels, std::span<const double> w,
                          double b, double lambda, std::vector<double>* grad_w = nullptr, double* grad_b = nullptr);

/// L-BFGS from the zero vector with backtracking line search. Throws kMissingClass when one
/// class is absent and kNonConvergence (with the final gradient norm) when the cap is hit.
LogisticProbe fit_logistic(const ActivationBundle& data, std::size_t layer, const LogisticOptions& options = {});

/// Probability of the attack class.
double logistic_score(const LogisticProbe& probe, std::span<const float> x);
std::vector<double> logistic_scores(const LogisticProbe& probe, const ActivationBundle& data);

struct LayerSelectRow {
  std::size_t layer = 0;
  bool fitted = false;
  double threshold = 0.0;
  double fpr = 0.0;
  double fnr = 1.0;
  bool feasible = false;
  std::string reason;
};

struct LayerSelection {
  std::optional<LogisticProbe> best;  // empty when every layer was infeasible
  std::vector<LayerSelectRow> rows;
};

/// Fits a probe per candidate layer on train, calibrates it on valid, keeps the lowest FNR
/// under the cap (ties to the lower layer). Empty candidates means every layer.
LayerSelection logistic_layer_select(const ActivationBundle& train, const ActivationBundle& valid, double fpr_cap,
                                     const LogisticOptions& options = {},
                                     std::vector<std::size_t> candidates = {}, std::size_t workers = 1);

/// Baseline models for one backbone, stored in the detector container under their own tags.
struct BaselineSet {
  std::string model_name;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::map<Modality, PrototypeModel> prototypes;
  std::map<Modality, LogisticProbe> logistic;

  bool operator==(const BaselineSet&) const = default;
};

void save_baselines(const BaselineSet& set, const std::filesystem::path& path);
BaselineSet load_baselines(const std::filesystem::path& path);

}  // namespace sallie
