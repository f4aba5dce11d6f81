#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "poisonbench/corpus.hpp"
#include "poisonbench/embed.hpp"

namespace poisonbench::linmod {

enum class Loss { kLogistic, kHinge };

std::string_view to_string(Loss loss);
Loss parse_loss(std::string_view name);

struct TrainConfig {
  Loss loss = Loss::kLogistic;
  double learning_rate = 0.1;
  std::size_t epochs = 20;
  double l2_lambda = 1e-4;
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Per-feature z-scoring fitted on the training rows and folded back into
  // the returned weights. Off by default so BOW counts keep their meaning.
  bool standardize = false;
};

void validate(const TrainConfig& cfg);

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  Loss loss = Loss::kLogistic;
  std::string provider_tag;
  TrainConfig config;

  std::size_t dim() const { return weights.size(); }
};

// Per-sample regularised logistic loss with y in {0,1}:
//   log(1 + exp(-s (w.x + b))) + l2/2 |w|^2,  s = 2y - 1.
double logistic_loss(std::span<const double> w, double b, std::span<const double> x,
                     corpus::Label y, double l2_lambda);

// Gradient of logistic_loss; writes d/dw into grad_w and returns d/db.
double logistic_gradient(std::span<const double> w, double b, std::span<const double> x,
                         corpus::Label y, double l2_lambda, std::span<double> grad_w);

// SGD. Logistic uses a constant step; hinge follows the Pegasos schedule
// eta_t = 1/(lambda t) when lambda > 0 (bias shrunk with the weights) and a
// constant step otherwise. Deterministic for a fixed config.
LinearModel train(const embed::EmbeddingMatrix& X, std::span<const corpus::Label> y,
                  const TrainConfig& cfg);

double decision_value(const LinearModel& model, std::span<const double> x);

// Label 1 iff w.x + b > 0; an exact zero maps to 0.
std::vector<corpus::Label> predict(const LinearModel& model, const embed::EmbeddingMatrix& X);

// Fraction of agreeing positions, in [0,1].
double accuracy(std::span<const corpus::Label> pred, std::span<const corpus::Label> truth);

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

nlohmann::ordered_json to_json(const LinearModel& model);
LinearModel model_from_json(const nlohmann::json& j);
void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace poisonbench::linmod
