#include "poisonbench/linmod.hpp"

#include <cmath>
#include <numeric>

#include "poisonbench/csv.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/rng.hpp"

namespace poisonbench::linmod {

std::string_view to_string(Loss loss) { return loss == Loss::kLogistic ? "logistic" : "hinge"; }

Loss parse_loss(std::string_view name) {
  if (name == "logistic" || name == "logreg") return Loss::kLogistic;
  if (name == "hinge" || name == "svm") return Loss::kHinge;
  throw ValidationError("unknown loss '" + std::string(name) + "' (expected logistic or hinge)");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
    throw ValidationError("learning_rate must be positive");
  if (cfg.epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(cfg.l2_lambda >= 0.0) || !std::isfinite(cfg.l2_lambda))
    throw ValidationError("l2_lambda must be nonnegative");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// log(1 + exp(-m)) without overflow.
double softplus_neg(double m) { return m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }

// 1 / (1 + exp(m)), i.e. sigmoid(-m).
double sigmoid_neg(double m) {
  if (m >= 0) {
    const double e = std::exp(-m);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(m));
}

double sign_of(corpus::Label y) { return y == 1 ? 1.0 : -1.0; }

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
};

Standardizer fit_standardizer(const embed::EmbeddingMatrix& X) {
  const std::size_t d = X.cols();
  const auto n = static_cast<double>(X.rows());
  Standardizer st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += row[j];
  }
  for (auto& m : st.mean) m /= n;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    for (std::size_t j = 0; j < d; ++j) st.scale[j] += (row[j] - st.mean[j]) * (row[j] - st.mean[j]);
  }
  for (auto& s : st.scale) {
    s = std::sqrt(s / n);
    if (s < 1e-12) s = 1.0;
  }
  return st;
}

void train_logistic(const embed::EmbeddingMatrix& X, std::span<const corpus::Label> y,
                    const TrainConfig& cfg, std::vector<double>& w, double& b, Rng& rng) {
  const std::size_t n = X.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(w.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle(order, rng);
    for (auto i : order) {
      const double gb = logistic_gradient(w, b, X.row(i), y[i], cfg.l2_lambda, grad);
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.learning_rate * grad[j];
      b -= cfg.learning_rate * gb;
    }
  }
}

void train_hinge(const embed::EmbeddingMatrix& X, std::span<const corpus::Label> y,
                 const TrainConfig& cfg, std::vector<double>& w, double& b, Rng& rng) {
  const std::size_t n = X.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool pegasos = cfg.l2_lambda > 0.0;
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle(order, rng);
    for (auto i : order) {
      ++t;
      auto x = X.row(i);
      const double s = sign_of(y[i]);
      const bool violated = s * (dot(w, x) + b) < 1.0;
      double eta = cfg.learning_rate;
      if (pegasos) {
        eta = 1.0 / (cfg.l2_lambda * static_cast<double>(t));
        const double shrink = 1.0 - eta * cfg.l2_lambda;
        for (auto& wj : w) wj *= shrink;
        b *= shrink;
      }
      if (violated) {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] += eta * s * x[j];
        b += eta * s;
      }
    }
  }
}

}  // namespace

double logistic_loss(std::span<const double> w, double b, std::span<const double> x,
                     corpus::Label y, double l2_lambda) {
  const double margin = sign_of(y) * (dot(w, x) + b);
  return softplus_neg(margin) + 0.5 * l2_lambda * dot(w, w);
}

double logistic_gradient(std::span<const double> w, double b, std::span<const double> x,
                         corpus::Label y, double l2_lambda, std::span<double> grad_w) {
  const double s = sign_of(y);
  const double coeff = -s * sigmoid_neg(s * (dot(w, x) + b));
  for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] = coeff * x[j] + l2_lambda * w[j];
  return coeff;
}

LinearModel train(const embed::EmbeddingMatrix& X, std::span<const corpus::Label> y,
                  const TrainConfig& cfg) {
  validate(cfg);
  if (y.size() != X.rows())
    throw ValidationError("label count " + std::to_string(y.size()) + " does not match " +
                          std::to_string(X.rows()) + " embedding rows");
  if (X.rows() == 0) throw ValidationError("cannot train on zero rows");
  bool has0 = false, has1 = false;
  for (auto label : y) {
    if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
    (label == 1 ? has1 : has0) = true;
  }
  if (!(has0 && has1)) throw ValidationError("training labels contain a single class");
  if (!X.all_finite()) throw ValidationError("non-finite value in training embeddings");

  const embed::EmbeddingMatrix* features = &X;
  embed::EmbeddingMatrix standardized;
  Standardizer st;
  if (cfg.standardize) {
    st = fit_standardizer(X);
    standardized = X;
    for (std::size_t r = 0; r < standardized.rows(); ++r) {
      auto row = standardized.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - st.mean[j]) / st.scale[j];
    }
    features = &standardized;
  }

  Rng rng(cfg.seed);
  std::vector<double> w(X.cols(), 0.0);
  double b = 0.0;
  if (cfg.loss == Loss::kLogistic)
    train_logistic(*features, y, cfg, w, b, rng);
  else
    train_hinge(*features, y, cfg, w, b, rng);

  if (cfg.standardize) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] /= st.scale[j];
      b -= w[j] * st.mean[j];
    }
  }
  for (double v : w)
    if (!std::isfinite(v)) throw Error("training diverged (non-finite weights); lower learning_rate");
  if (!std::isfinite(b)) throw Error("training diverged (non-finite bias); lower learning_rate");

  return {std::move(w), b, cfg.loss, X.provider_tag(), cfg};
}

double decision_value(const LinearModel& model, std::span<const double> x) {
  return dot(model.weights, x) + model.bias;
}

std::vector<corpus::Label> predict(const LinearModel& model, const embed::EmbeddingMatrix& X) {
  if (X.cols() != model.dim())
    throw ValidationError("dimension mismatch: model expects " + std::to_string(model.dim()) +
                          " features, got " + std::to_string(X.cols()));
  std::vector<corpus::Label> out(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) out[r] = decision_value(model, X.row(r)) > 0.0 ? 1 : 0;
  return out;
}

double accuracy(std::span<const corpus::Label> pred, std::span<const corpus::Label> truth) {
  if (pred.size() != truth.size())
    throw ValidationError("accuracy: length mismatch (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()) + ")");
  if (pred.empty()) throw ValidationError("accuracy: empty label vectors");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) agree += pred[i] == truth[i];
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  return {{"loss", std::string(to_string(cfg.loss))},
          {"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"l2_lambda", cfg.l2_lambda},
          {"seed", cfg.seed},
          {"shuffle", cfg.shuffle},
          {"standardize", cfg.standardize}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss").get<std::string>());
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.l2_lambda = j.value("l2_lambda", cfg.l2_lambda);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.shuffle = j.value("shuffle", cfg.shuffle);
  cfg.standardize = j.value("standardize", cfg.standardize);
  validate(cfg);
  return cfg;
}

nlohmann::ordered_json to_json(const LinearModel& model) {
  nlohmann::ordered_json j;
  j["loss"] = std::string(to_string(model.loss));
  j["d"] = model.dim();
  j["bias"] = model.bias;
  j["weights"] = model.weights;
  j["provider_tag"] = model.provider_tag;
  j["config"] = to_json(model.config);
  return j;
}

LinearModel model_from_json(const nlohmann::json& j) {
  LinearModel model;
  model.loss = parse_loss(j.at("loss").get<std::string>());
  model.bias = j.at("bias").get<double>();
  model.weights = j.at("weights").get<std::vector<double>>();
  model.provider_tag = j.value("provider_tag", std::string{});
  if (j.contains("config")) model.config = train_config_from_json(j.at("config"));
  if (j.at("d").get<std::size_t>() != model.weights.size())
    throw ValidationError("model JSON: d does not match weights length");
  return model;
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  csv::write_text_atomic(path, to_json(model).dump(2) + "\n");
}

LinearModel load_model(const std::filesystem::path& path) {
  return model_from_json(nlohmann::json::parse(csv::read_text(path)));
}

}  // namespace poisonbench::linmod
