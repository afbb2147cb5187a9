#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "ucd/context.hpp"
#include "ucd/proximity.hpp"

namespace ucd {

// Squared-exponential ARD kernel
//   k(a, b) = signal_variance * exp(-1/2 sum_d (a_d - b_d)^2 / lengthscale_d^2)
// plus Gaussian observation noise.
struct KernelParams {
  std::vector<double> lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 0.1;

  void validate() const;
};

Eigen::MatrixXd se_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const KernelParams& kernel);

// Diagonal jitter tried in turn when a Cholesky factorisation fails.
inline constexpr double kJitterStart = 1e-8;
inline constexpr double kJitterMax = 1e-4;

// Cholesky of `matrix` (lower), escalating diagonal jitter from kJitterStart
// by x10 up to kJitterMax. Throws FitError when every attempt fails. The
// jitter actually added is written to `jitter_used`.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& matrix, double* jitter_used = nullptr);

// Variational state over M inducing variables, whitened: u = L_uu v with
// q(v) = N(q_mean, q_chol q_chol^T) and p(v) = N(0, I).
struct SparseState {
  Eigen::MatrixXd inducing;  // M x d, standardised feature space
  Eigen::VectorXd q_mean;
  Eigen::MatrixXd q_chol;    // lower triangular
  double beta = 5.0;

  std::size_t size() const { return static_cast<std::size_t>(q_mean.size()); }
  Eigen::MatrixXd q_cov() const { return q_chol * q_chol.transpose(); }
};

// Closed-form KL[N(mean_q, cov_q) || N(mean_p, cov_p)] in nats. Throws
// FitError for a covariance that is not positive definite.
double gaussian_kl(const Eigen::VectorXd& mean_q, const Eigen::MatrixXd& cov_q,
                   const Eigen::VectorXd& mean_p, const Eigen::MatrixXd& cov_p);

// KL[q(u) || p(u)] for the sparse state. Whitening leaves the divergence
// unchanged, so this is KL[q(v) || N(0, I)].
double kl_divergence(const SparseState& state);

enum class GpKind { exact, sparse };

struct Prediction {
  double mean = 0.0;             // predictive mean of ln(s)
  double latent_variance = 0.0;  // variance of g(theta), floored at kJitterStart
  double noise_variance = 0.0;

  double total_std() const;
};

// Regressor theta -> Gaussian over ln(s). Immutable after fitting.
struct GPModel {
  GpKind kind = GpKind::exact;
  KernelParams kernel;
  double prior_mean = 0.0;  // constant mean, the training mean of ln(s)
  FeatureSchema schema;
  FeatureStats stats;

  // exact payload
  Eigen::MatrixXd train_inputs;  // N x d, standardised
  Eigen::VectorXd train_targets; // ln(s) minus prior_mean
  Eigen::MatrixXd chol;          // lower Cholesky of K + noise I (+ jitter)
  Eigen::VectorXd alpha;         // (K + noise I)^-1 targets
  double jitter = 0.0;

  // sparse payload
  SparseState sparse;

  Prediction predict_standardized(const Eigen::VectorXd& x) const;
  // Raw (unstandardised) features; dimension-checked.
  Prediction predict(std::span<const double> raw) const;
  // Batch prediction over raw feature rows.
  void predict_batch(const Eigen::MatrixXd& raw, Eigen::VectorXd& mean,
                     Eigen::VectorXd& latent_variance) const;
};

// mu = predictive mean, sigma = sqrt(latent variance + noise variance).
// Throws SchemaError when the model was not trained on the traffic context.
LognormalParams predict_lognormal_params(const GPModel& model, const ContextVector& theta);
LognormalParams predict_lognormal_params(const GPModel& model, std::span<const double> raw,
                                         const FeatureSchema& schema);

// Mean negative log density of ln(s) under N(mu, sigma^2), nats per sample.
double evaluate_nll(const GPModel& model, const SampleSet& samples);

// ---------------------------------------------------------------------------
// Exact GP

// Log marginal likelihood of centred targets and its gradient with respect to
// the log parameters [log l_1..log l_d, log signal_variance, log noise_variance].
struct LmlResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

LmlResult exact_log_marginal_likelihood(const Eigen::MatrixXd& inputs,
                                        const Eigen::VectorXd& centred_targets,
                                        const Eigen::VectorXd& log_params);

struct ExactFitOptions {
  int restarts = 3;
  int max_iterations = 80;         // per restart, on the hyperparameter subset
  int refine_iterations = 15;      // on the full data
  std::size_t hyper_subset = 600;  // points used during multi-start
  double noise_floor = 1e-6;
  std::uint64_t seed = 0;
  // Skip optimisation and use these hyperparameters as-is.
  std::optional<KernelParams> fixed_kernel;
};

GPModel fit_exact(const SampleSet& samples, const ExactFitOptions& options = {});

// ---------------------------------------------------------------------------
// Sparse variational GP trained on the beta-weighted predictive log-likelihood
//   J = (1/B) sum_i ln N(y_i | mu_i, var_i + noise) - beta KL[q(u) || p(u)] / N.

struct SparseFitOptions {
  std::size_t inducing = 256;
  double beta = 5.0;
  std::size_t batch_size = 2048;
  int max_epochs = 200;
  double learning_rate = 0.01;
  double lr_decay = 0.5;          // plateau factor
  int lr_patience = 5;            // epochs without val improvement before decay
  double min_learning_rate = 1e-5;
  int early_stop_patience = 15;   // epochs without val improvement before stop
  double min_improvement = 1e-4;  // nats
  double noise_floor = 1e-6;
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool train_kernel = true;
  bool train_inducing = true;
  bool keep_checkpoints = false;
  std::optional<KernelParams> initial_kernel;
  // Standardised inducing locations; defaults to a random subset of inputs.
  std::optional<Eigen::MatrixXd> initial_inducing;
  // Standardisation to use instead of one fitted on the training set.
  std::optional<FeatureStats> stats;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_nll = 0.0;
  double learning_rate = 0.0;
};

struct SparseFitResult {
  GPModel model;  // checkpoint with the lowest validation loss
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::vector<GPModel> checkpoints;  // one per epoch when keep_checkpoints
};

// Throws FitError when M > N, on a NaN loss, or when Cholesky fails.
SparseFitResult fit_sparse(const SampleSet& train, const SampleSet& validation,
                           const SparseFitOptions& options = {});

// Value of J for a sparse model on a sample set; n_train scales the KL term.
double sparse_objective(const GPModel& model, const SampleSet& samples, std::size_t n_train);

// Objective and gradient on one batch for a flat parameter vector; exposed for
// gradient checks. Layout: [log l (d), log sf2, log(noise - floor), Z (M x d,
// column-major), q_mean (M), q_chol lower triangle (column-major)].
struct SparseParamLayout {
  std::size_t dimension = 0;
  std::size_t inducing = 0;
  std::size_t size() const;
};

double sparse_batch_objective(const SparseParamLayout& layout, const Eigen::VectorXd& params,
                              const Eigen::MatrixXd& inputs, const Eigen::VectorXd& centred_targets,
                              std::size_t n_total, double beta, double noise_floor,
                              Eigen::VectorXd* gradient);

Eigen::VectorXd pack_sparse_params(const KernelParams& kernel, const SparseState& state,
                                   double noise_floor);

// Index of the candidate with the lowest sparse loss on `test`; ties are
// broken by the lower NLL.
std::size_t select_model(const std::vector<GPModel>& candidates, const SampleSet& test,
                         std::size_t n_train);

// ---------------------------------------------------------------------------
// Persistence: single JSON document, schema-versioned.

inline constexpr const char* kModelFormat = "ucd-gp-model/1";

nlohmann::json model_to_json(const GPModel& model);
GPModel model_from_json(const nlohmann::json& doc);
void save_model(const GPModel& model, const std::string& path);
GPModel load_model(const std::string& path);

}  // namespace ucd
