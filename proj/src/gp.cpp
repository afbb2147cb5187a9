#include "ucd/gp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lbfgs.hpp"
#include "ucd/error.hpp"
#include "ucd/rng.hpp"

namespace ucd {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Fixed diagonal jitter on the inducing Gram matrix.
constexpr double kInducingJitter = 1e-6;

Eigen::RowVectorXd inverse_lengthscales(const std::vector<double>& ls) {
  Eigen::RowVectorXd inv(static_cast<Eigen::Index>(ls.size()));
  for (std::size_t i = 0; i < ls.size(); ++i) inv(static_cast<Eigen::Index>(i)) = 1.0 / ls[i];
  return inv;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd an = a.rowwise().squaredNorm();
  const Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

Eigen::MatrixXd lower_solve(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& rhs) {
  return lower.triangularView<Eigen::Lower>().solve(rhs);
}

Eigen::MatrixXd upper_solve_transposed(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& rhs) {
  return lower.transpose().triangularView<Eigen::Upper>().solve(rhs);
}

double variance_of(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size());
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed, stream);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows,
                        std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i)
    out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Eigen::VectorXd entries_of(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows,
                           std::size_t begin, std::size_t end) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i)
    out(static_cast<Eigen::Index>(i - begin)) = v(static_cast<Eigen::Index>(rows[i]));
  return out;
}

bool cholesky_ok(const Eigen::MatrixXd& l) {
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double d = l(i, i);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
  }
  return true;
}

}  // namespace

void KernelParams::validate() const {
  if (lengthscales.empty()) throw FitError("kernel has no lengthscales");
  for (double l : lengthscales)
    if (!(l > 0.0) || !std::isfinite(l)) throw FitError("kernel lengthscales must be positive");
  if (!(signal_variance > 0.0)) throw FitError("kernel signal variance must be positive");
  if (!(noise_variance > 0.0)) throw FitError("kernel noise variance must be positive");
}

Eigen::MatrixXd se_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const KernelParams& kernel) {
  const Eigen::RowVectorXd inv = inverse_lengthscales(kernel.lengthscales);
  const Eigen::MatrixXd as = a.array().rowwise() * inv.array();
  const Eigen::MatrixXd bs = b.array().rowwise() * inv.array();
  return kernel.signal_variance * (-0.5 * squared_distances(as, bs)).array().exp().matrix();
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& matrix, double* jitter_used) {
  const Eigen::Index n = matrix.rows();
  double jitter = 0.0;
  while (true) {
    Eigen::MatrixXd m = matrix;
    if (jitter > 0.0) m.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd l = llt.matrixL();
      if (cholesky_ok(l)) {
        if (jitter_used) *jitter_used = jitter;
        return l;
      }
    }
    if (jitter >= kJitterMax) break;
    jitter = jitter == 0.0 ? kJitterStart : jitter * 10.0;
  }
  std::ostringstream msg;
  msg << "matrix of size " << n << " is not positive definite after jitter " << kJitterMax;
  throw FitError(msg.str());
}

double gaussian_kl(const Eigen::VectorXd& mean_q, const Eigen::MatrixXd& cov_q,
                   const Eigen::VectorXd& mean_p, const Eigen::MatrixXd& cov_p) {
  const Eigen::Index m = mean_q.size();
  if (mean_p.size() != m || cov_q.rows() != m || cov_p.rows() != m)
    throw FitError("KL divergence between Gaussians of different dimension");
  Eigen::LLT<Eigen::MatrixXd> lq(cov_q), lp(cov_p);
  if (lq.info() != Eigen::Success || !cholesky_ok(lq.matrixL()))
    throw FitError("q covariance is not positive definite");
  if (lp.info() != Eigen::Success || !cholesky_ok(lp.matrixL()))
    throw FitError("p covariance is not positive definite");
  const Eigen::MatrixXd Lq = lq.matrixL();
  const Eigen::MatrixXd Lp = lp.matrixL();
  const double trace = lower_solve(Lp, Lq).squaredNorm();
  const double maha = lower_solve(Lp, mean_p - mean_q).squaredNorm();
  const double logdet_p = 2.0 * Lp.diagonal().array().log().sum();
  const double logdet_q = 2.0 * Lq.diagonal().array().log().sum();
  return 0.5 * (trace + maha - static_cast<double>(m) + logdet_p - logdet_q);
}

double kl_divergence(const SparseState& state) {
  const auto& l = state.q_chol;
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double d = std::abs(l(i, i));
    if (!(d > 0.0) || !std::isfinite(d)) throw FitError("q covariance is not positive definite");
    logdet += 2.0 * std::log(d);
  }
  return 0.5 * (l.triangularView<Eigen::Lower>().toDenseMatrix().squaredNorm() +
                state.q_mean.squaredNorm() - static_cast<double>(state.size()) - logdet);
}

double Prediction::total_std() const { return std::sqrt(latent_variance + noise_variance); }

Prediction GPModel::predict_standardized(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd row = x.transpose();
  Prediction p;
  p.noise_variance = kernel.noise_variance;
  if (kind == GpKind::exact) {
    const Eigen::VectorXd k = se_kernel(train_inputs, row, kernel).col(0);
    p.mean = prior_mean + k.dot(alpha);
    const Eigen::VectorXd v = lower_solve(chol, k);
    p.latent_variance = kernel.signal_variance - v.squaredNorm();
  } else {
    const Eigen::VectorXd k = se_kernel(sparse.inducing, row, kernel).col(0);
    const Eigen::VectorXd a = lower_solve(chol, k);
    p.mean = prior_mean + a.dot(sparse.q_mean);
    const Eigen::VectorXd sa = sparse.q_chol.transpose() * a;
    p.latent_variance = kernel.signal_variance - a.squaredNorm() + sa.squaredNorm();
  }
  p.latent_variance = std::max(p.latent_variance, kJitterStart);
  return p;
}

Prediction GPModel::predict(std::span<const double> raw) const {
  if (raw.size() != schema.dimension())
    throw SchemaError("feature vector has " + std::to_string(raw.size()) +
                      " entries, model expects " + std::to_string(schema.dimension()));
  const std::vector<double> z = stats.apply(std::vector<double>(raw.begin(), raw.end()));
  return predict_standardized(Eigen::Map<const Eigen::VectorXd>(z.data(),
                                                               static_cast<Eigen::Index>(z.size())));
}

void GPModel::predict_batch(const Eigen::MatrixXd& raw, Eigen::VectorXd& mean,
                            Eigen::VectorXd& latent_variance) const {
  if (static_cast<std::size_t>(raw.cols()) != schema.dimension())
    throw SchemaError("feature matrix has " + std::to_string(raw.cols()) +
                      " columns, model expects " + std::to_string(schema.dimension()));
  const Eigen::MatrixXd xs = stats.apply(raw);
  const Eigen::Index n = xs.rows();
  mean.resize(n);
  latent_variance.resize(n);
  constexpr Eigen::Index kChunk = 1024;
  for (Eigen::Index begin = 0; begin < n; begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - begin);
    const Eigen::MatrixXd block = xs.middleRows(begin, len);
    if (kind == GpKind::exact) {
      const Eigen::MatrixXd k = se_kernel(train_inputs, block, kernel);  // N x len
      mean.segment(begin, len) = (k.transpose() * alpha).array() + prior_mean;
      const Eigen::MatrixXd v = lower_solve(chol, k);
      latent_variance.segment(begin, len) =
          (kernel.signal_variance - v.colwise().squaredNorm().array()).matrix().transpose();
    } else {
      const Eigen::MatrixXd k = se_kernel(sparse.inducing, block, kernel);  // M x len
      const Eigen::MatrixXd a = lower_solve(chol, k);
      mean.segment(begin, len) = (a.transpose() * sparse.q_mean).array() + prior_mean;
      const Eigen::MatrixXd sa = sparse.q_chol.transpose() * a;
      latent_variance.segment(begin, len) =
          (kernel.signal_variance - a.colwise().squaredNorm().array() +
           sa.colwise().squaredNorm().array())
              .matrix()
              .transpose();
    }
  }
  latent_variance = latent_variance.cwiseMax(kJitterStart);
}

LognormalParams predict_lognormal_params(const GPModel& model, std::span<const double> raw,
                                         const FeatureSchema& schema) {
  if (!(model.schema == schema))
    throw SchemaError("model feature schema " + model.schema.version + " (" + model.schema.hash() +
                      ") does not match input schema " + schema.version + " (" + schema.hash() +
                      ")");
  const Prediction p = model.predict(raw);
  return {p.mean, p.total_std()};
}

LognormalParams predict_lognormal_params(const GPModel& model, const ContextVector& theta) {
  const auto f = theta.to_features();
  return predict_lognormal_params(model, f, context_schema());
}

double evaluate_nll(const GPModel& model, const SampleSet& samples) {
  if (samples.size() == 0) return 0.0;
  Eigen::VectorXd mean, latent;
  model.predict_batch(samples.features, mean, latent);
  const Eigen::ArrayXd var = latent.array() + model.kernel.noise_variance;
  const Eigen::ArrayXd r = samples.log_s.array() - mean.array();
  return (0.5 * (kLog2Pi + var.log()) + 0.5 * r.square() / var).mean();
}

// ---------------------------------------------------------------------------
// Exact GP

LmlResult exact_log_marginal_likelihood(const Eigen::MatrixXd& inputs,
                                        const Eigen::VectorXd& centred_targets,
                                        const Eigen::VectorXd& log_params) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = inputs.cols();
  if (log_params.size() != d + 2) throw FitError("log parameter vector has wrong length");
  KernelParams kp;
  for (Eigen::Index j = 0; j < d; ++j) kp.lengthscales.push_back(std::exp(log_params(j)));
  kp.signal_variance = std::exp(log_params(d));
  kp.noise_variance = std::exp(log_params(d + 1));

  const Eigen::MatrixXd kf = se_kernel(inputs, inputs, kp);
  Eigen::MatrixXd k = kf;
  k.diagonal().array() += kp.noise_variance;
  const Eigen::MatrixXd l = robust_cholesky(k);
  const Eigen::VectorXd alpha =
      upper_solve_transposed(l, lower_solve(l, centred_targets));

  LmlResult res;
  res.value = -0.5 * centred_targets.dot(alpha) - l.diagonal().array().log().sum() -
              0.5 * static_cast<double>(n) * kLog2Pi;

  const Eigen::MatrixXd linv = lower_solve(l, Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd w = alpha * alpha.transpose() - linv.transpose() * linv;
  const Eigen::MatrixXd wk = w.cwiseProduct(kf);

  res.gradient.resize(d + 2);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Eigen::VectorXd x = inputs.col(j);
    // sum_ab wk_ab (x_a - x_b)^2 = 2 sum_a r_a x_a^2 - 2 x^T wk x for symmetric wk.
    const Eigen::VectorXd rows = wk.rowwise().sum();
    const double s = 2.0 * rows.dot(x.cwiseProduct(x)) - 2.0 * x.dot(wk * x);
    res.gradient(j) = 0.5 * s / (kp.lengthscales[static_cast<std::size_t>(j)] *
                                 kp.lengthscales[static_cast<std::size_t>(j)]);
  }
  res.gradient(d) = 0.5 * wk.sum();
  res.gradient(d + 1) = 0.5 * kp.noise_variance * w.trace();
  return res;
}

namespace {

struct ExactBox {
  double log_var_y;
};

// Hyperparameter vector [log l, log sf2, log(noise - floor)] to LML log-params.
Eigen::VectorXd to_log_params(const Eigen::VectorXd& p, double floor) {
  Eigen::VectorXd lp = p;
  const Eigen::Index last = p.size() - 1;
  lp(last) = std::log(floor + std::exp(p(last)));
  return lp;
}

KernelParams kernel_from_raw(const Eigen::VectorXd& p, double floor) {
  KernelParams kp;
  const Eigen::Index d = p.size() - 2;
  for (Eigen::Index j = 0; j < d; ++j) kp.lengthscales.push_back(std::exp(p(j)));
  kp.signal_variance = std::exp(p(d));
  kp.noise_variance = floor + std::exp(p(d + 1));
  return kp;
}

bool inside_box(const Eigen::VectorXd& p, const ExactBox& box) {
  const Eigen::Index d = p.size() - 2;
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(std::abs(p(j)) < 9.0)) return false;
  if (!(std::abs(p(d) - box.log_var_y) < 14.0)) return false;
  if (!(p(d + 1) > -40.0 && p(d + 1) < box.log_var_y + 6.0)) return false;
  return true;
}

double negative_lml_per_point(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& p, double floor, const ExactBox& box,
                              Eigen::VectorXd& grad) {
  grad.setZero(p.size());
  if (!inside_box(p, box)) return std::numeric_limits<double>::infinity();
  try {
    const LmlResult r = exact_log_marginal_likelihood(x, y, to_log_params(p, floor));
    const double n = static_cast<double>(x.rows());
    grad = -r.gradient / n;
    const Eigen::Index last = p.size() - 1;
    const double noise = floor + std::exp(p(last));
    grad(last) *= std::exp(p(last)) / noise;
    return -r.value / n;
  } catch (const FitError&) {
    return std::numeric_limits<double>::infinity();
  }
}

void finalize_exact(GPModel& model) {
  Eigen::MatrixXd k = se_kernel(model.train_inputs, model.train_inputs, model.kernel);
  k.diagonal().array() += model.kernel.noise_variance;
  model.chol = robust_cholesky(k, &model.jitter);
  model.alpha = upper_solve_transposed(model.chol, lower_solve(model.chol, model.train_targets));
}

void finalize_sparse(GPModel& model) {
  Eigen::MatrixXd kuu = se_kernel(model.sparse.inducing, model.sparse.inducing, model.kernel);
  kuu.diagonal().array() += kInducingJitter;
  model.chol = robust_cholesky(kuu, &model.jitter);
  model.jitter += kInducingJitter;
}

}  // namespace

GPModel fit_exact(const SampleSet& samples, const ExactFitOptions& options) {
  if (samples.size() < 20) throw FitError("exact GP fit requires at least 20 samples");
  auto [standardized, stats] = standardize(samples);
  GPModel model;
  model.kind = GpKind::exact;
  model.schema = samples.schema;
  model.stats = std::move(stats);
  model.prior_mean = samples.log_s.mean();
  model.train_inputs = std::move(standardized.features);
  model.train_targets = samples.log_s.array() - model.prior_mean;

  const auto d = static_cast<Eigen::Index>(samples.dimension());
  if (options.fixed_kernel) {
    model.kernel = *options.fixed_kernel;
    model.kernel.validate();
    finalize_exact(model);
    return model;
  }

  const double var_y = std::max(variance_of(model.train_targets), 1e-8);
  const ExactBox box{std::log(var_y)};
  const double floor = options.noise_floor;
  const std::size_t n = samples.size();

  Eigen::MatrixXd x_sub = model.train_inputs;
  Eigen::VectorXd y_sub = model.train_targets;
  const bool subsampled = n > options.hyper_subset;
  if (subsampled) {
    const auto idx = shuffled_indices(n, options.seed, 0x5eedull);
    x_sub = rows_of(model.train_inputs, idx, 0, options.hyper_subset);
    y_sub = entries_of(model.train_targets, idx, 0, options.hyper_subset);
  }

  auto start_point = [&](int restart) {
    Eigen::VectorXd p(d + 2);
    if (restart == 0) {
      p.head(d).setZero();
      p(d) = std::log(var_y);
      p(d + 1) = std::log(0.1 * var_y);
      return p;
    }
    CounterRng rng(options.seed, static_cast<std::uint64_t>(restart));
    for (Eigen::Index j = 0; j < d; ++j) p(j) = std::log(0.3) + rng.uniform() * std::log(10.0);
    p(d) = std::log(var_y) + (rng.uniform() - 0.5) * std::log(4.0);
    p(d + 1) = std::log(var_y) + std::log(0.01) + rng.uniform() * std::log(50.0);
    return p;
  };

  detail::Objective sub_objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
    return negative_lml_per_point(x_sub, y_sub, p, floor, box, g);
  };

  Eigen::VectorXd best;
  double best_value = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    const auto res = detail::lbfgs_minimize(sub_objective, start_point(r), options.max_iterations);
    if (res.value < best_value) {
      best_value = res.value;
      best = res.x;
    }
  }
  if (!std::isfinite(best_value)) throw FitError("marginal likelihood optimisation failed at every start");

  if (subsampled && options.refine_iterations > 0) {
    detail::Objective full = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
      return negative_lml_per_point(model.train_inputs, model.train_targets, p, floor, box, g);
    };
    const auto res = detail::lbfgs_minimize(full, best, options.refine_iterations);
    if (std::isfinite(res.value)) best = res.x;
  }

  model.kernel = kernel_from_raw(best, floor);
  finalize_exact(model);
  return model;
}

// ---------------------------------------------------------------------------
// Sparse GP

std::size_t SparseParamLayout::size() const {
  return dimension + 2 + inducing * dimension + inducing + inducing * (inducing + 1) / 2;
}

namespace {

struct SparseView {
  KernelParams kernel;
  Eigen::MatrixXd z;
  Eigen::VectorXd m;
  Eigen::MatrixXd ls;  // q_chol
};

SparseView unpack(const SparseParamLayout& layout, const Eigen::VectorXd& p, double floor) {
  if (static_cast<std::size_t>(p.size()) != layout.size())
    throw FitError("sparse parameter vector has wrong length");
  const auto d = static_cast<Eigen::Index>(layout.dimension);
  const auto mm = static_cast<Eigen::Index>(layout.inducing);
  SparseView v;
  for (Eigen::Index j = 0; j < d; ++j) v.kernel.lengthscales.push_back(std::exp(p(j)));
  v.kernel.signal_variance = std::exp(p(d));
  v.kernel.noise_variance = floor + std::exp(p(d + 1));
  Eigen::Index off = d + 2;
  v.z = Eigen::Map<const Eigen::MatrixXd>(p.data() + off, mm, d);
  off += mm * d;
  v.m = p.segment(off, mm);
  off += mm;
  v.ls = Eigen::MatrixXd::Zero(mm, mm);
  for (Eigen::Index j = 0; j < mm; ++j)
    for (Eigen::Index i = j; i < mm; ++i) v.ls(i, j) = p(off++);
  return v;
}

}  // namespace

Eigen::VectorXd pack_sparse_params(const KernelParams& kernel, const SparseState& state,
                                   double noise_floor) {
  const auto d = static_cast<Eigen::Index>(kernel.lengthscales.size());
  const auto mm = static_cast<Eigen::Index>(state.size());
  SparseParamLayout layout{static_cast<std::size_t>(d), static_cast<std::size_t>(mm)};
  Eigen::VectorXd p(static_cast<Eigen::Index>(layout.size()));
  for (Eigen::Index j = 0; j < d; ++j) p(j) = std::log(kernel.lengthscales[static_cast<std::size_t>(j)]);
  p(d) = std::log(kernel.signal_variance);
  const double excess = kernel.noise_variance - noise_floor;
  if (!(excess > 0.0)) throw FitError("noise variance must exceed the noise floor");
  p(d + 1) = std::log(excess);
  Eigen::Index off = d + 2;
  Eigen::Map<Eigen::MatrixXd>(p.data() + off, mm, d) = state.inducing;
  off += mm * d;
  p.segment(off, mm) = state.q_mean;
  off += mm;
  for (Eigen::Index j = 0; j < mm; ++j)
    for (Eigen::Index i = j; i < mm; ++i) p(off++) = state.q_chol(i, j);
  return p;
}

double sparse_batch_objective(const SparseParamLayout& layout, const Eigen::VectorXd& params,
                              const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              std::size_t n_total, double beta, double noise_floor,
                              Eigen::VectorXd* gradient) {
  const SparseView v = unpack(layout, params, noise_floor);
  const auto d = static_cast<Eigen::Index>(layout.dimension);
  const auto mm = static_cast<Eigen::Index>(layout.inducing);
  const auto b = static_cast<double>(x.rows());
  const double sf2 = v.kernel.signal_variance;
  const double noise = v.kernel.noise_variance;
  const double kl_weight = beta / static_cast<double>(n_total);

  const Eigen::MatrixXd kuu_f = se_kernel(v.z, v.z, v.kernel);
  Eigen::MatrixXd kuu = kuu_f;
  kuu.diagonal().array() += kInducingJitter;
  const Eigen::MatrixXd l = robust_cholesky(kuu);
  const Eigen::MatrixXd kub = se_kernel(v.z, x, v.kernel);  // M x B
  const Eigen::MatrixXd a = lower_solve(l, kub);            // M x B
  const Eigen::MatrixXd sa = v.ls.transpose() * a;          // M x B

  const Eigen::ArrayXd mu = (a.transpose() * v.m).array();
  const Eigen::ArrayXd var = sf2 + noise - a.colwise().squaredNorm().transpose().array() +
                             sa.colwise().squaredNorm().transpose().array();
  const Eigen::ArrayXd r = y.array() - mu;
  const double ll = (-0.5 * (kLog2Pi + var.log()) - 0.5 * r.square() / var).sum() / b;

  SparseState st;
  st.q_mean = v.m;
  st.q_chol = v.ls;
  const double kl = kl_divergence(st);
  const double objective = ll - kl_weight * kl;
  if (!gradient) return objective;

  Eigen::VectorXd& g = *gradient;
  g.setZero(static_cast<Eigen::Index>(layout.size()));

  const Eigen::VectorXd gmu = (r / var / b).matrix();
  const Eigen::VectorXd gvar = ((-0.5 / var + 0.5 * r.square() / var.square()) / b).matrix();

  // Through mu = A^T m and var = sf2 + noise - |A_i|^2 + |L_S^T A_i|^2.
  const Eigen::MatrixXd a_gv = a * gvar.asDiagonal();
  Eigen::MatrixXd abar = v.m * gmu.transpose() + 2.0 * (v.ls * sa - a) * gvar.asDiagonal();
  const Eigen::VectorXd gm = a * gmu - kl_weight * v.m;
  Eigen::MatrixXd gls = 2.0 * a_gv * sa.transpose() - kl_weight * v.ls;
  for (Eigen::Index i = 0; i < mm; ++i) gls(i, i) += kl_weight / v.ls(i, i);

  // A = L^-1 Kub.
  const Eigen::MatrixXd kub_bar = upper_solve_transposed(l, abar);
  const Eigen::MatrixXd l_bar = (-kub_bar * a.transpose()).triangularView<Eigen::Lower>();
  // Cholesky backward: P = Phi(L^T Lbar); Kbar = L^-T P L^-1, symmetrised.
  Eigen::MatrixXd phi = (l.transpose() * l_bar).triangularView<Eigen::Lower>();
  phi.diagonal() *= 0.5;
  const Eigen::MatrixXd tmp = upper_solve_transposed(l, phi);                 // L^-T P
  const Eigen::MatrixXd sig = upper_solve_transposed(l, tmp.transpose()).transpose();  // (L^-T P) L^-1
  const Eigen::MatrixXd kuu_bar = 0.5 * (sig + sig.transpose());

  const Eigen::MatrixXd gk = kub_bar.cwiseProduct(kub);   // M x B
  const Eigen::MatrixXd hk = kuu_bar.cwiseProduct(kuu_f); // M x M
  const Eigen::VectorXd g_rows = gk.rowwise().sum();
  const Eigen::VectorXd g_cols = gk.colwise().sum().transpose();
  const Eigen::VectorXd h_rows = hk.rowwise().sum();

  Eigen::MatrixXd gz(mm, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double l2 = v.kernel.lengthscales[static_cast<std::size_t>(j)] *
                      v.kernel.lengthscales[static_cast<std::size_t>(j)];
    const Eigen::VectorXd zj = v.z.col(j);
    const Eigen::VectorXd xj = x.col(j);
    const Eigen::VectorXd gx = gk * xj;
    const Eigen::VectorXd hz = hk * zj;
    const double dist_g = g_rows.dot(zj.cwiseProduct(zj)) - 2.0 * zj.dot(gx) +
                          g_cols.dot(xj.cwiseProduct(xj));
    const double dist_h = 2.0 * h_rows.dot(zj.cwiseProduct(zj)) - 2.0 * zj.dot(hz);
    g(j) = (dist_g + dist_h) / l2;
    gz.col(j) = -(g_rows.cwiseProduct(zj) - gx) / l2 - 2.0 * (h_rows.cwiseProduct(zj) - hz) / l2;
  }
  g(d) = gk.sum() + hk.sum() + sf2 * gvar.sum();
  g(d + 1) = (noise - noise_floor) * gvar.sum();

  Eigen::Index off = d + 2;
  Eigen::Map<Eigen::MatrixXd>(g.data() + off, mm, d) = gz;
  off += mm * d;
  g.segment(off, mm) = gm;
  off += mm;
  for (Eigen::Index j = 0; j < mm; ++j)
    for (Eigen::Index i = j; i < mm; ++i) g(off++) = gls(i, j);
  return objective;
}

namespace {

GPModel sparse_model_from(const SparseParamLayout& layout, const Eigen::VectorXd& p,
                          double floor, double beta, double prior_mean,
                          const FeatureSchema& schema, const FeatureStats& stats) {
  SparseView v = unpack(layout, p, floor);
  GPModel model;
  model.kind = GpKind::sparse;
  model.kernel = std::move(v.kernel);
  model.prior_mean = prior_mean;
  model.schema = schema;
  model.stats = stats;
  model.sparse.inducing = std::move(v.z);
  model.sparse.q_mean = std::move(v.m);
  model.sparse.q_chol = std::move(v.ls);
  model.sparse.beta = beta;
  finalize_sparse(model);
  return model;
}

double objective_on(const GPModel& model, const Eigen::MatrixXd& xs, const Eigen::VectorXd& yc,
                    std::size_t n_train) {
  const SparseParamLayout layout{model.schema.dimension(), model.sparse.size()};
  const Eigen::VectorXd p = pack_sparse_params(model.kernel, model.sparse, 0.0);
  double total = 0.0;
  constexpr Eigen::Index kChunk = 4096;
  const Eigen::Index n = xs.rows();
  // The KL term is batch independent; accumulate the likelihood part only.
  SparseState st = model.sparse;
  const double kl_part = model.sparse.beta / static_cast<double>(n_train) * kl_divergence(st);
  for (Eigen::Index begin = 0; begin < n; begin += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - begin);
    const double j = sparse_batch_objective(layout, p, xs.middleRows(begin, len),
                                            yc.segment(begin, len), n_train, model.sparse.beta,
                                            0.0, nullptr);
    total += (j + kl_part) * static_cast<double>(len);
  }
  return total / static_cast<double>(n) - kl_part;
}

}  // namespace

double sparse_objective(const GPModel& model, const SampleSet& samples, std::size_t n_train) {
  if (model.kind != GpKind::sparse) throw FitError("sparse objective requires a sparse model");
  if (samples.size() == 0) throw DataError("sparse objective over an empty sample set");
  const Eigen::MatrixXd xs = model.stats.apply(samples.features);
  const Eigen::VectorXd yc = samples.log_s.array() - model.prior_mean;
  return objective_on(model, xs, yc, n_train);
}

SparseFitResult fit_sparse(const SampleSet& train, const SampleSet& validation,
                           const SparseFitOptions& options) {
  const std::size_t n = train.size();
  const std::size_t mm = options.inducing;
  if (mm == 0) throw FitError("sparse GP needs at least one inducing point");
  if (mm > n) throw FitError("inducing count M=" + std::to_string(mm) + " exceeds N=" + std::to_string(n));
  if (validation.size() > 0 && !(validation.schema == train.schema))
    throw SchemaError("validation schema differs from training schema");

  const FeatureStats stats = options.stats ? *options.stats : fit_feature_stats(train.features);
  const Eigen::MatrixXd xs = stats.apply(train.features);
  const double prior_mean = train.log_s.mean();
  const Eigen::VectorXd yc = train.log_s.array() - prior_mean;
  const double var_y = std::max(variance_of(yc), 1e-8);
  const double floor = options.noise_floor;

  const SparseParamLayout layout{train.dimension(), mm};
  KernelParams kernel;
  if (options.initial_kernel) {
    kernel = *options.initial_kernel;
  } else {
    kernel.lengthscales.assign(train.dimension(), 1.0);
    kernel.signal_variance = var_y;
    kernel.noise_variance = floor + 0.1 * var_y;
  }
  kernel.validate();
  SparseState state;
  if (options.initial_inducing) {
    state.inducing = *options.initial_inducing;
    if (static_cast<std::size_t>(state.inducing.rows()) != mm ||
        static_cast<std::size_t>(state.inducing.cols()) != train.dimension())
      throw FitError("initial inducing locations have the wrong shape");
  } else {
    const auto idx = shuffled_indices(n, options.seed, 0x1dcull);
    state.inducing = rows_of(xs, idx, 0, mm);
  }
  state.q_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mm));
  state.q_chol = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(mm), static_cast<Eigen::Index>(mm));
  state.beta = options.beta;

  Eigen::VectorXd p = pack_sparse_params(kernel, state, floor);
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(p.size());
  const auto d = static_cast<Eigen::Index>(train.dimension());
  if (!options.train_kernel) mask.head(d + 2).setZero();
  if (!options.train_inducing) mask.segment(d + 2, static_cast<Eigen::Index>(mm) * d).setZero();

  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(p.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(p.size());
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  long step = 0;

  const bool has_val = validation.size() > 0;
  const Eigen::MatrixXd val_x = has_val ? stats.apply(validation.features) : Eigen::MatrixXd();
  const Eigen::VectorXd val_y =
      has_val ? Eigen::VectorXd(validation.log_s.array() - prior_mean) : Eigen::VectorXd();

  SparseFitResult result;
  double lr = options.learning_rate;
  double best_val = std::numeric_limits<double>::infinity();
  double plateau_ref = best_val;
  int since_best = 0, since_plateau = 0;
  Eigen::VectorXd best_p = p;
  const std::size_t batch = std::max<std::size_t>(1, std::min(options.batch_size, n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::VectorXd grad(p.size());

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    if (options.shuffle) order = shuffled_indices(n, options.seed, 0x100000ull + static_cast<std::uint64_t>(epoch));
    double train_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      const Eigen::MatrixXd xb = rows_of(xs, order, begin, end);
      const Eigen::VectorXd yb = entries_of(yc, order, begin, end);
      double j = 0.0;
      try {
        j = sparse_batch_objective(layout, p, xb, yb, n, options.beta, floor, &grad);
      } catch (const FitError& e) {
        throw FitError("sparse training failed at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(j) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "sparse training diverged (NaN loss) at epoch " << epoch << ", batch starting "
            << begin << ", learning rate " << lr;
        throw FitError(msg.str());
      }
      train_loss += -j * static_cast<double>(end - begin);
      ++step;
      m1 = kB1 * m1 + (1.0 - kB1) * grad;
      m2 = kB2 * m2 + (1.0 - kB2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(kB1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kB2, static_cast<double>(step));
      p.array() += lr * mask.array() * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps);
    }
    train_loss /= static_cast<double>(n);

    GPModel current = sparse_model_from(layout, p, floor, options.beta, prior_mean, train.schema, stats);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.learning_rate = lr;
    if (has_val) {
      rec.val_loss = -objective_on(current, val_x, val_y, n);
      rec.val_nll = evaluate_nll(current, validation);
    } else {
      rec.val_loss = -objective_on(current, xs, yc, n);
      rec.val_nll = evaluate_nll(current, train);
    }
    if (!std::isfinite(rec.val_loss))
      throw FitError("validation loss is not finite at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (options.keep_checkpoints) result.checkpoints.push_back(current);

    if (rec.val_loss < best_val - options.min_improvement) {
      since_best = 0;
    } else {
      ++since_best;
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best_p = p;
      result.best_epoch = epoch;
    }
    if (rec.val_loss < plateau_ref - options.min_improvement) {
      plateau_ref = rec.val_loss;
      since_plateau = 0;
    } else if (++since_plateau >= options.lr_patience) {
      lr = std::max(options.min_learning_rate, lr * options.lr_decay);
      since_plateau = 0;
      plateau_ref = rec.val_loss;
    }
    if (since_best >= options.early_stop_patience) break;
  }

  result.model = sparse_model_from(layout, best_p, floor, options.beta, prior_mean, train.schema, stats);
  return result;
}

std::size_t select_model(const std::vector<GPModel>& candidates, const SampleSet& test,
                         std::size_t n_train) {
  if (candidates.empty()) throw FitError("no candidate models to select from");
  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  double best_nll = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const double nll = evaluate_nll(c, test);
    const double loss = c.kind == GpKind::sparse ? -sparse_objective(c, test, n_train) : nll;
    const bool better = loss < best_loss - 1e-12 ||
                        (std::abs(loss - best_loss) <= 1e-12 && nll < best_nll);
    if (better) {
      best = i;
      best_loss = loss;
      best_nll = nll;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw ParseError("model matrix row has wrong width");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(i), c) = j[i][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json model_to_json(const GPModel& model) {
  nlohmann::json doc;
  doc["format"] = kModelFormat;
  doc["kind"] = model.kind == GpKind::exact ? "exact" : "sparse";
  doc["schema"] = {{"version", model.schema.version},
                   {"names", model.schema.names},
                   {"hash", model.schema.hash()}};
  doc["feature_stats"] = {{"mean", model.stats.mean},
                          {"scale", model.stats.scale},
                          {"degenerate", model.stats.degenerate}};
  doc["kernel"] = {{"type", "squared_exponential_ard"},
                   {"lengthscales", model.kernel.lengthscales},
                   {"signal_variance", model.kernel.signal_variance},
                   {"noise_variance", model.kernel.noise_variance}};
  doc["prior_mean"] = model.prior_mean;
  if (model.kind == GpKind::exact) {
    doc["exact"] = {{"inputs", matrix_json(model.train_inputs)},
                    {"centred_targets", std::vector<double>(model.train_targets.data(),
                                                            model.train_targets.data() +
                                                                model.train_targets.size())}};
  } else {
    doc["sparse"] = {{"inducing", matrix_json(model.sparse.inducing)},
                     {"q_mean", std::vector<double>(model.sparse.q_mean.data(),
                                                    model.sparse.q_mean.data() +
                                                        model.sparse.q_mean.size())},
                     {"q_chol", matrix_json(model.sparse.q_chol)},
                     {"beta", model.sparse.beta}};
  }
  return doc;
}

GPModel model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kModelFormat)
      throw ParseError("unsupported model format " + doc.at("format").get<std::string>());
    GPModel model;
    const auto& sch = doc.at("schema");
    model.schema.version = sch.at("version").get<std::string>();
    model.schema.names = sch.at("names").get<std::vector<std::string>>();
    if (sch.at("hash").get<std::string>() != model.schema.hash())
      throw SchemaError("model schema hash does not match its feature names");
    const auto& fs = doc.at("feature_stats");
    model.stats.mean = fs.at("mean").get<std::vector<double>>();
    model.stats.scale = fs.at("scale").get<std::vector<double>>();
    model.stats.degenerate = fs.at("degenerate").get<std::vector<bool>>();
    const auto& k = doc.at("kernel");
    model.kernel.lengthscales = k.at("lengthscales").get<std::vector<double>>();
    model.kernel.signal_variance = k.at("signal_variance").get<double>();
    model.kernel.noise_variance = k.at("noise_variance").get<double>();
    model.kernel.validate();
    model.prior_mean = doc.at("prior_mean").get<double>();
    const auto d = static_cast<Eigen::Index>(model.schema.dimension());
    if (static_cast<Eigen::Index>(model.kernel.lengthscales.size()) != d ||
        static_cast<Eigen::Index>(model.stats.mean.size()) != d)
      throw ParseError("model dimensions are inconsistent with its schema");
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind == "exact") {
      model.kind = GpKind::exact;
      model.train_inputs = matrix_from(doc.at("exact").at("inputs"), d);
      model.train_targets = vector_from(doc.at("exact").at("centred_targets"));
      if (model.train_targets.size() != model.train_inputs.rows())
        throw ParseError("exact payload inputs and targets differ in length");
      finalize_exact(model);
    } else if (kind == "sparse") {
      model.kind = GpKind::sparse;
      const auto& sp = doc.at("sparse");
      model.sparse.inducing = matrix_from(sp.at("inducing"), d);
      model.sparse.q_mean = vector_from(sp.at("q_mean"));
      model.sparse.q_chol = matrix_from(sp.at("q_chol"), model.sparse.q_mean.size());
      model.sparse.beta = sp.at("beta").get<double>();
      if (model.sparse.inducing.rows() != model.sparse.q_mean.size())
        throw ParseError("sparse payload sizes are inconsistent");
      finalize_sparse(model);
    } else {
      throw ParseError("unknown model kind " + kind);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const GPModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file " + path, path);
  out << model_to_json(model).dump(1) << '\n';
}

GPModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path, path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("model file " + path + " is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace ucd
