// Dense encoder-decoder with tied weights.
//
// For hidden sizes [h1..hk] the network runs
//   x -> W1 -> ... -> Wk -> Wk^T -> ... -> W1^T -> sigmoid
// with affine -> batch norm -> ReLU on every layer except the last. Only the encoder
// matrices are stored; the decoder reads their transposes. The loss mixes voxel-mean
// binary cross entropy with the (optionally boundary-weighted) DICE coefficient, and the
// spatial weight smoothing penalty acts on W1, whose columns are laid out on the grid.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "larecon/core.hpp"
#include "larecon/grid.hpp"
#include "larecon/volume.hpp"

namespace larecon::ded {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LossConfig {
  double ce_weight = 0.4;  // ce:dice = 2:3
  double dice_weight = 0.6;
  double lambda_swr = 1e-5;  // per-voxel-mean loss scale; see README
  bool use_boundary_mask = true;
  double mask_alpha = 14.0;
  double mask_sigma = 1.5;
  double input_mask_prob = 0.1;

  void validate() const {
    require(ce_weight >= 0.0 && dice_weight >= 0.0 && lambda_swr >= 0.0, ErrorCode::InvalidArgument,
            "loss weights must be non-negative");
    require(std::abs(ce_weight + dice_weight - 1.0) <= 1e-12, ErrorCode::InvalidArgument,
            "ce_weight + dice_weight must equal 1");
    require(input_mask_prob >= 0.0 && input_mask_prob < 1.0, ErrorCode::InvalidArgument,
            "input_mask_prob must lie in [0, 1)");
    require(mask_alpha > 0.0 && mask_sigma > 0.0, ErrorCode::InvalidArgument, "mask parameters must be positive");
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Trainable tensors in declared order: W[0..k), b_enc[0..k), b_dec[0..k), then
/// (gamma, beta) for each of the 2k-1 batch-norm layers.
struct ParamSet {
  int depth = 0;
  std::vector<Matrix> tensors;

  Matrix& W(int l) { return tensors[l]; }
  const Matrix& W(int l) const { return tensors[l]; }
  Matrix& b_enc(int l) { return tensors[depth + l]; }
  const Matrix& b_enc(int l) const { return tensors[depth + l]; }
  Matrix& b_dec(int l) { return tensors[2 * depth + l]; }
  const Matrix& b_dec(int l) const { return tensors[2 * depth + l]; }
  Matrix& gamma(int t) { return tensors[3 * depth + 2 * t]; }
  const Matrix& gamma(int t) const { return tensors[3 * depth + 2 * t]; }
  Matrix& beta(int t) { return tensors[3 * depth + 2 * t + 1]; }
  const Matrix& beta(int t) const { return tensors[3 * depth + 2 * t + 1]; }

  static ParamSet zeros_like(const ParamSet& p) {
    ParamSet z{p.depth, {}};
    for (const auto& t : p.tensors) z.tensors.push_back(Matrix::Zero(t.rows(), t.cols()));
    return z;
  }

  std::string name(std::size_t i) const {
    const int k = depth;
    const int n = static_cast<int>(i);
    if (n < k) return "W" + std::to_string(n);
    if (n < 2 * k) return "b_enc" + std::to_string(n - k);
    if (n < 3 * k) return "b_dec" + std::to_string(n - 2 * k);
    const int t = (n - 3 * k) / 2;
    return ((n - 3 * k) % 2 == 0 ? "bn_gamma" : "bn_beta") + std::to_string(t);
  }
};

struct DedModel {
  std::vector<int> layer_sizes;  // [s, h1, ..., hk]
  GridSpec grid;
  ParamSet params;
  std::vector<Vector> running_mean;  // per batch-norm layer
  std::vector<Vector> running_var;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  std::uint64_t version = 0;  // bumped on every parameter update

  int depth() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int layer_count() const { return 2 * depth(); }
  int bn_count() const { return 2 * depth() - 1; }
  std::size_t input_size() const { return static_cast<std::size_t>(layer_sizes.front()); }

  /// Output width of network layer t (0-based over all 2k layers).
  int layer_output(int t) const {
    const int k = depth();
    return t < k ? layer_sizes[t + 1] : layer_sizes[2 * k - 1 - t];
  }

  /// Decoder view of W[l]; never stored separately.
  auto decoder_weight(int l) const { return params.W(l).transpose(); }
};

/// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, identity batch norm.
inline DedModel make_model(const GridSpec& grid, const std::vector<int>& hidden, std::uint64_t seed) {
  grid.validate();
  require(!hidden.empty(), ErrorCode::InvalidArgument, "need at least one hidden layer");
  DedModel m;
  m.grid = grid;
  m.layer_sizes.push_back(static_cast<int>(grid.size()));
  for (int h : hidden) {
    require(h > 0, ErrorCode::InvalidArgument, "hidden sizes must be positive");
    m.layer_sizes.push_back(h);
  }
  const int k = m.depth();
  m.params.depth = k;
  Rng rng(seed);
  for (int l = 0; l < k; ++l) {
    const int in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
    const double a = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    Matrix w(out, in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    m.params.tensors.push_back(std::move(w));
  }
  for (int l = 0; l < k; ++l) m.params.tensors.push_back(Matrix::Zero(m.layer_sizes[l + 1], 1));
  for (int l = 0; l < k; ++l) m.params.tensors.push_back(Matrix::Zero(m.layer_sizes[l], 1));
  for (int t = 0; t < m.bn_count(); ++t) {
    const int width = m.layer_output(t);
    m.params.tensors.push_back(Matrix::Ones(width, 1));
    m.params.tensors.push_back(Matrix::Zero(width, 1));
    m.running_mean.push_back(Vector::Zero(width));
    m.running_var.push_back(Vector::Ones(width));
  }
  return m;
}

enum class Mode { Train, Infer };

struct ForwardCache {
  std::uint64_t model_version = 0;
  std::vector<Matrix> inputs;  // input to each layer; inputs[0] is the masked x
  std::vector<Matrix> xhat;    // normalized pre-activations, per BN layer
  std::vector<Matrix> bn_out;  // gamma * xhat + beta (ReLU input), per BN layer
  std::vector<Vector> inv_std;
  std::vector<Vector> batch_mean;  // train mode only
  std::vector<Vector> batch_var;
  Matrix z;
  bool valid = false;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Columns of x are samples. Train mode masks inputs with probability input_mask_prob and
/// normalizes with batch statistics (see update_running_stats); infer mode uses the
/// running estimates and no masking.
inline ForwardCache forward(const DedModel& model, const Matrix& x, Mode mode, double input_mask_prob, Rng& rng) {
  require(x.rows() == static_cast<Eigen::Index>(model.input_size()), ErrorCode::ShapeMismatch,
          "input length does not match the model");
  require(x.cols() >= 1, ErrorCode::ShapeMismatch, "empty batch");
  const int k = model.depth();
  ForwardCache cache;
  cache.model_version = model.version;

  Matrix a = x;
  if (mode == Mode::Train && input_mask_prob > 0.0) {
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        if (uniform01(rng) < input_mask_prob) a(i, j) = 0.0;
  }

  for (int t = 0; t < model.layer_count(); ++t) {
    cache.inputs.push_back(a);
    Matrix pre;
    if (t < k) {
      pre.noalias() = model.params.W(t) * a;
      pre.colwise() += model.params.b_enc(t).col(0);
    } else {
      const int l = 2 * k - 1 - t;
      pre.noalias() = model.params.W(l).transpose() * a;
      pre.colwise() += model.params.b_dec(l).col(0);
    }
    if (t == model.layer_count() - 1) {
      cache.z = pre.unaryExpr([](double v) { return sigmoid(v); });
      break;
    }
    Vector mean, var;
    if (mode == Mode::Train) {
      mean = pre.rowwise().mean();
      var = (pre.colwise() - mean).array().square().rowwise().mean();
      cache.batch_mean.push_back(mean);
      cache.batch_var.push_back(var);
    } else {
      mean = model.running_mean[t];
      var = model.running_var[t];
    }
    Vector inv_std = (var.array() + model.bn_eps).rsqrt();
    Matrix xhat = (pre.colwise() - mean).array().colwise() * inv_std.array();
    Matrix y = (xhat.array().colwise() * model.params.gamma(t).col(0).array()).colwise() +
               model.params.beta(t).col(0).array();
    a = y.cwiseMax(0.0);
    cache.xhat.push_back(std::move(xhat));
    cache.bn_out.push_back(std::move(y));
    cache.inv_std.push_back(std::move(inv_std));
  }
  cache.valid = true;
  return cache;
}

/// Exponential moving average of the batch statistics recorded by a train-mode forward.
inline void update_running_stats(DedModel& model, const ForwardCache& cache) {
  require(cache.batch_mean.size() == static_cast<std::size_t>(model.bn_count()), ErrorCode::StaleCache,
          "cache holds no batch statistics");
  const double m = model.bn_momentum;
  for (int t = 0; t < model.bn_count(); ++t) {
    model.running_mean[t] = m * model.running_mean[t] + (1.0 - m) * cache.batch_mean[t];
    model.running_var[t] = m * model.running_var[t] + (1.0 - m) * cache.batch_var[t];
  }
}

inline Matrix predict(const DedModel& model, const Matrix& x) {
  Rng unused(0);
  return forward(model, x, Mode::Infer, 0.0, unused).z;
}

constexpr double kProbClamp = 1e-7;

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;    // -mean log-likelihood
  double dice = 0.0;  // mean WDICE over the batch
  double swr = 0.0;   // unscaled penalty
  std::size_t clamp_events = 0;
};

/// Per-sample weighted DICE, 2 sum w^2 x y / (sum w^2 x^2 + sum w^2 y^2).
inline double weighted_dice(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                            const Eigen::Ref<const Vector>& w) {
  const Vector w2 = w.array().square();
  const double num = 2.0 * (w2.array() * x.array() * y.array()).sum();
  const double den = (w2.array() * x.array().square()).sum() + (w2.array() * y.array().square()).sum();
  return den > 0.0 ? num / den : 1.0;
}

/// Squared forward differences of every W1 row (one hidden unit's weights) on the grid,
/// summed over rows, axes and voxels; no wraparound.
inline double swr_penalty(const Matrix& first_layer, const GridSpec& grid, Matrix* grad = nullptr, double scale = 1.0) {
  require(first_layer.cols() == static_cast<Eigen::Index>(grid.size()), ErrorCode::ShapeMismatch,
          "first layer width does not match the grid");
  double total = 0.0;
  for (int z = 0; z < grid.dims[2]; ++z)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int x = 0; x < grid.dims[0]; ++x) {
        const Index3 i{x, y, z};
        const auto v = static_cast<Eigen::Index>(grid.linear(i));
        for (int axis = 0; axis < 3; ++axis) {
          Index3 j = i;
          ++j[axis];
          if (j[axis] >= grid.dims[axis]) continue;
          const auto u = static_cast<Eigen::Index>(grid.linear(j));
          const Vector diff = first_layer.col(u) - first_layer.col(v);
          total += diff.squaredNorm();
          if (grad) {
            grad->col(u) += (2.0 * scale) * diff;
            grad->col(v) -= (2.0 * scale) * diff;
          }
        }
      }
  return total;
}

inline double swr_penalty(const DedModel& model) { return swr_penalty(model.params.W(0), model.grid); }

/// Data terms and dL/dz. `weights` may be empty (all ones).
inline LossBreakdown data_loss(const Matrix& z, const Matrix& target, const Matrix& weights, const LossConfig& cfg,
                               Matrix* dz = nullptr) {
  require(z.rows() == target.rows() && z.cols() == target.cols(), ErrorCode::ShapeMismatch,
          "prediction and target shapes differ");
  require(weights.size() == 0 || (weights.rows() == z.rows() && weights.cols() == z.cols()), ErrorCode::ShapeMismatch,
          "weight mask shape differs from prediction");
  LossBreakdown out;
  const double n = static_cast<double>(z.size());
  const double batch = static_cast<double>(z.cols());
  Matrix zc = z;
  for (Eigen::Index i = 0; i < zc.size(); ++i) {
    double& v = zc.data()[i];
    if (v < kProbClamp || v > 1.0 - kProbClamp) {
      ++out.clamp_events;
      v = std::clamp(v, kProbClamp, 1.0 - kProbClamp);
    }
  }
  const auto& x = target.array();
  out.ce = -(x * zc.array().log() + (1.0 - x) * (1.0 - zc.array()).log()).sum() / n;
  if (dz) {
    *dz = cfg.ce_weight * (-(x / zc.array() - (1.0 - x) / (1.0 - zc.array())) / n).matrix();
  }
  double dice_sum = 0.0;
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    const Vector w2 = weights.size() ? Vector(weights.col(b).array().square()) : Vector::Ones(z.rows());
    const auto xb = target.col(b).array();
    const auto yb = zc.col(b).array();
    const double num = 2.0 * (w2.array() * xb * yb).sum();
    const double den = (w2.array() * xb.square()).sum() + (w2.array() * yb.square()).sum();
    dice_sum += num / den;
    if (dz) {
      // d(-dice)/dy_i = -(2 w_i^2 x_i den - num 2 w_i^2 y_i) / den^2
      const Vector g = -((2.0 * w2.array() * xb) * den - num * 2.0 * w2.array() * yb) / (den * den);
      dz->col(b) += (cfg.dice_weight / batch) * g;
    }
  }
  out.dice = dice_sum / batch;
  if (dz) {
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double v = z.data()[i];
      if (v < kProbClamp || v > 1.0 - kProbClamp) dz->data()[i] = 0.0;
    }
  }
  out.total = cfg.ce_weight * out.ce - cfg.dice_weight * out.dice;
  return out;
}

/// Full objective: ce_weight * (-CE) - dice_weight * WDICE + lambda * SWR.
inline LossBreakdown loss(const Matrix& z, const Matrix& target, const Matrix& weights, const LossConfig& cfg,
                          const DedModel& model) {
  LossBreakdown out = data_loss(z, target, weights, cfg);
  out.swr = swr_penalty(model);
  out.total += cfg.lambda_swr * out.swr;
  return out;
}

/// Analytic gradient of `loss` for the batch that produced `cache`.
inline ParamSet backward(const DedModel& model, const ForwardCache& cache, const Matrix& target, const Matrix& weights,
                         const LossConfig& cfg, LossBreakdown* breakdown = nullptr) {
  require(cache.valid && cache.model_version == model.version, ErrorCode::StaleCache,
          "forward cache does not belong to the current parameters");
  require(cache.xhat.size() == static_cast<std::size_t>(model.bn_count()) &&
              cache.batch_mean.size() == cache.xhat.size(),
          ErrorCode::StaleCache, "cache is not from a train-mode forward of this model");
  const int k = model.depth();
  const double batch = static_cast<double>(cache.z.cols());
  ParamSet grad = ParamSet::zeros_like(model.params);

  Matrix dz;
  LossBreakdown lb = data_loss(cache.z, target, weights, cfg, &dz);
  if (breakdown) {
    lb.swr = swr_penalty(model);
    lb.total += cfg.lambda_swr * lb.swr;
    *breakdown = lb;
  }
  Matrix dpre = dz.array() * cache.z.array() * (1.0 - cache.z.array());

  for (int t = model.layer_count() - 1; t >= 0; --t) {
    const Matrix& in = cache.inputs[t];
    Matrix da;
    if (t < k) {
      grad.W(t).noalias() += dpre * in.transpose();
      grad.b_enc(t) += dpre.rowwise().sum();
      if (t > 0) da.noalias() = model.params.W(t).transpose() * dpre;
    } else {
      const int l = 2 * k - 1 - t;
      grad.W(l).noalias() += in * dpre.transpose();
      grad.b_dec(l) += dpre.rowwise().sum();
      da.noalias() = model.params.W(l) * dpre;
    }
    if (t == 0) break;
    // Back through ReLU and batch norm of layer t-1.
    const int p = t - 1;
    const Matrix dy = (cache.bn_out[p].array() > 0.0).select(da, 0.0);
    const Matrix& xhat = cache.xhat[p];
    grad.gamma(p) += (dy.array() * xhat.array()).rowwise().sum().matrix();
    grad.beta(p) += dy.rowwise().sum();
    const Matrix dxhat = dy.array().colwise() * model.params.gamma(p).col(0).array();
    const Vector sum_dxhat = dxhat.rowwise().sum();
    const Vector sum_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum();
    Matrix next = (batch * dxhat.array() - xhat.array().colwise() * sum_dxhat_xhat.array()).colwise() -
                  sum_dxhat.array();
    next = next.array().colwise() * (cache.inv_std[p].array() / batch);
    dpre = std::move(next);
  }

  if (cfg.lambda_swr > 0.0) swr_penalty(model.params.W(0), model.grid, &grad.W(0), cfg.lambda_swr);
  return grad;
}

struct AdamState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  ParamSet m, v;

  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig c)
      : cfg(c), m(ParamSet::zeros_like(params)), v(ParamSet::zeros_like(params)) {}
};

/// Bias-corrected Adam update applied in place.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
  require(params.tensors.size() == grads.tensors.size() && params.tensors.size() == state.m.tensors.size(),
          ErrorCode::ShapeMismatch, "parameter, gradient and moment sets differ");
  ++state.step;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    const auto& g = grads.tensors[i];
    auto& m = state.m.tensors[i];
    auto& v = state.v.tensors[i];
    require(p.rows() == g.rows() && p.cols() == g.cols() && m.rows() == p.rows() && m.cols() == p.cols(),
            ErrorCode::ShapeMismatch, "tensor shapes differ");
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

inline void adam_step(DedModel& model, const ParamSet& grads, AdamState& state) {
  adam_step(model.params, grads, state);
  ++model.version;
}

struct TrainingPair {
  OccupancyVolume input;   // path volume
  OccupancyVolume target;  // ground-truth shape
};

struct TrainConfig {
  std::vector<int> hidden{64, 64};
  int epochs = 50;
  int batch_size = 20;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  double swr = 0.0;
  std::optional<double> validation_dice;
  std::size_t clamp_events = 0;
};

struct TrainResult {
  DedModel model;
  std::vector<EpochLog> log;
};

inline Matrix stack_volumes(const std::vector<const OccupancyVolume*>& vols) {
  Matrix m(vols.empty() ? 0 : static_cast<Eigen::Index>(vols.front()->data.size()),
           static_cast<Eigen::Index>(vols.size()));
  for (std::size_t j = 0; j < vols.size(); ++j)
    for (std::size_t i = 0; i < vols[j]->data.size(); ++i)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vols[j]->data[i];
  return m;
}

/// Hard DICE of the thresholded prediction (>= 0.5) against a binary target, per column.
inline double mean_threshold_dice(const Matrix& z, const Matrix& target) {
  double sum = 0.0;
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    double inter = 0.0, a = 0.0, t = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double p = z(i, b) >= 0.5 ? 1.0 : 0.0;
      inter += p * target(i, b);
      a += p;
      t += target(i, b);
    }
    sum += (a + t) > 0.0 ? 2.0 * inter / (a + t) : 1.0;
  }
  return z.cols() ? sum / static_cast<double>(z.cols()) : 0.0;
}

/// Mini-batch Adam training. Shuffles and input masks come from streams derived from
/// cfg.seed, and batches are processed in a fixed order, so a seed fixes the result.
inline TrainResult train(const std::vector<TrainingPair>& data, const TrainConfig& cfg, const LossConfig& loss_cfg,
                         const std::vector<TrainingPair>& validation = {}) {
  require(!data.empty(), ErrorCode::EmptyDataset, "training set is empty");
  loss_cfg.validate();
  require(cfg.epochs >= 0 && cfg.batch_size >= 1, ErrorCode::InvalidArgument, "invalid epochs or batch size");
  const GridSpec grid = data.front().target.grid;
  for (const auto& p : data) {
    require_same_grid(grid, p.input.grid);
    require_same_grid(grid, p.target.grid);
  }
  for (const auto& p : validation) {
    require_same_grid(grid, p.input.grid);
    require_same_grid(grid, p.target.grid);
  }

  TrainResult result{make_model(grid, cfg.hidden, mix_seed(cfg.seed, 0)), {}};
  DedModel& model = result.model;
  if (cfg.epochs == 0) return result;

  std::vector<const OccupancyVolume*> inputs, targets;
  for (const auto& p : data) {
    inputs.push_back(&p.input);
    targets.push_back(&p.target);
  }
  const Matrix x_all = stack_volumes(inputs);
  const Matrix y_all = stack_volumes(targets);
  Matrix w_all;
  if (loss_cfg.use_boundary_mask) {
    w_all.resize(y_all.rows(), y_all.cols());
    for (std::size_t j = 0; j < data.size(); ++j) {
      const ScalarField w = boundary_weight_mask(data[j].target, loss_cfg.mask_alpha, loss_cfg.mask_sigma);
      w_all.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Vector>(w.data.data(), static_cast<Eigen::Index>(w.data.size()));
    }
  }
  Matrix xv, yv;
  if (!validation.empty()) {
    std::vector<const OccupancyVolume*> vi, vt;
    for (const auto& p : validation) {
      vi.push_back(&p.input);
      vt.push_back(&p.target);
    }
    xv = stack_volumes(vi);
    yv = stack_volumes(vt);
  }

  AdamState adam(model.params, cfg.adam);
  Rng mask_rng(mix_seed(cfg.seed, 1));
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size))
      batches.emplace_back(start, std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)));
    // A trailing single-sample batch joins the previous one (batch norm needs spread).
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    EpochLog log;
    log.epoch = epoch + 1;
    double weight_sum = 0.0;
    for (const auto& [lo, hi] : batches) {
      const auto bsz = static_cast<Eigen::Index>(hi - lo);
      Matrix xb(x_all.rows(), bsz), yb(y_all.rows(), bsz), wb;
      if (w_all.size()) wb.resize(w_all.rows(), bsz);
      for (Eigen::Index j = 0; j < bsz; ++j) {
        const Eigen::Index src = order[lo + static_cast<std::size_t>(j)];
        xb.col(j) = x_all.col(src);
        yb.col(j) = y_all.col(src);
        if (w_all.size()) wb.col(j) = w_all.col(src);
      }
      const ForwardCache cache = forward(model, xb, Mode::Train, loss_cfg.input_mask_prob, mask_rng);
      LossBreakdown lb;
      const ParamSet grads = backward(model, cache, yb, wb, loss_cfg, &lb);
      update_running_stats(model, cache);
      adam_step(model, grads, adam);
      const double w = static_cast<double>(bsz);
      log.loss += w * lb.total;
      log.ce += w * lb.ce;
      log.dice += w * lb.dice;
      log.swr += w * lb.swr;
      log.clamp_events += lb.clamp_events;
      weight_sum += w;
    }
    if (weight_sum > 0.0) {
      log.loss /= weight_sum;
      log.ce /= weight_sum;
      log.dice /= weight_sum;
      log.swr /= weight_sum;
    }
    if (xv.size()) log.validation_dice = mean_threshold_dice(predict(model, xv), yv);
    result.log.push_back(log);
  }
  return result;
}

struct Reconstruction {
  ScalarField probability;
  OccupancyVolume binary;
};

inline Reconstruction infer(const DedModel& model, const OccupancyVolume& path_volume) {
  require_same_grid(model.grid, path_volume.grid);
  const Matrix z = predict(model, stack_volumes({&path_volume}));
  Reconstruction r{ScalarField(model.grid), OccupancyVolume(model.grid)};
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    r.probability.data[static_cast<std::size_t>(i)] = z(i, 0);
    r.binary.data[static_cast<std::size_t>(i)] = z(i, 0) >= 0.5 ? 1 : 0;
  }
  return r;
}

inline std::vector<Reconstruction> infer_batch(const DedModel& model, const std::vector<OccupancyVolume>& inputs) {
  std::vector<const OccupancyVolume*> ptrs;
  for (const auto& v : inputs) {
    require_same_grid(model.grid, v.grid);
    ptrs.push_back(&v);
  }
  std::vector<Reconstruction> out;
  if (ptrs.empty()) return out;
  const Matrix z = predict(model, stack_volumes(ptrs));
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    Reconstruction r{ScalarField(model.grid), OccupancyVolume(model.grid)};
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      r.probability.data[static_cast<std::size_t>(i)] = z(i, b);
      r.binary.data[static_cast<std::size_t>(i)] = z(i, b) >= 0.5 ? 1 : 0;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace larecon::ded
