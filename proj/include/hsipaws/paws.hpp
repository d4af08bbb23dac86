#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hsipaws/augment.hpp"
#include "hsipaws/encoder.hpp"
#include "hsipaws/hsi_data.hpp"
#include "hsipaws/layers.hpp"
#include "hsipaws/optim.hpp"
#include "hsipaws/tensor.hpp"

namespace hsipaws {

struct PawsHyper {
  double tau = 0.25;         // softmax temperature of the SNN classifier
  double sharpen_T = 0.10;   // sharpening temperature
  int pairs_per_batch = 64;
  double epsilon = 1e-12;    // log guard for one-hot rows

  void validate() const {
    if (tau <= 0.0) throw ConfigError("paws: tau must be > 0");
    if (sharpen_T <= 0.0 || sharpen_T > 1.0) throw ConfigError("paws: T must be in (0,1]");
    if (pairs_per_batch <= 0) throw ConfigError("paws: pairs_per_batch must be positive");
    if (epsilon <= 0.0) throw ConfigError("paws: epsilon must be positive");
  }
};

namespace detail {

template <typename S>
void require_simplex_rows(const Tensor<S>& p, double tol, const char* what) {
  const auto m = p.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m.row(r).sum() - S(1)) > S(tol) || m.row(r).minCoeff() < S(-tol))
      throw DataError(std::string(what) + ": row " + std::to_string(r) + " is off the simplex");
  }
}

template <typename S>
void require_one_hot_rows(const Tensor<S>& y) {
  const auto m = y.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m.row(r).sum() - S(1)) > S(1e-9) || std::abs(m.row(r).maxCoeff() - S(1)) > S(1e-9) ||
        m.row(r).minCoeff() < S(0))
      throw DataError("snn_predict: support label row " + std::to_string(r) + " is not one-hot");
  }
}

}  // namespace detail

template <typename S>
struct SnnTrace {
  Tensor<S> z_hat;     // normalized query embeddings
  Tensor<S> l_hat;     // normalized support embeddings
  Tensor<S> attn;      // softmax similarity weights [m, N_s]
};

// Soft nearest neighbour classifier:
//   p_i = softmax_tau(z_hat_i . l_hat^T) * Y_L
// Embedding rows are L2-normalized internally (cosine similarity).
template <typename S>
Tensor<S> snn_predict(const Tensor<S>& z, const Tensor<S>& support_z, const Tensor<S>& y_l, S tau,
                      SnnTrace<S>* trace = nullptr) {
  if (tau <= S(0)) throw ConfigError("snn_predict: tau must be > 0");
  if (z.rank() != 2 || support_z.rank() != 2 || y_l.rank() != 2)
    throw ShapeError("snn_predict: expected rank-2 tensors");
  if (z.dim(1) != support_z.dim(1)) throw ShapeError("snn_predict: embedding dimension mismatch");
  if (support_z.dim(0) != y_l.dim(0)) throw ShapeError("snn_predict: support/label row mismatch");
  detail::require_one_hot_rows(y_l);

  Tensor<S> z_hat = l2_normalize_rows(z);
  Tensor<S> l_hat = l2_normalize_rows(support_z);
  Tensor<S> logits({z.dim(0), support_z.dim(0)});
  logits.matrix().noalias() = z_hat.matrix() * l_hat.matrix().transpose();
  Tensor<S> attn = softmax_rows(logits, tau);
  Tensor<S> probs({z.dim(0), y_l.dim(1)});
  probs.matrix().noalias() = attn.matrix() * y_l.matrix();
  if (trace) {
    trace->z_hat = std::move(z_hat);
    trace->l_hat = std::move(l_hat);
    trace->attn = std::move(attn);
  }
  return probs;
}

template <typename S>
struct SnnGrads {
  Tensor<S> z;
  Tensor<S> support_z;
};

template <typename S>
SnnGrads<S> snn_predict_backward(const Tensor<S>& z, const Tensor<S>& support_z,
                                 const Tensor<S>& y_l, S tau, const SnnTrace<S>& trace,
                                 const Tensor<S>& upstream) {
  Tensor<S> d_attn({trace.attn.dim(0), trace.attn.dim(1)});
  d_attn.matrix().noalias() = upstream.matrix() * y_l.matrix().transpose();
  Tensor<S> d_logits = softmax_rows_backward(trace.attn, d_attn, tau);
  Tensor<S> d_zhat({z.dim(0), z.dim(1)});
  d_zhat.matrix().noalias() = d_logits.matrix() * trace.l_hat.matrix();
  Tensor<S> d_lhat({support_z.dim(0), support_z.dim(1)});
  d_lhat.matrix().noalias() = d_logits.matrix().transpose() * trace.z_hat.matrix();
  return SnnGrads<S>{l2_normalize_rows_backward(z, d_zhat),
                     l2_normalize_rows_backward(support_z, d_lhat)};
}

// Sharpening: q_k = p_k^(1/T) / sum_t p_t^(1/T). T=1 is the identity map and
// argmax/ranking are always preserved.
template <typename S>
Tensor<S> sharpen_rows(const Tensor<S>& p, S T) {
  if (T <= S(0)) throw ConfigError("sharpen: T must be > 0");
  Tensor<S> out(p.shape());
  const auto x = p.matrix();
  auto y = out.matrix();
  const S inv_t = S(1) / T;
  for (Index r = 0; r < x.rows(); ++r) {
    y.row(r) = x.row(r).array().max(S(0)).pow(inv_t);
    y.row(r) /= y.row(r).sum();
  }
  return out;
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> sharpen(const Eigen::Matrix<S, Eigen::Dynamic, 1>& p, S T) {
  if (T <= S(0)) throw ConfigError("sharpen: T must be > 0");
  Eigen::Matrix<S, Eigen::Dynamic, 1> q = p.array().max(S(0)).pow(S(1) / T);
  q /= q.sum();
  return q;
}

// Elementwise mean of all 2n sharpened prediction vectors.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> mean_prediction(
    const std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>>& sharp_anchor,
    const std::vector<Eigen::Matrix<S, Eigen::Dynamic, 1>>& sharp_positive) {
  if (sharp_anchor.empty() || sharp_anchor.size() != sharp_positive.size())
    throw ConfigError("mean_prediction: need equal-length nonempty lists");
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean =
      Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(sharp_anchor.front().size());
  for (const auto& v : sharp_anchor) mean += v;
  for (const auto& v : sharp_positive) mean += v;
  return mean / S(2 * sharp_anchor.size());
}

// Loss with the sharpened targets supplied as constants. This is the exact
// function the analytic gradients differentiate: the targets (and the mean
// prediction built from them) never receive gradients.
template <typename S>
double paws_loss_frozen(const Tensor<S>& p_anchor, const Tensor<S>& p_positive,
                        const Tensor<S>& target_anchor, const Tensor<S>& target_positive,
                        double epsilon) {
  const Index n = p_anchor.dim(0);
  const Index k = p_anchor.dim(1);
  const auto pa = p_anchor.matrix();
  const auto pp = p_positive.matrix();
  const auto ta = target_anchor.matrix();
  const auto tp = target_positive.matrix();
  double cross = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) {
      cross -= static_cast<double>(ta(i, j)) * std::log(static_cast<double>(pp(i, j)) + epsilon);
      cross -= static_cast<double>(tp(i, j)) * std::log(static_cast<double>(pa(i, j)) + epsilon);
    }
  }
  cross /= static_cast<double>(2 * n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean =
      (ta.colwise().sum() + tp.colwise().sum()).transpose() / S(2 * n);
  double mean_entropy = 0.0;
  for (Index j = 0; j < k; ++j)
    mean_entropy -= static_cast<double>(mean[j]) * std::log(static_cast<double>(mean[j]) + epsilon);
  return cross - mean_entropy;
}

template <typename S>
struct PawsLossResult {
  double loss = 0.0;
  Tensor<S> grad_anchor;
  Tensor<S> grad_positive;
};

// Symmetric cross-entropy between sharpened targets and the opposite view's
// prediction, minus the entropy of the mean sharpened prediction. Gradients
// treat every sharpened term as a constant (stop-gradient).
template <typename S>
PawsLossResult<S> paws_loss(const Tensor<S>& p_anchor, const Tensor<S>& p_positive,
                            const PawsHyper& hyper) {
  hyper.validate();
  if (!p_anchor.same_shape(p_positive) || p_anchor.rank() != 2)
    throw ShapeError("paws_loss: prediction shapes must match and be rank-2");
  if (p_anchor.dim(0) < 1) throw ConfigError("paws_loss: need at least one pair");
  detail::require_simplex_rows(p_anchor, 1e-6, "paws_loss anchor");
  detail::require_simplex_rows(p_positive, 1e-6, "paws_loss positive");

  const Tensor<S> t_anchor = sharpen_rows(p_anchor, S(hyper.sharpen_T));
  const Tensor<S> t_positive = sharpen_rows(p_positive, S(hyper.sharpen_T));

  PawsLossResult<S> result;
  result.loss = paws_loss_frozen(p_anchor, p_positive, t_anchor, t_positive, hyper.epsilon);

  const Index n = p_anchor.dim(0);
  const S scale = S(1) / S(2 * n);
  result.grad_anchor = Tensor<S>(p_anchor.shape());
  result.grad_positive = Tensor<S>(p_positive.shape());
  result.grad_anchor.storage() =
      -scale * t_positive.storage() / (p_anchor.storage() + S(hyper.epsilon));
  result.grad_positive.storage() =
      -scale * t_anchor.storage() / (p_positive.storage() + S(hyper.epsilon));
  return result;
}

// One pretraining update: augment both views, encode anchors, positives and
// the (by default unaugmented) support patches, pseudo-label both views
// against the same support embeddings, apply the consistency loss, and take
// one optimizer step. Returns the batch loss.
double pretrain_step(const EncoderConfig& cfg, ParamStored& params, const HsiCube& cube,
                     std::span<const ViewPair> pairs, const SupportSet& support,
                     const AugmentPolicy& policy, const PawsHyper& hyper, OptimizerStated& opt,
                     std::uint64_t seed);

// Batch assembly helper: stacks same-shaped patches into [n,p,p,B].
Tensord stack_patches(std::span<const Patch> patches);

}  // namespace hsipaws
