#include "geoclr/loss.hpp"

#include <cmath>
#include <string>

#include "geoclr/errors.hpp"

namespace geoclr {

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("alpha and beta cannot both be zero");
  if (k < 1) throw ConfigError("K must be >= 1");
}

SampleLosses info_nce(const Matrix& z, const Matrix& z_pos, const Matrix& negatives, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (z.rows() != z_pos.rows() || z.cols() != z_pos.cols()) throw ShapeError("query and positive batches differ in shape");
  if (negatives.rows() < 1) throw ShapeError("InfoNCE needs at least one negative");
  if (negatives.cols() != z.cols()) throw ShapeError("negatives have the wrong dimension");
  if (!z.allFinite() || !z_pos.allFinite() || !negatives.allFinite())
    throw NumericError("non-finite input to InfoNCE");

  const Eigen::Index n = z.rows();
  const Vector pos = z.cwiseProduct(z_pos).rowwise().sum() / temperature;
  Matrix neg = (z * negatives.transpose()) / temperature;

  SampleLosses out;
  out.per_sample.resize(n);
  // Softmax weights over [positive, negatives], reused for the gradient.
  Vector p_pos(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double m = std::max(pos[r], neg.row(r).maxCoeff());
    const double e_pos = std::exp(pos[r] - m);
    auto e_neg = (neg.row(r).array() - m).exp();
    const double denom = e_pos + e_neg.sum();
    out.per_sample[r] = m + std::log(denom) - pos[r];
    p_pos[r] = e_pos / denom;
    neg.row(r) = e_neg / denom;
  }
  out.mean = out.per_sample.mean();
  if (!std::isfinite(out.mean)) throw NumericError("InfoNCE produced a non-finite value");

  // dL_r/dz_r = ((p_pos - 1) z+_r + sum_j p_j k_j) / t, averaged over rows
  out.grad = ((p_pos.array() - 1.0).matrix().asDiagonal() * z_pos + neg * negatives) /
             (temperature * static_cast<double>(n));
  return out;
}

SampleLosses geo_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index k = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("one label per logits row is required");
  if (!logits.allFinite()) throw NumericError("non-finite logits");
  SampleLosses out;
  out.per_sample.resize(n);
  out.grad.resize(n, k);
  for (Eigen::Index r = 0; r < n; ++r) {
    const int c = labels[static_cast<std::size_t>(r)];
    if (c < 0 || c >= k)
      throw ValidationError("label " + std::to_string(c) + " outside [0, " + std::to_string(k) + ")");
    const double m = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - m).exp();
    const double denom = e.sum();
    out.per_sample[r] = m + std::log(denom) - logits(r, c);
    out.grad.row(r) = e / denom;
    out.grad(r, c) -= 1.0;
  }
  out.grad /= static_cast<double>(n);
  out.mean = out.per_sample.mean();
  return out;
}

double combined_loss(double contrastive, double geo, double alpha, double beta) {
  if (!std::isfinite(contrastive) || !std::isfinite(geo)) throw NumericError("combined loss of non-finite components");
  return alpha * contrastive + beta * geo;
}

LossGradients loss_gradients(const MoCoState& state, const PretrainBatch& batch, const Objective& objective) {
  const LossConfig& cfg = objective.loss;
  const bool need_projection = objective.contrastive || objective.head_input == FeatureSource::Projection;
  const EncoderTrace trace = encoder_forward(state.query, batch.query, need_projection);

  LossGradients out;
  Matrix grad_z;
  Matrix grad_features;

  if (objective.contrastive) {
    out.keys = encode(state.key, batch.key);
    if (!state.queue.empty()) {
      const Matrix negatives = state.queue.snapshot();
      const SampleLosses nce = info_nce(trace.z, out.keys, negatives, cfg.temperature);
      out.contrastive = nce.mean;
      out.negatives = static_cast<int>(negatives.rows());
      grad_z = cfg.alpha * nce.grad;
    }
  }

  if (objective.head) {
    if (!state.head) throw ConfigError("objective uses a head but the state has none");
    const Linear& head = *state.head;
    const Matrix features = select_features(trace, objective.head_input);
    const SampleLosses ce = geo_cross_entropy(geo_logits(head, features), batch.labels);
    out.geo = ce.mean;
    const Matrix grad_logits = cfg.beta * ce.grad;
    Linear gh;
    gh.weight = features.transpose() * grad_logits;
    gh.bias = grad_logits.colwise().sum();
    out.grad_head = std::move(gh);
    Matrix upstream = grad_logits * head.weight.transpose();
    Matrix& target = objective.head_input == FeatureSource::Projection ? grad_z : grad_features;
    if (target.size() == 0) {
      target = std::move(upstream);
    } else {
      target += upstream;
    }
  }

  if (!std::isfinite(out.contrastive)) throw NumericError("contrastive term overflowed");
  if (!std::isfinite(out.geo)) throw NumericError("geo term overflowed");
  out.total = combined_loss(out.contrastive, out.geo, objective.contrastive ? cfg.alpha : 0.0,
                            objective.head ? cfg.beta : 0.0);
  out.grad_query = encoder_backward(state.query, trace, grad_z.size() ? &grad_z : nullptr,
                                    grad_features.size() ? &grad_features : nullptr);
  return out;
}

}  // namespace geoclr
