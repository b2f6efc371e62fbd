#pragma once

#include <optional>
#include <vector>

#include "geoclr/model.hpp"
#include "geoclr/tensor.hpp"

namespace geoclr {

struct LossConfig {
  /// Softmax temperature applied to dot-product similarities.
  double temperature = 0.2;
  double alpha = 1.0;  // contrastive weight
  double beta = 1.0;   // geo weight
  int k = 100;         // geo-cluster count

  void validate() const;
};

struct SampleLosses {
  Vector per_sample;
  double mean = 0.0;
  /// Gradient of `mean` w.r.t. the first argument (z or logits).
  Matrix grad;
};

/// Per-sample InfoNCE
///   -log( e^{z.z+/t} / (e^{z.z+/t} + sum_j e^{z.k_j/t}) )
/// with max-subtraction. Positives and negatives are constants. The same
/// routine serves the temporal variant; only the origin of z_pos differs.
SampleLosses info_nce(const Matrix& z, const Matrix& z_pos, const Matrix& negatives, double temperature);

/// -log softmax(logits)[label] per row; labels are 0-based cluster ids.
SampleLosses geo_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

/// alpha * contrastive + beta * geo.
double combined_loss(double contrastive, double geo, double alpha, double beta);

/// One pretraining step's inputs: aligned query/key views, one row each, and
/// the head labels (geo-cluster ids, or classes for the supervised baseline).
struct PretrainBatch {
  Matrix query;
  Matrix key;
  std::vector<int> labels;
};

struct Objective {
  LossConfig loss;
  bool contrastive = true;
  bool head = false;
  FeatureSource head_input = FeatureSource::Projection;
};

struct LossGradients {
  double contrastive = 0.0;
  double geo = 0.0;
  double total = 0.0;
  /// Number of negatives the contrastive term used (queue fill).
  int negatives = 0;
  EncoderParams grad_query;
  std::optional<Linear> grad_head;
  /// Key embeddings (detached), to be enqueued after the step.
  Matrix keys;
};

/// Exact gradients of the batch-mean combined loss w.r.t. the query encoder
/// and the head. The key encoder and queue entries are treated as constants.
/// The contrastive term is skipped (contributes 0) while the queue is empty.
LossGradients loss_gradients(const MoCoState& state, const PretrainBatch& batch, const Objective& objective);

}  // namespace geoclr
