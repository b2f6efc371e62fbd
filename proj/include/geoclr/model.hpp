#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geoclr/image.hpp"
#include "geoclr/queue.hpp"
#include "geoclr/rng.hpp"
#include "geoclr/tensor.hpp"

namespace geoclr {

/// Which representation a linear head (geo head, probe, classifier) reads.
enum class FeatureSource {
  Backbone,    // pre-projection backbone activations
  Projection,  // normalized embedding z
};

std::string to_string(FeatureSource source);
FeatureSource feature_source_from_string(const std::string& text);

struct EncoderConfig {
  ImageGeometry geometry{32, 32, 3};
  /// One convolution block (3x3, stride 2, padding 1, ReLU) per entry, giving
  /// its output channels. The last block's maps are averaged over space.
  std::vector<int> conv_channels{};
  /// One fully connected block (affine + ReLU) per entry, after pooling.
  std::vector<int> hidden{256, 128};
  int embed_dim = 64;
  /// 2: affine + ReLU + affine; 1: a single affine map.
  int projection_depth = 2;

  int input_dim() const { return static_cast<int>(geometry.size()); }
  int feature_dim() const;
  int width(FeatureSource source) const { return source == FeatureSource::Backbone ? feature_dim() : embed_dim; }
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

/// y = x * weight + bias, weight is (in x out), bias is (1 x out).
struct Linear {
  Matrix weight;
  Matrix bias;

  int in_dim() const { return static_cast<int>(weight.rows()); }
  int out_dim() const { return static_cast<int>(weight.cols()); }
  bool operator==(const Linear& o) const { return weight == o.weight && bias == o.bias; }
};

/// Convolution weights are stored as Linear with weight (9 * c_in x c_out),
/// rows ordered (ky, kx, c_in).
struct EncoderParams {
  ImageGeometry input;
  std::vector<Linear> conv;
  std::vector<Linear> backbone;
  std::vector<Linear> projection;

  bool operator==(const EncoderParams&) const = default;
};

using GeoHeadParams = Linear;

/// Named views of every parameter array, in a fixed order.
std::vector<std::pair<std::string, Matrix*>> named_arrays(EncoderParams& params, const std::string& prefix);
std::vector<std::pair<std::string, const Matrix*>> named_arrays(const EncoderParams& params, const std::string& prefix);
std::vector<std::pair<std::string, Matrix*>> named_arrays(Linear& head, const std::string& prefix);

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);
Linear init_linear(int in_dim, int out_dim, Rng& rng);
/// Same shapes as `like`, all zeros.
EncoderParams zeros_like(const EncoderParams& like);
Linear zeros_like(const Linear& like);
bool same_shapes(const EncoderParams& a, const EncoderParams& b);

/// Images flattened to one row each (HWC order), values as stored.
Matrix to_batch(const std::vector<const Image*>& images);

/// Activations kept from a forward pass for the backward pass.
struct EncoderTrace {
  /// Unfolded input patches and pre-activations of each convolution block.
  std::vector<Matrix> conv_cols;
  std::vector<Matrix> conv_pre;
  std::vector<ImageGeometry> conv_in;
  /// Input to each affine layer, backbone first then projection.
  std::vector<Matrix> inputs;
  /// Pre-activation output of each layer followed by ReLU.
  std::vector<Matrix> pre;
  Matrix features;
  Matrix u;
  Vector norms;
  Matrix z;
  bool has_projection = false;
};

/// Full forward pass. With `with_projection` false only `features` is
/// computed. Throws ShapeError on geometry mismatch and NumericError naming
/// the layer on non-finite activations.
EncoderTrace encoder_forward(const EncoderParams& params, const Matrix& batch, bool with_projection = true);

/// Unit-norm embeddings, one row per input row.
Matrix encode(const EncoderParams& params, const Matrix& batch);

/// Pre-projection backbone activations.
Matrix backbone_features(const EncoderParams& params, const Matrix& batch);

Matrix select_features(const EncoderTrace& trace, FeatureSource source);

/// Backpropagates upstream gradients w.r.t. z and/or the backbone features
/// (either may be null) to every encoder parameter.
EncoderParams encoder_backward(const EncoderParams& params, const EncoderTrace& trace, const Matrix* grad_z,
                               const Matrix* grad_features);

/// Affine map z * W + b.
Matrix geo_logits(const GeoHeadParams& head, const Matrix& z);

/// theta_k <- m * theta_k + (1 - m) * theta_q, element-wise on every array.
void momentum_update(EncoderParams& key, const EncoderParams& query, double m);

/// Everything the pretraining loop mutates. The key encoder is only ever
/// written by momentum_update; the head is present iff the variant trains a
/// linear head (geo head or supervised classifier).
struct MoCoState {
  EncoderParams query;
  EncoderParams key;
  std::optional<GeoHeadParams> head;
  NegativeQueue queue;
  long step = 0;
};

}  // namespace geoclr
