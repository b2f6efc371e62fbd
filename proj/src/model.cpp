#include "geoclr/model.hpp"

#include <algorithm>
#include <cmath>

#include "geoclr/errors.hpp"

namespace geoclr {

namespace {

std::string layer_name(std::size_t index, std::size_t n_backbone) {
  return index < n_backbone ? "backbone." + std::to_string(index)
                            : "projection." + std::to_string(index - n_backbone);
}

const Linear& layer_at(const EncoderParams& p, std::size_t i) {
  return i < p.backbone.size() ? p.backbone[i] : p.projection[i - p.backbone.size()];
}

Linear& layer_at(EncoderParams& p, std::size_t i) {
  return i < p.backbone.size() ? p.backbone[i] : p.projection[i - p.backbone.size()];
}

Linear uniform_linear(int in_dim, int out_dim, double bound, Rng& rng) {
  Linear l{Matrix(in_dim, out_dim), Matrix::Zero(1, out_dim)};
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = rng.uniform(-bound, bound);
  return l;
}

void check_finite(const Matrix& m, std::size_t layer, std::size_t n_backbone) {
  if (!m.allFinite()) throw NumericError("non-finite activation in layer " + layer_name(layer, n_backbone));
}

constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;

ImageGeometry conv_output(const ImageGeometry& in, int channels) {
  return {(in.h + 2 * kPad - kKernel) / kStride + 1, (in.w + 2 * kPad - kKernel) / kStride + 1, channels};
}

// x: one HWC image per row -> one row per (image, output pixel), columns (ky, kx, c).
Matrix im2col(const Matrix& x, const ImageGeometry& in) {
  const ImageGeometry out = conv_output(in, 1);
  const Eigen::Index n = x.rows();
  const int c = in.ch;
  Matrix cols = Matrix::Zero(n * out.h * out.w, kKernel * kKernel * c);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double* src = x.row(s).data();
    for (int oy = 0; oy < out.h; ++oy) {
      for (int ox = 0; ox < out.w; ++ox) {
        double* dst = cols.row((s * out.h + oy) * out.w + ox).data();
        for (int ky = 0; ky < kKernel; ++ky) {
          const int iy = oy * kStride - kPad + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int ix = ox * kStride - kPad + kx;
            if (ix < 0 || ix >= in.w) continue;
            const double* p = src + (static_cast<std::size_t>(iy) * in.w + ix) * c;
            std::copy(p, p + c, dst + (ky * kKernel + kx) * c);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds patch gradients back to image rows.
Matrix col2im(const Matrix& cols, Eigen::Index n, const ImageGeometry& in) {
  const ImageGeometry out = conv_output(in, 1);
  const int c = in.ch;
  Matrix x = Matrix::Zero(n, static_cast<Eigen::Index>(in.size()));
  for (Eigen::Index s = 0; s < n; ++s) {
    double* dst = x.row(s).data();
    for (int oy = 0; oy < out.h; ++oy) {
      for (int ox = 0; ox < out.w; ++ox) {
        const double* src = cols.row((s * out.h + oy) * out.w + ox).data();
        for (int ky = 0; ky < kKernel; ++ky) {
          const int iy = oy * kStride - kPad + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int ix = ox * kStride - kPad + kx;
            if (ix < 0 || ix >= in.w) continue;
            double* p = dst + (static_cast<std::size_t>(iy) * in.w + ix) * c;
            const double* q = src + (ky * kKernel + kx) * c;
            for (int k = 0; k < c; ++k) p[k] += q[k];
          }
        }
      }
    }
  }
  return x;
}

// (n * P) x C, P pixels per image -> n x C spatial means.
Matrix average_pool(const Matrix& maps, Eigen::Index n) {
  const Eigen::Index p = maps.rows() / n;
  Matrix out(n, maps.cols());
  for (Eigen::Index s = 0; s < n; ++s) out.row(s) = maps.middleRows(s * p, p).colwise().sum() / static_cast<double>(p);
  return out;
}

}  // namespace

std::string to_string(FeatureSource source) {
  return source == FeatureSource::Backbone ? "backbone" : "projection";
}

FeatureSource feature_source_from_string(const std::string& text) {
  if (text == "backbone") return FeatureSource::Backbone;
  if (text == "projection") return FeatureSource::Projection;
  throw ConfigError("unknown feature source '" + text + "' (expected backbone or projection)");
}

int EncoderConfig::feature_dim() const {
  if (!hidden.empty()) return hidden.back();
  return conv_channels.empty() ? input_dim() : conv_channels.back();
}

void EncoderConfig::validate() const {
  if (geometry.h < 1 || geometry.w < 1 || geometry.ch < 1) throw ConfigError("encoder input geometry must be positive");
  if (hidden.empty() && conv_channels.empty()) throw ConfigError("encoder needs at least one block");
  for (int h : hidden)
    if (h < 1) throw ConfigError("block widths must be positive");
  for (int c : conv_channels)
    if (c < 1) throw ConfigError("convolution channel counts must be positive");
  if (embed_dim < 2) throw ConfigError("embedding dimension must be >= 2");
  if (projection_depth != 1 && projection_depth != 2) throw ConfigError("projection depth must be 1 or 2");
}

std::vector<std::pair<std::string, Matrix*>> named_arrays(EncoderParams& params, const std::string& prefix) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t i = 0; i < params.conv.size(); ++i) {
    const std::string base = prefix + "conv." + std::to_string(i);
    out.emplace_back(base + ".weight", &params.conv[i].weight);
    out.emplace_back(base + ".bias", &params.conv[i].bias);
  }
  const std::size_t n = params.backbone.size() + params.projection.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& l = layer_at(params, i);
    const std::string base = prefix + layer_name(i, params.backbone.size());
    out.emplace_back(base + ".weight", &l.weight);
    out.emplace_back(base + ".bias", &l.bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> named_arrays(const EncoderParams& params,
                                                                const std::string& prefix) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, ptr] : named_arrays(const_cast<EncoderParams&>(params), prefix)) out.emplace_back(name, ptr);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> named_arrays(Linear& head, const std::string& prefix) {
  return {{prefix + "weight", &head.weight}, {prefix + "bias", &head.bias}};
}

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.input = cfg.geometry;
  int in = cfg.input_dim();
  int channels = cfg.geometry.ch;
  for (int width : cfg.conv_channels) {
    const int fan_in = kKernel * kKernel * channels;
    p.conv.push_back(uniform_linear(fan_in, width, std::sqrt(6.0 / fan_in), rng));
    channels = width;
    in = width;
  }
  for (int width : cfg.hidden) {
    p.backbone.push_back(uniform_linear(in, width, std::sqrt(6.0 / in), rng));
    in = width;
  }
  if (cfg.projection_depth == 2) {
    p.projection.push_back(uniform_linear(in, in, std::sqrt(6.0 / in), rng));
  }
  p.projection.push_back(uniform_linear(in, cfg.embed_dim, std::sqrt(3.0 / in), rng));
  return p;
}

Linear init_linear(int in_dim, int out_dim, Rng& rng) {
  return uniform_linear(in_dim, out_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
}

EncoderParams zeros_like(const EncoderParams& like) {
  EncoderParams out = like;
  for (auto& [name, m] : named_arrays(out, "")) m->setZero();
  return out;
}

Linear zeros_like(const Linear& like) {
  return Linear{Matrix::Zero(like.weight.rows(), like.weight.cols()), Matrix::Zero(1, like.bias.cols())};
}

bool same_shapes(const EncoderParams& a, const EncoderParams& b) {
  const auto na = named_arrays(a, "");
  const auto nb = named_arrays(b, "");
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].second->rows() != nb[i].second->rows() || na[i].second->cols() != nb[i].second->cols()) return false;
  }
  return true;
}

Matrix to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("empty batch");
  const auto dim = static_cast<Eigen::Index>(images.front()->data.size());
  Matrix out(static_cast<Eigen::Index>(images.size()), dim);
  for (std::size_t r = 0; r < images.size(); ++r) {
    if (static_cast<Eigen::Index>(images[r]->data.size()) != dim) throw ShapeError("images of differing size in batch");
    out.row(static_cast<Eigen::Index>(r)) =
        Eigen::Map<const Eigen::RowVectorXf>(images[r]->data.data(), dim).cast<double>();
  }
  return out;
}

EncoderTrace encoder_forward(const EncoderParams& params, const Matrix& batch, bool with_projection) {
  if (params.projection.empty() || (params.backbone.empty() && params.conv.empty()))
    throw ShapeError("encoder has no layers");
  if (batch.rows() < 1) throw ShapeError("encode needs at least one row");
  const auto expected = static_cast<Eigen::Index>(params.input.size());
  if (batch.cols() != expected)
    throw ShapeError("input has " + std::to_string(batch.cols()) + " values per sample, encoder expects " +
                     std::to_string(expected));

  const Eigen::Index n = batch.rows();
  const std::size_t nb = params.backbone.size();
  const std::size_t n_layers = with_projection ? nb + params.projection.size() : nb;
  EncoderTrace t;
  t.has_projection = with_projection;
  // Inputs are centered around mid-gray.
  Matrix x = batch.array() - 0.5;

  if (!params.conv.empty()) {
    ImageGeometry g = params.input;
    Matrix maps;
    for (std::size_t i = 0; i < params.conv.size(); ++i) {
      const Linear& l = params.conv[i];
      if (l.weight.rows() != kKernel * kKernel * g.ch) throw ShapeError("convolution block " + std::to_string(i) + " has the wrong input depth");
      t.conv_in.push_back(g);
      t.conv_cols.push_back(im2col(x, g));
      Matrix pre = t.conv_cols.back() * l.weight;
      pre.rowwise() += l.bias.row(0);
      if (!pre.allFinite()) throw NumericError("non-finite activation in layer conv." + std::to_string(i));
      maps = pre.cwiseMax(0.0);
      t.conv_pre.push_back(std::move(pre));
      g = conv_output(g, l.out_dim());
      if (i + 1 < params.conv.size()) x = Eigen::Map<const Matrix>(maps.data(), n, static_cast<Eigen::Index>(g.size()));
    }
    x = average_pool(maps, n);
  }
  if (nb == 0) t.features = x;

  for (std::size_t i = 0; i < n_layers; ++i) {
    const Linear& l = layer_at(params, i);
    Matrix pre = x * l.weight;
    pre.rowwise() += l.bias.row(0);
    check_finite(pre, i, nb);
    t.inputs.push_back(std::move(x));
    const bool last = i + 1 == nb + params.projection.size();
    if (last) {
      x = std::move(pre);
    } else {
      x = pre.cwiseMax(0.0);
      t.pre.push_back(std::move(pre));
    }
    if (i + 1 == nb) t.features = x;
  }
  if (!with_projection) return t;

  t.u = std::move(x);
  t.norms = t.u.rowwise().norm();
  for (Eigen::Index r = 0; r < t.norms.size(); ++r) {
    if (!(t.norms[r] > 0.0) || !std::isfinite(t.norms[r]))
      throw NumericError("embedding norm is zero or non-finite before normalization");
  }
  t.z = t.norms.cwiseInverse().asDiagonal() * t.u;
  return t;
}

Matrix encode(const EncoderParams& params, const Matrix& batch) { return encoder_forward(params, batch, true).z; }

Matrix backbone_features(const EncoderParams& params, const Matrix& batch) {
  return encoder_forward(params, batch, false).features;
}

Matrix select_features(const EncoderTrace& trace, FeatureSource source) {
  return source == FeatureSource::Backbone ? trace.features : trace.z;
}

EncoderParams encoder_backward(const EncoderParams& params, const EncoderTrace& trace, const Matrix* grad_z,
                               const Matrix* grad_features) {
  EncoderParams grads = zeros_like(params);
  const std::size_t nb = params.backbone.size();
  const std::size_t total = nb + params.projection.size();
  if (grad_z && !trace.has_projection) throw ShapeError("gradient w.r.t. z needs a projection forward pass");
  if (!grad_z && !grad_features) return grads;
  const bool has_conv = !params.conv.empty();

  auto add_features = [&](Matrix& g) {
    if (g.size() == 0) {
      g = *grad_features;
    } else {
      g += *grad_features;
    }
  };

  // Gradient w.r.t. the output of the current layer (post-activation).
  Matrix g;
  std::size_t layer = nb;
  if (grad_z) {
    // d/du of u / |u|: (g - z (z . g)) / |u|
    const Vector dots = (trace.z.cwiseProduct(*grad_z)).rowwise().sum();
    g = trace.norms.cwiseInverse().asDiagonal() * (*grad_z - dots.asDiagonal() * trace.z);
    layer = total;
  }

  for (std::size_t i = layer; i-- > 0;) {
    const bool is_last = i + 1 == total;
    if (i + 1 == nb && grad_features) add_features(g);
    if (!is_last) g = g.cwiseProduct((trace.pre[i].array() > 0.0).cast<double>().matrix());
    Linear& gl = layer_at(grads, i);
    gl.weight.noalias() = trace.inputs[i].transpose() * g;
    gl.bias = g.colwise().sum();
    if (i > 0 || has_conv) g = g * layer_at(params, i).weight.transpose();
  }
  if (!has_conv) return grads;
  if (nb == 0 && grad_features) add_features(g);

  // Undo the spatial average: every pixel of a map gets an equal share.
  const Eigen::Index n = g.rows();
  const Eigen::Index pixels = trace.conv_pre.back().rows() / n;
  Matrix gm(n * pixels, g.cols());
  for (Eigen::Index s = 0; s < n; ++s)
    gm.middleRows(s * pixels, pixels).rowwise() = g.row(s) / static_cast<double>(pixels);

  for (std::size_t i = params.conv.size(); i-- > 0;) {
    gm = gm.cwiseProduct((trace.conv_pre[i].array() > 0.0).cast<double>().matrix());
    Linear& gl = grads.conv[i];
    gl.weight.noalias() = trace.conv_cols[i].transpose() * gm;
    gl.bias = gm.colwise().sum();
    if (i == 0) break;
    const Matrix gcols = gm * params.conv[i].weight.transpose();
    const Matrix gx = col2im(gcols, n, trace.conv_in[i]);
    // Back to one row per (image, pixel) of the previous block's maps.
    gm = Eigen::Map<const Matrix>(gx.data(), trace.conv_pre[i - 1].rows(), trace.conv_pre[i - 1].cols());
  }
  return grads;
}

Matrix geo_logits(const GeoHeadParams& head, const Matrix& z) {
  if (z.cols() != head.weight.rows())
    throw ShapeError("geo head expects " + std::to_string(head.weight.rows()) + " input columns, got " +
                     std::to_string(z.cols()));
  Matrix out = z * head.weight;
  out.rowwise() += head.bias.row(0);
  return out;
}

void momentum_update(EncoderParams& key, const EncoderParams& query, double m) {
  if (!same_shapes(key, query)) throw ShapeError("momentum update: key and query shapes differ");
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  auto k = named_arrays(key, "");
  const auto q = named_arrays(query, "");
  for (std::size_t i = 0; i < k.size(); ++i) *k[i].second = m * *k[i].second + (1.0 - m) * *q[i].second;
}

}  // namespace geoclr
