#include "geoclr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "geoclr/errors.hpp"

namespace geoclr {

using nlohmann::json;

FeatureSet extract_features(const EncoderParams& encoder, const DatasetManifest& manifest, FeatureSource source,
                            int batch_size) {
  if (!manifest.labeled()) throw ValidationError("feature extraction for evaluation needs a labeled manifest");
  FeatureSet out;
  std::vector<const Image*> images;
  for (std::size_t a = 0; a < manifest.areas.size(); ++a) {
    const auto& area = manifest.areas[a];
    out.area_labels.push_back(*area.label);
    for (const auto& v : area.views) {
      images.push_back(&v.image);
      out.labels.push_back(*area.label);
      out.area_index.push_back(static_cast<int>(a));
    }
  }
  const auto n = static_cast<Eigen::Index>(images.size());
  const bool projection = source == FeatureSource::Projection;
  for (Eigen::Index start = 0; start < n; start += batch_size) {
    const Eigen::Index end = std::min<Eigen::Index>(n, start + batch_size);
    const std::vector<const Image*> chunk(images.begin() + start, images.begin() + end);
    const EncoderTrace trace = encoder_forward(encoder, to_batch(chunk), projection);
    const Matrix f = select_features(trace, source);
    if (out.features.size() == 0) out.features.resize(n, f.cols());
    out.features.middleRows(start, end - start) = f;
  }
  return out;
}

FeatureSet extract_features(const Checkpoint& checkpoint, const DatasetManifest& manifest, FeatureSource source) {
  return extract_features(checkpoint.state.query, manifest, source);
}

Matrix predict_proba(const Linear& classifier, const Matrix& features) {
  Matrix logits = geo_logits(classifier, features);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

namespace {

struct SoftmaxObjective {
  double loss;
  Matrix grad_w;
  Matrix grad_b;
};

SoftmaxObjective softmax_objective(const Matrix& x, const std::vector<int>& labels, const Matrix& w, const Matrix& b,
                                   double l2) {
  Matrix logits = x * w;
  logits.rowwise() += b.row(0);
  const double n = static_cast<double>(x.rows());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int c = labels[static_cast<std::size_t>(r)];
    const double target = logits(r, c);
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    const double denom = logits.row(r).sum();
    loss += m + std::log(denom) - target;
    logits.row(r) /= denom;
    logits(r, c) -= 1.0;
  }
  logits /= n;
  return {loss / n + 0.5 * l2 * w.squaredNorm(), x.transpose() * logits + l2 * w, logits.colwise().sum()};
}

/// Largest eigenvalue of [x 1]^T [x 1] / n by power iteration.
double gram_spectral_norm(const Matrix& x) {
  const double n = static_cast<double>(x.rows());
  Vector v = Vector::Ones(x.cols() + 1);
  v.normalize();
  double lambda = 1.0;
  for (int it = 0; it < 100; ++it) {
    const Vector xv = x * v.head(x.cols()) + Vector::Constant(x.rows(), v[x.cols()]);
    Vector next(x.cols() + 1);
    next.head(x.cols()) = x.transpose() * xv / n;
    next[x.cols()] = xv.sum() / n;
    lambda = next.norm();
    if (!(lambda > 0.0)) return 1.0;
    v = next / lambda;
  }
  return lambda;
}

}  // namespace

ProbeResult train_linear_probe(const Matrix& features, const std::vector<int>& labels, int n_classes,
                               const ProbeConfig& cfg) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) throw ShapeError("one label per feature row");
  if (features.rows() == 0) throw ValidationError("linear probe needs at least one sample");
  for (int c : labels)
    if (c < 0 || c >= n_classes) throw ValidationError("probe label outside [0, n_classes)");
  if (std::all_of(labels.begin(), labels.end(), [&](int c) { return c == labels.front(); }))
    throw ValidationError("linear probe needs at least two classes present");

  const Eigen::RowVectorXd mean = features.colwise().mean();
  Eigen::RowVectorXd scale = ((features.rowwise() - mean).colwise().squaredNorm() / features.rows()).cwiseSqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale[j] > 1e-12)) scale[j] = 1.0;
  const Matrix x = (features.rowwise() - mean).array().rowwise() / scale.array();

  const double lipschitz = 0.5 * gram_spectral_norm(x) + cfg.l2;
  const double step = 1.0 / lipschitz;

  const Eigen::Index f = x.cols();
  Matrix w = Matrix::Zero(f, n_classes);
  Matrix b = Matrix::Zero(1, n_classes);
  Matrix w_prev = w;
  Matrix b_prev = b;
  ProbeResult result;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const double mom = static_cast<double>(it - 1) / (it + 2);
    const Matrix yw = w + mom * (w - w_prev);
    const Matrix yb = b + mom * (b - b_prev);
    const SoftmaxObjective obj = softmax_objective(x, labels, yw, yb, cfg.l2);
    result.loss_trace.push_back(obj.loss);
    result.iterations = it;
    const double gmax = std::max(obj.grad_w.cwiseAbs().maxCoeff(), obj.grad_b.cwiseAbs().maxCoeff());
    w_prev = std::move(w);
    b_prev = std::move(b);
    if (gmax < cfg.tol) {
      w = yw;
      b = yb;
      break;
    }
    w = yw - step * obj.grad_w;
    b = yb - step * obj.grad_b;
  }

  // Fold the standardization into the affine map.
  Linear classifier;
  classifier.weight = scale.cwiseInverse().asDiagonal() * w;
  classifier.bias = b - (mean.array() / scale.array()).matrix() * w;
  result.classifier = std::move(classifier);

  const auto pred = argmax_rows(predict_proba(result.classifier, features));
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  return result;
}

TemporalPrediction classify_temporal(const Matrix& probs, const std::vector<int>& area_index, int n_areas,
                                     TemporalRule rule) {
  if (probs.rows() != static_cast<Eigen::Index>(area_index.size())) throw ShapeError("one area index per row");
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (probs.row(r).minCoeff() < 0.0 || std::abs(probs.row(r).sum() - 1.0) > 1e-6)
      throw ValidationError("row " + std::to_string(r) + " is not a probability distribution");
  }
  TemporalPrediction out;
  out.mean_probs = Matrix::Zero(n_areas, probs.cols());
  std::vector<int> counts(static_cast<std::size_t>(n_areas), 0);
  std::vector<double> best_conf(static_cast<std::size_t>(n_areas), -1.0);
  std::vector<int> best_class(static_cast<std::size_t>(n_areas), 0);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int a = area_index[static_cast<std::size_t>(r)];
    if (a < 0 || a >= n_areas) throw ValidationError("area index out of range");
    out.mean_probs.row(a) += probs.row(r);
    ++counts[static_cast<std::size_t>(a)];
    Eigen::Index c = 0;
    const double conf = probs.row(r).maxCoeff(&c);
    if (conf > best_conf[static_cast<std::size_t>(a)]) {
      best_conf[static_cast<std::size_t>(a)] = conf;
      best_class[static_cast<std::size_t>(a)] = static_cast<int>(c);
    }
  }
  for (int a = 0; a < n_areas; ++a) {
    if (counts[static_cast<std::size_t>(a)] == 0) throw ValidationError("area " + std::to_string(a) + " has no views");
    out.mean_probs.row(a) /= counts[static_cast<std::size_t>(a)];
  }
  out.predicted = rule == TemporalRule::MeanArgmax ? argmax_rows(out.mean_probs) : best_class;
  return out;
}

std::string to_string(Granularity g) { return g == Granularity::Single ? "single" : "temporal"; }

EvalReport metrics(const Matrix& probs, const std::vector<int>& predicted, const std::vector<int>& labels,
                   int n_classes) {
  if (predicted.size() != labels.size() || probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ShapeError("predictions and labels differ in length");
  if (probs.cols() != n_classes) throw ShapeError("probability columns differ from n_classes");
  EvalReport rep;
  rep.n_classes = n_classes;
  rep.n = static_cast<int>(labels.size());
  if (labels.empty()) return rep;

  std::vector<int> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0), support(n_classes, 0);
  int correct = 0;
  int top5 = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predicted[i];
    if (y < 0 || y >= n_classes || p < 0 || p >= n_classes) throw ValidationError("class id out of range");
    ++support[y];
    if (p == y) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
    const auto r = static_cast<Eigen::Index>(i);
    int rank = 0;
    for (int c = 0; c < n_classes; ++c) {
      if (probs(r, c) > probs(r, y) || (probs(r, c) == probs(r, y) && c < y)) ++rank;
    }
    top5 += rank < 5;
  }
  rep.top1 = static_cast<double>(correct) / rep.n;
  rep.top5 = static_cast<double>(top5) / rep.n;

  double f1_sum = 0.0;
  int f1_count = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    f1_sum += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
    ++f1_count;
    if (support[c] > 0) rep.per_class[c] = {static_cast<double>(tp[c]) / support[c], support[c]};
  }
  rep.macro_f1 = f1_count > 0 ? f1_sum / f1_count : 0.0;
  return rep;
}

EvalReport metrics(const Matrix& probs, const std::vector<int>& labels, int n_classes) {
  return metrics(probs, argmax_rows(probs), labels, n_classes);
}

json to_json(const EvalReport& r) {
  json per_class = json::array();
  for (const auto& [c, s] : r.per_class) per_class.push_back({{"class", c}, {"accuracy", s.accuracy}, {"support", s.support}});
  json out{{"protocol", r.protocol},
           {"granularity", to_string(r.granularity)},
           {"n", r.n},
           {"n_classes", r.n_classes},
           {"top1", r.top1},
           {"macro_f1", r.macro_f1},
           {"per_class", per_class}};
  if (r.n_classes > 5) out["top5"] = r.top5;
  return out;
}

json to_json(const Evaluation& e) {
  return json{{"protocol", e.single.protocol},
              {"single", to_json(e.single)},
              {"temporal", e.temporal ? to_json(*e.temporal) : json(nullptr)}};
}

std::string per_class_csv(const EvalReport& single, const std::optional<EvalReport>& temporal) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  out << "class,single_accuracy,temporal_accuracy\n";
  for (const auto& [c, s] : single.per_class) {
    out << c << ',' << s.accuracy << ',';
    if (temporal) {
      auto it = temporal->per_class.find(c);
      if (it != temporal->per_class.end()) out << it->second.accuracy;
    }
    out << '\n';
  }
  return out.str();
}

Evaluation evaluate(const EncoderParams& encoder, const Linear& classifier, const DatasetManifest& manifest,
                    FeatureSource source, bool temporal, const std::string& protocol, TemporalRule rule) {
  const FeatureSet fs = extract_features(encoder, manifest, source);
  const int n_classes = classifier.out_dim();
  const Matrix probs = predict_proba(classifier, fs.features);
  Evaluation out;
  out.single = metrics(probs, fs.labels, n_classes);
  out.single.protocol = protocol;
  out.single.granularity = Granularity::Single;
  if (temporal) {
    const auto tp = classify_temporal(probs, fs.area_index, static_cast<int>(manifest.areas.size()), rule);
    EvalReport rep = metrics(tp.mean_probs, tp.predicted, fs.area_labels, n_classes);
    rep.protocol = protocol;
    rep.granularity = Granularity::Temporal;
    out.temporal = std::move(rep);
  }
  return out;
}

FinetuneResult finetune(const EncoderParams& encoder, const DatasetManifest& manifest, int n_classes,
                        const FinetuneConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("finetune epochs must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("finetune batch size must be positive");
  const FeatureSet fs = extract_features(encoder, manifest, cfg.source);
  const ProbeResult probe = train_linear_probe(fs.features, fs.labels, n_classes, cfg.probe);

  FinetuneResult out;
  out.encoder = encoder;
  out.classifier = probe.classifier;
  out.initial_classifier = probe.classifier;

  std::vector<const Image*> images;
  for (const auto& area : manifest.areas)
    for (const auto& v : area.views) images.push_back(&v.image);

  EncoderParams vel_enc = zeros_like(out.encoder);
  Linear vel_head = zeros_like(out.classifier);
  Rng rng = Rng::stream(cfg.seed, 7);
  const std::size_t n = images.size();
  std::vector<std::size_t> order(n);
  const bool projection = cfg.source == FeatureSource::Projection;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Image*> chunk;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        chunk.push_back(images[order[i]]);
        labels.push_back(fs.labels[order[i]]);
      }
      const EncoderTrace trace = encoder_forward(out.encoder, to_batch(chunk), projection);
      const Matrix feats = select_features(trace, cfg.source);
      const SampleLosses ce = geo_cross_entropy(geo_logits(out.classifier, feats), labels);
      loss_sum += ce.mean * static_cast<double>(end - start);
      Linear gh{feats.transpose() * ce.grad, ce.grad.colwise().sum()};
      const Matrix upstream = ce.grad * out.classifier.weight.transpose();
      const EncoderParams ge = encoder_backward(out.encoder, trace, projection ? &upstream : nullptr,
                                                projection ? nullptr : &upstream);
      sgd_step(out.encoder, ge, vel_enc, cfg.lr, cfg.momentum, cfg.weight_decay);
      sgd_step(out.classifier, gh, vel_head, cfg.lr, cfg.momentum, cfg.weight_decay);
    }
    out.epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }
  return out;
}

}  // namespace geoclr
