#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoclr/data.hpp"
#include "geoclr/model.hpp"
#include "geoclr/trainer.hpp"

namespace geoclr {

/// Frozen features of every sample, grouped by area.
struct FeatureSet {
  Matrix features;
  std::vector<int> labels;      // per row
  std::vector<int> area_index;  // per row, index into manifest.areas
  std::vector<int> area_labels; // per area
};

/// Deterministic features (no augmentation) from the query encoder.
FeatureSet extract_features(const EncoderParams& encoder, const DatasetManifest& manifest,
                            FeatureSource source = FeatureSource::Backbone, int batch_size = 256);
FeatureSet extract_features(const Checkpoint& checkpoint, const DatasetManifest& manifest,
                            FeatureSource source = FeatureSource::Backbone);

struct ProbeConfig {
  int max_iter = 1000;
  /// Stop once the gradient's max-abs entry falls below this.
  double tol = 1e-6;
  /// L2 penalty (l2 / 2) * |W|^2 on the standardized weights.
  double l2 = 1e-4;
};

struct ProbeResult {
  /// Maps raw features to logits; feature standardization is folded in.
  Linear classifier;
  double train_accuracy = 0.0;
  int iterations = 0;
  std::vector<double> loss_trace;
};

/// Multinomial logistic regression on frozen features: standardize with the
/// training statistics, then full-batch accelerated gradient descent from a
/// zero initialization.
ProbeResult train_linear_probe(const Matrix& features, const std::vector<int>& labels, int n_classes,
                               const ProbeConfig& cfg = {});

/// Row-wise softmax of features * W + b.
Matrix predict_proba(const Linear& classifier, const Matrix& features);

/// Row-wise argmax, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& m);

enum class TemporalRule {
  MeanArgmax,     // argmax of the averaged distribution
  MaxConfidence,  // class of the single most confident view
};

struct TemporalPrediction {
  /// Per area: mean of its view distributions.
  Matrix mean_probs;
  std::vector<int> predicted;
};

/// Groups per-view class distributions by area and predicts one class per
/// area. Throws ValidationError if a row is not a probability distribution
/// (non-negative, sums to 1 within 1e-6).
TemporalPrediction classify_temporal(const Matrix& probs, const std::vector<int>& area_index, int n_areas,
                                     TemporalRule rule = TemporalRule::MeanArgmax);

enum class Granularity { Single, Temporal };
std::string to_string(Granularity g);

struct ClassScore {
  double accuracy = 0.0;  // recall
  int support = 0;
};

struct EvalReport {
  std::string protocol = "frozen-probe";
  Granularity granularity = Granularity::Single;
  double top1 = 0.0;
  /// Always computed; serialized only when n_classes > 5.
  double top5 = 0.0;
  double macro_f1 = 0.0;
  int n_classes = 0;
  int n = 0;
  std::map<int, ClassScore> per_class;
};

/// top-1, top-5, macro-F1 and per-class recall. `predicted` are the hard
/// predictions; `probs` ranks classes for top-5 (ties to the lowest index).
/// Macro-F1 averages over classes that occur in labels or predictions.
EvalReport metrics(const Matrix& probs, const std::vector<int>& predicted, const std::vector<int>& labels,
                   int n_classes);
EvalReport metrics(const Matrix& probs, const std::vector<int>& labels, int n_classes);

nlohmann::json to_json(const EvalReport& report);

/// Per-class table: class,single_accuracy,temporal_accuracy
std::string per_class_csv(const EvalReport& single, const std::optional<EvalReport>& temporal);

struct Evaluation {
  EvalReport single;
  std::optional<EvalReport> temporal;
};

/// Scores an encoder + linear classifier on a labeled manifest.
Evaluation evaluate(const EncoderParams& encoder, const Linear& classifier, const DatasetManifest& manifest,
                    FeatureSource source, bool temporal, const std::string& protocol,
                    TemporalRule rule = TemporalRule::MeanArgmax);

nlohmann::json to_json(const Evaluation& evaluation);

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  FeatureSource source = FeatureSource::Backbone;
  ProbeConfig probe;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  EncoderParams encoder;
  Linear classifier;
  /// Head after the probe initialization, before any end-to-end step.
  Linear initial_classifier;
  /// Mean cross-entropy of each finetune epoch.
  std::vector<double> epoch_losses;
};

/// End-to-end finetuning of the backbone and a linear head. The head starts
/// from a frozen-feature probe, so zero epochs reproduce the probe exactly.
FinetuneResult finetune(const EncoderParams& encoder, const DatasetManifest& manifest, int n_classes,
                        const FinetuneConfig& cfg);

}  // namespace geoclr
