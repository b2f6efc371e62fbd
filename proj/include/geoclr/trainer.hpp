#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geoclr/augment.hpp"
#include "geoclr/data.hpp"
#include "geoclr/geocluster.hpp"
#include "geoclr/loss.hpp"
#include "geoclr/model.hpp"

namespace geoclr {

enum class Variant { MoCo, MoCoGeo, MoCoTp, MoCoGeoTp, GeoOnly, Supervised };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& text);

bool uses_contrastive(Variant v);
bool uses_geo_labels(Variant v);
bool uses_temporal_pairs(Variant v);

enum class Schedule { Constant, Cosine };

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& text);

/// Pretraining hyperparameters. Batch, queue and learning rate defaults are
/// sized for small single-core runs.
struct TrainConfig {
  Variant variant = Variant::MoCoGeoTp;
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.1;
  double lr_floor = 0.0;
  Schedule schedule = Schedule::Cosine;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double temperature = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  double ema = 0.999;
  int queue_size = 1024;
  int k = 100;
  std::uint64_t seed = 0;
  FeatureSource head_input = FeatureSource::Projection;
  EncoderConfig encoder;
  AugmentConfig augment;

  void validate() const;
  LossConfig loss_config() const;
  Objective objective() const;
};

/// Learning rate for a 0-based epoch. Cosine decays from lr at epoch 0 to
/// lr_floor at the final epoch.
double learning_rate(const TrainConfig& cfg, int epoch);

/// velocity <- momentum * velocity + grad + weight_decay * param
/// param    <- param - lr * velocity
void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum, double weight_decay);
void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderParams& velocity, double lr, double momentum,
              double weight_decay);
void sgd_step(Linear& params, const Linear& grads, Linear& velocity, double lr, double momentum,
              double weight_decay);

struct IterationRecord {
  int epoch = 0;
  long iteration = 0;
  double contrastive = 0.0;
  double geo = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Everything needed to continue training bit-identically.
struct Checkpoint {
  TrainConfig config;
  MoCoState state;
  EncoderParams velocity_query;
  std::optional<Linear> velocity_head;
  /// Number of completed epochs.
  int epoch = 0;
  std::string rng_state;
  std::optional<GeoClusterModel> geo_model;
  std::string geo_model_path;
};

struct TrainHooks {
  /// Called after every optimizer step, EMA update and enqueue.
  std::function<void(const IterationRecord&, const MoCoState&)> on_iteration;
};

/// Pretraining loop. Per iteration: sample a batch of areas, draw a view pair
/// per area (same-view or temporal), augment both views independently,
/// encode the query with the query encoder and the key with the key encoder,
/// score against the queue snapshot, add the head loss, step SGD on the query
/// encoder and head, EMA-update the key encoder, and enqueue the keys.
/// geo-only and supervised train encoder + head with cross-entropy only.
class Pretrainer {
 public:
  Pretrainer(const DatasetManifest& manifest, std::optional<GeoClusterModel> geo_model, TrainConfig cfg,
             std::string geo_model_path = {});
  /// Continues from a checkpoint; the manifest and geo model must match the
  /// ones the checkpoint was trained on.
  Pretrainer(const DatasetManifest& manifest, const Checkpoint& checkpoint);

  void run_epoch();
  /// Runs until `epoch()` reaches `until` (capped at cfg.epochs).
  void run(int until);
  void run() { run(cfg_.epochs); }

  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  const MoCoState& state() const { return state_; }
  const std::vector<IterationRecord>& trace() const { return trace_; }
  Checkpoint checkpoint() const;

  TrainHooks hooks;

 private:
  void check_inputs() const;
  void prepare_labels();

  const DatasetManifest& manifest_;
  std::optional<GeoClusterModel> geo_model_;
  std::string geo_model_path_;
  TrainConfig cfg_;
  MoCoState state_;
  EncoderParams velocity_query_;
  std::optional<Linear> velocity_head_;
  Rng rng_;
  int epoch_ = 0;
  std::vector<int> head_labels_;
  std::vector<IterationRecord> trace_;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<IterationRecord> trace;
};

PretrainResult pretrain(const DatasetManifest& manifest, std::optional<GeoClusterModel> geo_model,
                        const TrainConfig& cfg, TrainHooks hooks = {});

/// Loss trace as CSV: epoch,iteration,L_contrastive,L_geo,L_f,lr
std::string trace_to_csv(const std::vector<IterationRecord>& trace);

}  // namespace geoclr
