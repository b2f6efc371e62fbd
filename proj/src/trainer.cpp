#include "geoclr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "geoclr/errors.hpp"

namespace geoclr {

namespace {

// Independent rng streams per purpose so that optional components (a geo
// head) do not shift the draws of the others.
constexpr std::uint64_t kEncoderStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kDataStream = 3;

struct VariantName {
  Variant variant;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::MoCo, "moco"},         {Variant::MoCoGeo, "moco+geo"}, {Variant::MoCoTp, "moco+tp"},
    {Variant::MoCoGeoTp, "moco+geo+tp"}, {Variant::GeoOnly, "geo-only"}, {Variant::Supervised, "supervised"},
};

}  // namespace

std::string to_string(Variant v) {
  for (const auto& entry : kVariantNames)
    if (entry.variant == v) return entry.name;
  return "unknown";
}

Variant variant_from_string(const std::string& text) {
  for (const auto& entry : kVariantNames)
    if (text == entry.name) return entry.variant;
  throw ConfigError("unknown variant '" + text +
                    "' (expected moco, moco+geo, moco+tp, moco+geo+tp, geo-only or supervised)");
}

bool uses_contrastive(Variant v) { return v != Variant::GeoOnly && v != Variant::Supervised; }

bool uses_geo_labels(Variant v) {
  return v == Variant::MoCoGeo || v == Variant::MoCoGeoTp || v == Variant::GeoOnly;
}

bool uses_temporal_pairs(Variant v) { return v == Variant::MoCoTp || v == Variant::MoCoGeoTp; }

std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "constant"; }

Schedule schedule_from_string(const std::string& text) {
  if (text == "cosine") return Schedule::Cosine;
  if (text == "constant") return Schedule::Constant;
  throw ConfigError("unknown schedule '" + text + "' (expected constant or cosine)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lr_floor >= 0.0) || lr_floor > lr) throw ConfigError("lr floor must lie in [0, lr]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(ema >= 0.0 && ema <= 1.0)) throw ConfigError("EMA momentum must lie in [0, 1]");
  if (uses_contrastive(variant) && queue_size < batch_size)
    throw ConfigError("queue size must be at least the batch size");
  if (uses_geo_labels(variant) && k < 1) throw ConfigError("K must be >= 1");
  encoder.validate();
  augment.validate();
  if (uses_contrastive(variant)) loss_config().validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

LossConfig TrainConfig::loss_config() const { return LossConfig{temperature, alpha, beta, k}; }

Objective TrainConfig::objective() const {
  Objective obj;
  obj.loss = loss_config();
  obj.head_input = head_input;
  switch (variant) {
    case Variant::MoCo:
    case Variant::MoCoTp:
      obj.contrastive = true;
      obj.head = false;
      break;
    case Variant::MoCoGeo:
    case Variant::MoCoGeoTp:
      obj.contrastive = true;
      obj.head = true;
      break;
    case Variant::GeoOnly:
    case Variant::Supervised:
      obj.contrastive = false;
      obj.head = true;
      obj.loss.alpha = 0.0;
      obj.loss.beta = 1.0;
      break;
  }
  return obj;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.schedule == Schedule::Constant || cfg.epochs <= 1) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(epoch) / (cfg.epochs - 1), 0.0, 1.0);
  return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum, double weight_decay) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() || param.rows() != velocity.rows() ||
      param.cols() != velocity.cols())
    throw ShapeError("sgd_step: parameter, gradient and velocity shapes differ");
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderParams& velocity, double lr, double momentum,
              double weight_decay) {
  auto p = named_arrays(params, "");
  const auto g = named_arrays(grads, "");
  auto v = named_arrays(velocity, "");
  if (p.size() != g.size() || p.size() != v.size()) throw ShapeError("sgd_step: layer counts differ");
  for (std::size_t i = 0; i < p.size(); ++i) sgd_step(*p[i].second, *g[i].second, *v[i].second, lr, momentum, weight_decay);
}

void sgd_step(Linear& params, const Linear& grads, Linear& velocity, double lr, double momentum,
              double weight_decay) {
  sgd_step(params.weight, grads.weight, velocity.weight, lr, momentum, weight_decay);
  sgd_step(params.bias, grads.bias, velocity.bias, lr, momentum, weight_decay);
}

Pretrainer::Pretrainer(const DatasetManifest& manifest, std::optional<GeoClusterModel> geo_model, TrainConfig cfg,
                       std::string geo_model_path)
    : manifest_(manifest),
      geo_model_(std::move(geo_model)),
      geo_model_path_(std::move(geo_model_path)),
      cfg_(std::move(cfg)),
      rng_(Rng::stream(cfg_.seed, kDataStream)) {
  check_inputs();
  Rng enc_rng = Rng::stream(cfg_.seed, kEncoderStream);
  state_.query = init_encoder(cfg_.encoder, enc_rng);
  velocity_query_ = zeros_like(state_.query);
  if (uses_contrastive(cfg_.variant)) {
    state_.key = state_.query;
    state_.queue = NegativeQueue(cfg_.queue_size, cfg_.encoder.embed_dim);
  }
  const Objective obj = cfg_.objective();
  if (obj.head) {
    const int classes = cfg_.variant == Variant::Supervised ? *manifest_.n_classes : geo_model_->k;
    Rng head_rng = Rng::stream(cfg_.seed, kHeadStream);
    state_.head = init_linear(cfg_.encoder.width(cfg_.head_input), classes, head_rng);
    velocity_head_ = zeros_like(*state_.head);
  }
  prepare_labels();
}

Pretrainer::Pretrainer(const DatasetManifest& manifest, const Checkpoint& ck)
    : manifest_(manifest),
      geo_model_(ck.geo_model),
      geo_model_path_(ck.geo_model_path),
      cfg_(ck.config),
      state_(ck.state),
      velocity_query_(ck.velocity_query),
      velocity_head_(ck.velocity_head),
      epoch_(ck.epoch) {
  check_inputs();
  rng_.set_state(ck.rng_state);
  prepare_labels();
}

void Pretrainer::check_inputs() const {
  cfg_.validate();
  if (manifest_.areas.empty()) throw ConfigError("manifest has no areas");
  if (cfg_.encoder.geometry != manifest_.geometry)
    throw ConfigError("encoder input geometry does not match the manifest's image geometry");
  if (uses_geo_labels(cfg_.variant) && !geo_model_)
    throw ConfigError("variant " + to_string(cfg_.variant) + " needs a geo-cluster model");
  if (!uses_geo_labels(cfg_.variant) && geo_model_)
    throw ConfigError("variant " + to_string(cfg_.variant) + " does not use a geo-cluster model");
  if (uses_geo_labels(cfg_.variant) && geo_model_->k != cfg_.k)
    throw ConfigError("geo-cluster model has K=" + std::to_string(geo_model_->k) + " but the config says K=" +
                      std::to_string(cfg_.k));
  if (cfg_.variant == Variant::Supervised && (!manifest_.labeled() || !manifest_.n_classes))
    throw ConfigError("supervised variant needs a labeled manifest with n_classes");
}

void Pretrainer::prepare_labels() {
  head_labels_.clear();
  if (uses_geo_labels(cfg_.variant)) {
    head_labels_ = assign_areas(*geo_model_, manifest_);
  } else if (cfg_.variant == Variant::Supervised) {
    for (const auto& a : manifest_.areas) head_labels_.push_back(*a.label);
  }
}

void Pretrainer::run_epoch() {
  if (epoch_ >= cfg_.epochs) return;
  const std::size_t n = manifest_.areas.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_int(i)]);

  const Objective obj = cfg_.objective();
  const PairingMode mode = uses_temporal_pairs(cfg_.variant) ? PairingMode::Temporal : PairingMode::SameView;
  const double lr = learning_rate(cfg_, epoch_);
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);

  std::vector<Image> query_views;
  std::vector<Image> key_views;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    query_views.clear();
    key_views.clear();
    PretrainBatch b;
    for (std::size_t i = start; i < end; ++i) {
      const AreaRecord& area = manifest_.areas[order[i]];
      const auto [t1, t2] = sample_temporal_pair(area, rng_, mode);
      query_views.push_back(augment(area.views[t1].image, cfg_.augment, rng_));
      if (obj.contrastive) key_views.push_back(augment(area.views[t2].image, cfg_.augment, rng_));
      if (obj.head) b.labels.push_back(head_labels_[order[i]]);
    }
    std::vector<const Image*> ptrs;
    for (const auto& img : query_views) ptrs.push_back(&img);
    b.query = to_batch(ptrs);
    if (obj.contrastive) {
      ptrs.clear();
      for (const auto& img : key_views) ptrs.push_back(&img);
      b.key = to_batch(ptrs);
    }

    LossGradients g = loss_gradients(state_, b, obj);
    sgd_step(state_.query, g.grad_query, velocity_query_, lr, cfg_.momentum, cfg_.weight_decay);
    if (obj.head) sgd_step(*state_.head, *g.grad_head, *velocity_head_, lr, cfg_.momentum, cfg_.weight_decay);
    if (obj.contrastive) {
      momentum_update(state_.key, state_.query, cfg_.ema);
      state_.queue.enqueue_batch(g.keys);
    }
    ++state_.step;

    IterationRecord rec{epoch_, state_.step, g.contrastive, g.geo, g.total, lr};
    trace_.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec, state_);
  }
  ++epoch_;
}

void Pretrainer::run(int until) {
  until = std::min(until, cfg_.epochs);
  while (epoch_ < until) run_epoch();
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.state = state_;
  ck.velocity_query = velocity_query_;
  ck.velocity_head = velocity_head_;
  ck.epoch = epoch_;
  ck.rng_state = rng_.state();
  ck.geo_model = geo_model_;
  ck.geo_model_path = geo_model_path_;
  return ck;
}

PretrainResult pretrain(const DatasetManifest& manifest, std::optional<GeoClusterModel> geo_model,
                        const TrainConfig& cfg, TrainHooks hooks) {
  Pretrainer trainer(manifest, std::move(geo_model), cfg);
  trainer.hooks = std::move(hooks);
  trainer.run();
  return {trainer.checkpoint(), trainer.trace()};
}

std::string trace_to_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,iteration,L_contrastive,L_geo,L_f,lr\n";
  for (const auto& r : trace)
    out << r.epoch << ',' << r.iteration << ',' << r.contrastive << ',' << r.geo << ',' << r.total << ',' << r.lr
        << '\n';
  return out.str();
}

}  // namespace geoclr
