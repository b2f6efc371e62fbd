#include "geoclr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "geoclr/errors.hpp"

namespace geoclr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'E', 'O', 'C', 'L', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError(path + ": truncated checkpoint");
  return value;
}

void put_array(std::ostream& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void collect(std::vector<std::pair<std::string, Matrix*>>& dst, std::vector<std::pair<std::string, Matrix*>> src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

/// Every named array slot of a checkpoint, in archive order.
std::vector<std::pair<std::string, Matrix*>> slots(Checkpoint& ck) {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect(out, named_arrays(ck.state.query, "query."));
  if (!ck.state.key.projection.empty()) collect(out, named_arrays(ck.state.key, "key."));
  if (ck.state.head) collect(out, named_arrays(*ck.state.head, "head."));
  collect(out, named_arrays(ck.velocity_query, "velocity.query."));
  if (ck.velocity_head) collect(out, named_arrays(*ck.velocity_head, "velocity.head."));
  return out;
}

}  // namespace

json to_json(const TrainConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& a = cfg.augment;
  return json{{"variant", to_string(cfg.variant)},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.lr},
              {"lr_floor", cfg.lr_floor},
              {"schedule", to_string(cfg.schedule)},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"temperature", cfg.temperature},
              {"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"ema", cfg.ema},
              {"queue_size", cfg.queue_size},
              {"k", cfg.k},
              {"seed", cfg.seed},
              {"head_input", to_string(cfg.head_input)},
              {"encoder",
               {{"h", e.geometry.h},
                {"w", e.geometry.w},
                {"ch", e.geometry.ch},
                {"conv_channels", e.conv_channels},
                {"hidden", e.hidden},
                {"embed_dim", e.embed_dim},
                {"projection_depth", e.projection_depth}}},
              {"augment",
               {{"crop_scale_min", a.crop_scale_min},
                {"crop_scale_max", a.crop_scale_max},
                {"flip_prob", a.flip_prob},
                {"jitter_prob", a.jitter_prob},
                {"brightness", a.brightness},
                {"contrast", a.contrast},
                {"saturation", a.saturation},
                {"grayscale_prob", a.grayscale_prob}}}};
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig cfg;
  try {
    cfg.variant = variant_from_string(doc.at("variant").get<std::string>());
    cfg.epochs = doc.at("epochs").get<int>();
    cfg.batch_size = doc.at("batch_size").get<int>();
    cfg.lr = doc.at("lr").get<double>();
    cfg.lr_floor = doc.at("lr_floor").get<double>();
    cfg.schedule = schedule_from_string(doc.at("schedule").get<std::string>());
    cfg.momentum = doc.at("momentum").get<double>();
    cfg.weight_decay = doc.at("weight_decay").get<double>();
    cfg.temperature = doc.at("temperature").get<double>();
    cfg.alpha = doc.at("alpha").get<double>();
    cfg.beta = doc.at("beta").get<double>();
    cfg.ema = doc.at("ema").get<double>();
    cfg.queue_size = doc.at("queue_size").get<int>();
    cfg.k = doc.at("k").get<int>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.head_input = feature_source_from_string(doc.at("head_input").get<std::string>());
    const auto& e = doc.at("encoder");
    cfg.encoder.geometry = {e.at("h").get<int>(), e.at("w").get<int>(), e.at("ch").get<int>()};
    cfg.encoder.conv_channels = e.at("conv_channels").get<std::vector<int>>();
    cfg.encoder.hidden = e.at("hidden").get<std::vector<int>>();
    cfg.encoder.embed_dim = e.at("embed_dim").get<int>();
    cfg.encoder.projection_depth = e.at("projection_depth").get<int>();
    const auto& a = doc.at("augment");
    cfg.augment.crop_scale_min = a.at("crop_scale_min").get<double>();
    cfg.augment.crop_scale_max = a.at("crop_scale_max").get<double>();
    cfg.augment.flip_prob = a.at("flip_prob").get<double>();
    cfg.augment.jitter_prob = a.at("jitter_prob").get<double>();
    cfg.augment.brightness = a.at("brightness").get<double>();
    cfg.augment.contrast = a.at("contrast").get<double>();
    cfg.augment.saturation = a.at("saturation").get<double>();
    cfg.augment.grayscale_prob = a.at("grayscale_prob").get<double>();
  } catch (const json::exception& ex) {
    throw ParseError(std::string("train config: ") + ex.what());
  }
  return cfg;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  Checkpoint ck = checkpoint;
  const bool has_queue = ck.state.queue.capacity() > 0;
  json meta = {{"variant", to_string(ck.config.variant)},
               {"epoch", ck.epoch},
               {"step", ck.state.step},
               {"config", to_json(ck.config)},
               {"rng_state", ck.rng_state},
               {"geo_cluster_model_path", ck.geo_model_path},
               {"geo_cluster_model", ck.geo_model ? json::parse(geo_model_to_json(*ck.geo_model)) : json(nullptr)},
               {"head", ck.state.head ? json{{"in", ck.state.head->in_dim()}, {"out", ck.state.head->out_dim()}}
                                      : json(nullptr)},
               {"queue", has_queue ? json{{"capacity", ck.state.queue.capacity()},
                                          {"dim", ck.state.queue.dim()},
                                          {"fill", ck.state.queue.fill()}}
                                   : json(nullptr)}};
  const std::string meta_text = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  auto arrays = slots(ck);
  Matrix queue_rows;
  if (has_queue && !ck.state.queue.empty()) queue_rows = ck.state.queue.snapshot();
  const bool write_queue = queue_rows.size() > 0;
  put<std::uint64_t>(out, arrays.size() + (write_queue ? 1 : 0));
  for (const auto& [name, m] : arrays) put_array(out, name, *m);
  if (write_queue) put_array(out, "queue", queue_rows);
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + where);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError(where + ": not a checkpoint archive");
  const auto version = get<std::uint32_t>(in, where);
  if (version != kVersion) throw ParseError(where + ": unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = get<std::uint64_t>(in, where);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IoError(where + ": truncated checkpoint");

  Checkpoint ck;
  json meta;
  try {
    meta = json::parse(meta_text);
    ck.config = train_config_from_json(meta.at("config"));
    ck.epoch = meta.at("epoch").get<int>();
    ck.state.step = meta.at("step").get<long>();
    ck.rng_state = meta.at("rng_state").get<std::string>();
    ck.geo_model_path = meta.at("geo_cluster_model_path").get<std::string>();
    if (!meta.at("geo_cluster_model").is_null()) ck.geo_model = geo_model_from_json(meta["geo_cluster_model"].dump());
  } catch (const json::exception& ex) {
    throw ParseError(where + ": bad metadata: " + ex.what());
  }

  // Shape skeleton from the config; values are overwritten below.
  Rng skeleton_rng(0);
  ck.state.query = init_encoder(ck.config.encoder, skeleton_rng);
  ck.velocity_query = zeros_like(ck.state.query);
  const Objective obj = ck.config.objective();
  if (uses_contrastive(ck.config.variant)) ck.state.key = zeros_like(ck.state.query);
  if (obj.head) {
    const auto& h = meta.at("head");
    if (h.is_null()) throw ValidationError(where + ": variant needs a head but none is stored");
    const int in_dim = h.at("in").get<int>();
    const int out_dim = h.at("out").get<int>();
    ck.state.head = Linear{Matrix::Zero(in_dim, out_dim), Matrix::Zero(1, out_dim)};
    ck.velocity_head = zeros_like(*ck.state.head);
  }

  std::map<std::string, Matrix> stored;
  const auto n_arrays = get<std::uint64_t>(in, where);
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    const auto name_len = get<std::uint32_t>(in, where);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = get<std::uint64_t>(in, where);
    const auto cols = get<std::uint64_t>(in, where);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IoError(where + ": truncated array " + name);
    stored.emplace(std::move(name), std::move(m));
  }

  for (auto& [name, slot] : slots(ck)) {
    auto it = stored.find(name);
    if (it == stored.end()) throw ValidationError(where + ": missing array " + name);
    if (it->second.rows() != slot->rows() || it->second.cols() != slot->cols())
      throw ValidationError(where + ": array " + name + " has an unexpected shape");
    *slot = it->second;
  }

  if (uses_contrastive(ck.config.variant)) {
    const auto& q = meta.at("queue");
    ck.state.queue = NegativeQueue(q.at("capacity").get<int>(), q.at("dim").get<int>());
    auto it = stored.find("queue");
    if (it != stored.end()) ck.state.queue.enqueue_batch(it->second);
    if (ck.state.queue.fill() != q.at("fill").get<int>()) throw ValidationError(where + ": queue fill mismatch");
  }
  return ck;
}

}  // namespace geoclr
