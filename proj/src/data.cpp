#include "geoclr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "geoclr/errors.hpp"
#include "geoclr/npy.hpp"

namespace geoclr {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t DatasetManifest::sample_count() const {
  std::size_t total = 0;
  for (const auto& area : areas) total += area.views.size();
  return total;
}

bool DatasetManifest::labeled() const {
  return !areas.empty() &&
         std::all_of(areas.begin(), areas.end(), [](const AreaRecord& a) { return a.label.has_value(); });
}

void validate(const DatasetManifest& manifest) {
  const auto& g = manifest.geometry;
  if (g.h <= 0 || g.w <= 0 || g.ch <= 0) throw ValidationError("image geometry must be positive");
  std::set<std::string> seen;
  for (const auto& area : manifest.areas) {
    const auto fail = [&](const std::string& what) { throw ValidationError("area " + area.area_id + ": " + what); };
    if (!seen.insert(area.area_id).second) fail("duplicate area_id");
    if (area.views.empty()) fail("no views");
    if (!(area.lat >= -90.0 && area.lat <= 90.0)) fail("lat out of [-90, 90]");
    if (!(area.lon >= -180.0 && area.lon <= 180.0)) fail("lon out of [-180, 180]");
    if (area.label && manifest.n_classes && (*area.label < 0 || *area.label >= *manifest.n_classes))
      fail("label out of range");
    for (std::size_t t = 0; t < area.views.size(); ++t) {
      const auto& v = area.views[t];
      if (v.area_id != area.area_id) fail("view carries area_id " + v.area_id);
      if (v.view_index != static_cast<int>(t) + 1) fail("view_index values must be 1..T without gaps or duplicates");
      if (v.lat != area.lat || v.lon != area.lon) fail("views disagree on lat/lon");
      if (v.label != area.label) fail("views disagree on label");
      if (v.image.geometry != g) fail("image shape does not match manifest geometry");
      if (v.image.data.size() != g.size()) fail("image buffer size mismatch");
      for (float x : v.image.data)
        if (!(x >= 0.0f && x <= 1.0f)) fail("image values must lie in [0, 1]");
    }
  }
}

std::string image_relpath(const GeoSample& sample) {
  return "images/" + sample.area_id + "_v" + std::to_string(sample.view_index) + ".npy";
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path, bool write_images) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (write_images) fs::create_directories(dir / "images");

  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  json header = {{"h", manifest.geometry.h},
                 {"w", manifest.geometry.w},
                 {"ch", manifest.geometry.ch},
                 {"n_classes", manifest.n_classes ? json(*manifest.n_classes) : json(nullptr)},
                 {"format", "npy-f32"},
                 {"provenance", manifest.provenance}};
  out << header.dump() << '\n';
  for (const auto& area : manifest.areas) {
    for (const auto& v : area.views) {
      const std::string rel = image_relpath(v);
      if (write_images) npy::write_image(dir / rel, v.image);
      json rec = {{"area_id", v.area_id},
                  {"view_index", v.view_index},
                  {"timestamp", v.timestamp},
                  {"lat", v.lat},
                  {"lon", v.lon},
                  {"image_path", rel},
                  {"label", v.label ? json(*v.label) : json(nullptr)}};
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

template <typename T>
T field(const json& rec, const char* key, std::size_t line_no) {
  if (!rec.contains(key)) throw ParseError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
  try {
    return rec.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": field '" + key + "' has the wrong type");
  }
}

std::optional<int> optional_int(const json& rec, const char* key, std::size_t line_no) {
  if (!rec.contains(key) || rec.at(key).is_null()) return std::nullopt;
  return field<int>(rec, key, line_no);
}

}  // namespace

static DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");

  DatasetManifest manifest;
  std::unordered_map<std::string, std::size_t> area_pos;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object()) throw ParseError("line " + std::to_string(line_no) + ": expected a JSON object");

    if (!have_header) {
      manifest.geometry = {field<int>(rec, "h", line_no), field<int>(rec, "w", line_no),
                           field<int>(rec, "ch", line_no)};
      manifest.n_classes = optional_int(rec, "n_classes", line_no);
      if (rec.contains("format") && rec["format"] != "npy-f32")
        throw ParseError("line " + std::to_string(line_no) + ": unsupported image format");
      if (rec.contains("provenance")) manifest.provenance = field<std::string>(rec, "provenance", line_no);
      have_header = true;
      continue;
    }

    GeoSample s;
    s.area_id = field<std::string>(rec, "area_id", line_no);
    s.view_index = field<int>(rec, "view_index", line_no);
    s.timestamp = field<std::string>(rec, "timestamp", line_no);
    s.lat = field<double>(rec, "lat", line_no);
    s.lon = field<double>(rec, "lon", line_no);
    s.label = optional_int(rec, "label", line_no);
    const fs::path image_path = dir / field<std::string>(rec, "image_path", line_no);
    if (!fs::exists(image_path)) throw IoError("missing image file: " + image_path.string());
    s.image = npy::read_image(image_path);

    auto [it, inserted] = area_pos.try_emplace(s.area_id, manifest.areas.size());
    if (inserted) {
      AreaRecord area;
      area.area_id = s.area_id;
      area.lat = s.lat;
      area.lon = s.lon;
      area.label = s.label;
      manifest.areas.push_back(std::move(area));
    }
    manifest.areas[it->second].views.push_back(std::move(s));
  }
  if (!have_header) throw ParseError("line 1: missing manifest header");

  for (auto& area : manifest.areas) {
    std::stable_sort(area.views.begin(), area.views.end(),
                     [](const GeoSample& a, const GeoSample& b) { return a.view_index < b.view_index; });
  }
  validate(manifest);
  return manifest;
}

DatasetManifest load_manifest(const fs::path& path) {
  try {
    return read_manifest(path);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void SyntheticSpec::validate() const {
  if (n_areas < 1) throw ConfigError("n_areas must be >= 1");
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (n_geo < 1) throw ConfigError("n_geo must be >= 1");
  if (min_views < 1) throw ConfigError("min_views must be >= 1");
  if (min_views > max_views) throw ConfigError("min_views must not exceed max_views");
  if (geometry.h < 1 || geometry.w < 1 || geometry.ch < 1) throw ConfigError("image geometry must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(temporal_noise >= 0.0)) throw ConfigError("temporal_noise must be non-negative");
  if (!(coord_noise >= 0.0)) throw ConfigError("coord_noise must be non-negative");
}

namespace {

/// Smooth random pattern in roughly [-1, 1]: a sum of three random plane
/// waves per channel.
std::vector<float> random_pattern(const ImageGeometry& g, Rng& rng) {
  std::vector<float> out(g.size(), 0.0f);
  constexpr int kWaves = 3;
  for (int c = 0; c < g.ch; ++c) {
    for (int k = 0; k < kWaves; ++k) {
      const double fx = rng.uniform(-3.0, 3.0);
      const double fy = rng.uniform(-3.0, 3.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
          const double arg = 2.0 * std::numbers::pi * (fx * x / g.w + fy * y / g.h) + phase;
          out[(static_cast<std::size_t>(y) * g.w + x) * g.ch + c] += static_cast<float>(std::sin(arg) / kWaves);
        }
      }
    }
  }
  return out;
}

std::string timestamp_for(int view_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-01T00:00:00Z", 2015 + (view_index - 1) / 12, (view_index - 1) % 12 + 1);
  return buf;
}

struct SyntheticResult {
  DatasetManifest manifest;
  std::vector<int> centers;
};

SyntheticResult generate_impl(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const ImageGeometry g = spec.geometry;

  std::vector<std::pair<double, double>> centers;
  for (int i = 0; i < spec.n_geo; ++i) {
    std::pair<double, double> c;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      c = {rng.uniform(-60.0, 60.0), rng.uniform(-170.0, 170.0)};
      const bool far = std::all_of(centers.begin(), centers.end(), [&](const auto& o) {
        return std::hypot(o.first - c.first, o.second - c.second) >= spec.min_center_separation;
      });
      if (far) break;
    }
    centers.push_back(c);
  }

  std::vector<std::vector<float>> class_templates;
  for (int k = 0; k < spec.n_classes; ++k) class_templates.push_back(random_pattern(g, rng));
  std::vector<std::vector<float>> geo_styles;
  for (int i = 0; i < spec.n_geo; ++i) geo_styles.push_back(random_pattern(g, rng));

  SyntheticResult result;
  DatasetManifest& m = result.manifest;
  m.geometry = g;
  m.n_classes = spec.n_classes;
  m.provenance = "synthetic:seed=" + std::to_string(seed);

  const double shift_brightness = 0.10 * spec.temporal_noise;
  const double shift_tint = 0.05 * spec.temporal_noise;
  const int max_translate = static_cast<int>(std::lround(2.0 * spec.temporal_noise));
  const double pixel_noise = 0.03 * spec.temporal_noise;

  char id_buf[32];
  for (int a = 0; a < spec.n_areas; ++a) {
    const int geo = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(spec.n_geo)));
    AreaRecord area;
    std::snprintf(id_buf, sizeof(id_buf), "area_%05d", a);
    area.area_id = id_buf;
    area.lat = std::clamp(centers[geo].first + spec.coord_noise * rng.normal(), -90.0, 90.0);
    area.lon = std::clamp(centers[geo].second + spec.coord_noise * rng.normal(), -180.0, 180.0);
    const bool tied = rng.bernoulli(spec.rho);
    const int uniform_label = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(spec.n_classes)));
    area.label = tied ? geo % spec.n_classes : uniform_label;
    const int views = spec.min_views + static_cast<int>(rng.uniform_int(
                                           static_cast<std::size_t>(spec.max_views - spec.min_views + 1)));

    const auto offset = random_pattern(g, rng);
    const auto& tmpl = class_templates[static_cast<std::size_t>(*area.label)];
    const auto& style = geo_styles[static_cast<std::size_t>(geo)];
    std::vector<double> base(g.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      base[i] = 0.5 + spec.template_strength * tmpl[i] + spec.area_strength * offset[i] +
                spec.geo_style_strength * style[i];
    }

    for (int t = 1; t <= views; ++t) {
      GeoSample s;
      s.area_id = area.area_id;
      s.view_index = t;
      s.timestamp = timestamp_for(t);
      s.lat = area.lat;
      s.lon = area.lon;
      s.label = area.label;
      s.image = Image(g);

      const double brightness = rng.uniform(-shift_brightness, shift_brightness);
      std::vector<double> tint(static_cast<std::size_t>(g.ch));
      for (auto& v : tint) v = rng.uniform(-shift_tint, shift_tint);
      const int dx = max_translate > 0 ? static_cast<int>(rng.uniform_int(2 * max_translate + 1)) - max_translate : 0;
      const int dy = max_translate > 0 ? static_cast<int>(rng.uniform_int(2 * max_translate + 1)) - max_translate : 0;
      for (int y = 0; y < g.h; ++y) {
        const int sy = ((y - dy) % g.h + g.h) % g.h;
        for (int x = 0; x < g.w; ++x) {
          const int sx = ((x - dx) % g.w + g.w) % g.w;
          for (int c = 0; c < g.ch; ++c) {
            const double v = base[(static_cast<std::size_t>(sy) * g.w + sx) * g.ch + c] + brightness + tint[c] +
                             pixel_noise * rng.normal();
            s.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      area.views.push_back(std::move(s));
    }
    m.areas.push_back(std::move(area));
    result.centers.push_back(geo);
  }
  return result;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  return generate_impl(spec, seed).manifest;
}

std::vector<int> synthetic_geo_centers(const SyntheticSpec& spec, std::uint64_t seed) {
  return generate_impl(spec, seed).centers;
}

std::pair<std::size_t, std::size_t> sample_temporal_pair(const AreaRecord& area, Rng& rng, PairingMode mode) {
  const std::size_t n = area.views.size();
  if (n <= 1) return {0, 0};
  const std::size_t t1 = rng.uniform_int(n);
  if (mode == PairingMode::SameView) return {t1, t1};
  return {t1, rng.uniform_int(n)};
}

std::pair<DatasetManifest, DatasetManifest> split_areas(const DatasetManifest& manifest, double test_fraction,
                                                        std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
  const std::size_t n = manifest.areas.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, 0x5117);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  DatasetManifest train{manifest.geometry, manifest.n_classes, {}, manifest.provenance + ";split=train"};
  DatasetManifest test{manifest.geometry, manifest.n_classes, {}, manifest.provenance + ";split=test"};
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).areas.push_back(manifest.areas[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace geoclr
