#include "geoclr/geocluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "geoclr/errors.hpp"
#include "geoclr/rng.hpp"

namespace geoclr {

namespace {

double sq_dist(const GeoPoint& a, const GeoPoint& b) {
  const double dlat = a[0] - b[0];
  const double dlon = a[1] - b[1];
  return dlat * dlat + dlon * dlon;
}

int nearest(const std::vector<GeoPoint>& centroids, const GeoPoint& p, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(centroids[c], p);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

std::vector<GeoPoint> kmeans_pp(const std::vector<GeoPoint>& points, int k, Rng& rng) {
  std::vector<GeoPoint> centroids;
  centroids.push_back(points[rng.uniform_int(points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = sq_dist(points[i], centroids[0]);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // all points coincide with chosen centroids
      pick = rng.uniform_int(points.size());
    }
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = std::min(d2[i], sq_dist(points[i], centroids.back()));
  }
  return centroids;
}

}  // namespace

GeoClusterModel fit_kmeans(const std::vector<GeoPoint>& points, int k, std::uint64_t seed, int max_iter,
                           double tol) {
  if (points.empty()) throw ConfigError("k-means needs at least one point");
  if (k < 1) throw ConfigError("k-means needs K >= 1");
  if (points.size() < static_cast<std::size_t>(k))
    throw ConfigError("k-means needs at least K points (K=" + std::to_string(k) + ", points=" +
                      std::to_string(points.size()) + ")");
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(tol >= 0.0)) throw ConfigError("tol must be non-negative");

  Rng rng(seed);
  GeoClusterModel model;
  model.k = k;
  model.seed = seed;
  model.centroids = kmeans_pp(points, k, rng);

  const std::size_t n = points.size();
  std::vector<int> labels(n, -1);
  std::vector<double> dists(n, 0.0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(model.centroids, points[i], &dists[i]);
      changed = changed || c != labels[i];
      labels[i] = c;
      inertia += dists[i];
    }
    model.inertia_trace.push_back(inertia);
    model.iterations = iter + 1;
    if (!changed && iter > 0) break;

    std::vector<GeoPoint> sums(static_cast<std::size_t>(k), GeoPoint{0.0, 0.0});
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[labels[i]][0] += points[i][0];
      sums[labels[i]][1] += points[i][1];
      ++counts[labels[i]];
    }
    double max_move = 0.0;
    std::vector<bool> taken(n, false);
    for (int c = 0; c < k; ++c) {
      GeoPoint next;
      if (counts[c] > 0) {
        next = {sums[c][0] / counts[c], sums[c][1] / counts[c]};
      } else {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (!taken[i] && dists[i] > far_d) {
            far_d = dists[i];
            far = i;
          }
        }
        taken[far] = true;
        next = points[far];
      }
      max_move = std::max(max_move, std::sqrt(sq_dist(next, model.centroids[c])));
      model.centroids[c] = next;
    }
    if (max_move < tol) break;
  }

  model.inertia = inertia_of(model, points);
  if (model.inertia_trace.empty() || model.inertia != model.inertia_trace.back())
    model.inertia_trace.push_back(model.inertia);
  return model;
}

int assign(const GeoClusterModel& model, double lat, double lon) {
  return nearest(model.centroids, GeoPoint{lat, lon});
}

double inertia_of(const GeoClusterModel& model, const std::vector<GeoPoint>& points) {
  double total = 0.0;
  for (const auto& p : points) {
    double d = 0.0;
    nearest(model.centroids, p, &d);
    total += d;
  }
  return total;
}

std::vector<GeoPoint> area_points(const DatasetManifest& manifest) {
  std::vector<GeoPoint> out;
  out.reserve(manifest.areas.size());
  for (const auto& a : manifest.areas) out.push_back({a.lat, a.lon});
  return out;
}

std::vector<int> assign_areas(const GeoClusterModel& model, const DatasetManifest& manifest) {
  std::vector<int> out;
  out.reserve(manifest.areas.size());
  for (const auto& a : manifest.areas) out.push_back(assign(model, a.lat, a.lon));
  return out;
}

ClusterStats cluster_stats(const DatasetManifest& manifest, const GeoClusterModel& model) {
  if (!manifest.labeled()) throw ValidationError("cluster statistics require a labeled manifest");
  std::map<int, std::set<int>> clusters_of_label;
  std::map<int, std::set<int>> labels_of_cluster;
  ClusterStats stats;
  for (int c = 0; c < model.k; ++c) stats.areas_per_cluster[c] = 0;
  for (const auto& a : manifest.areas) {
    const int c = assign(model, a.lat, a.lon);
    clusters_of_label[*a.label].insert(c);
    labels_of_cluster[c].insert(*a.label);
    ++stats.areas_per_cluster[c];
  }
  for (const auto& [label, set] : clusters_of_label) stats.clusters_per_label[label] = static_cast<int>(set.size());
  for (const auto& [c, set] : labels_of_cluster) stats.labels_per_cluster[c] = static_cast<int>(set.size());
  return stats;
}

std::string geo_model_to_json(const GeoClusterModel& model) {
  nlohmann::json centroids = nlohmann::json::array();
  for (const auto& c : model.centroids) centroids.push_back({c[0], c[1]});
  nlohmann::json doc = {{"K", model.k},
                        {"centroids", centroids},
                        {"inertia", model.inertia},
                        {"seed", model.seed},
                        {"iterations", model.iterations}};
  return doc.dump(2);
}

GeoClusterModel geo_model_from_json(const std::string& text) {
  GeoClusterModel model;
  try {
    const auto doc = nlohmann::json::parse(text);
    model.k = doc.at("K").get<int>();
    for (const auto& c : doc.at("centroids")) model.centroids.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    model.inertia = doc.at("inertia").get<double>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("iterations")) model.iterations = doc["iterations"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("geo model: ") + e.what());
  }
  if (model.k < 1 || static_cast<int>(model.centroids.size()) != model.k)
    throw ValidationError("geo model: centroid count does not match K");
  return model;
}

void save_geo_model(const GeoClusterModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << geo_model_to_json(model) << '\n';
}

GeoClusterModel load_geo_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open geo model: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return geo_model_from_json(buf.str());
}

}  // namespace geoclr
