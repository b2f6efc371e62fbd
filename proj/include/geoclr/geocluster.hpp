#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geoclr/data.hpp"

namespace geoclr {

/// (lat, lon) in degrees.
using GeoPoint = std::array<double, 2>;

/// K centroids over raw (lat, lon) degree space. Distances are squared
/// Euclidean in degrees; longitude wraparound at +-180 is not modelled.
/// Cluster ids are 0-based.
struct GeoClusterModel {
  int k = 0;
  std::vector<GeoPoint> centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  /// Inertia after every assignment step; non-increasing.
  std::vector<double> inertia_trace;
};

/// k-means++ seeding followed by Lloyd iterations. Stops when the largest
/// centroid displacement is below `tol`, assignments stop changing, or
/// `max_iter` is reached. An emptied cluster is reseeded at the point
/// farthest from its assigned centroid.
GeoClusterModel fit_kmeans(const std::vector<GeoPoint>& points, int k, std::uint64_t seed, int max_iter = 300,
                           double tol = 1e-9);

/// Nearest centroid; ties go to the lowest index.
int assign(const GeoClusterModel& model, double lat, double lon);

/// Sum of squared distances to the nearest centroid.
double inertia_of(const GeoClusterModel& model, const std::vector<GeoPoint>& points);

/// One point per area.
std::vector<GeoPoint> area_points(const DatasetManifest& manifest);

std::vector<int> assign_areas(const GeoClusterModel& model, const DatasetManifest& manifest);

struct ClusterStats {
  /// class -> number of distinct clusters containing it
  std::map<int, int> clusters_per_label;
  /// cluster -> number of distinct classes among its areas (populated clusters only)
  std::map<int, int> labels_per_cluster;
  /// cluster -> number of areas (every cluster, including empty ones)
  std::map<int, int> areas_per_cluster;
};

ClusterStats cluster_stats(const DatasetManifest& manifest, const GeoClusterModel& model);

/// JSON document {"K", "centroids", "inertia", "seed", "iterations"}.
std::string geo_model_to_json(const GeoClusterModel& model);
GeoClusterModel geo_model_from_json(const std::string& text);
void save_geo_model(const GeoClusterModel& model, const std::filesystem::path& path);
GeoClusterModel load_geo_model(const std::filesystem::path& path);

}  // namespace geoclr
