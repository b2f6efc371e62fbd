#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geoclr/image.hpp"
#include "geoclr/rng.hpp"

namespace geoclr {

/// One image of an area. `view_index` is 1-based, as in the manifest file.
struct GeoSample {
  std::string area_id;
  int view_index = 1;
  std::string timestamp;
  Image image;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<int> label;

  bool operator==(const GeoSample&) const = default;
};

/// A geo-location and its temporal stack of spatially aligned images.
struct AreaRecord {
  std::string area_id;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<int> label;
  std::vector<GeoSample> views;

  std::size_t num_views() const { return views.size(); }
  bool operator==(const AreaRecord&) const = default;
};

struct DatasetManifest {
  ImageGeometry geometry;
  std::optional<int> n_classes;
  std::vector<AreaRecord> areas;
  std::string provenance;

  std::size_t sample_count() const;
  /// True when every area carries a label.
  bool labeled() const;

  bool operator==(const DatasetManifest&) const = default;
};

/// Checks every AreaRecord/GeoSample invariant; throws ValidationError naming
/// the offending area.
void validate(const DatasetManifest& manifest);

/// Parses a JSON-lines manifest and loads the referenced images. Image paths
/// are resolved relative to the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes `manifest` as JSON lines. With `write_images`, each image is stored
/// as `images/<area_id>_v<view>.npy` next to the manifest; otherwise those
/// files are expected to exist already (e.g. split manifests sharing images).
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path,
                    bool write_images = true);

/// Relative path used for a sample's image file.
std::string image_relpath(const GeoSample& sample);

struct SyntheticSpec {
  int n_areas = 2000;
  int n_classes = 8;
  int n_geo = 8;
  int min_views = 3;
  int max_views = 3;
  ImageGeometry geometry{32, 32, 3};
  /// Probability that an area's class is the fixed class of its geo-center.
  double rho = 0.9;
  /// Scales the per-view nuisance: brightness/tint shift, translation, noise.
  double temporal_noise = 1.0;
  /// Std-dev (degrees) of area coordinates around their geo-center.
  double coord_noise = 2.0;
  /// Minimum pairwise distance (degrees) between geo-centers, best effort.
  double min_center_separation = 20.0;
  double template_strength = 0.07;
  double area_strength = 0.20;
  double geo_style_strength = 0.05;

  void validate() const;
};

/// Deterministic desk-scale stand-in for a geo-temporal remote sensing
/// dataset. Geo-centers are sampled on the (lat, lon) plane; each area sits
/// near a center and takes that center's class with probability rho (else a
/// uniform class). Images are a class template plus an area offset plus a
/// regional tint, and every view adds its own brightness shift, translation
/// and pixel noise.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Geo-center index of each generated area (same order as `areas`). Exposed
/// for tests that need the ground-truth grouping.
std::vector<int> synthetic_geo_centers(const SyntheticSpec& spec, std::uint64_t seed);

enum class PairingMode { SameView, Temporal };

/// Draws the (query, key) view positions for one area, 0-based into
/// `area.views`. SameView returns t2 == t1; Temporal draws t2 independently,
/// so t1 == t2 is allowed. Single-view areas return (0, 0) without touching
/// the rng, so both modes consume identical streams on such data.
std::pair<std::size_t, std::size_t> sample_temporal_pair(const AreaRecord& area, Rng& rng, PairingMode mode);

/// Deterministically partitions areas into (train, test) with round(fraction
/// * n) areas in test.
std::pair<DatasetManifest, DatasetManifest> split_areas(const DatasetManifest& manifest, double test_fraction,
                                                        std::uint64_t seed);

}  // namespace geoclr
