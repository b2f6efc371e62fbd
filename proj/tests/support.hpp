#pragma once

// Shared fixtures and independent reference implementations for the unit
// tests. Nothing here calls into the code under test except to build inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "geoclr/data.hpp"
#include "geoclr/model.hpp"
#include "geoclr/rng.hpp"
#include "geoclr/tensor.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("geoclr_test_" + tag + "_" + std::to_string(counter()++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  fs::path path_;
};

inline geoclr::Matrix random_matrix(geoclr::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  geoclr::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline geoclr::Matrix random_unit_rows(geoclr::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  geoclr::Matrix m = random_matrix(rng, rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).norm();
  return m;
}

inline geoclr::Matrix random_pixels(geoclr::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  geoclr::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

/// Small labeled synthetic dataset for fast training tests.
inline geoclr::SyntheticSpec small_spec(int areas = 120, int views = 3) {
  geoclr::SyntheticSpec spec;
  spec.n_areas = areas;
  spec.n_classes = 4;
  spec.n_geo = 4;
  spec.min_views = spec.max_views = views;
  spec.geometry = {8, 8, 3};
  return spec;
}

/// Encoder config matching small_spec images.
inline geoclr::EncoderConfig small_encoder(int embed = 8) {
  geoclr::EncoderConfig cfg;
  cfg.geometry = {8, 8, 3};
  cfg.hidden = {16, 12};
  cfg.embed_dim = embed;
  return cfg;
}

/// Largest relative difference between an analytic gradient and central
/// differences of `f` over every entry of `param`.
inline double max_fd_error(geoclr::Matrix& param, const geoclr::Matrix& analytic, const std::function<double()>& f,
                           double step = 1e-5) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double orig = param.data()[i];
    param.data()[i] = orig + step;
    const double up = f();
    param.data()[i] = orig - step;
    const double down = f();
    param.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double exact = analytic.data()[i];
    const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
    // Entries where both sides are at the level of finite-difference noise
    // carry no signal.
    if (std::abs(numeric - exact) < 1e-9) continue;
    worst = std::max(worst, std::abs(numeric - exact) / scale);
  }
  return worst;
}

/// Reference FIFO with the same contract as NegativeQueue.
class QueueOracle {
 public:
  explicit QueueOracle(std::size_t capacity) : capacity_(capacity) {}
  void enqueue(const geoclr::Matrix& keys) {
    for (Eigen::Index r = 0; r < keys.rows(); ++r) {
      rows_.push_back(keys.row(r));
      if (rows_.size() > capacity_) rows_.pop_front();
    }
  }
  std::size_t fill() const { return rows_.size(); }
  const std::deque<Eigen::RowVectorXd>& rows() const { return rows_; }

 private:
  std::size_t capacity_;
  std::deque<Eigen::RowVectorXd> rows_;
};

/// Exhaustive k-means optimum: minimum over every assignment of points to K
/// labels of the within-group sum of squares (empty groups allowed, which
/// cannot beat a non-empty split when |points| >= K).
inline double brute_force_kmeans(const std::vector<std::array<double, 2>>& pts, int k) {
  const std::size_t n = pts.size();
  std::vector<int> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
      double sx = 0, sy = 0;
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) {
          sx += pts[i][0];
          sy += pts[i][1];
          ++cnt;
        }
      if (cnt == 0) continue;
      const double mx = sx / cnt, my = sy / cnt;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) total += (pts[i][0] - mx) * (pts[i][0] - mx) + (pts[i][1] - my) * (pts[i][1] - my);
    }
    best = std::min(best, total);
    std::size_t pos = 0;
    while (pos < n && ++labels[pos] == k) labels[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

/// Chi-square critical values at significance 0.001 for 1..9 degrees of freedom.
inline double chi2_critical_0001(int dof) {
  static const double table[] = {10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322, 26.124, 27.877};
  return table[dof - 1];
}

}  // namespace testing
