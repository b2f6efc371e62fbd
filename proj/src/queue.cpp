#include "geoclr/queue.hpp"

#include <cmath>
#include <string>

#include "geoclr/errors.hpp"

namespace geoclr {

NegativeQueue::NegativeQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
  if (capacity < 1) throw ConfigError("queue capacity must be >= 1");
  if (dim < 1) throw ConfigError("queue dimension must be >= 1");
  storage_ = Matrix::Zero(capacity, dim);
}

void NegativeQueue::enqueue_batch(const Matrix& keys) {
  if (keys.rows() > capacity_)
    throw ConfigError("cannot enqueue " + std::to_string(keys.rows()) + " keys into a queue of capacity " +
                      std::to_string(capacity_));
  if (keys.cols() != dim_) throw ShapeError("key dimension does not match queue dimension");
  for (Eigen::Index r = 0; r < keys.rows(); ++r) {
    const double norm = keys.row(r).norm();
    if (!(std::abs(norm - 1.0) <= 1e-6))
      throw ValidationError("queue key row " + std::to_string(r) + " has norm " + std::to_string(norm));
  }
  for (Eigen::Index r = 0; r < keys.rows(); ++r) {
    storage_.row(head_) = keys.row(r);
    head_ = (head_ + 1) % capacity_;
  }
  fill_ = std::min<int>(fill_ + static_cast<int>(keys.rows()), capacity_);
}

Matrix NegativeQueue::snapshot() const {
  if (fill_ == 0) throw ValidationError("negative queue is empty; enqueue keys before reading negatives");
  Matrix out(fill_, dim_);
  const int start = (head_ - fill_ + capacity_) % capacity_;
  for (int i = 0; i < fill_; ++i) out.row(i) = storage_.row((start + i) % capacity_);
  return out;
}

}  // namespace geoclr
