#pragma once

#include "geoclr/tensor.hpp"

namespace geoclr {

/// FIFO dictionary of unit-norm key embeddings used as negatives. Backed by
/// a ring buffer; readers only ever see oldest-first snapshots.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(int capacity, int dim);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int fill() const { return fill_; }
  bool empty() const { return fill_ == 0; }

  /// Appends rows in order, evicting the oldest entries on overflow. Throws
  /// ConfigError if more rows than capacity, ValidationError on rows whose
  /// norm is not 1 within 1e-6.
  void enqueue_batch(const Matrix& keys);

  /// Copy of the current contents, oldest first. Throws if empty.
  Matrix snapshot() const;

 private:
  int capacity_ = 0;
  int dim_ = 0;
  int fill_ = 0;
  int head_ = 0;  // next write position
  Matrix storage_;
};

}  // namespace geoclr
