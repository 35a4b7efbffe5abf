#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scws {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned allocation. Vectorized kernels pick their summation order
/// from the buffer address, so uniform alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Raised when tensor shapes disagree. The message names the offending dimension.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Feature maps use N,C,H,W order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  /// Same data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Unchecked 4-D accessors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double value);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  double sum() const;
  double min() const;
  double max() const;
  bool all_finite() const;

 private:
  Shape shape_;
  Storage data_;
};

std::size_t shape_numel(const Shape& shape);

/// Throws ShapeError unless `t` has the given rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

}  // namespace scws
