#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rhythm {

/// Raised when tensor extents do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles, rank 1 to 5.
///
/// Feature volumes are rank-4 tensors laid out as [C, T, H, W]; convolution
/// weights are rank-5 [C_out, C_in / groups, kT, kH, kW].
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() & noexcept { return data_; }
  const std::vector<double>& values() const& noexcept { return data_; }
  // Moves the storage out of a temporary so range-for over f().values() is safe.
  std::vector<double> values() && noexcept { return std::move(data_); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-4 accessors for [C, T, H, W] volumes.
  double& at(std::size_t c, std::size_t t, std::size_t h, std::size_t w) noexcept {
    return data_[((c * shape_[1] + t) * shape_[2] + h) * shape_[3] + w];
  }
  const double& at(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const noexcept {
    return data_[((c * shape_[1] + t) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data, new extents. Element count must match.
  Tensor reshaped(Shape shape) const;

  /// Channels [begin, begin + count) of a tensor whose leading axis is a channel axis.
  Tensor channel_slice(std::size_t begin, std::size_t count) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor lhs, const Tensor& rhs);
Tensor operator*(double scale, Tensor t);

/// Concatenates along the leading (channel) axis; trailing extents must agree.
Tensor concat_channels(std::span<const Tensor> parts);

/// Largest |a - b| / max(|b|, floor) over all elements.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-300);

void require_rank(const Tensor& t, std::size_t rank, const char* what);

}  // namespace rhythm
