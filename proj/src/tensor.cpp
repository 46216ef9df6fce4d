#include "rhythm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rhythm {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > Tensor::kMaxRank) {
    throw ShapeError("tensor rank must be in [1, 5], got " + std::to_string(shape.size()));
  }
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be >= 1: " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::channel_slice(std::size_t begin, std::size_t count) const {
  if (rank() < 1 || begin + count > shape_[0] || count == 0) {
    throw ShapeError("channel slice out of range for " + shape_to_string(shape_));
  }
  const std::size_t inner = data_.size() / shape_[0];
  Shape out_shape = shape_;
  out_shape[0] = count;
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("cannot add " + shape_to_string(other.shape_) + " to " + shape_to_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

Tensor operator+(Tensor lhs, const Tensor& rhs) {
  lhs += rhs;
  return lhs;
}

Tensor operator*(double scale, Tensor t) {
  t *= scale;
  return t;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape shape = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("concat_channels: trailing extents differ: " + shape_to_string(p.shape()) + " vs " +
                       shape_to_string(shape));
    }
    channels += p.dim(0);
  }
  shape[0] = channels;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor(std::move(shape), std::move(out));
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(b[i]), floor);
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace rhythm
