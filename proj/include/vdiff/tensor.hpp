#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdiff {

/// Dense row-major tensor of doubles with explicit shape metadata.
/// Arithmetic on tensors is deterministic: loops run in a fixed order and
/// there is no broadcasting beyond scalar-with-tensor.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw std::invalid_argument("tensor: data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str());
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& buffer() { return data_; }
  const std::vector<double>& buffer() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Multi-index access for the common ranks.
  double& at2(int i, int j) { return data_[flat2(i, j)]; }
  double at2(int i, int j) const { return data_[flat2(i, j)]; }
  double& at3(int i, int j, int k) { return data_[flat3(i, j, k)]; }
  double at3(int i, int j, int k) const { return data_[flat3(i, j, k)]; }
  double& at4(int i, int j, int k, int l) { return data_[flat4(i, j, k, l)]; }
  double at4(int i, int j, int k, int l) const { return data_[flat4(i, j, k, l)]; }

  std::size_t flat2(int i, int j) const {
    return static_cast<std::size_t>((static_cast<std::int64_t>(i) * shape_[1]) + j);
  }
  std::size_t flat3(int i, int j, int k) const {
    return static_cast<std::size_t>(((static_cast<std::int64_t>(i) * shape_[1]) + j) * shape_[2] + k);
  }
  std::size_t flat4(int i, int j, int k, int l) const {
    return static_cast<std::size_t>(
        (((static_cast<std::int64_t>(i) * shape_[1]) + j) * shape_[2] + k) * shape_[3] + l);
  }

  Tensor reshaped(std::vector<int> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
      throw std::invalid_argument("reshape: element count mismatch, " + shape_str() + " -> " +
                                  shape_str_of(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const { return shape_str_of(shape_); }

  static std::string shape_str_of(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }

  static std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str_of(shape));
      n *= e;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

}  // namespace vdiff
