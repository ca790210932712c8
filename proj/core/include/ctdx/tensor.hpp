#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctdx {

// Dense float32 tensor, row-major, shapes up to 4-d.
// Convention for feature maps: [N, C, H, W].
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from(std::vector<int> shape, std::vector<float> values);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // [N,C,H,W] addressing.
  std::int64_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  float& at4(int n, int c, int h, int w) { return data_[static_cast<size_t>(idx4(n, c, h, w))]; }
  float at4(int n, int c, int h, int w) const { return data_[static_cast<size_t>(idx4(n, c, h, w))]; }

  // [N,K] addressing.
  std::int64_t idx2(int n, int k) const { return static_cast<std::int64_t>(n) * shape_[1] + k; }
  float& at2(int n, int k) { return data_[static_cast<size_t>(idx2(n, k))]; }
  float at2(int n, int k) const { return data_[static_cast<size_t>(idx2(n, k))]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(float value);
  float min_value() const;
  float max_value() const;
  double sum() const;

private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace ctdx
