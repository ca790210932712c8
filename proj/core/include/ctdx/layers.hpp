#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctdx/autograd.hpp"
#include "ctdx/rng.hpp"

namespace ctdx {

// Named trainable parameters in registration order. Registration order is the
// optimizer update order, so it is part of run reproducibility.
class ParamStore {
public:
  ag::Var add(const std::string& name, Tensor init);
  const std::vector<ag::Var>& all() const { return params_; }
  ag::Var find(const std::string& name) const;
  void zero_grads();

private:
  std::vector<ag::Var> params_;
  std::unordered_map<std::string, ag::Var> by_name_;
};

Tensor he_normal_init(std::vector<int> shape, int fan_in, Rng& rng);

class Conv2d {
public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in_c, int out_c, int kernel,
         int stride, int padding, int dilation, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  int out_channels() const { return out_c_; }
  ag::Var weight() const { return w_; }
  ag::Var bias() const { return b_; }

private:
  int out_c_ = 0, stride_ = 1, padding_ = 0, dilation_ = 1;
  ag::Var w_, b_;
};

class Linear {
public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in_f, int out_f, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  ag::Var weight() const { return w_; }
  ag::Var bias() const { return b_; }

private:
  ag::Var w_, b_;
};

// Squeeze-and-excitation gate: pooled descriptor -> bottleneck -> per-channel
// sigmoid factors rescaling the map.
class SeBlock {
public:
  SeBlock() = default;
  SeBlock(ParamStore& store, const std::string& name, int channels, int reduction, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  int channels() const { return channels_; }
  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

private:
  int channels_ = 0;
  Linear fc1_, fc2_;
};

}  // namespace ctdx
