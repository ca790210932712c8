#include "ctdx/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace ctdx {

ag::Var ParamStore::add(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  ag::Var v = ag::leaf(std::move(init), true);
  v->name = name;
  params_.push_back(v);
  by_name_.emplace(name, v);
  return v;
}

ag::Var ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) {
    if (p->grad.size() == p->value.size())
      p->grad.fill(0.0f);
  }
}

Tensor he_normal_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.normal() * sd);
  return t;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in_c, int out_c, int kernel,
               int stride, int padding, int dilation, Rng& rng)
    : out_c_(out_c), stride_(stride), padding_(padding), dilation_(dilation) {
  if (in_c < 1 || out_c < 1 || kernel < 1) throw std::invalid_argument("Conv2d: bad geometry");
  int fan_in = in_c * kernel * kernel;
  w_ = store.add(name + ".w", he_normal_init({out_c, in_c, kernel, kernel}, fan_in, rng));
  b_ = store.add(name + ".b", Tensor::zeros({out_c}));
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  return ag::conv2d(x, w_, b_, stride_, padding_, dilation_);
}

Linear::Linear(ParamStore& store, const std::string& name, int in_f, int out_f, Rng& rng) {
  if (in_f < 1 || out_f < 1) throw std::invalid_argument("Linear: bad geometry");
  w_ = store.add(name + ".w", he_normal_init({out_f, in_f}, in_f, rng));
  b_ = store.add(name + ".b", Tensor::zeros({out_f}));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, w_, b_); }

SeBlock::SeBlock(ParamStore& store, const std::string& name, int channels, int reduction, Rng& rng)
    : channels_(channels) {
  if (channels < 1 || reduction < 1) throw std::invalid_argument("SeBlock: bad geometry");
  int hidden = (channels + reduction - 1) / reduction;  // rounded up, never 0
  fc1_ = Linear(store, name + ".fc1", channels, hidden, rng);
  fc2_ = Linear(store, name + ".fc2", hidden, channels, rng);
}

ag::Var SeBlock::operator()(const ag::Var& x) const {
  if (x->value.ndim() != 4 || x->value.dim(1) != channels_)
    throw std::invalid_argument("SeBlock: channel count mismatch");
  ag::Var d = ag::global_avg_pool(x);
  ag::Var s = ag::sigmoid(fc2_(ag::relu(fc1_(d))));
  return ag::channel_scale(x, s);
}

}  // namespace ctdx
