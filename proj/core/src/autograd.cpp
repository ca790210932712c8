#include "ctdx/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace ctdx::ag {

namespace {

Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Tensor& ensure_grad(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void backward(const Var& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  // Post-order DFS with an explicit stack, then reverse sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  ensure_grad(*root)[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
  }
}

double scalar(const Var& v) {
  if (v->value.size() != 1) throw std::invalid_argument("scalar: tensor is not size 1");
  return static_cast<double>(v->value[0]);
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor v(a->value.shape());
  const std::int64_t n = v.size();
  for (std::int64_t i = 0; i < n; ++i) v[i] = a->value[i] + b->value[i];
  auto out = make_node(std::move(v), {a, b});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        Tensor& g = ensure_grad(*p);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    };
  return out;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor v(a->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = a->value[i] - b->value[i];
  auto out = make_node(std::move(v), {a, b});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      if (a.requires_grad) {
        Tensor& g = ensure_grad(a);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
      if (b.requires_grad) {
        Tensor& g = ensure_grad(b);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
      }
    };
  return out;
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  Tensor v(a->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * b->value[i];
  auto out = make_node(std::move(v), {a, b});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      if (a.requires_grad) {
        Tensor& g = ensure_grad(a);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * b.value[i];
      }
      if (b.requires_grad) {
        Tensor& g = ensure_grad(b);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * a.value[i];
      }
    };
  return out;
}

Var scale(const Var& x, double c) {
  Tensor v(x->value.shape());
  const float cf = static_cast<float>(c);
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = x->value[i] * cf;
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [cf](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * cf;
    };
  return out;
}

Var add_const(const Var& x, double c) {
  Tensor v(x->value.shape());
  const float cf = static_cast<float>(c);
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = x->value[i] + cf;
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  return out;
}

Var relu(const Var& x) {
  Tensor v(x->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = x->value[i] > 0.0f ? x->value[i] : 0.0f;
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      for (std::int64_t i = 0; i < self.grad.size(); ++i)
        if (x.value[i] > 0.0f) g[i] += self.grad[i];
    };
  return out;
}

Var sigmoid(const Var& x) {
  Tensor v(x->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) {
    float z = x->value[i];
    v[i] = z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
  }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) {
        float s = self.value[i];
        g[i] += self.grad[i] * s * (1.0f - s);
      }
    };
  return out;
}

Var logv(const Var& x) {
  Tensor v(x->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = std::log(x->value[i]);
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / x.value[i];
    };
  return out;
}

Var sqrtv(const Var& x) {
  Tensor v(x->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(x->value[i]);
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) {
        float s = self.value[i];
        if (s > 0.0f) g[i] += self.grad[i] * 0.5f / s;
      }
    };
  return out;
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor v(x->value.shape());
  const float flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  for (std::int64_t i = 0; i < v.size(); ++i)
    v[i] = std::min(fhi, std::max(flo, x->value[i]));
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [flo, fhi](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      for (std::int64_t i = 0; i < self.grad.size(); ++i)
        if (x.value[i] > flo && x.value[i] < fhi) g[i] += self.grad[i];
    };
  return out;
}

Var sum(const Var& x) {
  Tensor v({1});
  double s = 0.0;
  for (std::int64_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  v[0] = static_cast<float>(s);
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      float gs = self.grad[0];
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gs;
    };
  return out;
}

Var mean(const Var& x) {
  if (x->value.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x->value.size()));
}

Var divide(const Var& a, const Var& b) {
  check_same_shape(a, b, "divide");
  Tensor v(a->value.shape());
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = a->value[i] / b->value[i];
  auto out = make_node(std::move(v), {a, b});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      if (a.requires_grad) {
        Tensor& g = ensure_grad(a);
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / b.value[i];
      }
      if (b.requires_grad) {
        Tensor& g = ensure_grad(b);
        for (std::int64_t i = 0; i < self.grad.size(); ++i)
          g[i] -= self.grad[i] * a.value[i] / (b.value[i] * b.value[i]);
      }
    };
  return out;
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto& s0 = xs[0]->value.shape();
  if (s0.size() != 4) throw std::invalid_argument("concat_channels: expects [N,C,H,W]");
  int n = s0[0], h = s0[2], w = s0[3], ctot = 0;
  for (const auto& x : xs) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || s[0] != n || s[2] != h || s[3] != w)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    ctot += s[1];
  }
  Tensor v({n, ctot, h, w});
  std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    int coff = 0;
    for (const auto& x : xs) {
      int c = x->value.dim(1);
      const float* src = x->value.data() + static_cast<std::int64_t>(b) * c * plane;
      float* dst = v.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
      std::copy(src, src + static_cast<std::int64_t>(c) * plane, dst);
      coff += c;
    }
  }
  auto out = make_node(std::move(v), xs);
  if (out->requires_grad)
    out->backprop = [n, ctot, plane](Node& self) {
      for (int b = 0; b < n; ++b) {
        int coff = 0;
        for (auto& p : self.parents) {
          int c = p->value.dim(1);
          if (p->requires_grad) {
            Tensor& g = ensure_grad(*p);
            const float* src = self.grad.data() + (static_cast<std::int64_t>(b) * ctot + coff) * plane;
            float* dst = g.data() + static_cast<std::int64_t>(b) * c * plane;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * plane; ++i) dst[i] += src[i];
          }
          coff += c;
        }
      }
    };
  return out;
}

Var slice_channels(const Var& x, int c0, int c1) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("slice_channels: expects [N,C,H,W]");
  if (c0 < 0 || c1 > s[1] || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
  int n = s[0], c = c1 - c0, h = s[2], w = s[3];
  std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor v({n, c, h, w});
  for (int b = 0; b < n; ++b) {
    const float* src = x->value.data() + (static_cast<std::int64_t>(b) * s[1] + c0) * plane;
    float* dst = v.data() + static_cast<std::int64_t>(b) * c * plane;
    std::copy(src, src + static_cast<std::int64_t>(c) * plane, dst);
  }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [c0, c](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      int n = x.value.dim(0), cin = x.value.dim(1);
      std::int64_t plane = static_cast<std::int64_t>(x.value.dim(2)) * x.value.dim(3);
      for (int b = 0; b < n; ++b) {
        const float* src = self.grad.data() + static_cast<std::int64_t>(b) * c * plane;
        float* dst = g.data() + (static_cast<std::int64_t>(b) * cin + c0) * plane;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * plane; ++i) dst[i] += src[i];
      }
    };
  return out;
}

Var slice_batch(const Var& x, int n0, int n1) {
  const auto& s = x->value.shape();
  if (s.empty()) throw std::invalid_argument("slice_batch: scalar input");
  if (n0 < 0 || n1 > s[0] || n0 >= n1) throw std::invalid_argument("slice_batch: bad range");
  std::int64_t per = x->value.size() / s[0];
  std::vector<int> os = s;
  os[0] = n1 - n0;
  Tensor v(os);
  std::copy(x->value.data() + n0 * per, x->value.data() + n1 * per, v.data());
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [n0, per](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      float* dst = g.data() + n0 * per;
      for (std::int64_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    };
  return out;
}

Var matrix_row(const Var& m, int row) {
  const auto& s = m->value.shape();
  if (s.size() != 2 || row < 0 || row >= s[0])
    throw std::invalid_argument("matrix_row: bad row");
  const int k = s[1];
  Tensor v({1, k});
  std::copy(m->value.data() + static_cast<std::int64_t>(row) * k,
            m->value.data() + static_cast<std::int64_t>(row + 1) * k, v.data());
  auto out = make_node(std::move(v), {m});
  if (out->requires_grad)
    out->backprop = [row, k](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      float* dst = g.data() + static_cast<std::int64_t>(row) * k;
      for (int i = 0; i < k; ++i) dst[i] += self.grad[i];
    };
  return out;
}

Var broadcast_rows(const Var& row, int n) {
  const auto& s = row->value.shape();
  if (s.size() != 2 || s[0] != 1) throw std::invalid_argument("broadcast_rows: expects [1,K]");
  if (n < 1) throw std::invalid_argument("broadcast_rows: bad count");
  const int k = s[1];
  Tensor v({n, k});
  for (int i = 0; i < n; ++i)
    std::copy(row->value.data(), row->value.data() + k, v.data() + static_cast<std::int64_t>(i) * k);
  auto out = make_node(std::move(v), {row});
  if (out->requires_grad)
    out->backprop = [n, k](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) g[j] += self.grad[static_cast<std::int64_t>(i) * k + j];
    };
  return out;
}

Var sum_channels(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("sum_channels: expects [N,C,H,W]");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor v({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    float* dst = v.data() + n * plane;
    for (int c = 0; c < C; ++c) {
      const float* src = x->value.data() + x->value.idx4(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [plane](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      const int N = x.value.dim(0), C = x.value.dim(1);
      for (int n = 0; n < N; ++n) {
        const float* src = self.grad.data() + n * plane;
        for (int c = 0; c < C; ++c) {
          float* dst = g.data() + x.value.idx4(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
      }
    };
  return out;
}

Var reshape(const Var& x, std::vector<int> shape) {
  if (shape_numel(shape) != x->value.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor v = x->value;
  v = Tensor::from(std::move(shape), std::vector<float>(v.data(), v.data() + v.size()));
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  return out;
}

}  // namespace ctdx::ag
