#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

#include "ctdx/autograd.hpp"

namespace ctdx::ag {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  int eff = dil * (k - 1) + 1;
  return (in + 2 * pad - eff) / stride + 1;
}

void im2col(const float* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dil, int OH, int OW, float* cols) {
  const std::int64_t ohw = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* row = cols + (((static_cast<std::int64_t>(c) * kh + ki) * kw + kj)) * ohw;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + ki * dil;
          float* dst = row + static_cast<std::int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(OW));
            continue;
          }
          const float* src = x + (static_cast<std::int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + kj * dil;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int dil, int OH, int OW, float* x) {
  const std::int64_t ohw = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* row = cols + (((static_cast<std::int64_t>(c) * kh + ki) * kw + kj)) * ohw;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + ki * dil;
          if (ih < 0 || ih >= H) continue;
          float* dst = x + (static_cast<std::int64_t>(c) * H + ih) * W;
          const float* src = row + static_cast<std::int64_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + kj * dil;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding, int dilation) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: expects x [N,C,H,W], w [O,C,kh,kw]");
  if (xs[1] != ws[1]) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || dilation < 1 || padding < 0) throw std::invalid_argument("conv2d: bad geometry");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int O = ws[0], KH = ws[2], KW = ws[3];
  if (b->value.ndim() != 1 || b->value.dim(0) != O)
    throw std::invalid_argument("conv2d: bias shape mismatch");
  const int OH = conv_out_dim(H, KH, stride, padding, dilation);
  const int OW = conv_out_dim(W, KW, stride, padding, dilation);
  if (OH < 1 || OW < 1) throw std::invalid_argument("conv2d: output would be empty");
  const std::int64_t K = static_cast<std::int64_t>(C) * KH * KW;
  const std::int64_t OHW = static_cast<std::int64_t>(OH) * OW;

  Tensor v({N, O, OH, OW});
  std::vector<float> cols(static_cast<size_t>(K * OHW));
  CMapRM wm(w->value.data(), O, K);
  for (int n = 0; n < N; ++n) {
    im2col(x->value.data() + x->value.idx4(n, 0, 0, 0), C, H, W, KH, KW, stride, padding,
           dilation, OH, OW, cols.data());
    CMapRM cm(cols.data(), K, OHW);
    MapRM om(v.data() + v.idx4(n, 0, 0, 0), O, OHW);
    om.noalias() = wm * cm;
    for (int o = 0; o < O; ++o) om.row(o).array() += b->value[o];
  }

  auto out = make_node(std::move(v), {x, w, b});
  if (out->requires_grad)
    out->backprop = [stride, padding, dilation](Node& self) {
      Node& x = *self.parents[0];
      Node& w = *self.parents[1];
      Node& b = *self.parents[2];
      const auto& xs = x.value.shape();
      const auto& ws = w.value.shape();
      const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
      const int O = ws[0], KH = ws[2], KW = ws[3];
      const int OH = self.value.dim(2), OW = self.value.dim(3);
      const std::int64_t K = static_cast<std::int64_t>(C) * KH * KW;
      const std::int64_t OHW = static_cast<std::int64_t>(OH) * OW;
      CMapRM wm(w.value.data(), O, K);
      std::vector<float> cols(static_cast<size_t>(K * OHW));
      for (int n = 0; n < N; ++n) {
        CMapRM gom(self.grad.data() + self.grad.idx4(n, 0, 0, 0), O, OHW);
        if (w.requires_grad || b.requires_grad) {
          im2col(x.value.data() + x.value.idx4(n, 0, 0, 0), C, H, W, KH, KW, stride,
                 padding, dilation, OH, OW, cols.data());
          CMapRM cm(cols.data(), K, OHW);
          if (w.requires_grad) {
            MapRM gwm(ensure_grad(w).data(), O, K);
            gwm.noalias() += gom * cm.transpose();
          }
          if (b.requires_grad) {
            Tensor& gb = ensure_grad(b);
            for (int o = 0; o < O; ++o) gb[o] += gom.row(o).sum();
          }
        }
        if (x.requires_grad) {
          MapRM cm(cols.data(), K, OHW);
          cm.noalias() = wm.transpose() * gom;
          col2im_add(cols.data(), C, H, W, KH, KW, stride, padding, dilation, OH, OW,
                     ensure_grad(x).data() + x.value.idx4(n, 0, 0, 0));
        }
      }
    };
  return out;
}

Var maxpool2x2(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("maxpool2x2: expects [N,C,H,W]");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  if (H < 2 || W < 2) throw std::invalid_argument("maxpool2x2: spatial size below 2");
  const int OH = H / 2, OW = W / 2;
  Tensor v({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(v.size()));
  std::int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          std::int64_t base = x->value.idx4(n, c, oh * 2, ow * 2);
          std::int64_t best = base;
          float bv = x->value[base];
          // fixed candidate order so ties break deterministically
          if (x->value[base + 1] > bv) { bv = x->value[base + 1]; best = base + 1; }
          if (x->value[base + W] > bv) { bv = x->value[base + W]; best = base + W; }
          if (x->value[base + W + 1] > bv) { bv = x->value[base + W + 1]; best = base + W + 1; }
          v[oi] = bv;
          (*argmax)[static_cast<size_t>(oi)] = best;
        }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [argmax](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      for (std::int64_t i = 0; i < self.grad.size(); ++i)
        g[(*argmax)[static_cast<size_t>(i)]] += self.grad[i];
    };
  return out;
}

Var global_avg_pool(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avg_pool: expects [N,C,H,W]");
  const int N = s[0], C = s[1];
  const std::int64_t plane = static_cast<std::int64_t>(s[2]) * s[3];
  Tensor v({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x->value.data() + x->value.idx4(n, c, 0, 0);
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      v.at2(n, c) = static_cast<float>(acc / static_cast<double>(plane));
    }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [plane](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      const int N = self.value.dim(0), C = self.value.dim(1);
      const float inv = 1.0f / static_cast<float>(plane);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          float gs = self.grad.at2(n, c) * inv;
          float* p = g.data() + x.value.idx4(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) p[i] += gs;
        }
    };
  return out;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("linear: expects x [N,K], w [M,K]");
  const int N = xs[0], K = xs[1], M = ws[0];
  if (b->value.ndim() != 1 || b->value.dim(0) != M)
    throw std::invalid_argument("linear: bias shape mismatch");
  Tensor v({N, M});
  CMapRM xm(x->value.data(), N, K);
  CMapRM wm(w->value.data(), M, K);
  MapRM om(v.data(), N, M);
  om.noalias() = xm * wm.transpose();
  for (int m = 0; m < M; ++m) om.col(m).array() += b->value[m];
  auto out = make_node(std::move(v), {x, w, b});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Node& x = *self.parents[0];
      Node& w = *self.parents[1];
      Node& b = *self.parents[2];
      const int N = x.value.dim(0), K = x.value.dim(1), M = w.value.dim(0);
      CMapRM go(self.grad.data(), N, M);
      if (x.requires_grad) {
        CMapRM wm(w.value.data(), M, K);
        MapRM gx(ensure_grad(x).data(), N, K);
        gx.noalias() += go * wm;
      }
      if (w.requires_grad) {
        CMapRM xm(x.value.data(), N, K);
        MapRM gw(ensure_grad(w).data(), M, K);
        gw.noalias() += go.transpose() * xm;
      }
      if (b.requires_grad) {
        Tensor& gb = ensure_grad(b);
        for (int m = 0; m < M; ++m) gb[m] += go.col(m).sum();
      }
    };
  return out;
}

Var softmax_rows(const Var& x) {
  const auto& s = x->value.shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_rows: expects [N,M]");
  const int N = s[0], M = s[1];
  Tensor v({N, M});
  for (int n = 0; n < N; ++n) {
    float mx = -std::numeric_limits<float>::infinity();
    for (int m = 0; m < M; ++m) mx = std::max(mx, x->value.at2(n, m));
    double z = 0.0;
    for (int m = 0; m < M; ++m) {
      float e = std::exp(x->value.at2(n, m) - mx);
      v.at2(n, m) = e;
      z += e;
    }
    for (int m = 0; m < M; ++m) v.at2(n, m) = static_cast<float>(v.at2(n, m) / z);
  }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [](Node& self) {
      Tensor& g = ensure_grad(*self.parents[0]);
      const int N = self.value.dim(0), M = self.value.dim(1);
      for (int n = 0; n < N; ++n) {
        double dot = 0.0;
        for (int m = 0; m < M; ++m) dot += self.grad.at2(n, m) * self.value.at2(n, m);
        for (int m = 0; m < M; ++m)
          g.at2(n, m) += self.value.at2(n, m) * (self.grad.at2(n, m) - static_cast<float>(dot));
      }
    };
  return out;
}

Var channel_scale(const Var& x, const Var& s) {
  const auto& xs = x->value.shape();
  const auto& ss = s->value.shape();
  if (xs.size() != 4 || ss.size() != 2 || ss[0] != xs[0] || ss[1] != xs[1])
    throw std::invalid_argument("channel_scale: expects x [N,C,H,W], s [N,C]");
  const int N = xs[0], C = xs[1];
  const std::int64_t plane = static_cast<std::int64_t>(xs[2]) * xs[3];
  Tensor v(xs);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      float k = s->value.at2(n, c);
      const float* src = x->value.data() + x->value.idx4(n, c, 0, 0);
      float* dst = v.data() + v.idx4(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
    }
  auto out = make_node(std::move(v), {x, s});
  if (out->requires_grad)
    out->backprop = [plane](Node& self) {
      Node& x = *self.parents[0];
      Node& s = *self.parents[1];
      const int N = x.value.dim(0), C = x.value.dim(1);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const float* go = self.grad.data() + self.grad.idx4(n, c, 0, 0);
          if (x.requires_grad) {
            float k = s.value.at2(n, c);
            float* gx = ensure_grad(x).data() + x.value.idx4(n, c, 0, 0);
            for (std::int64_t i = 0; i < plane; ++i) gx[i] += go[i] * k;
          }
          if (s.requires_grad) {
            const float* xv = x.value.data() + x.value.idx4(n, c, 0, 0);
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += go[i] * xv[i];
            ensure_grad(s).at2(n, c) += static_cast<float>(acc);
          }
        }
    };
  return out;
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const auto& s = x->value.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_bilinear: expects [N,C,H,W]");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("upsample_bilinear: bad target size");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  // Half-pixel-center sampling; every output is a convex combination of at
  // most four inputs, so constant maps stay constant.
  struct Tap { int i0, i1; float w0, w1; };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(static_cast<size_t>(out));
    double r = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * r - 0.5;
      double f = std::floor(src);
      int i0 = static_cast<int>(f);
      float w1 = static_cast<float>(src - f);
      int i1 = i0 + 1;
      if (i0 < 0) { i0 = 0; i1 = 0; w1 = 0.0f; }
      if (i1 >= in) { i1 = in - 1; if (i0 >= in) i0 = in - 1; w1 = (i0 == i1) ? 0.0f : w1; }
      taps[static_cast<size_t>(o)] = {i0, i1, 1.0f - w1, w1};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(make_taps(H, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(make_taps(W, out_w));
  Tensor v({N, C, out_h, out_w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* src = x->value.data() + x->value.idx4(n, c, 0, 0);
      float* dst = v.data() + v.idx4(n, c, 0, 0);
      for (int oh = 0; oh < out_h; ++oh) {
        const Tap& a = (*ty)[static_cast<size_t>(oh)];
        for (int ow = 0; ow < out_w; ++ow) {
          const Tap& b = (*tx)[static_cast<size_t>(ow)];
          float v00 = src[a.i0 * W + b.i0], v01 = src[a.i0 * W + b.i1];
          float v10 = src[a.i1 * W + b.i0], v11 = src[a.i1 * W + b.i1];
          dst[oh * out_w + ow] =
              a.w0 * (b.w0 * v00 + b.w1 * v01) + a.w1 * (b.w0 * v10 + b.w1 * v11);
        }
      }
    }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [ty, tx, out_h, out_w](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      const int N = x.value.dim(0), C = x.value.dim(1), W = x.value.dim(3);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          float* gx = g.data() + x.value.idx4(n, c, 0, 0);
          const float* go = self.grad.data() + self.grad.idx4(n, c, 0, 0);
          for (int oh = 0; oh < out_h; ++oh) {
            const Tap& a = (*ty)[static_cast<size_t>(oh)];
            for (int ow = 0; ow < out_w; ++ow) {
              const Tap& b = (*tx)[static_cast<size_t>(ow)];
              float gv = go[oh * out_w + ow];
              gx[a.i0 * W + b.i0] += a.w0 * b.w0 * gv;
              gx[a.i0 * W + b.i1] += a.w0 * b.w1 * gv;
              gx[a.i1 * W + b.i0] += a.w1 * b.w0 * gv;
              gx[a.i1 * W + b.i1] += a.w1 * b.w1 * gv;
            }
          }
        }
    };
  return out;
}

Var minmax_normalize(const Var& x) {
  const auto& s = x->value.shape();
  if (s.empty()) throw std::invalid_argument("minmax_normalize: empty tensor");
  const int N = s[0];
  const std::int64_t per = x->value.size() / N;
  Tensor v(s);
  auto lo = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(N));
  auto hi = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(N));
  auto rng = std::make_shared<std::vector<float>>(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    const float* p = x->value.data() + n * per;
    std::int64_t imin = 0, imax = 0;
    for (std::int64_t i = 1; i < per; ++i) {
      if (p[i] < p[imin]) imin = i;
      if (p[i] > p[imax]) imax = i;
    }
    float r = p[imax] - p[imin];
    (*lo)[static_cast<size_t>(n)] = imin;
    (*hi)[static_cast<size_t>(n)] = imax;
    (*rng)[static_cast<size_t>(n)] = r;
    float* dst = v.data() + n * per;
    if (r <= 0.0f) {
      for (std::int64_t i = 0; i < per; ++i) dst[i] = 0.0f;
    } else {
      float m = p[imin];
      for (std::int64_t i = 0; i < per; ++i) dst[i] = (p[i] - m) / r;
    }
  }
  auto out = make_node(std::move(v), {x});
  if (out->requires_grad)
    out->backprop = [lo, hi, rng, per](Node& self) {
      Node& x = *self.parents[0];
      Tensor& g = ensure_grad(x);
      const int N = x.value.dim(0);
      for (int n = 0; n < N; ++n) {
        float r = (*rng)[static_cast<size_t>(n)];
        if (r <= 0.0f) continue;
        const float* go = self.grad.data() + n * per;
        const float* y = self.value.data() + n * per;
        float* gx = g.data() + n * per;
        double s_go = 0.0, s_goy = 0.0;
        for (std::int64_t i = 0; i < per; ++i) {
          s_go += go[i];
          s_goy += static_cast<double>(go[i]) * y[i];
        }
        for (std::int64_t i = 0; i < per; ++i) gx[i] += go[i] / r;
        gx[(*lo)[static_cast<size_t>(n)]] -= static_cast<float>(s_go / r);
        gx[(*hi)[static_cast<size_t>(n)]] -= static_cast<float>(s_goy / r);
        gx[(*lo)[static_cast<size_t>(n)]] += static_cast<float>(s_goy / r);
      }
    };
  return out;
}

}  // namespace ctdx::ag
