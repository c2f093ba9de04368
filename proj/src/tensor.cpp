#include "dtbs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dtbs {

namespace {

thread_local bool g_grad_enabled = true;
thread_local Tape g_tape;

void ensure_grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
}

bool tracked(const Tensor& t) { return t.impl()->requires_grad; }

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_4d(const char* op, const Tensor& t, const char* role) {
  if (t.shape().size() != 4)
    shape_error(op, std::string(role) + " must be 4-D (N,C,H,W), got " + shape_str(t.shape()));
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

Tensor make_tensor(Shape shape, size_t n) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.resize(n);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw std::invalid_argument("Tensor::zeros: non-positive dimension in " + shape_str(shape));
  Tensor t = make_tensor(shape, static_cast<size_t>(shape_numel(shape)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) + " does not match buffer of " +
                                std::to_string(data.size()) + " elements");
  Tensor t = make_tensor(std::move(shape), 0);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

float Tensor::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

std::span<const float> Tensor::grad() const {
  if (impl_->grad.empty()) throw std::logic_error("Tensor::grad: gradient not populated (run backward first)");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t = make_tensor(impl_->shape, 0);
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tape& Tape::get() { return g_tape; }

void Tape::replay_reverse() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Tape& tape = Tape::get();
  if (tape.empty())
    throw std::logic_error("backward: tape is empty (no forward pass recorded since the last backward)");
  loss.impl()->grad.assign(1, 1.0f);
  tape.replay_reverse();
  tape.clear();
}

void ensure_finite(std::span<const float> values, const char* what) {
  for (float v : values)
    if (!std::isfinite(v)) throw std::runtime_error(std::string(what) + ": non-finite value produced");
}

namespace {

// Records a backward closure when grad mode is on and any input is tracked.
// The closure skips silently when the output never received a gradient
// (recorded but unreachable from the loss).
template <typename Fn>
void record(Tensor& out, bool any_tracked, Fn&& fn) {
  if (!grad_enabled() || !any_tracked) return;
  out.impl()->requires_grad = true;
  Tape::get().push(std::forward<Fn>(fn));
}

}  // namespace

namespace {

// Hot path: stride-1 3x3 correlation of one input plane into an output
// plane, all nine taps fused per output row so the row stays in registers.
void corr3x3_accumulate(const float* xplane, const float* wk, float* oplane, int h, int w) {
  for (int r = 0; r < h; ++r) {
    const float* x0 = (r > 0) ? xplane + static_cast<size_t>(r - 1) * w : nullptr;
    const float* x1 = xplane + static_cast<size_t>(r) * w;
    const float* x2 = (r + 1 < h) ? xplane + static_cast<size_t>(r + 1) * w : nullptr;
    float* orow = oplane + static_cast<size_t>(r) * w;

    auto tap = [&](int c) {
      float acc = 0.0f;
      if (x0) {
        if (c > 0) acc += wk[0] * x0[c - 1];
        acc += wk[1] * x0[c];
        if (c + 1 < w) acc += wk[2] * x0[c + 1];
      }
      if (c > 0) acc += wk[3] * x1[c - 1];
      acc += wk[4] * x1[c];
      if (c + 1 < w) acc += wk[5] * x1[c + 1];
      if (x2) {
        if (c > 0) acc += wk[6] * x2[c - 1];
        acc += wk[7] * x2[c];
        if (c + 1 < w) acc += wk[8] * x2[c + 1];
      }
      return acc;
    };

    orow[0] += tap(0);
    if (x0 && x2) {
      for (int c = 1; c < w - 1; ++c)
        orow[c] += wk[0] * x0[c - 1] + wk[1] * x0[c] + wk[2] * x0[c + 1] + wk[3] * x1[c - 1] + wk[4] * x1[c] +
                   wk[5] * x1[c + 1] + wk[6] * x2[c - 1] + wk[7] * x2[c] + wk[8] * x2[c + 1];
    } else {
      for (int c = 1; c < w - 1; ++c) orow[c] += tap(c);
    }
    if (w > 1) orow[w - 1] += tap(w - 1);
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
  require_4d("conv2d", x, "input");
  require_4d("conv2d", w, "weight");
  if (stride != 1 && stride != 2) shape_error("conv2d", "stride must be 1 or 2, got " + std::to_string(stride));
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const int batch = xs[0], cin = xs[1], ih = xs[2], iw = xs[3];
  const int cout = ws[0], k = ws[2];
  if (ws[1] != cin)
    shape_error("conv2d", "weight input channels do not match: input " + shape_str(xs) + ", weight " + shape_str(ws));
  if (ws[2] != ws[3] || (k != 1 && k != 3))
    shape_error("conv2d", "kernel must be square with size 1 or 3, weight " + shape_str(ws));
  const int pad = k / 2;
  const int oh = (ih + 2 * pad - k) / stride + 1;
  const int ow = (iw + 2 * pad - k) / stride + 1;

  Tensor out = Tensor::zeros({batch, cout, oh, ow});
  const float* xd = x.data().data();
  const float* wd = w.data().data();
  float* od = out.data().data();

  auto wo_range = [&](int kw, int& lo, int& hi) {
    // valid output columns where kw maps inside [0, iw)
    lo = 0;
    while (lo < ow && lo * stride - pad + kw < 0) ++lo;
    hi = ow - 1;
    while (hi >= 0 && hi * stride - pad + kw >= iw) --hi;
  };

  if (stride == 1 && k == 3) {
    for (int b = 0; b < batch; ++b)
      for (int co = 0; co < cout; ++co) {
        float* oplane = od + (static_cast<size_t>(b) * cout + co) * oh * ow;
        for (int ci = 0; ci < cin; ++ci)
          corr3x3_accumulate(xd + (static_cast<size_t>(b) * cin + ci) * ih * iw,
                             wd + (static_cast<size_t>(co) * cin + ci) * 9, oplane, ih, iw);
      }
  } else if (stride == 1 && k == 1) {
    const size_t plane = static_cast<size_t>(ih) * iw;
    for (int b = 0; b < batch; ++b)
      for (int co = 0; co < cout; ++co) {
        float* oplane = od + (static_cast<size_t>(b) * cout + co) * plane;
        for (int ci = 0; ci < cin; ++ci) {
          const float wv = wd[static_cast<size_t>(co) * cin + ci];
          const float* xplane = xd + (static_cast<size_t>(b) * cin + ci) * plane;
          for (size_t i = 0; i < plane; ++i) oplane[i] += wv * xplane[i];
        }
      }
  } else {
    for (int b = 0; b < batch; ++b) {
      for (int co = 0; co < cout; ++co) {
        float* oplane = od + (static_cast<size_t>(b) * cout + co) * oh * ow;
        for (int ci = 0; ci < cin; ++ci) {
          const float* xplane = xd + (static_cast<size_t>(b) * cin + ci) * ih * iw;
          for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
              const float wv = wd[((static_cast<size_t>(co) * cin + ci) * k + kh) * k + kw];
              int lo, hi;
              wo_range(kw, lo, hi);
              for (int ho = 0; ho < oh; ++ho) {
                const int hi_in = ho * stride - pad + kh;
                if (hi_in < 0 || hi_in >= ih) continue;
                const float* xrow = xplane + static_cast<size_t>(hi_in) * iw + (static_cast<size_t>(lo) * stride - pad + kw);
                float* orow = oplane + static_cast<size_t>(ho) * ow;
                if (stride == 1) {
                  for (int wo = lo; wo <= hi; ++wo) orow[wo] += wv * xrow[wo - lo];
                } else {
                  for (int wo = lo; wo <= hi; ++wo) orow[wo] += wv * xrow[static_cast<size_t>(wo - lo) * 2];
                }
              }
            }
          }
        }
      }
    }
  }
  ensure_finite(out.data(), "conv2d");

  record(out, tracked(x) || tracked(w), [xi = x.impl(), wi = w.impl(), oi = out.impl(), stride, pad, k]() {
    if (oi->grad.empty()) return;
    const Shape& xs = xi->shape;
    const Shape& os = oi->shape;
    const int batch = xs[0], cin = xs[1], ih = xs[2], iw = xs[3];
    const int cout = os[1], oh = os[2], ow = os[3];
    const float* gy = oi->grad.data();
    const float* wd = wi->data.data();
    const float* xd = xi->data.data();

    auto wo_range = [&](int kw, int& lo, int& hi) {
      lo = 0;
      while (lo < ow && lo * stride - pad + kw < 0) ++lo;
      hi = ow - 1;
      while (hi >= 0 && hi * stride - pad + kw >= iw) --hi;
    };

    if (xi->requires_grad) {
      ensure_grad_buffer(*xi);
      float* gx = xi->grad.data();
      if (stride == 1 && k == 3) {
        // input gradient = correlation of the output gradient with the
        // 180-degree-flipped kernel
        float flipped[9];
        for (int b = 0; b < batch; ++b)
          for (int ci = 0; ci < cin; ++ci) {
            float* gxplane = gx + (static_cast<size_t>(b) * cin + ci) * ih * iw;
            for (int co = 0; co < cout; ++co) {
              const float* wk = wd + (static_cast<size_t>(co) * cin + ci) * 9;
              for (int i = 0; i < 9; ++i) flipped[i] = wk[8 - i];
              corr3x3_accumulate(gy + (static_cast<size_t>(b) * cout + co) * oh * ow, flipped, gxplane, ih, iw);
            }
          }
      } else if (stride == 1 && k == 1) {
        const size_t plane = static_cast<size_t>(ih) * iw;
        for (int b = 0; b < batch; ++b)
          for (int ci = 0; ci < cin; ++ci) {
            float* gxplane = gx + (static_cast<size_t>(b) * cin + ci) * plane;
            for (int co = 0; co < cout; ++co) {
              const float wv = wd[static_cast<size_t>(co) * cin + ci];
              const float* gyplane = gy + (static_cast<size_t>(b) * cout + co) * plane;
              for (size_t i = 0; i < plane; ++i) gxplane[i] += wv * gyplane[i];
            }
          }
      } else {
        for (int b = 0; b < batch; ++b) {
          for (int co = 0; co < cout; ++co) {
            const float* gyplane = gy + (static_cast<size_t>(b) * cout + co) * oh * ow;
            for (int ci = 0; ci < cin; ++ci) {
              float* gxplane = gx + (static_cast<size_t>(b) * cin + ci) * ih * iw;
              for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                  const float wv = wd[((static_cast<size_t>(co) * cin + ci) * k + kh) * k + kw];
                  int lo, hi;
                  wo_range(kw, lo, hi);
                  for (int ho = 0; ho < oh; ++ho) {
                    const int hi_in = ho * stride - pad + kh;
                    if (hi_in < 0 || hi_in >= ih) continue;
                    const float* gyrow = gyplane + static_cast<size_t>(ho) * ow;
                    float* gxrow = gxplane + static_cast<size_t>(hi_in) * iw + (static_cast<size_t>(lo) * stride - pad + kw);
                    if (stride == 1) {
                      for (int wo = lo; wo <= hi; ++wo) gxrow[wo - lo] += wv * gyrow[wo];
                    } else {
                      for (int wo = lo; wo <= hi; ++wo) gxrow[static_cast<size_t>(wo - lo) * 2] += wv * gyrow[wo];
                    }
                  }
                }
              }
            }
          }
        }
      }
      ensure_finite(xi->grad, "conv2d backward (input grad)");
    }

    if (wi->requires_grad) {
      ensure_grad_buffer(*wi);
      float* gw = wi->grad.data();
      if (stride == 1 && k == 3 && iw >= 2) {
        // all nine tap gradients accumulated in one sweep over each row pair
        for (int co = 0; co < cout; ++co) {
          for (int ci = 0; ci < cin; ++ci) {
            double acc[9] = {};
            for (int b = 0; b < batch; ++b) {
              const float* gyplane = gy + (static_cast<size_t>(b) * cout + co) * oh * ow;
              const float* xplane = xd + (static_cast<size_t>(b) * cin + ci) * ih * iw;
              for (int r = 0; r < ih; ++r) {
                const float* g = gyplane + static_cast<size_t>(r) * iw;
                const float* rows[3] = {r > 0 ? xplane + static_cast<size_t>(r - 1) * iw : nullptr,
                                        xplane + static_cast<size_t>(r) * iw,
                                        r + 1 < ih ? xplane + static_cast<size_t>(r + 1) * iw : nullptr};
                float part[9] = {};
                for (int kh = 0; kh < 3; ++kh) {
                  const float* xr = rows[kh];
                  if (!xr) continue;
                  float p0 = 0.0f, p1 = 0.0f, p2 = 0.0f;
                  for (int c = 1; c < iw - 1; ++c) {
                    const float gv = g[c];
                    p0 += xr[c - 1] * gv;
                    p1 += xr[c] * gv;
                    p2 += xr[c + 1] * gv;
                  }
                  p1 += xr[0] * g[0] + xr[iw - 1] * g[iw - 1];
                  p2 += xr[1] * g[0];
                  p0 += xr[iw - 2] * g[iw - 1];
                  part[kh * 3] = p0;
                  part[kh * 3 + 1] = p1;
                  part[kh * 3 + 2] = p2;
                }
                for (int i = 0; i < 9; ++i) acc[i] += part[i];
              }
            }
            float* gwk = gw + (static_cast<size_t>(co) * cin + ci) * 9;
            for (int i = 0; i < 9; ++i) gwk[i] += static_cast<float>(acc[i]);
          }
        }
      } else {
        for (int co = 0; co < cout; ++co) {
          for (int ci = 0; ci < cin; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              for (int kw = 0; kw < k; ++kw) {
                int lo, hi;
                wo_range(kw, lo, hi);
                double acc = 0.0;
                for (int b = 0; b < batch; ++b) {
                  const float* gyplane = gy + (static_cast<size_t>(b) * cout + co) * oh * ow;
                  const float* xplane = xd + (static_cast<size_t>(b) * cin + ci) * ih * iw;
                  for (int ho = 0; ho < oh; ++ho) {
                    const int hi_in = ho * stride - pad + kh;
                    if (hi_in < 0 || hi_in >= ih) continue;
                    const float* gyrow = gyplane + static_cast<size_t>(ho) * ow;
                    const float* xrow = xplane + static_cast<size_t>(hi_in) * iw + (static_cast<size_t>(lo) * stride - pad + kw);
                    float part = 0.0f;
                    if (stride == 1) {
                      for (int wo = lo; wo <= hi; ++wo) part += xrow[wo - lo] * gyrow[wo];
                    } else {
                      for (int wo = lo; wo <= hi; ++wo) part += xrow[static_cast<size_t>(wo - lo) * 2] * gyrow[wo];
                    }
                    acc += part;
                  }
                }
                gw[((static_cast<size_t>(co) * cin + ci) * k + kh) * k + kw] += static_cast<float>(acc);
              }
            }
          }
        }
      }
      ensure_finite(wi->grad, "conv2d backward (weight grad)");
    }
  });
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  require_4d("bias_add", x, "input");
  if (b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
    shape_error("bias_add", "bias must be (C); input " + shape_str(x.shape()) + ", bias " + shape_str(b.shape()));
  const int batch = x.shape()[0], c = x.shape()[1];
  const size_t plane = static_cast<size_t>(x.shape()[2]) * x.shape()[3];

  Tensor out = Tensor::zeros(x.shape());
  const float* xd = x.data().data();
  const float* bd = b.data().data();
  float* od = out.data().data();
  for (int n = 0; n < batch; ++n) {
    for (int ci = 0; ci < c; ++ci) {
      const float bv = bd[ci];
      const float* xp = xd + (static_cast<size_t>(n) * c + ci) * plane;
      float* op = od + (static_cast<size_t>(n) * c + ci) * plane;
      for (size_t i = 0; i < plane; ++i) op[i] = xp[i] + bv;
    }
  }
  ensure_finite(out.data(), "bias_add");

  record(out, tracked(x) || tracked(b), [xi = x.impl(), bi = b.impl(), oi = out.impl(), batch, c, plane]() {
    if (oi->grad.empty()) return;
    const float* gy = oi->grad.data();
    if (xi->requires_grad) {
      ensure_grad_buffer(*xi);
      float* gx = xi->grad.data();
      for (size_t i = 0; i < oi->grad.size(); ++i) gx[i] += gy[i];
    }
    if (bi->requires_grad) {
      ensure_grad_buffer(*bi);
      float* gb = bi->grad.data();
      for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int n = 0; n < batch; ++n) {
          const float* gp = gy + (static_cast<size_t>(n) * c + ci) * plane;
          for (size_t i = 0; i < plane; ++i) acc += gp[i];
        }
        gb[ci] += static_cast<float>(acc);
      }
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xd = x.data().data();
  float* od = out.data().data();
  const size_t n = x.data().size();
  for (size_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  ensure_finite(out.data(), "relu");

  record(out, tracked(x), [xi = x.impl(), oi = out.impl()]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float* gy = oi->grad.data();
    const float* xd = xi->data.data();
    float* gx = xi->grad.data();
    for (size_t i = 0; i < oi->grad.size(); ++i)
      if (xd[i] > 0.0f) gx[i] += gy[i];
  });
  return out;
}

Tensor upsample2x(const Tensor& x) {
  require_4d("upsample2x", x, "input");
  const int batch = x.shape()[0], c = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
  Tensor out = Tensor::zeros({batch, c, ih * 2, iw * 2});
  const float* xd = x.data().data();
  float* od = out.data().data();
  for (int p = 0; p < batch * c; ++p) {
    const float* xp = xd + static_cast<size_t>(p) * ih * iw;
    float* op = od + static_cast<size_t>(p) * ih * iw * 4;
    for (int h = 0; h < ih * 2; ++h) {
      const float* xrow = xp + static_cast<size_t>(h / 2) * iw;
      float* orow = op + static_cast<size_t>(h) * iw * 2;
      for (int w = 0; w < iw * 2; ++w) orow[w] = xrow[w / 2];
    }
  }

  record(out, tracked(x), [xi = x.impl(), oi = out.impl(), ih, iw]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float* gy = oi->grad.data();
    float* gx = xi->grad.data();
    const size_t planes = xi->data.size() / (static_cast<size_t>(ih) * iw);
    for (size_t p = 0; p < planes; ++p) {
      const float* gyp = gy + p * ih * iw * 4;
      float* gxp = gx + p * ih * iw;
      for (int h = 0; h < ih * 2; ++h)
        for (int w = 0; w < iw * 2; ++w) gxp[static_cast<size_t>(h / 2) * iw + w / 2] += gyp[static_cast<size_t>(h) * iw * 2 + w];
    }
  });
  return out;
}

Tensor softmax_channels(const Tensor& x) {
  require_4d("softmax_channels", x, "input");
  const int batch = x.shape()[0], c = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
  const size_t plane = static_cast<size_t>(ih) * iw;
  Tensor out = Tensor::zeros(x.shape());
  const float* xd = x.data().data();
  float* od = out.data().data();

  std::vector<double> e(static_cast<size_t>(c));
  for (int b = 0; b < batch; ++b) {
    const float* xb = xd + static_cast<size_t>(b) * c * plane;
    float* ob = od + static_cast<size_t>(b) * c * plane;
    for (size_t px = 0; px < plane; ++px) {
      float m = xb[px];
      for (int ci = 1; ci < c; ++ci) m = std::max(m, xb[static_cast<size_t>(ci) * plane + px]);
      double s = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        e[ci] = std::exp(static_cast<double>(xb[static_cast<size_t>(ci) * plane + px] - m));
        s += e[ci];
      }
      for (int ci = 0; ci < c; ++ci) ob[static_cast<size_t>(ci) * plane + px] = static_cast<float>(e[ci] / s);
    }
  }
  ensure_finite(out.data(), "softmax_channels");

  record(out, tracked(x), [xi = x.impl(), oi = out.impl(), batch, c, plane]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float* gy = oi->grad.data();
    const float* p = oi->data.data();
    float* gx = xi->grad.data();
    for (int b = 0; b < batch; ++b) {
      const size_t base = static_cast<size_t>(b) * c * plane;
      for (size_t px = 0; px < plane; ++px) {
        double dot = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          const size_t idx = base + static_cast<size_t>(ci) * plane + px;
          dot += static_cast<double>(gy[idx]) * p[idx];
        }
        for (int ci = 0; ci < c; ++ci) {
          const size_t idx = base + static_cast<size_t>(ci) * plane + px;
          gx[idx] += static_cast<float>(p[idx] * (gy[idx] - dot));
        }
      }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("add", "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  float* od = out.data().data();
  for (size_t i = 0; i < a.data().size(); ++i) od[i] = ad[i] + bd[i];
  ensure_finite(out.data(), "add");

  record(out, tracked(a) || tracked(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()]() {
    if (oi->grad.empty()) return;
    const float* gy = oi->grad.data();
    if (ai->requires_grad) {
      ensure_grad_buffer(*ai);
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += gy[i];
    }
    if (bi->requires_grad) {
      ensure_grad_buffer(*bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += gy[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("mul", "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  float* od = out.data().data();
  for (size_t i = 0; i < a.data().size(); ++i) od[i] = ad[i] * bd[i];
  ensure_finite(out.data(), "mul");

  record(out, tracked(a) || tracked(b), [ai = a.impl(), bi = b.impl(), oi = out.impl()]() {
    if (oi->grad.empty()) return;
    const float* gy = oi->grad.data();
    if (ai->requires_grad) {
      ensure_grad_buffer(*ai);
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += gy[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      ensure_grad_buffer(*bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += gy[i] * ai->data[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xd = x.data().data();
  float* od = out.data().data();
  for (size_t i = 0; i < x.data().size(); ++i) od[i] = xd[i] * factor;
  ensure_finite(out.data(), "scale");

  record(out, tracked(x), [xi = x.impl(), oi = out.impl(), factor]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float* gy = oi->grad.data();
    for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += gy[i] * factor;
  });
  return out;
}

Tensor log(const Tensor& x) {
  constexpr float kClamp = 1e-12f;
  Tensor out = Tensor::zeros(x.shape());
  const float* xd = x.data().data();
  float* od = out.data().data();
  for (size_t i = 0; i < x.data().size(); ++i) od[i] = std::log(std::max(xd[i], kClamp));
  ensure_finite(out.data(), "log");

  record(out, tracked(x), [xi = x.impl(), oi = out.impl()]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float* gy = oi->grad.data();
    const float* xd = xi->data.data();
    for (size_t i = 0; i < oi->grad.size(); ++i)
      if (xd[i] > kClamp) xi->grad[i] += gy[i] / xd[i];
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  ensure_finite(out.data(), "sum");

  record(out, tracked(x), [xi = x.impl(), oi = out.impl()]() {
    if (oi->grad.empty() || !xi->requires_grad) return;
    ensure_grad_buffer(*xi);
    const float g = oi->grad[0];
    for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
  });
  return out;
}

}  // namespace dtbs
