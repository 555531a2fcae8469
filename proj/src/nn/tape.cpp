#include "evha/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evha/error.hpp"
#include "evha/simd/kernels.hpp"

namespace evha::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

void require_rank3(const Tensor& t, const char* op) {
  require(t.rank() == 3, std::string(op) + " expects a CxHxW tensor, got " + shape_string(t.shape()));
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> back) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "variable is not recorded on this tape");
  return *nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "variable is not recorded on this tape");
  return *nodes_[static_cast<std::size_t>(v.id)];
}

std::vector<double>& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

std::span<const double> Tape::grad(Var v) const { return node(v).grad; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::input(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad); }

Var Tape::param(const Tensor& p) {
  if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
  const Var v = push(p, true);
  params_[&p] = v.id;
  return v;
}

std::vector<double> Tape::param_grad(const Tensor& p) const {
  auto it = params_.find(&p);
  if (it == params_.end()) return {};
  const Node& n = *nodes_[static_cast<std::size_t>(it->second)];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::conv2d(Var x, Var weight, Var bias, int stride, int pad) {
  const Tensor& in = value(x);
  const Tensor& w = value(weight);
  require_rank3(in, "conv2d");
  require(w.rank() == 4 && w.dim(1) == in.dim(0) && w.dim(2) == w.dim(3),
          "conv2d weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));
  require(value(bias).size() == static_cast<std::size_t>(w.dim(0)), "conv2d bias size mismatch");
  const int channels = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const int outc = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d output would be empty for input " + shape_string(in.shape()));
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t rows = static_cast<std::size_t>(channels) * k * k;

  auto col = std::make_shared<std::vector<double>>(rows * plane, 0.0);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = col->data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const double* src = in.data() + (static_cast<std::size_t>(c) * h + iy) * wd;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < wd) dst[static_cast<std::size_t>(oy) * wo + ox] = src[ix];
          }
        }
      }
    }
  }

  Tensor out({outc, ho, wo});
  const Tensor& b = value(bias);
  for (int o = 0; o < outc; ++o) {
    double* dst = out.data() + static_cast<std::size_t>(o) * plane;
    std::fill(dst, dst + plane, b[static_cast<std::size_t>(o)]);
    const double* wrow = w.data() + static_cast<std::size_t>(o) * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      if (wrow[r] != 0.0) simd::axpy(wrow[r], col->data() + r * plane, dst, plane);
    }
  }

  const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  Var y{};
  y = push(std::move(out), rg, [this, x, weight, bias, col, stride, pad, channels, h, wd, outc, k, ho, wo, plane, rows,
                                 id = static_cast<int>(nodes_.size())] {
    const std::vector<double>& g = node(Var{id}).grad;
    const Tensor& w = value(weight);
    if (requires_grad(weight)) {
      auto& gw = grad_buffer(weight);
      for (int o = 0; o < outc; ++o) {
        const double* go = g.data() + static_cast<std::size_t>(o) * plane;
        for (std::size_t r = 0; r < rows; ++r) {
          gw[static_cast<std::size_t>(o) * rows + r] += simd::dot(go, col->data() + r * plane, plane);
        }
      }
    }
    if (requires_grad(bias)) {
      auto& gb = grad_buffer(bias);
      for (int o = 0; o < outc; ++o) {
        const double* go = g.data() + static_cast<std::size_t>(o) * plane;
        gb[static_cast<std::size_t>(o)] += std::accumulate(go, go + plane, 0.0);
      }
    }
    if (requires_grad(x)) {
      std::vector<double> dcol(rows * plane, 0.0);
      for (int o = 0; o < outc; ++o) {
        const double* go = g.data() + static_cast<std::size_t>(o) * plane;
        const double* wrow = w.data() + static_cast<std::size_t>(o) * rows;
        for (std::size_t r = 0; r < rows; ++r) {
          if (wrow[r] != 0.0) simd::axpy(wrow[r], go, dcol.data() + r * plane, plane);
        }
      }
      auto& gx = grad_buffer(x);
      for (int c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
          for (int kj = 0; kj < k; ++kj) {
            const double* src = dcol.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * plane;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ki;
              if (iy < 0 || iy >= h) continue;
              double* dst = gx.data() + (static_cast<std::size_t>(c) * h + iy) * wd;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - pad + kj;
                if (ix >= 0 && ix < wd) dst[ix] += src[static_cast<std::size_t>(oy) * wo + ox];
              }
            }
          }
        }
      }
    }
  });
  return y;
}

Var Tape::maxpool2(Var x) {
  const Tensor& in = value(x);
  require_rank3(in, "maxpool2");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int ho = h / 2, wo = w / 2;
  require(ho > 0 && wo > 0, "maxpool2 needs at least 2x2 spatial extent");
  Tensor out({c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = (static_cast<std::size_t>(ch) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (in[i] > best) {
              best = in[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * ho + oy) * wo + ox;
        out[o] = best;
        (*argmax)[o] = best_i;
      }
    }
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, argmax, id] {
    const auto& g = node(Var{id}).grad;
    auto& gx = grad_buffer(x);
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
  });
}

Var Tape::dense(Var x, Var weight, Var bias) {
  const Tensor& in = value(x);
  const Tensor& w = value(weight);
  require(w.rank() == 2 && static_cast<std::size_t>(w.dim(1)) == in.size(),
          "dense weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));
  require(value(bias).size() == static_cast<std::size_t>(w.dim(0)), "dense bias size mismatch");
  const int outn = w.dim(0);
  const std::size_t inn = in.size();
  Tensor out({outn});
  for (int o = 0; o < outn; ++o) {
    out[static_cast<std::size_t>(o)] =
        simd::dot(w.data() + static_cast<std::size_t>(o) * inn, in.data(), inn) + value(bias)[static_cast<std::size_t>(o)];
  }
  const int id = static_cast<int>(nodes_.size());
  const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(out), rg, [this, x, weight, bias, outn, inn, id] {
    const auto& g = node(Var{id}).grad;
    if (requires_grad(weight)) {
      auto& gw = grad_buffer(weight);
      const Tensor& in = value(x);
      for (int o = 0; o < outn; ++o) {
        simd::axpy(g[static_cast<std::size_t>(o)], in.data(), gw.data() + static_cast<std::size_t>(o) * inn, inn);
      }
    }
    if (requires_grad(bias)) {
      auto& gb = grad_buffer(bias);
      for (int o = 0; o < outn; ++o) gb[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(o)];
    }
    if (requires_grad(x)) {
      auto& gx = grad_buffer(x);
      const Tensor& w = value(weight);
      for (int o = 0; o < outn; ++o) {
        simd::axpy(g[static_cast<std::size_t>(o)], w.data() + static_cast<std::size_t>(o) * inn, gx.data(), inn);
      }
    }
  });
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, id] {
    const auto& g = node(Var{id}).grad;
    const Tensor& in = value(x);
    auto& gx = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta) {
  constexpr double kEps = 1e-5;
  const Tensor& in = value(x);
  const std::size_t n = in.size();
  require(in.rank() == 1 && n > 0, "layer_norm expects a non-empty vector, got " + shape_string(in.shape()));
  require(value(gamma).size() == n && value(beta).size() == n, "layer_norm affine parameters do not match width");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += in[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
  var /= static_cast<double>(n);
  const double is = 1.0 / std::sqrt(var + kEps);
  auto xhat = std::make_shared<std::vector<double>>(n);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < n; ++i) {
    (*xhat)[i] = (in[i] - mean) * is;
    out[i] = value(gamma)[i] * (*xhat)[i] + value(beta)[i];
  }
  const int id = static_cast<int>(nodes_.size());
  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  return push(std::move(out), rg, [this, x, gamma, beta, xhat, is, n, id] {
    const auto& g = node(Var{id}).grad;
    if (requires_grad(gamma)) {
      auto& gg = grad_buffer(gamma);
      for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * (*xhat)[i];
    }
    if (requires_grad(beta)) {
      auto& gb = grad_buffer(beta);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
    if (requires_grad(x)) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i] * value(gamma)[i];
        sum_g += gi;
        sum_gx += gi * (*xhat)[i];
      }
      auto& gx = grad_buffer(x);
      const double nn = static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += is / nn * (nn * g[i] * value(gamma)[i] - sum_g - (*xhat)[i] * sum_gx);
      }
    }
  });
}

Var Tape::instance_norm(Var x, Var gamma, Var beta) {
  constexpr double kEps = 1e-5;
  const Tensor& in = value(x);
  require_rank3(in, "instance_norm");
  const int c = in.dim(0);
  const std::size_t n = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
  require(value(gamma).size() == static_cast<std::size_t>(c) && value(beta).size() == static_cast<std::size_t>(c),
          "instance_norm affine parameters do not match channel count");
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  Tensor out(in.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double* src = in.data() + static_cast<std::size_t>(ch) * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    const double g = value(gamma)[static_cast<std::size_t>(ch)], b = value(beta)[static_cast<std::size_t>(ch)];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(ch) * n + i;
      (*xhat)[k] = (src[i] - mean) * is;
      out[k] = g * (*xhat)[k] + b;
    }
  }
  const int id = static_cast<int>(nodes_.size());
  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  return push(std::move(out), rg, [this, x, gamma, beta, xhat, inv_std, c, n, id] {
    const auto& g = node(Var{id}).grad;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>(ch) * n;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[base + i];
        sum_gx += g[base + i] * (*xhat)[base + i];
      }
      if (requires_grad(gamma)) grad_buffer(gamma)[static_cast<std::size_t>(ch)] += sum_gx;
      if (requires_grad(beta)) grad_buffer(beta)[static_cast<std::size_t>(ch)] += sum_g;
      if (requires_grad(x)) {
        auto& gx = grad_buffer(x);
        const double gm = value(gamma)[static_cast<std::size_t>(ch)];
        const double is = (*inv_std)[static_cast<std::size_t>(ch)];
        const double nn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          gx[base + i] += gm * is / nn * (nn * g[base + i] - sum_g - (*xhat)[base + i] * sum_gx);
        }
      }
    }
  });
}

Var Tape::global_avg_pool(Var x) {
  const Tensor& in = value(x);
  require_rank3(in, "global_avg_pool");
  const int c = in.dim(0);
  const std::size_t n = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = in.data() + static_cast<std::size_t>(ch) * n;
    out[static_cast<std::size_t>(ch)] = std::accumulate(src, src + n, 0.0) / static_cast<double>(n);
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, c, n, id] {
    const auto& g = node(Var{id}).grad;
    auto& gx = grad_buffer(x);
    for (int ch = 0; ch < c; ++ch) {
      const double share = g[static_cast<std::size_t>(ch)] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) gx[static_cast<std::size_t>(ch) * n + i] += share;
    }
  });
}

Var Tape::upsample2(Var x) {
  const Tensor& in = value(x);
  require_rank3(in, "upsample2");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        out[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx] =
            in[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
      }
    }
  }
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, c, h, w, id] {
    const auto& g = node(Var{id}).grad;
    auto& gx = grad_buffer(x);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < 2 * h; ++y) {
        for (int xx = 0; xx < 2 * w; ++xx) {
          gx[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
              g[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx];
        }
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.shape() == vb.shape(),
          "add of mismatched shapes " + shape_string(va.shape()) + " and " + shape_string(vb.shape()));
  Tensor out = va;
  simd::axpy(1.0, vb.data(), out.data(), out.size());
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(a) || requires_grad(b), [this, a, b, id] {
    const auto& g = node(Var{id}).grad;
    if (requires_grad(a)) simd::axpy(1.0, g.data(), grad_buffer(a).data(), g.size());
    if (requires_grad(b)) simd::axpy(1.0, g.data(), grad_buffer(b).data(), g.size());
  });
}

Var Tape::concat_channels(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_rank3(va, "concat_channels");
  require_rank3(vb, "concat_channels");
  require(va.dim(1) == vb.dim(1) && va.dim(2) == vb.dim(2),
          "concat of mismatched spatial shapes " + shape_string(va.shape()) + " and " + shape_string(vb.shape()));
  Tensor out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.values().begin(), va.values().end(), out.values().begin());
  std::copy(vb.values().begin(), vb.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(va.size()));
  const std::size_t split = va.size();
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(a) || requires_grad(b), [this, a, b, split, id] {
    const auto& g = node(Var{id}).grad;
    if (requires_grad(a)) simd::axpy(1.0, g.data(), grad_buffer(a).data(), split);
    if (requires_grad(b)) simd::axpy(1.0, g.data() + split, grad_buffer(b).data(), g.size() - split);
  });
}

Var Tape::scale(Var x, double c) {
  Tensor out = value(x);
  for (double& v : out.values()) v *= c;
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, c, id] {
    const auto& g = node(Var{id}).grad;
    simd::axpy(c, g.data(), grad_buffer(x).data(), g.size());
  });
}

Var Tape::sum(Var x) {
  const Tensor& in = value(x);
  Tensor out({1}, std::accumulate(in.values().begin(), in.values().end(), 0.0));
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(x), [this, x, id] {
    const double g = node(Var{id}).grad[0];
    for (double& v : grad_buffer(x)) v += g;
  });
}

Var Tape::stopgrad(Var x) { return push(value(x), false); }

Var Tape::neg_cosine(Var p, Var z) {
  const Tensor& vp = value(p);
  const Tensor& vz = value(z);
  require(vp.size() == vz.size() && vp.size() > 0, "neg_cosine needs two vectors of equal non-zero length");
  const std::size_t n = vp.size();
  const double pz = simd::dot(vp.data(), vz.data(), n);
  const double np = std::sqrt(simd::dot(vp.data(), vp.data(), n));
  const double nz = std::sqrt(simd::dot(vz.data(), vz.data(), n));
  double denom = np * nz;
  if (denom < 1e-12) {
    denom = 1e-12;
    ++stabilized_cosines_;
  }
  const bool floored = denom == 1e-12;
  Tensor out({1}, -pz / denom);
  const int id = static_cast<int>(nodes_.size());
  return push(std::move(out), requires_grad(p) || requires_grad(z), [this, p, z, pz, np, nz, denom, floored, n, id] {
    const double g = node(Var{id}).grad[0];
    const Tensor& vp = value(p);
    const Tensor& vz = value(z);
    if (requires_grad(p)) {
      auto& gp = grad_buffer(p);
      const double rp = floored ? 0.0 : pz / (np * np * denom);
      for (std::size_t i = 0; i < n; ++i) gp[i] += g * (-vz[i] / denom + rp * vp[i]);
    }
    if (requires_grad(z)) {
      auto& gz = grad_buffer(z);
      const double rz = floored ? 0.0 : pz / (nz * nz * denom);
      for (std::size_t i = 0; i < n; ++i) gz[i] += g * (-vp[i] / denom + rz * vz[i]);
    }
  });
}

Var Tape::softmax_cross_entropy(Var logits, int label, std::vector<double>* probs) {
  const Tensor& in = value(logits);
  require(label >= 0 && static_cast<std::size_t>(label) < in.size(),
          "label " + std::to_string(label) + " outside " + std::to_string(in.size()) + " classes");
  const double mx = *std::max_element(in.values().begin(), in.values().end());
  auto p = std::make_shared<std::vector<double>>(in.size());
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    (*p)[i] = std::exp(in[i] - mx);
    z += (*p)[i];
  }
  for (double& v : *p) v /= z;
  const double loss = -(in[static_cast<std::size_t>(label)] - mx - std::log(z));
  if (probs != nullptr) *probs = *p;
  const int id = static_cast<int>(nodes_.size());
  return push(Tensor({1}, loss), requires_grad(logits), [this, logits, label, p, id] {
    const double g = node(Var{id}).grad[0];
    auto& gx = grad_buffer(logits);
    for (std::size_t i = 0; i < p->size(); ++i) {
      gx[i] += g * ((*p)[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  });
}

Var Tape::mse_loss(Var prediction, const Tensor& target) {
  const Tensor& f = value(prediction);
  require(f.size() == target.size(), "mse_loss target size mismatch");
  const double n = static_cast<double>(f.size());
  const double loss = simd::sum_squared_diff(f.data(), target.data(), f.size()) / n;
  const int id = static_cast<int>(nodes_.size());
  return push(Tensor({1}, loss), requires_grad(prediction), [this, prediction, target, n, id] {
    const double g = node(Var{id}).grad[0];
    const Tensor& f = value(prediction);
    auto& gx = grad_buffer(prediction);
    for (std::size_t i = 0; i < f.size(); ++i) gx[i] += g * 2.0 * (f[i] - target[i]) / n;
  });
}

Var Tape::l1_loss(Var prediction, const Tensor& target) {
  const Tensor& f = value(prediction);
  require(f.size() == target.size(), "l1_loss target size mismatch");
  const double n = static_cast<double>(f.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) loss += std::abs(f[i] - target[i]);
  const int id = static_cast<int>(nodes_.size());
  return push(Tensor({1}, loss / n), requires_grad(prediction), [this, prediction, target, n, id] {
    const double g = node(Var{id}).grad[0];
    const Tensor& f = value(prediction);
    auto& gx = grad_buffer(prediction);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = f[i] - target[i];
      gx[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
  });
}

Var Tape::power_loss(Var prediction, const Tensor& target, double epsilon, double gamma) {
  const Tensor& f = value(prediction);
  require(f.size() == target.size(), "power_loss target size mismatch");
  const double n = static_cast<double>(f.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) loss += std::pow(std::abs(f[i] - target[i]) + epsilon, gamma);
  const int id = static_cast<int>(nodes_.size());
  return push(Tensor({1}, loss / n), requires_grad(prediction), [this, prediction, target, epsilon, gamma, n, id] {
    const double g = node(Var{id}).grad[0];
    if (gamma == 0.0) return;
    const Tensor& f = value(prediction);
    auto& gx = grad_buffer(prediction);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double d = f[i] - target[i];
      if (d == 0.0) continue;
      const double sign = d > 0.0 ? 1.0 : -1.0;
      gx[i] += g * gamma * std::pow(std::abs(d) + epsilon, gamma - 1.0) * sign / n;
    }
  });
}

void Tape::backward(Var out) {
  const Tensor& v = value(out);
  backward(out, Tensor(v.shape(), 1.0));
}

void Tape::backward(Var out, const Tensor& upstream) {
  Node& root = node(out);
  require(upstream.size() == root.value.size(), "upstream gradient shape does not match the output");
  if (!root.requires_grad) {
    backward_done_ = true;
    return;
  }
  auto& g = grad_buffer(out);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += upstream[i];
  for (int i = out.id; i >= 0; --i) {
    Node& n = *nodes_[static_cast<std::size_t>(i)];
    if (n.requires_grad && n.back && !n.grad.empty()) n.back();
  }
  backward_done_ = true;
}

}  // namespace evha::nn
