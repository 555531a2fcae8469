#include "evha/nn/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "evha/error.hpp"

namespace evha::nn {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Norm: return "norm";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Save: return "save";
    case LayerKind::AddSaved: return "add";
    case LayerKind::ConcatSaved: return "concat";
  }
  return "?";
}

LayerSpec LayerSpec::conv(int out, int kernel, int stride, int pad) {
  LayerSpec s{LayerKind::Conv, out, kernel, stride, pad < 0 ? kernel / 2 : pad, 0};
  return s;
}

LayerSpec LayerSpec::dense(int out) { return {LayerKind::Dense, out, 0, 0, 0, 0}; }

namespace {

std::string layer_label(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
}

std::string pname(std::size_t i, const char* suffix) { return "L" + std::to_string(i) + "." + suffix; }

// Walks the layer list on shapes only. `on_param` receives every parameter the
// layer needs, with its shape and fan-in, in creation order.
Shape walk_shapes(const Shape& input, const std::vector<LayerSpec>& layers,
                  const std::function<void(const std::string&, const Shape&, int, bool)>& on_param) {
  Shape s = input;
  std::map<int, Shape> saved;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    auto fail = [&](const std::string& why) {
      throw Error(layer_label(i, l) + ": " + why + " (input " + shape_string(s) + ")");
    };
    auto need_rank3 = [&] {
      if (s.size() != 3) fail("expects a CxHxW input");
    };
    switch (l.kind) {
      case LayerKind::Conv: {
        need_rank3();
        if (l.out <= 0 || l.kernel <= 0 || l.stride <= 0 || l.pad < 0) fail("bad convolution geometry");
        const int ho = (s[1] + 2 * l.pad - l.kernel) / l.stride + 1;
        const int wo = (s[2] + 2 * l.pad - l.kernel) / l.stride + 1;
        if (ho <= 0 || wo <= 0) fail("kernel larger than padded input");
        if (on_param) {
          on_param(pname(i, "w"), {l.out, s[0], l.kernel, l.kernel}, s[0] * l.kernel * l.kernel, false);
          on_param(pname(i, "b"), {l.out}, 0, false);
        }
        s = {l.out, ho, wo};
        break;
      }
      case LayerKind::MaxPool:
        need_rank3();
        if (s[1] < 2 || s[2] < 2) fail("spatial extent below 2");
        s = {s[0], s[1] / 2, s[2] / 2};
        break;
      case LayerKind::Dense: {
        if (l.out <= 0) fail("bad dense width");
        const int in = static_cast<int>(shape_size(s));
        if (on_param) {
          on_param(pname(i, "w"), {l.out, in}, in, false);
          on_param(pname(i, "b"), {l.out}, 0, false);
        }
        s = {l.out};
        break;
      }
      case LayerKind::Relu: break;
      case LayerKind::Norm:
        if (s.size() != 1) need_rank3();
        if (on_param) {
          on_param(pname(i, "gamma"), {s[0]}, 0, true);
          on_param(pname(i, "beta"), {s[0]}, 0, false);
        }
        break;
      case LayerKind::GlobalAvgPool:
        need_rank3();
        s = {s[0]};
        break;
      case LayerKind::Upsample:
        need_rank3();
        s = {s[0], 2 * s[1], 2 * s[2]};
        break;
      case LayerKind::Save: saved[l.slot] = s; break;
      case LayerKind::AddSaved: {
        auto it = saved.find(l.slot);
        if (it == saved.end()) fail("slot " + std::to_string(l.slot) + " was never saved");
        const Shape& t = it->second;
        if (t.size() != s.size()) fail("rank differs from saved " + shape_string(t));
        if (t != s) {
          if (s.size() != 3 || t[1] != s[1] || t[2] != s[2]) fail("spatial extent differs from saved " + shape_string(t));
          if (on_param) {
            on_param(pname(i, "proj_w"), {s[0], t[0], 1, 1}, t[0], false);
            on_param(pname(i, "proj_b"), {s[0]}, 0, false);
          }
        }
        break;
      }
      case LayerKind::ConcatSaved: {
        auto it = saved.find(l.slot);
        if (it == saved.end()) fail("slot " + std::to_string(l.slot) + " was never saved");
        const Shape& t = it->second;
        need_rank3();
        if (t.size() != 3 || t[1] != s[1] || t[2] != s[2]) fail("spatial extent differs from saved " + shape_string(t));
        s = {s[0] + t[0], s[1], s[2]};
        break;
      }
    }
  }
  return s;
}

Shape probe_shape(const Shape& s) {
  Shape p = s;
  for (int& d : p) {
    if (d == -1) d = 64;
  }
  return p;
}

}  // namespace

Network::Network(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  for (int d : input_shape_) {
    if (d == 0 || d < -1) throw Error("input shape " + shape_string(input_shape_) + " has an invalid extent");
  }
  std::mt19937_64 rng(seed);
  walk_shapes(probe_shape(input_shape_), layers_,
              [&](const std::string& name, const Shape& shape, int fan_in, bool ones) {
                Tensor t(shape, ones ? 1.0 : 0.0);
                if (fan_in > 0) {
                  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
                  for (double& v : t.values()) v = n(rng);
                }
                add_param(name, std::move(t));
              });
}

void Network::add_param(const std::string& name, Tensor t) {
  index_[name] = params_.size();
  params_.push_back({name, std::move(t)});
}

const Tensor& Network::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("network has no parameter " + name);
  return params_[it->second].value;
}

Tensor& Network::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("network has no parameter " + name);
  return params_[it->second].value;
}

bool Network::has_param(const std::string& name) const { return index_.count(name) > 0; }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::string Network::manifest() const {
  std::ostringstream os;
  os << "input=" << shape_string(input_shape_);
  for (const auto& l : layers_) {
    os << ";" << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::Conv: os << "(" << l.out << ",k" << l.kernel << ",s" << l.stride << ",p" << l.pad << ")"; break;
      case LayerKind::Dense: os << "(" << l.out << ")"; break;
      case LayerKind::Save:
      case LayerKind::AddSaved:
      case LayerKind::ConcatSaved: os << "(" << l.slot << ")"; break;
      default: break;
    }
  }
  for (const auto& p : params_) os << ";" << p.name << shape_string(p.value.shape());
  return os.str();
}

Shape Network::output_shape(const Shape& input) const { return walk_shapes(input, layers_, {}); }

ForwardTrace forward(Tape& tape, const Network& net, Var x) {
  const Shape& in = tape.value(x).shape();
  const Shape& want = net.input_shape();
  bool ok = in.size() == want.size();
  for (std::size_t i = 0; ok && i < in.size(); ++i) ok = want[i] == -1 || want[i] == in[i];
  if (!ok) throw Error("input: expected " + shape_string(want) + ", got " + shape_string(in));

  ForwardTrace trace;
  std::map<int, Var> saved;
  Var cur = x;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    try {
      switch (l.kind) {
        case LayerKind::Conv:
          cur = tape.conv2d(cur, tape.param(net.param(pname(i, "w"))), tape.param(net.param(pname(i, "b"))), l.stride,
                            l.pad);
          break;
        case LayerKind::MaxPool: cur = tape.maxpool2(cur); break;
        case LayerKind::Dense:
          cur = tape.dense(cur, tape.param(net.param(pname(i, "w"))), tape.param(net.param(pname(i, "b"))));
          break;
        case LayerKind::Relu: cur = tape.relu(cur); break;
        case LayerKind::Norm: {
          const Var g = tape.param(net.param(pname(i, "gamma")));
          const Var b = tape.param(net.param(pname(i, "beta")));
          cur = tape.value(cur).rank() == 1 ? tape.layer_norm(cur, g, b) : tape.instance_norm(cur, g, b);
          break;
        }
        case LayerKind::GlobalAvgPool: cur = tape.global_avg_pool(cur); break;
        case LayerKind::Upsample: cur = tape.upsample2(cur); break;
        case LayerKind::Save: saved[l.slot] = cur; break;
        case LayerKind::AddSaved: {
          auto it = saved.find(l.slot);
          if (it == saved.end()) throw Error("slot " + std::to_string(l.slot) + " was never saved");
          Var skip = it->second;
          if (net.has_param(pname(i, "proj_w"))) {
            skip = tape.conv2d(skip, tape.param(net.param(pname(i, "proj_w"))),
                               tape.param(net.param(pname(i, "proj_b"))), 1, 0);
          }
          cur = tape.add(cur, skip);
          break;
        }
        case LayerKind::ConcatSaved: {
          auto it = saved.find(l.slot);
          if (it == saved.end()) throw Error("slot " + std::to_string(l.slot) + " was never saved");
          cur = tape.concat_channels(cur, it->second);
          break;
        }
      }
    } catch (const Error& e) {
      throw Error(layer_label(i, l) + ": " + e.what());
    }
    trace.layer_outputs.push_back(cur);
  }
  trace.output = cur;
  return trace;
}

Tensor predict(const Network& net, const Tensor& x) {
  Tape tape;
  const Var in = tape.input(x);
  return tape.value(forward(tape, net, in).output);
}

Gradients zero_gradients(const Network& net) {
  Gradients g;
  for (const auto& p : net.parameters()) g.emplace_back(p.value.size(), 0.0);
  return g;
}

void accumulate(Gradients& acc, const Tape& tape, const Network& net, double weight) {
  const auto& ps = net.parameters();
  if (acc.size() != ps.size()) throw Error("gradient set does not match the network");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::vector<double> g = tape.param_grad(ps[i].value);
    if (g.empty()) continue;
    if (acc[i].size() != g.size()) throw Error("gradient for " + ps[i].name + " has the wrong size");
    for (std::size_t k = 0; k < g.size(); ++k) acc[i][k] += weight * g[k];
  }
}

void sgd_step(Network& net, const Gradients& grads, double lr) {
  if (!(lr >= 0.0)) throw Error("learning rate must be non-negative");
  auto& ps = net.parameters();
  if (grads.size() != ps.size()) throw Error("gradient set does not match the network");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (grads[i].size() != ps[i].value.size()) throw Error("gradient for " + ps[i].name + " has the wrong size");
    auto v = ps[i].value.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * grads[i][k];
  }
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult gradient_check(Network& net, const Tensor& x, const LossFn& loss, std::size_t max_per_param) {
  constexpr double kStep = 1e-5;
  auto eval = [&](const Tensor& input) {
    Tape tape;
    const Var in = tape.input(input);
    return tape.value(loss(tape, forward(tape, net, in).output))[0];
  };

  Tape tape;
  const Var in = tape.input(x, true);
  const Var l = loss(tape, forward(tape, net, in).output);
  tape.backward(l);
  Gradients analytic = zero_gradients(net);
  accumulate(analytic, tape, net);
  std::vector<double> input_grad(tape.grad(in).begin(), tape.grad(in).end());
  input_grad.resize(x.size(), 0.0);

  GradCheckResult r;
  auto check = [&](double a, double n, const std::string& where) {
    const double e = relative_error(a, n);
    ++r.checked;
    if (e > r.max_relative_error || r.worst.empty()) {
      r.max_relative_error = e;
      r.worst = where;
    }
  };
  auto stride_for = [&](std::size_t n) {
    return max_per_param == 0 || n <= max_per_param ? std::size_t{1} : (n + max_per_param - 1) / max_per_param;
  };

  auto& ps = net.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto v = ps[i].value.values();
    for (std::size_t k = 0; k < v.size(); k += stride_for(v.size())) {
      const double orig = v[k];
      v[k] = orig + kStep;
      const double up = eval(x);
      v[k] = orig - kStep;
      const double down = eval(x);
      v[k] = orig;
      check(analytic[i][k], (up - down) / (2 * kStep), ps[i].name + "[" + std::to_string(k) + "]");
    }
  }
  Tensor probe = x;
  for (std::size_t k = 0; k < x.size(); k += stride_for(x.size())) {
    probe[k] = x[k] + kStep;
    const double up = eval(probe);
    probe[k] = x[k] - kStep;
    const double down = eval(probe);
    probe[k] = x[k];
    check(input_grad[k], (up - down) / (2 * kStep), "input[" + std::to_string(k) + "]");
  }
  return r;
}

namespace {

constexpr char kMagic[8] = {'E', 'V', 'H', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    u64(t.size());
    for (double v : t.values()) f64(v);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  void need(std::size_t n) {
    if (bytes.size() - pos < n) throw ParseError("checkpoint truncated", pos);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  Tensor tensor() {
    const std::size_t at = pos;
    const std::uint32_t rank = u32();
    if (rank > 8) throw ParseError("tensor rank out of range", at);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(u32()));
    const std::uint64_t n = u64();
    if (n != shape_size(shape)) throw ParseError("tensor length disagrees with its shape", at);
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return Tensor(std::move(shape), std::move(v));
  }
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.networks.size()));
  for (const auto& [name, net] : c.networks) {
    w.str(name);
    w.str(net.manifest());
    w.u32(static_cast<std::uint32_t>(net.parameters().size()));
    for (const auto& p : net.parameters()) {
      w.str(p.name);
      w.tensor(p.value);
    }
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.str(name);
    w.tensor(t);
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::map<std::string, Network>& templates) {
  return decode_checkpoint(bytes, [&](const std::map<std::string, std::string>&) { return templates; });
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const TemplateFactory& factory) {
  Reader r(bytes);
  r.need(sizeof kMagic);
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw ParseError("not a checkpoint file", 0);
  r.pos = sizeof kMagic;
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  Checkpoint c;
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  const std::map<std::string, Network> templates = factory(c.metadata);
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    const std::string name = r.str();
    const std::string manifest = r.str();
    auto it = templates.find(name);
    if (it == templates.end()) throw Error("checkpoint holds unexpected network '" + name + "'");
    if (it->second.manifest() != manifest) {
      throw Error("checkpoint network '" + name + "' manifest mismatch: stored " + manifest + ", expected " +
                  it->second.manifest());
    }
    Network net = it->second;
    const std::uint32_t count = r.u32();
    if (count != net.parameters().size()) throw Error("checkpoint network '" + name + "' parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string pname = r.str();
      Tensor t = r.tensor();
      Tensor& dst = net.param(pname);
      if (dst.shape() != t.shape()) throw Error("checkpoint parameter " + pname + " has the wrong shape");
      dst = std::move(t);
    }
    c.networks.emplace(name, std::move(net));
  }
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::string name = r.str();
    c.tensors.emplace(std::move(name), r.tensor());
  }
  if (r.pos != bytes.size()) throw ParseError("trailing bytes after checkpoint", r.pos);
  for (const auto& [name, net] : templates) {
    if (!c.networks.count(name)) throw Error("checkpoint lacks network '" + name + "'");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::map<std::string, Network>& templates) {
  return decode_checkpoint(read_file_bytes(path), templates);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const TemplateFactory& factory) {
  return decode_checkpoint(read_file_bytes(path), factory);
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace evha::nn
