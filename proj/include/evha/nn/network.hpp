#pragma once
// Sequential network description. Save/AddSaved/ConcatSaved slots express
// residual and U-Net skips without a general graph.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evha/nn/tape.hpp"
#include "evha/nn/tensor.hpp"

namespace evha::nn {

enum class LayerKind { Conv, MaxPool, Dense, Relu, Norm, GlobalAvgPool, Upsample, Save, AddSaved, ConcatSaved };

std::string to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out = 0;  // conv channels or dense width
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int slot = 0;  // Save / AddSaved / ConcatSaved

  static LayerSpec conv(int out, int kernel = 3, int stride = 1, int pad = -1);
  static LayerSpec dense(int out);
  static LayerSpec maxpool() { return {LayerKind::MaxPool}; }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec norm() { return {LayerKind::Norm}; }
  static LayerSpec gap() { return {LayerKind::GlobalAvgPool}; }
  static LayerSpec upsample() { return {LayerKind::Upsample}; }
  static LayerSpec save(int slot) { return {LayerKind::Save, 0, 3, 1, 1, slot}; }
  static LayerSpec add_saved(int slot) { return {LayerKind::AddSaved, 0, 3, 1, 1, slot}; }
  static LayerSpec concat_saved(int slot) { return {LayerKind::ConcatSaved, 0, 3, 1, 1, slot}; }
};

struct Parameter {
  std::string name;
  Tensor value;
};

class Network {
 public:
  Network() = default;
  // Extents of -1 in input_shape are free (fully convolutional nets); they are
  // probed with 64 during shape validation. Throws naming the first bad layer.
  Network(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  bool has_param(const std::string& name) const;
  std::size_t parameter_count() const;

  // Layer list, input shape and parameter shapes; checkpoints must agree on it.
  std::string manifest() const;

  // Output shape for a given input shape; throws naming the failing layer.
  Shape output_shape(const Shape& input) const;

 private:
  void add_param(const std::string& name, Tensor t);

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct ForwardTrace {
  Var output;
  std::vector<Var> layer_outputs;  // one per layer, after that layer
};

// Records the forward pass on `tape`; input shape mismatches and layer errors
// are reported with the layer index and kind.
ForwardTrace forward(Tape& tape, const Network& net, Var x);
Tensor predict(const Network& net, const Tensor& x);

// Parameter gradients, aligned with net.parameters().
using Gradients = std::vector<std::vector<double>>;

Gradients zero_gradients(const Network& net);
// Adds the gradients recorded on `tape` for net's parameters, scaled by `weight`.
void accumulate(Gradients& acc, const Tape& tape, const Network& net, double weight = 1.0);
void sgd_step(Network& net, const Gradients& grads, double lr);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "param[index]" or "input[index]"
  std::size_t checked = 0;
};

using LossFn = std::function<Var(Tape&, Var output)>;

// Central differences with step 1e-5 over every parameter entry (or an evenly
// strided subset of at most max_per_param entries) and the input.
GradCheckResult gradient_check(Network& net, const Tensor& x, const LossFn& loss, std::size_t max_per_param = 0);

double relative_error(double analytic, double numeric);

// Versioned checkpoint bundle: metadata strings, named networks, named tensors.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Network> networks;
  std::map<std::string, Tensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
// Networks are rebuilt from `templates`; a manifest mismatch throws.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::map<std::string, Network>& templates);
// Same, with templates built from the metadata, which precedes the networks.
using TemplateFactory = std::function<std::map<std::string, Network>(const std::map<std::string, std::string>&)>;
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const TemplateFactory& factory);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::map<std::string, Network>& templates);
Checkpoint load_checkpoint(const std::filesystem::path& path, const TemplateFactory& factory);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);

}  // namespace evha::nn
