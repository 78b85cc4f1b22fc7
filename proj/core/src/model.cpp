#include "qrater/model.hpp"

#include <algorithm>

#include "qrater/errors.hpp"
#include "qrater/ops.hpp"
#include "qrater/plan.hpp"

namespace qrater {
namespace {

FormatError layer_error(int index, const std::string& msg) {
  return FormatError("layer " + std::to_string(index) + ": " + msg);
}

Shape with_batch(std::int64_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

const LayerQuantState* state_for(const QuantizationPlan* plan, const Layer& layer) {
  if (!plan) return nullptr;
  const auto* st = plan->find(layer.index);
  if (st && !layer.is_weighted()) {
    throw ArgumentError("plan holds a state for layer " + std::to_string(layer.index) + " which is " +
                        to_string(layer.kind));
  }
  return st;
}

Tensor run_weighted(const Layer& layer, const Tensor& input, const Tensor& w, const Tensor* bias,
                    const LayerQuantState* state, ForwardOptions options) {
  const Tensor* x = &input;
  Tensor xq;
  if (state && state->activation && !options.weights_only) {
    const auto& a = *state->activation;
    xq = quantize_activation(input, a.scale, a.rounding, a.bits);
    x = &xq;
  }
  if (layer.kind == LayerKind::conv2d) return ops::conv2d(*x, w, bias, layer.stride, layer.pad);
  return ops::linear(*x, w, bias);
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::fc: return "fc";
    case LayerKind::relu: return "relu";
    case LayerKind::add: return "add";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::batchnorm: return "batchnorm";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  static const std::pair<const char*, LayerKind> kinds[] = {
      {"conv2d", LayerKind::conv2d}, {"fc", LayerKind::fc},           {"relu", LayerKind::relu},
      {"add", LayerKind::add},       {"maxpool", LayerKind::maxpool}, {"avgpool", LayerKind::avgpool},
      {"flatten", LayerKind::flatten}, {"batchnorm", LayerKind::batchnorm}};
  for (const auto& [n, k] : kinds) {
    if (name == n) return k;
  }
  throw FormatError("unknown layer kind '" + name + "'");
}

std::int64_t Layer::out_channels() const {
  if (!is_weighted() || !weights) throw ArgumentError("layer " + std::to_string(index) + " has no weights");
  return weights->dim(0);
}

const Layer& ModelGraph::layer(int index) const {
  if (index < 1 || index > num_layers()) throw ArgumentError("no layer with index " + std::to_string(index));
  return layers[static_cast<std::size_t>(index - 1)];
}

Layer& ModelGraph::layer(int index) {
  if (index < 1 || index > num_layers()) throw ArgumentError("no layer with index " + std::to_string(index));
  return layers[static_cast<std::size_t>(index - 1)];
}

std::vector<int> ModelGraph::weighted_layers() const {
  std::vector<int> out;
  for (const auto& l : layers) {
    if (l.is_weighted()) out.push_back(l.index);
  }
  return out;
}

std::vector<Shape> ModelGraph::output_shapes() const {
  if (input_shape.empty()) throw FormatError("model has an empty input shape");
  std::vector<Shape> shapes{input_shape};
  for (std::size_t pos = 0; pos < layers.size(); ++pos) {
    const Layer& l = layers[pos];
    const int i = l.index;
    if (i != static_cast<int>(pos) + 1) throw layer_error(i, "indices must be contiguous from 1");
    const Shape& in = shapes.back();
    Shape out;
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (!l.weights || l.weights->rank() != 4) throw layer_error(i, "conv2d needs a rank-4 weight");
        if (in.size() != 3) throw layer_error(i, "conv2d input must be [C x H x W], got " + shape_to_string(in));
        const auto& w = l.weights->shape();
        if (w[1] != in[0]) throw layer_error(i, "weight expects " + std::to_string(w[1]) + " input channels");
        if (l.stride < 1 || l.pad < 0) throw layer_error(i, "invalid stride/pad");
        const auto h = in[1] + 2 * l.pad - w[2], wd = in[2] + 2 * l.pad - w[3];
        if (h < 0 || wd < 0 || h % l.stride || wd % l.stride) throw layer_error(i, "kernel geometry does not fit input");
        out = {w[0], h / l.stride + 1, wd / l.stride + 1};
        break;
      }
      case LayerKind::fc: {
        if (!l.weights || l.weights->rank() != 2) throw layer_error(i, "fc needs a rank-2 weight");
        if (in.size() != 1) throw layer_error(i, "fc input must be flat, got " + shape_to_string(in));
        if (l.weights->dim(1) != in[0]) throw layer_error(i, "weight expects " + std::to_string(l.weights->dim(1)) + " inputs");
        out = {l.weights->dim(0)};
        break;
      }
      case LayerKind::relu: out = in; break;
      case LayerKind::add: {
        if (!l.skip_from || *l.skip_from < 0 || *l.skip_from >= i) {
          throw layer_error(i, "add requires skip_from < index");
        }
        if (shapes[static_cast<std::size_t>(*l.skip_from)] != in) {
          throw layer_error(i, "residual shapes differ: " + shape_to_string(in) + " vs " +
                                   shape_to_string(shapes[static_cast<std::size_t>(*l.skip_from)]));
        }
        out = in;
        break;
      }
      case LayerKind::maxpool: {
        if (in.size() != 3) throw layer_error(i, "maxpool input must be [C x H x W]");
        const int k = l.pool_kernel, s = l.stride;
        if (k < 1 || s < 1 || k > in[1] || k > in[2] || (in[1] - k) % s || (in[2] - k) % s) {
          throw layer_error(i, "pool geometry does not fit input");
        }
        out = {in[0], (in[1] - k) / s + 1, (in[2] - k) / s + 1};
        break;
      }
      case LayerKind::avgpool:
        if (in.size() != 3) throw layer_error(i, "avgpool input must be [C x H x W]");
        out = {in[0]};
        break;
      case LayerKind::flatten: out = {shape_numel(in)}; break;
      case LayerKind::batchnorm:
        if (!l.weights || !l.bias || l.weights->numel() != in[0] || l.bias->numel() != in[0]) {
          throw layer_error(i, "batchnorm needs per-channel scale and shift");
        }
        out = in;
        break;
    }
    if (l.is_weighted() && l.bias && l.bias->numel() != out[0]) {
      throw layer_error(i, "bias has " + std::to_string(l.bias->numel()) + " entries, expected " +
                               std::to_string(out[0]));
    }
    if (l.skip_from && l.kind != LayerKind::add) throw layer_error(i, "skip_from is only valid on add layers");
    shapes.push_back(std::move(out));
  }
  return shapes;
}

void ModelGraph::validate() const {
  if (layers.empty()) throw FormatError("model has no layers");
  if (num_classes < 1) throw FormatError("num_classes must be positive");
  const auto shapes = output_shapes();
  if (shapes.back() != Shape{num_classes}) {
    throw layer_error(num_layers(), "final output " + shape_to_string(shapes.back()) + " is not [" +
                                        std::to_string(num_classes) + "]");
  }
}

QuantizableLayerSet QuantizableLayerSet::defaults(const ModelGraph& model, bool include_first, bool include_last) {
  auto w = model.weighted_layers();
  QuantizableLayerSet set;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (k == 0 && !include_first) continue;
    if (k + 1 == w.size() && !include_last) continue;
    set.included.push_back(w[k]);
  }
  return set;
}

void QuantizableLayerSet::validate(const ModelGraph& model) const {
  int prev = 0;
  for (int i : included) {
    if (i <= prev) throw ArgumentError("quantizable layers must be strictly increasing");
    if (!model.layer(i).is_weighted()) {
      throw ArgumentError("layer " + std::to_string(i) + " is " + to_string(model.layer(i).kind) +
                          ", not conv2d/fc");
    }
    prev = i;
  }
}

Tensor effective_weights(const Layer& layer, const LayerQuantState* state) {
  if (!layer.weights) throw ArgumentError("layer " + std::to_string(layer.index) + " has no weights");
  return state ? quantize_weights(*layer.weights, *state) : *layer.weights;
}

Tensor effective_bias(const Layer& layer, const LayerQuantState* state) {
  Tensor b = layer.bias ? *layer.bias : Tensor({layer.out_channels()});
  if (state && state->bias_corrected) {
    if (static_cast<std::int64_t>(state->bias_delta.size()) != b.numel()) {
      throw DimensionError("layer " + std::to_string(layer.index) + ": bias delta length mismatch");
    }
    for (std::int64_t c = 0; c < b.numel(); ++c) b[c] += state->bias_delta[static_cast<std::size_t>(c)];
  }
  return b;
}

Tensor weighted_layer_output(const Layer& layer, const Tensor& input, const LayerQuantState* state,
                             ForwardOptions options) {
  const Tensor w = effective_weights(layer, state);
  return run_weighted(layer, input, w, layer.bias ? &*layer.bias : nullptr, state, options);
}

PreparedLayers prepare_layers(const ModelGraph& model, const QuantizationPlan* plan, int from) {
  PreparedLayers p;
  p.weights.resize(static_cast<std::size_t>(model.num_layers()) + 1);
  p.biases.resize(p.weights.size());
  for (const auto& l : model.layers) {
    if (!l.is_weighted() || l.index < from) continue;
    const auto* st = state_for(plan, l);
    p.weights[static_cast<std::size_t>(l.index)] = effective_weights(l, st);
    if (l.bias || (st && st->bias_corrected)) p.biases[static_cast<std::size_t>(l.index)] = effective_bias(l, st);
  }
  return p;
}

void forward_range(const ModelGraph& model, const QuantizationPlan* plan, const PreparedLayers& prepared,
                   std::vector<Tensor>& outputs, int from, int to, ForwardOptions options) {
  if (static_cast<int>(outputs.size()) != model.num_layers() + 1) {
    throw ArgumentError("forward_range: outputs must hold num_layers + 1 tensors");
  }
  if (from < 1 || to > model.num_layers()) throw ArgumentError("forward_range: layer range out of bounds");
  for (int i = from; i <= to; ++i) {
    const Layer& l = model.layer(i);
    const Tensor& in = outputs[static_cast<std::size_t>(i - 1)];
    Tensor out;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::fc: {
        const auto& w = prepared.weights[static_cast<std::size_t>(i)];
        const auto& b = prepared.biases[static_cast<std::size_t>(i)];
        if (!w) throw ArgumentError("forward_range: layer " + std::to_string(i) + " was not prepared");
        out = run_weighted(l, in, *w, b ? &*b : nullptr, state_for(plan, l), options);
        break;
      }
      case LayerKind::relu: out = ops::relu(in); break;
      case LayerKind::add: out = ops::add(in, outputs[static_cast<std::size_t>(*l.skip_from)]); break;
      case LayerKind::maxpool: out = ops::maxpool2d(in, l.pool_kernel, l.stride); break;
      case LayerKind::avgpool: out = ops::global_avgpool(in); break;
      case LayerKind::flatten: out = ops::flatten(in); break;
      case LayerKind::batchnorm: out = ops::channel_affine(in, *l.weights, *l.bias); break;
    }
    outputs[static_cast<std::size_t>(i)] = std::move(out);
  }
}

void forward_range(const ModelGraph& model, const QuantizationPlan* plan, std::vector<Tensor>& outputs, int from,
                   int to, ForwardOptions options) {
  forward_range(model, plan, prepare_layers(model, plan, from), outputs, from, to, options);
}

Tensor forward(const ModelGraph& model, const Tensor& x, const QuantizationPlan* plan, ForwardOptions options) {
  if (x.rank() != model.input_shape.size() + 1 ||
      !std::equal(model.input_shape.begin(), model.input_shape.end(), x.shape().begin() + 1)) {
    throw DimensionError("input " + shape_to_string(x.shape()) + " does not match model input " +
                         shape_to_string(with_batch(x.rank() ? x.dim(0) : 0, model.input_shape)));
  }
  std::vector<Tensor> outputs(static_cast<std::size_t>(model.num_layers()) + 1);
  outputs[0] = x;
  forward_range(model, plan, outputs, 1, model.num_layers(), options);
  return std::move(outputs.back());
}

}  // namespace qrater
