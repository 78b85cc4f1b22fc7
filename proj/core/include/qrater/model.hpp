#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qrater/tensor.hpp"

namespace qrater {

class QuantizationPlan;
struct LayerQuantState;

enum class LayerKind { conv2d, fc, relu, add, maxpool, avgpool, flatten, batchnorm };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct Layer {
  int index = 0;  // 1-based
  LayerKind kind = LayerKind::relu;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
  int stride = 1;
  int pad = 0;
  int pool_kernel = 0;
  std::optional<int> skip_from;

  bool is_weighted() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::fc; }
  /// Output channels (conv) or neurons (fc).
  std::int64_t out_channels() const;
};

/// Feed-forward network: layer i consumes the output of layer i-1 (layer 1
/// consumes the input); `add` layers also consume the output of `skip_from`.
class ModelGraph {
 public:
  std::string name;
  int num_classes = 0;
  Shape input_shape;  // per sample, no batch dimension
  std::vector<Layer> layers;

  int num_layers() const noexcept { return static_cast<int>(layers.size()); }
  const Layer& layer(int index) const;
  Layer& layer(int index);

  /// Checks indices, kind geometry and shape propagation; throws FormatError
  /// naming the offending layer.
  void validate() const;

  /// Per-sample output shape of every layer; entry 0 is the input shape.
  std::vector<Shape> output_shapes() const;

  std::vector<int> weighted_layers() const;
};

/// Ordered indices of the conv/fc layers in quantization scope.
struct QuantizableLayerSet {
  std::vector<int> included;

  /// Every weighted layer except, unless `include_first`, the first one and,
  /// unless `include_last`, the last one.
  static QuantizableLayerSet defaults(const ModelGraph& model, bool include_first = false,
                                      bool include_last = true);
  /// Throws ArgumentError when an index is not a conv/fc layer.
  void validate(const ModelGraph& model) const;
};

ModelGraph load_model(const std::filesystem::path& dir);
void save_model(const ModelGraph& model, const std::filesystem::path& dir);

struct ForwardOptions {
  /// Skip activation fake-quantization (quantized weights and bias deltas still apply).
  bool weights_only = false;
};

/// Logits [N x num_classes] for input [N x input_shape...].
Tensor forward(const ModelGraph& model, const Tensor& x, const QuantizationPlan* plan = nullptr,
               ForwardOptions options = {});

/// Weights and biases every weighted layer runs with under a plan, computed
/// once so repeated sub-batch forwards do not re-quantize.
struct PreparedLayers {
  std::vector<std::optional<Tensor>> weights;  // indexed by layer, entry 0 unused
  std::vector<std::optional<Tensor>> biases;
};

PreparedLayers prepare_layers(const ModelGraph& model, const QuantizationPlan* plan, int from = 1);

/// Fills `outputs[from..to]` (1-based layer outputs; outputs[0] is the input)
/// given already-computed entries before `from`. `outputs` must have
/// num_layers + 1 entries.
void forward_range(const ModelGraph& model, const QuantizationPlan* plan, std::vector<Tensor>& outputs, int from,
                   int to, ForwardOptions options = {});
void forward_range(const ModelGraph& model, const QuantizationPlan* plan, const PreparedLayers& prepared,
                   std::vector<Tensor>& outputs, int from, int to, ForwardOptions options = {});

/// Output of one weighted layer for `input`, with the layer's state applied
/// (activation quantization, quantized weights) but without any bias delta.
Tensor weighted_layer_output(const Layer& layer, const Tensor& input, const LayerQuantState* state,
                             ForwardOptions options = {});

/// Weights and bias (including bias delta) the layer runs with under `state`.
Tensor effective_weights(const Layer& layer, const LayerQuantState* state);
Tensor effective_bias(const Layer& layer, const LayerQuantState* state);

}  // namespace qrater
