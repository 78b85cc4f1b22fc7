#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "qrater/quantizer.hpp"

namespace qrater {

class ModelGraph;

/// Per-layer quantization states keyed by 1-based layer index. Layers absent
/// from the plan run in full precision. A frozen state can no longer be
/// replaced or removed.
class QuantizationPlan {
 public:
  const LayerQuantState* find(int layer) const;
  bool contains(int layer) const { return states_.count(layer) != 0; }

  /// Installs or replaces the state of `layer`; throws ArgumentError when the
  /// existing state is frozen.
  void set(int layer, LayerQuantState state);
  void erase(int layer);
  void freeze(int layer);

  const std::map<int, LayerQuantState>& states() const noexcept { return states_; }
  bool empty() const noexcept { return states_.empty(); }
  std::size_t size() const noexcept { return states_.size(); }

 private:
  std::map<int, LayerQuantState> states_;
};

/// Writes `path` (JSON) plus one `<stem>.bias<i>.f32` blob per bias-corrected
/// layer next to it. Scales are written as round-trippable decimal strings.
void save_plan(const QuantizationPlan& plan, const ModelGraph& model, const std::filesystem::path& path);

/// Reads and validates a plan against `model`; throws FormatError naming the
/// offending layer on malformed or mismatched records.
QuantizationPlan load_plan(const std::filesystem::path& path, const ModelGraph& model);

/// Formats a double with enough digits to round-trip exactly.
std::string exact_decimal(double value);

}  // namespace qrater
