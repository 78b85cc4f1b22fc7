#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qrater/tensor.hpp"

namespace qrater {

/// Labelled inputs used to evaluate the search objective.
struct CalibrationSet {
  Tensor inputs;  // [count x input_shape...]
  std::vector<std::uint32_t> labels;
  int num_classes = 0;

  std::int64_t count() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  Shape sample_shape() const;
  CalibrationSet subset(const std::vector<std::int64_t>& indices) const;
};

/// Reads calib.json + inputs.f32 + labels.u32.
CalibrationSet load_calibration(const std::filesystem::path& dir);
void save_calibration(const CalibrationSet& set, const std::filesystem::path& dir);

/// First `per_class` samples of each class after a seeded shuffle, kept in
/// shuffled order. Throws ConfigError when a class has fewer samples.
CalibrationSet select_per_class(const CalibrationSet& set, int per_class, std::uint64_t seed);

}  // namespace qrater
