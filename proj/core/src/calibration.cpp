#include "qrater/calibration.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "qrater/errors.hpp"
#include "qrater/random.hpp"

namespace qrater {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::int64_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  in.seekg(0);
  if (bytes != count * static_cast<std::int64_t>(sizeof(T))) {
    throw FormatError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(count * static_cast<std::int64_t>(sizeof(T))));
  }
  std::vector<T> data(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(data.data()), bytes);
  return data;
}

}  // namespace

Shape CalibrationSet::sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

CalibrationSet CalibrationSet::subset(const std::vector<std::int64_t>& indices) const {
  const std::int64_t row = inputs.numel() / std::max<std::int64_t>(count(), 1);
  CalibrationSet out;
  out.num_classes = num_classes;
  Shape s = inputs.shape();
  s[0] = static_cast<std::int64_t>(indices.size());
  std::vector<float> data;
  data.reserve(indices.size() * static_cast<std::size_t>(row));
  for (auto i : indices) {
    if (i < 0 || i >= count()) throw ArgumentError("calibration index " + std::to_string(i) + " out of range");
    data.insert(data.end(), inputs.raw() + i * row, inputs.raw() + (i + 1) * row);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  out.inputs = Tensor(std::move(s), std::move(data));
  return out;
}

CalibrationSet load_calibration(const fs::path& dir) {
  std::ifstream in(dir / "calib.json");
  if (!in) throw FormatError("missing " + (dir / "calib.json").string());
  json doc;
  CalibrationSet set;
  Shape sample;
  std::int64_t count = 0;
  try {
    doc = json::parse(in);
    count = doc.at("count").get<std::int64_t>();
    sample = doc.at("input_shape").get<Shape>();
    set.num_classes = doc.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw FormatError("calib.json: " + std::string(e.what()));
  }
  if (count < 1) throw FormatError("calib.json: count must be positive");
  Shape full{count};
  full.insert(full.end(), sample.begin(), sample.end());
  set.inputs = Tensor(full, read_raw<float>(dir / "inputs.f32", shape_numel(full)));
  set.labels = read_raw<std::uint32_t>(dir / "labels.u32", count);
  for (auto l : set.labels) {
    if (static_cast<int>(l) >= set.num_classes) throw FormatError("label " + std::to_string(l) + " out of range");
  }
  return set;
}

void save_calibration(const CalibrationSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["count"] = set.count();
  doc["input_shape"] = set.sample_shape();
  doc["num_classes"] = set.num_classes;
  std::ofstream(dir / "calib.json", std::ios::trunc) << doc.dump(2) << '\n';
  std::ofstream in(dir / "inputs.f32", std::ios::binary | std::ios::trunc);
  in.write(reinterpret_cast<const char*>(set.inputs.raw()), set.inputs.numel() * 4);
  std::ofstream lb(dir / "labels.u32", std::ios::binary | std::ios::trunc);
  lb.write(reinterpret_cast<const char*>(set.labels.data()), static_cast<std::streamsize>(set.labels.size() * 4));
}

CalibrationSet select_per_class(const CalibrationSet& set, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw ConfigError("samples per class must be positive");
  std::vector<std::int64_t> order(static_cast<std::size_t>(set.count()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }
  std::vector<int> taken(static_cast<std::size_t>(set.num_classes), 0);
  std::vector<std::int64_t> picked;
  for (auto i : order) {
    auto& t = taken[set.labels[static_cast<std::size_t>(i)]];
    if (t < per_class) {
      ++t;
      picked.push_back(i);
    }
  }
  for (int c = 0; c < set.num_classes; ++c) {
    if (taken[static_cast<std::size_t>(c)] < per_class) {
      throw ConfigError("class " + std::to_string(c) + " has only " + std::to_string(taken[static_cast<std::size_t>(c)]) +
                        " samples, " + std::to_string(per_class) + " requested");
    }
  }
  return set.subset(picked);
}

}  // namespace qrater
