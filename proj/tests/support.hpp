#pragma once

// Shared helpers for the unit tests and the acceptance binary: fixture paths,
// scratch directories, raw blob readers and small hand-built models.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrater/calibration.hpp"
#include "qrater/model.hpp"
#include "qrater/random.hpp"
#include "qrater/tensor.hpp"

namespace qtest {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(QRATER_FIXTURES_DIR) / name; }

/// Directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "qrater") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
std::vector<T> read_blob(const fs::path& p) {
  const std::string bytes = read_text(p);
  std::vector<T> out(bytes.size() / sizeof(T));
  std::copy(bytes.data(), bytes.data() + out.size() * sizeof(T), reinterpret_cast<char*>(out.data()));
  return out;
}

inline qrater::Tensor random_tensor(qrater::Shape shape, qrater::Rng& rng, double lo = -1.0, double hi = 1.0) {
  qrater::Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(qrater::uniform(rng, lo, hi));
  return t;
}

/// Heavy-tailed sample: Laplace body with sparse large outliers.
inline qrater::Tensor heavy_tailed_tensor(std::int64_t n, qrater::Rng& rng) {
  qrater::Tensor t({n});
  for (float& v : t.data()) {
    const double u = qrater::uniform01(rng) - 0.5;
    double x = -(u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::fabs(u) + 1e-300) * 0.1;
    if (qrater::uniform01(rng) < 0.01) x *= 20.0;
    v = static_cast<float>(x);
  }
  return t;
}

inline qrater::Layer fc_layer(int index, qrater::Tensor w, std::optional<qrater::Tensor> b = std::nullopt) {
  qrater::Layer l;
  l.index = index;
  l.kind = qrater::LayerKind::fc;
  l.weights = std::move(w);
  l.bias = std::move(b);
  return l;
}

inline qrater::Layer plain_layer(int index, qrater::LayerKind kind) {
  qrater::Layer l;
  l.index = index;
  l.kind = kind;
  return l;
}

inline qrater::Layer conv_layer(int index, qrater::Tensor w, std::optional<qrater::Tensor> b, int stride, int pad) {
  qrater::Layer l;
  l.index = index;
  l.kind = qrater::LayerKind::conv2d;
  l.weights = std::move(w);
  l.bias = std::move(b);
  l.stride = stride;
  l.pad = pad;
  return l;
}

inline qrater::ModelGraph make_model(std::string name, qrater::Shape input_shape, int num_classes,
                                     std::vector<qrater::Layer> layers) {
  qrater::ModelGraph m;
  m.name = std::move(name);
  m.input_shape = std::move(input_shape);
  m.num_classes = num_classes;
  m.layers = std::move(layers);
  m.validate();
  return m;
}

inline qrater::CalibrationSet make_calibration(qrater::Tensor inputs, std::vector<std::uint32_t> labels,
                                               int num_classes) {
  qrater::CalibrationSet c;
  c.inputs = std::move(inputs);
  c.labels = std::move(labels);
  c.num_classes = num_classes;
  return c;
}

/// Labels taken from the argmax of `model` on `inputs`, so the model is 100%
/// accurate on the resulting set.
inline qrater::CalibrationSet self_labelled(const qrater::ModelGraph& model, qrater::Tensor inputs) {
  const qrater::Tensor logits = qrater::forward(model, inputs);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return make_calibration(std::move(inputs), std::move(labels), model.num_classes);
}

}  // namespace qtest
