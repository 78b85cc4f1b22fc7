#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "qrater/errors.hpp"
#include "qrater/model.hpp"

namespace qrater {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

FormatError layer_error(int index, const std::string& msg) {
  return FormatError("layer " + std::to_string(index) + ": " + msg);
}

Tensor read_blob(const fs::path& path, const Shape& shape, int layer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw layer_error(layer, "cannot open blob " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  in.seekg(0);
  const auto expected = shape_numel(shape);
  if (bytes % 4 != 0 || bytes / 4 != expected) {
    throw layer_error(layer, "blob " + path.filename().string() + " holds " + std::to_string(bytes / 4) +
                                 " floats, manifest declares " + shape_to_string(shape) + " (" +
                                 std::to_string(expected) + ")");
  }
  std::vector<float> data(static_cast<std::size_t>(expected));
  in.read(reinterpret_cast<char*>(data.data()), bytes);
  return Tensor(shape, std::move(data));
}

void write_blob(const fs::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.raw()), t.numel() * 4);
}

template <typename T>
T field(const json& j, const char* key, int layer) {
  if (!j.contains(key)) throw layer_error(layer, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw layer_error(layer, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

ModelGraph load_model(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw FormatError("missing " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  ModelGraph m;
  try {
    m.name = doc.value("name", dir.filename().string());
    m.num_classes = doc.at("num_classes").get<int>();
    m.input_shape = doc.at("input_shape").get<Shape>();
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw FormatError("manifest has no layers array");
  int position = 0;
  for (const auto& lj : doc["layers"]) {
    ++position;
    Layer l;
    l.index = lj.value("index", position);
    l.kind = [&] {
      try {
        return layer_kind_from_string(field<std::string>(lj, "kind", l.index));
      } catch (const FormatError& e) {
        throw layer_error(l.index, e.what());
      }
    }();
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto kernel = field<std::vector<std::int64_t>>(lj, "kernel", l.index);
        if (kernel.size() != 2) throw layer_error(l.index, "kernel must be [kh, kw]");
        const auto out_c = field<std::int64_t>(lj, "out_channels", l.index);
        l.stride = lj.value("stride", 1);
        l.pad = lj.value("pad", 0);
        l.weights = read_blob(dir / field<std::string>(lj, "weights", l.index),
                              {out_c, field<std::int64_t>(lj, "in_channels", l.index), kernel[0], kernel[1]}, l.index);
        if (lj.contains("bias")) l.bias = read_blob(dir / field<std::string>(lj, "bias", l.index), {out_c}, l.index);
        break;
      }
      case LayerKind::fc: {
        const auto out_f = field<std::int64_t>(lj, "out_features", l.index);
        l.weights = read_blob(dir / field<std::string>(lj, "weights", l.index),
                              {out_f, field<std::int64_t>(lj, "in_features", l.index)}, l.index);
        if (lj.contains("bias")) l.bias = read_blob(dir / field<std::string>(lj, "bias", l.index), {out_f}, l.index);
        break;
      }
      case LayerKind::batchnorm: {
        const auto c = field<std::int64_t>(lj, "channels", l.index);
        l.weights = read_blob(dir / field<std::string>(lj, "weights", l.index), {c}, l.index);
        l.bias = read_blob(dir / field<std::string>(lj, "bias", l.index), {c}, l.index);
        break;
      }
      case LayerKind::maxpool:
        l.pool_kernel = field<int>(lj, "kernel", l.index);
        l.stride = lj.value("stride", l.pool_kernel);
        break;
      case LayerKind::add: l.skip_from = field<int>(lj, "skip_from", l.index); break;
      default: break;
    }
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}

void save_model(const ModelGraph& model, const fs::path& dir) {
  model.validate();
  fs::create_directories(dir);
  json doc;
  doc["name"] = model.name;
  doc["num_classes"] = model.num_classes;
  doc["input_shape"] = model.input_shape;
  doc["layers"] = json::array();
  for (const auto& l : model.layers) {
    json lj;
    lj["index"] = l.index;
    lj["kind"] = to_string(l.kind);
    const std::string idx = std::to_string(l.index);
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto& s = l.weights->shape();
        lj["out_channels"] = s[0];
        lj["in_channels"] = s[1];
        lj["kernel"] = {s[2], s[3]};
        lj["stride"] = l.stride;
        lj["pad"] = l.pad;
        break;
      }
      case LayerKind::fc:
        lj["out_features"] = l.weights->dim(0);
        lj["in_features"] = l.weights->dim(1);
        break;
      case LayerKind::batchnorm: lj["channels"] = l.weights->numel(); break;
      case LayerKind::maxpool:
        lj["kernel"] = l.pool_kernel;
        lj["stride"] = l.stride;
        break;
      case LayerKind::add: lj["skip_from"] = *l.skip_from; break;
      default: break;
    }
    if (l.weights) {
      lj["weights"] = "w" + idx + ".f32";
      write_blob(dir / ("w" + idx + ".f32"), *l.weights);
    }
    if (l.bias) {
      lj["bias"] = "b" + idx + ".f32";
      write_blob(dir / ("b" + idx + ".f32"), *l.bias);
    }
    doc["layers"].push_back(std::move(lj));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << doc.dump(2) << '\n';
}

}  // namespace qrater
