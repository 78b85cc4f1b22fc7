#include "qrater/plan.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "qrater/errors.hpp"
#include "qrater/model.hpp"

namespace qrater {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

FormatError layer_error(int index, const std::string& msg) {
  return FormatError("plan layer " + std::to_string(index) + ": " + msg);
}

json rounding_json(double gamma_c, double scale, const RoundingParams& r) {
  return json{{"gamma_c", gamma_c},
              {"gamma_n", r.gamma_n},
              {"gamma_s", r.gamma_s},
              {"order", to_string(r.order)},
              {"scale", exact_decimal(scale)}};
}

double parse_scale(const json& j, int layer) {
  const auto& v = j.at("scale");
  double s = 0.0;
  if (v.is_string()) {
    const auto str = v.get<std::string>();
    std::istringstream is(str);
    is.imbue(std::locale::classic());
    if (!(is >> s) || !is.eof()) throw layer_error(layer, "unparsable scale '" + str + "'");
  } else {
    s = v.get<double>();
  }
  if (!(s > 0.0) || !std::isfinite(s)) throw layer_error(layer, "scale must be positive");
  return s;
}

RoundingParams parse_rounding(const json& j, int layer) {
  RoundingParams r;
  r.gamma_n = j.at("gamma_n").get<double>();
  r.gamma_s = j.at("gamma_s").get<double>();
  try {
    r.order = rounding_order_from_string(j.at("order").get<std::string>());
    r.validate();
  } catch (const ArgumentError& e) {
    throw layer_error(layer, e.what());
  }
  return r;
}

// Layer index of the last record that starts before `offset`, or -1.
int layer_before(const std::string& text, std::size_t offset) {
  static const std::regex key(R"re("layer"\s*:\s*(\d+))re");
  int found = -1;
  const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(offset, text.size()));
  for (std::sregex_iterator it(text.begin(), end, key), last; it != last; ++it) found = std::stoi((*it)[1]);
  return found;
}

}  // namespace

std::string exact_decimal(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

const LayerQuantState* QuantizationPlan::find(int layer) const {
  auto it = states_.find(layer);
  return it == states_.end() ? nullptr : &it->second;
}

void QuantizationPlan::set(int layer, LayerQuantState state) {
  auto it = states_.find(layer);
  if (it != states_.end() && it->second.frozen) {
    throw ArgumentError("layer " + std::to_string(layer) + " is frozen");
  }
  states_[layer] = std::move(state);
}

void QuantizationPlan::erase(int layer) {
  auto it = states_.find(layer);
  if (it == states_.end()) return;
  if (it->second.frozen) throw ArgumentError("layer " + std::to_string(layer) + " is frozen");
  states_.erase(it);
}

void QuantizationPlan::freeze(int layer) {
  auto it = states_.find(layer);
  if (it == states_.end()) throw ArgumentError("layer " + std::to_string(layer) + " has no state to freeze");
  it->second.frozen = true;
}

void save_plan(const QuantizationPlan& plan, const ModelGraph& model, const fs::path& path) {
  json doc;
  doc["model"] = model.name;
  doc["layers"] = json::array();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  for (const auto& [index, st] : plan.states()) {
    json lj;
    lj["layer"] = index;
    lj["q"] = st.bits;
    lj["weight"] = rounding_json(st.weight.gamma_c, st.weight.scale, st.weight.rounding);
    if (st.activation) {
      lj["activation"] = rounding_json(st.activation->gamma_c, st.activation->scale, st.activation->rounding);
      lj["activation"]["bits"] = st.activation->bits;
    } else {
      lj["activation"] = nullptr;
    }
    lj["bias_corrected"] = st.bias_corrected;
    if (st.bias_corrected) {
      const std::string blob = path.stem().string() + ".bias" + std::to_string(index) + ".f32";
      lj["bias_delta_blob"] = blob;
      std::ofstream out(path.parent_path() / blob, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(st.bias_delta.data()),
                static_cast<std::streamsize>(st.bias_delta.size() * sizeof(float)));
    }
    doc["layers"].push_back(std::move(lj));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

QuantizationPlan load_plan(const fs::path& path, const ModelGraph& model) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing plan " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const int layer = layer_before(text, e.byte);
    if (layer >= 0) throw layer_error(layer, std::string("malformed record: ") + e.what());
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw FormatError(path.string() + ": no layers array");
  QuantizationPlan plan;
  for (const auto& lj : doc["layers"]) {
    const int index = lj.value("layer", -1);
    try {
      if (index < 1 || index > model.num_layers()) throw layer_error(index, "not a layer of model " + model.name);
      const Layer& layer = model.layer(index);
      if (!layer.is_weighted()) throw layer_error(index, "is " + to_string(layer.kind) + ", not conv2d/fc");
      LayerQuantState st;
      st.bits = lj.at("q").get<int>();
      if (st.bits < 2 || st.bits > 16) throw layer_error(index, "q out of range");
      const auto& wj = lj.at("weight");
      st.weight.gamma_c = wj.at("gamma_c").get<double>();
      st.weight.scale = parse_scale(wj, index);
      st.weight.rounding = parse_rounding(wj, index);
      const auto expected = make_weight_state(*layer.weights, st.weight.gamma_c, st.bits, st.weight.rounding).scale;
      if (std::fabs(expected - st.weight.scale) > 1e-12 * expected) {
        throw layer_error(index, "weight scale " + exact_decimal(st.weight.scale) + " does not match gamma_c on this model (" +
                                     exact_decimal(expected) + ")");
      }
      if (lj.contains("activation") && !lj["activation"].is_null()) {
        const auto& aj = lj["activation"];
        ActivationQuantState a;
        a.bits = aj.value("bits", st.bits);
        a.gamma_c = aj.at("gamma_c").get<double>();
        a.scale = parse_scale(aj, index);
        a.rounding = parse_rounding(aj, index);
        st.activation = a;
      }
      st.bias_corrected = lj.value("bias_corrected", false);
      if (st.bias_corrected) {
        const auto blob = path.parent_path() / lj.at("bias_delta_blob").get<std::string>();
        std::ifstream bin(blob, std::ios::binary);
        if (!bin) throw layer_error(index, "missing bias delta blob " + blob.string());
        st.bias_delta.resize(static_cast<std::size_t>(layer.out_channels()));
        bin.read(reinterpret_cast<char*>(st.bias_delta.data()),
                 static_cast<std::streamsize>(st.bias_delta.size() * sizeof(float)));
        if (bin.gcount() != static_cast<std::streamsize>(st.bias_delta.size() * sizeof(float)) ||
            bin.peek() != std::char_traits<char>::eof()) {
          throw layer_error(index, "bias delta blob length does not match " + std::to_string(layer.out_channels()) +
                                       " channels");
        }
      }
      st.frozen = true;
      plan.set(index, std::move(st));
    } catch (const json::exception& e) {
      throw layer_error(index, e.what());
    } catch (const DegenerateScaleError& e) {
      throw layer_error(index, e.what());
    } catch (const ArgumentError& e) {
      throw layer_error(index, e.what());
    }
  }
  return plan;
}

}  // namespace qrater
