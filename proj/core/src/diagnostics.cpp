#include "qrater/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "qrater/errors.hpp"
#include "qrater/evaluator.hpp"
#include "qrater/parallel.hpp"
#include "qrater/random.hpp"

namespace qrater {
namespace {

Tensor lerp(const Tensor& a, const Tensor& b, double alpha) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    out[i] = static_cast<float>((1.0 - alpha) * static_cast<double>(a[i]) + alpha * static_cast<double>(b[i]));
  }
  return out;
}

void check_weight_set(const ModelGraph& model, const WeightSet& w, const char* name) {
  const auto slots = static_cast<std::size_t>(model.num_layers()) + 1;
  if (w.weights.size() != slots || w.biases.size() != slots) {
    throw DimensionError(std::string(name) + " has " + std::to_string(w.weights.size()) + " slots, model needs " +
                         std::to_string(slots));
  }
  for (const auto& l : model.layers) {
    if (!l.is_weighted()) continue;
    const auto& t = w.weights[static_cast<std::size_t>(l.index)];
    if (!t || t->shape() != l.weights->shape()) {
      throw DimensionError(std::string(name) + ": layer " + std::to_string(l.index) + " weights do not match " +
                           shape_to_string(l.weights->shape()));
    }
    const auto& b = w.biases[static_cast<std::size_t>(l.index)];
    if (b && b->numel() != l.out_channels()) {
      throw DimensionError(std::string(name) + ": layer " + std::to_string(l.index) + " bias length mismatch");
    }
  }
}

}  // namespace

WeightSet materialize_weights(const ModelGraph& model, const QuantizationPlan* plan) {
  WeightSet w;
  const PreparedLayers p = prepare_layers(model, plan);
  w.weights = p.weights;
  w.biases = p.biases;
  return w;
}

ModelGraph with_weights(const ModelGraph& model, const WeightSet& weights) {
  check_weight_set(model, weights, "weight set");
  ModelGraph m = model;
  for (auto& l : m.layers) {
    if (!l.is_weighted()) continue;
    l.weights = weights.weights[static_cast<std::size_t>(l.index)];
    l.bias = weights.biases[static_cast<std::size_t>(l.index)];
  }
  return m;
}

std::vector<ConvexityViolation> convexity_violations(const std::vector<double>& xs, const std::vector<double>& fs,
                                                     double tolerance) {
  if (xs.size() != fs.size()) throw DimensionError("convexity check needs one value per sample");
  std::vector<ConvexityViolation> out;
  for (std::size_t k = 1; k + 1 < xs.size(); ++k) {
    const double lambda = (xs[k + 1] - xs[k]) / (xs[k + 1] - xs[k - 1]);
    const double chord = lambda * fs[k - 1] + (1.0 - lambda) * fs[k + 1];
    if (fs[k] > chord + tolerance) out.push_back({lambda, k - 1, k + 1, k});
  }
  return out;
}

std::vector<double> interpolation_alphas(int n_points) {
  if (n_points < 3) throw ArgumentError("n_points must be >= 3");
  std::vector<double> a(static_cast<std::size_t>(n_points));
  for (int k = 0; k < n_points; ++k) a[static_cast<std::size_t>(k)] = static_cast<double>(k) / (n_points - 1);
  return a;
}

TrajectoryReport trace_curve(const std::function<double(double)>& loss, int n_points, double tolerance) {
  TrajectoryReport r;
  r.alphas = interpolation_alphas(n_points);
  for (double a : r.alphas) r.losses.push_back(loss(a));
  r.violations = convexity_violations(r.alphas, r.losses, tolerance);
  return r;
}

TrajectoryReport interpolate_trajectory(const ModelGraph& model, const WeightSet& w1, const WeightSet& w2,
                                        int n_points, const CalibrationSet& calib, int threads) {
  check_weight_set(model, w1, "W1");
  check_weight_set(model, w2, "W2");
  TrajectoryReport r;
  r.alphas = interpolation_alphas(n_points);
  r.losses.resize(r.alphas.size());
  r.accuracies.resize(r.alphas.size());
  parallel_for(static_cast<std::int64_t>(r.alphas.size()), threads, [&](std::int64_t k) {
    const double alpha = r.alphas[static_cast<std::size_t>(k)];
    WeightSet w;
    w.weights.resize(w1.weights.size());
    w.biases.resize(w1.biases.size());
    for (const auto& l : model.layers) {
      if (!l.is_weighted()) continue;
      const auto i = static_cast<std::size_t>(l.index);
      w.weights[i] = lerp(*w1.weights[i], *w2.weights[i], alpha);
      if (w1.biases[i] || w2.biases[i]) {
        const Tensor zero({l.out_channels()});
        w.biases[i] = lerp(w1.biases[i] ? *w1.biases[i] : zero, w2.biases[i] ? *w2.biases[i] : zero, alpha);
      }
    }
    const Evaluation e = evaluate_plan(with_weights(model, w), calib, nullptr);
    r.losses[static_cast<std::size_t>(k)] = e.cross_entropy;
    r.accuracies[static_cast<std::size_t>(k)] = e.accuracy;
  });
  r.violations = convexity_violations(r.alphas, r.losses);
  return r;
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("pearson needs paired samples");
  if (x.size() < 3) return {std::nullopt, "fewer than 3 points"};
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) return {std::nullopt, "quantization error has zero variance"};
  if (!(syy > 0.0)) return {std::nullopt, "loss has zero variance"};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), {}};
}

std::vector<LayerQuantState> random_layer_configs(const ModelGraph& model, int layer, int n, int bits,
                                                  std::uint64_t seed) {
  const Layer& l = model.layer(layer);
  if (!l.is_weighted()) throw ArgumentError("layer " + std::to_string(layer) + " is not a conv2d/fc layer");
  if (n < 0) throw ArgumentError("config count must be >= 0");
  Rng rng(seed);
  std::vector<LayerQuantState> out;
  for (int k = 0; k < n; ++k) {
    const double gc = uniform(rng, 0.1, 1.0);
    const double gn = uniform(rng, -1.0, 1.0);
    const double gs = uniform01(rng);
    LayerQuantState st;
    st.bits = bits;
    st.weight = make_weight_state(*l.weights, gc, bits, RoundingParams{gn, gs, RoundingOrder::second});
    out.push_back(std::move(st));
  }
  return out;
}

CorrelationReport correlation_study(const ModelGraph& model, int layer, const std::vector<LayerQuantState>& configs,
                                    const CalibrationSet& calib, int threads) {
  const Layer& l = model.layer(layer);
  if (!l.is_weighted()) throw ArgumentError("layer " + std::to_string(layer) + " is not a conv2d/fc layer");
  if (configs.size() < 3) throw ArgumentError("correlation study needs at least 3 configs");
  CorrelationReport r;
  r.points.resize(configs.size());
  parallel_for(static_cast<std::int64_t>(configs.size()), threads, [&](std::int64_t k) {
    auto& p = r.points[static_cast<std::size_t>(k)];
    p.config = configs[static_cast<std::size_t>(k)];
    p.config.frozen = false;
    QuantizationPlan plan;
    plan.set(layer, p.config);
    const Tensor wq = effective_weights(l, &p.config);
    double err = 0.0;
    for (std::int64_t i = 0; i < wq.numel(); ++i) {
      const double d = static_cast<double>((*l.weights)[i]) - static_cast<double>(wq[i]);
      err += d * d;
    }
    p.quant_error = err;
    p.loss = evaluate_plan(model, calib, &plan).cross_entropy;
  });
  std::vector<double> xs, ys;
  for (const auto& p : r.points) {
    xs.push_back(p.quant_error);
    ys.push_back(p.loss);
  }
  auto pr = pearson(xs, ys);
  r.pearson_r = pr.r;
  r.reason = std::move(pr.reason);
  return r;
}

void write_trajectory_csv(const TrajectoryReport& report, std::ostream& out) {
  out << "alpha,loss\n";
  for (std::size_t k = 0; k < report.alphas.size(); ++k) {
    out << exact_decimal(report.alphas[k]) << ',' << exact_decimal(report.losses[k]) << '\n';
  }
}

void write_correlation_csv(const CorrelationReport& report, std::ostream& out) {
  out << "qerr,loss,params_json\n";
  for (const auto& p : report.points) {
    nlohmann::ordered_json j;
    j["q"] = p.config.bits;
    j["gamma_c"] = p.config.weight.gamma_c;
    j["gamma_n"] = p.config.weight.rounding.gamma_n;
    j["gamma_s"] = p.config.weight.rounding.gamma_s;
    j["order"] = to_string(p.config.weight.rounding.order);
    std::string field = j.dump();
    std::string quoted = "\"";
    for (char c : field) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
    quoted += '"';
    out << exact_decimal(p.quant_error) << ',' << exact_decimal(p.loss) << ',' << quoted << '\n';
  }
}

}  // namespace qrater
