#include "qrater/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "qrater/errors.hpp"
#include "qrater/quantizer.hpp"
#include "qrater/random.hpp"

namespace qrater {

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::weight_clip: return "weight_clip";
    case Phase::weight_round: return "weight_round";
    case Phase::act_clip: return "act_clip";
    case Phase::act_round: return "act_round";
    case Phase::bias: return "bias";
  }
  return "?";
}

Phase phase_from_string(const std::string& name) {
  for (Phase p : {Phase::weight_clip, Phase::weight_round, Phase::act_clip, Phase::act_round, Phase::bias}) {
    if (to_string(p) == name) return p;
  }
  throw ArgumentError("unknown phase '" + name + "'");
}

std::vector<double> GridAxis::values() const {
  if (!(step > 0.0) || stop < start) throw ArgumentError("grid axis needs step > 0 and stop >= start");
  const auto n = static_cast<std::int64_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    // + 0.0 turns -0.0 into 0.0.
    out.push_back(std::round((start + static_cast<double>(k) * step) * 1e12) / 1e12 + 0.0);
  }
  return out;
}

std::string to_string(BiasMode mode) {
  switch (mode) {
    case BiasMode::none: return "none";
    case BiasMode::always: return "always";
    case BiasMode::selective: return "selective";
  }
  return "?";
}

BiasMode bias_mode_from_string(const std::string& name) {
  if (name == "none" || name == "off") return BiasMode::none;
  if (name == "always" || name == "on") return BiasMode::always;
  if (name == "selective") return BiasMode::selective;
  throw ArgumentError("unknown bias mode '" + name + "'");
}

void PipelineConfig::validate() const {
  grid_max(weight_bits);
  if (quantize_activations) grid_max(act_bits);
  clip.validate();
  if (bo.n_extra < 0) throw ConfigError("n_extra must be >= 0");
  if (act_batch_size < 1) throw ConfigError("activation batch size must be positive");
  if (chunk_size < 1) throw ConfigError("chunk size must be positive");
  for (const auto* axis : {&grid.gamma_c, &grid.gamma_n, &grid.gamma_s}) axis->values();
  for (double g : grid.gamma_c.values()) {
    if (!(g > 0.0 && g <= 1.0)) throw ConfigError("gamma_c grid must lie in (0, 1]");
  }
  for (double g : grid.gamma_n.values()) {
    if (g < -1.0 || g > 1.0) throw ConfigError("gamma_n grid must lie in [-1, 1]");
  }
  for (double g : grid.gamma_s.values()) {
    if (g < 0.0 || g > 1.0) throw ConfigError("gamma_s grid must lie in [0, 1]");
  }
}

PipelineConfig mse_rtn_baseline(int weight_bits, int act_bits) {
  PipelineConfig c;
  c.weight_bits = weight_bits;
  c.act_bits = act_bits;
  c.clip = {baseline::ClipKind::mse};
  c.rounding = RoundingOrder::rtn;
  c.bias = BiasMode::none;
  return c;
}

std::optional<std::size_t> SearchTrace::chosen_index() const {
  if (points.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (better(points[i].score, points[best].score)) best = i;
  }
  return best;
}

namespace {

using Apply = std::function<void(std::span<const double>)>;

// Search state for one layer at a time.
class Driver {
 public:
  Driver(const ModelGraph& model, const CalibrationSet& calib, const PipelineConfig& config, const LogFn& log)
      : model_(model), config_(config), log_(log), evaluator_(model, calib, config.threads, config.chunk_size) {}

  QuantizationPlan plan;

  void begin_layer(int index, LayerQuantState state) {
    layer_ = index;
    evaluator_.set_frontier(index, plan);
    cur_ = std::move(state);
    cur_.frozen = false;
  }

  LayerQuantState& state() { return cur_; }
  void install() { plan.set(layer_, cur_); }
  const Tensor& weights() const { return *model_.layer(layer_).weights; }

  SearchTrace weight_clip() {
    const Tensor& w = weights();
    const auto set = [&](double gc) {
      cur_.weight = make_weight_state(w, gc, config_.weight_bits, RoundingParams{});
      install();
    };
    if (config_.clip.kind != baseline::ClipKind::gamma_sweep) {
      const double th = baseline::select_threshold(w, config_.weight_bits, config_.clip);
      set(std::min(th / w.max_abs(), 1.0));
      return skipped(Phase::weight_clip, "threshold selected by " + baseline::to_string(config_.clip.kind));
    }
    return search(Phase::weight_clip, {"gamma_c"}, grid1(config_.grid.gamma_c), Bounds{{0.01}, {1.0}},
                  [&](std::span<const double> p) { set(p[0]); });
  }

  SearchTrace weight_round() {
    if (config_.rounding == RoundingOrder::rtn) return skipped(Phase::weight_round, "rtn rounding");
    return rounding_search(Phase::weight_round, [&](const RoundingParams& r) {
      cur_.weight.rounding = r;
      install();
    });
  }

  SearchTrace act_clip() {
    maxima_ = evaluator_.frontier_batch_maxima(config_.act_batch_size);
    double mean = 0.0;
    for (float m : maxima_) mean += m;
    mean /= static_cast<double>(maxima_.size());
    if (!(mean > 0.0)) {
      cur_.activation.reset();
      install();
      return skipped(Phase::act_clip, "all-zero activations");
    }
    const auto set = [&](double gc) {
      const auto th = activation_threshold(maxima_, gc, config_.act_bits);
      cur_.activation = ActivationQuantState{config_.act_bits, gc, th.scale, RoundingParams{}};
      install();
    };
    if (config_.clip.kind != baseline::ClipKind::gamma_sweep) {
      const double th = baseline::select_threshold(evaluator_.frontier_input(), config_.act_bits, config_.clip);
      cur_.activation = ActivationQuantState{config_.act_bits, th / mean,
                                             th / static_cast<double>(grid_max(config_.act_bits)), RoundingParams{}};
      install();
      return skipped(Phase::act_clip, "threshold selected by " + baseline::to_string(config_.clip.kind));
    }
    return search(Phase::act_clip, {"gamma_c"}, grid1(config_.grid.gamma_c), Bounds{{0.01}, {1.0}},
                  [&](std::span<const double> p) { set(p[0]); });
  }

  /// Installs an RTN activation state at `gamma_c`; false for all-zero activations.
  bool set_activation_gamma(double gamma_c) {
    maxima_ = evaluator_.frontier_batch_maxima(config_.act_batch_size);
    if (*std::max_element(maxima_.begin(), maxima_.end()) == 0.0f) return false;
    const auto th = activation_threshold(maxima_, gamma_c, config_.act_bits);
    cur_.activation = ActivationQuantState{config_.act_bits, gamma_c, th.scale, RoundingParams{}};
    install();
    return true;
  }

  SearchTrace act_round() {
    if (!cur_.activation) return skipped(Phase::act_round, "activation quantization skipped");
    if (config_.rounding == RoundingOrder::rtn) return skipped(Phase::act_round, "rtn rounding");
    return rounding_search(Phase::act_round, [&](const RoundingParams& r) {
      cur_.activation->rounding = r;
      install();
    });
  }

  SearchTrace bias() {
    SearchTrace t = make_trace(Phase::bias, {"bias_corrected"});
    cur_.bias_corrected = false;
    cur_.bias_delta.clear();
    install();
    const auto delta = evaluator_.frontier_bias_delta(plan);
    const auto apply = [&] {
      cur_.bias_corrected = true;
      cur_.bias_delta = delta;
      install();
    };
    if (config_.bias == BiasMode::always) {
      apply();
      t.points.push_back(evaluate({1.0}, PointSource::grid));
    } else {
      t.points.push_back(evaluate({0.0}, PointSource::grid));
      apply();
      t.points.push_back(evaluate({1.0}, PointSource::grid));
      // Strict comparison: without correction wins ties.
      if (!better(t.points[1].score, t.points[0].score)) {
        cur_.bias_corrected = false;
        cur_.bias_delta.clear();
        install();
      }
    }
    t.chosen = {cur_.bias_corrected ? 1.0 : 0.0};
    return t;
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  std::int64_t evaluations() const { return seq_; }

 private:
  static std::vector<std::vector<double>> grid1(const GridAxis& axis) {
    std::vector<std::vector<double>> g;
    for (double v : axis.values()) g.push_back({v});
    return g;
  }

  SearchTrace make_trace(Phase phase, std::vector<std::string> names) const {
    SearchTrace t;
    t.layer = layer_;
    t.phase = phase;
    t.param_names = std::move(names);
    return t;
  }

  SearchTrace skipped(Phase phase, std::string reason) const {
    SearchTrace t = make_trace(phase, {});
    t.skipped = std::move(reason);
    return t;
  }

  TracePoint evaluate(std::vector<double> params, PointSource source) {
    TracePoint p;
    p.eval = evaluator_.evaluate(plan);
    p.score = to_score(p.eval, config_.metric);
    p.params = std::move(params);
    p.source = source;
    p.timestamp = seq_++;
    return p;
  }

  SearchTrace rounding_search(Phase phase, const std::function<void(const RoundingParams&)>& set) {
    const auto gn = config_.grid.gamma_n.values();
    if (config_.rounding == RoundingOrder::first) {
      std::vector<std::vector<double>> grid;
      for (double n : gn) grid.push_back({n});
      return search(phase, {"gamma_n"}, grid, Bounds{{-1.0}, {1.0}}, [&](std::span<const double> p) {
        set(RoundingParams{p[0], 0.0, RoundingOrder::first});
      });
    }
    std::vector<std::vector<double>> grid;
    for (double n : gn) {
      for (double s : config_.grid.gamma_s.values()) grid.push_back({n, s});
    }
    return search(phase, {"gamma_n", "gamma_s"}, grid, Bounds{{-1.0, 0.0}, {1.0, 1.0}},
                  [&](std::span<const double> p) { set(RoundingParams{p[0], p[1], RoundingOrder::second}); });
  }

  // Grid probes, then BO seeded with them; installs the first best point.
  SearchTrace search(Phase phase, std::vector<std::string> names, const std::vector<std::vector<double>>& grid,
                     const Bounds& bounds, const Apply& apply) {
    SearchTrace t = make_trace(phase, std::move(names));
    std::vector<Observation> probes;
    for (const auto& p : grid) {
      apply(p);
      t.points.push_back(evaluate(p, PointSource::grid));
      probes.push_back({p, t.points.back().score, false});
    }
    if (config_.bo.n_extra > 0) {
      BOConfig bo = config_.bo;
      bo.seed = derive_seed(config_.bo.seed, static_cast<std::uint64_t>(layer_), static_cast<std::uint64_t>(phase));
      const ObjectiveFn f = [&](std::span<const double> x) {
        apply(x);
        t.points.push_back(evaluate({x.begin(), x.end()}, PointSource::bo));
        return t.points.back().score;
      };
      bo_optimize(f, bounds, std::move(probes), bo);
    }
    const auto best = t.chosen_index();
    if (!best) throw ArgumentError("empty search grid");
    t.chosen = t.points[*best].params;
    apply(t.chosen);
    return t;
  }

  const ModelGraph& model_;
  const PipelineConfig& config_;
  const LogFn& log_;
  Evaluator evaluator_;
  int layer_ = 0;
  LayerQuantState cur_;
  std::vector<float> maxima_;
  std::int64_t seq_ = 0;
};

std::string describe(const SearchTrace& t) {
  std::ostringstream os;
  os << "layer " << t.layer << ' ' << to_string(t.phase) << ": ";
  if (!t.skipped.empty()) {
    os << "skipped (" << t.skipped << ')';
    return os.str();
  }
  for (std::size_t i = 0; i < t.param_names.size(); ++i) {
    os << (i ? ", " : "") << t.param_names[i] << '=' << t.chosen[i];
  }
  const auto& best = t.points[*t.chosen_index()];
  os << " (acc " << best.eval.accuracy << ", ce " << best.eval.cross_entropy << ", " << t.points.size()
     << " evals)";
  return os.str();
}

template <typename F>
SearchTrace with_context(int layer, Phase phase, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error("layer " + std::to_string(layer) + " " + to_string(phase) + ": " + e.what());
  }
}

}  // namespace

SearchResult run_quantization(const ModelGraph& model, const CalibrationSet& calib,
                              const QuantizableLayerSet& layers, const PipelineConfig& config, const LogFn& log) {
  config.validate();
  layers.validate(model);
  if (calib.count() == 0) throw ArgumentError("empty calibration set");
  if (calib.sample_shape() != model.input_shape) {
    throw DimensionError("calibration samples " + shape_to_string(calib.sample_shape()) + " do not match model input " +
                         shape_to_string(model.input_shape));
  }
  if (calib.num_classes != model.num_classes) {
    throw DimensionError("calibration set has " + std::to_string(calib.num_classes) + " classes, model has " +
                         std::to_string(model.num_classes));
  }
  SearchResult result;
  if (layers.included.empty()) return result;

  Driver d(model, calib, config, log);
  auto record = [&](SearchTrace t) {
    d.log(describe(t));
    result.traces.push_back(std::move(t));
  };
  for (int i : layers.included) {
    const Tensor& w = *model.layer(i).weights;
    if (w.max_abs() == 0.0) {
      const std::string msg = "layer " + std::to_string(i) + ": all-zero weights, left in full precision";
      result.warnings.push_back(msg);
      d.log(msg);
      SearchTrace t;
      t.layer = i;
      t.phase = Phase::weight_clip;
      t.skipped = "all-zero weights";
      result.traces.push_back(std::move(t));
      continue;
    }
    LayerQuantState st;
    st.bits = config.weight_bits;
    d.begin_layer(i, st);
    record(with_context(i, Phase::weight_clip, [&] { return d.weight_clip(); }));
    record(with_context(i, Phase::weight_round, [&] { return d.weight_round(); }));
    if (config.quantize_activations) {
      record(with_context(i, Phase::act_clip, [&] { return d.act_clip(); }));
      if (!d.state().activation) {
        const std::string msg = "layer " + std::to_string(i) + ": all-zero activations, activation kept in full precision";
        result.warnings.push_back(msg);
      }
      record(with_context(i, Phase::act_round, [&] { return d.act_round(); }));
    }
    if (config.bias != BiasMode::none) record(with_context(i, Phase::bias, [&] { return d.bias(); }));
    d.install();
    d.plan.freeze(i);
  }
  result.plan = std::move(d.plan);
  result.evaluations = d.evaluations();
  return result;
}

SearchResult run_qrater(const ModelGraph& model, const CalibrationSet& calib, const QuantizableLayerSet& layers,
                        const GridSpec& grid, const BOConfig& bo, Metric metric, int weight_bits, int act_bits) {
  PipelineConfig c;
  c.grid = grid;
  c.bo = bo;
  c.metric = metric;
  c.weight_bits = weight_bits;
  c.act_bits = act_bits;
  return run_quantization(model, calib, layers, c);
}

SearchTrace sweep_phase(const ModelGraph& model, const CalibrationSet& calib, const QuantizationPlan& prior,
                        int layer, Phase phase, const PipelineConfig& config, const SweepBase& base) {
  if (layer < 1 || layer > model.num_layers() || !model.layer(layer).is_weighted()) {
    throw ArgumentError("layer " + std::to_string(layer) + " is not a conv2d/fc layer");
  }
  if (phase == Phase::bias) throw ArgumentError("bias correction has no sweep grid");
  PipelineConfig c = config;
  c.bo.n_extra = 0;
  c.clip.kind = baseline::ClipKind::gamma_sweep;
  if (c.rounding == RoundingOrder::rtn) c.rounding = RoundingOrder::second;
  c.validate();

  Driver d(model, calib, c, {});
  for (const auto& [index, st] : prior.states()) {
    if (index < layer) d.plan.set(index, st);
  }
  const Tensor& w = *model.layer(layer).weights;
  LayerQuantState st;
  if (const auto* own = prior.find(layer)) {
    st = *own;
  } else {
    st.bits = c.weight_bits;
    st.weight = make_weight_state(w, base.weight_gamma_c, c.weight_bits, RoundingParams{});
  }
  c.weight_bits = st.bits;
  d.begin_layer(layer, st);
  return with_context(layer, phase, [&]() -> SearchTrace {
    switch (phase) {
      case Phase::weight_clip: return d.weight_clip();
      case Phase::weight_round: return d.weight_round();
      case Phase::act_clip: return d.act_clip();
      case Phase::act_round:
        if (!d.state().activation && !d.set_activation_gamma(base.act_gamma_c)) {
          throw DegenerateScaleError("all-zero activations");
        }
        return d.act_round();
      case Phase::bias: break;
    }
    throw ArgumentError("unsupported phase");
  });
}

void write_trace_jsonl(const std::vector<SearchTrace>& traces, std::ostream& out) {
  for (const auto& t : traces) {
    if (!t.skipped.empty()) {
      nlohmann::ordered_json j;
      j["layer"] = t.layer;
      j["phase"] = to_string(t.phase);
      j["skipped"] = t.skipped;
      out << j.dump() << '\n';
      continue;
    }
    for (const auto& p : t.points) {
      nlohmann::ordered_json j;
      j["layer"] = t.layer;
      j["phase"] = to_string(t.phase);
      nlohmann::ordered_json params = nlohmann::ordered_json::object();
      for (std::size_t k = 0; k < t.param_names.size(); ++k) params[t.param_names[k]] = p.params[k];
      j["params"] = std::move(params);
      j["objective"] = p.score.value;
      j["tiebreak"] = p.score.tiebreak;
      j["accuracy"] = p.eval.accuracy;
      j["cross_entropy"] = p.eval.cross_entropy;
      j["source"] = p.source == PointSource::grid ? "grid" : "bo";
      j["timestamp"] = p.timestamp;
      out << j.dump() << '\n';
    }
  }
}

void write_trace_jsonl(const std::vector<SearchTrace>& traces, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_trace_jsonl(traces, out);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace qrater
