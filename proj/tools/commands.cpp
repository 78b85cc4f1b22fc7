#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qrater/diagnostics.hpp"
#include "qrater/errors.hpp"
#include "qrater/evaluator.hpp"
#include "qrater/parallel.hpp"

namespace qrater::cli {
namespace {

using json = nlohmann::ordered_json;

int report_error(std::ostream& err, const std::exception& e) {
  std::string kind = "Error";
  int code = 1;
  if (dynamic_cast<const ConfigError*>(&e)) {
    kind = "ConfigError";
    code = 2;
  } else if (dynamic_cast<const ArgumentError*>(&e)) {
    kind = "ArgumentError";
    code = 2;
  } else if (dynamic_cast<const FormatError*>(&e)) {
    kind = "FormatError";
    code = 3;
  } else if (dynamic_cast<const DimensionError*>(&e)) {
    kind = "DimensionError";
    code = 3;
  } else if (dynamic_cast<const DegenerateScaleError*>(&e)) {
    kind = "DegenerateScaleError";
  }
  json j;
  j["error"] = kind;
  j["message"] = e.what();
  err << j.dump() << '\n';
  return code;
}

template <typename F>
int guarded(std::ostream& err, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return report_error(err, e);
  }
}

void check_bits(int bits, const char* what) {
  if (bits < 2 || bits > 8) throw ConfigError(std::string(what) + " bits must be in [2, 8], got " + std::to_string(bits));
}

void check_threads(int threads) {
  if (threads < 1) throw ConfigError("--threads must be >= 1");
}

std::optional<QuantizationPlan> load_endpoint(const std::string& spec, const ModelGraph& model) {
  if (spec == "fp") return std::nullopt;
  return load_plan(spec, model);
}

json eval_json(const Evaluation& e) {
  json j;
  j["top1_accuracy"] = e.accuracy;
  j["cross_entropy"] = e.cross_entropy;
  return j;
}

json rounding_json(const RoundingParams& r) {
  json j;
  j["order"] = to_string(r.order);
  j["gamma_n"] = r.gamma_n;
  j["gamma_s"] = r.gamma_s;
  return j;
}

json layers_json(const QuantizationPlan& plan) {
  json arr = json::array();
  for (const auto& [index, st] : plan.states()) {
    json j;
    j["layer"] = index;
    j["q"] = st.bits;
    j["weight"] = rounding_json(st.weight.rounding);
    j["weight"]["gamma_c"] = st.weight.gamma_c;
    if (st.activation) {
      j["activation"] = rounding_json(st.activation->rounding);
      j["activation"]["gamma_c"] = st.activation->gamma_c;
      j["activation"]["bits"] = st.activation->bits;
    } else {
      j["activation"] = nullptr;
    }
    j["bias_corrected"] = st.bias_corrected;
    arr.push_back(std::move(j));
  }
  return arr;
}

// Writes the model with every weighted layer's effective weights and bias.
void save_quantized_model(const ModelGraph& model, const QuantizationPlan& plan, const fs::path& dir) {
  ModelGraph q = with_weights(model, materialize_weights(model, &plan));
  save_model(q, dir);
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

std::vector<double> parse_axis_spec(const std::string& spec, GridAxis& axis) {
  // start:stop:step
  std::vector<double> parts;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ':');) {
    try {
      parts.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("grid axis '" + spec + "' must be start:stop:step");
    }
  }
  if (parts.size() != 3) throw ConfigError("grid axis '" + spec + "' must be start:stop:step");
  axis = GridAxis{parts[0], parts[1], parts[2]};
  return parts;
}

std::ostream& open_output(const std::optional<fs::path>& path, std::ofstream& file, std::ostream& fallback) {
  if (!path) return fallback;
  file.open(*path);
  if (!file) throw Error("cannot write " + path->string());
  return file;
}

}  // namespace

int cmd_quantize(const QuantizeOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto started = std::chrono::steady_clock::now();
    check_bits(o.weight_bits, "weight");
    if (!o.weights_only) check_bits(o.act_bits, "activation");
    check_threads(o.threads);
    if (o.calib_per_class && *o.calib_per_class < 1) throw ConfigError("--calib-per-class must be positive");
    if (o.bo_extra < 0) throw ConfigError("--bo-extra must be >= 0");

    PipelineConfig config;
    config.weight_bits = o.weight_bits;
    config.act_bits = o.act_bits;
    config.quantize_activations = !o.weights_only;
    config.clip.kind = baseline::clip_kind_from_string(o.clip);
    config.rounding = rounding_order_from_string(o.round);
    config.bias = bias_mode_from_string(o.bias);
    config.grid = o.grid;
    config.bo.n_extra = o.bo_extra;
    config.bo.kappa = o.bo_kappa;
    config.bo.seed = o.seed;
    config.metric = metric_from_string(o.metric);
    config.threads = o.threads;
    config.validate();

    const ModelGraph model = load_model(o.model_dir);
    CalibrationSet calib = load_calibration(o.calib_dir);
    if (o.calib_per_class) calib = select_per_class(calib, *o.calib_per_class, o.seed);
    std::optional<CalibrationSet> test;
    if (o.test_dir) test = load_calibration(*o.test_dir);

    QuantizableLayerSet layers;
    if (o.layers.empty()) {
      layers = QuantizableLayerSet::defaults(model, o.include_first, !o.exclude_last);
    } else {
      layers.included = o.layers;
      std::sort(layers.included.begin(), layers.included.end());
      layers.included.erase(std::unique(layers.included.begin(), layers.included.end()), layers.included.end());
    }
    std::erase_if(layers.included, [&](int i) { return std::find(o.exclude.begin(), o.exclude.end(), i) != o.exclude.end(); });
    layers.validate(model);

    const LogFn log = [&](const std::string& msg) {
      if (!o.quiet) err << msg << '\n';
    };
    SearchResult result = run_quantization(model, calib, layers, config, log);
    PipelineConfig base_config = mse_rtn_baseline(o.weight_bits, o.act_bits);
    base_config.quantize_activations = !o.weights_only;
    base_config.threads = o.threads;
    const SearchResult baseline_result = run_quantization(model, calib, layers, base_config);

    fs::create_directories(o.out_dir);
    const fs::path plan_path = o.out_dir / "plan.json";
    save_plan(result.plan, model, plan_path);
    write_trace_jsonl(result.traces, o.out_dir / "trace.jsonl");
    save_quantized_model(model, result.plan, o.out_dir / "quantized");

    // Validation: the written plan must replay the last recorded objective.
    const QuantizationPlan reloaded = load_plan(plan_path, model);
    const Evaluation replay = evaluate_plan(model, calib, &reloaded);
    std::optional<Score> final_recorded;
    for (auto it = result.traces.rbegin(); it != result.traces.rend() && !final_recorded; ++it) {
      if (const auto k = it->chosen_index()) final_recorded = it->points[*k].score;
    }
    const Score replay_score = to_score(replay, config.metric);
    const bool replay_ok = !final_recorded || (final_recorded->value == replay_score.value &&
                                               final_recorded->tiebreak == replay_score.tiebreak);

    json summary;
    summary["model"] = model.name;
    json cfg;
    cfg["weight_bits"] = o.weight_bits;
    cfg["act_bits"] = o.weights_only ? json(nullptr) : json(o.act_bits);
    cfg["clip"] = baseline::to_string(config.clip.kind);
    cfg["round"] = to_string(config.rounding);
    cfg["bias"] = to_string(config.bias);
    cfg["bo_extra"] = o.bo_extra;
    cfg["bo_kappa"] = o.bo_kappa;
    cfg["seed"] = o.seed;
    cfg["metric"] = to_string(config.metric);
    cfg["layers"] = layers.included;
    cfg["calibration_samples"] = calib.count();
    summary["config"] = std::move(cfg);

    struct Row {
      std::string name;
      const QuantizationPlan* plan;
    };
    const Row rows[] = {{"full_precision", nullptr}, {"baseline_mse_rtn", &baseline_result.plan}, {"quantized", &result.plan}};
    json table;
    for (const auto& row : rows) {
      json r;
      r["calib"] = eval_json(evaluate_plan(model, calib, row.plan));
      if (test) r["test"] = eval_json(evaluate_plan(model, *test, row.plan));
      table[row.name] = std::move(r);
    }
    summary["accuracy"] = table;
    summary["layers"] = layers_json(result.plan);
    summary["evaluations"] = result.evaluations;
    summary["warnings"] = result.warnings;
    summary["final_trace_objective"] = final_recorded ? json(final_recorded->value) : json(nullptr);
    summary["replay_objective"] = replay_score.value;
    summary["replay_matches"] = replay_ok;
    summary["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    {
      std::ofstream f(o.out_dir / "summary.json");
      f << summary.dump(2) << '\n';
      if (!f) throw Error("failed writing summary.json");
    }

    const std::string split = test ? "test" : "calib";
    out << "W/A bits " << o.weight_bits << '/' << (o.weights_only ? std::string("fp") : std::to_string(o.act_bits))
        << ", top-1 on " << split << " (%)\n";
    for (const auto& row : rows) {
      out << "  " << std::left << std::setw(18) << row.name << pct(table[row.name][split]["top1_accuracy"].get<double>())
          << '\n';
    }
    out << "outputs in " << o.out_dir.string() << '\n';
    if (!replay_ok) throw Error("plan replay does not reproduce the final trace objective");
    return 0;
  });
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ModelGraph model = load_model(o.model_dir);
    const CalibrationSet calib = load_calibration(o.calib_dir);
    const auto plan = load_endpoint(o.plan, model);
    const Evaluation e = evaluate_plan(model, calib, plan ? &*plan : nullptr, ForwardOptions{o.weights_only});
    out << "top1_accuracy " << exact_decimal(e.accuracy) << '\n';
    out << "cross_entropy " << exact_decimal(e.cross_entropy) << '\n';
    return 0;
  });
}

int cmd_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    check_bits(o.weight_bits, "weight");
    check_bits(o.act_bits, "activation");
    check_threads(o.threads);
    const Phase phase = phase_from_string(o.phase);
    PipelineConfig config;
    config.weight_bits = o.weight_bits;
    config.act_bits = o.act_bits;
    config.rounding = rounding_order_from_string(o.round);
    config.grid = o.grid;
    config.metric = metric_from_string(o.metric);
    config.threads = o.threads;
    const ModelGraph model = load_model(o.model_dir);
    const CalibrationSet calib = load_calibration(o.calib_dir);
    const auto prior = load_endpoint(o.plan, model);
    const SearchTrace t = sweep_phase(model, calib, prior ? *prior : QuantizationPlan{}, o.layer, phase, config,
                                      SweepBase{o.weight_gamma_c, o.act_gamma_c});
    std::ofstream file;
    std::ostream& csv = open_output(o.out, file, out);
    for (const auto& name : t.param_names) csv << name << ',';
    csv << "objective,tiebreak,accuracy,cross_entropy\n";
    for (const auto& p : t.points) {
      for (double v : p.params) csv << exact_decimal(v) << ',';
      csv << exact_decimal(p.score.value) << ',' << exact_decimal(p.score.tiebreak) << ','
          << exact_decimal(p.eval.accuracy) << ',' << exact_decimal(p.eval.cross_entropy) << '\n';
    }
    return 0;
  });
}

int cmd_trace(const TraceOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    check_threads(o.threads);
    if (o.n_points < 3) throw ConfigError("--points must be >= 3");
    const ModelGraph model = load_model(o.model_dir);
    const CalibrationSet calib = load_calibration(o.calib_dir);
    const auto a = load_endpoint(o.from, model);
    const auto b = load_endpoint(o.to, model);
    const TrajectoryReport r = interpolate_trajectory(model, materialize_weights(model, a ? &*a : nullptr),
                                                      materialize_weights(model, b ? &*b : nullptr), o.n_points, calib,
                                                      o.threads);
    std::ofstream file;
    write_trajectory_csv(r, open_output(o.out, file, out));
    err << "points " << r.alphas.size() << ", convexity violations " << r.violations.size() << '\n';
    for (const auto& v : r.violations) {
      err << "  alpha " << r.alphas[v.mid] << " above chord of " << r.alphas[v.x1] << ".." << r.alphas[v.x2]
          << " (lambda " << v.lambda << ")\n";
    }
    return 0;
  });
}

int cmd_correlate(const CorrelateOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    check_bits(o.bits, "weight");
    check_threads(o.threads);
    if (o.n_configs < 3) throw ConfigError("--configs must be >= 3");
    const ModelGraph model = load_model(o.model_dir);
    const CalibrationSet calib = load_calibration(o.calib_dir);
    const auto configs = random_layer_configs(model, o.layer, o.n_configs, o.bits, o.seed);
    const CorrelationReport r = correlation_study(model, o.layer, configs, calib, o.threads);
    std::ofstream file;
    write_correlation_csv(r, open_output(o.out, file, out));
    if (r.pearson_r) {
      err << "pearson_r " << exact_decimal(*r.pearson_r) << '\n';
    } else {
      err << "pearson_r omitted: " << r.reason << '\n';
    }
    return 0;
  });
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-training quantization with per-layer clipping and rounding search"};
  app.require_subcommand(1);
  const int hw = default_thread_count();

  QuantizeOptions q;
  q.threads = hw;
  std::optional<int> bits, wbits, abits;
  std::string gc_grid, gn_grid, gs_grid;
  auto* quantize = app.add_subcommand("quantize", "search a quantization plan and write plan/trace/summary");
  quantize->add_option("--model", q.model_dir, "model directory")->required();
  quantize->add_option("--calib", q.calib_dir, "calibration set directory")->required();
  quantize->add_option("--out", q.out_dir, "output directory")->required();
  quantize->add_option("--test", q.test_dir, "held-out set reported in the summary");
  quantize->add_option("--bits", bits, "weight and activation bits");
  quantize->add_option("--wbits", wbits, "weight bits");
  quantize->add_option("--abits", abits, "activation bits");
  quantize->add_flag("--weights-only", q.weights_only, "leave activations in full precision");
  quantize->add_option("--clip", q.clip, "qrater | mse | kl | aciq")->capture_default_str();
  quantize->add_option("--round", q.round, "second | first | rtn")->capture_default_str();
  quantize->add_option("--bias", q.bias, "selective | always | none")->capture_default_str();
  quantize->add_option("--gamma-c-grid", gc_grid, "start:stop:step");
  quantize->add_option("--gamma-n-grid", gn_grid, "start:stop:step");
  quantize->add_option("--gamma-s-grid", gs_grid, "start:stop:step");
  quantize->add_option("--bo-extra", q.bo_extra, "BO evaluations per phase after the grid")->capture_default_str();
  quantize->add_option("--bo-kappa", q.bo_kappa, "UCB exploration weight")->capture_default_str();
  quantize->add_option("--seed", q.seed, "seed for BO and calibration subsetting")->capture_default_str();
  quantize->add_option("--layers", q.layers, "explicit layer indices")->delimiter(',');
  quantize->add_option("--exclude", q.exclude, "layer indices to skip")->delimiter(',');
  quantize->add_flag("--include-first", q.include_first, "also quantize the first weighted layer");
  quantize->add_flag("--exclude-last", q.exclude_last, "leave the last weighted layer in full precision");
  quantize->add_option("--metric", q.metric, "top1_accuracy | neg_cross_entropy")->capture_default_str();
  quantize->add_option("--calib-per-class", q.calib_per_class, "samples per class after a seeded shuffle");
  quantize->add_option("--threads", q.threads, "worker threads")->capture_default_str();
  quantize->add_flag("--quiet", q.quiet, "no progress log");

  EvalOptions e;
  auto* eval = app.add_subcommand("eval", "top-1 accuracy and cross-entropy of a plan");
  eval->add_option("--model", e.model_dir, "model directory")->required();
  eval->add_option("--calib", e.calib_dir, "evaluation set directory")->required();
  eval->add_option("--plan", e.plan, "plan.json or fp")->capture_default_str();
  eval->add_flag("--weights-only", e.weights_only, "skip activation quantization");

  SweepOptions s;
  s.threads = hw;
  std::string sgc_grid, sgn_grid, sgs_grid;
  auto* sweep = app.add_subcommand("sweep", "grid sweep of one layer and phase as CSV");
  sweep->add_option("--model", s.model_dir, "model directory")->required();
  sweep->add_option("--calib", s.calib_dir, "calibration set directory")->required();
  sweep->add_option("--plan", s.plan, "plan for the preceding layers, or fp")->capture_default_str();
  sweep->add_option("--layer", s.layer, "layer index")->required();
  sweep->add_option("--phase", s.phase, "weight_clip | weight_round | act_clip | act_round")->required();
  sweep->add_option("--wbits", s.weight_bits, "weight bits")->capture_default_str();
  sweep->add_option("--abits", s.act_bits, "activation bits")->capture_default_str();
  sweep->add_option("--round", s.round, "second | first")->capture_default_str();
  sweep->add_option("--gamma-c-grid", sgc_grid, "start:stop:step");
  sweep->add_option("--gamma-n-grid", sgn_grid, "start:stop:step");
  sweep->add_option("--gamma-s-grid", sgs_grid, "start:stop:step");
  sweep->add_option("--weight-gamma-c", s.weight_gamma_c, "weight gamma_c when the layer has no state")
      ->capture_default_str();
  sweep->add_option("--act-gamma-c", s.act_gamma_c, "activation gamma_c when the layer has no state")
      ->capture_default_str();
  sweep->add_option("--metric", s.metric, "top1_accuracy | neg_cross_entropy")->capture_default_str();
  sweep->add_option("--out", s.out, "CSV path (default stdout)");
  sweep->add_option("--threads", s.threads, "worker threads")->capture_default_str();

  TraceOptions t;
  t.threads = hw;
  auto* trace = app.add_subcommand("trace", "loss along the segment between two weight sets as CSV");
  trace->add_option("--model", t.model_dir, "model directory")->required();
  trace->add_option("--calib", t.calib_dir, "calibration set directory")->required();
  trace->add_option("--from", t.from, "plan.json or fp")->capture_default_str();
  trace->add_option("--to", t.to, "plan.json or fp")->capture_default_str();
  trace->add_option("--points", t.n_points, "samples along the segment")->capture_default_str();
  trace->add_option("--out", t.out, "CSV path (default stdout)");
  trace->add_option("--threads", t.threads, "worker threads")->capture_default_str();

  CorrelateOptions c;
  c.threads = hw;
  auto* correlate = app.add_subcommand("correlate", "quantization error vs loss for random configs as CSV");
  correlate->add_option("--model", c.model_dir, "model directory")->required();
  correlate->add_option("--calib", c.calib_dir, "calibration set directory")->required();
  correlate->add_option("--layer", c.layer, "layer index")->required();
  correlate->add_option("--configs", c.n_configs, "number of random configs")->capture_default_str();
  correlate->add_option("--bits", c.bits, "weight bits")->capture_default_str();
  correlate->add_option("--seed", c.seed, "config seed")->capture_default_str();
  correlate->add_option("--out", c.out, "CSV path (default stdout)");
  correlate->add_option("--threads", c.threads, "worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    // --help and --version exit 0; every other parse failure is a usage error.
    return app.exit(ex, out, err) == 0 ? 0 : 2;
  }

  return guarded(err, [&] {
    auto apply_grid = [](GridSpec& g, const std::string& c_spec, const std::string& n_spec, const std::string& s_spec) {
      if (!c_spec.empty()) parse_axis_spec(c_spec, g.gamma_c);
      if (!n_spec.empty()) parse_axis_spec(n_spec, g.gamma_n);
      if (!s_spec.empty()) parse_axis_spec(s_spec, g.gamma_s);
    };
    if (*quantize) {
      if (bits) q.weight_bits = q.act_bits = *bits;
      if (wbits) q.weight_bits = *wbits;
      if (abits) q.act_bits = *abits;
      apply_grid(q.grid, gc_grid, gn_grid, gs_grid);
      return cmd_quantize(q, out, err);
    }
    if (*eval) return cmd_eval(e, out, err);
    if (*sweep) {
      apply_grid(s.grid, sgc_grid, sgn_grid, sgs_grid);
      return cmd_sweep(s, out, err);
    }
    if (*trace) return cmd_trace(t, out, err);
    return cmd_correlate(c, out, err);
  });
}

}  // namespace qrater::cli
