// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>

#include "commands.hpp"
#include "json.hpp"
#include "qrater/baseline_clipping.hpp"
#include "qrater/bayes_opt.hpp"
#include "qrater/diagnostics.hpp"
#include "qrater/quantizer.hpp"
#include "support.hpp"

using namespace qrater;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check, double time_limit_s = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0.0 && secs >= time_limit_s) {
    o.pass = false;
    o.detail += " (runtime limit " + std::to_string(time_limit_s) + " s exceeded)";
  }
  failures += !o.pass;
  std::printf("%s  %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::int64_t clamp_level(double level, int q) {
  const double m = std::pow(2.0, q - 1) - 1;
  return static_cast<std::int64_t>(std::clamp(level, -m, m));
}

const double kGammaS[] = {0.0, 0.25, 0.5, 0.75, 1.0};

Outcome rtn_equivalence() {
  Rng rng(1001);
  std::int64_t mismatches = 0;
  for (int i = 0; i < 1000000; ++i) {
    const int q = 2 + static_cast<int>(uniform_index(rng, 7));
    const double s = std::max(uniform01(rng), 1e-6);
    const double wc = uniform(rng, -1.2, 1.2) * s * std::pow(2.0, q - 1);
    const double gs = kGammaS[uniform_index(rng, 5)];
    const double want = s * static_cast<double>(clamp_level(std::floor(wc / s + 0.5), q));
    const double a = round_first_order(wc, s, 0.0, q);
    const double b = round_second_order(wc, s, 0.0, gs, q);
    mismatches += std::memcmp(&a, &want, sizeof a) != 0 || std::memcmp(&b, &want, sizeof b) != 0;
  }
  return {mismatches == 0, "1e6 samples, q 2..8, mismatches " + std::to_string(mismatches)};
}

Outcome fr_range() {
  Rng rng(1002);
  std::int64_t bad = 0;
  for (int i = 0; i < 1000000; ++i) {
    const int q = 2 + static_cast<int>(uniform_index(rng, 7));
    const double s = std::max(uniform01(rng), 1e-6);
    const double wc = uniform(rng, -1.2, 1.2) * s * std::pow(2.0, q - 1);
    const RoundingParams p = i % 2 ? RoundingParams{uniform(rng, -1, 1), 0.0, RoundingOrder::first}
                                   : RoundingParams{uniform(rng, -1, 1), uniform01(rng), RoundingOrder::second};
    const double fr = rounding_offset(wc, s, p, q);
    const double wr = std::floor(wc / s + 0.5);
    const auto k = static_cast<double>(unclamped_level(wc, s, p, q));
    bad += !(fr >= -0.5 && fr <= 0.5) || std::fabs(k - wr) > 1.0;
  }
  return {bad == 0, "1e6 samples, both orders, violations " + std::to_string(bad)};
}

Outcome grid_on_grid() {
  Rng rng(1003);
  std::int64_t bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const int q = 2 + static_cast<int>(uniform_index(rng, 7));
    const Tensor w = qtest::random_tensor({256}, rng, -uniform(rng, 0.01, 5.0), uniform(rng, 0.01, 5.0));
    LayerQuantState st;
    st.bits = q;
    const auto order = static_cast<RoundingOrder>(uniform_index(rng, 3));
    st.weight = make_weight_state(w, uniform(rng, 0.01, 1.0), q, {uniform(rng, -1, 1), uniform01(rng), order});
    const Tensor out = quantize_weights(w, st);
    const double s = st.weight.scale;
    for (float v : out.data()) {
      // Values are stored as float: on grid means exactly float(s * k) for an integer k in range.
      const double k = std::round(static_cast<double>(v) / s);
      bad += v != static_cast<float>(s * k) || std::fabs(k) > static_cast<double>(grid_max(q));
    }
  }
  return {bad == 0, "1000 tensors, off-grid values " + std::to_string(bad)};
}

Outcome bias_correction_check() {
  struct Case {
    const char* fixture;
    int layer;
  };
  double worst = 0.0;
  for (const Case k : {Case{"cnn-digits", 3}, Case{"cnn-digits", 6}, Case{"cnn-digits", 11}, Case{"mlp-2layer", 3}}) {
    const ModelGraph m = load_model(qtest::fixture(k.fixture) / "model");
    const CalibrationSet c = load_calibration(qtest::fixture(k.fixture) / "calib");
    QuantizationPlan plan;
    LayerQuantState st;
    st.bits = 3;
    st.weight = make_weight_state(*m.layer(k.layer).weights, 0.8, 3, {0.3, 0.5, RoundingOrder::second});
    plan.set(k.layer, st);
    st.bias_delta = bias_correction(m, k.layer, c, plan);
    st.bias_corrected = true;
    plan.set(k.layer, st);
    std::vector<Tensor> fp(static_cast<std::size_t>(m.num_layers()) + 1), q(fp.size());
    fp[0] = q[0] = c.inputs;
    forward_range(m, nullptr, fp, 1, k.layer);
    forward_range(m, &plan, q, 1, k.layer);
    const Tensor& a = fp[static_cast<std::size_t>(k.layer)];
    const Tensor& b = q[static_cast<std::size_t>(k.layer)];
    const std::int64_t n = a.dim(0), ch = a.dim(1), inner = a.numel() / (n * ch);
    for (std::int64_t cc = 0; cc < ch; ++cc) {
      double acc = 0.0;
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t at = (s * ch + cc) * inner + i;
          acc += static_cast<double>(a[at]) - b[at];
        }
      worst = std::max(worst, std::fabs(acc / static_cast<double>(n * inner)));
    }
  }
  std::ostringstream d;
  d << "conv layers 3,6 + fc 11 (cnn), fc 3 (mlp); max |mean error| " << worst << " (<= 1e-5)";
  return {worst <= 1e-5, d.str()};
}

Outcome bo_dominance() {
  const auto quadratic = [](std::span<const double> x) { return Score{-(x[0] - 0.37) * (x[0] - 0.37), 0.0}; };
  const auto bumpy = [](std::span<const double> x) {
    return Score{std::sin(5 * x[0]) * std::cos(3 * x[1]) - 0.3 * (x[0] - 0.6) * (x[0] - 0.6), 0.0};
  };
  int hits = 0, dominated = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    BOConfig cfg;
    cfg.seed = seed;
    std::vector<Observation> p1;
    for (int k = 0; k <= 10; ++k) {
      std::vector<double> x{k / 10.0};
      p1.push_back({x, quadratic(x), false});
    }
    double g1 = -std::numeric_limits<double>::infinity();
    for (const auto& o : p1) g1 = std::max(g1, o.score.value);
    const auto r1 = bo_optimize(quadratic, {{0.0}, {1.0}}, p1, cfg);
    dominated += r1.best().score.value < g1;
    hits += std::fabs(r1.best().params[0] - 0.37) <= 0.02;

    std::vector<Observation> p2;
    for (int i = 0; i <= 4; ++i)
      for (int j = 0; j <= 4; ++j) {
        std::vector<double> x{i / 4.0, j / 4.0};
        p2.push_back({x, bumpy(x), false});
      }
    double g2 = -std::numeric_limits<double>::infinity();
    for (const auto& o : p2) g2 = std::max(g2, o.score.value);
    cfg.n_extra = 20;
    const auto r2 = bo_optimize(bumpy, {{0.0, 0.0}, {1.0, 1.0}}, p2, cfg);
    dominated += r2.best().score.value < g2;
  }
  return {dominated == 0 && hits >= 18,
          "20 seeds x (1-D, 2-D): below best probe " + std::to_string(dominated) + "; quadratic within 0.02 in " +
              std::to_string(hits) + "/20 (>= 18)"};
}

Outcome mse_oracle() {
  Rng rng(1006);
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int q = 2 + static_cast<int>(uniform_index(rng, 7));
    const Tensor w = qtest::heavy_tailed_tensor(512, rng);
    const double mx = w.max_abs(), m = static_cast<double>(grid_max(q));
    double best = mx, best_err = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 1000; ++k) {
      const double th = mx * k / 1000, s = th / m;
      double e = 0.0;
      for (float v : w.data()) {
        const double c = std::clamp(static_cast<double>(v), -th, th);
        const double d = v - s * std::clamp(std::floor(c / s + 0.5), -m, m);
        e += d * d;
      }
      if (e < best_err) best_err = e, best = th;
    }
    bad += std::fabs(baseline::clip_mse(w, q, 100) - best) > mx / 100 + 1e-12;
  }
  return {bad == 0, "100 heavy-tailed tensors vs 1000-step sweep, outside one step: " + std::to_string(bad)};
}

Outcome integer_consistency() {
  Rng rng(1007);
  int bad = 0, pairs = 0;
  for (int q : {3, 4, 8}) {
    for (int t = 0; t < 100; ++t, ++pairs) {
      const double sw = uniform(rng, 1e-3, 0.5), sx = uniform(rng, 1e-3, 0.5);
      const auto m = static_cast<std::uint64_t>(grid_max(q));
      Tensor w({16, 24}), x({24, 8});
      for (float& v : w.data()) v = static_cast<float>(sw * (static_cast<double>(uniform_index(rng, 2 * m + 1)) - m));
      for (float& v : x.data()) v = static_cast<float>(sx * (static_cast<double>(uniform_index(rng, 2 * m + 1)) - m));
      bad += !integer_consistency_check(w, x, sw, sx, q, q);
    }
  }
  return {bad == 0, std::to_string(pairs) + " pairs, q in {3,4,8}, failures " + std::to_string(bad)};
}

int run_quantize(const fs::path& out, int bits, int bo_extra, int threads) {
  cli::QuantizeOptions o;
  o.model_dir = qtest::fixture("cnn-digits") / "model";
  o.calib_dir = qtest::fixture("cnn-digits") / "calib";
  o.test_dir = qtest::fixture("cnn-digits") / "test";
  o.out_dir = out;
  o.weight_bits = o.act_bits = bits;
  o.bo_extra = bo_extra;
  o.threads = threads;
  o.quiet = true;
  std::ostringstream sink, err;
  const int code = cli::cmd_quantize(o, sink, err);
  if (code != 0) throw std::runtime_error("quantize exited " + std::to_string(code) + ": " + err.str());
  return code;
}

double pct(const json& acc, const char* row, const char* split) {
  return 100.0 * acc[row][split]["top1_accuracy"].get<double>();
}

Outcome end_to_end(const fs::path& root, int threads) {
  bool ok = true;
  std::ostringstream d;
  d.precision(2);
  d << std::fixed;
  for (int bits : {3, 4, 8}) {
    const fs::path dir = root / ("e2e" + std::to_string(bits));
    run_quantize(dir, bits, 0, threads);
    const json acc = json::parse(qtest::read_text(dir / "summary.json"))["accuracy"];
    const double fp = pct(acc, "full_precision", "test");
    const double base = pct(acc, "baseline_mse_rtn", "test");
    const double qr = pct(acc, "quantized", "test");
    d << bits << "/" << bits << ": qrater " << qr << " mse+rtn " << base << " fp " << fp << " (calib "
      << pct(acc, "quantized", "calib") << " vs " << pct(acc, "baseline_mse_rtn", "calib") << ")";
    if (bits == 8) {
      const bool close = std::fabs(qr - fp) <= 1.0 && std::fabs(base - fp) <= 1.0;
      ok &= close;
      d << (close ? "" : " [8/8 not within 1 point of fp]");
    } else {
      ok &= qr >= base;
      d << (qr >= base ? "" : " [below baseline]");
      if (bits == 3) {
        const bool margin = qr - base >= 2.0;
        ok &= margin;
        d << "; margin " << qr - base << (margin ? "" : " [< 2 points]");
      }
      d << "; ";
    }
  }
  return {ok, d.str()};
}

std::string jsonl_final_objective(const fs::path& trace, double& value, double& tiebreak) {
  std::ifstream in(trace);
  std::string line, last_key;
  bool have = false;
  for (std::string l; std::getline(in, l);) {
    const json j = json::parse(l);
    if (j.contains("skipped")) continue;
    const std::string key = std::to_string(j["layer"].get<int>()) + j["phase"].get<std::string>();
    const double v = j["objective"].get<double>(), t = j["tiebreak"].get<double>();
    if (key != last_key) {
      last_key = key;
      have = false;
    }
    if (!have || v > value || (v == value && t > tiebreak)) value = v, tiebreak = t, have = true;
  }
  return last_key;
}

Outcome freeze_replay(const fs::path& root) {
  const fs::path dir = root / "e2e3";
  double value = 0.0, tiebreak = 0.0;
  const std::string last = jsonl_final_objective(dir / "trace.jsonl", value, tiebreak);
  cli::EvalOptions e;
  e.model_dir = qtest::fixture("cnn-digits") / "model";
  e.calib_dir = qtest::fixture("cnn-digits") / "calib";
  e.plan = (dir / "plan.json").string();
  std::ostringstream out, err;
  if (cli::cmd_eval(e, out, err) != 0) return {false, "eval failed: " + err.str()};
  std::istringstream in(out.str());
  std::string k, v;
  double acc = -1.0, ce = -1.0;
  while (in >> k >> v) {
    if (k == "top1_accuracy") acc = std::stod(v);
    if (k == "cross_entropy") ce = std::stod(v);
  }
  const bool ok = acc == value && -ce == tiebreak;
  std::ostringstream d;
  d.precision(17);
  d << "3/3 plan, last phase " << last << ": trace (" << value << ", " << tiebreak << ") eval (" << acc << ", " << -ce
    << ")";
  return {ok, d.str()};
}

Outcome trajectory() {
  const auto quad = trace_curve([](double w) { return (w - 0.3) * (w - 0.3) + 0.1; }, 21);
  const auto sine = trace_curve([](double w) { return std::sin(3.0 * w); }, 21);
  return {quad.violations.empty() && !sine.violations.empty(),
          "quadratic violations " + std::to_string(quad.violations.size()) + " (0), sin(3w) violations " +
              std::to_string(sine.violations.size()) + " (>= 1)"};
}

Outcome determinism(const fs::path& root, int threads) {
  run_quantize(root / "det_a", 4, 10, threads);
  run_quantize(root / "det_b", 4, 10, threads);
  const bool plan = qtest::read_text(root / "det_a" / "plan.json") == qtest::read_text(root / "det_b" / "plan.json");
  const bool trace =
      qtest::read_text(root / "det_a" / "trace.jsonl") == qtest::read_text(root / "det_b" / "trace.jsonl");
  return {plan && trace, std::string("4/4 with BO, plan.json ") + (plan ? "identical" : "differs") + ", trace.jsonl " +
                             (trace ? "identical" : "differs")};
}

}  // namespace

int main() {
  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  qtest::TempDir tmp;
  report("rtn_equivalence", rtn_equivalence, 10.0);
  report("fr_range", fr_range);
  report("grid_on_grid", grid_on_grid);
  report("bias_correction", bias_correction_check, 5.0);
  report("bo_dominance", bo_dominance, 60.0);
  report("mse_clipping_oracle", mse_oracle, 10.0);
  report("integer_consistency", integer_consistency);
  report("end_to_end_fixture", [&] { return end_to_end(tmp.path(), threads); }, 900.0);
  report("incremental_freeze_replay", [&] { return freeze_replay(tmp.path()); });
  report("trajectory_diagnostics", trajectory, 5.0);
  report("determinism", [&] { return determinism(tmp.path(), threads); });
  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
