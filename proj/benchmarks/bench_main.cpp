#include <benchmark/benchmark.h>

#include <filesystem>

#include "qrater/bayes_opt.hpp"
#include "qrater/calibration.hpp"
#include "qrater/evaluator.hpp"
#include "qrater/model.hpp"
#include "qrater/quantizer.hpp"
#include "qrater/random.hpp"

using namespace qrater;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(QRATER_FIXTURES_DIR) / "cnn-digits";

const ModelGraph& cnn() {
  static const ModelGraph m = load_model(kFixture / "model");
  return m;
}

const CalibrationSet& calib() {
  static const CalibrationSet c = load_calibration(kFixture / "calib");
  return c;
}

void BM_ForwardFullPrecision(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(forward(cnn(), calib().inputs, nullptr));
  state.SetItemsProcessed(state.iterations() * calib().count());
}
BENCHMARK(BM_ForwardFullPrecision)->Unit(benchmark::kMillisecond);

void BM_EvaluatorFromFrontier(benchmark::State& state) {
  QuantizationPlan plan;
  LayerQuantState st;
  st.bits = 4;
  st.weight = make_weight_state(*cnn().layer(6).weights, 0.8, 4, {0.3, 0.5, RoundingOrder::second});
  plan.set(6, st);
  Evaluator ev(cnn(), calib(), static_cast<int>(state.range(0)));
  ev.set_frontier(6, plan);
  for (auto _ : state) benchmark::DoNotOptimize(ev.evaluate(plan));
}
BENCHMARK(BM_EvaluatorFromFrontier)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_QuantizeWeights(benchmark::State& state) {
  Rng rng(7);
  Tensor w({state.range(0)});
  for (float& v : w.data()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  LayerQuantState st;
  st.bits = 4;
  st.weight = make_weight_state(w, 0.8, 4, {0.3, 0.5, RoundingOrder::second});
  for (auto _ : state) benchmark::DoNotOptimize(quantize_weights(w, st));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QuantizeWeights)->Arg(1 << 12)->Arg(1 << 18);

void BM_BayesOpt1D(benchmark::State& state) {
  const ObjectiveFn f = [](std::span<const double> x) { return Score{-(x[0] - 0.37) * (x[0] - 0.37), 0.0}; };
  std::vector<Observation> probes;
  for (int k = 1; k <= 10; ++k) {
    std::vector<double> x{k / 10.0};
    probes.push_back({x, f(x), false});
  }
  BOConfig cfg;
  cfg.n_extra = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(bo_optimize(f, {{0.0}, {1.0}}, probes, cfg));
}
BENCHMARK(BM_BayesOpt1D)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
