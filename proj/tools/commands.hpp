#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qrater/search.hpp"

namespace qrater::cli {

namespace fs = std::filesystem;

struct QuantizeOptions {
  fs::path model_dir;
  fs::path calib_dir;
  fs::path out_dir;
  std::optional<fs::path> test_dir;
  int weight_bits = 4;
  int act_bits = 4;
  bool weights_only = false;
  std::string clip = "qrater";
  std::string round = "second";
  std::string bias = "selective";
  GridSpec grid;
  int bo_extra = 50;
  double bo_kappa = 2.576;
  std::uint64_t seed = 0;
  std::vector<int> layers;  // explicit selection; empty means defaults
  std::vector<int> exclude;
  bool include_first = false;
  bool exclude_last = false;
  std::string metric = "top1_accuracy";
  std::optional<int> calib_per_class;
  int threads = 1;
  bool quiet = false;
};

struct EvalOptions {
  fs::path model_dir;
  fs::path calib_dir;
  std::string plan = "fp";  // plan.json path or "fp"
  bool weights_only = false;
};

struct SweepOptions {
  fs::path model_dir;
  fs::path calib_dir;
  std::string plan = "fp";
  int layer = 0;
  std::string phase;
  int weight_bits = 4;
  int act_bits = 4;
  std::string round = "second";
  GridSpec grid;
  double weight_gamma_c = 1.0;
  double act_gamma_c = 1.0;
  std::string metric = "top1_accuracy";
  std::optional<fs::path> out;  // CSV; stdout when absent
  int threads = 1;
};

struct TraceOptions {
  fs::path model_dir;
  fs::path calib_dir;
  std::string from = "fp";
  std::string to = "fp";
  int n_points = 21;
  std::optional<fs::path> out;
  int threads = 1;
};

struct CorrelateOptions {
  fs::path model_dir;
  fs::path calib_dir;
  int layer = 0;
  int n_configs = 50;
  int bits = 3;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  int threads = 1;
};

/// Each command returns the process exit code: 0 on success, 2 for invalid
/// configuration or arguments, 3 for malformed inputs, 1 otherwise. Errors
/// are written to `err` as a single JSON object.
int cmd_quantize(const QuantizeOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err);
int cmd_trace(const TraceOptions& options, std::ostream& out, std::ostream& err);
int cmd_correlate(const CorrelateOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to the commands above.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace qrater::cli
