#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grail/calibration.hpp"
#include "grail/compensation.hpp"
#include "grail/model.hpp"
#include "grail/selectors.hpp"

namespace grail {

enum class Method { mag_l1, mag_l2, wanda, fold };

std::string_view to_string(Method m);
/// Accepts "mag-l1", "mag-l2", "wanda", "fold".
Method parse_method(std::string_view name);
inline constexpr std::string_view kMethodNames = "mag-l1, mag-l2, wanda, fold";

/// splitmix64 of (base, salt); used to give each block / cell its own stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

/// Units kept at a compression ratio: round((1 - ratio) * width), at least 1.
std::size_t kept_units(std::size_t width, double ratio);

struct PlanEntry {
  std::size_t block = 0;
  Method method = Method::mag_l2;
  double ratio = 0.0;  // fraction of hidden units (or KV head slots) removed
  bool compensate = true;
};

struct CompressionPlan {
  std::vector<PlanEntry> entries;
  double alpha = 1e-3;
  std::uint64_t seed = 0;
  std::string calib_path;

  /// Ratios in [0, 1), ascending distinct blocks, alpha in (0, 1).
  void validate() const;
  void validate_for(const BlockGraph& graph) const;

  /// Same method and ratio for every block.
  static CompressionPlan uniform(const BlockGraph& graph, Method method, double ratio, bool compensate,
                                 double alpha = 1e-3, std::uint64_t seed = 0);
};

/// Parses a JSON plan document:
///   {"alpha": 1e-3, "seed": 0, "calib": "c.grlc",
///    "blocks": [{"block": 0, "method": "wanda", "ratio": 0.5, "compensate": true}]}
/// Throws ArgumentError naming the offending key as a JSON pointer.
CompressionPlan parse_plan(std::string_view json_text);

/// Runs the selector for one block. `block_input` is used by Wanda.
SelectionDecision select_units(const Block& block, Method method, double ratio, const GramStats& gram,
                               const Tensor& block_input, std::uint64_t seed);

struct BlockReport {
  std::size_t block = 0;
  std::string type;
  std::string method;
  std::size_t width = 0;    // H (or n_heads for attention)
  std::size_t reduced = 0;  // K (or kept heads)
  bool compensated = false;
  double lambda_used = 0.0;
  double calib_error_before = 0.0;
  double calib_error_after = 0.0;
  std::optional<double> realized_error_before;
  std::optional<double> realized_error_after;
  double t_calib_s = 0.0;
  double t_comp_s = 0.0;
};

struct CompressionOutcome {
  BlockGraph graph;
  std::vector<BlockReport> blocks;
};

/// Closed-loop compression: each planned block is selected, reduced and
/// (optionally) compensated using statistics measured on the graph whose
/// earlier blocks are already rewritten. Numerical failures carry the
/// block index.
CompressionOutcome compress_model(const BlockGraph& graph, const Tensor& calibration, const CompressionPlan& plan);

/// JSON report; timings are included only when requested.
std::string report_json(const CompressionOutcome& outcome, bool timings);

}  // namespace grail
