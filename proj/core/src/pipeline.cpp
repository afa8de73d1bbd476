#include "grail/pipeline.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "grail/errors.hpp"

namespace grail {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::mag_l1:
      return "mag-l1";
    case Method::mag_l2:
      return "mag-l2";
    case Method::wanda:
      return "wanda";
    case Method::fold:
      return "fold";
  }
  return "mag-l2";
}

Method parse_method(std::string_view name) {
  if (name == "mag-l1") return Method::mag_l1;
  if (name == "mag-l2") return Method::mag_l2;
  if (name == "wanda") return Method::wanda;
  if (name == "fold") return Method::fold;
  throw ArgumentError("unknown method '" + std::string(name) + "' (valid: " + std::string(kMethodNames) + ")");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t kept_units(std::size_t width, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ArgumentError("compression ratio " + std::to_string(ratio) + " outside [0, 1)");
  }
  const auto k = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(width)));
  return std::clamp<std::size_t>(k, 1, width);
}

void CompressionPlan::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!(e.ratio >= 0.0 && e.ratio < 1.0)) {
      throw ArgumentError("block " + std::to_string(e.block) + ": ratio " + std::to_string(e.ratio) +
                          " outside [0, 1)");
    }
    if (i > 0 && e.block <= entries[i - 1].block) {
      throw ArgumentError("plan blocks must be listed once each in ascending order");
    }
  }
}

void CompressionPlan::validate_for(const BlockGraph& graph) const {
  validate();
  for (const auto& e : entries) {
    if (e.block >= graph.size()) {
      throw ArgumentError("plan names block " + std::to_string(e.block) + " but the model has " +
                          std::to_string(graph.size()) + " blocks");
    }
  }
}

CompressionPlan CompressionPlan::uniform(const BlockGraph& graph, Method method, double ratio, bool compensate,
                                         double alpha, std::uint64_t seed) {
  CompressionPlan plan;
  plan.alpha = alpha;
  plan.seed = seed;
  for (std::size_t i = 0; i < graph.size(); ++i) plan.entries.push_back({i, method, ratio, compensate});
  plan.validate();
  return plan;
}

CompressionPlan parse_plan(std::string_view json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("plan is not valid JSON: ") + e.what());
  }
  auto fail = [](const std::string& pointer, const std::string& why) {
    throw ArgumentError("plan key " + pointer + ": " + why);
  };
  if (!doc.is_object()) fail("/", "expected an object");
  static const std::vector<std::string> top_keys = {"alpha", "seed", "calib", "blocks"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find(top_keys.begin(), top_keys.end(), key) == top_keys.end()) fail("/" + key, "unknown key");
  }

  CompressionPlan plan;
  if (doc.contains("alpha")) {
    if (!doc["alpha"].is_number()) fail("/alpha", "expected a number");
    plan.alpha = doc["alpha"].get<double>();
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) fail("/seed", "expected a non-negative integer");
    plan.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("calib")) {
    if (!doc["calib"].is_string()) fail("/calib", "expected a path string");
    plan.calib_path = doc["calib"].get<std::string>();
  }
  if (!doc.contains("blocks") || !doc["blocks"].is_array()) fail("/blocks", "expected an array");
  const auto& blocks = doc["blocks"];
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string at = "/blocks/" + std::to_string(i);
    const auto& bj = blocks[i];
    if (!bj.is_object()) fail(at, "expected an object");
    PlanEntry e;
    if (!bj.contains("block") || !bj["block"].is_number_unsigned()) fail(at + "/block", "expected a block index");
    e.block = bj["block"].get<std::size_t>();
    if (!bj.contains("method") || !bj["method"].is_string()) fail(at + "/method", "expected a method name");
    try {
      e.method = parse_method(bj["method"].get<std::string>());
    } catch (const ArgumentError& err) {
      fail(at + "/method", err.what());
    }
    if (!bj.contains("ratio") || !bj["ratio"].is_number()) fail(at + "/ratio", "expected a number");
    e.ratio = bj["ratio"].get<double>();
    if (!(e.ratio >= 0.0 && e.ratio < 1.0)) fail(at + "/ratio", "ratio must lie in [0, 1)");
    if (bj.contains("compensate")) {
      if (!bj["compensate"].is_boolean()) fail(at + "/compensate", "expected a boolean");
      e.compensate = bj["compensate"].get<bool>();
    }
    plan.entries.push_back(e);
  }
  if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) fail("/alpha", "alpha must lie in (0, 1)");
  plan.validate();
  return plan;
}

SelectionDecision select_units(const Block& block, Method method, double ratio, const GramStats& gram,
                               const Tensor& block_input, std::uint64_t seed) {
  if (const auto* attn = std::get_if<AttentionBlock>(&block)) {
    const std::size_t k_heads = kept_units(attn->kv_heads(), ratio) * attn->gqa_groups;
    const HeadMethod hm = method == Method::fold    ? HeadMethod::fold
                          : method == Method::wanda ? HeadMethod::wanda
                                                    : HeadMethod::l2;
    return select_heads(*attn, gram, k_heads, hm, seed);
  }
  const Tensor& producer = std::visit(
      [](const auto& b) -> const Tensor& {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, FfnBlock>) {
          return b.w_fc;
        } else if constexpr (std::is_same_v<T, AttentionBlock>) {
          return b.w_q;
        } else {
          return b.w_producer;
        }
      },
      block);
  const std::size_t k = kept_units(producer.dim(0), ratio);
  switch (method) {
    case Method::mag_l1:
      return select_magnitude(producer, k, Norm::l1);
    case Method::mag_l2:
      return select_magnitude(producer, k, Norm::l2);
    case Method::wanda:
      return select_wanda(producer, column_norms(feature_rows(block, block_input)), k);
    case Method::fold:
      return select_fold(producer, k, seed);
  }
  throw ArgumentError("unhandled method");
}

CompressionOutcome compress_model(const BlockGraph& graph, const Tensor& calibration, const CompressionPlan& plan) {
  plan.validate_for(graph);
  const RidgeConfig ridge{plan.alpha, std::nullopt};
  std::vector<std::size_t> order;
  for (const auto& e : plan.entries) order.push_back(e.block);

  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };

  ClosedLoopCalibrator loop(graph, calibration, order);
  CompressionOutcome outcome;
  for (const auto& entry : plan.entries) {
    const auto t0 = clock::now();
    const GramStats stats = loop.next();
    const auto t1 = clock::now();

    const Block& original = graph.block(entry.block);
    Compressed<Block> compressed;
    try {
      const SelectionDecision decision = select_units(original, entry.method, entry.ratio, stats,
                                                      loop.block_input(), derive_seed(plan.seed, entry.block));
      compressed = compress_block(original, decision, stats, ridge, MergeOptions{entry.compensate, entry.block});
    } catch (NumericalError& e) {
      e.set_block(entry.block);
      throw;
    }
    const auto t2 = clock::now();
    measure_realized(original, compressed, loop.block_input());

    BlockReport report;
    report.block = entry.block;
    report.type = std::string(block_type_name(original));
    report.method = std::string(to_string(entry.method));
    if (const auto* attn = std::get_if<AttentionBlock>(&original)) {
      report.width = attn->n_heads;
      report.reduced = std::get<AttentionBlock>(compressed.block).n_heads;
    } else {
      report.width = block_hidden_dim(original);
      report.reduced = block_hidden_dim(compressed.block);
    }
    report.compensated = compressed.result.compensated;
    report.lambda_used = compressed.result.lambda_used;
    report.calib_error_before = compressed.result.calib_error_before;
    report.calib_error_after = compressed.result.calib_error_after;
    report.realized_error_before = compressed.result.realized_error_before;
    report.realized_error_after = compressed.result.realized_error_after;
    report.t_calib_s = seconds(t0, t1);
    report.t_comp_s = seconds(t1, t2);
    outcome.blocks.push_back(std::move(report));

    loop.commit(std::move(compressed.block));
  }
  outcome.graph = loop.graph();
  return outcome;
}

std::string report_json(const CompressionOutcome& outcome, bool timings) {
  using nlohmann::json;
  json doc;
  doc["blocks"] = json::array();
  for (const auto& b : outcome.blocks) {
    json j = {{"block", b.block},
              {"type", b.type},
              {"method", b.method},
              {"H", b.width},
              {"K", b.reduced},
              {"compensated", b.compensated},
              {"lambda_used", b.lambda_used},
              {"calib_error_before", b.calib_error_before},
              {"calib_error_after", b.calib_error_after}};
    if (b.realized_error_before) j["realized_error_before"] = *b.realized_error_before;
    if (b.realized_error_after) j["realized_error_after"] = *b.realized_error_after;
    if (timings) j["timings"] = {{"calibration_s", b.t_calib_s}, {"compensation_s", b.t_comp_s}};
    doc["blocks"].push_back(std::move(j));
  }
  return doc.dump(2);
}

}  // namespace grail
