#include "grail/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "grail/calibration.hpp"
#include "grail/errors.hpp"
#include "grail/eval.hpp"
#include "grail/model_io.hpp"
#include "grail/parallel.hpp"
#include "grail/pipeline.hpp"

namespace grail::cli {
namespace {

using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path);
  out << text;
}

// Emits to `path`, or to `out` when no path was given.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

// Options shared by every subcommand.
struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  bool timings = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  c.seed_opt = cmd->add_option("--seed", c.seed, "Seed for every stochastic component");
  cmd->add_option("--threads", c.threads, "Worker threads (default: GRAIL_THREADS or 1)");
  cmd->add_flag("--timings", c.timings, "Include wall-clock timings in reports");
}

void apply_threads(const Common& c) {
  std::size_t n = c.threads;
  if (n == 0) {
    if (const char* env = std::getenv("GRAIL_THREADS")) {
      char* end = nullptr;
      const unsigned long v = std::strtoul(env, &end, 10);
      if (end == env || *end != '\0' || v == 0) throw ArgumentError("GRAIL_THREADS must be a positive integer");
      n = v;
    }
  }
  set_thread_count(n == 0 ? 1 : n);
}

// ---- JSON config schema -------------------------------------------------

[[noreturn]] void schema_fail(const std::string& pointer, const std::string& why) {
  throw ArgumentError("config key " + pointer + ": " + why);
}

json parse_config(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ArgumentError(path + " is not valid JSON: " + e.what());
  }
}

void check_keys(const json& obj, const std::string& at, const std::vector<std::string>& allowed) {
  if (!obj.is_object()) schema_fail(at.empty() ? "/" : at, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) schema_fail(at + "/" + key, "unknown key");
  }
}

std::size_t get_count(const json& v, const std::string& at) {
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) schema_fail(at, "expected a positive integer");
  return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& v, const std::string& at) {
  if (!v.is_number_unsigned()) schema_fail(at, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

double get_number(const json& v, const std::string& at) {
  if (!v.is_number()) schema_fail(at, "expected a number");
  return v.get<double>();
}

std::string get_string(const json& v, const std::string& at) {
  if (!v.is_string()) schema_fail(at, "expected a string");
  return v.get<std::string>();
}

template <typename F>
auto get_list(const json& v, const std::string& at, F&& item) {
  if (!v.is_array() || v.empty()) schema_fail(at, "expected a non-empty array");
  std::vector<decltype(item(v[0], at))> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(item(v[i], at + "/" + std::to_string(i)));
  return out;
}

// Converts a library ArgumentError raised while interpreting a value into a
// schema error at `at`.
template <typename F>
auto at_key(const std::string& at, F&& f) {
  try {
    return f();
  } catch (const ArgumentError& e) {
    schema_fail(at, e.what());
  }
}

Method get_method(const json& v, const std::string& at) {
  const std::string name = get_string(v, at);
  return at_key(at, [&] { return parse_method(name); });
}

TaskConfig parse_task(const json& obj, const std::string& at) {
  check_keys(obj, at,
             {"kind", "family", "input_dim", "output_dim", "hidden", "width", "depth", "n_train", "n_eval",
              "redundancy", "redundancy_noise", "class_separation", "activation", "seq_len", "n_heads", "head_dim",
              "gqa_groups", "spatial", "seed"});
  TaskConfig t;
  auto key = [&](const char* k) { return at + "/" + k; };
  if (obj.contains("kind")) {
    const auto s = get_string(obj["kind"], key("kind"));
    t.kind = at_key(key("kind"), [&] { return parse_task_kind(s); });
  }
  if (obj.contains("family")) {
    const auto s = get_string(obj["family"], key("family"));
    t.family = at_key(key("family"), [&] { return parse_model_family(s); });
  }
  if (obj.contains("activation")) {
    const auto s = get_string(obj["activation"], key("activation"));
    t.activation = at_key(key("activation"), [&] { return parse_activation(s); });
  }
  const std::pair<const char*, std::size_t*> counts[] = {
      {"input_dim", &t.input_dim}, {"output_dim", &t.output_dim}, {"hidden", &t.hidden},
      {"width", &t.width},         {"depth", &t.depth},           {"n_train", &t.n_train},
      {"n_eval", &t.n_eval},       {"seq_len", &t.seq_len},       {"n_heads", &t.n_heads},
      {"head_dim", &t.head_dim},   {"gqa_groups", &t.gqa_groups}, {"spatial", &t.spatial}};
  for (const auto& [name, field] : counts) {
    if (obj.contains(name)) *field = get_count(obj[name], key(name));
  }
  const std::pair<const char*, double*> reals[] = {{"redundancy", &t.redundancy},
                                                   {"redundancy_noise", &t.redundancy_noise},
                                                   {"class_separation", &t.class_separation}};
  for (const auto& [name, field] : reals) {
    if (obj.contains(name)) *field = get_number(obj[name], key(name));
  }
  if (obj.contains("seed")) t.seed = get_u64(obj["seed"], key("seed"));
  at_key(at.empty() ? "/" : at, [&] {
    t.validate();
    return 0;
  });
  return t;
}

SweepConfig parse_sweep_config(const json& doc) {
  check_keys(doc, "", {"task", "methods", "ratios", "seeds", "calib_sizes", "alpha", "seed"});
  SweepConfig c;
  c.task = parse_task(doc.value("task", json::object()), "/task");
  if (!doc.contains("methods")) schema_fail("/methods", "required");
  c.methods = get_list(doc["methods"], "/methods", get_method);
  if (!doc.contains("ratios")) schema_fail("/ratios", "required");
  c.ratios = get_list(doc["ratios"], "/ratios", get_number);
  c.seeds = doc.contains("seeds") ? get_list(doc["seeds"], "/seeds", get_u64) : std::vector<std::uint64_t>{0};
  if (doc.contains("calib_sizes")) c.calib_sizes = get_list(doc["calib_sizes"], "/calib_sizes", get_count);
  if (doc.contains("alpha")) c.alpha = get_number(doc["alpha"], "/alpha");
  if (doc.contains("seed")) c.base_seed = get_u64(doc["seed"], "/seed");
  for (std::size_t i = 0; i < c.ratios.size(); ++i) {
    if (!(c.ratios[i] >= 0.0 && c.ratios[i] < 1.0)) schema_fail("/ratios/" + std::to_string(i), "outside [0, 1)");
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) schema_fail("/alpha", "must lie in (0, 1)");
  return c;
}

struct AblateConfig {
  SweepConfig sweep;
};

AblateConfig parse_ablate_config(const json& doc) {
  check_keys(doc, "", {"task", "method", "ratio", "sizes", "seeds", "alpha", "seed"});
  AblateConfig a;
  SweepConfig& c = a.sweep;
  c.task = parse_task(doc.value("task", json::object()), "/task");
  if (!doc.contains("method")) schema_fail("/method", "required");
  c.methods = {get_method(doc["method"], "/method")};
  c.ratios = {doc.contains("ratio") ? get_number(doc["ratio"], "/ratio") : 0.5};
  if (!(c.ratios[0] >= 0.0 && c.ratios[0] < 1.0)) schema_fail("/ratio", "outside [0, 1)");
  c.calib_sizes = doc.contains("sizes") ? get_list(doc["sizes"], "/sizes", get_count) : kDefaultAblationSizes;
  if (doc.contains("seeds")) {
    c.seeds = get_list(doc["seeds"], "/seeds", get_u64);
  } else {
    for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  }
  if (doc.contains("alpha")) c.alpha = get_number(doc["alpha"], "/alpha");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) schema_fail("/alpha", "must lie in (0, 1)");
  if (doc.contains("seed")) c.base_seed = get_u64(doc["seed"], "/seed");
  return a;
}

std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---- subcommands --------------------------------------------------------

struct CompressArgs {
  Common common;
  std::string model, calib, plan, method, out, report;
  double ratio = 0.0;
  double alpha = 1e-3;
  bool compensate = false;
  CLI::Option* ratio_opt = nullptr;
  CLI::Option* method_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
};

int cmd_compress(const CompressArgs& a, std::ostream& out, std::ostream& err) {
  CompressionPlan plan;
  if (!a.plan.empty()) {
    if (a.method_opt->count() > 0 || a.ratio_opt->count() > 0) {
      throw ArgumentError("--plan cannot be combined with --method/--ratio");
    }
    plan = parse_plan(read_text(a.plan));
    if (a.alpha_opt->count() > 0) plan.alpha = a.alpha;
    if (a.common.seed_opt->count() > 0) plan.seed = a.common.seed;
  } else {
    if (a.method_opt->count() == 0 || a.ratio_opt->count() == 0) {
      throw ArgumentError("compress needs --plan or both --method and --ratio");
    }
    if (!(a.ratio >= 0.0 && a.ratio < 1.0)) {
      throw ArgumentError("--ratio " + g9(a.ratio) + " is outside the valid range [0, 1)");
    }
  }
  const std::string calib_path = a.calib.empty() ? plan.calib_path : a.calib;
  if (calib_path.empty()) throw ArgumentError("no calibration data: pass --calib or set \"calib\" in the plan");

  const BlockGraph model = load_model(a.model);
  const Tensor calib = load_calibration(calib_path);
  if (a.plan.empty()) {
    plan = CompressionPlan::uniform(model, parse_method(a.method), a.ratio, a.compensate, a.alpha, a.common.seed);
  }
  plan.validate_for(model);

  const CompressionOutcome outcome = compress_model(model, calib, plan);
  save_model(outcome.graph, a.out);
  emit(a.report, report_json(outcome, a.common.timings) + "\n", out);
  err << "compressed " << outcome.blocks.size() << " block(s) into " << a.out << "\n";
  return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, std::ostream& out) {
  const BlockGraph model = load_model(model_path);
  const Dataset data = load_dataset(data_path);
  const double value = evaluate(model, data);
  json j;
  j["metric"] = data.kind == TaskKind::teacher_regression ? "relative_error" : "accuracy";
  j["value"] = value;
  j["samples"] = data.inputs.dim(0);
  out << j.dump(2) << "\n";
  return kOk;
}

int cmd_sweep(const std::string& config, const std::string& out_path, const Common& c, std::ostream& out,
              std::ostream& err) {
  SweepConfig cfg = parse_sweep_config(parse_config(config));
  if (c.seed_opt->count() > 0) cfg.base_seed = c.seed;
  const SweepReport report = run_sweep(cfg);
  emit(out_path, report.to_csv(c.timings), out);
  err << "sweep: " << report.rows.size() << " cell(s)\n";
  return kOk;
}

int cmd_ablate(const std::string& config, const std::string& out_path, const std::string& cells_path,
               const Common& c, std::ostream& out, std::ostream& err) {
  AblateConfig cfg = parse_ablate_config(parse_config(config));
  if (c.seed_opt->count() > 0) cfg.sweep.base_seed = c.seed;
  const SweepReport report = run_sweep(cfg.sweep);
  std::string csv = "calib_size,mean_improvement,n_seeds\n";
  for (const auto& p : summarize_ablation(report)) {
    csv += std::to_string(p.calib_size) + "," + g9(p.mean_improvement) + "," +
           std::to_string(p.improvements.size()) + "\n";
  }
  emit(out_path, csv, out);
  if (!cells_path.empty()) write_text(cells_path, report.to_csv(c.timings));
  err << "ablate: " << cfg.sweep.calib_sizes.size() << " size(s) x " << cfg.sweep.seeds.size() << " seed(s)\n";
  return kOk;
}

int cmd_gram_dump(const std::string& model_path, const std::string& calib_path, std::size_t block,
                  const std::string& out_path, std::ostream& out) {
  const BlockGraph model = load_model(model_path);
  const Tensor calib = load_calibration(calib_path);
  if (block >= model.size()) {
    throw ArgumentError("--block " + std::to_string(block) + " out of range (model has " +
                        std::to_string(model.size()) + " blocks)");
  }
  const GramStats stats = accumulate_gram(model, calib, block);
  save_gram(stats, out_path);
  double trace = 0.0;
  for (std::size_t i = 0; i < stats.width(); ++i) trace += stats.g(i, i);
  json j;
  j["block"] = block;
  j["width"] = stats.width();
  j["n_samples"] = stats.n_samples;
  j["trace"] = trace;
  out << j.dump(2) << "\n";
  return kOk;
}

json describe_block(const Block& b) {
  json j;
  j["type"] = block_type_name(b);
  j["input"] = block_input_dim(b);
  j["hidden"] = block_hidden_dim(b);
  j["output"] = block_output_dim(b);
  if (const auto* a = std::get_if<AttentionBlock>(&b)) {
    j["n_heads"] = a->n_heads;
    j["head_dim"] = a->head_dim;
    j["gqa_groups"] = a->gqa_groups;
    j["causal"] = a->causal;
  }
  return j;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4) throw TruncatedError(path + ": too short to carry a magic");
  const std::string m(magic, 4);
  json j;
  j["file"] = path;
  if (m == "GRLW") {
    const BlockGraph g = load_model(path);
    j["format"] = "grlw";
    j["input_shape"] = g.input_shape();
    j["blocks"] = json::array();
    for (std::size_t i = 0; i < g.size(); ++i) j["blocks"].push_back(describe_block(g.block(i)));
  } else if (m == "GRLC") {
    const Tensor t = load_calibration(path);
    j["format"] = "grlc";
    j["shape"] = t.shape();
  } else if (m == "GRLG") {
    const GramStats s = load_gram(path);
    j["format"] = "grlg";
    j["width"] = s.width();
    j["n_samples"] = s.n_samples;
  } else if (m == "GRLE") {
    const Dataset d = load_dataset(path);
    j["format"] = "grle";
    j["kind"] = to_string(d.kind);
    j["inputs"] = d.inputs.shape();
    j["targets"] = d.targets.shape();
  } else {
    throw BadMagicError(path + ": unrecognized magic (expected GRLW, GRLC, GRLG or GRLE)");
  }
  out << j.dump(2) << "\n";
  return kOk;
}

int cmd_synth(const std::string& config, const std::string& model_path, const std::string& calib_path,
              const std::string& data_path, std::size_t calib_size, const Common& c, std::ostream& err) {
  TaskConfig task;
  if (!config.empty()) task = parse_task(parse_config(config), "");
  if (c.seed_opt->count() > 0) task.seed = c.seed;
  const SyntheticTask t = make_task(task);
  save_model(t.model, model_path);
  if (!calib_path.empty()) save_calibration(sample_inputs(task, calib_size, derive_seed(task.seed, 505)), calib_path);
  if (!data_path.empty()) save_dataset(t.eval, data_path);
  err << "synth: " << to_string(task.family) << " model with " << t.model.size() << " block(s)\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured pruning and folding with Gram-based ridge compensation", "grail"};
  app.require_subcommand(1);

  CompressArgs ca;
  auto* compress = app.add_subcommand("compress", "Prune or fold a model and merge the compensation");
  add_common(compress, ca.common);
  compress->add_option("--model", ca.model, "Input model (.grlw)")->required();
  compress->add_option("--calib", ca.calib, "Calibration batch (.grlc)");
  compress->add_option("--plan", ca.plan, "Per-block JSON plan");
  ca.method_opt = compress->add_option("--method", ca.method, "mag-l1, mag-l2, wanda or fold");
  ca.ratio_opt = compress->add_option("--ratio", ca.ratio, "Fraction of hidden units removed, in [0, 1)");
  compress->add_flag("--compensate", ca.compensate, "Merge the ridge compensation into consumers");
  ca.alpha_opt = compress->add_option("--alpha", ca.alpha, "Relative ridge coefficient");
  compress->add_option("--out", ca.out, "Output model (.grlw)")->required();
  compress->add_option("--report", ca.report, "Write the JSON report here instead of stdout");

  Common ec;
  std::string eval_model, eval_data;
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a .grle dataset");
  add_common(eval, ec);
  eval->add_option("--model", eval_model, "Model (.grlw)")->required();
  eval->add_option("--data", eval_data, "Dataset (.grle)")->required();

  Common sc;
  std::string sweep_config, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Compressed vs compensated sweep over synthetic tasks");
  add_common(sweep, sc);
  sweep->add_option("config", sweep_config, "Sweep configuration (JSON)")->required();
  sweep->add_option("--out", sweep_out, "Write CSV here instead of stdout");

  Common ac;
  std::string ablate_config, ablate_out, ablate_cells;
  auto* ablate = app.add_subcommand("ablate", "Calibration-size ablation");
  add_common(ablate, ac);
  ablate->add_option("config", ablate_config, "Ablation configuration (JSON)")->required();
  ablate->add_option("--out", ablate_out, "Write the summary CSV here instead of stdout");
  ablate->add_option("--cells", ablate_cells, "Also write the per-cell sweep CSV");

  Common gc;
  std::string gram_model, gram_calib, gram_out;
  std::size_t gram_block = 0;
  auto* gram = app.add_subcommand("gram-dump", "Write the hidden-tap Gram of one block (.grlg)");
  add_common(gram, gc);
  gram->add_option("--model", gram_model, "Model (.grlw)")->required();
  gram->add_option("--calib", gram_calib, "Calibration batch (.grlc)")->required();
  gram->add_option("--block", gram_block, "Block index");
  gram->add_option("--out", gram_out, "Output Gram (.grlg)")->required();

  Common ic;
  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Describe a .grlw, .grlc, .grlg or .grle file");
  add_common(inspect, ic);
  inspect->add_option("file", inspect_path, "File to describe")->required();

  Common yc;
  std::string synth_config, synth_model, synth_calib, synth_data;
  std::size_t synth_calib_size = 128;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic task model, calibration batch and eval data");
  add_common(synth, yc);
  synth->add_option("--config", synth_config, "Task configuration (JSON)");
  synth->add_option("--model", synth_model, "Output model (.grlw)")->required();
  synth->add_option("--calib", synth_calib, "Output calibration batch (.grlc)");
  synth->add_option("--calib-size", synth_calib_size, "Calibration samples")->check(CLI::PositiveNumber);
  synth->add_option("--data", synth_data, "Output eval dataset (.grle)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadArguments;
  }

  try {
    if (compress->parsed()) {
      apply_threads(ca.common);
      return cmd_compress(ca, out, err);
    }
    if (eval->parsed()) {
      apply_threads(ec);
      return cmd_eval(eval_model, eval_data, out);
    }
    if (sweep->parsed()) {
      apply_threads(sc);
      return cmd_sweep(sweep_config, sweep_out, sc, out, err);
    }
    if (ablate->parsed()) {
      apply_threads(ac);
      return cmd_ablate(ablate_config, ablate_out, ablate_cells, ac, out, err);
    }
    if (gram->parsed()) {
      apply_threads(gc);
      return cmd_gram_dump(gram_model, gram_calib, gram_block, gram_out, out);
    }
    if (inspect->parsed()) {
      apply_threads(ic);
      return cmd_inspect(inspect_path, out);
    }
    if (synth->parsed()) {
      apply_threads(yc);
      return cmd_synth(synth_config, synth_model, synth_calib, synth_data, synth_calib_size, yc, err);
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kBadArguments;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kBadArguments;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kFormatError;
  } catch (const NumericalError& e) {
    err << "numerical error";
    if (e.block()) err << " in block " << *e.block();
    err << ": " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kBadArguments;
}

}  // namespace grail::cli
