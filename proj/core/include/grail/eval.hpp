#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "grail/model.hpp"
#include "grail/pipeline.hpp"

namespace grail {

enum class TaskKind { teacher_regression, gaussian_mixture_classification };
enum class ModelFamily { mlp, ffn, conv, attention };

std::string_view to_string(TaskKind k);
std::string_view to_string(ModelFamily f);
TaskKind parse_task_kind(std::string_view name);
ModelFamily parse_model_family(std::string_view name);

/// Desk-scale task. Inputs are draws from a Gaussian mixture (one draw per
/// vector, token or pixel). Models are constructed, never trained: random
/// producers with a fraction of rows replaced by positively scaled, noisy
/// copies of other rows, so hidden channels carry controlled redundancy.
/// Classification models end in a least-squares readout fitted on n_train
/// labelled draws; regression targets are the model's own outputs.
struct TaskConfig {
  TaskKind kind = TaskKind::gaussian_mixture_classification;
  ModelFamily family = ModelFamily::mlp;
  std::size_t input_dim = 16;
  std::size_t output_dim = 8;  // classes for classification
  std::size_t hidden = 64;     // hidden width of every block
  std::size_t width = 16;      // width between blocks (mlp)
  std::size_t depth = 2;       // compressible blocks before the readout
  std::size_t n_train = 1024;
  std::size_t n_eval = 2000;
  double redundancy = 0.5;
  double redundancy_noise = 0.05;
  double class_separation = 2.0;
  Activation activation = Activation::relu;
  std::size_t seq_len = 6;     // attention
  std::size_t n_heads = 8;     // attention
  std::size_t head_dim = 4;    // attention
  std::size_t gqa_groups = 1;  // attention
  std::size_t spatial = 6;     // conv: inputs are spatial x spatial
  std::uint64_t seed = 0;

  /// Throws ArgumentError for inconsistent settings.
  void validate() const;
};

struct Dataset {
  TaskKind kind = TaskKind::teacher_regression;
  Tensor inputs;
  Tensor targets;  // regression: model outputs; classification: one label per output row
};

struct SyntheticTask {
  TaskConfig config;
  BlockGraph model;
  Dataset eval;
};

SyntheticTask make_task(const TaskConfig& config);

/// Fresh unlabeled inputs from the task distribution.
Tensor sample_inputs(const TaskConfig& config, std::size_t n, std::uint64_t seed);

/// Accuracy for classification (higher is better), relative Frobenius
/// output error for regression (lower is better).
double evaluate(const BlockGraph& model, const Dataset& data);

/// Metric gain of `after` over `before`, positive when `after` is better.
double improvement(TaskKind kind, double before, double after);

struct SweepConfig {
  TaskConfig task;
  std::vector<Method> methods;
  std::vector<double> ratios;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> calib_sizes = {128};
  double alpha = 1e-3;
  std::uint64_t base_seed = 0;

  void validate() const;
};

struct SweepRow {
  Method method = Method::mag_l2;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t calib_size = 0;
  double metric_original = 0.0;
  double metric_compressed = 0.0;
  double metric_compensated = 0.0;
  double t_calib_s = 0.0;
  double t_comp_s = 0.0;
};

struct SweepReport {
  TaskKind kind = TaskKind::gaussian_mixture_classification;
  std::vector<SweepRow> rows;

  /// `method,ratio,seed,calib_size,metric_original,metric_compressed,
  /// metric_compensated,t_calib_s,t_comp_s`, floats with 9 significant
  /// digits. Timing columns are 0 unless `timings` is set.
  [[nodiscard]] std::string to_csv(bool timings) const;
};

/// Rows are ordered method, ratio, seed, calib_size (outermost first). Each
/// cell builds the task for its seed, then compresses it twice from the same
/// calibration draw: once without and once with compensation.
SweepReport run_sweep(const SweepConfig& config);

struct AblationPoint {
  std::size_t calib_size = 0;
  double mean_improvement = 0.0;
  std::vector<double> improvements;  // per seed
};

inline const std::vector<std::size_t> kDefaultAblationSizes = {8, 16, 32, 64, 128, 256};

std::vector<AblationPoint> calib_ablation(const TaskConfig& task, Method method, double ratio,
                                          const std::vector<std::size_t>& sizes,
                                          const std::vector<std::uint64_t>& seeds, double alpha = 1e-3,
                                          std::uint64_t base_seed = 0);
std::vector<AblationPoint> summarize_ablation(const SweepReport& report);

struct OverheadReport {
  std::size_t n_rows = 0;
  std::size_t width = 0;
  std::size_t reduced = 0;
  double t_calib_s = 0.0;
  double t_comp_s = 0.0;
  std::size_t gram_bytes = 0;    // H * H * 8
  std::size_t solver_bytes = 0;  // reduced Gram, its factor, G M and B
  [[nodiscard]] std::size_t memory_estimate() const { return gram_bytes + solver_bytes; }
};

/// Times Gram accumulation and compensation (solve + merge) for one block
/// separately, keeping the fastest of `repeats` runs.
OverheadReport measure_overhead(const BlockGraph& graph, const Tensor& batch, std::size_t block, Method method,
                                double ratio, double alpha = 1e-3, std::size_t repeats = 1);

std::size_t gram_memory_bytes(std::size_t width);

// Evaluation data (.grle): "GRLE", u32 version = 1, u32 kind (0 regression,
// 1 classification), then inputs and targets, each as u32 rank, rank x u32
// dims, float32 LE payload.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace grail
