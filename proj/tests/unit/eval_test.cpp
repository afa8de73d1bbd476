#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <sstream>

#include "grail/errors.hpp"
#include "grail/eval.hpp"
#include "oracles.hpp"

namespace grail {
namespace {

TaskConfig small_mlp(TaskKind kind = TaskKind::gaussian_mixture_classification) {
  TaskConfig t;
  t.kind = kind;
  t.hidden = 32;
  t.n_train = 256;
  t.n_eval = 200;
  return t;
}

SweepConfig small_sweep() {
  SweepConfig s;
  s.task = small_mlp();
  s.methods = {Method::mag_l2, Method::fold};
  s.ratios = {0.0, 0.5};
  s.seeds = {0, 1};
  s.calib_sizes = {32, 64};
  return s;
}

Dataset regression_set(const BlockGraph& model, const Tensor& x) {
  return Dataset{TaskKind::teacher_regression, x, forward(model, x)};
}

TEST(Task, DeterministicForSeed) {
  const TaskConfig t = small_mlp();
  const auto a = make_task(t);
  const auto b = make_task(t);
  EXPECT_EQ(a.eval.inputs, b.eval.inputs);
  EXPECT_EQ(a.eval.targets, b.eval.targets);
  EXPECT_EQ(forward(a.model, a.eval.inputs), forward(b.model, b.eval.inputs));
  TaskConfig other = t;
  other.seed = 1;
  EXPECT_NE(make_task(other).eval.inputs, a.eval.inputs);
  EXPECT_EQ(sample_inputs(t, 10, 3), sample_inputs(t, 10, 3));
}

TEST(Task, EveryFamilyBuildsAndEvaluates) {
  for (auto family : {ModelFamily::mlp, ModelFamily::ffn, ModelFamily::attention, ModelFamily::conv}) {
    TaskConfig t = small_mlp(family == ModelFamily::conv ? TaskKind::teacher_regression
                                                         : TaskKind::gaussian_mixture_classification);
    t.family = family;
    t.n_eval = 40;
    t.n_train = 128;
    t.hidden = 16;
    t.spatial = 4;
    t.input_dim = family == ModelFamily::conv ? 3 : 16;
    const auto task = make_task(t);
    EXPECT_GE(task.model.size(), t.depth) << to_string(family);
    const double m = evaluate(task.model, task.eval);
    if (t.kind == TaskKind::teacher_regression) {
      EXPECT_EQ(m, 0.0);
    } else {
      EXPECT_GT(m, 1.0 / static_cast<double>(t.output_dim)) << to_string(family);
    }
  }
}

TEST(Task, ValidationRejectsBadSettings) {
  TaskConfig t = small_mlp();
  t.family = ModelFamily::conv;
  EXPECT_THROW(t.validate(), ArgumentError);  // conv tasks are regression only
  t = small_mlp();
  t.redundancy = 1.5;
  EXPECT_THROW(t.validate(), ArgumentError);
  t = small_mlp();
  t.family = ModelFamily::attention;
  t.n_heads = 6;
  t.gqa_groups = 4;
  EXPECT_THROW(t.validate(), ArgumentError);
}

TEST(Metric, ImprovementSign) {
  EXPECT_GT(improvement(TaskKind::gaussian_mixture_classification, 0.5, 0.7), 0.0);
  EXPECT_GT(improvement(TaskKind::teacher_regression, 0.5, 0.2), 0.0);
  EXPECT_LT(improvement(TaskKind::teacher_regression, 0.2, 0.5), 0.0);
}

TEST(Metric, RegressionIsRelativeFrobenius) {
  oracle::Gen g(1);
  const BlockGraph model({4}, {oracle::random_dense(g, 4, 6, 3)});
  const Tensor x = g.matrix(20, 4);
  const Dataset d = regression_set(model, x);
  EXPECT_EQ(evaluate(model, d), 0.0);
  Dataset scaled = d;
  scaled.targets = 2.0 * d.targets;
  EXPECT_NEAR(evaluate(model, scaled), 0.5, 1e-12);
}

TEST(Sweep, ZeroRatioLeavesMetricUnchanged) {
  const auto report = run_sweep(small_sweep());
  ASSERT_EQ(report.rows.size(), 2u * 2u * 2u * 2u);
  for (const auto& r : report.rows)
    if (r.ratio == 0.0) {
      EXPECT_EQ(r.metric_compressed, r.metric_original);
    }
}

TEST(Sweep, RowsOrderedAndDeterministic) {
  const auto cfg = small_sweep();
  const auto a = run_sweep(cfg);
  EXPECT_EQ(a.to_csv(false), run_sweep(cfg).to_csv(false));
  EXPECT_EQ(a.rows[0].method, Method::mag_l2);
  EXPECT_EQ(a.rows[1].calib_size, 64u);
  EXPECT_EQ(a.rows[2].seed, 1u);
  EXPECT_EQ(a.rows[4].ratio, 0.5);
  EXPECT_EQ(a.rows[8].method, Method::fold);
}

TEST(Sweep, CsvFormat) {
  SweepReport r;
  r.rows.push_back({Method::wanda, 0.5, 3, 128, 0.9, 0.4, 0.8, 1.25, 0.5});
  r.rows.push_back({Method::fold, 0.3, 4, 64, 1.0 / 3.0, 0.0, 0.1, 0.0, 0.0});
  EXPECT_EQ(r.to_csv(false),
            "method,ratio,seed,calib_size,metric_original,metric_compressed,metric_compensated,t_calib_s,t_comp_s\n"
            "wanda,0.5,3,128,0.9,0.4,0.8,0,0\n"
            "fold,0.3,4,64,0.333333333,0,0.1,0,0\n");
  EXPECT_NE(r.to_csv(true).find("0.8,1.25,0.5\n"), std::string::npos);
}

TEST(Sweep, ConfigValidation) {
  SweepConfig s = small_sweep();
  s.ratios = {1.0};
  EXPECT_THROW(s.validate(), ArgumentError);
  s = small_sweep();
  s.seeds.clear();
  EXPECT_THROW(s.validate(), ArgumentError);
  s = small_sweep();
  s.calib_sizes = {0};
  EXPECT_THROW(s.validate(), ArgumentError);
}

TEST(Sweep, ConvRegressionRuns) {
  SweepConfig s;
  s.task.kind = TaskKind::teacher_regression;
  s.task.family = ModelFamily::conv;
  s.task.input_dim = 3;
  s.task.hidden = 8;
  s.task.spatial = 4;
  s.task.n_eval = 30;
  s.methods = {Method::wanda};
  s.ratios = {0.5};
  s.seeds = {0};
  s.calib_sizes = {16};
  const auto r = run_sweep(s);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].metric_original, 0.0);
  EXPECT_LE(r.rows[0].metric_compensated, r.rows[0].metric_compressed);
}

// Linear whitened hidden layer: compensation degenerates to plain selection.
TEST(Recovery, IdentityGramMatchesSelection) {
  oracle::Gen g(2);
  DenseBlock b = oracle::random_dense(g, 16, 16, 8, Activation::identity);
  b.w_producer = Tensor::identity(16);
  b.b_producer = Tensor({16});
  const BlockGraph model({16}, {b});
  const Tensor calib = g.matrix(4096, 16);
  const Dataset data = regression_set(model, g.matrix(500, 16));
  const auto plain = compress_model(model, calib, CompressionPlan::uniform(model, Method::mag_l2, 0.5, false));
  const auto comp = compress_model(model, calib, CompressionPlan::uniform(model, Method::mag_l2, 0.5, true));
  const double compressed = evaluate(plain.graph, data);
  const double compensated = evaluate(comp.graph, data);
  EXPECT_GT(compressed, 0.1);
  EXPECT_LE(std::abs(compensated - compressed), 0.005);
}

// Half the hidden channels are scaled copies: selection keeps the originals
// and compensation folds the copies back in.
TEST(Recovery, DuplicateChannelsAreRecovered) {
  oracle::Gen g(3);
  DenseBlock b = oracle::random_dense(g, 8, 16, 6);
  for (std::size_t h = 0; h < 8; ++h) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 8; ++c) norm += b.w_producer(h, c) * b.w_producer(h, c);
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < 8; ++c) {
      b.w_producer(h, c) /= norm;
      b.w_producer(h + 8, c) = 0.5 * b.w_producer(h, c);
    }
    b.b_producer[h + 8] = 0.5 * b.b_producer[h];
  }
  const BlockGraph model({8}, {b});
  const Tensor calib = g.matrix(128, 8);
  const Dataset data = regression_set(model, g.matrix(500, 8));
  const auto plain = compress_model(model, calib, CompressionPlan::uniform(model, Method::mag_l2, 0.5, false));
  const auto comp = compress_model(model, calib, CompressionPlan::uniform(model, Method::mag_l2, 0.5, true));
  EXPECT_GE(evaluate(plain.graph, data), 0.05);
  EXPECT_LE(evaluate(comp.graph, data), 0.01);
}

TEST(Ablation, SingleSampleStillSolves) {
  TaskConfig t = small_mlp();
  t.hidden = 32;
  const auto points = calib_ablation(t, Method::mag_l2, 0.5, {1}, {0, 1});
  ASSERT_EQ(points.size(), 1u);
  EXPECT_EQ(points[0].improvements.size(), 2u);
  EXPECT_TRUE(std::isfinite(points[0].mean_improvement));
}

TEST(Ablation, SummaryAveragesSeeds) {
  SweepReport r;
  r.kind = TaskKind::gaussian_mixture_classification;
  r.rows.push_back({Method::fold, 0.5, 0, 8, 0.9, 0.5, 0.6, 0, 0});
  r.rows.push_back({Method::fold, 0.5, 1, 8, 0.9, 0.5, 0.8, 0, 0});
  r.rows.push_back({Method::fold, 0.5, 0, 16, 0.9, 0.5, 0.9, 0, 0});
  const auto s = summarize_ablation(r);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].calib_size, 8u);
  EXPECT_NEAR(s[0].mean_improvement, 0.2, 1e-12);
  EXPECT_NEAR(s[1].mean_improvement, 0.4, 1e-12);
}

TEST(Overhead, MemoryEstimate) {
  EXPECT_EQ(gram_memory_bytes(64), 32768u);
  oracle::Gen g(4);
  const BlockGraph model({8}, {oracle::random_dense(g, 8, 64, 4)});
  const auto o = measure_overhead(model, g.matrix(100, 8), 0, Method::mag_l2, 0.5);
  EXPECT_EQ(o.gram_bytes, 32768u);
  EXPECT_EQ(o.width, 64u);
  EXPECT_EQ(o.reduced, 32u);
  EXPECT_EQ(o.solver_bytes, 8u * (2u * 32u * 32u + 2u * 64u * 32u));
  EXPECT_EQ(o.memory_estimate(), o.gram_bytes + o.solver_bytes);
}

TEST(DatasetFile, RoundTrip) {
  const auto task = make_task(small_mlp());
  const auto path = std::filesystem::temp_directory_path() / ("grail_eval_" + std::to_string(::getpid()) + ".grle");
  save_dataset(task.eval, path);
  const Dataset back = load_dataset(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.kind, task.eval.kind);
  EXPECT_EQ(back.targets, task.eval.targets);
  EXPECT_LE(max_abs_diff(back.inputs, task.eval.inputs), 1e-6);
}

}  // namespace
}  // namespace grail
