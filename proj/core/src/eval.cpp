#include "grail/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>

#include "byte_io.hpp"
#include "grail/errors.hpp"
#include "grail/linalg.hpp"
#include "grail/parallel.hpp"

namespace grail {

std::string_view to_string(TaskKind k) {
  return k == TaskKind::teacher_regression ? "teacher_regression" : "gaussian_mixture_classification";
}

std::string_view to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::mlp:
      return "mlp";
    case ModelFamily::ffn:
      return "ffn";
    case ModelFamily::conv:
      return "conv";
    case ModelFamily::attention:
      return "attention";
  }
  return "mlp";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "teacher_regression") return TaskKind::teacher_regression;
  if (name == "gaussian_mixture_classification") return TaskKind::gaussian_mixture_classification;
  throw ArgumentError("unknown task kind '" + std::string(name) +
                      "' (valid: teacher_regression, gaussian_mixture_classification)");
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "mlp") return ModelFamily::mlp;
  if (name == "ffn") return ModelFamily::ffn;
  if (name == "conv") return ModelFamily::conv;
  if (name == "attention") return ModelFamily::attention;
  throw ArgumentError("unknown model family '" + std::string(name) + "' (valid: mlp, ffn, conv, attention)");
}

void TaskConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ArgumentError(std::string("task ") + name + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(output_dim, "output_dim");
  positive(hidden, "hidden");
  positive(width, "width");
  positive(depth, "depth");
  positive(n_eval, "n_eval");
  if (!(redundancy >= 0.0 && redundancy < 1.0)) throw ArgumentError("task redundancy must lie in [0, 1)");
  if (!(redundancy_noise >= 0.0)) throw ArgumentError("task redundancy_noise must be >= 0");
  if (kind == TaskKind::gaussian_mixture_classification) {
    if (output_dim < 2) throw ArgumentError("classification needs at least 2 classes");
    if (family == ModelFamily::conv) throw ArgumentError("conv family supports teacher_regression only");
    positive(n_train, "n_train");
  }
  if (family == ModelFamily::attention) {
    positive(seq_len, "seq_len");
    positive(n_heads, "n_heads");
    positive(head_dim, "head_dim");
    if (gqa_groups == 0 || n_heads % gqa_groups != 0) {
      throw ArgumentError("task n_heads must be divisible by gqa_groups");
    }
  }
  if (family == ModelFamily::conv) positive(spatial, "spatial");
}

namespace {

// Portable generator: raw mt19937_64 words, Box-Muller normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  Tensor normal(Shape shape, double scale) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = scale * normal();
    return t;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::size_t mixture_components(const TaskConfig& c) {
  return c.kind == TaskKind::gaussian_mixture_classification ? c.output_dim : std::max<std::size_t>(c.output_dim, 4);
}

Tensor mixture_centers(const TaskConfig& c) {
  Rng rng(derive_seed(c.seed, 101));
  return rng.normal({mixture_components(c), c.input_dim}, c.class_separation / std::sqrt(2.0));
}

struct Draws {
  Tensor inputs;
  std::vector<std::size_t> labels;  // one per feature vector
};

// One mixture draw per vector / token / pixel.
Draws draw(const TaskConfig& c, std::size_t n, std::uint64_t seed) {
  const Tensor centers = mixture_centers(c);
  Rng rng(seed);
  Shape shape;
  switch (c.family) {
    case ModelFamily::mlp:
    case ModelFamily::ffn:
      shape = {n, c.input_dim};
      break;
    case ModelFamily::attention:
      shape = {n, c.seq_len, c.input_dim};
      break;
    case ModelFamily::conv:
      shape = {n, c.input_dim, c.spatial, c.spatial};
      break;
  }
  Draws d{Tensor(shape), {}};
  const std::size_t per_sample = c.family == ModelFamily::conv       ? c.spatial * c.spatial
                                 : c.family == ModelFamily::attention ? c.seq_len
                                                                      : 1;
  const std::size_t comps = centers.rows();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < per_sample; ++p) {
      const std::size_t label = rng.index(comps);
      d.labels.push_back(label);
      for (std::size_t f = 0; f < c.input_dim; ++f) {
        const double v = centers(label, f) + rng.normal();
        if (c.family == ModelFamily::conv) {
          d.inputs(s, f, p / c.spatial, p % c.spatial) = v;
        } else {
          d.inputs[(s * per_sample + p) * c.input_dim + f] = v;
        }
      }
    }
  return d;
}

// Replaces a fraction of unit rows by scaled noisy copies of the others and
// shuffles unit order. Rows of `tensors` move together; `scaled` selects
// which tensors receive the copy's scale factor.
void inject_redundancy(Rng& rng, std::size_t units, double fraction, double noise,
                       const std::vector<Tensor*>& tensors, const std::vector<bool>& scaled) {
  const auto dups = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(units)));
  const std::size_t base = units - std::min(dups, units - 1);
  for (std::size_t u = base; u < units; ++u) {
    const std::size_t src = rng.index(base);
    const double s = rng.uniform(0.5, 1.5);
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      Tensor& w = *tensors[t];
      const std::size_t stride = w.size() / units;
      const double row_scale = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(stride, 1)));
      for (std::size_t i = 0; i < stride; ++i) {
        const double jitter = stride > 1 ? noise * row_scale * rng.normal() : 0.0;
        w[u * stride + i] = (scaled[t] ? s : 1.0) * (w[src * stride + i] + jitter);
      }
    }
  }
  std::vector<std::size_t> perm(units);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = units; i-- > 1;) std::swap(perm[i], perm[rng.index(i + 1)]);
  for (Tensor* w : tensors) {
    const Shape shape = w->shape();
    *w = gather_rows(w->reshaped({units, w->size() / units}), perm).reshaped(shape);
  }
}

DenseBlock random_dense(Rng& rng, const TaskConfig& c, std::size_t in, std::size_t out) {
  DenseBlock b;
  b.w_producer = rng.normal({c.hidden, in}, std::sqrt(2.0 / static_cast<double>(in)));
  b.b_producer = rng.normal({c.hidden}, 0.1);
  b.activation = c.activation;
  inject_redundancy(rng, c.hidden, c.redundancy, c.redundancy_noise, {&b.w_producer, &b.b_producer}, {true, true});
  b.w_consumer = rng.normal({out, c.hidden}, std::sqrt(1.0 / static_cast<double>(c.hidden)));
  b.b_consumer = rng.normal({out}, 0.1);
  return b;
}

FfnBlock random_ffn(Rng& rng, const TaskConfig& c, std::size_t d) {
  FfnBlock b;
  b.w_fc = rng.normal({c.hidden, d}, std::sqrt(2.0 / static_cast<double>(d)));
  b.b_fc = rng.normal({c.hidden}, 0.1);
  b.activation = Activation::gelu;
  inject_redundancy(rng, c.hidden, c.redundancy, c.redundancy_noise, {&b.w_fc, &b.b_fc}, {true, true});
  b.w_proj = rng.normal({d, c.hidden}, std::sqrt(1.0 / static_cast<double>(c.hidden)));
  b.b_proj = rng.normal({d}, 0.1);
  return b;
}

ConvBlock random_conv(Rng& rng, const TaskConfig& c, std::size_t in, std::size_t out) {
  ConvBlock b;
  b.w_producer = rng.normal({c.hidden, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(9 * in)));
  b.b_producer = rng.normal({c.hidden}, 0.1);
  b.activation = c.activation;
  inject_redundancy(rng, c.hidden, c.redundancy, c.redundancy_noise, {&b.w_producer, &b.b_producer}, {true, true});
  b.w_consumer = rng.normal({out, c.hidden, 3, 3}, std::sqrt(1.0 / static_cast<double>(9 * c.hidden)));
  b.b_consumer = rng.normal({out}, 0.1);
  b.producer_geometry = {1, 1};
  b.consumer_geometry = {1, 1};
  return b;
}

AttentionBlock random_attention(Rng& rng, const TaskConfig& c, std::size_t d) {
  AttentionBlock b;
  b.n_heads = c.n_heads;
  b.head_dim = c.head_dim;
  b.gqa_groups = c.gqa_groups;
  const std::size_t n_kv = b.kv_heads();
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  b.w_q = rng.normal({c.n_heads * c.head_dim, d}, s);
  b.w_k = rng.normal({n_kv * c.head_dim, d}, s);
  b.w_v = rng.normal({n_kv * c.head_dim, d}, s);
  b.w_o = rng.normal({d, c.n_heads * c.head_dim}, 1.0 / std::sqrt(static_cast<double>(c.n_heads * c.head_dim)));

  // Slot-level redundancy: duplicated KV slots copy k, scale v, and every
  // group's query head for that slot copies its source's query rows.
  Tensor q_slots({n_kv, c.gqa_groups * c.head_dim * d});
  for (std::size_t j = 0; j < n_kv; ++j)
    for (std::size_t g = 0; g < c.gqa_groups; ++g)
      for (std::size_t e = 0; e < c.head_dim * d; ++e)
        q_slots(j, g * c.head_dim * d + e) = b.w_q[((g * n_kv + j) * c.head_dim) * d + e];
  inject_redundancy(rng, n_kv, c.redundancy, c.redundancy_noise, {&q_slots, &b.w_k, &b.w_v}, {false, false, true});
  for (std::size_t j = 0; j < n_kv; ++j)
    for (std::size_t g = 0; g < c.gqa_groups; ++g)
      for (std::size_t e = 0; e < c.head_dim * d; ++e)
        b.w_q[((g * n_kv + j) * c.head_dim) * d + e] = q_slots(j, g * c.head_dim * d + e);
  return b;
}

// Least-squares readout of the last block on labelled training draws.
void fit_readout(BlockGraph& graph, const TaskConfig& c) {
  const Draws train = draw(c, c.n_train, derive_seed(c.seed, 202));
  const std::size_t last = graph.size() - 1;
  const ForwardResult fr = forward(graph, train.inputs, Capture{last, TapPoint::hidden});
  const Tensor& feats = *fr.captured;
  const std::size_t n = feats.rows();
  const std::size_t h = feats.cols();
  const std::size_t classes = c.output_dim;

  Tensor aug({n, h + 1});
  Tensor y({n, classes});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(feats.row(r).begin(), feats.row(r).end(), aug.row(r).begin());
    aug(r, h) = 1.0;
    y(r, train.labels[r]) = 1.0;
  }
  const Tensor gram = matmul_tn(aug, aug);
  double diag = 0.0;
  for (std::size_t i = 0; i <= h; ++i) diag += gram(i, i);
  const Tensor coef = spd_solve(SpdSystem(gram, matmul_tn(aug, y)), 1e-2 * diag / static_cast<double>(h + 1));

  auto head = std::get<DenseBlock>(graph.block(last));
  head.w_consumer = Tensor({classes, h});
  head.b_consumer = Tensor({classes});
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < h; ++i) head.w_consumer(k, i) = coef(i, k);
    head.b_consumer[k] = coef(h, k);
  }
  graph.set_block(last, std::move(head));
}

BlockGraph build_model(const TaskConfig& c) {
  Rng rng(derive_seed(c.seed, 303));
  std::vector<Block> blocks;
  const bool classify = c.kind == TaskKind::gaussian_mixture_classification;
  Shape input_shape = {c.input_dim};
  switch (c.family) {
    case ModelFamily::mlp: {
      std::size_t in = c.input_dim;
      for (std::size_t i = 0; i < c.depth; ++i) {
        const std::size_t out = i + 1 == c.depth ? c.output_dim : c.width;
        blocks.emplace_back(random_dense(rng, c, in, out));
        in = out;
      }
      break;
    }
    case ModelFamily::ffn:
      for (std::size_t i = 0; i < c.depth; ++i) blocks.emplace_back(random_ffn(rng, c, c.input_dim));
      blocks.emplace_back(random_dense(rng, c, c.input_dim, c.output_dim));
      break;
    case ModelFamily::attention:
      for (std::size_t i = 0; i < c.depth; ++i) blocks.emplace_back(random_attention(rng, c, c.input_dim));
      blocks.emplace_back(random_dense(rng, c, c.input_dim, c.output_dim));
      break;
    case ModelFamily::conv: {
      input_shape = {c.input_dim, c.spatial, c.spatial};
      std::size_t in = c.input_dim;
      for (std::size_t i = 0; i < c.depth; ++i) {
        const std::size_t out = i + 1 == c.depth ? c.output_dim : c.width;
        blocks.emplace_back(random_conv(rng, c, in, out));
        in = out;
      }
      break;
    }
  }
  BlockGraph graph(input_shape, std::move(blocks));
  if (classify) fit_readout(graph, c);
  return graph;
}

Tensor output_rows(const Tensor& out) {
  if (out.rank() == 4) {
    // N x O x H x W -> per-pixel rows
    const std::size_t n = out.dim(0), o = out.dim(1), h = out.dim(2), w = out.dim(3);
    Tensor rows({n * h * w, o});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t c = 0; c < o; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) rows((a * h + y) * w + x, c) = out(a, c, y, x);
    return rows;
  }
  const std::size_t last = out.shape().back();
  return out.reshaped({out.size() / last, last});
}

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

SyntheticTask make_task(const TaskConfig& config) {
  config.validate();
  SyntheticTask task{config, build_model(config), {}};
  const Draws eval = draw(config, config.n_eval, derive_seed(config.seed, 404));
  task.eval.kind = config.kind;
  task.eval.inputs = eval.inputs;
  if (config.kind == TaskKind::gaussian_mixture_classification) {
    std::vector<double> labels(eval.labels.begin(), eval.labels.end());
    task.eval.targets = Tensor::vector(std::move(labels));
  } else {
    task.eval.targets = forward(task.model, eval.inputs);
  }
  return task;
}

Tensor sample_inputs(const TaskConfig& config, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("sample_inputs: n must be positive");
  return draw(config, n, seed).inputs;
}

double evaluate(const BlockGraph& model, const Dataset& data) {
  const Tensor out = forward(model, data.inputs);
  if (data.kind == TaskKind::teacher_regression) {
    if (out.shape() != data.targets.shape()) {
      throw DimensionError("model output " + shape_string(out.shape()) + " does not match targets " +
                           shape_string(data.targets.shape()));
    }
    const double denom = frobenius_norm(data.targets);
    return denom > 0.0 ? frobenius_norm(out - data.targets) / denom : frobenius_norm(out);
  }
  const Tensor rows = output_rows(out);
  if (rows.rows() != data.targets.size()) {
    throw DimensionError("model produces " + std::to_string(rows.rows()) + " predictions for " +
                         std::to_string(data.targets.size()) + " labels");
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto row = rows.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (static_cast<double>(best) == data.targets[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.rows());
}

double improvement(TaskKind kind, double before, double after) {
  return kind == TaskKind::teacher_regression ? before - after : after - before;
}

void SweepConfig::validate() const {
  task.validate();
  if (methods.empty()) throw ArgumentError("sweep needs at least one method");
  if (ratios.empty()) throw ArgumentError("sweep needs at least one ratio");
  if (seeds.empty()) throw ArgumentError("sweep needs at least one seed");
  if (calib_sizes.empty()) throw ArgumentError("sweep needs at least one calibration size");
  for (double r : ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw ArgumentError("sweep ratio " + format_g9(r) + " outside [0, 1)");
  }
  for (auto s : calib_sizes) {
    if (s == 0) throw ArgumentError("calibration sizes must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("alpha must lie in (0, 1)");
}

std::string SweepReport::to_csv(bool timings) const {
  std::string out =
      "method,ratio,seed,calib_size,metric_original,metric_compressed,metric_compensated,t_calib_s,t_comp_s\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.method)) + ',' + format_g9(r.ratio) + ',' + std::to_string(r.seed) + ',' +
           std::to_string(r.calib_size) + ',' + format_g9(r.metric_original) + ',' + format_g9(r.metric_compressed) +
           ',' + format_g9(r.metric_compensated) + ',' + format_g9(timings ? r.t_calib_s : 0.0) + ',' +
           format_g9(timings ? r.t_comp_s : 0.0) + '\n';
  }
  return out;
}

SweepReport run_sweep(const SweepConfig& config) {
  config.validate();

  struct SeedState {
    SyntheticTask task;
    Tensor pool;  // calibration draws; size n uses the first n
    double original = 0.0;
  };
  const std::size_t max_size = *std::max_element(config.calib_sizes.begin(), config.calib_sizes.end());
  std::vector<SeedState> states(config.seeds.size());
  parallel_for(config.seeds.size(), [&](std::size_t i) {
    TaskConfig tc = config.task;
    tc.seed = derive_seed(config.base_seed, config.seeds[i]);
    SeedState st{make_task(tc), sample_inputs(tc, max_size, derive_seed(tc.seed, 505)), 0.0};
    st.original = evaluate(st.task.model, st.task.eval);
    states[i] = std::move(st);
  });

  SweepReport report;
  report.kind = config.task.kind;
  for (auto m : config.methods)
    for (double r : config.ratios)
      for (auto s : config.seeds)
        for (auto n : config.calib_sizes) report.rows.push_back({m, r, s, n});

  const std::size_t per_seed = config.calib_sizes.size();
  parallel_for(report.rows.size(), [&](std::size_t i) {
    SweepRow& row = report.rows[i];
    const SeedState& st = states[(i / per_seed) % config.seeds.size()];
    Shape calib_shape = st.pool.shape();
    calib_shape[0] = row.calib_size;
    const std::size_t count = shape_product(calib_shape);
    const Tensor calib(calib_shape, std::vector<double>(st.pool.data().begin(),
                                                        st.pool.data().begin() + static_cast<std::ptrdiff_t>(count)));

    const auto& model = st.task.model;
    const CompressionPlan naive =
        CompressionPlan::uniform(model, row.method, row.ratio, false, config.alpha, st.task.config.seed);
    const CompressionPlan full =
        CompressionPlan::uniform(model, row.method, row.ratio, true, config.alpha, st.task.config.seed);
    const CompressionOutcome compressed = compress_model(model, calib, naive);
    const CompressionOutcome compensated = compress_model(model, calib, full);

    row.metric_original = st.original;
    row.metric_compressed = evaluate(compressed.graph, st.task.eval);
    row.metric_compensated = evaluate(compensated.graph, st.task.eval);
    for (const auto& b : compensated.blocks) {
      row.t_calib_s += b.t_calib_s;
      row.t_comp_s += b.t_comp_s;
    }
  });
  return report;
}

std::vector<AblationPoint> summarize_ablation(const SweepReport& report) {
  std::map<std::size_t, AblationPoint> by_size;
  for (const auto& r : report.rows) {
    auto& p = by_size[r.calib_size];
    p.calib_size = r.calib_size;
    p.improvements.push_back(improvement(report.kind, r.metric_compressed, r.metric_compensated));
  }
  std::vector<AblationPoint> out;
  for (auto& [size, p] : by_size) {
    p.mean_improvement = std::accumulate(p.improvements.begin(), p.improvements.end(), 0.0) /
                         static_cast<double>(p.improvements.size());
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<AblationPoint> calib_ablation(const TaskConfig& task, Method method, double ratio,
                                          const std::vector<std::size_t>& sizes,
                                          const std::vector<std::uint64_t>& seeds, double alpha,
                                          std::uint64_t base_seed) {
  SweepConfig cfg;
  cfg.task = task;
  cfg.methods = {method};
  cfg.ratios = {ratio};
  cfg.seeds = seeds;
  cfg.calib_sizes = sizes;
  cfg.alpha = alpha;
  cfg.base_seed = base_seed;
  return summarize_ablation(run_sweep(cfg));
}

std::size_t gram_memory_bytes(std::size_t width) { return width * width * sizeof(double); }

OverheadReport measure_overhead(const BlockGraph& graph, const Tensor& batch, std::size_t block, Method method,
                                double ratio, double alpha, std::size_t repeats) {
  using clock = std::chrono::steady_clock;
  repeats = std::max<std::size_t>(repeats, 1);
  OverheadReport rep;
  rep.t_calib_s = rep.t_comp_s = std::numeric_limits<double>::infinity();

  GramStats stats;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = clock::now();
    stats = accumulate_gram(graph, batch, block);
    rep.t_calib_s = std::min(rep.t_calib_s, std::chrono::duration<double>(clock::now() - t0).count());
  }
  const Block& target = graph.block(block);
  const Tensor input = forward_range(graph, batch, 0, block);
  const SelectionDecision decision = select_units(target, method, ratio, stats, input, derive_seed(0, block));
  const RidgeConfig ridge{alpha, std::nullopt};
  Compressed<Block> result;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = clock::now();
    result = compress_block(target, decision, stats, ridge, MergeOptions{true, block});
    rep.t_comp_s = std::min(rep.t_comp_s, std::chrono::duration<double>(clock::now() - t0).count());
  }
  rep.n_rows = stats.n_samples;
  rep.width = stats.width();
  rep.reduced = result.result.b.cols();
  rep.gram_bytes = gram_memory_bytes(rep.width);
  rep.solver_bytes = sizeof(double) * (2 * rep.reduced * rep.reduced + 2 * rep.width * rep.reduced);
  return rep;
}

namespace {

void write_tensor(detail::ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

Tensor read_tensor(detail::ByteReader& r) {
  const auto rank = r.u32("rank");
  if (rank < 1 || rank > 4) throw ManifestError(r.what() + ": rank " + std::to_string(rank) + " not in 1..4");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32("dims");
  if (shape[0] == 0) throw EmptyCalibrationError(r.what() + ": zero samples");
  for (auto d : shape)
    if (d == 0) throw ManifestError(r.what() + ": zero dimension in " + shape_string(shape));
  std::vector<double> data(shape_product(shape));
  for (auto& v : data) v = static_cast<double>(r.f32());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.magic("GRLE");
  w.u32(1);
  w.u32(data.kind == TaskKind::gaussian_mixture_classification ? 1 : 0);
  write_tensor(w, data.inputs);
  write_tensor(w, data.targets);
  detail::write_file(path, w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, "dataset file");
  r.expect_magic("GRLE");
  r.expect_version(1);
  const auto kind = r.u32("task kind");
  if (kind > 1) throw ManifestError("dataset file: unknown task kind " + std::to_string(kind));
  Dataset d;
  d.kind = kind == 1 ? TaskKind::gaussian_mixture_classification : TaskKind::teacher_regression;
  d.inputs = read_tensor(r);
  d.targets = read_tensor(r);
  if (r.remaining() != 0) throw TruncatedError("dataset file: trailing bytes after targets");
  return d;
}

}  // namespace grail
