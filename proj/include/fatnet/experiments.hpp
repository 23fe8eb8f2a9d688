#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fatnet/gradcheck.hpp"
#include "fatnet/train.hpp"

namespace fatnet {

// --- gradient check ----------------------------------------------------------

/// The smallest full classifier: 3 FAT layers, T-Net, GFA, two-layer head.
inline ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.widths = {8, 8, 16};
  c.final_width = 32;
  c.head = {16, 8};
  c.classes = 3;
  c.k = 3;
  c.tnet_widths = {8, 16, 32};
  c.tnet_head = {16, 8};
  return c;
}

/**
 * End-to-end check of every classifier parameter in double precision:
 * two random clouds of 8 points, random state, eval-mode batch norm.
 */
inline GradCheckResult run_model_gradcheck(std::uint64_t seed, double h = 1e-5) {
  auto model = make_model<double>(tiny_gradcheck_config(), seed);
  randomize_state(model, seed);
  Rng rng = substream(seed, "gradcheck");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> pts({16, 3});
  for (auto& x : pts.data()) x = u(rng);
  const std::vector<std::size_t> labels{std::size_t(rng() % 3), std::size_t(rng() % 3)};
  Var<double> input(std::move(pts));
  std::vector<std::pair<std::string, Var<double>>> params;
  for (auto& [name, p] : named_params(model)) params.emplace_back(name, p->var);
  return check_gradients<double>(
      std::move(params),
      [&] { return softmax_cross_entropy(model.forward(input, {2, 8}, Mode::kEval), labels); },
      h);
}

// --- point dropout -------------------------------------------------------------

struct DropoutRow {
  std::size_t keep = 0;
  double mean_acc = 0.0;
  std::vector<double> accs;  ///< one per repeat
};

/**
 * Accuracy when each test cloud keeps a random `keep`-point subset. Every
 * (keep, repeat) pair draws from its own seeded stream.
 */
template <typename T>
std::vector<DropoutRow> run_dropout_experiment(FatNet<T>& model, const Dataset& ds,
                                               const std::vector<Sample>& split,
                                               const std::vector<std::size_t>& keep_counts,
                                               std::size_t repeats = 5, std::uint64_t seed = 1) {
  if (ds.task != Task::kClassify)
    throw InvalidArgument("the dropout experiment needs a classification dataset");
  if (split.empty()) throw InvalidArgument("no clouds to evaluate");
  if (repeats < 1) throw InvalidArgument("need at least one repeat");
  for (std::size_t keep : keep_counts)
    for (const auto& s : split)
      if (keep > s.cloud.size() || keep == 0)
        throw InvalidArgument("cannot keep " + std::to_string(keep) + " of " +
                              std::to_string(s.cloud.size()) + " points");
  std::vector<DropoutRow> rows;
  for (std::size_t keep : keep_counts) {
    DropoutRow row;
    row.keep = keep;
    for (std::size_t r = 0; r < repeats; ++r) {
      Rng rng = substream(seed, "dropout:" + std::to_string(keep), r);
      std::vector<Sample> thinned;
      thinned.reserve(split.size());
      for (const auto& s : split) {
        Sample t = s;
        t.cloud = random_dropout(s.cloud, keep, rng());
        thinned.push_back(std::move(t));
      }
      row.accs.push_back(evaluate(model, ds, thinned).instance_acc);
    }
    double total = 0.0;
    for (double a : row.accs) total += a;
    row.mean_acc = total / double(row.accs.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- ablations -------------------------------------------------------------------

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{
      "combine-at-end", "combine-per-layer", "+residual", "residual-minus-fc",
      "no-attention",   "mp",                "ca",        "mpa",
      "gfa",            "no-transformer",    "tnet",      "fat-tnet"};
  return names;
}

/**
 * `base` with one architectural change. The layout variants start from
 * plain per-layer stacking; the others flip exactly one setting.
 */
inline ModelConfig apply_variant(ModelConfig base, const std::string& variant) {
  if (variant == "combine-at-end") {
    base.layout = Layout::kCombineAtEnd;
    base.residual = false;
  } else if (variant == "combine-per-layer") {
    base.layout = Layout::kPerLayer;
    base.residual = false;
  } else if (variant == "+residual") {
    base.layout = Layout::kPerLayer;
    base.residual = true;
  } else if (variant == "residual-minus-fc") {
    base.layout = Layout::kPerLayer;
    base.residual = true;
    if (base.head.empty()) throw InvalidArgument("residual-minus-fc needs a hidden head layer");
    base.head.pop_back();
  } else if (variant == "no-attention") {
    base.attention = false;
  } else if (variant == "mp") {
    base.aggregation = Aggregation::kMaxPool;
  } else if (variant == "ca") {
    base.aggregation = Aggregation::kConcatAttention;
  } else if (variant == "mpa") {
    base.aggregation = Aggregation::kMaxPoolAttention;
  } else if (variant == "gfa") {
    base.aggregation = Aggregation::kGfa;
  } else if (variant == "no-transformer") {
    base.transformer = TransformerKind::kNone;
  } else if (variant == "tnet") {
    base.transformer = TransformerKind::kPointNet;
  } else if (variant == "fat-tnet") {
    base.transformer = TransformerKind::kFat;
  } else {
    throw InvalidArgument("unknown ablation variant '" + variant + "'");
  }
  return base;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationRun {
  std::uint64_t seed = 0;
  double metric = 0.0;  ///< final-epoch test metric
  TrainResult result;
};

struct AblationRow {
  std::string variant;
  std::size_t parameters = 0;
  std::vector<AblationRun> runs;
  double median_metric = 0.0;
};

/**
 * Trains every variant once per seed (model init, shuffling and
 * augmentation all follow the seed) and reports the median final-epoch
 * test metric. Final rather than best epoch, so the test split never
 * selects a model.
 */
inline std::vector<AblationRow> run_ablation_suite(
    const ModelConfig& base, TrainConfig train_cfg, const Dataset& ds,
    const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds,
    const std::function<void(const std::string&, std::uint64_t, const EpochRecord&)>& progress = {}) {
  if (variants.empty()) throw InvalidArgument("no ablation variants given");
  if (seeds.empty()) throw InvalidArgument("no seeds given");
  if (ds.test.empty()) throw InvalidArgument("ablations need a test split");
  std::vector<ModelConfig> configs;
  for (const auto& v : variants) {
    configs.push_back(apply_variant(base, v));
    configs.back().validate();
  }
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRow row;
    row.variant = variants[i];
    std::vector<double> metrics;
    for (std::uint64_t seed : seeds) {
      auto model = make_model<float>(configs[i], seed);
      row.parameters = count_parameters(model);
      train_cfg.seed = seed;
      AblationRun run;
      run.seed = seed;
      run.result = train(model, ds, train_cfg, "", [&](const EpochRecord& r) {
        if (progress) progress(variants[i], seed, r);
      });
      run.metric = *run.result.history.back().val;
      metrics.push_back(run.metric);
      row.runs.push_back(std::move(run));
    }
    row.median_metric = median(metrics);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fatnet
