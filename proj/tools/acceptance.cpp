// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fatnet/fatnet.hpp"

using namespace fatnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), sizeof(T) * a.size()) == 0;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  Tensor<T> out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < perm.size(); ++r)
    std::copy_n(x.raw() + perm[r] * c, c, out.raw() + r * c);
  return out;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = T(d(rng));
  return t;
}

template <typename T>
Tensor<T> eval_logits(FatNet<T>& m, const Tensor<T>& pts, std::size_t clouds = 1) {
  NoGradGuard g;
  return m.forward(Var<T>(pts), {clouds, pts.rows() / clouds}, Mode::kEval).value();
}

ModelConfig tiny(Task task) {
  ModelConfig c = tiny_gradcheck_config();
  c.task = task;
  if (task == Task::kSegment) c.classes = 4;
  return c;
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const GradCheckResult r = run_model_gradcheck(7);
  const double secs = seconds_since(t0);
  auto model = make_model<double>(tiny_gradcheck_config(), 7);
  const std::size_t total = count_parameters(model);
  Outcome o;
  o.pass = r.max_rel_error < 1e-4 && r.checked == total && r.discontinuities == 0 && secs < 60;
  o.detail = fmt("max rel error %.3g over %zu/%zu parameters, %zu skipped, %.1fs", r.max_rel_error,
                 r.checked, total, r.discontinuities, secs);
  return o;
}

// --- 2 ----------------------------------------------------------------------

Outcome permutation_symmetry() {
  const auto t0 = Clock::now();
  auto cls = make_model<float>(tiny(Task::kClassify), 2);
  auto seg = make_model<float>(tiny(Task::kSegment), 3);
  randomize_state(cls, 2);
  randomize_state(seg, 3);
  Rng rng = substream(2, "acceptance:permutation");
  const auto pts = uniform_tensor<float>({6, 3}, rng);
  const auto base_cls = eval_logits(cls, pts);
  const auto base_seg = eval_logits(seg, pts);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t count = 0, bad_cls = 0, bad_seg = 0;
  do {
    const auto p = permute_rows(pts, perm);
    bad_cls += !same_bits(eval_logits(cls, p), base_cls);
    bad_seg += !same_bits(eval_logits(seg, p), permute_rows(base_seg, perm));
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = count == 720 && bad_cls == 0 && bad_seg == 0 && secs < 30;
  o.detail = fmt("%zu permutations, %zu classifier and %zu segmenter mismatches, %.1fs", count,
                 bad_cls, bad_seg, secs);
  return o;
}

// --- 3 ----------------------------------------------------------------------

// Coordinates are integers scaled by 2^-scale_bits, so squared distances
// are exact integers in the oracle and exact doubles in the library.
Outcome knn_oracle() {
  Rng rng = substream(3, "acceptance:knn");
  std::size_t mismatched = 0, tied_clouds = 0;
  for (int cloud = 0; cloud < 100; ++cloud) {
    const std::size_t n = 2 + rng() % 63;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(n - 1, 20);
    const std::size_t d = cloud % 4 == 3 ? 8 : 3;
    const bool coarse = cloud % 2 == 0;  // a small grid forces many ties
    const std::int64_t half = coarse ? 2 : (1 << 20);
    const int scale_bits = coarse ? 0 : 20;
    std::vector<std::int64_t> grid(n * d);
    for (auto& g : grid) g = std::int64_t(rng() % std::uint64_t(2 * half + 1)) - half;
    Tensor<float> x({n, d});
    for (std::size_t i = 0; i < n * d; ++i) x.data()[i] = std::ldexp(float(grid[i]), -scale_bits);

    const NeighborIndex got = knn_graph(x, k);
    bool cloud_has_tie = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<std::int64_t, std::size_t>> cand;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        std::int64_t s = 0;
        for (std::size_t q = 0; q < d; ++q) {
          const std::int64_t diff = grid[j * d + q] - grid[i * d + q];
          s += diff * diff;
        }
        cand.emplace_back(s, j);
      }
      std::stable_sort(cand.begin(), cand.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      if (k < cand.size() && cand[k - 1].first == cand[k].first) cloud_has_tie = true;
      for (std::size_t q = 0; q < k; ++q)
        if (got.indices[i * k + q] != cand[q].second) {
          ++mismatched;
          break;
        }
    }
    tied_clouds += cloud_has_tie;
  }
  Outcome o;
  o.pass = mismatched == 0;
  o.detail = fmt("100 clouds, %zu mismatched rows, %zu clouds with ties at the k-th neighbour",
                 mismatched, tied_clouds);
  return o;
}

// --- 4 ----------------------------------------------------------------------

// Embeddings sit on a 1/256 grid so every column sum is exact in float
// whatever the order, which gives an order-independent oracle for the mean.
Outcome gfa_degeneracies() {
  Rng rng = substream(4, "acceptance:gfa");
  std::size_t half_bad = 0, mp_bad = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng() % 30, w = 16 + 8 * (rng() % 4);
    std::vector<std::int64_t> grid(n * w);
    Tensor<float> emb({n, w});
    for (std::size_t i = 0; i < n * w; ++i) {
      grid[i] = std::int64_t(rng() % 1537) - 768;
      emb.data()[i] = float(grid[i]) / 256.0f;
    }

    GfaBlock<float> zeroed(w, Aggregation::kGfa);
    StateVisitor<float> zero;
    zero.on_param = [](const std::string&, Param<float>& p) { p.var.mutable_value().fill(0.0f); };
    zeroed.visit("", zero);
    const auto out = gfa(emb, zeroed);
    for (std::size_t c = 0; c < w; ++c) {
      std::int64_t mx = std::numeric_limits<std::int64_t>::min(), total = 0;
      for (std::size_t r = 0; r < n; ++r) {
        mx = std::max(mx, grid[r * w + c]);
        total += grid[r * w + c];
      }
      const float max_v = float(mx) / 256.0f;
      const float mean_v = float(double(total) / 256.0 / double(n));
      half_bad += out[c] != 0.5f * (max_v + mean_v);
    }

    GfaBlock<float> forced(w, Aggregation::kGfa);
    init_module(forced, std::uint64_t(t) + 1);
    randomize_state(forced, std::uint64_t(t) + 1);
    forced.forced_gates = std::pair<float, float>{1.0f, 0.0f};
    GfaBlock<float> mp(w, Aggregation::kMaxPool);
    mp_bad += !same_bits(gfa(emb, forced), gfa(emb, mp));
  }
  Outcome o;
  o.pass = half_bad == 0 && mp_bad == 0;
  o.detail = fmt("20 embeddings, %zu channels off 0.5(max+mean), %zu forced-gate mismatches",
                 half_bad, mp_bad);
  return o;
}

// --- 5 ----------------------------------------------------------------------

Outcome tnet_identity() {
  const ModelConfig aligned = desk_model_config(4);
  TNetConfig tc;
  tc.widths = aligned.tnet_widths;
  tc.head = aligned.tnet_head;
  tc.k = aligned.k;
  TNet<float> tnet(tc);
  init_module(tnet, 5);
  Rng rng = substream(5, "acceptance:tnet");
  const auto pts = uniform_tensor<float>({2 * 64, 3}, rng);
  const Tensor<float> identity({1, 9}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::size_t non_identity = 0;
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    const auto m = tnet.regress(Var<float>(pts), {2, 64}, mode).value();
    for (std::size_t c = 0; c < 2; ++c)
      non_identity += std::memcmp(m.raw() + 9 * c, identity.raw(), 9 * sizeof(float)) != 0;
  }

  ModelConfig plain = aligned;
  plain.transformer = TransformerKind::kNone;
  auto a = make_model<float>(aligned, 5);
  auto b = make_model<float>(plain, 5);
  const bool eval_same = same_bits(eval_logits(a, pts, 2), eval_logits(b, pts, 2));
  const bool train_same =
      same_bits(a.forward(Var<float>(pts), {2, 64}, Mode::kTrain).value(),
                b.forward(Var<float>(pts), {2, 64}, Mode::kTrain).value());
  Outcome o;
  o.pass = non_identity == 0 && eval_same && train_same;
  o.detail = fmt("%zu non-identity transforms, aligned vs unaligned logits %s (eval) %s (train)",
                 non_identity, eval_same ? "identical" : "DIFFER", train_same ? "identical" : "DIFFER");
  return o;
}

// --- 6 and 7 -------------------------------------------------------------------

struct Desk {
  std::size_t epochs = 40;
  std::size_t dropout_epochs = 30;
  std::string report;  // directory for histories and tables, optional
};

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream((std::filesystem::path(dir) / name).string()) << text;
}

std::string history_csv(const TrainResult& r) {
  std::string s = history_header(Task::kClassify) + "\n";
  for (const auto& e : r.history) s += history_row(e) + "\n";
  return s;
}

struct AblationOutcome {
  Outcome learning, direction;
};

AblationOutcome desk_ablation(const Desk& desk) {
  const Dataset ds = generate_synthetic(SyntheticSpec{});
  TrainConfig tc;
  tc.epochs = desk.epochs;
  const std::vector<std::string> variants{"gfa", "no-attention", "mp"};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> run_seconds;
  auto last = Clock::now();
  const auto rows = run_ablation_suite(
      desk_model_config(ds.num_labels), tc, ds, variants, seeds,
      [&](const std::string& v, std::uint64_t seed, const EpochRecord& r) {
        if (r.epoch + 1 == desk.epochs) {
          run_seconds.push_back(seconds_since(last));
          last = Clock::now();
        }
        std::cerr << fmt("  %s seed %llu epoch %zu loss %.4f train %.3f test %.3f\n", v.c_str(),
                         (unsigned long long)seed, r.epoch, r.train_loss, r.train_acc,
                         r.val.value_or(-1.0));
      });

  std::string table = "variant,parameters,median_acc,seed_1,seed_2,seed_3\n";
  for (const auto& row : rows) {
    table += fmt("%s,%zu,%.4f", row.variant.c_str(), row.parameters, row.median_metric);
    for (const auto& run : row.runs) {
      table += fmt(",%.4f", run.metric);
      write_file(desk.report, fmt("history_%s_seed%llu.csv", row.variant.c_str(),
                                  (unsigned long long)run.seed),
                 history_csv(run.result));
    }
    table += "\n";
  }
  write_file(desk.report, "ablation.csv", table);
  std::cerr << table;

  AblationOutcome out;
  const auto& full = rows[0].runs[0];
  double best_train = 0.0;
  std::size_t reached_at = 0;
  for (const auto& e : full.result.history)
    if (e.train_acc > best_train) {
      best_train = e.train_acc;
      reached_at = e.epoch;
    }
  const double test = full.metric;
  const double secs = run_seconds.at(0);
  out.learning.pass = best_train >= 0.95 && test >= 0.85 && secs < 30 * 60;
  out.learning.detail = fmt("seed 1: best train acc %.3f (epoch %zu of %zu), final test acc %.3f, %.0fs",
                            best_train, reached_at, desk.epochs, test, secs);

  const double g = rows[0].median_metric, na = rows[1].median_metric, mp = rows[2].median_metric;
  out.direction.pass = g >= na && g >= mp;
  out.direction.detail = fmt("median test acc: full %.4f, no-attention %.4f, max-pool %.4f", g, na, mp);
  return out;
}

// --- 8 ------------------------------------------------------------------------

Outcome dropout_robustness(const Desk& desk) {
  SyntheticSpec spec;
  spec.points = 256;
  const Dataset ds = generate_synthetic(spec);
  TrainConfig tc;
  tc.epochs = desk.dropout_epochs;
  auto model = make_model<float>(desk_model_config(ds.num_labels), 1);
  const auto t0 = Clock::now();
  const TrainResult r = train(model, ds, tc, "", [&](const EpochRecord& e) {
    std::cerr << fmt("  256-point epoch %zu loss %.4f train %.3f test %.3f\n", e.epoch, e.train_loss,
                     e.train_acc, e.val.value_or(-1.0));
  });
  write_file(desk.report, "history_dropout_256.csv", history_csv(r));
  if (!desk.report.empty())
    save_checkpoint(model, (std::filesystem::path(desk.report) / "model_256.ckpt").string());
  const auto rows = run_dropout_experiment(model, ds, ds.test, {256, 128, 64}, 5, 1);
  std::string table = "keep,mean_acc\n";
  for (const auto& row : rows) table += fmt("%zu,%.4f\n", row.keep, row.mean_acc);
  write_file(desk.report, "dropout.csv", table);
  const double full = rows[0].mean_acc, thin = rows[2].mean_acc;
  Outcome o;
  o.pass = full - thin <= 0.10;
  o.detail = fmt("acc %.4f at 256 points, %.4f at 128, %.4f at 64 (drop %.4f), %.0fs", full,
                 rows[1].mean_acc, thin, full - thin, seconds_since(t0));
  return o;
}

// --- 9 ------------------------------------------------------------------------

Outcome metric_oracles() {
  const double miou = part_miou({{0, 1, 1, 1}}, {{0, 0, 1, 1}}, {{0, 1}});
  std::vector<std::size_t> labels(100, 0), preds(100, 0);
  std::fill(labels.begin() + 90, labels.end(), 1);
  const AccuracyMetrics acc = accuracy_metrics(preds, labels);
  Outcome o;
  o.pass = std::abs(miou - 7.0 / 12.0) <= 1e-9 && acc.instance == 0.9 && acc.per_class == 0.5;
  o.detail = fmt("mIoU %.12f (want 7/12), instance %.17g, class %.17g", miou, acc.instance,
                 acc.per_class);
  return o;
}

// --- 10 -----------------------------------------------------------------------

Outcome persistence() {
  std::vector<std::string> problems;
  const ModelConfig cfg = tiny(Task::kClassify);
  auto model = make_model<float>(cfg, 10);
  randomize_state(model, 10);
  const auto dir = std::filesystem::temp_directory_path() / "fatnet_acceptance";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<float>(path);
  Rng rng = substream(10, "acceptance:persistence");
  const auto pts = uniform_tensor<float>({3 * 20, 3}, rng);
  if (!same_bits(eval_logits(model, pts, 3), eval_logits(loaded, pts, 3)))
    problems.push_back("logits differ after reload");

  using K = CheckpointError::Kind;
  const std::string bytes = serialize_checkpoint(model);
  auto expect_kind = [&](const std::string& what, const std::function<void()>& f, K want) {
    try {
      f();
      problems.push_back(what + " accepted");
    } catch (const CheckpointError& e) {
      if (e.kind() != want) problems.push_back(what + " gave the wrong error kind");
    }
  };
  auto reject_into = [&](const std::string& what, const ModelConfig& target_cfg,
                         const std::string& data, K want) {
    auto target = make_model<float>(target_cfg, 99);
    const std::string before = serialize_checkpoint(target);
    const std::string file = (dir / "bad.ckpt").string();
    write_binary_file(file, data);
    expect_kind(what, [&] { load_checkpoint_into(target, file); }, want);
    if (serialize_checkpoint(target) != before) problems.push_back(what + " left partial state");
  };
  std::string magic = bytes;
  magic[0] ^= 0x5a;
  reject_into("bad magic", cfg, magic, K::kBadMagic);
  for (std::size_t cut : {std::size_t(0), std::size_t(7), bytes.size() / 3, bytes.size() - 1})
    reject_into("truncated at " + std::to_string(cut), cfg, bytes.substr(0, cut), K::kTruncated);
  ModelConfig wider = cfg;
  wider.widths = {8, 12, 16};
  reject_into("shape mismatch", wider, bytes, K::kShapeMismatch);
  expect_kind("missing file", [&] { load_checkpoint<float>((dir / "absent.ckpt").string()); },
              K::kIo);

  Outcome o;
  o.pass = problems.empty();
  o.detail = problems.empty() ? "bitwise logits after reload, 7 corrupt inputs rejected cleanly"
                              : problems.front();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FatNet acceptance criteria"};
  std::vector<int> only;
  Desk desk;
  app.add_option("--criteria", only, "Run only these criteria (1-10)")->delimiter(',');
  app.add_option("--epochs", desk.epochs, "Epochs per ablation run")->capture_default_str();
  app.add_option("--dropout-epochs", desk.dropout_epochs, "Epochs for the 256-point model")
      ->capture_default_str();
  app.add_option("--report", desk.report, "Directory for training histories and tables");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::count(only.begin(), only.end(), c); };
  const std::vector<std::string> names{"",
                                       "gradient correctness",
                                       "permutation symmetry",
                                       "kNN oracle",
                                       "GFA degeneracies",
                                       "T-Net identity at init",
                                       "desk-scale learning",
                                       "ablation direction",
                                       "dropout robustness",
                                       "metric oracles",
                                       "persistence"};
  int failures = 0;
  auto report = [&](int c, const Outcome& o) {
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c << " " << names[c] << ": " << o.detail
              << std::endl;
    failures += !o.pass;
  };
  auto guarded = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    try {
      report(c, f());
    } catch (const std::exception& e) {
      report(c, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, gradient_correctness);
  guarded(2, permutation_symmetry);
  guarded(3, knn_oracle);
  guarded(4, gfa_degeneracies);
  guarded(5, tnet_identity);
  if (wanted(6) || wanted(7)) {
    try {
      const AblationOutcome a = desk_ablation(desk);
      if (wanted(6)) report(6, a.learning);
      if (wanted(7)) report(7, a.direction);
    } catch (const std::exception& e) {
      if (wanted(6)) report(6, {false, std::string("threw: ") + e.what()});
      if (wanted(7)) report(7, {false, std::string("threw: ") + e.what()});
    }
  }
  guarded(8, [&] { return dropout_robustness(desk); });
  guarded(9, metric_oracles);
  guarded(10, persistence);
  return failures ? 1 : 0;
}
