#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fatnet/checkpoint.hpp"
#include "fatnet/config.hpp"
#include "fatnet/data.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace fatnet;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fatnet_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_config() {
  ModelConfig m;
  m.widths = {8, 8};
  m.final_width = 16;
  m.head = {8};
  m.classes = 3;
  m.k = 4;
  m.tnet_widths = {8, 16};
  m.tnet_head = {8};
  return m;
}

}  // namespace

// --- config -----------------------------------------------------------------

TEST(Config, ParsesKeysCommentsAndBlankLines) {
  const auto cfg = parse_run_config(
      "# run\n"
      "data = /tmp/d\n\n"
      "widths = 16, 32  # trailing comment\n"
      "aggregation = mpa\n"
      "attention = off\n"
      "layout = combine-at-end\n"
      "transformer = none\n"
      "lr = 0.002\n"
      "epochs = 7\n"
      "jitter = no\n");
  EXPECT_EQ(cfg.data, "/tmp/d");
  EXPECT_EQ(cfg.model.widths, (std::vector<std::size_t>{16, 32}));
  EXPECT_EQ(cfg.model.aggregation, Aggregation::kMaxPoolAttention);
  EXPECT_FALSE(cfg.model.attention);
  EXPECT_EQ(cfg.model.layout, Layout::kCombineAtEnd);
  EXPECT_EQ(cfg.model.transformer, TransformerKind::kNone);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 0.002);
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_FALSE(cfg.train.augment.jitter);
  EXPECT_TRUE(cfg.train.augment.rotate);
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t(0);
  };
  EXPECT_EQ(line_of("lr = 0.1\n\nbogus = 3\n"), 3u);
  EXPECT_EQ(line_of("widths = 8,x\n"), 1u);
  EXPECT_EQ(line_of("epochs = 1\nno equals sign\n"), 2u);
  EXPECT_EQ(line_of("lr = 0.1\naggregation = sum\n"), 2u);
  EXPECT_EQ(line_of("epochs = -4\n"), 1u);
  EXPECT_EQ(line_of("attention = maybe\n"), 1u);
}

TEST(Config, ModelTextRoundTrips) {
  ModelConfig m = tiny_config();
  m.aggregation = Aggregation::kConcatAttention;
  m.residual = true;
  m.edge_center = true;
  m.task = Task::kSegment;
  m.head = {};
  const ModelConfig back = parse_model_config(model_config_text(m));
  EXPECT_TRUE(back == m);
  EXPECT_TRUE(back.head.empty());
  m.k = 5;
  EXPECT_FALSE(back == m);
}

TEST(Config, TrainTextRoundTrips) {
  TrainConfig t;
  t.lr = 0.0123;
  t.seed = 99;
  t.augment.scale = false;
  RunConfig r = parse_run_config(train_config_text(t));
  EXPECT_EQ(train_config_text(r.train), train_config_text(t));
}

TEST(Config, TrainValidation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.bn_momentum = 1.0;
  EXPECT_THROW(t.validate(), InvalidArgument);
  t = TrainConfig{};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), InvalidArgument);
}

// --- checkpoint -------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitwise) {
  auto model = make_model<float>(tiny_config(), 3);
  fatnet::testing::randomize(model, 11);
  const auto path = (scratch("ckpt") / "m.ckpt").string();
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<float>(path);
  EXPECT_TRUE(loaded.config() == model.config());

  std::vector<std::pair<std::string, std::vector<float>>> a, b;
  auto collect = [](FatNet<float>& m, auto& out) {
    StateVisitor<float> v;
    v.on_param = [&](const std::string& n, Param<float>& p) {
      out.emplace_back(n, std::vector<float>(p.value().data().begin(), p.value().data().end()));
    };
    v.on_buffer = [&](const std::string& n, Tensor<float>& t) {
      out.emplace_back(n, std::vector<float>(t.data().begin(), t.data().end()));
    };
    m.visit("", v);
  };
  collect(model, a);
  collect(loaded, b);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(0, std::memcmp(a[i].second.data(), b[i].second.data(), 4 * a[i].second.size()))
        << a[i].first;
  }

  // Same predictions.
  std::mt19937_64 rng(5);
  Tensor<float> x = fatnet::testing::random_tensor<float>({2 * 12, 3}, rng);
  auto ya = model.forward(Var<float>(x), {2, 12}, Mode::kEval).value();
  auto yb = loaded.forward(Var<float>(x), {2, 12}, Mode::kEval).value();
  EXPECT_EQ(0, std::memcmp(ya.data().data(), yb.data().data(), 4 * ya.size()));
}

TEST(Checkpoint, SavingIsDeterministic) {
  auto a = make_model<float>(tiny_config(), 3);
  auto b = make_model<float>(tiny_config(), 3);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  auto model = make_model<float>(tiny_config(), 3);
  const std::string bytes = serialize_checkpoint(model);
  auto kind_of = [](const std::string& b) {
    try {
      parse_checkpoint(b);
    } catch (const CheckpointError& e) {
      return int(e.kind());
    }
    return -1;
  };
  using K = CheckpointError::Kind;
  EXPECT_EQ(kind_of("NOTACKPT" + bytes.substr(8)), int(K::kBadMagic));
  EXPECT_EQ(kind_of(""), int(K::kTruncated));
  EXPECT_EQ(kind_of(bytes.substr(0, 5)), int(K::kTruncated));
  for (std::size_t cut : {std::size_t(9), std::size_t(40), bytes.size() / 2, bytes.size() - 1})
    EXPECT_EQ(kind_of(bytes.substr(0, cut)), int(K::kTruncated)) << cut;
  EXPECT_EQ(kind_of(bytes + "x"), int(K::kTruncated));
  EXPECT_NO_THROW(parse_checkpoint(bytes));
}

TEST(Checkpoint, MismatchLeavesModelUntouched) {
  auto source = make_model<float>(tiny_config(), 3);
  ModelConfig wider = tiny_config();
  wider.widths = {8, 12};
  auto target = make_model<float>(wider, 4);
  const std::string before = serialize_checkpoint(target);
  try {
    load_state(target, parse_checkpoint(serialize_checkpoint(source)));
    FAIL() << "expected a shape mismatch";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("["), std::string::npos);
  }
  EXPECT_EQ(serialize_checkpoint(target), before);

  ModelConfig other = tiny_config();
  other.aggregation = Aggregation::kMaxPool;
  auto mp = make_model<float>(other, 3);
  const std::string mp_before = serialize_checkpoint(mp);
  try {
    load_state(mp, parse_checkpoint(serialize_checkpoint(source)));
    FAIL() << "expected a config mismatch";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kConfigMismatch);
  }
  EXPECT_EQ(serialize_checkpoint(mp), mp_before);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint<float>("/nonexistent/dir/m.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kIo);
  }
}

// --- cloud files and datasets ------------------------------------------------

TEST(CloudFile, RoundTripWithAndWithoutLabels) {
  CloudFile c;
  c.n = 2;
  c.values = {0.f, 1.f, 2.f, -3.5f, 1e-30f, 7.f};
  EXPECT_EQ(decode_cloud(encode_cloud(c)).values, c.values);
  EXPECT_FALSE(decode_cloud(encode_cloud(c)).has_labels);
  c.has_labels = true;
  c.labels = {4, 9};
  const auto back = decode_cloud(encode_cloud(c));
  EXPECT_TRUE(back.has_labels);
  EXPECT_EQ(back.labels, c.labels);
  EXPECT_EQ(encode_cloud(c).size(), 8u + 8 + 24 + 4 + 8);
}

TEST(CloudFile, RejectsMalformed) {
  CloudFile c;
  c.n = 2;
  c.values = {0, 1, 2, 3, 4, 5};
  c.has_labels = true;
  c.labels = {1, 2};
  const std::string bytes = encode_cloud(c);
  EXPECT_THROW(decode_cloud("FPTS0002" + bytes.substr(8)), FormatError);
  EXPECT_THROW(decode_cloud(bytes.substr(0, 20)), FormatError);
  EXPECT_THROW(decode_cloud(bytes.substr(0, bytes.size() - 2)), FormatError);
  EXPECT_THROW(decode_cloud(bytes + "zz"), FormatError);
  c.values.pop_back();
  EXPECT_THROW(encode_cloud(c), InvalidArgument);
}

TEST(Synthetic, DeterministicBalancedAndNormalized) {
  SyntheticSpec spec;
  spec.train_per_class = 6;
  spec.test_per_class = 3;
  spec.points = 32;
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  ASSERT_EQ(a.train.size(), 24u);
  ASSERT_EQ(a.test.size(), 12u);
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].cloud.xyz, b.train[i].cloud.xyz);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
    ++counts[a.train[i].label];
    double cx = 0, cy = 0, cz = 0, far = 0;
    const auto& pc = a.train[i].cloud;
    for (std::size_t p = 0; p < pc.size(); ++p) {
      cx += pc.xyz[3 * p];
      cy += pc.xyz[3 * p + 1];
      cz += pc.xyz[3 * p + 2];
      far = std::max(far, (double)std::hypot(pc.xyz[3 * p], pc.xyz[3 * p + 1], pc.xyz[3 * p + 2]));
    }
    EXPECT_NEAR(cx / pc.size(), 0, 1e-5);
    EXPECT_NEAR(cy / pc.size(), 0, 1e-5);
    EXPECT_NEAR(cz / pc.size(), 0, 1e-5);
    EXPECT_NEAR(far, 1.0, 1e-5);
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{6, 6, 6, 6}));
  // Train and test draw different clouds.
  EXPECT_NE(a.train[0].cloud.xyz, a.test[0].cloud.xyz);
  spec.seed = 2;
  EXPECT_NE(generate_synthetic(spec).train[0].cloud.xyz, a.train[0].cloud.xyz);
}

TEST(Synthetic, ShapePointsLieOnTheirSurfaces) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto s = sample_shape_point(ShapeKind::kSphere, rng);
    EXPECT_NEAR(std::hypot(s[0], s[1], s[2]), 1.0, 1e-12);
    const auto c = sample_shape_point(ShapeKind::kCube, rng);
    const double m = std::max({std::abs(c[0]), std::abs(c[1]), std::abs(c[2])});
    EXPECT_NEAR(m, 1.0, 1e-12);
  }
}

TEST(Synthetic, SegmentationLabelsFitCategories) {
  SegSyntheticSpec spec;
  spec.train_per_category = 3;
  spec.test_per_category = 2;
  spec.points = 40;
  const Dataset ds = generate_seg_synthetic(spec);
  EXPECT_EQ(ds.train.size(), 6u);
  for (const auto& s : ds.train) {
    ASSERT_EQ(s.point_labels.size(), 40u);
    const auto& parts = ds.category_parts[ds.category_of(s)];
    for (std::size_t p : parts)
      EXPECT_NE(std::count(s.point_labels.begin(), s.point_labels.end(), p), 0) << p;
  }
  EXPECT_EQ(generate_seg_synthetic(spec).train[4].cloud.xyz, ds.train[4].cloud.xyz);
}

TEST(Dataset, DirectoryRoundTrip) {
  SyntheticSpec spec;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.points = 16;
  const Dataset ds = generate_synthetic(spec);
  const auto dir = scratch("cls").string();
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.class_names, ds.class_names);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(back.train[i].label, ds.train[i].label);
    EXPECT_EQ(back.train[i].cloud.xyz, ds.train[i].cloud.xyz);
  }

  SegSyntheticSpec seg;
  seg.train_per_category = 1;
  seg.test_per_category = 1;
  seg.points = 12;
  const Dataset sd = generate_seg_synthetic(seg);
  const auto sdir = scratch("seg").string();
  save_dataset(sd, sdir);
  const Dataset sback = load_dataset(sdir);
  EXPECT_EQ(sback.task, Task::kSegment);
  EXPECT_EQ(sback.category_parts, sd.category_parts);
  EXPECT_EQ(sback.num_labels, 4u);
  EXPECT_EQ(sback.test[1].point_labels, sd.test[1].point_labels);
}

TEST(Dataset, RejectsOutOfRangeLabels) {
  const auto dir = scratch("bad");
  fs::create_directories(dir / "train");
  std::ofstream(dir / "meta.txt") << "task = classify\nclasses = a,b\n";
  CloudFile c;
  c.n = 1;
  c.values = {0, 0, 0};
  c.has_labels = true;
  c.labels = {5};
  write_cloud_file((dir / "train" / "000000.fpts").string(), c);
  EXPECT_THROW(load_dataset(dir.string()), FormatError);
}
