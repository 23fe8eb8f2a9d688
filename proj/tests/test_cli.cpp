#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../tools/cli.hpp"

namespace fs = std::filesystem;
using namespace fatnet;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = fatnet::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fatnet_cli_" + std::string(::testing::UnitTest::GetInstance()
                                                                         ->current_test_info()
                                                                         ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(path("small.cfg")) << "widths = 8,8\nfinal_width = 16\nhead = 16\nk = 4\n"
                                        "tnet_widths = 8,16\ntnet_head = 8\nbatch_size = 4\n";
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  const CliResult r = invoke({"gradcheck", "--no-such-flag"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(invoke({"synth"}).code, 1);  // --out is required
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, RuntimeFailuresExitTwo) {
  EXPECT_EQ(invoke({"eval", "--checkpoint", path("missing.ckpt"), "--data", path("nodata")}).code, 2);
  EXPECT_EQ(invoke({"info", "--config", path("missing.cfg")}).code, 2);
  EXPECT_EQ(invoke({"info", "--set", "bogus=1"}).code, 2);
  EXPECT_EQ(invoke({"train", "--config", path("small.cfg")}).code, 2);  // no dataset
}

TEST_F(CliTest, InfoMatchesParameterCount) {
  const CliResult r = invoke({"info", "--config", path("small.cfg"), "--set", "classes=5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const RunConfig cfg = parse_run_config(slurp(path("small.cfg")) + "classes = 5\n");
  FatNet<float> model(cfg.model);
  EXPECT_NE(r.out.find("parameters = " + std::to_string(count_parameters(model)) + "\n"),
            std::string::npos);
  EXPECT_NE(r.out.find("widths = 8,8"), std::string::npos);
  EXPECT_NE(r.out.find("classes = 5"), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesAtSeedSeven) {
  const CliResult r = invoke({"gradcheck", "--seed", "7"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(invoke({"gradcheck", "--seed", "7", "--tolerance", "1e-12"}).code, 2);
}

TEST_F(CliTest, TrainThenEvalAgree) {
  ASSERT_EQ(invoke({"synth", "--out", path("data"), "--train", "3", "--test", "2", "--points", "24"})
                .code,
            0);
  const CliResult t = invoke({"train", "--config", path("small.cfg"), "--data", path("data"), "--epochs",
                     "3", "--out", path("m.ckpt"), "--history", path("h.csv")});
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string csv = slurp(path("h.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,train_loss,train_acc,val_acc");
  // Last row's final column.
  std::string last = csv.substr(0, csv.size() - 1);
  last = last.substr(last.rfind('\n') + 1);
  const double logged = std::stod(last.substr(last.rfind(',') + 1));

  const CliResult e = invoke({"eval", "--checkpoint", path("m.ckpt"), "--data", path("data")});
  ASSERT_EQ(e.code, 0) << e.err;
  char want[32];
  std::snprintf(want, sizeof want, "instance_acc %.6f\n", logged);
  EXPECT_EQ(e.out.substr(0, e.out.find('\n') + 1), want);

  // Same arguments, same bytes.
  ASSERT_EQ(invoke({"train", "--config", path("small.cfg"), "--data", path("data"), "--epochs", "3",
                 "--out", path("m2.ckpt"), "--history", path("h2.csv")})
                .code,
            0);
  EXPECT_EQ(slurp(path("m.ckpt")), slurp(path("m2.ckpt")));
  EXPECT_EQ(slurp(path("m.ckpt.best")), slurp(path("m2.ckpt.best")));
  EXPECT_EQ(csv, slurp(path("h2.csv")));

  const CliResult d = invoke({"dropout", "--checkpoint", path("m.ckpt"), "--data", path("data"), "--keep",
                     "24,12", "--out", path("d.csv")});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(slurp(path("d.csv")), d.out);
  EXPECT_EQ(std::count(d.out.begin(), d.out.end(), '\n'), 3);
  EXPECT_EQ(invoke({"dropout", "--checkpoint", path("m.ckpt"), "--data", path("data"), "--keep",
                 "25"})
                .code,
            2);
}

TEST_F(CliTest, AblateWritesOneRowPerVariant) {
  ASSERT_EQ(invoke({"synth", "--out", path("data"), "--train", "2", "--test", "1", "--points", "16"})
                .code,
            0);
  const CliResult r = invoke({"ablate", "--config", path("small.cfg"), "--data", path("data"),
                     "--variants", "gfa,mp", "--seeds", "1,2", "--epochs", "1", "--out",
                     path("a.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("a.csv")), r.out);
  std::istringstream lines(r.out);
  std::string header, gfa, mp, extra;
  std::getline(lines, header);
  std::getline(lines, gfa);
  std::getline(lines, mp);
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_EQ(header, "variant,parameters,median_acc,seed_1,seed_2");
  EXPECT_EQ(gfa.substr(0, 4), "gfa,");
  EXPECT_EQ(mp.substr(0, 3), "mp,");
  EXPECT_EQ(invoke({"ablate", "--config", path("small.cfg"), "--data", path("data"), "--variants",
                 "bogus"})
                .code,
            2);
}

TEST_F(CliTest, SampleOffMesh) {
  std::ofstream(path("tet.off")) << "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
                                    "3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
  const CliResult r = invoke({"sample", "--off", path("tet.off"), "--out", path("tet.fpts"), "--points",
                     "50", "--label", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const CloudFile c = read_cloud_file(path("tet.fpts"));
  EXPECT_EQ(c.n, 50u);
  EXPECT_EQ(c.labels, std::vector<std::uint32_t>{3});
  ASSERT_EQ(invoke({"sample", "--off", path("tet.off"), "--out", path("tet2.fpts"), "--points",
                 "50", "--label", "3"})
                .code,
            0);
  EXPECT_EQ(slurp(path("tet.fpts")), slurp(path("tet2.fpts")));
  std::ofstream(path("bad.off")) << "OFF\n4 4\n";
  EXPECT_EQ(invoke({"sample", "--off", path("bad.off"), "--out", path("x.fpts")}).code, 2);
}

TEST_F(CliTest, SegmentationPipeline) {
  ASSERT_EQ(invoke({"synth", "--out", path("seg"), "--task", "segment", "--train", "2", "--test",
                 "1", "--points", "24"})
                .code,
            0);
  ASSERT_EQ(invoke({"train", "--config", path("small.cfg"), "--data", path("seg"), "--epochs", "1",
                 "--out", path("s.ckpt")})
                .code,
            0);
  const CliResult e = invoke({"eval", "--checkpoint", path("s.ckpt"), "--data", path("seg")});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out.substr(0, 5), "miou ");
}
