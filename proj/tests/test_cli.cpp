#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "larecon/io.hpp"
#include "larecon/larecon.hpp"

using namespace larecon;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LARECON_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Every regular file under root, keyed by relative path, with its bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  return out;
}

const fs::path kRoot = fs::temp_directory_path() / "larecon_cli_test";

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small but complete dataset shared by the tests that only read it.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    io::write_json(kRoot / "small.json", {{"hidden", {8}}, {"batch_size", 2}, {"epochs", 2}});
    const RunResult g = run_cli("gen-shapes --config " + q(kRoot / "small.json") + " --out " + q(kRoot / "ds") +
                                " --n-train 3 --n-test 2 --seed 4");
    ASSERT_EQ(g.exit_code, 0) << g.output;
    const RunResult p = run_cli("gen-paths --out " + q(kRoot / "ds") + " --seed 4");
    ASSERT_EQ(p.exit_code, 0) << p.output;
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_F(CliTest, GenShapesIsReproducible) {
  const std::string args = " --n-train 2 --n-test 1 --seed 9";
  ASSERT_EQ(run_cli("gen-shapes --out " + q(kRoot / "r1") + args).exit_code, 0);
  ASSERT_EQ(run_cli("gen-shapes --out " + q(kRoot / "r2") + args).exit_code, 0);
  const auto a = snapshot(kRoot / "r1"), b = snapshot(kRoot / "r2");
  EXPECT_EQ(a, b);
  for (const char* f : {"manifest.json", "gen-shapes.config.json", "s0000/shape.vol.json", "s0000/shape.vol.raw",
                        "s0002/shape.obj", "s0002/landmarks.json", "mean/shape.obj", "mean/occupancy.vol.raw",
                        "mean/landmarks.json"})
    EXPECT_TRUE(a.count(f)) << f;
  const json m = json::parse(a.at("manifest.json"));
  EXPECT_EQ(m.at("samples").size(), 3u);
  EXPECT_EQ(m.at("samples")[2].at("split"), "test");

  ASSERT_EQ(run_cli("gen-shapes --out " + q(kRoot / "r3") + " --n-train 2 --n-test 1 --seed 10").exit_code, 0);
  EXPECT_NE(snapshot(kRoot / "r3").at("s0000/shape.vol.raw"), a.at("s0000/shape.vol.raw"));
}

TEST_F(CliTest, UnwritableOutputFailsWithoutManifest) {
  io::write_bytes(kRoot / "blocker", "not a directory");
  const fs::path out = kRoot / "blocker" / "ds";
  const RunResult r = run_cli("gen-shapes --out " + q(out) + " --n-train 1 --n-test 0");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("\"error\":\"Io\""), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out / "manifest.json"));
}

TEST_F(CliTest, BadArgumentsExitNonZero) {
  EXPECT_NE(run_cli("").exit_code, 0);
  EXPECT_NE(run_cli("gen-shapes").exit_code, 0);
  const RunResult r = run_cli("train --dataset " + q(kRoot / "ds") + " --out " + q(kRoot / "bad") + " --preset huge");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("InvalidArgument"), std::string::npos) << r.output;
  io::write_json(kRoot / "typo.json", {{"epoch", 3}});
  EXPECT_EQ(run_cli("gen-shapes --config " + q(kRoot / "typo.json") + " --out " + q(kRoot / "typo")).exit_code, 1);
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  io::write_json(kRoot / "seed5.json", {{"seed", 5}, {"n_train", 1}, {"n_test", 0}});
  ASSERT_EQ(run_cli("gen-shapes --config " + q(kRoot / "seed5.json") + " --out " + q(kRoot / "prec") + " --seed 7")
                .exit_code,
            0);
  const json c = io::read_json(kRoot / "prec" / "gen-shapes.config.json");
  EXPECT_EQ(c.at("seed"), 7);
  EXPECT_EQ(c.at("n_train"), 1);
}

TEST_F(CliTest, GenPathsWritesEverySample) {
  const json m = io::read_json(kRoot / "ds" / "paths_manifest.json");
  EXPECT_EQ(m.at("failures"), 0);
  for (const auto& row : m.at("samples")) {
    const fs::path d = kRoot / "ds" / row.at("id").get<std::string>();
    EXPECT_TRUE(row.at("ok").get<bool>());
    const PathCloud p = io::read_path_csv(d / "path.csv");
    EXPECT_EQ(p.size(), row.at("points").get<std::size_t>());
    const OccupancyVolume v = io::read_volume(d / "path");
    EXPECT_GT(v.count(), 0u);
    EXPECT_NO_THROW(io::read_landmarks(d / "projected_landmarks.json"));
  }
}

TEST_F(CliTest, GenPathsFlagsOnlyTheBrokenSample) {
  const fs::path ds = kRoot / "broken";
  fs::copy(kRoot / "ds", ds, fs::copy_options::recursive);
  io::write_bytes(io::vol_raw(ds / "s0001" / "shape"), "short");
  const RunResult r = run_cli("gen-paths --out " + q(ds) + " --seed 4");
  EXPECT_EQ(r.exit_code, 3) << r.output;
  EXPECT_NE(r.output.find("\"sample\":\"s0001\""), std::string::npos) << r.output;
  const json m = io::read_json(ds / "paths_manifest.json");
  EXPECT_EQ(m.at("failures"), 1);
  for (const auto& row : m.at("samples")) {
    const std::string id = row.at("id");
    EXPECT_EQ(row.at("ok").get<bool>(), id != "s0001") << id;
    EXPECT_EQ(fs::exists(ds / id / "path.csv"), id != "s0001") << id;
  }
  EXPECT_EQ(m.at("samples")[1].at("error"), "Io");
  // The healthy samples match the clean run.
  EXPECT_EQ(io::read_text(ds / "s0000" / "path.csv"), io::read_text(kRoot / "ds" / "s0000" / "path.csv"));
}

TEST_F(CliTest, TrainInferEvalExport) {
  const fs::path ds = kRoot / "ds";
  const std::string cfg = " --config " + q(kRoot / "small.json");
  ASSERT_EQ(run_cli("train --dataset " + q(ds) + " --out " + q(kRoot / "m0") + cfg + " --epochs 0").exit_code, 0);
  const ded::DedModel fresh = io::read_checkpoint(kRoot / "m0");
  EXPECT_EQ(fresh.layer_sizes, (std::vector<int>{24 * 24 * 24, 8}));
  EXPECT_EQ(io::read_json(kRoot / "m0" / "train_log.json").at("epochs").size(), 0u);

  const RunResult t = run_cli("train --dataset " + q(ds) + " --out " + q(kRoot / "m") + cfg + " --preset small");
  ASSERT_EQ(t.exit_code, 0) << t.output;
  const json log = io::read_json(kRoot / "m" / "train_log.json");
  EXPECT_EQ(log.at("epochs").size(), 2u);
  EXPECT_EQ(log.at("config").at("loss").at("lambda_swr"), 1e-5);
  EXPECT_EQ(io::read_checkpoint_loss(kRoot / "m").lambda_swr, 1e-5);

  for (const char* out : {"i1", "i2"})
    ASSERT_EQ(run_cli("infer --model " + q(kRoot / "m") + " --dataset " + q(ds) + " --out " + q(kRoot / out)).exit_code,
              0);
  EXPECT_EQ(snapshot(kRoot / "i1"), snapshot(kRoot / "i2"));
  const json im = io::read_json(kRoot / "i1" / "infer_manifest.json");
  EXPECT_EQ(im.at("samples"), json({"s0003", "s0004"}));

  const RunResult e = run_cli("eval --dataset " + q(ds) + " --recon " + q(kRoot / "i1") + " --out " + q(kRoot / "e"));
  ASSERT_EQ(e.exit_code, 0) << e.output;
  const json rep = io::read_json(kRoot / "e" / "report.json");
  EXPECT_EQ(rep.at("samples").size(), 2u);
  EXPECT_TRUE(fs::exists(kRoot / "e" / "report.csv"));

  const RunResult x = run_cli("export-mesh --volume " + q(ds / "s0000" / "shape") + " --out " + q(kRoot / "x"));
  ASSERT_EQ(x.exit_code, 0) << x.output;
  const TriMesh mesh = io::read_obj(kRoot / "x" / "shape.obj");
  EXPECT_TRUE(mesh.is_closed());
  EXPECT_GT(mesh.signed_volume(), 0.0);
  const TriMesh direct = marching_cubes(io::read_field(ds / "s0000" / "shape"), 0.5);
  EXPECT_EQ(mesh.vertices(), direct.vertices());
  EXPECT_EQ(mesh.faces(), direct.faces());
  ASSERT_EQ(run_cli("export-mesh --volume " + q(kRoot / "i1" / "s0003" / "recon_prob") + " --out " +
                    q(kRoot / "x") + " --iso 0.5")
                .exit_code,
            0);
  EXPECT_TRUE(fs::exists(kRoot / "x" / "recon_prob.obj"));
}

TEST_F(CliTest, EvalOfTruthIsPerfect) {
  const fs::path ds = kRoot / "ds", rec = kRoot / "truth_recon";
  for (const char* id : {"s0003", "s0004"}) {
    fs::create_directories(rec / id);
    io::write_volume(rec / id / "recon", io::read_volume(ds / id / "shape"));
  }
  io::write_json(rec / "infer_manifest.json", {{"samples", {"s0003", "s0004"}}});
  ASSERT_EQ(run_cli("eval --dataset " + q(ds) + " --recon " + q(rec) + " --out " + q(kRoot / "te")).exit_code, 0);
  const json rep = io::read_json(kRoot / "te" / "report.json");
  EXPECT_EQ(rep.at("dice"), 1.0);
  EXPECT_EQ(rep.at("avdist_mm"), 0.0);
  for (const auto& s : rep.at("samples")) EXPECT_EQ(s.at("dice"), 1.0);
}

TEST_F(CliTest, ExternalPathWithMeanLandmarksRegistersToIdentity) {
  const fs::path ds = kRoot / "ds";
  ASSERT_EQ(run_cli("train --dataset " + q(ds) + " --out " + q(kRoot / "me") + " --config " +
                    q(kRoot / "small.json") + " --epochs 0")
                .exit_code,
            0);
  const fs::path csv = ds / "s0000" / "path.csv";
  const RunResult r = run_cli("infer --model " + q(kRoot / "me") + " --path-csv " + q(csv) + " --landmarks " +
                              q(ds / "mean" / "landmarks.json") + " --mean-dir " + q(ds / "mean") + " --out " +
                              q(kRoot / "ext"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json ext = io::read_json(kRoot / "ext" / "infer_manifest.json").at("external");
  EXPECT_LT(ext.at("residual_mm").get<double>(), 1e-6);
  for (int a = 0; a < 3; ++a) {
    EXPECT_LT(std::abs(ext.at("translation")[a].get<double>()), 1e-6);
    for (int b = 0; b < 3; ++b) EXPECT_NEAR(ext.at("rotation")[a][b].get<double>(), a == b ? 1.0 : 0.0, 1e-6);
  }
  const PathCloud in = io::read_path_csv(csv), out = io::read_path_csv(kRoot / "ext" / "external" / "registered_path.csv");
  ASSERT_EQ(in.size(), out.size());
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_LT((in.points[i] - out.points[i]).norm(), 1e-6);
  EXPECT_TRUE(fs::exists(io::vol_header(kRoot / "ext" / "external" / "recon")));
  EXPECT_NE(run_cli("infer --model " + q(kRoot / "me") + " --path-csv " + q(csv) + " --out " + q(kRoot / "ext2"))
                .exit_code,
            0);
}
