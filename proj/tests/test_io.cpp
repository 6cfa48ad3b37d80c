#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "larecon/config.hpp"
#include "larecon/io.hpp"
#include "support.hpp"

using namespace larecon;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("larecon_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

float to_f32(double v) { return static_cast<float>(v); }

}  // namespace

TEST_F(IoTest, FmtRoundTripsDoubles) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 13 - 6);
    EXPECT_EQ(std::strtod(io::fmt(v).c_str(), nullptr), v);
  }
  EXPECT_EQ(io::fmt(0.5), "0.5");
  EXPECT_EQ(io::fmt(3.0), "3");
}

TEST_F(IoTest, VolumeAndFieldRoundTrip) {
  const GridSpec g({5, 3, 4}, 1.25, {-2.0, 0.5, 7.0});
  std::mt19937_64 rng(1);
  const OccupancyVolume v = oracle::random_volume(g, 0.4, rng);
  io::write_volume(dir / "v", v);
  const OccupancyVolume back = io::read_volume(dir / "v");
  EXPECT_EQ(back.data, v.data);
  EXPECT_EQ(back.grid.dims, g.dims);
  EXPECT_EQ(back.grid.spacing_mm, g.spacing_mm);
  EXPECT_EQ(back.grid.origin_mm, g.origin_mm);
  EXPECT_EQ(fs::file_size(io::vol_raw(dir / "v")), g.size());

  ScalarField f(g);
  std::normal_distribution<double> nd;
  for (auto& x : f.data) x = nd(rng);
  io::write_field(dir / "f", f);
  const ScalarField fb = io::read_field(dir / "f");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(fb.data[i], static_cast<double>(to_f32(f.data[i])));
  EXPECT_EQ(fs::file_size(io::vol_raw(dir / "f")), 4 * g.size());

  // u8 reads as a 0/1 field; f32 is not an occupancy volume.
  const ScalarField vf = io::read_field(dir / "v");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(vf.data[i], v.data[i] ? 1.0 : 0.0);
  EXPECT_THROW(io::read_volume(dir / "f"), Error);
}

TEST_F(IoTest, VolumeRejectsTruncatedRaw) {
  const GridSpec g({3, 3, 3}, 1.0);
  io::write_volume(dir / "v", OccupancyVolume(g));
  io::write_bytes(io::vol_raw(dir / "v"), std::string(26, '\0'));
  try {
    io::read_volume(dir / "v");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
  EXPECT_THROW(io::read_volume(dir / "missing"), Error);
}

TEST_F(IoTest, GridJsonRoundTrip) {
  const GridSpec g = GridSpec::centered_cube(17, 2.75);
  const GridSpec back = io::grid_from_json(io::grid_to_json(g));
  EXPECT_EQ(back.dims, g.dims);
  EXPECT_EQ(back.spacing_mm, g.spacing_mm);
  EXPECT_EQ(back.origin_mm, g.origin_mm);
}

TEST_F(IoTest, ObjRoundTripIsExact) {
  const TriMesh m = oracle::icosphere(Point3(0.1, -3.3, 2.0 / 3.0), 7.7, 2);
  io::write_obj(dir / "m.obj", m);
  const TriMesh back = io::read_obj(dir / "m.obj");
  EXPECT_EQ(back.vertices(), m.vertices());
  EXPECT_EQ(back.faces(), m.faces());
  EXPECT_TRUE(back.is_closed());

  io::write_bytes(dir / "slash.obj", "# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3//1\n");
  const TriMesh s = io::read_obj(dir / "slash.obj");
  ASSERT_EQ(s.faces().size(), 1u);
  EXPECT_EQ(s.faces()[0], (Face{0, 1, 2}));
  io::write_bytes(dir / "quad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n");
  EXPECT_THROW(io::read_obj(dir / "quad.obj"), Error);
}

TEST_F(IoTest, LandmarksAndPathRoundTrip) {
  const Landmarks l{{1.5, 2, 3}, {-4, 5.25, 6}, {7, -8, 9.125}, {0.1, 0.2, 0.3}, {1e-3, 2e5, -7}};
  io::write_landmarks(dir / "l.json", l);
  const Landmarks lb = io::read_landmarks(dir / "l.json");
  EXPECT_EQ(lb.pvs(), l.pvs());
  EXPECT_EQ(lb.septum, l.septum);
  io::write_json(dir / "bad.json", {{"pv_ls", {1, 2}}});
  EXPECT_THROW(io::read_landmarks(dir / "bad.json"), Error);

  PathCloud p;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 40; ++i) p.push({u(rng), u(rng), u(rng)}, static_cast<Section>(i % 5));
  io::write_path_csv(dir / "p.csv", p);
  const PathCloud pb = io::read_path_csv(dir / "p.csv");
  EXPECT_EQ(pb.points, p.points);
  EXPECT_EQ(pb.sections, p.sections);

  io::write_bytes(dir / "three.csv", "x_mm,y_mm,z_mm\r\n1,2,3\r\n\r\n4,5,6\r\n");
  const PathCloud three = io::read_path_csv(dir / "three.csv");
  ASSERT_EQ(three.size(), 2u);
  EXPECT_EQ(three.points[1], Point3(4, 5, 6));
  EXPECT_EQ(three.sections[0], Section::Augmented);
  io::write_bytes(dir / "nan.csv", "x_mm,y_mm,z_mm\n1,two,3\n");
  EXPECT_THROW(io::read_path_csv(dir / "nan.csv"), Error);
  io::write_bytes(dir / "hdr.csv", "a,b,c\n1,2,3\n");
  EXPECT_THROW(io::read_path_csv(dir / "hdr.csv"), Error);
}

TEST_F(IoTest, MvnSpecRoundTripAndShippedDefault) {
  const MvnSpec s = MvnSpec::default_spec();
  io::write_json(dir / "mvn.json", io::mvn_to_json(s));
  const MvnSpec back = io::mvn_from_json(io::read_json(dir / "mvn.json"));
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.covariance, s.covariance);
  EXPECT_EQ(back.accept_threshold, s.accept_threshold);

  const MvnSpec shipped = io::mvn_from_json(io::read_json(fs::path(LARECON_DATA_DIR) / "default_mvn.json"));
  EXPECT_EQ(shipped.mean, s.mean);
  EXPECT_EQ(shipped.covariance, s.covariance);
  EXPECT_EQ(shipped.accept_threshold, s.accept_threshold);

  nlohmann::json j = io::mvn_to_json(s);
  j["covariance"].erase(0);
  EXPECT_THROW(io::mvn_from_json(j), Error);
  j = io::mvn_to_json(s);
  j["covariance"][0][1] = 99.0;  // asymmetric
  EXPECT_THROW(io::mvn_from_json(j), Error);
}

TEST_F(IoTest, LossConfigRoundTripAndPartialOverlay) {
  ded::LossConfig c;
  c.ce_weight = 0.3;
  c.dice_weight = 0.7;
  c.lambda_swr = 2.5e-4;
  c.use_boundary_mask = false;
  c.mask_alpha = 9.0;
  c.mask_sigma = 2.25;
  c.input_mask_prob = 0.125;
  const ded::LossConfig b = io::loss_config_from_json(io::loss_config_to_json(c));
  EXPECT_EQ(io::loss_config_to_json(b), io::loss_config_to_json(c));

  const ded::LossConfig partial = io::loss_config_from_json({{"lambda_swr", 0.5}}, c);
  EXPECT_EQ(partial.lambda_swr, 0.5);
  EXPECT_EQ(partial.mask_sigma, c.mask_sigma);
}

TEST_F(IoTest, CheckpointReloadPredictsIdentically) {
  const GridSpec g({5, 4, 3}, 2.0);
  ded::DedModel m = ded::make_model(g, {7, 4}, 11);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (auto& t : m.params.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += nd(rng);
  for (std::size_t t = 0; t < m.running_mean.size(); ++t) {
    for (Eigen::Index i = 0; i < m.running_mean[t].size(); ++i) {
      m.running_mean[t][i] = nd(rng);
      m.running_var[t][i] = 0.5 + std::abs(nd(rng));
    }
  }
  // Stored precision is float32, so the reference model is rounded the same way.
  ded::DedModel rounded = m;
  for (auto& t : rounded.params.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = to_f32(t.data()[i]);
  for (std::size_t t = 0; t < rounded.running_mean.size(); ++t) {
    for (Eigen::Index i = 0; i < rounded.running_mean[t].size(); ++i) {
      rounded.running_mean[t][i] = to_f32(rounded.running_mean[t][i]);
      rounded.running_var[t][i] = to_f32(rounded.running_var[t][i]);
    }
  }
  ded::LossConfig lc;
  lc.lambda_swr = 3e-5;
  io::write_checkpoint(dir / "a", m, lc, 77);
  const ded::DedModel back = io::read_checkpoint(dir / "a");
  EXPECT_EQ(back.layer_sizes, m.layer_sizes);
  EXPECT_EQ(back.bn_eps, m.bn_eps);
  EXPECT_EQ(back.bn_momentum, m.bn_momentum);
  EXPECT_EQ(io::read_checkpoint_loss(dir / "a").lambda_swr, lc.lambda_swr);

  std::vector<OccupancyVolume> inputs;
  for (int i = 0; i < 4; ++i) inputs.push_back(oracle::random_volume(g, 0.3, rng));
  std::vector<const OccupancyVolume*> ptrs;
  for (const auto& v : inputs) ptrs.push_back(&v);
  const ded::Matrix x = ded::stack_volumes(ptrs);
  const ded::Matrix za = ded::predict(back, x), zb = ded::predict(rounded, x);
  EXPECT_EQ(za, zb);
  EXPECT_LT((za - ded::predict(m, x)).cwiseAbs().maxCoeff(), 1e-4);

  // A second save of the reloaded model is byte-identical.
  io::write_checkpoint(dir / "b", back, lc, 77);
  EXPECT_EQ(io::read_text(dir / "a" / "model.raw"), io::read_text(dir / "b" / "model.raw"));
  EXPECT_EQ(io::read_text(dir / "a" / "model.json"), io::read_text(dir / "b" / "model.json"));
}

TEST_F(IoTest, CheckpointRejectsDamage) {
  const GridSpec g({3, 3, 3}, 1.0);
  io::write_checkpoint(dir / "c", ded::make_model(g, {4}, 1), {}, 1);
  const std::string raw = io::read_text(dir / "c" / "model.raw");
  io::write_bytes(dir / "c" / "model.raw", raw.substr(0, raw.size() - 4));
  EXPECT_THROW(io::read_checkpoint(dir / "c"), Error);
  io::write_bytes(dir / "c" / "model.raw", raw + "xxxx");
  EXPECT_THROW(io::read_checkpoint(dir / "c"), Error);
  io::write_bytes(dir / "c" / "model.raw", raw);
  nlohmann::json h = io::read_json(dir / "c" / "model.json");
  h["layer_sizes"] = {27, 5, 27};
  io::write_json(dir / "c" / "model.json", h);
  EXPECT_THROW(io::read_checkpoint(dir / "c"), Error);
}

TEST_F(IoTest, ConfigOverlayAndUnknownKeys) {
  PipelineConfig c;
  apply_json(c, {{"epochs", 3}, {"loss", {{"lambda_swr", 0.25}}}, {"paths", {{"augment", {{"n", 2}}}}}});
  EXPECT_EQ(c.epochs, 3);
  EXPECT_EQ(c.loss.lambda_swr, 0.25);
  EXPECT_EQ(c.paths.augment.n, 2);
  EXPECT_EQ(c.paths.augment.sigma, PipelineConfig().paths.augment.sigma);
  EXPECT_THROW(apply_json(c, {{"epoch", 3}}), Error);
  EXPECT_THROW(apply_json(c, {{"epochs", "three"}}), Error);

  // The resolved dump reloads to the same configuration.
  PipelineConfig d;
  nlohmann::json dumped = to_json(c);
  apply_json(d, dumped);
  EXPECT_EQ(to_json(d), dumped);
}
