// On-disk formats: .vol.json/.vol.raw volumes, ASCII OBJ meshes, landmark JSON, path CSV,
// DED checkpoints and the MVN spec file. Raw payloads are little-endian, x-fastest.
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "larecon/core.hpp"
#include "larecon/ded.hpp"
#include "larecon/grid.hpp"
#include "larecon/mesh.hpp"
#include "larecon/pathgen.hpp"
#include "larecon/shapegen.hpp"

namespace larecon::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  require(out.good(), ErrorCode::Io, "write failed for " + p.string());
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "bad JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_bytes(p, j.dump(2) + "\n"); }

/// Shortest decimal that round-trips a double.
inline std::string fmt(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void append_f32_le(std::string& out, float f) {
  auto u = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
}

inline float read_f32_le(const std::string& in, std::size_t offset) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  return std::bit_cast<float>(u);
}

// ---- grid / volumes -------------------------------------------------------------

inline json grid_to_json(const GridSpec& g) {
  return {{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
          {"spacing_mm", g.spacing_mm},
          {"origin_mm", {g.origin_mm.x(), g.origin_mm.y(), g.origin_mm.z()}}};
}

inline GridSpec grid_from_json(const json& j) {
  try {
    const auto d = j.at("dims").get<std::vector<int>>();
    const auto o = j.at("origin_mm").get<std::vector<double>>();
    require(d.size() == 3 && o.size() == 3, ErrorCode::Io, "grid dims/origin need 3 entries");
    return GridSpec({d[0], d[1], d[2]}, j.at("spacing_mm").get<double>(), Point3(o[0], o[1], o[2]));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad grid record: ") + e.what());
  }
}

inline fs::path vol_header(const fs::path& base) { return fs::path(base.string() + ".vol.json"); }
inline fs::path vol_raw(const fs::path& base) { return fs::path(base.string() + ".vol.raw"); }

inline void write_volume(const fs::path& base, const OccupancyVolume& v) {
  json h = grid_to_json(v.grid);
  h["dtype"] = "u8";
  write_json(vol_header(base), h);
  write_bytes(vol_raw(base), std::string(v.data.begin(), v.data.end()));
}

inline void write_field(const fs::path& base, const ScalarField& f) {
  json h = grid_to_json(f.grid);
  h["dtype"] = "f32";
  write_json(vol_header(base), h);
  std::string raw;
  raw.reserve(4 * f.data.size());
  for (double v : f.data) append_f32_le(raw, static_cast<float>(v));
  write_bytes(vol_raw(base), raw);
}

/// Reads either dtype as a field (u8 becomes 0/1).
inline ScalarField read_field(const fs::path& base) {
  const json h = read_json(vol_header(base));
  const GridSpec g = grid_from_json(h);
  const std::string dtype = h.value("dtype", "");
  const std::string raw = read_text(vol_raw(base));
  ScalarField f(g);
  if (dtype == "u8") {
    require(raw.size() == g.size(), ErrorCode::Io, "raw size does not match header for " + base.string());
    for (std::size_t i = 0; i < g.size(); ++i) f.data[i] = static_cast<unsigned char>(raw[i]);
  } else if (dtype == "f32") {
    require(raw.size() == 4 * g.size(), ErrorCode::Io, "raw size does not match header for " + base.string());
    for (std::size_t i = 0; i < g.size(); ++i) f.data[i] = read_f32_le(raw, 4 * i);
  } else {
    throw Error(ErrorCode::Io, "unknown dtype '" + dtype + "' in " + vol_header(base).string());
  }
  return f;
}

inline OccupancyVolume read_volume(const fs::path& base) {
  const json h = read_json(vol_header(base));
  require(h.value("dtype", "") == "u8", ErrorCode::Io, "expected a u8 volume at " + base.string());
  const ScalarField f = read_field(base);
  OccupancyVolume v(f.grid);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    require(f.data[i] == 0.0 || f.data[i] == 1.0, ErrorCode::Io, "occupancy values must be 0 or 1");
    v.data[i] = f.data[i] != 0.0;
  }
  return v;
}

// ---- meshes ---------------------------------------------------------------------

inline void write_obj(const fs::path& p, const TriMesh& m) {
  std::string s;
  for (const auto& v : m.vertices()) s += "v " + fmt(v.x()) + " " + fmt(v.y()) + " " + fmt(v.z()) + "\n";
  for (const auto& f : m.faces())
    s += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " + std::to_string(f[2] + 1) + "\n";
  write_bytes(p, s);
}

/// Triangle-only OBJ; "f a/b/c" forms keep the position index, other records are ignored.
inline TriMesh read_obj(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<Point3> verts;
  std::vector<Face> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      require(static_cast<bool>(ls >> x >> y >> z), ErrorCode::Io, "bad vertex record in " + p.string());
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      require(idx.size() == 3, ErrorCode::Io, "only triangles are supported in " + p.string());
      faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  return TriMesh(std::move(verts), std::move(faces));
}

// ---- landmarks ------------------------------------------------------------------

inline json point_json(const Point3& p) { return {p.x(), p.y(), p.z()}; }

inline Point3 point_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 3, ErrorCode::Io, "point needs 3 coordinates");
  return {v[0], v[1], v[2]};
}

inline json landmarks_to_json(const Landmarks& l) {
  return {{"pv_ls", point_json(l.pv_ls)},
          {"pv_li", point_json(l.pv_li)},
          {"pv_ri", point_json(l.pv_ri)},
          {"pv_rs", point_json(l.pv_rs)},
          {"septum", point_json(l.septum)}};
}

inline Landmarks landmarks_from_json(const json& j) {
  try {
    return {point_from_json(j.at("pv_ls")), point_from_json(j.at("pv_li")), point_from_json(j.at("pv_ri")),
            point_from_json(j.at("pv_rs")), point_from_json(j.at("septum"))};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad landmarks record: ") + e.what());
  }
}

inline void write_landmarks(const fs::path& p, const Landmarks& l) { write_json(p, landmarks_to_json(l)); }
inline Landmarks read_landmarks(const fs::path& p) { return landmarks_from_json(read_json(p)); }

// ---- paths ----------------------------------------------------------------------

inline void write_path_csv(const fs::path& p, const PathCloud& path) {
  std::string s = "x_mm,y_mm,z_mm,section\n";
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Point3& q = path.points[i];
    s += fmt(q.x()) + "," + fmt(q.y()) + "," + fmt(q.z()) + "," + std::string(to_string(path.sections[i])) + "\n";
  }
  write_bytes(p, s);
}

/// Reads a path CSV. A missing section column reads as Augmented.
inline PathCloud read_path_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::Io, "empty path file " + p.string());
  require(line.rfind("x_mm,y_mm,z_mm", 0) == 0, ErrorCode::Io, "unexpected path header in " + p.string());
  PathCloud path;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cols.push_back(c);
    require(cols.size() == 3 || cols.size() == 4, ErrorCode::Io, "bad path row '" + line + "'");
    try {
      path.push({std::stod(cols[0]), std::stod(cols[1]), std::stod(cols[2])},
                cols.size() == 4 ? section_from_string(cols[3]) : Section::Augmented);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::Io, "bad number in path row '" + line + "'");
    }
  }
  return path;
}

// ---- MVN spec -------------------------------------------------------------------

inline json mvn_to_json(const MvnSpec& s) {
  json cov = json::array();
  for (Eigen::Index r = 0; r < s.covariance.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < s.covariance.cols(); ++c) row.push_back(s.covariance(r, c));
    cov.push_back(row);
  }
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"covariance", cov},
          {"accept_threshold", s.accept_threshold}};
}

inline MvnSpec mvn_from_json(const json& j) {
  try {
    MvnSpec s;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("covariance").get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(mean.size());
    s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), n);
    require(static_cast<Eigen::Index>(cov.size()) == n, ErrorCode::ShapeMismatch, "covariance row count");
    s.covariance.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      require(static_cast<Eigen::Index>(cov[r].size()) == n, ErrorCode::ShapeMismatch, "covariance column count");
      for (Eigen::Index c = 0; c < n; ++c) s.covariance(r, c) = cov[r][c];
    }
    s.accept_threshold = j.at("accept_threshold").get<double>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad MVN spec: ") + e.what());
  }
}

// ---- checkpoints ----------------------------------------------------------------

inline json loss_config_to_json(const ded::LossConfig& c) {
  return {{"ce_weight", c.ce_weight},         {"dice_weight", c.dice_weight},
          {"lambda_swr", c.lambda_swr},       {"use_boundary_mask", c.use_boundary_mask},
          {"mask_alpha", c.mask_alpha},       {"mask_sigma", c.mask_sigma},
          {"input_mask_prob", c.input_mask_prob}};
}

inline ded::LossConfig loss_config_from_json(const json& j, ded::LossConfig c = {}) {
  c.ce_weight = j.value("ce_weight", c.ce_weight);
  c.dice_weight = j.value("dice_weight", c.dice_weight);
  c.lambda_swr = j.value("lambda_swr", c.lambda_swr);
  c.use_boundary_mask = j.value("use_boundary_mask", c.use_boundary_mask);
  c.mask_alpha = j.value("mask_alpha", c.mask_alpha);
  c.mask_sigma = j.value("mask_sigma", c.mask_sigma);
  c.input_mask_prob = j.value("input_mask_prob", c.input_mask_prob);
  return c;
}

/// model.json lists tensors in declared order; model.raw holds them as float32
/// (column-major), followed by the running means and variances of each batch-norm layer.
inline void write_checkpoint(const fs::path& dir, const ded::DedModel& m, const ded::LossConfig& loss_cfg,
                             std::uint64_t seed) {
  json tensors = json::array();
  std::string raw;
  auto put = [&](const std::string& name, const ded::Matrix& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    for (Eigen::Index i = 0; i < t.size(); ++i) append_f32_le(raw, static_cast<float>(t.data()[i]));
  };
  for (std::size_t i = 0; i < m.params.tensors.size(); ++i) put(m.params.name(i), m.params.tensors[i]);
  for (std::size_t t = 0; t < m.running_mean.size(); ++t) {
    put("bn_running_mean" + std::to_string(t), m.running_mean[t]);
    put("bn_running_var" + std::to_string(t), m.running_var[t]);
  }
  json h = {{"layer_sizes", m.layer_sizes},
            {"grid", grid_to_json(m.grid)},
            {"bn_eps", m.bn_eps},
            {"bn_momentum", m.bn_momentum},
            {"loss", loss_config_to_json(loss_cfg)},
            {"seed", seed},
            {"dtype", "f32"},
            {"tensors", tensors}};
  std::error_code ec;
  fs::create_directories(dir, ec);
  write_json(dir / "model.json", h);
  write_bytes(dir / "model.raw", raw);
}

inline ded::DedModel read_checkpoint(const fs::path& dir) {
  const json h = read_json(dir / "model.json");
  const std::string raw = read_text(dir / "model.raw");
  try {
    ded::DedModel m;
    m.layer_sizes = h.at("layer_sizes").get<std::vector<int>>();
    m.grid = grid_from_json(h.at("grid"));
    m.bn_eps = h.at("bn_eps").get<double>();
    m.bn_momentum = h.at("bn_momentum").get<double>();
    require(m.depth() >= 1 && static_cast<std::size_t>(m.layer_sizes.front()) == m.grid.size(),
            ErrorCode::ShapeMismatch, "checkpoint layer sizes do not match its grid");
    // Shapes come from a freshly built model so a tampered header cannot reshape tensors.
    ded::DedModel shape = ded::make_model(m.grid, {m.layer_sizes.begin() + 1, m.layer_sizes.end()}, 0);
    m.params = shape.params;
    m.running_mean = shape.running_mean;
    m.running_var = shape.running_var;
    // Running statistics are read through matrix views of the stored vectors.
    std::vector<ded::Matrix> stats;
    for (std::size_t t = 0; t < m.running_mean.size(); ++t) {
      stats.push_back(m.running_mean[t]);
      stats.push_back(m.running_var[t]);
    }
    std::vector<ded::Matrix*> slots;
    for (auto& t : m.params.tensors) slots.push_back(&t);
    for (auto& t : stats) slots.push_back(&t);
    const auto& list = h.at("tensors");
    require(list.size() == slots.size(), ErrorCode::ShapeMismatch, "checkpoint tensor count mismatch");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      ded::Matrix* dst = slots[i];
      require(list[i].at("rows").get<Eigen::Index>() == dst->rows() &&
                  list[i].at("cols").get<Eigen::Index>() == dst->cols(),
              ErrorCode::ShapeMismatch, "checkpoint tensor " + list[i].value("name", "?") + " has the wrong shape");
      require(offset + 4 * static_cast<std::size_t>(dst->size()) <= raw.size(), ErrorCode::Io,
              "model.raw is truncated");
      for (Eigen::Index k = 0; k < dst->size(); ++k, offset += 4) dst->data()[k] = read_f32_le(raw, offset);
    }
    for (std::size_t t = 0; t < m.running_mean.size(); ++t) {
      m.running_mean[t] = stats[2 * t].col(0);
      m.running_var[t] = stats[2 * t + 1].col(0);
    }
    require(offset == raw.size(), ErrorCode::Io, "model.raw has trailing bytes");
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad checkpoint header: ") + e.what());
  }
}

inline ded::LossConfig read_checkpoint_loss(const fs::path& dir) {
  return loss_config_from_json(read_json(dir / "model.json").at("loss"));
}

}  // namespace larecon::io
