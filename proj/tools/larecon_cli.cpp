// larecon: dataset generation, path synthesis, training, inference, evaluation and mesh
// export as reproducible subcommands.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "larecon/config.hpp"
#include "larecon/io.hpp"
#include "larecon/larecon.hpp"
#include "larecon/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace larecon;

namespace {

constexpr int kExitError = 1;
constexpr int kExitSampleFailures = 3;

// Stable 64-bit FNV-1a, used to fingerprint the shape-generator spec in manifests.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CommonFlags {
  std::string config_file;
  std::string out;
  std::uint64_t seed = 0;
  int grid = 0;
  double spacing_mm = 0.0;
  double iso = 0.0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* grid_opt = nullptr;
  CLI::Option* spacing_opt = nullptr;
  CLI::Option* iso_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--out", out, "output directory")->required();
    seed_opt = app->add_option("--seed", seed, "random seed");
    grid_opt = app->add_option("--grid", grid, "voxels per axis");
    spacing_opt = app->add_option("--spacing-mm", spacing_mm, "voxel spacing in mm");
    iso_opt = app->add_option("--iso", iso, "iso value for mesh export");
  }

  /// defaults < config file < flags
  PipelineConfig resolve() const {
    PipelineConfig c;
    if (!config_file.empty()) apply_json(c, io::read_json(config_file));
    if (seed_opt->count()) c.seed = seed;
    if (grid_opt->count()) c.grid_n = grid;
    if (spacing_opt->count()) c.spacing_mm = spacing_mm;
    if (iso_opt->count()) c.iso = iso;
    return c;
  }
};

fs::path make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec && fs::is_directory(out), ErrorCode::Io, "cannot create output directory " + out);
  return fs::path(out);
}

void write_resolved_config(const fs::path& dir, const std::string& command, const PipelineConfig& c) {
  io::write_json(dir / (command + ".config.json"), to_json(c));
}

struct DatasetIndex {
  std::vector<std::string> ids;
  std::vector<std::string> splits;
  GridSpec grid;
};

DatasetIndex read_dataset_index(const fs::path& dataset) {
  const json m = io::read_json(dataset / "manifest.json");
  DatasetIndex idx;
  try {
    idx.grid = io::grid_from_json(m.at("grid"));
    for (const auto& s : m.at("samples")) {
      idx.ids.push_back(s.at("id").get<std::string>());
      idx.splits.push_back(s.at("split").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad dataset manifest: ") + e.what());
  }
  return idx;
}

MeanModel read_mean_model(const fs::path& mean_dir) {
  MeanModel m;
  m.volume = io::read_volume(mean_dir / "shape");
  m.mean = io::read_field(mean_dir / "occupancy");
  m.mesh = io::read_obj(mean_dir / "shape.obj");
  m.landmarks = io::read_landmarks(mean_dir / "landmarks.json");
  return m;
}

std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04d", i);
  return buf;
}

// ---- gen-shapes ------------------------------------------------------------------

int cmd_gen_shapes(const PipelineConfig& c, const fs::path& out) {
  const GridSpec grid = c.grid();
  const MvnSpec spec = load_shapegen_spec(c);
  const int n = c.n_train + c.n_test;
  const auto samples = generate_dataset(spec, grid, n, c.seed);

  json entries = json::array();
  std::vector<OccupancyVolume> train_vols;
  std::vector<Landmarks> train_lms;
  for (int i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const std::string id = sample_id(i);
    const std::string split = i < c.n_train ? "train" : "test";
    const fs::path dir = out / id;
    fs::create_directories(dir);
    io::write_volume(dir / "shape", s.atrium.volume);
    io::write_obj(dir / "shape.obj", s.atrium.mesh);
    io::write_landmarks(dir / "landmarks.json", s.atrium.landmarks);
    entries.push_back({{"id", id},
                       {"split", split},
                       {"sample_seed", s.sample_seed},
                       {"warp_seed", s.params.warp_seed},
                       {"attempts", s.attempts},
                       {"pv_radius_mm", s.params.pv_radius_mm}});
    if (i < c.n_train) {
      train_vols.push_back(s.atrium.volume);
      train_lms.push_back(s.atrium.landmarks);
    }
  }
  const MeanModel mean = build_mean_model(train_vols, train_lms);
  fs::create_directories(out / "mean");
  io::write_volume(out / "mean" / "shape", mean.volume);
  io::write_field(out / "mean" / "occupancy", mean.mean);
  io::write_obj(out / "mean" / "shape.obj", mean.mesh);
  io::write_landmarks(out / "mean" / "landmarks.json", mean.landmarks);

  write_resolved_config(out, "gen-shapes", c);
  // Written last: a manifest marks a complete dataset.
  io::write_json(out / "manifest.json", {{"spec_hash", hex64(fnv1a(io::mvn_to_json(spec).dump()))},
                                         {"seed", c.seed},
                                         {"grid", io::grid_to_json(grid)},
                                         {"n_train", c.n_train},
                                         {"n_test", c.n_test},
                                         {"samples", entries}});
  std::cout << "gen-shapes: " << n << " samples written to " << out.string() << "\n";
  return 0;
}

// ---- gen-paths -------------------------------------------------------------------

int cmd_gen_paths(const PipelineConfig& c, const fs::path& dataset) {
  const DatasetIndex idx = read_dataset_index(dataset);
  const MeanModel mean = read_mean_model(dataset / "mean");
  const std::size_t n = idx.ids.size();
  struct Outcome {
    std::optional<SynthesizedPath> path;
    std::string error_code, error;
  };
  std::vector<Outcome> results(n);
  const std::uint64_t path_seed = mix_seed(c.seed, 0x70617468);
  parallel_for(n, [&](std::size_t i) {
    try {
      const fs::path dir = dataset / idx.ids[i];
      const OccupancyVolume vol = io::read_volume(dir / "shape");
      require_same_grid(idx.grid, vol.grid);
      const TriMesh mesh = io::read_obj(dir / "shape.obj");
      results[i].path = synthesize_path(mean, vol, mesh, c.paths, mix_seed(path_seed, i));
    } catch (const Error& e) {
      results[i].error_code = std::string(to_string(e.code()));
      results[i].error = e.what();
    }
  });

  json rows = json::array();
  int failures = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path dir = dataset / idx.ids[i];
    json row = {{"id", idx.ids[i]}};
    // Stale outputs from an earlier run must not survive a failure.
    for (const char* f : {"path.csv", "path.vol.json", "path.vol.raw", "projected_landmarks.json"})
      fs::remove(dir / f);
    if (results[i].path) {
      const auto& p = *results[i].path;
      io::write_path_csv(dir / "path.csv", p.path);
      io::write_volume(dir / "path", p.volume.volume);
      io::write_landmarks(dir / "projected_landmarks.json", p.landmarks);
      row["ok"] = true;
      row["points"] = p.path.size();
      row["dropped"] = p.volume.dropped;
    } else {
      ++failures;
      row["ok"] = false;
      row["error"] = results[i].error_code;
      row["message"] = results[i].error;
      std::cerr << json{{"sample", idx.ids[i]}, {"error", results[i].error_code}, {"message", results[i].error}}.dump()
                << "\n";
    }
    rows.push_back(row);
  }
  const auto& a = c.paths.augment;
  write_resolved_config(dataset, "gen-paths", c);
  io::write_json(dataset / "paths_manifest.json",
                 {{"seed", c.seed},
                  {"alphas", c.paths.alphas},
                  {"augment", {{"n", a.n}, {"sigma", a.sigma}, {"s_f", a.s_f}, {"mu_s", a.mu_s}}},
                  {"septum_sigma_mm", c.paths.septum_sigma_mm},
                  {"pv_eps", c.paths.pv_eps},
                  {"failures", failures},
                  {"samples", rows}});
  std::cout << "gen-paths: " << (n - static_cast<std::size_t>(failures)) << "/" << n << " samples ok\n";
  return failures == 0 ? 0 : kExitSampleFailures;
}

// ---- train -----------------------------------------------------------------------

std::vector<ded::TrainingPair> load_pairs(const fs::path& dataset, const DatasetIndex& idx, const std::string& split,
                                          std::vector<std::string>* ids = nullptr) {
  std::vector<ded::TrainingPair> out;
  for (std::size_t i = 0; i < idx.ids.size(); ++i) {
    if (idx.splits[i] != split) continue;
    const fs::path dir = dataset / idx.ids[i];
    if (!fs::exists(io::vol_header(dir / "path"))) continue;  // failed path synthesis
    out.push_back({io::read_volume(dir / "path"), io::read_volume(dir / "shape")});
    if (ids) ids->push_back(idx.ids[i]);
  }
  return out;
}

int cmd_train(PipelineConfig c, const fs::path& dataset, const fs::path& out, const std::string& preset) {
  if (!preset.empty()) {
    const auto it = c.swr_presets.find(preset);
    require(it != c.swr_presets.end(), ErrorCode::InvalidArgument, "unknown SWR preset '" + preset + "'");
    c.loss.lambda_swr = it->second;
  }
  c.validate();
  const DatasetIndex idx = read_dataset_index(dataset);
  const auto train_set = load_pairs(dataset, idx, "train");
  const auto val_set = load_pairs(dataset, idx, "test");
  ded::TrainConfig tc;
  tc.hidden = c.hidden;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.seed = c.seed;
  tc.adam = c.adam;
  const ded::TrainResult r = ded::train(train_set, tc, c.loss, val_set);

  write_resolved_config(out, "train", c);
  io::write_checkpoint(out, r.model, c.loss, c.seed);
  json epochs = json::array();
  for (const auto& e : r.log) {
    json row = {{"epoch", e.epoch}, {"loss", e.loss}, {"ce", e.ce}, {"wdice", e.dice},
                {"swr", e.swr},     {"clamp_events", e.clamp_events}};
    row["validation_dice"] = e.validation_dice ? json(*e.validation_dice) : json(nullptr);
    epochs.push_back(row);
  }
  io::write_json(out / "train_log.json", {{"config", to_json(c)},
                                          {"preset", preset},
                                          {"n_train", train_set.size()},
                                          {"n_validation", val_set.size()},
                                          {"final_swr_penalty", ded::swr_penalty(r.model)},
                                          {"epochs", epochs}});
  std::cout << "train: " << c.epochs << " epochs on " << train_set.size() << " samples, lambda_swr "
            << c.loss.lambda_swr << "\n";
  return 0;
}

// ---- infer -----------------------------------------------------------------------

void write_reconstruction(const fs::path& dir, const ded::Reconstruction& r) {
  fs::create_directories(dir);
  io::write_field(dir / "recon_prob", r.probability);
  io::write_volume(dir / "recon", r.binary);
}

int cmd_infer(const PipelineConfig& c, const fs::path& model_dir, const std::string& dataset, const fs::path& out,
              const std::string& split, const std::string& path_csv, const std::string& landmarks_json,
              const std::string& mean_dir) {
  const ded::DedModel model = io::read_checkpoint(model_dir);
  json ids = json::array();
  if (!dataset.empty()) {
    const DatasetIndex idx = read_dataset_index(dataset);
    std::vector<const OccupancyVolume*> ptrs;
    std::vector<OccupancyVolume> inputs;
    std::vector<std::string> chosen;
    for (std::size_t i = 0; i < idx.ids.size(); ++i) {
      if (split != "all" && idx.splits[i] != split) continue;
      const fs::path p = fs::path(dataset) / idx.ids[i] / "path";
      if (!fs::exists(io::vol_header(p))) continue;
      inputs.push_back(io::read_volume(p));
      chosen.push_back(idx.ids[i]);
    }
    const auto recons = ded::infer_batch(model, inputs);
    for (std::size_t i = 0; i < recons.size(); ++i) {
      write_reconstruction(out / chosen[i], recons[i]);
      ids.push_back(chosen[i]);
    }
  }
  json external = nullptr;
  if (!path_csv.empty()) {
    require(!landmarks_json.empty(), ErrorCode::InvalidArgument, "--path-csv needs --landmarks");
    std::string mdir = mean_dir;
    if (mdir.empty() && !dataset.empty()) mdir = (fs::path(dataset) / "mean").string();
    require(!mdir.empty(), ErrorCode::InvalidArgument, "external paths need --mean-dir or --dataset");
    const Landmarks target = io::read_landmarks(fs::path(mdir) / "landmarks.json");
    const Landmarks source = io::read_landmarks(landmarks_json);
    const auto src = source.pvs(), dst = target.pvs();
    const std::vector<Point3> sv(src.begin(), src.end()), dv(dst.begin(), dst.end());
    const RigidTransform t = rigid_register(sv, dv);
    PathCloud path = io::read_path_csv(path_csv);
    for (auto& p : path.points) p = t.apply(p);
    const PathVolume pv = path_to_volume(path, model.grid);
    write_reconstruction(out / "external", ded::infer(model, pv.volume));
    io::write_path_csv(out / "external" / "registered_path.csv", path);
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
    external = {{"rotation", rot},
                {"translation", io::point_json(t.translation)},
                {"residual_mm", registration_residual(t, sv, dv)},
                {"dropped_points", pv.dropped}};
  }
  require(!ids.empty() || !external.is_null(), ErrorCode::EmptyDataset, "nothing to reconstruct");
  write_resolved_config(out, "infer", c);
  io::write_json(out / "infer_manifest.json", {{"split", split}, {"samples", ids}, {"external", external}});
  std::cout << "infer: " << ids.size() << " dataset samples" << (external.is_null() ? "" : " + external path")
            << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------------

int cmd_eval(const PipelineConfig& c, const fs::path& dataset, const fs::path& recon_dir, const fs::path& out) {
  const json manifest = io::read_json(recon_dir / "infer_manifest.json");
  std::vector<std::string> ids;
  for (const auto& id : manifest.at("samples")) ids.push_back(id.get<std::string>());
  std::vector<OccupancyVolume> recons, truths;
  for (const auto& id : ids) {
    recons.push_back(io::read_volume(recon_dir / id / "recon"));
    truths.push_back(io::read_volume(dataset / id / "shape"));
  }
  const OccupancyVolume mean = io::read_volume(dataset / "mean" / "shape");
  const MetricReport r = compare_to_mean_shape(recons, truths, mean, ids);

  auto test_json = [](const stats::PairedTTest& t) {
    return json{{"n", t.n},           {"mean_difference", t.mean_difference}, {"sd_difference", t.sd_difference},
                {"t", t.t},           {"p_one_tailed", t.p_one_tailed},       {"significant", t.significant}};
  };
  json rows = json::array();
  std::string csv = "id,dice,avdist_mm,baseline_dice,baseline_avdist_mm\n";
  for (const auto& s : r.per_sample) {
    rows.push_back({{"id", s.id},
                    {"dice", s.dice},
                    {"avdist_mm", s.avdist_mm},
                    {"baseline_dice", s.baseline_dice},
                    {"baseline_avdist_mm", s.baseline_avdist_mm}});
    csv += s.id + "," + io::fmt(s.dice) + "," + io::fmt(s.avdist_mm) + "," + io::fmt(s.baseline_dice) + "," +
           io::fmt(s.baseline_avdist_mm) + "\n";
  }
  write_resolved_config(out, "eval", c);
  io::write_json(out / "report.json", {{"samples", rows},
                                       {"dice", r.dice},
                                       {"avdist_mm", r.avdist_mm},
                                       {"baseline_dice", r.baseline_dice},
                                       {"baseline_avdist_mm", r.baseline_avdist_mm},
                                       {"dice_vs_baseline", test_json(r.dice_test)},
                                       {"avdist_vs_baseline", test_json(r.avdist_test)}});
  io::write_bytes(out / "report.csv", csv);
  std::cout << "eval: dice " << r.dice << " (mean shape " << r.baseline_dice << "), avdist " << r.avdist_mm
            << " mm (mean shape " << r.baseline_avdist_mm << " mm)\n";
  return 0;
}

// ---- export-mesh -----------------------------------------------------------------

int cmd_export_mesh(const PipelineConfig& c, const fs::path& volume_base, const fs::path& out) {
  const ScalarField f = io::read_field(volume_base);
  const TriMesh mesh = marching_cubes(f, c.iso);
  const std::string stem = volume_base.filename().string();
  io::write_obj(out / (stem + ".obj"), mesh);
  write_resolved_config(out, "export-mesh", c);
  std::cout << "export-mesh: " << mesh.vertex_count() << " vertices, " << mesh.faces().size() << " faces\n";
  return 0;
}

void print_error(const std::string& command, const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"command", command}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Left-atrium reconstruction from sparse catheter paths"};
  app.require_subcommand(1);

  CommonFlags shapes_flags, paths_flags, train_flags, infer_flags, eval_flags, export_flags;

  auto* gen_shapes = app.add_subcommand("gen-shapes", "generate synthetic atria and the mean shape");
  shapes_flags.attach(gen_shapes);
  int n_train = 0, n_test = 0;
  auto* n_train_opt = gen_shapes->add_option("--n-train", n_train, "training samples");
  auto* n_test_opt = gen_shapes->add_option("--n-test", n_test, "test samples");

  auto* gen_paths = app.add_subcommand("gen-paths", "synthesize catheter paths beside each sample");
  paths_flags.attach(gen_paths);
  std::string paths_dataset;
  gen_paths->add_option("--dataset", paths_dataset, "dataset directory (defaults to --out)");

  auto* train = app.add_subcommand("train", "train the encoder-decoder");
  train_flags.attach(train);
  std::string train_dataset, preset;
  int epochs = 0;
  double lambda_swr = 0.0;
  train->add_option("--dataset", train_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--preset", preset, "named lambda_swr preset (none, small, large)");
  auto* lambda_opt = train->add_option("--lambda-swr", lambda_swr, "spatial weight regularization strength");
  auto* epochs_opt = train->add_option("--epochs", epochs, "training epochs");

  auto* infer = app.add_subcommand("infer", "reconstruct shapes from path volumes");
  infer_flags.attach(infer);
  std::string model_dir, infer_dataset, split = "test", path_csv, landmarks_json, mean_dir;
  infer->add_option("--model", model_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--dataset", infer_dataset, "dataset directory");
  infer->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  infer->add_option("--path-csv", path_csv, "external path CSV")->check(CLI::ExistingFile);
  infer->add_option("--landmarks", landmarks_json, "landmarks JSON of the external path")->check(CLI::ExistingFile);
  infer->add_option("--mean-dir", mean_dir, "mean-shape directory for external paths");

  auto* eval = app.add_subcommand("eval", "score reconstructions against truth and the mean shape");
  eval_flags.attach(eval);
  std::string eval_dataset, recon_dir;
  eval->add_option("--dataset", eval_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--recon", recon_dir, "infer output directory")->required()->check(CLI::ExistingDirectory);

  auto* export_mesh = app.add_subcommand("export-mesh", "marching cubes of a volume to OBJ");
  export_flags.attach(export_mesh);
  std::string volume_base;
  export_mesh->add_option("--volume", volume_base, "volume path without the .vol.json suffix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (gen_shapes->parsed()) {
      PipelineConfig c = shapes_flags.resolve();
      if (n_train_opt->count()) c.n_train = n_train;
      if (n_test_opt->count()) c.n_test = n_test;
      c.validate();
      return cmd_gen_shapes(c, make_out_dir(shapes_flags.out));
    }
    if (gen_paths->parsed()) {
      PipelineConfig c = paths_flags.resolve();
      c.validate();
      const fs::path dataset = paths_dataset.empty() ? fs::path(paths_flags.out) : fs::path(paths_dataset);
      require(fs::exists(dataset / "manifest.json"), ErrorCode::Io,
              "no dataset manifest in " + dataset.string());
      return cmd_gen_paths(c, dataset);
    }
    if (train->parsed()) {
      PipelineConfig c = train_flags.resolve();
      if (epochs_opt->count()) c.epochs = epochs;
      if (lambda_opt->count()) {
        require(preset.empty(), ErrorCode::InvalidArgument, "--preset and --lambda-swr are exclusive");
        c.loss.lambda_swr = lambda_swr;
      }
      c.validate();
      return cmd_train(c, train_dataset, make_out_dir(train_flags.out), preset);
    }
    if (infer->parsed()) {
      PipelineConfig c = infer_flags.resolve();
      c.validate();
      require(!infer_dataset.empty() || !path_csv.empty(), ErrorCode::InvalidArgument,
              "infer needs --dataset or --path-csv");
      return cmd_infer(c, model_dir, infer_dataset, make_out_dir(infer_flags.out), split, path_csv, landmarks_json,
                       mean_dir);
    }
    if (eval->parsed()) {
      PipelineConfig c = eval_flags.resolve();
      c.validate();
      return cmd_eval(c, eval_dataset, recon_dir, make_out_dir(eval_flags.out));
    }
    if (export_mesh->parsed()) {
      PipelineConfig c = export_flags.resolve();
      c.validate();
      return cmd_export_mesh(c, volume_base, make_out_dir(export_flags.out));
    }
  } catch (const Error& e) {
    print_error(command, std::string(to_string(e.code())), e.what());
    return kExitError;
  } catch (const std::exception& e) {
    print_error(command, "Internal", e.what());
    return kExitError;
  }
  return kExitError;
}
