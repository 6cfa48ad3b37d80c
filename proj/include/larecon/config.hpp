// Pipeline configuration: built-in defaults, overlaid by a JSON file, overlaid by flags.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "larecon/ded.hpp"
#include "larecon/grid.hpp"
#include "larecon/io.hpp"
#include "larecon/pipeline.hpp"

namespace larecon {

struct PipelineConfig {
  int grid_n = 24;
  double spacing_mm = 5.0;
  std::string shapegen_spec;  // empty: built-in default MVN
  PathSettings paths;
  ded::LossConfig loss;
  ded::AdamConfig adam{.lr = 3e-3};
  std::vector<int> hidden{64, 64};
  int epochs = 50;
  int batch_size = 20;
  std::uint64_t seed = 1;
  int n_train = 200;
  int n_test = 50;
  double iso = 0.5;
  // Named lambda_swr values selectable at train time.
  std::map<std::string, double> swr_presets{{"none", 0.0}, {"small", 1e-5}, {"large", 1e-4}};

  GridSpec grid() const { return GridSpec::centered_cube(grid_n, spacing_mm); }

  void validate() const {
    grid().validate();
    loss.validate();
    paths.augment.validate();
    require(epochs >= 0 && batch_size >= 1 && n_train >= 1 && n_test >= 0, ErrorCode::InvalidArgument,
            "epochs, batch size and dataset sizes must be non-negative (train >= 1)");
    require(!hidden.empty(), ErrorCode::InvalidArgument, "need at least one hidden layer");
    for (int h : hidden) require(h >= 1, ErrorCode::InvalidArgument, "hidden sizes must be >= 1");
    for (double a : paths.alphas) require(a >= 0.0, ErrorCode::InvalidArgument, "path alphas must be >= 0");
    require(paths.septum_sigma_mm >= 0.0 && paths.pv_eps > 0.0, ErrorCode::InvalidArgument,
            "septum sigma must be >= 0 and PV eps > 0");
    require(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 &&
                adam.eps > 0.0,
            ErrorCode::InvalidArgument, "invalid optimizer settings");
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  using nlohmann::json;
  const auto& a = c.paths.augment;
  return {
      {"grid", io::grid_to_json(c.grid())},
      {"grid_n", c.grid_n},
      {"spacing_mm", c.spacing_mm},
      {"shapegen_spec", c.shapegen_spec},
      {"paths",
       {{"alphas", c.paths.alphas},
        {"augment", {{"n", a.n}, {"sigma", a.sigma}, {"s_f", a.s_f}, {"mu_s", a.mu_s}}},
        {"septum_sigma_mm", c.paths.septum_sigma_mm},
        {"pv_eps", c.paths.pv_eps}}},
      {"loss", io::loss_config_to_json(c.loss)},
      {"optimizer", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"hidden", c.hidden},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"iso", c.iso},
      {"swr_presets", c.swr_presets},
  };
}

/// Overlays the keys present in j onto c. Unknown keys are rejected so typos surface.
inline void apply_json(PipelineConfig& c, const nlohmann::json& j) {
  static const std::vector<std::string> known{"grid",   "grid_n", "spacing_mm", "shapegen_spec", "paths",
                                              "loss",   "optimizer", "hidden",  "epochs",        "batch_size",
                                              "seed",   "n_train",   "n_test",  "iso",           "swr_presets"};
  try {
    require(j.is_object(), ErrorCode::InvalidArgument, "config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      bool ok = false;
      for (const auto& n : known) ok = ok || n == k;
      require(ok, ErrorCode::InvalidArgument, "unknown config key '" + k + "'");
    }
    c.grid_n = j.value("grid_n", c.grid_n);
    c.spacing_mm = j.value("spacing_mm", c.spacing_mm);
    c.shapegen_spec = j.value("shapegen_spec", c.shapegen_spec);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      if (p.contains("alphas")) c.paths.alphas = p["alphas"].get<std::array<double, 4>>();
      if (p.contains("augment")) {
        const auto& a = p["augment"];
        auto& ca = c.paths.augment;
        ca.n = a.value("n", ca.n);
        ca.sigma = a.value("sigma", ca.sigma);
        ca.s_f = a.value("s_f", ca.s_f);
        ca.mu_s = a.value("mu_s", ca.mu_s);
      }
      c.paths.septum_sigma_mm = p.value("septum_sigma_mm", c.paths.septum_sigma_mm);
      c.paths.pv_eps = p.value("pv_eps", c.paths.pv_eps);
    }
    if (j.contains("loss")) c.loss = io::loss_config_from_json(j["loss"], c.loss);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      c.adam.lr = o.value("lr", c.adam.lr);
      c.adam.beta1 = o.value("beta1", c.adam.beta1);
      c.adam.beta2 = o.value("beta2", c.adam.beta2);
      c.adam.eps = o.value("eps", c.adam.eps);
    }
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<int>>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.iso = j.value("iso", c.iso);
    if (j.contains("swr_presets")) {
      for (const auto& [k, v] : j["swr_presets"].items()) c.swr_presets[k] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad config value: ") + e.what());
  }
}

inline MvnSpec load_shapegen_spec(const PipelineConfig& c) {
  if (c.shapegen_spec.empty()) return MvnSpec::default_spec();
  return io::mvn_from_json(io::read_json(c.shapegen_spec));
}

}  // namespace larecon
