// Command line front end. Every subcommand is a pure function of
// (flags, config, seed, input files); re-runs produce bitwise identical
// output files.
//
// Exit codes: 0 success, 1 flag/usage error, 2 config or input validation
// error, 3 runtime failure (IO, numerics).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ocloc/checkpoint.hpp"
#include "ocloc/config.hpp"
#include "ocloc/metrics.hpp"
#include "ocloc/rng.hpp"
#include "ocloc/scene.hpp"
#include "ocloc/trainer.hpp"
#include "ocloc/viz.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ocloc;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "configuration file (defaults built in)");
  cmd->add_option("--set", opts.overrides, "override a config entry, section.key=value")
      ->take_all();
  cmd->add_option("--seed", opts.seed, "seed controlling all randomness of this command")
      ->each([&opts](const std::string&) { opts.seed_given = true; });
}

Config resolve_config(const CommonOpts& opts) {
  Config cfg = opts.config_path.empty() ? desk_defaults() : load_config(opts.config_path, false);
  for (const std::string& s : opts.overrides) {
    apply_override(cfg, s);
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

// Checkpoint-consuming commands restore the stored configuration; config
// flags would silently disagree with the stored parameter shapes.
void reject_config_flags(const CommonOpts& opts, const std::string& cmd) {
  if (!opts.config_path.empty() || !opts.overrides.empty()) {
    throw std::invalid_argument(cmd + " restores its configuration from the checkpoint; "
                                      "--config/--set are not applicable");
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw std::invalid_argument(what + " not found: " + path);
  }
}

uint64_t effective_seed(const CommonOpts& opts, uint64_t fallback) {
  return opts.seed_given ? opts.seed : fallback;
}

void check_scene_geometry(const Scene& sc, const ModelConfig& cfg) {
  if (sc.height != cfg.image_height || sc.width != cfg.image_width ||
      sc.channels != cfg.channels) {
    throw std::invalid_argument("scene geometry does not match the model configuration");
  }
}

int cmd_generate_data(const CommonOpts& opts, const std::string& out, int64_t count) {
  const Config cfg = resolve_config(opts);
  const uint64_t seed = effective_seed(opts, cfg.train.seed);
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(cfg.data, scene_seed(seed, i)));
  }
  write_dataset(scenes, cfg.data, out);
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data, const std::string& out,
              const std::string& resume, bool quiet) {
  require_file(data, "dataset");
  std::vector<Scene> scenes = read_dataset(data);
  std::string final_path;
  if (!resume.empty()) {
    reject_config_flags(opts, "train --resume");
    if (opts.seed_given) {
      throw std::invalid_argument("train --resume replays the stored rng state; "
                                  "--seed is not applicable");
    }
    require_file(resume, "checkpoint");
    const Checkpoint ck = load_checkpoint(resume);
    Trainer tr(ck, std::move(scenes));
    final_path = tr.run(out, !quiet);
  } else {
    Config cfg = resolve_config(opts);
    cfg.train.seed = effective_seed(opts, cfg.train.seed);
    Trainer tr(cfg, std::move(scenes));
    final_path = tr.run(out, !quiet);
  }
  std::cout << "final checkpoint: " << final_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
                 const std::string& mode_name, int64_t runs, const std::string& out) {
  reject_config_flags(opts, "evaluate");
  require_file(ckpt_path, "checkpoint");
  require_file(data, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Scene> scenes = read_dataset(data);
  const EvalMode mode = mode_name == "heuristic-count" ? EvalMode::kHeuristic : EvalMode::kOcloc;
  const uint64_t seed = effective_seed(opts, ck.config.train.seed);
  const EvalReport rep = evaluate(scenes, ck.params, ck.config.model, mode, runs, seed);
  std::cout << rep.to_text();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) {
      throw std::runtime_error("cannot open for writing: " + out);
    }
    f << rep.to_json();
  }
  return 0;
}

int cmd_decompose(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
                  int64_t scene_index, const std::string& out) {
  reject_config_flags(opts, "decompose");
  require_file(ckpt_path, "checkpoint");
  require_file(data, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Scene> scenes = read_dataset(data);
  if (scene_index >= static_cast<int64_t>(scenes.size())) {
    throw std::invalid_argument("scene index out of range");
  }
  const uint64_t seed = effective_seed(opts, ck.config.train.seed);
  const int64_t lo = scene_index < 0 ? 0 : scene_index;
  const int64_t hi = scene_index < 0 ? static_cast<int64_t>(scenes.size()) : scene_index + 1;
  for (int64_t i = lo; i < hi; ++i) {
    check_scene_geometry(scenes[i], ck.config.model);
    const uint64_t noise_seed = Rng::stream(seed, i).next_u64();
    const SceneDecomposition d =
        decompose_scene(scenes[i], ck.params, ck.config.model, noise_seed, false);
    write_decomposition(d, scenes[i], ck.config.model, out + "/scene_" + std::to_string(i));
  }
  std::cout << "decomposed " << (hi - lo) << " scene(s) into " << out << "\n";
  return 0;
}

int cmd_interpolate(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
                    int64_t scene_index, int64_t steps, bool sample_mode, const std::string& out) {
  reject_config_flags(opts, "interpolate-viewpoints");
  require_file(ckpt_path, "checkpoint");
  require_file(data, "dataset");
  Checkpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Scene> scenes = read_dataset(data);
  if (scene_index < 0 || scene_index >= static_cast<int64_t>(scenes.size())) {
    throw std::invalid_argument("scene index out of range");
  }
  const Scene& sc = scenes[scene_index];
  check_scene_geometry(sc, ck.config.model);
  const uint64_t seed = effective_seed(opts, ck.config.train.seed);
  const InterpolationResult r =
      interpolate_viewpoints(sc, ck.params, ck.config.model, steps, seed, sample_mode);
  write_interpolation(r, ck.config.model, out);
  std::cout << "wrote " << steps << " frames to " << out << "\n";
  return 0;
}

int cmd_sample(const CommonOpts& opts, const std::string& ckpt_path, int64_t count, int64_t views,
               const std::string& out) {
  reject_config_flags(opts, "sample-scenes");
  require_file(ckpt_path, "checkpoint");
  Checkpoint ck = load_checkpoint(ckpt_path);
  const uint64_t seed = effective_seed(opts, ck.config.train.seed);
  write_scene_samples(ck.params, ck.config.model, count, views, seed, out);
  std::cout << "wrote " << count << " sampled scene(s) to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view object-centric scene model"};
  app.require_subcommand(1);

  CommonOpts common;
  add_common(&app, common);

  // generate-data
  std::string gd_out;
  int64_t gd_count = 100;
  CLI::App* gd = app.add_subcommand("generate-data", "render a synthetic multi-view dataset");
  gd->add_option("--out", gd_out, "output dataset directory")->required();
  gd->add_option("--count", gd_count, "number of scenes")->check(CLI::PositiveNumber);
  add_common(gd, common);

  // train
  std::string tr_data, tr_out, tr_resume;
  bool tr_quiet = false;
  CLI::App* tr = app.add_subcommand("train", "optimize the model on a dataset");
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory for logs and checkpoints")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_flag("--quiet", tr_quiet, "suppress the per-step record on stdout");
  add_common(tr, common);

  // evaluate
  std::string ev_ckpt, ev_data, ev_out;
  std::string ev_mode = "ocloc";
  int64_t ev_runs = 5;
  CLI::App* ev = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--mode", ev_mode, "slot-count convention")
      ->check(CLI::IsMember({"ocloc", "heuristic-count"}));
  ev->add_option("--runs", ev_runs, "independent inference runs")->check(CLI::PositiveNumber);
  ev->add_option("--out", ev_out, "also write the report as JSON to this file");
  add_common(ev, common);

  // decompose
  std::string dc_ckpt, dc_data, dc_out;
  int64_t dc_scene = -1;
  CLI::App* dc = app.add_subcommand("decompose", "render per-slot scene decompositions");
  dc->add_option("--checkpoint", dc_ckpt, "model checkpoint")->required();
  dc->add_option("--data", dc_data, "dataset directory")->required();
  dc->add_option("--scene", dc_scene, "scene index (default: all scenes)");
  dc->add_option("--out", dc_out, "output directory")->required();
  add_common(dc, common);

  // interpolate-viewpoints
  std::string iv_ckpt, iv_data, iv_out;
  int64_t iv_scene = 0;
  int64_t iv_steps = 8;
  bool iv_sample = false;
  CLI::App* iv = app.add_subcommand("interpolate-viewpoints",
                                    "re-render a scene along a viewpoint path");
  iv->add_option("--checkpoint", iv_ckpt, "model checkpoint")->required();
  iv->add_option("--data", iv_data, "dataset directory")->required();
  iv->add_option("--scene", iv_scene, "scene index");
  iv->add_option("--steps", iv_steps, "number of frames")->check(CLI::PositiveNumber);
  iv->add_flag("--sample", iv_sample, "draw viewpoints from the prior instead of interpolating");
  iv->add_option("--out", iv_out, "output directory")->required();
  add_common(iv, common);

  // sample-scenes
  std::string ss_ckpt, ss_out;
  int64_t ss_count = 4;
  int64_t ss_views = 1;
  CLI::App* ss = app.add_subcommand("sample-scenes", "draw scenes from the generative model");
  ss->add_option("--checkpoint", ss_ckpt, "model checkpoint")->required();
  ss->add_option("--count", ss_count, "number of scenes")->check(CLI::PositiveNumber);
  ss->add_option("--views", ss_views, "views per scene")->check(CLI::PositiveNumber);
  ss->add_option("--out", ss_out, "output directory")->required();
  add_common(ss, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gd->parsed()) return cmd_generate_data(common, gd_out, gd_count);
    if (tr->parsed()) return cmd_train(common, tr_data, tr_out, tr_resume, tr_quiet);
    if (ev->parsed()) return cmd_evaluate(common, ev_ckpt, ev_data, ev_mode, ev_runs, ev_out);
    if (dc->parsed()) return cmd_decompose(common, dc_ckpt, dc_data, dc_scene, dc_out);
    if (iv->parsed()) {
      return cmd_interpolate(common, iv_ckpt, iv_data, iv_scene, iv_steps, iv_sample, iv_out);
    }
    if (ss->parsed()) return cmd_sample(common, ss_ckpt, ss_count, ss_views, ss_out);
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
