#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ocloc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model hyperparameters. Defaults are the desk-scale profile used by the
// bundled tests; clevr_defaults() holds the full-scale reference values.
struct ModelConfig {
  int64_t image_height = 32;
  int64_t image_width = 32;
  int64_t channels = 3;
  int64_t K = 4;
  int64_t T = 3;
  double alpha = 4.5;
  double sigma_x = 0.2;
  int64_t E_view = 4;
  int64_t E_bck = 8;
  int64_t E_obj = 32;
  int64_t D_ft = 32;
  int64_t D_vw = 8;
  int64_t D_at = 64;
  int64_t D_key = 32;
  int64_t D_val = 0;  // 0 resolves to D_vw + D_at
  int64_t dec_tok_obj = 64;
  int64_t dec_tok_bck = 32;
  int64_t dec_fc_obj = 256;
  int64_t dec_fc_bck = 128;
  int64_t dec_heads_obj = 4;
  int64_t dec_heads_bck = 4;
  int64_t ord_hidden = 128;
  int64_t head_hidden = 128;
  int64_t upd_hidden = 64;

  int64_t n_prime() const { return (image_height / 2) * (image_width / 2); }
  int64_t feat_h() const { return image_height / 2; }
  int64_t feat_w() const { return image_width / 2; }
  int64_t grid_h() const { return image_height / 8; }
  int64_t grid_w() const { return image_width / 8; }
  int64_t pixels() const { return image_height * image_width; }

  void finalize();
  void validate() const;
};

// Synthetic multi-view scene generator parameters. Geometry must match the
// model config the dataset is trained with; the trainer checks at load.
struct GeneratorSpec {
  int64_t height = 32;
  int64_t width = 32;
  int64_t channels = 3;
  int64_t min_objects = 2;
  int64_t max_objects = 4;
  int64_t views = 4;            // stored viewpoints per scene
  double min_size = 0.10;       // sprite half-extent, world units
  double max_size = 0.18;
  double min_scale = 0.80;      // camera window width (zoom)
  double max_scale = 1.00;
  double max_elevation = 0.05;  // vertical camera offset magnitude
  double shadow_dx = 0.030;     // fixed light direction, world units
  double shadow_dy = 0.045;
  double shadow_darkness = 0.45;

  void validate() const;
};

struct TrainConfig {
  int64_t batch_size = 4;
  int64_t total_steps = 20000;
  int64_t warmup_single_view_steps = 2000;
  double lr_init = 2e-4;
  double lr_decay_factor = 0.5;
  int64_t lr_decay_steps = 8000;
  double temperature_init = 2.0;
  double temperature_final = 0.5;
  int64_t temperature_anneal_steps = 10000;
  double grad_clip = 5.0;
  int64_t M_min = 1;
  int64_t M_max = 4;
  int64_t seed = 1234;
  int64_t checkpoint_interval = 5000;

  void validate() const;

  double lr_at(int64_t step) const;
  double temperature_at(int64_t step) const;
};

struct Config {
  ModelConfig model;
  GeneratorSpec data;
  TrainConfig train;

  void finalize() { model.finalize(); }
  void validate() const {
    model.validate();
    data.validate();
    train.validate();
  }
};

Config desk_defaults();
Config clevr_defaults();

// Flat key-value text: "[model]" / "[data]" / "[train]" headers,
// "key = value" lines, '#' comments. validated=false defers finalize() and
// validate() so --set overrides can apply first.
Config parse_config(const std::string& text, bool validated = true);
Config load_config(const std::string& path, bool validated = true);
std::string config_to_text(const Config& c);
void save_config(const Config& c, const std::string& path);

// "section.key=value", the --set override syntax.
void apply_override(Config& c, const std::string& spec);

}  // namespace ocloc
