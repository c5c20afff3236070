#include "ocloc/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace ocloc {
namespace {

struct Field {
  const char* section;
  const char* key;
  enum Kind { I64, F64 } kind;
  void* ptr;
};

std::vector<Field> fields(Config& c) {
  ModelConfig& m = c.model;
  GeneratorSpec& d = c.data;
  TrainConfig& t = c.train;
  return {
      {"model", "image_height", Field::I64, &m.image_height},
      {"model", "image_width", Field::I64, &m.image_width},
      {"model", "channels", Field::I64, &m.channels},
      {"model", "K", Field::I64, &m.K},
      {"model", "T", Field::I64, &m.T},
      {"model", "alpha", Field::F64, &m.alpha},
      {"model", "sigma_x", Field::F64, &m.sigma_x},
      {"model", "E_view", Field::I64, &m.E_view},
      {"model", "E_bck", Field::I64, &m.E_bck},
      {"model", "E_obj", Field::I64, &m.E_obj},
      {"model", "D_ft", Field::I64, &m.D_ft},
      {"model", "D_vw", Field::I64, &m.D_vw},
      {"model", "D_at", Field::I64, &m.D_at},
      {"model", "D_key", Field::I64, &m.D_key},
      {"model", "D_val", Field::I64, &m.D_val},
      {"model", "dec_tok_obj", Field::I64, &m.dec_tok_obj},
      {"model", "dec_tok_bck", Field::I64, &m.dec_tok_bck},
      {"model", "dec_fc_obj", Field::I64, &m.dec_fc_obj},
      {"model", "dec_fc_bck", Field::I64, &m.dec_fc_bck},
      {"model", "dec_heads_obj", Field::I64, &m.dec_heads_obj},
      {"model", "dec_heads_bck", Field::I64, &m.dec_heads_bck},
      {"model", "ord_hidden", Field::I64, &m.ord_hidden},
      {"model", "head_hidden", Field::I64, &m.head_hidden},
      {"model", "upd_hidden", Field::I64, &m.upd_hidden},
      {"data", "height", Field::I64, &d.height},
      {"data", "width", Field::I64, &d.width},
      {"data", "channels", Field::I64, &d.channels},
      {"data", "min_objects", Field::I64, &d.min_objects},
      {"data", "max_objects", Field::I64, &d.max_objects},
      {"data", "views", Field::I64, &d.views},
      {"data", "min_size", Field::F64, &d.min_size},
      {"data", "max_size", Field::F64, &d.max_size},
      {"data", "min_scale", Field::F64, &d.min_scale},
      {"data", "max_scale", Field::F64, &d.max_scale},
      {"data", "max_elevation", Field::F64, &d.max_elevation},
      {"data", "shadow_dx", Field::F64, &d.shadow_dx},
      {"data", "shadow_dy", Field::F64, &d.shadow_dy},
      {"data", "shadow_darkness", Field::F64, &d.shadow_darkness},
      {"train", "batch_size", Field::I64, &t.batch_size},
      {"train", "total_steps", Field::I64, &t.total_steps},
      {"train", "warmup_single_view_steps", Field::I64, &t.warmup_single_view_steps},
      {"train", "lr_init", Field::F64, &t.lr_init},
      {"train", "lr_decay_factor", Field::F64, &t.lr_decay_factor},
      {"train", "lr_decay_steps", Field::I64, &t.lr_decay_steps},
      {"train", "temperature_init", Field::F64, &t.temperature_init},
      {"train", "temperature_final", Field::F64, &t.temperature_final},
      {"train", "temperature_anneal_steps", Field::I64, &t.temperature_anneal_steps},
      {"train", "grad_clip", Field::F64, &t.grad_clip},
      {"train", "M_min", Field::I64, &t.M_min},
      {"train", "M_max", Field::I64, &t.M_max},
      {"train", "seed", Field::I64, &t.seed},
      {"train", "checkpoint_interval", Field::I64, &t.checkpoint_interval},
  };
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) {
    return "";
  }
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void set_field(const Field& f, const std::string& raw) {
  const std::string full = std::string(f.section) + "." + f.key;
  try {
    size_t pos = 0;
    if (f.kind == Field::I64) {
      const int64_t v = std::stoll(raw, &pos);
      if (pos != raw.size()) {
        throw std::invalid_argument("trailing characters");
      }
      *static_cast<int64_t*>(f.ptr) = v;
    } else {
      const double v = std::stod(raw, &pos);
      if (pos != raw.size()) {
        throw std::invalid_argument("trailing characters");
      }
      *static_cast<double*>(f.ptr) = v;
    }
  } catch (const std::exception&) {
    throw ConfigError(full + ": cannot parse value '" + raw + "'");
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) {
    throw ConfigError(msg);
  }
}

}  // namespace

void ModelConfig::finalize() {
  if (D_val == 0) {
    D_val = D_vw + D_at;
  }
}

void ModelConfig::validate() const {
  require(image_height >= 8 && image_height % 8 == 0,
          "model.image_height: must be a positive multiple of 8");
  require(image_width >= 8 && image_width % 8 == 0,
          "model.image_width: must be a positive multiple of 8");
  require(channels >= 1, "model.channels: must be >= 1");
  require(K >= 1, "model.K: must be >= 1");
  require(T >= 1, "model.T: must be >= 1");
  require(alpha > 0.0, "model.alpha: must be > 0");
  require(sigma_x > 0.0, "model.sigma_x: must be > 0");
  require(E_view >= 1, "model.E_view: must be >= 1");
  require(E_bck >= 1, "model.E_bck: must be >= 1");
  require(E_obj >= 1, "model.E_obj: must be >= 1");
  require(D_ft >= 1, "model.D_ft: must be >= 1");
  require(D_vw >= 1, "model.D_vw: must be >= 1");
  require(D_at >= 1, "model.D_at: must be >= 1");
  require(D_key >= 1, "model.D_key: must be >= 1");
  require(D_val == D_vw + D_at, "model.D_val: must equal D_vw + D_at");
  require(dec_tok_obj >= 4 && dec_tok_obj % dec_heads_obj == 0 && dec_tok_obj % 4 == 0,
          "model.dec_tok_obj: must be a positive multiple of 4 and of dec_heads_obj");
  require(dec_tok_bck >= 4 && dec_tok_bck % dec_heads_bck == 0 && dec_tok_bck % 4 == 0,
          "model.dec_tok_bck: must be a positive multiple of 4 and of dec_heads_bck");
  require(dec_fc_obj >= 1, "model.dec_fc_obj: must be >= 1");
  require(dec_fc_bck >= 1, "model.dec_fc_bck: must be >= 1");
  require(ord_hidden >= 1, "model.ord_hidden: must be >= 1");
  require(head_hidden >= 1, "model.head_hidden: must be >= 1");
  require(upd_hidden >= 1, "model.upd_hidden: must be >= 1");
}

void GeneratorSpec::validate() const {
  require(height >= 8, "data.height: must be >= 8");
  require(width >= 8, "data.width: must be >= 8");
  require(channels >= 1, "data.channels: must be >= 1");
  require(min_objects >= 0, "data.min_objects: must be >= 0");
  require(max_objects >= min_objects && max_objects >= 1,
          "data.max_objects: must be >= max(1, min_objects)");
  require(views >= 1, "data.views: must be >= 1");
  require(min_size > 0.0, "data.min_size: must be > 0");
  require(max_size >= min_size && max_size < 0.5, "data.max_size: must be in [min_size, 0.5)");
  require(min_scale > 0.0, "data.min_scale: must be > 0");
  require(max_scale >= min_scale && max_scale <= 1.0,
          "data.max_scale: must be in [min_scale, 1]");
  require(max_elevation >= 0.0, "data.max_elevation: must be >= 0");
  require(shadow_darkness > 0.0 && shadow_darkness <= 1.0,
          "data.shadow_darkness: must be in (0, 1]");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "train.batch_size: must be >= 1");
  require(total_steps >= 1, "train.total_steps: must be >= 1");
  require(warmup_single_view_steps >= 0, "train.warmup_single_view_steps: must be >= 0");
  require(lr_init > 0.0, "train.lr_init: must be > 0");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0,
          "train.lr_decay_factor: must be in (0, 1]");
  require(lr_decay_steps >= 1, "train.lr_decay_steps: must be >= 1");
  require(temperature_init > 0.0, "train.temperature_init: must be > 0");
  require(temperature_final > 0.0, "train.temperature_final: must be > 0");
  require(temperature_anneal_steps >= 1, "train.temperature_anneal_steps: must be >= 1");
  require(grad_clip > 0.0, "train.grad_clip: must be > 0");
  require(M_min >= 1, "train.M_min: must be >= 1");
  require(M_max >= M_min, "train.M_max: must be >= M_min");
  require(checkpoint_interval >= 1, "train.checkpoint_interval: must be >= 1");
}

double TrainConfig::lr_at(int64_t step) const {
  return lr_init * std::pow(lr_decay_factor, static_cast<double>(step / lr_decay_steps));
}

double TrainConfig::temperature_at(int64_t step) const {
  if (step >= temperature_anneal_steps) {
    return temperature_final;
  }
  const double f = static_cast<double>(step) / static_cast<double>(temperature_anneal_steps);
  return temperature_init + f * (temperature_final - temperature_init);
}

Config desk_defaults() {
  Config c;
  c.finalize();
  return c;
}

Config clevr_defaults() {
  Config c;
  c.model.image_height = 128;
  c.model.image_width = 128;
  c.model.K = 7;
  c.model.E_obj = 64;
  c.model.D_ft = 64;
  c.model.D_at = 128;
  c.model.D_key = 64;
  c.model.dec_tok_obj = 128;
  c.model.dec_tok_bck = 64;
  c.model.dec_fc_obj = 1024;
  c.model.dec_fc_bck = 256;
  c.model.dec_heads_obj = 8;
  c.model.dec_heads_bck = 4;
  c.model.ord_hidden = 512;
  c.model.head_hidden = 512;
  c.model.upd_hidden = 128;
  c.data.height = 128;
  c.data.width = 128;
  c.data.max_objects = 6;
  c.data.views = 8;
  c.train.M_max = 8;
  c.train.batch_size = 4;
  c.train.lr_init = 1e-4;
  c.train.total_steps = 400000;
  c.train.warmup_single_view_steps = 100000;
  c.train.lr_decay_steps = 100000;
  c.model.finalize();
  return c;
}

Config parse_config(const std::string& text, bool validated) {
  Config c;
  auto fs = fields(c);
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "data" && section != "train") {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : fs) {
      if (section == f.section && key == f.key) {
        set_field(f, raw);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError(section + "." + key + ": unknown key");
    }
  }
  if (validated) {
    c.finalize();
    c.validate();
  }
  return c;
}

Config load_config(const std::string& path, bool validated) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw ConfigError("cannot open config file: " + path);
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), validated);
}

std::string config_to_text(const Config& c) {
  Config copy = c;
  auto fs = fields(copy);
  std::ostringstream out;
  const char* cur = "";
  for (const auto& f : fs) {
    if (std::string(cur) != f.section) {
      if (cur[0] != '\0') {
        out << "\n";
      }
      out << "[" << f.section << "]\n";
      cur = f.section;
    }
    out << f.key << " = ";
    if (f.kind == Field::I64) {
      out << *static_cast<int64_t*>(f.ptr);
    } else {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", *static_cast<double*>(f.ptr));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

void save_config(const Config& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw ConfigError("cannot write config file: " + path);
  }
  f << config_to_text(c);
}

void apply_override(Config& c, const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects section.key=value, got '" + spec + "'");
  }
  const std::string path = trim(spec.substr(0, eq));
  const std::string raw = trim(spec.substr(eq + 1));
  const size_t dot = path.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("--set expects section.key=value, got '" + spec + "'");
  }
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  auto fs = fields(c);
  for (const auto& f : fs) {
    if (section == f.section && key == f.key) {
      set_field(f, raw);
      return;
    }
  }
  throw ConfigError(path + ": unknown key");
}

}  // namespace ocloc
