#include "anisdf/config.hpp"

#include <functional>
#include <map>
#include <sstream>

namespace anisdf {

void TrainConfig::validate() const {
  if (rays_per_batch < 1 || total_steps < 1 || n_chunks < 1) throw std::invalid_argument("TrainConfig: counts must be positive");
  if (learning_rate <= 0 || learning_rate_final <= 0) throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (image_downscale < 1) throw std::invalid_argument("TrainConfig: image_downscale must be >= 1");
  if (eikonal_points < 2) throw std::invalid_argument("TrainConfig: eikonal_points must be >= 2");
  if (curvature_eps <= 0) throw std::invalid_argument("TrainConfig: curvature_eps must be positive");
  loss.validate();
  grid.validate();
  if (render.n_uniform < 2) throw std::invalid_argument("TrainConfig: need at least two uniform samples");
}

namespace {

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& s) { return std::stod(s); }
int parse_int(const std::string& s) { return std::stoi(s); }
bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("bad bool: " + s);
}

// ordered so config_to_text output is stable
const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add_str = [&](const char* key, std::string TrainConfig::* mem) {
      t.push_back({key, {[mem](const TrainConfig& c) { return c.*mem; },
                         [mem](TrainConfig& c, const std::string& v) { c.*mem = v; }}});
    };
    auto add_int = [&](const char* key, int TrainConfig::* mem) {
      t.push_back({key, {[mem](const TrainConfig& c) { return std::to_string(c.*mem); },
                         [mem](TrainConfig& c, const std::string& v) { c.*mem = parse_int(v); }}});
    };
    auto add_f = [&](const char* key, double TrainConfig::* mem) {
      t.push_back({key, {[mem](const TrainConfig& c) { return fmt_double(c.*mem); },
                         [mem](TrainConfig& c, const std::string& v) { c.*mem = parse_double(v); }}});
    };
    auto add_bool = [&](const char* key, bool TrainConfig::* mem) {
      t.push_back({key, {[mem](const TrainConfig& c) { return std::string(c.*mem ? "true" : "false"); },
                         [mem](TrainConfig& c, const std::string& v) { c.*mem = parse_bool(v); }}});
    };
    auto add = [&](const char* key, auto getter, auto setter) {
      t.push_back({key, {getter, setter}});
    };

    add_str("train.dataset_dir", &TrainConfig::dataset_dir);
    add_str("train.out_dir", &TrainConfig::out_dir);
    add_int("train.image_downscale", &TrainConfig::image_downscale);
    add_int("train.rays_per_batch", &TrainConfig::rays_per_batch);
    add_int("train.total_steps", &TrainConfig::total_steps);
    add_f("train.learning_rate", &TrainConfig::learning_rate);
    add_f("train.learning_rate_final", &TrainConfig::learning_rate_final);
    add("train.seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, const std::string& v) { c.seed = std::stoull(v); });
    add_int("train.fine_warmup_steps", &TrainConfig::fine_warmup_steps);
    add_bool("train.fine_enabled", &TrainConfig::fine_enabled);
    add_f("train.init_sharpness", &TrainConfig::init_sharpness);
    add_int("train.checkpoint_interval", &TrainConfig::checkpoint_interval);
    add_int("train.log_interval", &TrainConfig::log_interval);
    add_int("train.n_chunks", &TrainConfig::n_chunks);
    add_int("train.threads", &TrainConfig::threads);

    add("loss.eikonal", [](const TrainConfig& c) { return fmt_double(c.loss.eikonal); },
        [](TrainConfig& c, const std::string& v) { c.loss.eikonal = parse_double(v); });
    add("loss.curvature", [](const TrainConfig& c) { return fmt_double(c.loss.curvature); },
        [](TrainConfig& c, const std::string& v) { c.loss.curvature = parse_double(v); });
    add("loss.orientation", [](const TrainConfig& c) { return fmt_double(c.loss.orientation); },
        [](TrainConfig& c, const std::string& v) { c.loss.orientation = parse_double(v); });
    add("loss.alpha", [](const TrainConfig& c) { return fmt_double(c.loss.alpha); },
        [](TrainConfig& c, const std::string& v) { c.loss.alpha = parse_double(v); });
    add_f("loss.curvature_eps", &TrainConfig::curvature_eps);
    add_f("loss.curvature_boost", &TrainConfig::curvature_boost);
    add_f("loss.curvature_boost_frac", &TrainConfig::curvature_boost_frac);
    add_int("loss.eikonal_points", &TrainConfig::eikonal_points);
    add_f("loss.eikonal_sigma", &TrainConfig::eikonal_sigma);

    add("grid.total_levels", [](const TrainConfig& c) { return std::to_string(c.grid.total_levels); },
        [](TrainConfig& c, const std::string& v) { c.grid.total_levels = parse_int(v); });
    add("grid.coarse_min", [](const TrainConfig& c) { return std::to_string(c.grid.coarse_min); },
        [](TrainConfig& c, const std::string& v) { c.grid.coarse_min = parse_int(v); });
    add("grid.level_m", [](const TrainConfig& c) { return std::to_string(c.grid.level_m); },
        [](TrainConfig& c, const std::string& v) { c.grid.level_m = parse_int(v); });
    add("grid.level_L", [](const TrainConfig& c) { return std::to_string(c.grid.level_L); },
        [](TrainConfig& c, const std::string& v) { c.grid.level_L = parse_int(v); });
    add("grid.base_resolution", [](const TrainConfig& c) { return std::to_string(c.grid.base_resolution); },
        [](TrainConfig& c, const std::string& v) { c.grid.base_resolution = parse_int(v); });
    add("grid.max_resolution", [](const TrainConfig& c) { return std::to_string(c.grid.max_resolution); },
        [](TrainConfig& c, const std::string& v) { c.grid.max_resolution = parse_int(v); });
    add("grid.features_per_level", [](const TrainConfig& c) { return std::to_string(c.grid.features_per_level); },
        [](TrainConfig& c, const std::string& v) { c.grid.features_per_level = parse_int(v); });
    add("grid.table_size", [](const TrainConfig& c) { return std::to_string(c.grid.table_size); },
        [](TrainConfig& c, const std::string& v) { c.grid.table_size = parse_int(v); });
    for (int k = 0; k < 3; ++k) {
      t.push_back({std::string("grid.aabb_min_") + char('x' + k),
                   {[k](const TrainConfig& c) { return fmt_double(c.grid.aabb_min[k]); },
                    [k](TrainConfig& c, const std::string& v) { c.grid.aabb_min[k] = parse_double(v); }}});
      t.push_back({std::string("grid.aabb_max_") + char('x' + k),
                   {[k](const TrainConfig& c) { return fmt_double(c.grid.aabb_max[k]); },
                    [k](TrainConfig& c, const std::string& v) { c.grid.aabb_max[k] = parse_double(v); }}});
    }

    add("geometry.hidden_width", [](const TrainConfig& c) { return std::to_string(c.geometry.hidden_width); },
        [](TrainConfig& c, const std::string& v) { c.geometry.hidden_width = parse_int(v); });
    add("geometry.hidden_layers", [](const TrainConfig& c) { return std::to_string(c.geometry.hidden_layers); },
        [](TrainConfig& c, const std::string& v) { c.geometry.hidden_layers = parse_int(v); });
    add("geometry.feature_dim", [](const TrainConfig& c) { return std::to_string(c.geometry.feature_dim); },
        [](TrainConfig& c, const std::string& v) { c.geometry.feature_dim = parse_int(v); });
    add("geometry.softplus_beta", [](const TrainConfig& c) { return fmt_double(c.geometry.softplus_beta); },
        [](TrainConfig& c, const std::string& v) { c.geometry.softplus_beta = parse_double(v); });
    add("geometry.init_sphere_radius", [](const TrainConfig& c) { return fmt_double(c.geometry.init_sphere_radius); },
        [](TrainConfig& c, const std::string& v) { c.geometry.init_sphere_radius = parse_double(v); });

    add("appearance.n_lobes", [](const TrainConfig& c) { return std::to_string(c.appearance.n_lobes); },
        [](TrainConfig& c, const std::string& v) { c.appearance.n_lobes = parse_int(v); });
    add("appearance.view_hidden", [](const TrainConfig& c) { return std::to_string(c.appearance.view_hidden); },
        [](TrainConfig& c, const std::string& v) { c.appearance.view_hidden = parse_int(v); });
    add("appearance.view_layers", [](const TrainConfig& c) { return std::to_string(c.appearance.view_layers); },
        [](TrainConfig& c, const std::string& v) { c.appearance.view_layers = parse_int(v); });
    add("appearance.ref_hidden", [](const TrainConfig& c) { return std::to_string(c.appearance.ref_hidden); },
        [](TrainConfig& c, const std::string& v) { c.appearance.ref_hidden = parse_int(v); });
    add("appearance.ref_layers", [](const TrainConfig& c) { return std::to_string(c.appearance.ref_layers); },
        [](TrainConfig& c, const std::string& v) { c.appearance.ref_layers = parse_int(v); });
    add("appearance.weight_hidden", [](const TrainConfig& c) { return std::to_string(c.appearance.weight_hidden); },
        [](TrainConfig& c, const std::string& v) { c.appearance.weight_hidden = parse_int(v); });
    add("appearance.weight_layers", [](const TrainConfig& c) { return std::to_string(c.appearance.weight_layers); },
        [](TrainConfig& c, const std::string& v) { c.appearance.weight_layers = parse_int(v); });
    add("appearance.fpar_hidden", [](const TrainConfig& c) { return std::to_string(c.appearance.fpar_hidden); },
        [](TrainConfig& c, const std::string& v) { c.appearance.fpar_hidden = parse_int(v); });
    add("appearance.fpar_layers", [](const TrainConfig& c) { return std::to_string(c.appearance.fpar_layers); },
        [](TrainConfig& c, const std::string& v) { c.appearance.fpar_layers = parse_int(v); });
    add("appearance.dir_bands", [](const TrainConfig& c) { return std::to_string(c.appearance.dir_bands); },
        [](TrainConfig& c, const std::string& v) { c.appearance.dir_bands = parse_int(v); });

    add("render.n_uniform", [](const TrainConfig& c) { return std::to_string(c.render.n_uniform); },
        [](TrainConfig& c, const std::string& v) { c.render.n_uniform = parse_int(v); });
    add("render.n_importance", [](const TrainConfig& c) { return std::to_string(c.render.n_importance); },
        [](TrainConfig& c, const std::string& v) { c.render.n_importance = parse_int(v); });
    add("render.importance_rounds", [](const TrainConfig& c) { return std::to_string(c.render.importance_rounds); },
        [](TrainConfig& c, const std::string& v) { c.render.importance_rounds = parse_int(v); });
    add("render.stratified", [](const TrainConfig& c) { return std::string(c.render.stratified ? "true" : "false"); },
        [](TrainConfig& c, const std::string& v) { c.render.stratified = parse_bool(v); });
    add("render.per_sample_blend",
        [](const TrainConfig& c) { return std::string(c.render.per_sample_blend ? "true" : "false"); },
        [](TrainConfig& c, const std::string& v) { c.render.per_sample_blend = parse_bool(v); });
    add("render.min_near", [](const TrainConfig& c) { return fmt_double(c.render.min_near); },
        [](TrainConfig& c, const std::string& v) { c.render.min_near = parse_double(v); });
    const char* bg_keys[3] = {"render.background_r", "render.background_g", "render.background_b"};
    for (int k = 0; k < 3; ++k)
      t.push_back({bg_keys[k],
                   {[k](const TrainConfig& c) { return fmt_double(c.render.background[k]); },
                    [k](TrainConfig& c, const std::string& v) { c.render.background[k] = parse_double(v); }}});
    return t;
  }();
  return table;
}

}  // namespace

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : field_table()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get(cfg) << "\n";
  }
  return os.str();
}

void apply_config_line(TrainConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const std::string full = section.empty() ? key : section + "." + key;
  for (const auto& [k, field] : field_table()) {
    if (k == full) {
      field.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + full);
}

TrainConfig config_from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto ltrim = line.find_first_not_of(" \t\r");
    if (ltrim == std::string::npos) continue;
    auto rtrim = line.find_last_not_of(" \t\r");
    line = line.substr(ltrim, rtrim - ltrim + 1);
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing =");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_config_line(cfg, section, trim(key), trim(value));
  }
  return cfg;
}

}  // namespace anisdf
