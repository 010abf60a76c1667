#include "lwam/trainer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "lwam/errors.hpp"
#include "lwam/numcore/io.hpp"

namespace lwam::train {

Geometry parse_geometry(const std::string& s) {
  if (s == "distill") return Geometry::kDistill;
  if (s == "concat") return Geometry::kConcat;
  if (s == "off") return Geometry::kOff;
  throw ConfigError("geometry must be distill, concat or off, got '" + s + "'");
}

const char* to_string(Geometry g) {
  switch (g) {
    case Geometry::kDistill: return "distill";
    case Geometry::kConcat: return "concat";
    case Geometry::kOff: return "off";
  }
  return "off";
}

const std::vector<std::vector<int>>& stride_patterns() {
  static const std::vector<std::vector<int>> p{{0, 8}, {-3, 0, 4, 8}, {-3, -2, -1, 0, 2, 4, 6, 8}};
  return p;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) throw ConfigError("loss weights must be nonnegative");
  if (!(warmup_frac > 0 && warmup_frac < 1)) throw ConfigError("warmup_frac must lie in (0, 1)");
  if (!(lr_peak > 0) || !(lr_floor >= 0) || lr_floor > lr_peak) throw ConfigError("need 0 <= lr_floor <= lr_peak, lr_peak > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw ConfigError("invalid Adam constants");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
  if (!(ema_momentum >= 0 && ema_momentum <= 1)) throw ConfigError("ema_momentum must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0 && steps == 0) throw ConfigError("need epochs or steps");
  bool known = false;
  for (const auto& p : stride_patterns()) known = known || p == stride;
  if (!known) throw ConfigError("stride must be one of 0,8 | -3,0,4,8 | -3,-2,-1,0,2,4,6,8");
  if (toggles.world_model && !toggles.compression) throw ConfigError("the world model requires compression");
  if (toggles.ego_status && !toggles.world_model) throw ConfigError("ego status supervision requires the world model");
  if (queries == 0 || d_l == 0 || d_l > d_e) throw ConfigError("need queries > 0 and 0 < d_l <= d_e");
  if (enc_heads == 0 || d_e % enc_heads) throw ConfigError("d_e must be divisible by enc_heads");
  if (wm_heads == 0 || d_l % wm_heads || dec_heads == 0 || d_l % dec_heads)
    throw ConfigError("d_l must be divisible by wm_heads and dec_heads");
  if (enc_layers == 0 || wm_layers == 0 || dec_layers == 0) throw ConfigError("layer counts must be positive");
  for (double s : pose_scale)
    if (!(s > 0)) throw ConfigError("pose_scale entries must be positive");
  if (!(replan_interval > 0) || !(max_time >= 0)) throw ConfigError("invalid closed-loop timing");
}

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const std::string t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const std::string t = trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "on" || t == "1") return true;
  if (t == "false" || t == "off" || t == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define LWAM_DOUBLE(sec, name) \
  Field{sec, #name, [](const TrainConfig& c) { return fmt(c.name); }, [](TrainConfig& c, const std::string& v) { c.name = to_double(#name, v); }}
#define LWAM_SIZE(sec, name)                                                  \
  Field{sec, #name, [](const TrainConfig& c) { return std::to_string(c.name); }, \
        [](TrainConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(to_uint(#name, v)); }}
#define LWAM_STRING(sec, name) \
  Field{sec, #name, [](const TrainConfig& c) { return c.name; }, [](TrainConfig& c, const std::string& v) { c.name = trim(v); }}
#define LWAM_BOOL(sec, name)                                                                  \
  Field{sec, #name, [](const TrainConfig& c) { return std::string(c.toggles.name ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.toggles.name = to_bool(#name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      LWAM_DOUBLE("train", alpha),
      LWAM_DOUBLE("train", beta),
      LWAM_DOUBLE("train", gamma),
      LWAM_DOUBLE("train", lr_peak),
      LWAM_DOUBLE("train", weight_decay),
      LWAM_DOUBLE("train", warmup_frac),
      LWAM_DOUBLE("train", lr_floor),
      LWAM_DOUBLE("train", adam_beta1),
      LWAM_DOUBLE("train", adam_beta2),
      LWAM_DOUBLE("train", adam_eps),
      LWAM_DOUBLE("train", grad_clip),
      LWAM_DOUBLE("train", ema_momentum),
      LWAM_SIZE("train", epochs),
      LWAM_SIZE("train", steps),
      LWAM_SIZE("train", batch_size),
      LWAM_SIZE("train", seed),
      Field{"train", "stride",
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.stride.size(); ++i) s += (i ? "," : "") + std::to_string(c.stride[i]);
              return s;
            },
            [](TrainConfig& c, const std::string& v) {
              c.stride.clear();
              for (double x : to_list("stride", v)) {
                if (x != std::round(x)) throw ConfigError("stride: frames must be integers");
                c.stride.push_back(static_cast<int>(x));
              }
            }},
      LWAM_BOOL("toggles", compression),
      Field{"toggles", "geometry", [](const TrainConfig& c) { return std::string(to_string(c.toggles.geometry)); },
            [](TrainConfig& c, const std::string& v) { c.toggles.geometry = parse_geometry(trim(v)); }},
      LWAM_BOOL("toggles", world_model),
      LWAM_BOOL("toggles", ego_status),
      LWAM_STRING("data", corpus),
      LWAM_SIZE("data", max_scenes),
      LWAM_STRING("data", eval_corpus),
      LWAM_SIZE("data", eval_scenes),
      LWAM_SIZE("model", queries),
      LWAM_SIZE("model", d_e),
      LWAM_SIZE("model", d_l),
      LWAM_SIZE("model", enc_layers),
      LWAM_SIZE("model", enc_heads),
      LWAM_SIZE("model", wm_layers),
      LWAM_SIZE("model", wm_heads),
      LWAM_SIZE("model", dec_layers),
      LWAM_SIZE("model", dec_heads),
      Field{"model", "pose_scale",
            [](const TrainConfig& c) { return fmt(c.pose_scale[0]) + "," + fmt(c.pose_scale[1]) + "," + fmt(c.pose_scale[2]); },
            [](TrainConfig& c, const std::string& v) {
              const auto l = to_list("pose_scale", v);
              if (l.size() != 3) throw ConfigError("pose_scale needs three values");
              c.pose_scale = {l[0], l[1], l[2]};
            }},
      LWAM_DOUBLE("eval", replan_interval),
      LWAM_DOUBLE("eval", max_time),
  };
  return f;
}

#undef LWAM_DOUBLE
#undef LWAM_SIZE
#undef LWAM_STRING
#undef LWAM_BOOL

}  // namespace

TrainConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError("config: " + e.message(), e.line());
  }
  TrainConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const Field* f = nullptr;
      for (const auto& cand : fields())
        if (section == cand.section && key == cand.key) f = &cand;
      if (!f) throw ConfigError("unknown config key [" + section + "] " + key);
      f->set(cfg, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(nc::read_file(path));
}

std::string to_ini(const TrainConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace lwam::train
