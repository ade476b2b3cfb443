#include "emo/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "emo/error.hpp"

namespace emo::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, sep);)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  EMO_CHECK(r.ec == std::errc() && r.ptr == v.data() + v.size(), ConfigError, key + ": not a number: " + v);
  return out;
}

template <typename T>
T parse_uint(const std::string& key, const std::string& v) {
  T out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  EMO_CHECK(r.ec == std::errc() && r.ptr == v.data() + v.size(), ConfigError,
            key + ": not a non-negative integer: " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got " + v);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      s += v[i];
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define EMO_DOUBLE(path)                                                                   \
  Field {                                                                                  \
    [](const RunConfig& c) { return format_double(c.path); },                              \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_double(k, v); } \
  }
#define EMO_SIZE(path)                                                                               \
  Field {                                                                                            \
    [](const RunConfig& c) { return std::to_string(c.path); },                                       \
        [](RunConfig& c, const std::string& k, const std::string& v) {                               \
          c.path = parse_uint<std::remove_cvref_t<decltype(c.path)>>(k, v);                          \
        }                                                                                            \
  }
#define EMO_BOOL(path)                                                                  \
  Field {                                                                               \
    [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); },          \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_bool(k, v); } \
  }
#define EMO_MIXER(path)                                                                          \
  Field {                                                                                        \
    [](const RunConfig& c) { return std::string(block::to_string(c.path)); },                    \
        [](RunConfig& c, const std::string&, const std::string& v) { c.path = block::parse_mixer_kind(v); } \
  }

// Ordered so that to_text() groups related keys.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"decoder.dim", EMO_SIZE(decoder.dim)},
      {"decoder.n_state", EMO_SIZE(decoder.n_state)},
      {"decoder.n_layers", EMO_SIZE(decoder.n_layers)},
      {"decoder.n_persons", EMO_SIZE(decoder.n_persons)},
      {"decoder.conv_width", EMO_SIZE(decoder.conv_width)},
      {"decoder.attn_heads", EMO_SIZE(decoder.attn_heads)},
      {"decoder.topology",
       Field{[](const RunConfig& c) { return join(c.decoder.topo.parent); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "default") {
                 c.decoder.topo = scan::default_topology();
                 return;
               }
               std::vector<int> parents;
               for (const auto& p : split(v, ',')) {
                 int x = 0;
                 const auto r = std::from_chars(p.data(), p.data() + p.size(), x);
                 EMO_CHECK(r.ec == std::errc() && r.ptr == p.data() + p.size(), ConfigError, k + ": bad parent " + p);
                 parents.push_back(x);
               }
               c.decoder.topo = parents == scan::default_topology().parent ? scan::default_topology()
                                                                           : scan::SkeletonTopology::from_parents(parents);
             }}},
      {"decoder.use_global", EMO_BOOL(decoder.use_global)},
      {"decoder.use_cross", EMO_BOOL(decoder.use_cross)},
      {"decoder.use_local", EMO_BOOL(decoder.use_local)},
      {"decoder.global_mixer", EMO_MIXER(decoder.global_mixer)},
      {"decoder.local_mixer", EMO_MIXER(decoder.local_mixer)},
      {"decoder.mlp_residual", EMO_BOOL(decoder.mlp_residual)},
      {"decoder.zero_init_outputs", EMO_BOOL(decoder.zero_init_outputs)},
      {"head.pose_limit", EMO_DOUBLE(head.pose_limit)},
      {"head.shape_limit", EMO_DOUBLE(head.shape_limit)},
      {"head.base_depth", EMO_DOUBLE(head.base_depth)},
      {"loss.cls", EMO_DOUBLE(loss.cls)},
      {"loss.box", EMO_DOUBLE(loss.box)},
      {"loss.j2d", EMO_DOUBLE(loss.j2d)},
      {"loss.param", EMO_DOUBLE(loss.param)},
      {"loss.kp3d", EMO_DOUBLE(loss.kp3d)},
      {"loss.kp2d", EMO_DOUBLE(loss.kp2d)},
      {"loss.select", EMO_DOUBLE(loss.select)},
      {"loss.focal_alpha", EMO_DOUBLE(loss.focal_alpha)},
      {"loss.focal_gamma", EMO_DOUBLE(loss.focal_gamma)},
      {"loss.oks_kappa", EMO_DOUBLE(loss.oks_kappa)},
      {"scene.min_persons", EMO_SIZE(scene.min_persons)},
      {"scene.max_persons", EMO_SIZE(scene.max_persons)},
      {"scene.pose_range", EMO_DOUBLE(scene.pose_range)},
      {"scene.depth_min", EMO_DOUBLE(scene.depth_min)},
      {"scene.depth_max", EMO_DOUBLE(scene.depth_max)},
      {"scene.splat_sigma", EMO_DOUBLE(scene.splat_sigma)},
      {"scene.pixel_noise", EMO_DOUBLE(scene.pixel_noise)},
      {"scene.joint_dropout", EMO_DOUBLE(scene.joint_dropout)},
      {"scene.grid", EMO_SIZE(scene.encoder.grid_w)},
      {"scene.patch_pixels", EMO_SIZE(scene.encoder.sub)},
      {"scene.encoder_seed", EMO_SIZE(scene.encoder.seed)},
      {"scene.content_gain", EMO_DOUBLE(scene.encoder.content_gain)},
      {"camera.focal", EMO_DOUBLE(scene.camera.focal)},
      {"camera.size", EMO_DOUBLE(scene.camera.width)},
      {"optimizer.step_size", EMO_DOUBLE(optimizer.step_size)},
      {"optimizer.clip_norm", EMO_DOUBLE(optimizer.clip_norm)},
      {"optimizer.steps", EMO_SIZE(optimizer.steps)},
      {"optimizer.batch_size", EMO_SIZE(optimizer.batch_size)},
      {"optimizer.seed", EMO_SIZE(optimizer.seed)},
      {"data.train_size", EMO_SIZE(data.train_size)},
      {"data.test_size", EMO_SIZE(data.test_size)},
      {"data.seed", EMO_SIZE(data.seed)},
      {"bench.m_grid",
       Field{[](const RunConfig& c) { return join(c.bench.m_grid); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.bench.m_grid.clear();
               for (const auto& m : split(v, ',')) c.bench.m_grid.push_back(parse_uint<std::size_t>(k, m));
             }}},
      {"bench.reps", EMO_SIZE(bench.reps)},
      {"bench.warmups", EMO_SIZE(bench.warmups)},
      {"bench.dim", EMO_SIZE(bench.dim)},
      {"bench.joints", EMO_SIZE(bench.joints)},
      {"bench.patches", EMO_SIZE(bench.patches)},
      {"bench.min_trial_ms", EMO_DOUBLE(bench.min_trial_ms)},
      {"ablation.variants",
       Field{[](const RunConfig& c) { return join(c.ablation.variants); },
             [](RunConfig& c, const std::string&, const std::string& v) { c.ablation.variants = split(v, ','); }}},
      {"ablation.seeds",
       Field{[](const RunConfig& c) { return join(c.ablation.seeds); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.ablation.seeds.clear();
               for (const auto& s : split(v, ',')) c.ablation.seeds.push_back(parse_uint<std::uint64_t>(k, s));
             }}},
  };
  return table;
}

#undef EMO_DOUBLE
#undef EMO_SIZE
#undef EMO_BOOL
#undef EMO_MIXER

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.decoder.dim = 16;
  c.decoder.n_state = 4;
  c.decoder.n_layers = 2;
  c.decoder.n_persons = 3;
  c.loss.focal_alpha = 0.5;
  c.scene.depth_min = 3.5;
  c.scene.depth_max = 4.5;
  c.optimizer.step_size = 0.3;
  c.optimizer.steps = 2000;
  c.data.train_size = 512;
  c.data.test_size = 64;
  c.finalize();
  return c;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c = defaults();
  std::map<std::string, const Field*> index;
  for (const auto& [k, f] : fields()) index[k] = &f;
  std::stringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    EMO_CHECK(eq != std::string::npos, ConfigError, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    EMO_CHECK(it != index.end(), ConfigError, "config line " + std::to_string(line_no) + ": unknown key " + key);
    it->second->set(c, key, value);
  }
  c.finalize();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  EMO_CHECK(in.good(), IoError, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::finalize() {
  scene.encoder.grid_h = scene.encoder.grid_w;
  scene.encoder.dim = decoder.dim;
  scene.encoder.channels = decoder.n_joints() + 1;
  scene.camera.height = scene.camera.width;
  scene.camera.cx = scene.camera.width / 2;
  scene.camera.cy = scene.camera.width / 2;
  decoder.validate();
  EMO_CHECK(scene.min_persons >= 1 && scene.min_persons <= scene.max_persons, ConfigError,
            "scene: need 1 <= min_persons <= max_persons");
  EMO_CHECK(scene.max_persons <= decoder.n_persons, ConfigError,
            "scene.max_persons exceeds the number of decoder person queries");
  EMO_CHECK(optimizer.batch_size >= 1, ConfigError, "optimizer.batch_size must be positive");
  EMO_CHECK(optimizer.step_size > 0 && optimizer.clip_norm > 0, ConfigError,
            "optimizer step size and clip norm must be positive");
  EMO_CHECK(data.train_size >= 1, ConfigError, "data.train_size must be positive");
}

}  // namespace emo::train
