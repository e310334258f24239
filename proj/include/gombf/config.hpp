#pragma once

// Run configuration: a plain-text `key = value` file, overridable by flags.
//
//   # comment
//   seed = 7
//   train.stages = 6
//
// Unknown keys and malformed values are configuration errors.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <system_error>

#include "gombf/cascade.hpp"
#include "gombf/core.hpp"
#include "gombf/init_fit.hpp"
#include "gombf/io.hpp"
#include "gombf/synthscene.hpp"

namespace gombf {

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  RegressorMode mode = RegressorMode::kGoMBF;

  ToyModelSpec toy;
  RenderOptions render;
  RandomWalkConfig walk;
  int sequences = 2;
  int length = 50;
  double depth = 1000.0;
  double focal = 1000.0;

  CascadeConfig cascade;
  /// Every k-th frame of each training sequence becomes a training image.
  int train_stride = 1;
  /// Prior weights scaled from real-face pixel units down to ~40px toy faces.
  FitConfig fit{.w1 = 0.4, .w2 = 0.04};

  RegressorMode compare_a = RegressorMode::kGoMBF;
  RegressorMode compare_b = RegressorMode::kMonolithic;

  /// Cascade settings with the run-level seed, threads and mode applied.
  CascadeConfig cascade_config(RegressorMode m) const {
    CascadeConfig c = cascade;
    c.seed = seed;
    c.threads = threads;
    c.mode = m;
    return c;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    fail(ErrorKind::kConfig, "config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::kConfig, "config key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename T, typename Get>
Setter number(Get get) {
  return [get](RunConfig& c, const std::string& k, const std::string& v) {
    get(c) = parse_number<T>(k, v);
  };
}

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> m;
    m["seed"] = number<std::uint64_t>([](RunConfig& c) -> auto& { return c.seed; });
    m["threads"] = number<int>([](RunConfig& c) -> auto& { return c.threads; });
    m["mode"] = [](RunConfig& c, const std::string&, const std::string& v) { c.mode = parse_mode(v); };

    m["toy.vertices"] = number<int>([](RunConfig& c) -> auto& { return c.toy.vertices; });
    m["toy.identity_rank"] = number<int>([](RunConfig& c) -> auto& { return c.toy.identity_rank; });
    m["toy.expression_rank"] = number<int>([](RunConfig& c) -> auto& { return c.toy.expression_rank; });
    m["toy.landmarks"] = number<int>([](RunConfig& c) -> auto& { return c.toy.landmarks; });
    m["toy.smoothness"] = number<double>([](RunConfig& c) -> auto& { return c.toy.smoothness; });
    m["toy.face_width"] = number<double>([](RunConfig& c) -> auto& { return c.toy.face_width; });
    m["toy.identity_scale"] = number<double>([](RunConfig& c) -> auto& { return c.toy.identity_scale; });
    m["toy.identity_decay"] = number<double>([](RunConfig& c) -> auto& { return c.toy.identity_decay; });
    m["toy.expression_scale"] = number<double>([](RunConfig& c) -> auto& { return c.toy.expression_scale; });
    m["toy.seed"] = number<std::uint64_t>([](RunConfig& c) -> auto& { return c.toy.seed; });

    m["render.width"] = number<int>([](RunConfig& c) -> auto& { return c.render.width; });
    m["render.height"] = number<int>([](RunConfig& c) -> auto& { return c.render.height; });
    m["render.background"] = number<float>([](RunConfig& c) -> auto& { return c.render.background; });

    m["scene.sequences"] = number<int>([](RunConfig& c) -> auto& { return c.sequences; });
    m["scene.length"] = number<int>([](RunConfig& c) -> auto& { return c.length; });
    m["scene.depth"] = number<double>([](RunConfig& c) -> auto& { return c.depth; });
    m["scene.focal"] = number<double>([](RunConfig& c) -> auto& { return c.focal; });
    m["walk.expression_min"] = number<double>([](RunConfig& c) -> auto& { return c.walk.expression_min; });
    m["walk.expression_max"] = number<double>([](RunConfig& c) -> auto& { return c.walk.expression_max; });
    m["walk.lateral_range"] = number<double>([](RunConfig& c) -> auto& { return c.walk.lateral_range; });
    m["walk.depth_range"] = number<double>([](RunConfig& c) -> auto& { return c.walk.depth_range; });
    m["walk.displacement_sigma"] = number<double>([](RunConfig& c) -> auto& { return c.walk.displacement_sigma; });
    m["walk.expression_step"] = number<double>([](RunConfig& c) -> auto& { return c.walk.expression_step; });
    m["walk.rotation_step"] = number<double>([](RunConfig& c) -> auto& { return c.walk.rotation_step; });
    m["walk.mean_reversion"] = number<double>([](RunConfig& c) -> auto& { return c.walk.mean_reversion; });
    m["walk.landmark_noise"] = number<double>([](RunConfig& c) -> auto& { return c.walk.landmark_noise; });
    m["walk.frozen"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.walk.frozen = parse_bool(k, v);
    };

    m["train.stages"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.stages; });
    m["train.depth"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.depth; });
    m["train.ferns_per_group"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.ferns_per_group; });
    m["train.monolithic_ferns"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.monolithic_ferns; });
    m["train.features"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.features; });
    m["train.shrinkage"] = number<double>([](RunConfig& c) -> auto& { return c.cascade.shrinkage; });
    m["train.lambda"] = number<double>([](RunConfig& c) -> auto& { return c.cascade.lambda; });
    m["train.spread"] = number<double>([](RunConfig& c) -> auto& { return c.cascade.spread; });
    m["train.initializations"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.initializations; });
    m["train.stride"] = number<int>([](RunConfig& c) -> auto& { return c.train_stride; });
    m["noise.expression_pairs"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.noise.expression_pairs; });
    m["noise.rotation_pairs"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.noise.rotation_pairs; });
    m["noise.translation_pairs"] = number<int>([](RunConfig& c) -> auto& { return c.cascade.noise.translation_pairs; });
    m["noise.rotation_sigma"] = number<double>([](RunConfig& c) -> auto& { return c.cascade.noise.rotation_sigma; });
    m["noise.translation_sigma"] = number<double>([](RunConfig& c) -> auto& { return c.cascade.noise.translation_sigma; });

    m["fit.w1"] = number<double>([](RunConfig& c) -> auto& { return c.fit.w1; });
    m["fit.w2"] = number<double>([](RunConfig& c) -> auto& { return c.fit.w2; });
    m["fit.outer_iterations"] = number<int>([](RunConfig& c) -> auto& { return c.fit.outer_iterations; });

    m["compare.a"] = [](RunConfig& c, const std::string&, const std::string& v) { c.compare_a = parse_mode(v); };
    m["compare.b"] = [](RunConfig& c, const std::string&, const std::string& v) { c.compare_b = parse_mode(v); };
    return m;
  }();
  return keys;
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) fail(ErrorKind::kConfig, "unknown config key '" + key + "'");
  it->second(c, key, value);
}

/// Applies every `key = value` line of `text` on top of `c`.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::kConfig, origin + ":" + std::to_string(number) + ": expected key = value");
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      rethrow_with_context(e, origin + ":" + std::to_string(number));
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c;
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string("config file: ") + e.what());
  }
  apply_config_text(c, text, path.string());
  return c;
}

/// Checks every module precondition the configuration controls.
inline void validate(const RunConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::kConfig, what); };
  if (c.threads < 0) bad("threads must be non-negative (0 = all cores)");
  if (c.sequences < 1) bad("scene.sequences must be at least 1");
  if (c.length < 1) bad("scene.length must be at least 1");
  if (!(c.depth > 0.0)) bad("scene.depth must be positive");
  if (!(c.focal > 0.0)) bad("scene.focal must be positive");
  if (c.render.width < 8 || c.render.height < 8) bad("render size must be at least 8x8");
  if (c.train_stride < 1) bad("train.stride must be at least 1");
  if (c.toy.vertices < c.toy.landmarks)
    bad("toy.vertices (" + std::to_string(c.toy.vertices) + ") is below toy.landmarks (" +
        std::to_string(c.toy.landmarks) + ")");
  validate(c.cascade);
  validate(c.fit);
}

}  // namespace gombf
