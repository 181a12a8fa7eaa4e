#pragma once

// Run configuration: a JSON file with optional sections "cpn", "synth",
// "train", and "paths". Unknown sections or keys are rejected so typos
// fail loudly instead of silently falling back to defaults. Configuration
// problems throw std::invalid_argument (the CLI maps these to exit 1);
// malformed data files elsewhere throw data_error (exit 2).

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpn/data.hpp"
#include "cpn/model.hpp"

namespace cpn {

struct RunConfig {
  CpnConfig cpn;
  SynthConfig synth;
  TrainOptions train;
  std::string dataset_dir;
  std::string output_dir = "out";
  std::string checkpoint;
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* candidate : allowed)
      if (key == candidate) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
  }
}

inline double get_num(const nlohmann::json& obj, const std::string& section, const char* key,
                      double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number())
    throw std::invalid_argument("config: " + section + "." + key + " must be a number");
  return obj[key].get<double>();
}

// True for any integer-valued entry that is not negative, regardless of
// whether the parser stored it signed or unsigned.
inline bool is_nonneg_int(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

inline std::size_t get_uint(const nlohmann::json& obj, const std::string& section, const char* key,
                            std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!is_nonneg_int(obj[key]))
    throw std::invalid_argument("config: " + section + "." + key +
                                " must be a non-negative integer");
  return obj[key].get<std::size_t>();
}

inline bool get_bool(const nlohmann::json& obj, const std::string& section, const char* key,
                     bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean())
    throw std::invalid_argument("config: " + section + "." + key + " must be a boolean");
  return obj[key].get<bool>();
}

inline std::string get_str(const nlohmann::json& obj, const std::string& section, const char* key,
                           const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string())
    throw std::invalid_argument("config: " + section + "." + key + " must be a string");
  return obj[key].get<std::string>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  if (!root.is_object()) throw std::invalid_argument("config: root must be a JSON object");
  detail::check_keys(root, "<root>", {"cpn", "synth", "train", "paths"});
  RunConfig rc;

  if (root.contains("cpn")) {
    const nlohmann::json& j = root["cpn"];
    if (!j.is_object()) throw std::invalid_argument("config: 'cpn' must be an object");
    detail::check_keys(j, "cpn",
                       {"order", "samples", "stride", "score_threshold", "nms_threshold",
                        "refine_iterations", "refine_margin", "widths", "lambda", "beta",
                        "t_sampling", "seed"});
    CpnConfig& c = rc.cpn;
    c.order = detail::get_uint(j, "cpn", "order", c.order);
    c.samples = detail::get_uint(j, "cpn", "samples", c.samples);
    c.stride = detail::get_uint(j, "cpn", "stride", c.stride);
    c.score_threshold = detail::get_num(j, "cpn", "score_threshold", c.score_threshold);
    c.nms_threshold = detail::get_num(j, "cpn", "nms_threshold", c.nms_threshold);
    c.refine_iterations =
        static_cast<int>(detail::get_uint(j, "cpn", "refine_iterations",
                                          static_cast<std::size_t>(c.refine_iterations)));
    c.refine_margin = detail::get_num(j, "cpn", "refine_margin", c.refine_margin);
    if (j.contains("widths")) {
      if (!j["widths"].is_array() || j["widths"].empty())
        throw std::invalid_argument("config: cpn.widths must be a nonempty array");
      c.widths.clear();
      for (const nlohmann::json& w : j["widths"]) {
        if (!detail::is_nonneg_int(w) || w.get<std::size_t>() == 0)
          throw std::invalid_argument("config: cpn.widths entries must be positive integers");
        c.widths.push_back(w.get<std::size_t>());
      }
    }
    c.loss.lambda = detail::get_num(j, "cpn", "lambda", c.loss.lambda);
    if (j.contains("beta")) {
      if (!j["beta"].is_array())
        throw std::invalid_argument("config: cpn.beta must be an array of numbers");
      c.loss.beta.clear();
      for (const nlohmann::json& b : j["beta"]) {
        if (!b.is_number())
          throw std::invalid_argument("config: cpn.beta entries must be numbers");
        c.loss.beta.push_back(b.get<double>());
      }
    }
    const std::string sampling = detail::get_str(
        j, "cpn", "t_sampling", rc.cpn.t_sampling == TSampling::kUniform ? "uniform" : "random");
    if (sampling == "uniform")
      c.t_sampling = TSampling::kUniform;
    else if (sampling == "random")
      c.t_sampling = TSampling::kRandom;
    else
      throw std::invalid_argument("config: cpn.t_sampling must be 'uniform' or 'random'");
    c.seed = detail::get_uint(j, "cpn", "seed", c.seed);
  }

  if (root.contains("synth")) {
    const nlohmann::json& j = root["synth"];
    if (!j.is_object()) throw std::invalid_argument("config: 'synth' must be an object");
    detail::check_keys(j, "synth",
                       {"width", "height", "count", "min_objects", "max_objects", "min_radius",
                        "max_radius", "weight_circle", "weight_ellipse", "weight_triangle",
                        "weight_blob", "allow_overlap", "background_lo", "background_hi",
                        "foreground_lo", "foreground_hi", "noise", "seed"});
    SynthConfig& s = rc.synth;
    s.width = detail::get_uint(j, "synth", "width", s.width);
    s.height = detail::get_uint(j, "synth", "height", s.height);
    s.count = detail::get_uint(j, "synth", "count", s.count);
    s.min_objects = detail::get_uint(j, "synth", "min_objects", s.min_objects);
    s.max_objects = detail::get_uint(j, "synth", "max_objects", s.max_objects);
    s.min_radius = detail::get_num(j, "synth", "min_radius", s.min_radius);
    s.max_radius = detail::get_num(j, "synth", "max_radius", s.max_radius);
    s.weight_circle = detail::get_num(j, "synth", "weight_circle", s.weight_circle);
    s.weight_ellipse = detail::get_num(j, "synth", "weight_ellipse", s.weight_ellipse);
    s.weight_triangle = detail::get_num(j, "synth", "weight_triangle", s.weight_triangle);
    s.weight_blob = detail::get_num(j, "synth", "weight_blob", s.weight_blob);
    s.allow_overlap = detail::get_bool(j, "synth", "allow_overlap", s.allow_overlap);
    s.background_lo = detail::get_num(j, "synth", "background_lo", s.background_lo);
    s.background_hi = detail::get_num(j, "synth", "background_hi", s.background_hi);
    s.foreground_lo = detail::get_num(j, "synth", "foreground_lo", s.foreground_lo);
    s.foreground_hi = detail::get_num(j, "synth", "foreground_hi", s.foreground_hi);
    s.noise = detail::get_num(j, "synth", "noise", s.noise);
    s.seed = detail::get_uint(j, "synth", "seed", s.seed);
  }

  if (root.contains("train")) {
    const nlohmann::json& j = root["train"];
    if (!j.is_object()) throw std::invalid_argument("config: 'train' must be an object");
    detail::check_keys(j, "train", {"epochs", "learning_rate", "momentum"});
    rc.train.epochs = detail::get_uint(j, "train", "epochs", rc.train.epochs);
    rc.train.learning_rate = detail::get_num(j, "train", "learning_rate", rc.train.learning_rate);
    rc.train.momentum = detail::get_num(j, "train", "momentum", rc.train.momentum);
  }

  if (root.contains("paths")) {
    const nlohmann::json& j = root["paths"];
    if (!j.is_object()) throw std::invalid_argument("config: 'paths' must be an object");
    detail::check_keys(j, "paths", {"dataset", "output", "checkpoint"});
    rc.dataset_dir = detail::get_str(j, "paths", "dataset", rc.dataset_dir);
    rc.output_dir = detail::get_str(j, "paths", "output", rc.output_dir);
    rc.checkpoint = detail::get_str(j, "paths", "checkpoint", rc.checkpoint);
  }

  // Range and consistency checks (threshold domains, stride/width fit,
  // beta length) fail here rather than at first use.
  rc.cpn.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config '" + path + "': cannot open");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw std::invalid_argument("config '" + path + "': " + err.what());
  }
  return parse_run_config(root);
}

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  const CpnConfig& c = rc.cpn;
  nlohmann::json cpn{{"order", c.order},
                     {"samples", c.samples},
                     {"stride", c.stride},
                     {"score_threshold", c.score_threshold},
                     {"nms_threshold", c.nms_threshold},
                     {"refine_iterations", c.refine_iterations},
                     {"refine_margin", c.refine_margin},
                     {"widths", c.widths},
                     {"lambda", c.loss.lambda},
                     {"beta", c.loss.beta.empty() ? default_beta(c.order) : c.loss.beta},
                     {"t_sampling", c.t_sampling == TSampling::kUniform ? "uniform" : "random"},
                     {"seed", c.seed}};
  const SynthConfig& s = rc.synth;
  nlohmann::json synth{{"width", s.width},
                       {"height", s.height},
                       {"count", s.count},
                       {"min_objects", s.min_objects},
                       {"max_objects", s.max_objects},
                       {"min_radius", s.min_radius},
                       {"max_radius", s.max_radius},
                       {"weight_circle", s.weight_circle},
                       {"weight_ellipse", s.weight_ellipse},
                       {"weight_triangle", s.weight_triangle},
                       {"weight_blob", s.weight_blob},
                       {"allow_overlap", s.allow_overlap},
                       {"background_lo", s.background_lo},
                       {"background_hi", s.background_hi},
                       {"foreground_lo", s.foreground_lo},
                       {"foreground_hi", s.foreground_hi},
                       {"noise", s.noise},
                       {"seed", s.seed}};
  nlohmann::json train{{"epochs", rc.train.epochs},
                       {"learning_rate", rc.train.learning_rate},
                       {"momentum", rc.train.momentum}};
  nlohmann::json paths{{"dataset", rc.dataset_dir},
                       {"output", rc.output_dir},
                       {"checkpoint", rc.checkpoint}};
  return nlohmann::json{{"cpn", cpn}, {"synth", synth}, {"train", train}, {"paths", paths}};
}

// FNV-1a over the canonical dump (nlohmann keeps object keys sorted), so
// two runs with the same effective configuration report the same hash.
// Paths are excluded: the hash identifies the experiment, not where its
// artifacts happen to live.
inline std::string config_hash(const RunConfig& rc) {
  nlohmann::json j = run_config_to_json(rc);
  j.erase("paths");
  const std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace cpn
