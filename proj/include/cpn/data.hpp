#pragma once

// Synthetic-shapes dataset: dark objects (circles, ellipses, triangles,
// low-order Fourier blobs) on a brighter noisy background, each instance
// annotated with its full polygon even where occluded. Persistence uses
// binary PGM (P5, maxval 255) plus one JSON annotation file per image.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpn/efd.hpp"
#include "cpn/errors.hpp"
#include "cpn/geometry.hpp"
#include "cpn/rng.hpp"

namespace cpn {

struct LabeledImage {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;  // row-major, values in [0,1]
  std::vector<Polyline> instances;
};

struct SynthConfig {
  std::size_t width = 32, height = 32;
  std::size_t count = 100;
  std::size_t min_objects = 1, max_objects = 3;
  double min_radius = 3.0, max_radius = 5.5;
  // Relative odds of each shape family.
  double weight_circle = 1.0, weight_ellipse = 1.0, weight_triangle = 0.0, weight_blob = 0.0;
  bool allow_overlap = false;
  double background_lo = 0.65, background_hi = 0.90;
  double foreground_lo = 0.10, foreground_hi = 0.45;
  double noise = 0.02;
  std::uint64_t seed = 1;

  void validate() const {
    if (width < 16 || height < 16) throw data_error("synth: image dims must be at least 16");
    if (min_objects < 1 || max_objects < min_objects)
      throw data_error("synth: object count range is empty");
    if (!(min_radius > 0.0) || max_radius < min_radius)
      throw data_error("synth: radius range is empty");
    if (2.0 * (max_radius + 1.0) >= static_cast<double>(std::min(width, height)))
      throw data_error("synth: objects too large for the image");
    const double wsum = weight_circle + weight_ellipse + weight_triangle + weight_blob;
    if (!(wsum > 0.0)) throw data_error("synth: shape weights must sum to > 0");
    for (double w : {weight_circle, weight_ellipse, weight_triangle, weight_blob})
      if (w < 0.0) throw data_error("synth: shape weights must be >= 0");
    if (!(background_lo <= background_hi) || !(foreground_lo <= foreground_hi))
      throw data_error("synth: intensity ranges are empty");
    if (!(foreground_hi < background_lo))
      throw data_error("synth: foreground intensities must stay below background");
    for (double v : {background_lo, background_hi, foreground_lo, foreground_hi})
      if (v < 0.0 || v > 1.0) throw data_error("synth: intensities must lie in [0,1]");
    if (noise < 0.0) throw data_error("synth: noise amplitude must be >= 0");
  }
};

namespace detail {

inline Polyline make_circle(double cx, double cy, double radius, std::size_t vertices = 48) {
  Polyline p;
  p.reserve(vertices);
  for (std::size_t i = 0; i < vertices; ++i) {
    const double th = kTwoPi * static_cast<double>(i) / static_cast<double>(vertices);
    p.push_back({cx + radius * std::cos(th), cy + radius * std::sin(th)});
  }
  return p;
}

inline Polyline make_ellipse(double cx, double cy, double a, double b, double phi,
                             std::size_t vertices = 48) {
  Polyline p;
  p.reserve(vertices);
  const double cp = std::cos(phi), sp = std::sin(phi);
  for (std::size_t i = 0; i < vertices; ++i) {
    const double th = kTwoPi * static_cast<double>(i) / static_cast<double>(vertices);
    const double ex = a * std::cos(th), ey = b * std::sin(th);
    p.push_back({cx + ex * cp - ey * sp, cy + ex * sp + ey * cp});
  }
  return p;
}

inline Polyline make_triangle(double cx, double cy, double radius, Rng& rng) {
  Polyline p;
  const double base = rng.uniform(0.0, kTwoPi);
  for (int k = 0; k < 3; ++k) {
    const double th = base + kTwoPi * k / 3.0 + rng.uniform(-0.35, 0.35);
    p.push_back({cx + radius * std::cos(th), cy + radius * std::sin(th)});
  }
  return p;
}

// Near-circular random descriptor of order 3..6, rendered to a polygon.
// Higher harmonics shrink with frequency to keep the contour simple.
inline Polyline make_blob(double cx, double cy, double radius, Rng& rng) {
  const std::size_t order = 3 + rng.uniform_int(4);
  FourierDescriptor desc = FourierDescriptor::zeros(order);
  desc.a[0] = cx;
  desc.c[0] = cy;
  desc.b[0] = radius;  // b_1
  desc.d[0] = 0.0;
  desc.a[1] = 0.0;
  desc.c[1] = radius;  // c_1
  for (std::size_t n = 2; n <= order; ++n) {
    const double amp = 0.15 * radius / static_cast<double>(n);
    desc.a[n] = rng.uniform(-amp, amp);
    desc.b[n - 1] = rng.uniform(-amp, amp);
    desc.c[n] = rng.uniform(-amp, amp);
    desc.d[n - 1] = rng.uniform(-amp, amp);
  }
  return sample_contour(desc, uniform_ts(64));
}

inline bool masks_intersect(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && b.bits[i]) return true;
  return false;
}

}  // namespace detail

// Deterministic under the seed: image i draws from an Rng seeded with
// seed + i, so any image can be regenerated independently.
inline std::vector<LabeledImage> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<LabeledImage> images;
  images.reserve(cfg.count);

  for (std::size_t index = 0; index < cfg.count; ++index) {
    Rng rng(cfg.seed + index);
    LabeledImage img;
    img.height = cfg.height;
    img.width = cfg.width;

    const double bg = rng.uniform(cfg.background_lo, cfg.background_hi);
    img.pixels.assign(cfg.height * cfg.width, bg);

    const std::size_t objects =
        cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
    Mask occupied = Mask::zeros(cfg.height, cfg.width);
    const double wsum =
        cfg.weight_circle + cfg.weight_ellipse + cfg.weight_triangle + cfg.weight_blob;

    for (std::size_t k = 0; k < objects; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
        const double radius = rng.uniform(cfg.min_radius, cfg.max_radius);
        const double margin = radius + 1.0;
        const double cx = rng.uniform(margin, static_cast<double>(cfg.width) - margin);
        const double cy = rng.uniform(margin, static_cast<double>(cfg.height) - margin);

        Polyline poly;
        const double pick = rng.uniform(0.0, wsum);
        if (pick < cfg.weight_circle) {
          poly = detail::make_circle(cx, cy, radius);
        } else if (pick < cfg.weight_circle + cfg.weight_ellipse) {
          poly = detail::make_ellipse(cx, cy, radius, radius * rng.uniform(0.55, 0.95),
                                      rng.uniform(0.0, kTwoPi / 2.0));
        } else if (pick < cfg.weight_circle + cfg.weight_ellipse + cfg.weight_triangle) {
          poly = detail::make_triangle(cx, cy, radius, rng);
        } else {
          poly = detail::make_blob(cx, cy, radius, rng);
        }

        try {
          poly = canonicalize(poly);
        } catch (const numerical_error&) {
          continue;
        }
        const Mask mask = rasterize(poly, cfg.height, cfg.width);
        if (mask.count() == 0) continue;
        if (!cfg.allow_overlap && detail::masks_intersect(mask, occupied)) continue;

        const double fg = rng.uniform(cfg.foreground_lo, cfg.foreground_hi);
        for (std::size_t i = 0; i < mask.bits.size(); ++i) {
          if (mask.bits[i]) img.pixels[i] = fg;
          occupied.bits[i] = occupied.bits[i] || mask.bits[i];
        }
        img.instances.push_back(std::move(poly));
        placed = true;
      }
      if (!placed)
        throw data_error("synth: could not place object " + std::to_string(k + 1) + " of image " +
                         std::to_string(index) + " after 500 attempts");
    }

    if (cfg.noise > 0.0)
      for (double& p : img.pixels)
        p = std::clamp(p + cfg.noise * rng.normal(), 0.0, 1.0);
    images.push_back(std::move(img));
  }
  return images;
}

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

inline void save_pgm(const std::string& path, std::size_t height, std::size_t width,
                     const std::vector<double>& pixels) {
  if (pixels.size() != height * width)
    throw std::invalid_argument("save_pgm: pixel count does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("pgm '" + path + "': cannot open for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("pgm '" + path + "': write failed");
}

namespace detail {

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
inline std::string pgm_token(std::istream& in, const std::string& path) {
  std::string token;
  int ch = in.get();
  while (ch != std::istream::traits_type::eof()) {
    if (ch == '#') {
      while (ch != '\n' && ch != std::istream::traits_type::eof()) ch = in.get();
    } else if (std::isspace(ch)) {
      if (!token.empty()) {
        in.unget();
        return token;
      }
    } else {
      token.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  if (token.empty())
    throw data_error("pgm '" + path + "': truncated header at offset " +
                     std::to_string(static_cast<long long>(in.tellg())));
  return token;
}

inline std::size_t pgm_number(std::istream& in, const std::string& path, const char* what) {
  const std::string token = pgm_token(in, path);
  std::size_t value = 0;
  for (char c : token) {
    if (c < '0' || c > '9')
      throw data_error("pgm '" + path + "': invalid " + what + " '" + token + "' at offset " +
                       std::to_string(static_cast<long long>(in.tellg())));
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

}  // namespace detail

inline std::vector<double> load_pgm(const std::string& path, std::size_t& height,
                                    std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("pgm '" + path + "': cannot open");
  const std::string magic = detail::pgm_token(in, path);
  if (magic != "P5") throw data_error("pgm '" + path + "': expected magic P5, got '" + magic + "'");
  width = detail::pgm_number(in, path, "width");
  height = detail::pgm_number(in, path, "height");
  const std::size_t maxval = detail::pgm_number(in, path, "maxval");
  if (maxval != 255)
    throw data_error("pgm '" + path + "': unsupported maxval " + std::to_string(maxval) +
                     ", only 255 is accepted");
  in.get();  // single whitespace byte after the header
  if (height == 0 || width == 0) throw data_error("pgm '" + path + "': zero dimensions");

  std::vector<unsigned char> bytes(height * width);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw data_error("pgm '" + path + "': truncated pixel data at offset " +
                     std::to_string(static_cast<long long>(in.gcount())));
  std::vector<double> pixels(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    pixels[i] = static_cast<double>(bytes[i]) / 255.0;
  return pixels;
}

// ---------------------------------------------------------------------------
// Dataset directory: img_%06d.pgm / img_%06d.json pairs

inline std::string image_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06zu", index);
  return buf;
}

inline nlohmann::json annotation_to_json(const LabeledImage& img) {
  nlohmann::json instances = nlohmann::json::array();
  for (const Polyline& poly : img.instances) {
    nlohmann::json points = nlohmann::json::array();
    for (const Point& pt : poly) points.push_back({pt[0], pt[1]});
    instances.push_back({{"polygon", points}});
  }
  return {{"width", img.width}, {"height", img.height}, {"instances", instances}};
}

inline void annotation_from_json(const nlohmann::json& j, const std::string& path,
                                 LabeledImage& img) {
  try {
    if (!j.is_object()) throw data_error("annotation is not a JSON object");
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (key != "width" && key != "height" && key != "instances")
        throw data_error("unknown key '" + key + "'");
    }
    img.width = j.at("width").get<std::size_t>();
    img.height = j.at("height").get<std::size_t>();
    img.instances.clear();
    for (const auto& inst : j.at("instances")) {
      if (!inst.is_object() || !inst.contains("polygon"))
        throw data_error("instance without polygon");
      Polyline poly;
      for (const auto& pt : inst.at("polygon")) {
        if (!pt.is_array() || pt.size() != 2) throw data_error("polygon point is not [x,y]");
        poly.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      img.instances.push_back(std::move(poly));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("annotation '" + path + "': " + e.what());
  } catch (const data_error& e) {
    throw data_error("annotation '" + path + "': " + e.what());
  }
}

inline void save_dataset(const std::vector<LabeledImage>& images, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string stem = (std::filesystem::path(dir) / image_stem(i)).string();
    save_pgm(stem + ".pgm", images[i].height, images[i].width, images[i].pixels);
    std::ofstream out(stem + ".json");
    if (!out) throw data_error("annotation '" + stem + ".json': cannot open for writing");
    out << annotation_to_json(images[i]).dump(2) << "\n";
    if (!out) throw data_error("annotation '" + stem + ".json': write failed");
  }
}

inline std::vector<LabeledImage> load_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw data_error("dataset '" + dir + "': not a directory");
  std::vector<LabeledImage> images;
  for (std::size_t i = 0;; ++i) {
    const std::string stem = (std::filesystem::path(dir) / image_stem(i)).string();
    const std::string pgm_path = stem + ".pgm";
    const std::string json_path = stem + ".json";
    const bool has_pgm = std::filesystem::exists(pgm_path);
    const bool has_json = std::filesystem::exists(json_path);
    if (!has_pgm && !has_json) break;
    if (!has_pgm || !has_json)
      throw data_error("dataset '" + dir + "': incomplete pair for " + image_stem(i));

    LabeledImage img;
    img.pixels = load_pgm(pgm_path, img.height, img.width);

    std::ifstream in(json_path);
    if (!in) throw data_error("annotation '" + json_path + "': cannot open");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw data_error("annotation '" + json_path + "': " + e.what());
    }
    LabeledImage meta;
    annotation_from_json(j, json_path, meta);
    if (meta.width != img.width || meta.height != img.height)
      throw data_error("annotation '" + json_path + "': dims disagree with the PGM");
    img.instances = std::move(meta.instances);
    images.push_back(std::move(img));
  }
  if (images.empty()) throw data_error("dataset '" + dir + "': no img_*.pgm/json pairs found");
  return images;
}

}  // namespace cpn
