#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "defo/datastore/dataset.hpp"
#include "defo/numcore/rng.hpp"

namespace defo {

/// Attribute grammar of the toy domain. Classes are (color, shape) pairs named
/// "<color> <shape>"; the texture is a nuisance drawn per example.
struct ToySpec {
  std::vector<std::string> shapes{"circle", "cross", "bar"};
  std::vector<std::string> colors{"red", "blue"};
  std::vector<std::string> textures{"stripes", "dots", "checkers", "plain"};
  std::size_t width = 32;
  std::size_t height = 32;
  std::string split = "train";
  double noise = 0.04;  // per-pixel Gaussian noise

  std::size_t k() const { return shapes.size() * colors.size(); }

  std::vector<std::string> class_names() const {
    std::vector<std::string> out;
    for (const auto& s : shapes)
      for (const auto& c : colors) out.push_back(c + " " + s);
    return out;
  }

  std::vector<std::string> violations() const;
};

namespace toy {

inline const std::map<std::string, std::array<double, 3>>& palette() {
  static const std::map<std::string, std::array<double, 3>> p = {
      {"red", {0.85, 0.15, 0.15}},    {"blue", {0.15, 0.25, 0.85}},
      {"green", {0.2, 0.75, 0.2}},    {"yellow", {0.9, 0.85, 0.15}},
      {"orange", {0.95, 0.55, 0.1}},  {"purple", {0.55, 0.2, 0.7}},
      {"cyan", {0.15, 0.8, 0.85}},    {"magenta", {0.85, 0.2, 0.75}},
      {"white", {0.95, 0.95, 0.95}},  {"black", {0.05, 0.05, 0.05}},
      {"pink", {0.95, 0.6, 0.7}},     {"brown", {0.5, 0.3, 0.15}}};
  return p;
}

inline const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> s = {"circle", "square", "triangle", "cross",
                                             "diamond", "ring",  "bar",      "oval"};
  return s;
}

inline const std::vector<std::string>& known_textures() {
  static const std::vector<std::string> t = {"stripes", "dots", "checkers", "plain", "grid",
                                             "waves"};
  return t;
}

/// Shape membership for a point (u, v) relative to the center, in units of the radius.
inline bool inside(const std::string& shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  if (shape == "circle") return u * u + v * v <= 1.0;
  if (shape == "square") return au <= 0.85 && av <= 0.85;
  if (shape == "triangle") return v <= 0.9 && v >= -0.9 && au <= (v + 0.9) * 0.55;
  if (shape == "cross") return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
  if (shape == "diamond") return au + av <= 1.0;
  if (shape == "ring") return u * u + v * v <= 1.0 && u * u + v * v >= 0.4;
  if (shape == "bar") return au <= 1.0 && av <= 0.35;
  if (shape == "oval") return u * u + 2.5 * v * v <= 1.0;
  return false;
}

inline double texture_at(const std::string& tex, std::size_t x, std::size_t y, double period,
                         double phase) {
  const double fx = static_cast<double>(x), fy = static_cast<double>(y);
  if (tex == "stripes") return std::sin(2 * std::numbers::pi * (fx + phase) / period) > 0 ? 1.0 : -1.0;
  if (tex == "dots") {
    const double dx = std::fmod(fx + phase, period) - period / 2;
    const double dy = std::fmod(fy + phase, period) - period / 2;
    return dx * dx + dy * dy < period * period / 10 ? 1.0 : -0.3;
  }
  if (tex == "checkers") {
    const auto cx = static_cast<long>((fx + phase) / period), cy = static_cast<long>(fy / period);
    return (cx + cy) % 2 == 0 ? 1.0 : -1.0;
  }
  if (tex == "grid") {
    return std::fmod(fx + phase, period) < 1.0 || std::fmod(fy + phase, period) < 1.0 ? 1.0 : -0.3;
  }
  if (tex == "waves") return std::sin(2 * std::numbers::pi * (fx + 3 * std::sin(fy / 4) + phase) / period);
  return 0.0;
}

}  // namespace toy

inline std::vector<std::string> ToySpec::violations() const {
  std::vector<std::string> out;
  if (shapes.empty() || colors.empty()) out.push_back("toy grammar needs shapes and colors");
  if (k() < 2) out.push_back("toy grammar must define at least 2 classes");
  if (textures.empty()) out.push_back("toy grammar needs at least one texture");
  for (const auto& s : shapes)
    if (std::find(toy::known_shapes().begin(), toy::known_shapes().end(), s) ==
        toy::known_shapes().end()) {
      out.push_back("unknown shape '" + s + "'");
    }
  for (const auto& c : colors)
    if (!toy::palette().contains(c)) out.push_back("unknown color '" + c + "'");
  for (const auto& t : textures)
    if (std::find(toy::known_textures().begin(), toy::known_textures().end(), t) ==
        toy::known_textures().end()) {
      out.push_back("unknown texture '" + t + "'");
    }
  if (width < 8 || height < 8) out.push_back("toy images must be at least 8x8");
  if (!(noise >= 0.0)) out.push_back("toy noise must be non-negative");
  return out;
}

/// Colored shapes on gray textured backgrounds. Example i has label i mod k.
/// A pure function of (spec, n, seed).
inline Dataset generate_toy_dataset(const ToySpec& spec, std::size_t n, std::uint64_t seed) {
  if (auto v = spec.violations(); !v.empty()) throw config_error(v.front());
  const std::size_t k = spec.k();
  if (n < k) {
    throw config_error("toy dataset needs N >= k (N = " + std::to_string(n) + ", k = " +
                       std::to_string(k) + ")");
  }
  Dataset d;
  d.width = spec.width;
  d.height = spec.height;
  d.class_names = spec.class_names();
  d.split = spec.split;
  d.images = Tensor({n, spec.width, spec.height, 3});
  Rng rng = Rng::stream(seed, "toy-" + spec.split);
  const double W = double(spec.width), H = double(spec.height);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % k;
    const auto& shape = spec.shapes[label / spec.colors.size()];
    const auto& color = spec.colors[label % spec.colors.size()];
    const auto& tex = spec.textures[rng.below(spec.textures.size())];
    auto rgb = toy::palette().at(color);
    const double bright = rng.uniform(-0.1, 0.1);
    const double gray = rng.uniform(0.35, 0.65);
    const double amp = rng.uniform(0.06, 0.14);
    const double period = rng.uniform(3.0, 7.0);
    const double phase = rng.uniform(0.0, period);
    const double radius = rng.uniform(0.22, 0.34) * std::min(W, H);
    const double cx = W / 2 + rng.uniform(-0.15, 0.15) * W;
    const double cy = H / 2 + rng.uniform(-0.15, 0.15) * H;
    double* px = d.images.data() + i * d.image_values();
    for (std::size_t x = 0; x < spec.width; ++x)
      for (std::size_t y = 0; y < spec.height; ++y) {
        const double u = (double(x) + 0.5 - cx) / radius, v = (double(y) + 0.5 - cy) / radius;
        const bool on = toy::inside(shape, u, v);
        const double bg = gray + amp * toy::texture_at(tex, x, y, period, phase);
        for (std::size_t c = 0; c < 3; ++c) {
          double val = on ? rgb[c] + bright : bg;
          val += spec.noise * rng.normal();
          px[(x * spec.height + y) * 3 + c] = std::clamp(val, 0.0, 1.0);
        }
      }
    d.labels.push_back(label);
    d.captions.push_back("a " + color + " " + shape + " on " + tex);
  }
  return d;
}

}  // namespace defo
