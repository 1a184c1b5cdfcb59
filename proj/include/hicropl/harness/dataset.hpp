// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hicropl/encoders/towers.hpp"
#include "hicropl/io/param_io.hpp"

namespace hicropl {

// Synthetic compositional classes: every (color, shape) pair is a class
// named "color shape".
struct DatasetSpec {
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes{"square", "circle", "triangle"};
  std::size_t image_size = 32;
  double noise_std = 0.15;
  std::size_t samples_per_class = 40;
  std::uint64_t seed = 0;
  // Centered shape at a fixed scale instead of random placement.
  bool fixed_position = false;
  // Gray level of the canvas behind the shape. The default task sits on a
  // dim gray canvas while the teacher is pretrained on black, so prompts have
  // a domain gap to close.
  double background = 0.1;

  std::size_t num_classes() const { return colors.size() * shapes.size(); }
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  // Class c is (colors[c / |shapes|], shapes[c % |shapes|]).
  std::size_t num_colors = 0;
  std::size_t num_shapes = 0;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t size() const { return images.size(); }
};

inline std::array<double, 3> color_rgb(const std::string& name) {
  if (name == "red") return {1.0, 0.0, 0.0};
  if (name == "green") return {0.0, 1.0, 0.0};
  if (name == "blue") return {0.0, 0.0, 1.0};
  if (name == "yellow") return {1.0, 1.0, 0.0};
  if (name == "orange") return {1.0, 0.5, 0.0};
  if (name == "purple") return {0.5, 0.0, 0.5};
  if (name == "white") return {1.0, 1.0, 1.0};
  if (name == "cyan") return {0.0, 1.0, 1.0};
  throw SpecError("unknown color '" + name + "'");
}

enum class ShapeKind { kSquare, kCircle, kTriangle };

inline ShapeKind parse_shape(const std::string& name) {
  if (name == "square") return ShapeKind::kSquare;
  if (name == "circle") return ShapeKind::kCircle;
  if (name == "triangle") return ShapeKind::kTriangle;
  throw SpecError("unknown shape '" + name + "'");
}

// Point-in-shape test for a pixel center (x, y) and a shape centered at
// (cx, cy) with half-extent r. Triangles point up.
inline bool inside(ShapeKind kind, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case ShapeKind::kSquare: return std::fabs(dx) <= r && std::fabs(dy) <= r;
    case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::kTriangle: {
      if (dy < -r || dy > r) return false;
      return std::fabs(dx) <= (dy + r) / 2.0;
    }
  }
  return false;
}

inline Image render_shape(ShapeKind kind, const std::array<double, 3>& rgb, std::size_t size, double cx, double cy,
                          double r, double background = 0.0) {
  Image img{size, size, 3, std::vector<double>(size * size * 3, background)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (inside(kind, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, cx, cy, r))
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
  return img;
}

inline Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.num_classes() < 6) throw SpecError("need at least 6 color x shape classes");
  if (!(spec.noise_std >= 0.0)) throw SpecError("noise_std must be non-negative");
  if (!(spec.background >= 0.0 && spec.background <= 1.0)) throw SpecError("background must lie in [0, 1]");
  if (spec.image_size < 8) throw SpecError("image_size must be at least 8");
  if (spec.samples_per_class == 0) throw SpecError("samples_per_class must be positive");

  std::vector<std::array<double, 3>> rgb;
  for (const auto& c : spec.colors) rgb.push_back(color_rgb(c));
  std::vector<ShapeKind> kinds;
  for (const auto& s : spec.shapes) kinds.push_back(parse_shape(s));

  Dataset ds;
  ds.num_colors = spec.colors.size();
  ds.num_shapes = spec.shapes.size();
  Rng rng(spec.seed);
  const double size = static_cast<double>(spec.image_size);
  for (std::size_t ci = 0; ci < spec.colors.size(); ++ci)
    for (std::size_t si = 0; si < spec.shapes.size(); ++si) {
      const std::size_t label = ds.class_names.size();
      ds.class_names.push_back(spec.colors[ci] + " " + spec.shapes[si]);
      for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
        double r = size / 4.0, cx = size / 2.0, cy = size / 2.0;
        if (!spec.fixed_position) {
          r = rng.uniform(size / 6.0, size / 3.0);
          cx = rng.uniform(r, size - r);
          cy = rng.uniform(r, size - r);
        }
        Image img = render_shape(kinds[si], rgb[ci], spec.image_size, cx, cy, r, spec.background);
        if (spec.noise_std > 0.0)
          for (auto& p : img.pixels) p += rng.normal(0.0, spec.noise_std);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
      }
    }
  return ds;
}

inline std::uint64_t dataset_hash(const Dataset& ds) {
  io::Fnv1a h;
  for (const auto& name : ds.class_names) {
    h.update(name);
    h.update("\n");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::uint64_t label = ds.labels[i];
    h.update(&label, sizeof(label));
    h.update_doubles(ds.images[i].pixels);
  }
  return h.digest();
}

// Images and labels as two checkpoint blocks, class names in the manifest.
inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::vector<double> pixels, labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    pixels.insert(pixels.end(), ds.images[i].pixels.begin(), ds.images[i].pixels.end());
    labels.push_back(static_cast<double>(ds.labels[i]));
  }
  const auto& img = ds.images.front();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  io::write_blocks(out, {{"images", {ds.size(), img.height, img.width, img.channels}, std::move(pixels)},
                         {"labels", {ds.size()}, std::move(labels)}});
}

inline Dataset load_dataset(const std::string& path, std::vector<std::string> class_names, std::size_t num_colors,
                            std::size_t num_shapes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto blocks = io::read_blocks(in);
  if (blocks.size() != 2 || blocks[0].name != "images" || blocks[1].name != "labels" || blocks[0].shape.size() != 4)
    throw IoError(path + " is not a dataset file");
  Dataset ds;
  ds.class_names = std::move(class_names);
  ds.num_colors = num_colors;
  ds.num_shapes = num_shapes;
  const auto& s = blocks[0].shape;
  const std::size_t per = s[1] * s[2] * s[3];
  for (std::size_t i = 0; i < s[0]; ++i) {
    ds.images.push_back({s[1], s[2], s[3], {blocks[0].values.begin() + static_cast<long>(i * per),
                                            blocks[0].values.begin() + static_cast<long>((i + 1) * per)}});
    ds.labels.push_back(static_cast<std::size_t>(blocks[1].values[i]));
  }
  return ds;
}

}  // namespace hicropl
