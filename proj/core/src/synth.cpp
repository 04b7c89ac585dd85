// SPDX-License-Identifier: Apache-2.0
#include "xmodal/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor_io.hpp"

namespace xmodal {

void SynthConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ArgumentError(std::string(name) + " must be positive");
  };
  positive(num_classes, "num_classes");
  positive(images_per_class, "images_per_class");
  positive(grid_h, "grid_h");
  positive(grid_w, "grid_w");
  positive(channels, "channels");
  positive(text_dim, "text_dim");
  positive(sketch_dim, "sketch_dim");
  if (!(sigma_image >= 0.0 && sigma_text >= 0.0 && sigma_sketch >= 0.0)) {
    throw ArgumentError("noise sigmas must be non-negative");
  }
  if (object_cells == 0 || object_cells > grid_h * grid_w) {
    throw ArgumentError("object_cells must lie in 1.." + std::to_string(grid_h * grid_w));
  }
  if (multi) {
    if (2 * object_cells > grid_h * grid_w) {
      throw ArgumentError("multi mode needs 2*object_cells <= grid cells (" +
                          std::to_string(2 * object_cells) + " > " +
                          std::to_string(grid_h * grid_w) + ")");
    }
    if (num_classes < 3) throw ArgumentError("multi mode needs at least 3 constituent classes");
    positive(sketches_per_class, "sketches_per_class");
  } else {
    if (num_classes < 2) throw ArgumentError("need at least 2 classes");
    positive(sketches_per_image, "sketches_per_image");
  }
}

namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

Tensor unit_gaussian(Rng& rng, std::size_t n) {
  Tensor t({n});
  for (auto& v : t.data()) v = rng.normal();
  const double norm = l2_norm(t.data());
  for (auto& v : t.data()) v /= norm;
  return t;
}

Tensor random_map(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor a({rows, cols});
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : a.data()) v = s * rng.normal();
  return a;
}

Tensor project_with_noise(const Tensor& map, const Tensor& u, double sigma, Rng& rng) {
  Tensor out({map.rows()});
  for (std::size_t r = 0; r < map.rows(); ++r) {
    out[r] = dot(map.row(r), u.data()) + sigma * rng.normal();
  }
  return out;
}

}  // namespace

Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "grids");
  fs::create_directories(out_dir / "queries" / "text");
  fs::create_directories(out_dir / "queries" / "sketch");

  Rng rng(cfg.seed);
  Rng proto_rng = rng.fork(1);
  Rng map_rng = rng.fork(2);
  Rng image_rng = rng.fork(3);
  Rng query_rng = rng.fork(4);

  const std::size_t cells = cfg.grid_h * cfg.grid_w;
  const std::size_t m = cfg.channels;

  Manifest man;
  man.root = out_dir;
  man.grid_shape = {cfg.grid_h, cfg.grid_w, m};
  std::vector<Tensor> protos;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    man.classes.push_back(numbered("class", c, 2));
    protos.push_back(unit_gaussian(proto_rng, m));
  }
  const Tensor text_map = random_map(map_rng, cfg.text_dim, m);
  const Tensor sketch_map = random_map(map_rng, cfg.sketch_dim, m);

  auto& texts = man.query_features["text"];
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::string& name = man.classes[c];
    const std::string path = "queries/text/" + name + ".xmt";
    write_tensor(out_dir / path, project_with_noise(text_map, protos[c], cfg.sigma_text, query_rng));
    texts[name] = {path, name};
  }
  auto& sketches = man.query_features["sketch"];
  const auto add_sketch = [&](const std::string& id, std::size_t c) {
    const std::string path = "queries/sketch/" + id + ".xmt";
    write_tensor(out_dir / path,
                 project_with_noise(sketch_map, protos[c], cfg.sigma_sketch, query_rng));
    sketches[id] = {path, man.classes[c]};
  };

  // Class groups: single classes, or every unordered pair in multi mode.
  std::vector<std::vector<std::size_t>> groups;
  if (cfg.multi) {
    for (std::size_t a = 0; a < cfg.num_classes; ++a)
      for (std::size_t b = a + 1; b < cfg.num_classes; ++b) groups.push_back({a, b});
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
      for (std::size_t k = 0; k < cfg.sketches_per_class; ++k)
        add_sketch(man.classes[c] + numbered("_pool", k, 2), c);
  } else {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) groups.push_back({c});
  }

  std::vector<std::size_t> cell_order(cells);
  std::size_t serial = 0;
  for (const auto& group : groups) {
    for (std::size_t k = 0; k < cfg.images_per_class; ++k) {
      DatasetItem item;
      item.id = numbered("img", serial++, 5);
      Tensor grid({cfg.grid_h, cfg.grid_w, m});
      auto values = grid.data();
      for (auto& v : values) v = cfg.sigma_image * image_rng.normal();
      std::iota(cell_order.begin(), cell_order.end(), std::size_t{0});
      image_rng.shuffle(std::span(cell_order));
      for (std::size_t g = 0; g < group.size(); ++g) {
        const Tensor& u = protos[group[g]];
        for (std::size_t j = 0; j < cfg.object_cells; ++j) {
          const std::size_t cell = cell_order[g * cfg.object_cells + j];
          for (std::size_t d = 0; d < m; ++d) values[cell * m + d] += u[d];
        }
        item.class_labels.push_back(man.classes[group[g]]);
        item.text_refs.push_back(man.classes[group[g]]);
      }
      item.grid_ref = "grids/" + item.id + ".xmt";
      write_tensor(out_dir / item.grid_ref, grid);
      if (!cfg.multi) {
        for (std::size_t s = 0; s < cfg.sketches_per_image; ++s) {
          const std::string sid = item.id + numbered("_s", s, 2);
          add_sketch(sid, group[0]);
          item.sketch_refs.push_back(sid);
        }
      }
      man.items.push_back(std::move(item));
    }
  }

  save_manifest(man, out_dir / "manifest.json");
  return load_manifest(out_dir / "manifest.json");
}

}  // namespace xmodal
