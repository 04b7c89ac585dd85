// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "xmodal/dataset.hpp"

namespace xmodal {

/// Desk-scale stand-in for a photo/sketch/text corpus.
///
/// Each class c gets a random unit prototype u_c in R^M. An image grid holds
/// u_c + noise on `object_cells` random cells and pure noise elsewhere; in
/// multi mode two classes occupy disjoint cell sets and every unordered pair
/// of classes forms one combined class. Text features are A_text u_c + noise
/// (one per class); sketch features are A_sketch u_c + noise, drawn fresh
/// per image (single mode) or per class pool (multi mode). A_text and
/// A_sketch are fixed Gaussian maps with entries of variance 1/rows, so
/// A u_c has unit expected norm like the image prototypes.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t num_classes = 10;
  std::size_t images_per_class = 50;
  std::size_t grid_h = 7;
  std::size_t grid_w = 7;
  std::size_t channels = 512;
  std::size_t object_cells = 8;
  double sigma_image = 0.1;
  double sigma_text = 0.05;
  double sigma_sketch = 0.2;
  bool multi = false;
  std::size_t text_dim = 1000;
  std::size_t sketch_dim = 4096;
  std::size_t sketches_per_image = 2;  // single mode
  std::size_t sketches_per_class = 8;  // multi mode pool

  /// Throws ArgumentError on inconsistent settings.
  void validate() const;
};

/// Writes manifest.json, grids/, queries/text/ and queries/sketch/ under
/// `out_dir` and returns the validated manifest. Output bytes depend only on
/// the config.
Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace xmodal
