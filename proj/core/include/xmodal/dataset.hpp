// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmodal/heads.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// One database image. Single-object items carry one class label, combined
/// items exactly two distinct labels.
struct DatasetItem {
  std::string id;
  std::vector<std::string> class_labels;
  std::string grid_ref;                  // path relative to the manifest
  std::vector<std::string> sketch_refs;  // fine-grained sketch query ids
  std::vector<std::string> text_refs;    // class-label text query ids

  /// Sorted labels joined with '+'; the unit of per-class splitting and of
  /// retrieval relevance.
  std::string class_key() const;
};

struct QueryFeature {
  std::string path;        // relative to the manifest
  std::string class_name;  // may be empty when unknown
};

/// Manifest JSON:
///
///   {
///     "classes": ["cat", ...],
///     "grid_shape": [h, w, M],
///     "items": [{"id": "...", "class_labels": ["cat"], "grid": "grids/x.xmt",
///                "sketches": ["..."], "texts": ["cat"]}, ...],
///     "query_features": {
///       "text":   {"cat": "queries/text/cat.xmt", ...},
///       "sketch": {"s1": {"path": "queries/sketch/s1.xmt", "class": "cat"}, ...}
///     }
///   }
///
/// A query feature is either a bare path or an object with "path" and an
/// optional "class". Without "class", an id equal to a class name belongs
/// to that class.
struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::array<std::size_t, 3> grid_shape{};
  std::vector<DatasetItem> items;
  std::map<std::string, std::map<std::string, QueryFeature>> query_features;

  std::size_t locations() const { return grid_shape[0] * grid_shape[1]; }
  std::size_t channels() const { return grid_shape[2]; }
  std::filesystem::path resolve(const std::string& ref) const { return root / ref; }
  const QueryFeature& query(Modality m, const std::string& id) const;
};

/// Parses and validates; throws ValidationError listing every violation.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& root);
std::string manifest_to_json(const Manifest& m);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Sketch ids available for each class: refs of single-class items plus
/// every sketch feature tagged with that class.
std::map<std::string, std::vector<std::string>> sketch_pools(const Manifest& m);

/// Feature lookup used by training and indexing.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  /// Grid of an item as [L x M].
  virtual const Tensor& grid(const DatasetItem& item) = 0;
  virtual const Tensor& query(Modality m, const std::string& ref) = 0;
};

/// Loads feature files named by a manifest on first use and keeps them.
class ManifestFeatures : public FeatureSource {
 public:
  explicit ManifestFeatures(const Manifest& manifest) : manifest_(manifest) {}
  const Tensor& grid(const DatasetItem& item) override;
  const Tensor& query(Modality m, const std::string& ref) override;

 private:
  const Manifest& manifest_;
  std::map<std::string, Tensor> grids_;
  std::map<std::string, Tensor> queries_;
};

/// In-memory features keyed by item id and (modality, ref).
class InMemoryFeatures : public FeatureSource {
 public:
  void add_grid(const std::string& item_id, Tensor grid) { grids_[item_id] = std::move(grid); }
  void add_query(Modality m, const std::string& ref, Tensor t) {
    queries_[{m, ref}] = std::move(t);
  }
  const Tensor& grid(const DatasetItem& item) override;
  const Tensor& query(Modality m, const std::string& ref) override;

 private:
  std::map<std::string, Tensor> grids_;
  std::map<std::pair<Modality, std::string>, Tensor> queries_;
};

}  // namespace xmodal
