// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/heads.hpp"

namespace xmodal {

using SketchPools = std::map<std::string, std::vector<std::string>>;

struct PairGenConfig {
  std::uint64_t seed = 0;
  std::size_t n_m = 5;           // sketch combinations per combined-class image
  double train_fraction = 0.8;

  void validate() const;
};

/// A query (one feature per object) matched against one image.
struct TrainingPair {
  std::vector<std::string> query_refs;
  std::vector<std::string> query_classes;  // class of each query feature
  std::size_t item = 0;                    // index into the item list given to the generator
  int y = 1;                               // +1 same class, -1 different
};

struct DatasetSplit {
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> test;
};

/// Per class key, floor(n * train_fraction) items go to training (at least
/// one goes to test). Each side keeps the input order.
DatasetSplit split_dataset(std::span<const DatasetItem> items, const PairGenConfig& cfg);

struct PoolSplit {
  SketchPools train;
  SketchPools test;
};

/// Splits every class pool with the same floor(n * train_fraction) rule, so
/// held-out queries never reuse a training sketch. Pools of one sketch are
/// shared by both sides.
PoolSplit split_pools(const SketchPools& pools, const PairGenConfig& cfg);

/// Every linked sketch of an image is a positive; each sketch also gets one
/// negative with a uniformly drawn image of another class.
std::vector<TrainingPair> gen_single_sketch_pairs(std::span<const DatasetItem> items,
                                                  const PairGenConfig& cfg);

/// One positive per image with its class-label text; one negative per image
/// pairing that text with an image of another class.
std::vector<TrainingPair> gen_single_text_pairs(std::span<const DatasetItem> items,
                                                const PairGenConfig& cfg);

/// Combined-class images. Sketch mode: n_m positives per image, each with
/// one sketch per constituent class drawn from `pools`. Text mode: one
/// positive per image with both class-label texts. Each positive gets a
/// negative with an image of a different combined class. Query order follows
/// the sorted labels.
std::vector<TrainingPair> gen_multi_pairs(std::span<const DatasetItem> items, Modality modality,
                                          const SketchPools& pools,
                                          const PairGenConfig& cfg);

/// Checks the label invariant of every pair; throws ProtocolError on the
/// first violation.
void check_pairs(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items);

/// A retrieval query described by feature refs, before embedding.
struct QuerySpec {
  std::string id;
  std::vector<std::string> refs;
  std::vector<std::string> class_labels;
};

/// Test-phase queries over held-out items.
///   text, single:  one query per class present, its class-label text
///   text, multi:   one query per combined class present, both label texts
///   sketch, single: every sketch linked to a held-out item
///   sketch, multi:  per held-out item, one sketch per constituent class
///                   drawn from `pools`
std::vector<QuerySpec> gen_test_queries(std::span<const DatasetItem> test_items,
                                        Modality modality,
                                        const SketchPools& pools,
                                        std::uint64_t seed);

}  // namespace xmodal
