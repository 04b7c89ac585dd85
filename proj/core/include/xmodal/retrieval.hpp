// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/heads.hpp"
#include "xmodal/pairgen.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct IndexEntry {
  std::string id;
  std::vector<std::string> class_labels;
  std::vector<Embedding> steps;  // one unit embedding per attention step
};

/// Precomputed image embeddings, one per attention step 1..n_max.
struct ImageIndex {
  std::size_t n_max = 0;
  std::vector<IndexEntry> entries;

  /// Throws ArgumentError unless every entry has n_max unit-norm embeddings
  /// of one width and ids are unique.
  void validate() const;
  friend bool operator==(const ImageIndex& a, const ImageIndex& b);
};

/// Runs attention for n_max steps on every item and embeds each pooled
/// feature. Items are processed in batches of `batch` grids.
ImageIndex build_index(std::span<const DatasetItem> items, const ParamStore& params,
                       std::size_t n_max, FeatureSource& features, std::size_t batch = 32);

void save_index(const ImageIndex& index, const std::filesystem::path& path);
ImageIndex load_index(const std::filesystem::path& path);

struct RankedEntry {
  std::string id;
  double distance = 0.0;
};

/// Ascending distance, ties broken by ascending id.
using RankedList = std::vector<RankedEntry>;

/// distance = 1 - cos(q, step-1 embedding).
RankedList rank_single(const Embedding& query, const ImageIndex& index);

/// For n queries, distance = min over assignments of queries to the first n
/// steps of the summed (1 - cos). n = 1 is rank_single.
RankedList rank_multi(std::span<const Embedding> queries, const ImageIndex& index);

/// Mean of precision@r over the ranks r of relevant hits. An empty relevant
/// set yields 0 and appends a message to `warnings` when given.
double average_precision(const RankedList& ranked, const std::set<std::string>& relevant,
                         std::vector<std::string>* warnings = nullptr);

double precision_at(const RankedList& ranked, const std::set<std::string>& relevant,
                    std::size_t k);

struct EvalQuery {
  std::string id;
  std::vector<Embedding> embeddings;
  std::vector<std::string> class_labels;
};

/// Decides whether an indexed item is relevant to a query.
using RelevanceRule =
    std::function<bool(const std::vector<std::string>& query_labels,
                       const std::vector<std::string>& item_labels)>;

/// Relevant when the label multisets coincide: same class for single-object
/// queries, same combined class for two-object queries.
bool same_label_multiset(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct EvalReport {
  double map = 0.0;
  std::vector<std::pair<std::string, double>> per_query;
  std::map<std::size_t, double> precision_at;  // k -> mean P@k
  std::vector<std::string> warnings;

  /// {"map": ..., "per_query": [{"query": id, "ap": ...}], "precision_at": {"1": ...}}
  std::string to_json() const;
};

inline constexpr std::size_t kPrecisionCutoffs[] = {1, 5, 10};

EvalReport evaluate(std::span<const EvalQuery> queries, const ImageIndex& index,
                    const RelevanceRule& rule = same_label_multiset);

}  // namespace xmodal

namespace xmodal {

/// Embeds query specs with the query head of `modality`.
std::vector<EvalQuery> embed_queries(std::span<const QuerySpec> specs,
                                     const ParamStore& params, Modality modality,
                                     FeatureSource& features);

/// Precomputed query embeddings: container tensor "embeddings" [Q x n x E]
/// with ids and labels in the metadata.
void save_eval_queries(std::span<const EvalQuery> queries, const std::filesystem::path& path);
std::vector<EvalQuery> load_eval_queries(const std::filesystem::path& path);

}  // namespace xmodal
