// SPDX-License-Identifier: Apache-2.0
#include "xmodal/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xmodal/attention.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/tensor_io.hpp"

namespace xmodal {

namespace {
constexpr double kUnitTolerance = 1e-9;

double cosine_distance(const Tensor& a, const Tensor& b) {
  const double num = dot(a.data(), b.data());
  const double den = std::sqrt(dot(a.data(), a.data()) * dot(b.data(), b.data()));
  if (!(den > 0.0)) throw DegenerateError("distance to a zero-length embedding");
  return 1.0 - std::clamp(num / den, -1.0, 1.0);
}

void sort_ranked(RankedList& list) {
  std::sort(list.begin(), list.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
}
}  // namespace

void ImageIndex::validate() const {
  if (n_max == 0) throw ArgumentError("index n_max must be positive");
  std::set<std::string> ids;
  std::size_t width = 0;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw ArgumentError("duplicate index id " + e.id);
    if (e.steps.size() != n_max) {
      throw ArgumentError("index entry " + e.id + " has " + std::to_string(e.steps.size()) +
                          " steps, expected " + std::to_string(n_max));
    }
    for (const auto& s : e.steps) {
      if (width == 0) width = s.values.size();
      if (s.values.size() != width) throw ArgumentError("index embeddings differ in width");
      if (std::abs(l2_norm(s.values.data()) - 1.0) > kUnitTolerance) {
        throw ArgumentError("index embedding of " + e.id + " is not unit norm");
      }
    }
  }
}

bool operator==(const ImageIndex& a, const ImageIndex& b) {
  if (a.n_max != b.n_max || a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& x = a.entries[i];
    const auto& y = b.entries[i];
    if (x.id != y.id || x.class_labels != y.class_labels || x.steps.size() != y.steps.size()) {
      return false;
    }
    for (std::size_t s = 0; s < x.steps.size(); ++s) {
      if (!(x.steps[s].values == y.steps[s].values)) return false;
    }
  }
  return true;
}

ImageIndex build_index(std::span<const DatasetItem> items, const ParamStore& params,
                       std::size_t n_max, FeatureSource& features, std::size_t batch) {
  if (n_max == 0) throw ArgumentError("build_index: n_max must be positive");
  if (batch == 0) throw ArgumentError("build_index: batch must be positive");
  ImageIndex index;
  index.n_max = n_max;
  for (std::size_t start = 0; start < items.size(); start += batch) {
    const std::size_t end = std::min(items.size(), start + batch);
    const Tensor& first = features.grid(items[start]);
    const std::size_t locations = first.rows();
    Tensor grids({(end - start) * locations, first.cols()});
    for (std::size_t i = start; i < end; ++i) {
      const Tensor& g = features.grid(items[i]);
      if (g.shape() != first.shape()) {
        throw DimensionError("grid of item " + items[i].id + " has shape " +
                             shape_string(g.shape()));
      }
      std::copy(g.data().begin(), g.data().end(),
                grids.data().begin() + (i - start) * g.size());
    }
    ad::Tape tape;
    ParamVars vars;
    for (const auto& [name, t] : params) vars.emplace(name, tape.constant(t));
    const auto steps =
        attend_batch(tape.constant(std::move(grids)), locations, n_max, AttentionVars::bind(vars));
    const ImageHeadVars head = ImageHeadVars::bind(vars);

    for (std::size_t i = start; i < end; ++i) {
      index.entries.push_back({items[i].id, items[i].class_labels, {}});
    }
    for (std::size_t s = 0; s < n_max; ++s) {
      // Embed row by row so a degenerate image can be reported by id.
      const Tensor& pooled = steps[s].pooled.value();
      for (std::size_t i = start; i < end; ++i) {
        ad::Var row = tape.constant(Tensor({1, pooled.cols()},
                                           {pooled.row(i - start).begin(),
                                            pooled.row(i - start).end()}));
        try {
          const ad::Var e = embed_image_batch(row, head);
          index.entries[i].steps.push_back({e.value().reshaped({e.value().size()})});
        } catch (const DegenerateError&) {
          throw DegenerateError("item " + items[i].id + ": image embedding at step " +
                                std::to_string(s + 1) + " is the zero vector");
        }
      }
    }
  }
  return index;
}

void save_index(const ImageIndex& index, const std::filesystem::path& path) {
  index.validate();
  if (index.entries.empty()) throw ArgumentError("cannot save an empty index");
  const std::size_t width = index.entries.front().steps.front().values.size();
  Tensor emb({index.entries.size(), index.n_max, width});
  nlohmann::json ids = nlohmann::json::array(), labels = nlohmann::json::array();
  std::size_t off = 0;
  for (const auto& e : index.entries) {
    ids.push_back(e.id);
    labels.push_back(e.class_labels);
    for (const auto& s : e.steps) {
      std::copy(s.values.data().begin(), s.values.data().end(), emb.data().begin() + off);
      off += width;
    }
  }
  NamedTensors c;
  c.metadata = nlohmann::json{{"format", "xmodal-index"},
                              {"version", 1},
                              {"n_max", index.n_max},
                              {"ids", ids},
                              {"class_labels", labels}}
                   .dump();
  c.tensors.emplace("embeddings", std::move(emb));
  write_container(path, c);
}

ImageIndex load_index(const std::filesystem::path& path) {
  const NamedTensors c = read_container(path);
  ImageIndex index;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    if (meta.value("format", "") != "xmodal-index") throw FormatError(8, "not an index container");
    index.n_max = meta.at("n_max").get<std::size_t>();
    const auto ids = meta.at("ids").get<std::vector<std::string>>();
    const auto labels = meta.at("class_labels").get<std::vector<std::vector<std::string>>>();
    const Tensor& emb = c.tensors.at("embeddings");
    if (emb.rank() != 3 || emb.shape()[0] != ids.size() || emb.shape()[1] != index.n_max ||
        labels.size() != ids.size()) {
      throw FormatError(8, "index embeddings " + shape_string(emb.shape()) + " do not match " +
                               std::to_string(ids.size()) + " ids");
    }
    const std::size_t width = emb.shape()[2];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      IndexEntry e{ids[i], labels[i], {}};
      for (std::size_t s = 0; s < index.n_max; ++s) {
        const auto begin = emb.data().begin() + (i * index.n_max + s) * width;
        e.steps.push_back({Tensor({width}, std::vector<double>(begin, begin + width))});
      }
      index.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, path.string() + ": bad index metadata: " + e.what());
  } catch (const std::out_of_range&) {
    throw FormatError(8, path.string() + ": index lacks embeddings");
  }
  index.validate();
  return index;
}

RankedList rank_single(const Embedding& query, const ImageIndex& index) {
  const Embedding one[] = {query};
  return rank_multi(one, index);
}

RankedList rank_multi(std::span<const Embedding> queries, const ImageIndex& index) {
  if (index.entries.empty()) throw ArgumentError("cannot rank against an empty index");
  const std::size_t n = queries.size();
  if (n == 0 || n > index.n_max) {
    throw ArgumentError("got " + std::to_string(n) + " queries; the index supports 1.." +
                        std::to_string(index.n_max));
  }
  std::vector<std::size_t> perm(n);
  RankedList out;
  out.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        total += cosine_distance(queries[i].values, e.steps[perm[i]].values);
      }
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    out.push_back({e.id, best});
  }
  sort_ranked(out);
  return out;
}

namespace {
void check_relevant(const RankedList& ranked, const std::set<std::string>& relevant) {
  std::size_t found = 0;
  for (const auto& r : ranked) found += relevant.count(r.id);
  if (found != relevant.size()) {
    for (const auto& id : relevant) {
      const bool present = std::any_of(ranked.begin(), ranked.end(),
                                       [&](const RankedEntry& r) { return r.id == id; });
      if (!present) throw ArgumentError("relevant id '" + id + "' is not in the ranking");
    }
  }
}
}  // namespace

double average_precision(const RankedList& ranked, const std::set<std::string>& relevant,
                         std::vector<std::string>* warnings) {
  check_relevant(ranked, relevant);
  if (relevant.empty()) {
    if (warnings) warnings->push_back("average precision of a query with no relevant items is 0");
    return 0.0;
  }
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (relevant.count(ranked[r].id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

double precision_at(const RankedList& ranked, const std::set<std::string>& relevant,
                    std::size_t k) {
  if (k == 0) throw ArgumentError("precision@k needs k >= 1");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant.count(ranked[r].id);
  return static_cast<double>(hits) / static_cast<double>(k);
}

bool same_label_multiset(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size()) return false;
  auto x = a, y = b;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

EvalReport evaluate(std::span<const EvalQuery> queries, const ImageIndex& index,
                    const RelevanceRule& rule) {
  if (queries.empty()) throw ArgumentError("evaluate: no queries");
  EvalReport report;
  std::map<std::size_t, double> p_sum;
  double ap_sum = 0.0;
  for (const auto& q : queries) {
    std::set<std::string> relevant;
    for (const auto& e : index.entries) {
      if (rule(q.class_labels, e.class_labels)) relevant.insert(e.id);
    }
    const RankedList ranked = rank_multi(q.embeddings, index);
    std::vector<std::string> warnings;
    const double ap = average_precision(ranked, relevant, &warnings);
    for (auto& w : warnings) report.warnings.push_back("query " + q.id + ": " + w);
    report.per_query.emplace_back(q.id, ap);
    ap_sum += ap;
    for (std::size_t k : kPrecisionCutoffs) p_sum[k] += precision_at(ranked, relevant, k);
  }
  const auto n = static_cast<double>(queries.size());
  report.map = ap_sum / n;
  for (const auto& [k, s] : p_sum) report.precision_at[k] = s / n;
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["map"] = map;
  nlohmann::json pq = nlohmann::json::array();
  for (const auto& [id, ap] : per_query) pq.push_back({{"query", id}, {"ap", ap}});
  doc["per_query"] = std::move(pq);
  nlohmann::json pk = nlohmann::json::object();
  for (const auto& [k, p] : precision_at) pk[std::to_string(k)] = p;
  doc["precision_at"] = std::move(pk);
  if (!warnings.empty()) doc["warnings"] = warnings;
  return doc.dump(2) + "\n";
}


std::vector<EvalQuery> embed_queries(std::span<const QuerySpec> specs, const ParamStore& params,
                                     Modality modality, FeatureSource& features) {
  const QueryHead head = QueryHead::from_params(params, modality);
  std::vector<EvalQuery> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    EvalQuery q{s.id, {}, s.class_labels};
    for (const auto& ref : s.refs) q.embeddings.push_back(embed_query(features.query(modality, ref), head));
    out.push_back(std::move(q));
  }
  return out;
}

void save_eval_queries(std::span<const EvalQuery> queries, const std::filesystem::path& path) {
  if (queries.empty()) throw ArgumentError("no queries to save");
  const std::size_t n = queries.front().embeddings.size();
  if (n == 0) throw ArgumentError("query without embeddings");
  const std::size_t width = queries.front().embeddings.front().values.size();
  Tensor emb({queries.size(), n, width});
  nlohmann::json ids = nlohmann::json::array(), labels = nlohmann::json::array();
  std::size_t off = 0;
  for (const auto& q : queries) {
    if (q.embeddings.size() != n) throw ArgumentError("queries differ in object count");
    ids.push_back(q.id);
    labels.push_back(q.class_labels);
    for (const auto& e : q.embeddings) {
      if (e.values.size() != width) throw ArgumentError("query embeddings differ in width");
      std::copy(e.values.data().begin(), e.values.data().end(), emb.data().begin() + off);
      off += width;
    }
  }
  NamedTensors c;
  c.metadata = nlohmann::json{{"format", "xmodal-queries"}, {"ids", ids}, {"class_labels", labels}}.dump();
  c.tensors.emplace("embeddings", std::move(emb));
  write_container(path, c);
}

std::vector<EvalQuery> load_eval_queries(const std::filesystem::path& path) {
  const NamedTensors c = read_container(path);
  std::vector<EvalQuery> out;
  try {
    const auto meta = nlohmann::json::parse(c.metadata);
    if (meta.value("format", "") != "xmodal-queries") throw FormatError(8, "not a query container");
    const auto ids = meta.at("ids").get<std::vector<std::string>>();
    const auto labels = meta.at("class_labels").get<std::vector<std::vector<std::string>>>();
    const Tensor& emb = c.tensors.at("embeddings");
    if (emb.rank() != 3 || emb.shape()[0] != ids.size() || labels.size() != ids.size()) {
      throw FormatError(8, "query embeddings do not match ids");
    }
    const std::size_t n = emb.shape()[1], width = emb.shape()[2];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      EvalQuery q{ids[i], {}, labels[i]};
      for (std::size_t s = 0; s < n; ++s) {
        const auto begin = emb.data().begin() + (i * n + s) * width;
        q.embeddings.push_back({Tensor({width}, std::vector<double>(begin, begin + width))});
      }
      out.push_back(std::move(q));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, path.string() + ": bad query metadata: " + e.what());
  } catch (const std::out_of_range&) {
    throw FormatError(8, path.string() + ": query container lacks embeddings");
  }
  return out;
}

}  // namespace xmodal
