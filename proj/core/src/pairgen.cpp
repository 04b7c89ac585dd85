// SPDX-License-Identifier: Apache-2.0
#include "xmodal/pairgen.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

void PairGenConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie in (0, 1)");
  }
  if (n_m == 0) throw ArgumentError("n_m must be at least 1");
}

namespace {

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

/// Item indices grouped by class key.
std::map<std::string, std::vector<std::size_t>> by_class(std::span<const DatasetItem> items) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < items.size(); ++i) out[items[i].class_key()].push_back(i);
  return out;
}

/// Uniform draw among items whose class key differs from `key`.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::span<const DatasetItem> items) {
    for (std::size_t i = 0; i < items.size(); ++i) keys_.push_back(items[i].class_key());
    groups_ = by_class(items);
    if (groups_.size() < 2) {
      throw ProtocolError("negative pairs need at least two classes, found " +
                          std::to_string(groups_.size()));
    }
  }

  std::size_t draw(const std::string& key, Rng& rng) const {
    const auto own = groups_.find(key);
    const std::size_t excluded = own == groups_.end() ? 0 : own->second.size();
    std::uint64_t k = rng.below(keys_.size() - excluded);
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i] == key) continue;
      if (k-- == 0) return i;
    }
    throw ProtocolError("no eligible negative image for class " + key);
  }

 private:
  std::vector<std::string> keys_;
  std::map<std::string, std::vector<std::size_t>> groups_;
};

void require_single(const DatasetItem& item) {
  if (item.class_labels.size() != 1) {
    throw ProtocolError("single-object protocol given item " + item.id + " with " +
                        std::to_string(item.class_labels.size()) + " labels");
  }
}

}  // namespace

DatasetSplit split_dataset(std::span<const DatasetItem> items, const PairGenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<bool> is_train(items.size(), false);
  for (auto& [key, idx] : by_class(items)) {
    if (idx.size() < 2) {
      throw ProtocolError("class '" + key + "' has " + std::to_string(idx.size()) +
                          " item(s); splitting needs at least 2");
    }
    rng.shuffle(std::span(idx));
    auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * cfg.train_fraction + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_train; ++k) is_train[idx[k]] = true;
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (is_train[i] ? split.train : split.test).push_back(items[i]);
  }
  return split;
}

PoolSplit split_pools(const SketchPools& pools, const PairGenConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(0x706f6f6c);
  PoolSplit out;
  for (const auto& [cls, ids] : pools) {
    if (ids.size() < 2) {
      out.train[cls] = ids;
      out.test[cls] = ids;
      continue;
    }
    std::vector<std::string> order = ids;
    std::sort(order.begin(), order.end());
    rng.shuffle(std::span(order));
    auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(order.size()) * cfg.train_fraction + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    out.train[cls].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test[cls].assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(out.train[cls].begin(), out.train[cls].end());
    std::sort(out.test[cls].begin(), out.test[cls].end());
  }
  return out;
}

std::vector<TrainingPair> gen_single_sketch_pairs(std::span<const DatasetItem> items,
                                                  const PairGenConfig& cfg) {
  cfg.validate();
  const NegativeSampler sampler(items);
  Rng rng(cfg.seed);
  std::vector<TrainingPair> positives, negatives;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& item = items[i];
    require_single(item);
    const std::string& cls = item.class_labels[0];
    for (const auto& sketch : item.sketch_refs) {
      positives.push_back({{sketch}, {cls}, i, 1});
      negatives.push_back({{sketch}, {cls}, sampler.draw(item.class_key(), rng), -1});
    }
  }
  if (positives.empty()) throw ProtocolError("no training item links any sketch");
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

std::vector<TrainingPair> gen_single_text_pairs(std::span<const DatasetItem> items,
                                                const PairGenConfig& cfg) {
  cfg.validate();
  const NegativeSampler sampler(items);
  Rng rng(cfg.seed);
  std::vector<TrainingPair> positives, negatives;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& item = items[i];
    require_single(item);
    const std::string& cls = item.class_labels[0];
    const std::string text = item.text_refs.empty() ? cls : item.text_refs[0];
    positives.push_back({{text}, {cls}, i, 1});
    negatives.push_back({{text}, {cls}, sampler.draw(item.class_key(), rng), -1});
  }
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

std::vector<TrainingPair> gen_multi_pairs(std::span<const DatasetItem> items, Modality modality,
                                          const std::map<std::string, std::vector<std::string>>& pools,
                                          const PairGenConfig& cfg) {
  cfg.validate();
  const NegativeSampler sampler(items);
  Rng rng(cfg.seed);
  std::vector<TrainingPair> positives, negatives;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& item = items[i];
    if (item.class_labels.size() != 2 || item.class_labels[0] == item.class_labels[1]) {
      throw ProtocolError("multi-object protocol needs two distinct labels, item " + item.id);
    }
    const auto labels = sorted(item.class_labels);
    const std::string key = item.class_key();
    if (modality == Modality::kText) {
      std::vector<std::string> refs;
      for (const auto& c : labels) {
        const auto pos = std::find(item.class_labels.begin(), item.class_labels.end(), c) -
                         item.class_labels.begin();
        refs.push_back(static_cast<std::size_t>(pos) < item.text_refs.size()
                           ? item.text_refs[static_cast<std::size_t>(pos)]
                           : c);
      }
      positives.push_back({refs, labels, i, 1});
      negatives.push_back({refs, labels, sampler.draw(key, rng), -1});
      continue;
    }
    for (std::size_t r = 0; r < cfg.n_m; ++r) {
      std::vector<std::string> refs;
      for (const auto& c : labels) {
        const auto pool = pools.find(c);
        if (pool == pools.end() || pool->second.empty()) {
          throw ProtocolError("no sketches available for class '" + c + "'");
        }
        refs.push_back(pool->second[rng.below(pool->second.size())]);
      }
      positives.push_back({refs, labels, i, 1});
      negatives.push_back({refs, labels, sampler.draw(key, rng), -1});
    }
  }
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

void check_pairs(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items) {
  for (const auto& p : pairs) {
    if (p.item >= items.size()) throw ProtocolError("pair references item out of range");
    if (p.query_refs.empty() || p.query_refs.size() > 2 ||
        p.query_refs.size() != p.query_classes.size()) {
      throw ProtocolError("pair must hold 1 or 2 query features with classes");
    }
    const bool same = sorted(p.query_classes) == sorted(items[p.item].class_labels);
    if ((p.y == 1) != same || (p.y != 1 && p.y != -1)) {
      throw ProtocolError("pair label " + std::to_string(p.y) + " contradicts classes of item " +
                          items[p.item].id);
    }
  }
}

}  // namespace xmodal

namespace xmodal {

std::vector<QuerySpec> gen_test_queries(std::span<const DatasetItem> test_items,
                                        Modality modality,
                                        const std::map<std::string, std::vector<std::string>>& pools,
                                        std::uint64_t seed) {
  std::vector<QuerySpec> out;
  if (modality == Modality::kText) {
    std::map<std::string, const DatasetItem*> by_key;
    for (const auto& it : test_items) by_key.emplace(it.class_key(), &it);
    for (const auto& [key, item] : by_key) {
      const auto labels = sorted(item->class_labels);
      QuerySpec q{"text:" + key, {}, labels};
      for (const auto& c : labels) {
        const auto pos = static_cast<std::size_t>(
            std::find(item->class_labels.begin(), item->class_labels.end(), c) -
            item->class_labels.begin());
        q.refs.push_back(pos < item->text_refs.size() ? item->text_refs[pos] : c);
      }
      out.push_back(std::move(q));
    }
    return out;
  }
  Rng rng(seed);
  for (const auto& it : test_items) {
    if (it.class_labels.size() == 1) {
      for (const auto& s : it.sketch_refs) {
        out.push_back({"sketch:" + s, {s}, it.class_labels});
      }
      continue;
    }
    const auto labels = sorted(it.class_labels);
    QuerySpec q{"sketch:" + it.id, {}, labels};
    for (const auto& c : labels) {
      const auto pool = pools.find(c);
      if (pool == pools.end() || pool->second.empty()) {
        throw ProtocolError("no sketches available for class '" + c + "'");
      }
      q.refs.push_back(pool->second[rng.below(pool->second.size())]);
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw ProtocolError("held-out items yield no sketch queries");
  return out;
}

}  // namespace xmodal
