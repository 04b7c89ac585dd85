// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "support.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/pairgen.hpp"
#include "xmodal/synth.hpp"

using namespace xmodal;
using namespace xmodal::testing;

namespace {

SynthConfig tiny_single() {
  SynthConfig c;
  c.num_classes = 4;
  c.images_per_class = 10;
  c.grid_h = 3;
  c.grid_w = 3;
  c.channels = 16;
  c.object_cells = 3;
  c.text_dim = 12;
  c.sketch_dim = 20;
  return c;
}

SynthConfig tiny_multi() {
  SynthConfig c = tiny_single();
  c.multi = true;
  c.images_per_class = 5;
  return c;
}

std::vector<DatasetItem> make_items(const std::vector<std::pair<std::string, std::size_t>>& counts,
                                    std::size_t sketches = 1) {
  std::vector<DatasetItem> items;
  for (const auto& [key, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      DatasetItem it;
      it.id = key + "_" + std::to_string(i);
      for (std::size_t a = 0, b; a <= key.size(); a = b + 1) {
        b = key.find('+', a);
        if (b == std::string::npos) b = key.size();
        it.class_labels.push_back(key.substr(a, b - a));
        it.text_refs.push_back(key.substr(a, b - a));
      }
      for (std::size_t s = 0; s < sketches; ++s) it.sketch_refs.push_back(it.id + "_s" + std::to_string(s));
      items.push_back(it);
    }
  }
  return items;
}

std::multiset<std::string> labels(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

/// Pair invariant written out independently of check_pairs.
void check_invariants(const std::vector<TrainingPair>& pairs, const std::vector<DatasetItem>& items) {
  std::size_t pos = 0, neg = 0;
  for (const auto& p : pairs) {
    REQUIRE(p.item < items.size());
    REQUIRE(p.query_refs.size() == p.query_classes.size());
    const bool same = labels(p.query_classes) == labels(items[p.item].class_labels);
    if (p.y == 1) {
      CHECK(same);
      ++pos;
    } else {
      CHECK(p.y == -1);
      CHECK_FALSE(same);
      ++neg;
    }
  }
  CHECK(pos == neg);
}

}  // namespace

TEST_CASE("synthetic single-object dataset shape") {
  TempDir dir;
  SynthConfig cfg = tiny_single();
  const Manifest m = generate_synthetic(cfg, dir.path());
  CHECK(m.items.size() == 40);
  CHECK(m.classes.size() == 4);
  CHECK(m.grid_shape == std::array<std::size_t, 3>{3, 3, 16});
  for (const auto& it : m.items) {
    CHECK(it.class_labels.size() == 1);
    CHECK(it.sketch_refs.size() == cfg.sketches_per_image);
    CHECK(read_tensor(m.resolve(it.grid_ref)).shape() == Shape{3, 3, 16});
  }
  CHECK(read_tensor(m.resolve(m.query(Modality::kText, "class00").path)).size() == 12);
  CHECK(read_tensor(m.resolve(m.query(Modality::kSketch, m.items[0].sketch_refs[0]).path)).size() == 20);
}

TEST_CASE("default synthetic grids are 7x7x512 over 500 items") {
  TempDir dir;
  SynthConfig cfg;  // C = 10, 50 images per class
  cfg.sketch_dim = 8;
  cfg.text_dim = 8;
  const Manifest m = generate_synthetic(cfg, dir.path());
  CHECK(m.items.size() == 500);
  CHECK(m.grid_shape == std::array<std::size_t, 3>{7, 7, 512});
}

TEST_CASE("synthetic generation is byte-reproducible") {
  TempDir a, b;
  generate_synthetic(tiny_multi(), a.path());
  generate_synthetic(tiny_multi(), b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    CHECK(read_file_bytes(e.path()) == read_file_bytes(b.path() / rel));
    ++files;
  }
  CHECK(files > 50);
  SynthConfig other = tiny_multi();
  other.seed = 43;
  TempDir c;
  generate_synthetic(other, c.path());
  CHECK(read_file_bytes(a / "grids/img00000.xmt") != read_file_bytes(c / "grids/img00000.xmt"));
}

TEST_CASE("multi-object items carry two labels on disjoint cells") {
  TempDir dir;
  SynthConfig cfg = tiny_multi();
  cfg.sigma_image = 0.0;
  const Manifest m = generate_synthetic(cfg, dir.path());
  CHECK(m.items.size() == 6 * 5);  // C(4, 2) combined classes
  std::set<std::string> keys;
  for (const auto& it : m.items) {
    REQUIRE(it.class_labels.size() == 2);
    CHECK(it.class_labels[0] != it.class_labels[1]);
    keys.insert(it.class_key());
    // Without noise every cell is exactly zero or exactly one prototype.
    const Tensor g = read_tensor(m.resolve(it.grid_ref)).reshaped({9, 16});
    std::size_t nonzero = 0;
    for (std::size_t r = 0; r < 9; ++r) nonzero += l2_norm(g.row(r)) > 0.0;
    CHECK(nonzero == 2 * cfg.object_cells);
  }
  CHECK(keys.size() == 6);
  const auto pools = sketch_pools(m);
  for (const auto& c : m.classes) CHECK(pools.at(c).size() == cfg.sketches_per_class);
}

TEST_CASE("synthetic config validation") {
  TempDir dir;
  SynthConfig c = tiny_multi();
  c.object_cells = 5;  // 2 * 5 > 9 cells
  CHECK_THROWS_AS(generate_synthetic(c, dir.path()), ArgumentError);
  c = tiny_single();
  c.object_cells = 10;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_single();
  c.sigma_text = -1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_single();
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("synthetic classes are separable in grid means") {
  TempDir dir;
  SynthConfig cfg = tiny_single();
  cfg.channels = 64;
  cfg.sigma_image = 0.1;
  const Manifest m = generate_synthetic(cfg, dir.path());
  std::vector<Tensor> means;
  for (const auto& it : m.items) {
    const Tensor g = read_tensor(m.resolve(it.grid_ref)).reshaped({9, 64});
    Tensor mean({64});
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t j = 0; j < 64; ++j) mean[j] += g(r, j) / 9.0;
    means.push_back(mean);
  }
  long double within = 0, between = 0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      const long double c = ref_cosine(means[i].data(), means[j].data());
      if (m.items[i].class_labels == m.items[j].class_labels) {
        within += c;
        ++nw;
      } else {
        between += c;
        ++nb;
      }
    }
  CHECK(within / nw > between / nb + 0.1);
}

TEST_CASE("split keeps per-class proportions and partitions the items") {
  const auto items = make_items({{"a", 10}, {"b", 7}, {"c", 2}});
  PairGenConfig cfg;
  cfg.seed = 3;
  const DatasetSplit s = split_dataset(items, cfg);
  std::map<std::string, int> train, test;
  for (const auto& it : s.train) ++train[it.class_key()];
  for (const auto& it : s.test) ++test[it.class_key()];
  CHECK(train["a"] == 8);
  CHECK(test["a"] == 2);
  CHECK(train["b"] == 5);  // floor(5.6)
  CHECK(test["b"] == 2);
  CHECK(train["c"] == 1);
  CHECK(test["c"] == 1);
  std::set<std::string> seen;
  for (const auto& it : s.train) seen.insert(it.id);
  for (const auto& it : s.test) CHECK(seen.insert(it.id).second);
  CHECK(seen.size() == items.size());

  const DatasetSplit again = split_dataset(items, cfg);
  CHECK(again.train.size() == s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(again.train[i].id == s.train[i].id);
}

TEST_CASE("split rejects a class with fewer than two items") {
  const auto items = make_items({{"a", 5}, {"lonely", 1}});
  try {
    split_dataset(items, {});
    FAIL("accepted");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }
  PairGenConfig bad;
  bad.train_fraction = 1.0;
  CHECK_THROWS_AS(split_dataset(make_items({{"a", 5}}), bad), ArgumentError);
  bad.train_fraction = 0.8;
  bad.n_m = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("single-object sketch pairs") {
  const auto items = make_items({{"a", 4}, {"b", 4}, {"c", 4}}, 5);
  const auto pairs = gen_single_sketch_pairs(items, {});
  CHECK(pairs.size() == 12 * 5 * 2);
  check_invariants(pairs, items);
  std::size_t first_image_pos = 0;
  for (const auto& p : pairs) first_image_pos += p.y == 1 && p.item == 0;
  CHECK(first_image_pos == 5);
  CHECK_NOTHROW(check_pairs(pairs, items));
  CHECK_THROWS_AS(gen_single_sketch_pairs(make_items({{"a", 3}}), {}), ProtocolError);
}

TEST_CASE("single-object text pairs") {
  const auto items = make_items({{"a", 200}, {"b", 200}});
  const auto pairs = gen_single_text_pairs(items, {});
  CHECK(pairs.size() == 800);
  check_invariants(pairs, items);
  for (const auto& p : pairs) {
    REQUIRE(p.query_refs.size() == 1);
    if (p.y == 1) CHECK(p.query_refs[0] == items[p.item].class_labels[0]);
  }
}

TEST_CASE("multi-object pairs") {
  const auto items = make_items({{"a+b", 3}, {"a+c", 3}, {"b+c", 3}}, 0);
  const SketchPools pools{{"a", {"a0", "a1"}}, {"b", {"b0"}}, {"c", {"c0", "c1", "c2"}}};
  PairGenConfig cfg;
  cfg.n_m = 3;
  const auto sketch = gen_multi_pairs(items, Modality::kSketch, pools, cfg);
  CHECK(sketch.size() == 9 * 3 * 2);
  check_invariants(sketch, items);
  for (const auto& p : sketch) {
    REQUIRE(p.query_refs.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& pool = pools.at(p.query_classes[k]);
      CHECK(std::find(pool.begin(), pool.end(), p.query_refs[k]) != pool.end());
    }
  }
  const auto text = gen_multi_pairs(items, Modality::kText, pools, cfg);
  CHECK(text.size() == 9 * 2);
  check_invariants(text, items);
  for (const auto& p : text) CHECK(p.query_refs == p.query_classes);

  const SketchPools missing{{"a", {"a0"}}, {"b", {}}};
  CHECK_THROWS_AS(gen_multi_pairs(items, Modality::kSketch, missing, cfg), ProtocolError);
}

TEST_CASE("pair generation is seeded") {
  const auto items = make_items({{"a", 6}, {"b", 6}, {"c", 6}}, 2);
  PairGenConfig one, two;
  one.seed = 1;
  two.seed = 2;
  const auto a = gen_single_sketch_pairs(items, one);
  const auto b = gen_single_sketch_pairs(items, one);
  const auto c = gen_single_sketch_pairs(items, two);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same &= a[i].item == b[i].item && a[i].query_refs == b[i].query_refs;
    differs |= a[i].item != c[i].item;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("check_pairs catches a broken label") {
  const auto items = make_items({{"a", 2}, {"b", 2}});
  std::vector<TrainingPair> pairs{{{"a"}, {"a"}, 2, 1}};
  CHECK_THROWS_AS(check_pairs(pairs, items), ProtocolError);
  pairs = {{{"a"}, {"a"}, 0, -1}};
  CHECK_THROWS_AS(check_pairs(pairs, items), ProtocolError);
}

TEST_CASE("pool split keeps held-out sketches out of training") {
  SketchPools pools;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 8; ++k) pools["c" + std::to_string(c)].push_back("c" + std::to_string(c) + "_" + std::to_string(k));
  pools["solo"] = {"s0"};
  const PoolSplit s = split_pools(pools, {});
  for (int c = 0; c < 3; ++c) {
    const std::string key = "c" + std::to_string(c);
    CHECK(s.train.at(key).size() == 6);
    CHECK(s.test.at(key).size() == 2);
    for (const auto& id : s.test.at(key))
      CHECK(std::find(s.train.at(key).begin(), s.train.at(key).end(), id) == s.train.at(key).end());
  }
  CHECK(s.train.at("solo") == s.test.at("solo"));
}

TEST_CASE("test queries per protocol") {
  const auto single = make_items({{"a", 2}, {"b", 3}}, 2);
  const auto text = gen_test_queries(single, Modality::kText, {}, 1);
  CHECK(text.size() == 2);
  CHECK(text[0].refs == std::vector<std::string>{"a"});
  const auto sketch = gen_test_queries(single, Modality::kSketch, {}, 1);
  CHECK(sketch.size() == 10);

  const auto multi = make_items({{"a+b", 2}, {"a+c", 1}}, 0);
  const SketchPools pools{{"a", {"a0"}}, {"b", {"b0", "b1"}}, {"c", {"c0"}}};
  const auto mt = gen_test_queries(multi, Modality::kText, pools, 1);
  CHECK(mt.size() == 2);
  CHECK(mt[0].refs == std::vector<std::string>{"a", "b"});
  const auto ms = gen_test_queries(multi, Modality::kSketch, pools, 1);
  CHECK(ms.size() == 3);
  for (const auto& q : ms) CHECK(q.refs.size() == 2);
}
