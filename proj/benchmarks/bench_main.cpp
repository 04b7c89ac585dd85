// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "xmodal/attention.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/pairgen.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/trainer.hpp"

using namespace xmodal;

namespace {

Tensor gaussian(std::mt19937_64& gen, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

Tensor unit(std::mt19937_64& gen, std::size_t n) {
  Tensor t = gaussian(gen, {n});
  const double s = l2_norm(t.data());
  for (auto& v : t.data()) v /= s;
  return t;
}

ModelDims dims(std::size_t channels, std::size_t text_dim) {
  ModelDims d;
  d.channels = channels;
  d.hidden = 128;
  d.attn = 64;
  d.embed = 128;
  d.query_hidden = 256;
  d.query_inputs = {{Modality::kText, text_dim}};
  return d;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  set_num_threads(static_cast<std::size_t>(state.range(1)));
  std::mt19937_64 gen(1);
  const Tensor a = gaussian(gen, {n, n}), b = gaussian(gen, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
  set_num_threads(1);
}
BENCHMARK(BM_Matmul)->Args({64, 1})->Args({256, 1})->Args({256, 4})->UseRealTime()->Unit(benchmark::kMicrosecond);

// Two attention steps over a 7x7 grid.
static void BM_AttendSequence(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(2);
  const ParamStore p = init_params(dims(m, 8), 3);
  const FeatureGrid grid(7, 7, gaussian(gen, {49, m}));
  for (auto _ : state) benchmark::DoNotOptimize(attend_sequence(grid, 2, p));
}
BENCHMARK(BM_AttendSequence)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

// One epoch of 32 single-object text pairs (a single Adam step).
static void BM_TrainStep(benchmark::State& state) {
  const std::size_t m = 64, text = 32;
  std::mt19937_64 gen(4);
  InMemoryFeatures features;
  std::vector<DatasetItem> items;
  for (int c = 0; c < 4; ++c) {
    const std::string cls = "c" + std::to_string(c);
    features.add_query(Modality::kText, cls, gaussian(gen, {text}));
    for (int i = 0; i < 8; ++i) {
      DatasetItem it;
      it.id = cls + "_" + std::to_string(i);
      it.class_labels = {cls};
      it.text_refs = {cls};
      features.add_grid(it.id, gaussian(gen, {49, m}));
      items.push_back(it);
    }
  }
  auto pairs = gen_single_text_pairs(items, {});
  pairs.resize(32);
  const ParamStore p0 = init_params(dims(m, text), 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 32;
  for (auto _ : state) benchmark::DoNotOptimize(train(pairs, items, p0, cfg, Modality::kText, features));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Rank(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const bool multi = state.range(1) != 0;
  std::mt19937_64 gen(6);
  ImageIndex idx;
  idx.n_max = 2;
  for (std::size_t i = 0; i < n; ++i) {
    idx.entries.push_back({"img" + std::to_string(i), {"c"}, {{unit(gen, 512)}, {unit(gen, 512)}}});
  }
  const std::vector<Embedding> q{{unit(gen, 512)}, {unit(gen, 512)}};
  for (auto _ : state) {
    if (multi) {
      benchmark::DoNotOptimize(rank_multi(q, idx));
    } else {
      benchmark::DoNotOptimize(rank_single(q[0], idx));
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Rank)->Args({1000, 0})->Args({1000, 1})->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
