// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/heads.hpp"
#include "xmodal/pairgen.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Layer widths of the whole model.
struct ModelDims {
  std::size_t channels = 512;       // M, grid feature width
  std::size_t hidden = 512;         // d_h, attention LSTM state
  std::size_t attn = 256;           // d_a, additive scorer width
  std::size_t embed = kDefaultEmbedWidth;
  std::size_t query_hidden = 1024;  // first query-head layer
  /// Query heads to create, with their raw input widths.
  std::vector<std::pair<Modality, std::size_t>> query_inputs{{Modality::kText, 1000}};
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases,
/// LSTM forget-gate bias 1. Parameters are filled in name order from one
/// seeded stream.
ParamStore init_params(const ModelDims& dims, std::uint64_t seed);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  double margin = 0.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t n_max = 2;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  ParamStore params;
  std::vector<double> loss_curve;  // mean pair loss per epoch
};

/// Optional per-epoch callback: (epoch starting at 1, mean loss, parameters
/// after that epoch).
using EpochHook = std::function<void(std::size_t, double, const ParamStore&)>;

/// Mini-batch training with Adam on the summed cosine-embedding loss of each
/// pair. Pairs are reshuffled every epoch from `cfg.seed`; results are
/// bit-reproducible for identical inputs. All pairs must have the same
/// number of queries. Throws DivergedError on a non-finite loss.
TrainResult train(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items,
                  const ParamStore& params, const TrainConfig& cfg, Modality modality,
                  FeatureSource& features, const EpochHook& hook = {});

/// Mean loss of `pairs` under `params` without updating anything.
double evaluate_loss(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items,
                     const ParamStore& params, const TrainConfig& cfg, Modality modality,
                     FeatureSource& features);

struct Checkpoint {
  ParamStore params;
  TrainConfig config;
  std::size_t epoch = 0;
  std::vector<double> loss_history;
  /// Free-form JSON object text for callers (run metadata); may be empty.
  std::string annotations;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xmodal

namespace xmodal {

/// Records the full model on `tape` for a batch of pairs and returns the
/// per-pair summed loss, shape {batch}.
ad::Var pair_losses(const ParamVars& params, std::span<const TrainingPair* const> batch,
                    std::span<const DatasetItem> items, Modality modality, double margin,
                    FeatureSource& features);

}  // namespace xmodal
