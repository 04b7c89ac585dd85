// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "xmodal/gradcheck.hpp"
#include "xmodal/tape.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// An image as a grid of L = height * width locations with M channels each,
/// stored as values[L x M].
struct FeatureGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor values;

  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, Tensor values);
  /// Wraps an [L x M] tensor as a 1 x L grid.
  explicit FeatureGrid(Tensor values);

  std::size_t locations() const { return height * width; }
  std::size_t channels() const { return values.cols(); }
};

/// Simplex weights over the L locations of one grid.
struct AttentionMap {
  Tensor weights;
};

/// Attention-weighted average of grid rows, length M.
struct PooledFeature {
  Tensor values;
};

struct AttentionStepResult {
  AttentionMap map;
  PooledFeature feature;
};

/// Parameter names under which the attention controller is stored.
namespace attn_names {
inline constexpr const char* kLstmPrefix = "attn.lstm.";
inline constexpr const char* kHiddenProj = "attn.W_h";    // [d_a x d_h]
inline constexpr const char* kFeatureProj = "attn.W_p";   // [d_a x M]
inline constexpr const char* kScoreVector = "attn.w";     // [d_a]
inline constexpr const char* kScoreBias = "attn.b";       // [d_a]
}  // namespace attn_names

struct AttentionDims {
  std::size_t channels = 512;  // M
  std::size_t hidden = 512;    // d_h
  std::size_t attn = 256;      // d_a
};

/// Reads and cross-checks the attention parameter shapes.
AttentionDims attention_dims(const ParamStore& params);

/// Attention parameters bound to a tape.
struct AttentionVars {
  ad::Var lstm_w, lstm_b, hidden_proj, feature_proj, score_vector, score_bias;
  static AttentionVars bind(const ParamVars& vars);
};

/// Additive scores e[b, l] = w . tanh(W_h h_b + W_p p_{b,l} + bias) for a
/// batch. `feature_proj` is grid * W_p^T, [(B*L) x d_a], shared across steps.
ad::Var score_batch(ad::Var hidden, ad::Var feature_proj, std::size_t locations,
                    const AttentionVars& p);

struct BatchAttentionStep {
  ad::Var weights;  // [B x L]
  ad::Var pooled;   // [B x M]
};

/// Runs `steps` attention steps over B grids stacked as [(B*L) x M]. Step 0
/// feeds the grid mean to the controller; step i feeds the step i-1 pooled
/// feature. Controller state starts at zero.
std::vector<BatchAttentionStep> attend_batch(ad::Var grids, std::size_t locations,
                                             std::size_t steps, const AttentionVars& p);

// Single-image entry points.

Tensor score_locations(const Tensor& hidden, const FeatureGrid& grid, const ParamStore& params);
AttentionMap attention_weights(const Tensor& scores);
PooledFeature pool(const FeatureGrid& grid, const AttentionMap& map);
std::vector<AttentionStepResult> attend_sequence(const FeatureGrid& grid, std::size_t steps,
                                                 const ParamStore& params);

}  // namespace xmodal
