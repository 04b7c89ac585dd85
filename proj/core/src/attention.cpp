// SPDX-License-Identifier: Apache-2.0
#include "xmodal/attention.hpp"

#include <string>

#include "xmodal/errors.hpp"
#include "xmodal/lstm.hpp"

namespace xmodal {

namespace {
const Tensor& get(const ParamStore& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw DimensionError("missing attention parameter " + name);
  return it->second;
}

void check_grid(const Tensor& values, const char* what) {
  if (values.rank() != 2) {
    throw DimensionError(std::string(what) + ": grid must be [L x M], got " +
                         shape_string(values.shape()));
  }
}
}  // namespace

FeatureGrid::FeatureGrid(std::size_t h, std::size_t w, Tensor v)
    : height(h), width(w), values(std::move(v)) {
  check_grid(values, "FeatureGrid");
  if (h * w != values.rows()) {
    throw DimensionError("FeatureGrid: " + std::to_string(h) + "x" + std::to_string(w) +
                         " grid for values " + shape_string(values.shape()));
  }
}

FeatureGrid::FeatureGrid(Tensor v) : values(std::move(v)) {
  check_grid(values, "FeatureGrid");
  height = 1;
  width = values.rows();
}

AttentionDims attention_dims(const ParamStore& params) {
  const LstmDims lstm = lstm_dims(params, attn_names::kLstmPrefix);
  const Tensor& wh = get(params, attn_names::kHiddenProj);
  const Tensor& wp = get(params, attn_names::kFeatureProj);
  const Tensor& w = get(params, attn_names::kScoreVector);
  const Tensor& b = get(params, attn_names::kScoreBias);
  AttentionDims d{lstm.input, lstm.hidden, wh.rank() == 2 ? wh.rows() : 0};
  const bool ok = wh.rank() == 2 && wh.cols() == d.hidden && wp.rank() == 2 &&
                  wp.rows() == d.attn && wp.cols() == d.channels && w.size() == d.attn &&
                  b.size() == d.attn && d.attn > 0;
  if (!ok) {
    throw DimensionError("inconsistent attention parameters: W_h " + shape_string(wh.shape()) +
                         ", W_p " + shape_string(wp.shape()) + ", w " +
                         shape_string(w.shape()) + ", b " + shape_string(b.shape()) +
                         ", LSTM input " + std::to_string(d.channels) + " hidden " +
                         std::to_string(d.hidden));
  }
  return d;
}

AttentionVars AttentionVars::bind(const ParamVars& vars) {
  const auto at = [&](const std::string& name) {
    const auto it = vars.find(name);
    if (it == vars.end()) throw DimensionError("missing attention parameter " + name);
    return it->second;
  };
  return {at(std::string(attn_names::kLstmPrefix) + "W"),
          at(std::string(attn_names::kLstmPrefix) + "b"),
          at(attn_names::kHiddenProj),
          at(attn_names::kFeatureProj),
          at(attn_names::kScoreVector),
          at(attn_names::kScoreBias)};
}

ad::Var score_batch(ad::Var hidden, ad::Var feature_proj, std::size_t locations,
                    const AttentionVars& p) {
  const std::size_t batch = hidden.value().rows();
  const std::size_t d_a = p.score_vector.value().size();
  if (feature_proj.value().rows() != batch * locations || feature_proj.value().cols() != d_a) {
    throw DimensionError("score_batch: projected grid " + shape_string(feature_proj.shape()) +
                         " for " + std::to_string(batch) + " grids of " +
                         std::to_string(locations) + " locations");
  }
  const ad::Var hp = ad::matmul_nt(hidden, p.hidden_proj);  // [B x d_a]
  const ad::Var pre =
      ad::add_row_vector(ad::add(feature_proj, ad::repeat_rows(hp, locations)), p.score_bias);
  const ad::Var scores =
      ad::matmul(ad::tanh(pre), ad::reshape(p.score_vector, {d_a, 1}));  // [(B*L) x 1]
  return ad::reshape(scores, {batch, locations});
}

std::vector<BatchAttentionStep> attend_batch(ad::Var grids, std::size_t locations,
                                             std::size_t steps, const AttentionVars& p) {
  if (steps == 0) throw ArgumentError("attention needs at least one step");
  if (locations == 0 || grids.value().rank() != 2 || grids.value().rows() % locations != 0) {
    throw DimensionError("attend_batch: " + shape_string(grids.shape()) +
                         " is not a stack of grids with " + std::to_string(locations) +
                         " locations");
  }
  ad::Tape& tape = grids.tape();
  const std::size_t batch = grids.value().rows() / locations;
  const std::size_t hidden = p.lstm_w.value().rows() / 4;

  const ad::Var feature_proj = ad::matmul_nt(grids, p.feature_proj);
  ad::Var input = ad::group_mean(grids, locations);
  LstmState state{tape.constant(Tensor({batch, hidden})), tape.constant(Tensor({batch, hidden}))};

  std::vector<BatchAttentionStep> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    state = lstm_cell(input, state.h, state.c, p.lstm_w, p.lstm_b);
    const ad::Var weights = ad::row_softmax(score_batch(state.h, feature_proj, locations, p));
    const ad::Var pooled = ad::group_weighted_sum(weights, grids);
    out.push_back({weights, pooled});
    input = pooled;
  }
  return out;
}

Tensor score_locations(const Tensor& hidden, const FeatureGrid& grid, const ParamStore& params) {
  const AttentionDims d = attention_dims(params);
  if (hidden.size() != d.hidden || grid.channels() != d.channels) {
    throw DimensionError("score_locations: hidden " + shape_string(hidden.shape()) +
                         ", grid " + shape_string(grid.values.shape()) + " for d_h " +
                         std::to_string(d.hidden) + ", M " + std::to_string(d.channels));
  }
  ad::Tape tape;
  const ParamVars vars = bind_params(tape, params);
  const AttentionVars p = AttentionVars::bind(vars);
  const ad::Var proj = ad::matmul_nt(tape.constant(grid.values), p.feature_proj);
  const ad::Var scores =
      score_batch(tape.constant(hidden.reshaped({1, d.hidden})), proj, grid.locations(), p);
  return scores.value().reshaped({grid.locations()});
}

AttentionMap attention_weights(const Tensor& scores) {
  if (scores.rank() != 1) {
    throw DimensionError("attention_weights expects a score vector, got " +
                         shape_string(scores.shape()));
  }
  return {softmax(scores)};
}

PooledFeature pool(const FeatureGrid& grid, const AttentionMap& map) {
  if (map.weights.size() != grid.locations() || grid.values.rows() != grid.locations()) {
    throw DimensionError("pool: " + std::to_string(map.weights.size()) + " weights for " +
                         std::to_string(grid.locations()) + " locations");
  }
  const std::size_t m = grid.channels();
  Tensor out({m});
  for (std::size_t l = 0; l < grid.locations(); ++l) {
    const double w = map.weights[l];
    const auto row = grid.values.row(l);
    for (std::size_t j = 0; j < m; ++j) out[j] += w * row[j];
  }
  return {std::move(out)};
}

std::vector<AttentionStepResult> attend_sequence(const FeatureGrid& grid, std::size_t steps,
                                                 const ParamStore& params) {
  if (steps == 0) throw ArgumentError("attend_sequence: n must be at least 1");
  const AttentionDims d = attention_dims(params);
  if (grid.channels() != d.channels) {
    throw DimensionError("attend_sequence: grid has " + std::to_string(grid.channels()) +
                         " channels, controller expects " + std::to_string(d.channels));
  }
  ad::Tape tape;
  const ParamVars vars = bind_params(tape, params);
  const auto batch = attend_batch(tape.constant(grid.values), grid.locations(), steps,
                                  AttentionVars::bind(vars));
  std::vector<AttentionStepResult> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    out.push_back({AttentionMap{s.weights.value().reshaped({grid.locations()})},
                   PooledFeature{s.pooled.value().reshaped({d.channels})}});
  }
  return out;
}

}  // namespace xmodal
