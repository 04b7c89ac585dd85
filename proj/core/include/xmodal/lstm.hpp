// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>

#include "xmodal/tape.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// LSTM cell parameters live in a ParamStore under `<prefix>W` with shape
/// [4*hidden x (input + hidden)] and `<prefix>b` with shape [4*hidden]. Gate
/// blocks are stacked in the order input, forget, candidate, output:
///
///   z  = W [x; h] + b
///   i  = sigmoid(z_i), f = sigmoid(z_f), g = tanh(z_g), o = sigmoid(z_o)
///   c' = f * c + i * g
///   h' = o * tanh(c')
struct LstmDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
};

inline constexpr const char* kDefaultLstmPrefix = "lstm.";

LstmDims lstm_dims(const ParamStore& params, const std::string& prefix = kDefaultLstmPrefix);

struct LstmState {
  ad::Var h;
  ad::Var c;
};

/// Batched cell on the tape: x[B x input], h/c[B x hidden].
LstmState lstm_cell(ad::Var x, ad::Var h, ad::Var c, ad::Var weight, ad::Var bias);

/// One step on plain vectors. Returns (h', c').
std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const ParamStore& params,
                                    const std::string& prefix = kDefaultLstmPrefix);

}  // namespace xmodal
