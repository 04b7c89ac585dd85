// SPDX-License-Identifier: Apache-2.0
#include "xmodal/lstm.hpp"

#include "xmodal/errors.hpp"

namespace xmodal {

LstmDims lstm_dims(const ParamStore& params, const std::string& prefix) {
  const auto w = params.find(prefix + "W");
  const auto b = params.find(prefix + "b");
  if (w == params.end() || b == params.end()) {
    throw DimensionError("missing LSTM parameters " + prefix + "W / " + prefix + "b");
  }
  const Tensor& wt = w->second;
  if (wt.rank() != 2 || wt.rows() % 4 != 0 || wt.rows() == 0) {
    throw DimensionError("LSTM weight must be [4h x (in+h)], got " + shape_string(wt.shape()));
  }
  const std::size_t hidden = wt.rows() / 4;
  if (wt.cols() <= hidden) {
    throw DimensionError("LSTM weight " + shape_string(wt.shape()) + " leaves no input columns");
  }
  if (b->second.size() != 4 * hidden) {
    throw DimensionError("LSTM bias " + shape_string(b->second.shape()) + " for weight " +
                         shape_string(wt.shape()));
  }
  return {wt.cols() - hidden, hidden};
}

LstmState lstm_cell(ad::Var x, ad::Var h, ad::Var c, ad::Var weight, ad::Var bias) {
  const std::size_t hidden = weight.value().rows() / 4;
  if (weight.value().rows() != 4 * hidden ||
      weight.value().cols() != x.value().cols() + h.value().cols() ||
      h.value().cols() != hidden || c.shape() != h.shape() ||
      x.value().rows() != h.value().rows()) {
    throw DimensionError("lstm_cell: x " + shape_string(x.shape()) + ", h " +
                         shape_string(h.shape()) + ", c " + shape_string(c.shape()) +
                         ", W " + shape_string(weight.shape()));
  }
  const ad::Var z = ad::add_row_vector(ad::matmul_nt(ad::concat_cols(x, h), weight), bias);
  const ad::Var in = ad::sigmoid(ad::slice_cols(z, 0, hidden));
  const ad::Var forget = ad::sigmoid(ad::slice_cols(z, hidden, hidden));
  const ad::Var cand = ad::tanh(ad::slice_cols(z, 2 * hidden, hidden));
  const ad::Var out = ad::sigmoid(ad::slice_cols(z, 3 * hidden, hidden));
  const ad::Var c_next = ad::add(ad::mul(forget, c), ad::mul(in, cand));
  const ad::Var h_next = ad::mul(out, ad::tanh(c_next));
  return {h_next, c_next};
}

std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const ParamStore& params, const std::string& prefix) {
  const LstmDims dims = lstm_dims(params, prefix);
  if (x.size() != dims.input || h.size() != dims.hidden || c.size() != dims.hidden) {
    throw DimensionError("lstm_step: x " + shape_string(x.shape()) + ", h " +
                         shape_string(h.shape()) + ", c " + shape_string(c.shape()) +
                         " for input " + std::to_string(dims.input) + ", hidden " +
                         std::to_string(dims.hidden));
  }
  ad::Tape tape;
  const auto row = [](const Tensor& t) { return t.reshaped({1, t.size()}); };
  const LstmState next = lstm_cell(tape.constant(row(x)), tape.constant(row(h)),
                                   tape.constant(row(c)), tape.constant(params.at(prefix + "W")),
                                   tape.constant(params.at(prefix + "b")));
  return {next.h.value().reshaped({dims.hidden}), next.c.value().reshaped({dims.hidden})};
}

}  // namespace xmodal
