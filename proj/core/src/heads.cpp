// SPDX-License-Identifier: Apache-2.0
#include "xmodal/heads.hpp"

#include "xmodal/errors.hpp"

namespace xmodal {

std::string_view to_string(Modality m) { return m == Modality::kText ? "text" : "sketch"; }

Modality parse_modality(std::string_view name) {
  if (name == "text") return Modality::kText;
  if (name == "sketch") return Modality::kSketch;
  throw ArgumentError("unknown modality '" + std::string(name) + "' (expected text or sketch)");
}

namespace {
const Tensor& get(const ParamStore& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw DimensionError("missing head parameter " + name);
  return it->second;
}

ad::Var get(const ParamVars& vars, const std::string& name) {
  const auto it = vars.find(name);
  if (it == vars.end()) throw DimensionError("missing head parameter " + name);
  return it->second;
}

Tensor as_row(const Tensor& t) { return t.reshaped({1, t.size()}); }
}  // namespace

std::string QueryHead::prefix(Modality m) { return "query." + std::string(to_string(m)) + "."; }

QueryHead QueryHead::from_params(const ParamStore& params, Modality m) {
  const std::string p = prefix(m);
  QueryHead h{get(params, p + "W1"), get(params, p + "b1"), get(params, p + "W2"),
              get(params, p + "b2")};
  if (h.w1.rank() != 2 || h.w2.rank() != 2 || h.b1.size() != h.w1.rows() ||
      h.w2.cols() != h.w1.rows() || h.b2.size() != h.w2.rows()) {
    throw DimensionError("inconsistent query head " + p + ": W1 " + shape_string(h.w1.shape()) +
                         ", W2 " + shape_string(h.w2.shape()));
  }
  return h;
}

ImageHead ImageHead::from_params(const ParamStore& params) {
  ImageHead h{get(params, std::string(kPrefix) + "W"), get(params, std::string(kPrefix) + "b")};
  if (h.w.rank() != 2 || h.b.size() != h.w.rows()) {
    throw DimensionError("inconsistent image head: W " + shape_string(h.w.shape()) + ", b " +
                         shape_string(h.b.shape()));
  }
  return h;
}

void LossConfig::validate() const {
  if (!(margin >= 0.0 && margin < 1.0)) {
    throw ArgumentError("margin must lie in [0, 1), got " + std::to_string(margin));
  }
}

QueryHeadVars QueryHeadVars::bind(const ParamVars& vars, Modality m) {
  const std::string p = QueryHead::prefix(m);
  return {get(vars, p + "W1"), get(vars, p + "b1"), get(vars, p + "W2"), get(vars, p + "b2")};
}

ImageHeadVars ImageHeadVars::bind(const ParamVars& vars) {
  return {get(vars, std::string(ImageHead::kPrefix) + "W"),
          get(vars, std::string(ImageHead::kPrefix) + "b")};
}

ad::Var embed_query_batch(ad::Var raw, const QueryHeadVars& head) {
  const ad::Var hidden = ad::relu(ad::add_row_vector(ad::matmul_nt(raw, head.w1), head.b1));
  return ad::row_normalize(ad::add_row_vector(ad::matmul_nt(hidden, head.w2), head.b2));
}

ad::Var embed_image_batch(ad::Var pooled, const ImageHeadVars& head) {
  return ad::row_normalize(ad::relu(ad::add_row_vector(ad::matmul_nt(pooled, head.w), head.b)));
}

Embedding embed_query(const Tensor& raw, const QueryHead& head) {
  if (raw.size() != head.input_width()) {
    throw DimensionError("embed_query: raw feature " + shape_string(raw.shape()) +
                         " for head input width " + std::to_string(head.input_width()));
  }
  ad::Tape tape;
  const QueryHeadVars v{tape.constant(head.w1), tape.constant(head.b1), tape.constant(head.w2),
                        tape.constant(head.b2)};
  try {
    const ad::Var e = embed_query_batch(tape.constant(as_row(raw)), v);
    return {e.value().reshaped({head.output_width()})};
  } catch (const DegenerateError&) {
    throw DegenerateError("embed_query: query head output is the zero vector");
  }
}

Embedding embed_image(const PooledFeature& pooled, const ImageHead& head) {
  if (pooled.values.size() != head.w.cols()) {
    throw DimensionError("embed_image: pooled feature " + shape_string(pooled.values.shape()) +
                         " for head input width " + std::to_string(head.w.cols()));
  }
  ad::Tape tape;
  const ImageHeadVars v{tape.constant(head.w), tape.constant(head.b)};
  try {
    const ad::Var e = embed_image_batch(tape.constant(as_row(pooled.values)), v);
    return {e.value().reshaped({head.output_width()})};
  } catch (const DegenerateError&) {
    throw DegenerateError("embed_image: image head output is the zero vector");
  }
}

double cosine_embedding_loss(const Embedding& q, const Embedding& f, int y, const LossConfig& cfg) {
  cfg.validate();
  if (y != 1 && y != -1) {
    throw ArgumentError("pair label must be +1 or -1, got " + std::to_string(y));
  }
  const double c = cosine_similarity(q.values, f.values);
  if (y == 1) return 1.0 - c;
  return c - cfg.margin > 0.0 ? c - cfg.margin : 0.0;
}

double multi_query_loss(std::span<const LossTerm> terms, int y, const LossConfig& cfg) {
  if (terms.empty()) throw ArgumentError("multi_query_loss needs at least one term");
  double total = 0.0;
  for (const auto& t : terms) total += cosine_embedding_loss(t.query, t.image, y, cfg);
  return total;
}

}  // namespace xmodal
