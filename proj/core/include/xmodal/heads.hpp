// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/attention.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/tape.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

enum class Modality { kText, kSketch };

std::string_view to_string(Modality m);
/// Accepts "text" or "sketch"; throws ArgumentError otherwise.
Modality parse_modality(std::string_view name);

inline constexpr std::size_t kDefaultEmbedWidth = 512;

/// Two affine layers with a ReLU between them: raw query -> joint space.
struct QueryHead {
  Tensor w1;  // [hidden x d_q]
  Tensor b1;  // [hidden]
  Tensor w2;  // [E x hidden]
  Tensor b2;  // [E]

  std::string static prefix(Modality m);
  static QueryHead from_params(const ParamStore& params, Modality m);
  std::size_t input_width() const { return w1.cols(); }
  std::size_t output_width() const { return w2.rows(); }
};

/// One affine layer followed by a ReLU: pooled image feature -> joint space.
struct ImageHead {
  Tensor w;  // [E x M]
  Tensor b;  // [E]

  static constexpr const char* kPrefix = "image.";
  static ImageHead from_params(const ParamStore& params);
  std::size_t output_width() const { return w.rows(); }
};

/// A unit-norm point in the joint space.
struct Embedding {
  Tensor values;
};

struct LossConfig {
  double margin = 0.0;
  /// Throws ArgumentError unless 0 <= margin < 1.
  void validate() const;
};

struct QueryHeadVars {
  ad::Var w1, b1, w2, b2;
  static QueryHeadVars bind(const ParamVars& vars, Modality m);
};

struct ImageHeadVars {
  ad::Var w, b;
  static ImageHeadVars bind(const ParamVars& vars);
};

/// Batched heads on the tape; rows are L2-normalized.
ad::Var embed_query_batch(ad::Var raw, const QueryHeadVars& head);
ad::Var embed_image_batch(ad::Var pooled, const ImageHeadVars& head);

Embedding embed_query(const Tensor& raw, const QueryHead& head);
Embedding embed_image(const PooledFeature& pooled, const ImageHead& head);

/// Margin cosine-embedding loss of one (query, image) pair, y in {+1, -1}.
double cosine_embedding_loss(const Embedding& q, const Embedding& f, int y, const LossConfig& cfg);

struct LossTerm {
  Embedding query;
  Embedding image;
};

/// Sum of per-object losses for one pair; every term shares the label y.
double multi_query_loss(std::span<const LossTerm> terms, int y, const LossConfig& cfg);

}  // namespace xmodal
