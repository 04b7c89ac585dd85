// SPDX-License-Identifier: Apache-2.0
#include "xmodal/trainer.hpp"

#include <bit>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xmodal/attention.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor_io.hpp"

namespace xmodal {

namespace {

Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in,
              std::size_t fan_out) {
  Tensor t({rows, cols});
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ParamStore init_params(const ModelDims& d, std::uint64_t seed) {
  for (std::size_t v : {d.channels, d.hidden, d.attn, d.embed, d.query_hidden}) {
    if (v == 0) throw ArgumentError("model dimensions must be positive");
  }
  for (const auto& [m, width] : d.query_inputs) {
    if (width == 0) throw ArgumentError("query input width must be positive");
  }

  // Shapes first, then fill in name order so the draw order is fixed.
  struct Spec {
    Shape shape;
    std::size_t fan_in = 0, fan_out = 0;  // zero for biases
  };
  std::map<std::string, Spec> specs;
  const std::string lstm = attn_names::kLstmPrefix;
  specs[lstm + "W"] = {{4 * d.hidden, d.channels + d.hidden}, d.channels + d.hidden, 4 * d.hidden};
  specs[lstm + "b"] = {{4 * d.hidden}};
  specs[attn_names::kHiddenProj] = {{d.attn, d.hidden}, d.hidden, d.attn};
  specs[attn_names::kFeatureProj] = {{d.attn, d.channels}, d.channels, d.attn};
  specs[attn_names::kScoreVector] = {{d.attn}, d.attn, 1};
  specs[attn_names::kScoreBias] = {{d.attn}};
  specs[std::string(ImageHead::kPrefix) + "W"] = {{d.embed, d.channels}, d.channels, d.embed};
  specs[std::string(ImageHead::kPrefix) + "b"] = {{d.embed}};
  for (const auto& [m, width] : d.query_inputs) {
    const std::string p = QueryHead::prefix(m);
    specs[p + "W1"] = {{d.query_hidden, width}, width, d.query_hidden};
    specs[p + "b1"] = {{d.query_hidden}};
    specs[p + "W2"] = {{d.embed, d.query_hidden}, d.query_hidden, d.embed};
    specs[p + "b2"] = {{d.embed}};
  }

  Rng rng(seed);
  ParamStore params;
  for (const auto& [name, s] : specs) {
    if (s.fan_in == 0) {
      params.emplace(name, Tensor(s.shape));
      continue;
    }
    const std::size_t rows = s.shape[0];
    const std::size_t cols = s.shape.size() > 1 ? s.shape[1] : 1;
    params.emplace(name, glorot(rng, rows, cols, s.fan_in, s.fan_out).reshaped(s.shape));
  }
  auto& lstm_bias = params.at(lstm + "b");
  for (std::size_t i = d.hidden; i < 2 * d.hidden; ++i) lstm_bias[i] = 1.0;
  return params;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ArgumentError("learning rate must be >= 0");
  if (epochs == 0) throw ArgumentError("epochs must be at least 1");
  if (batch == 0) throw ArgumentError("batch size must be at least 1");
  if (!(margin >= 0.0 && margin < 1.0)) throw ArgumentError("margin must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw ArgumentError("invalid Adam moments");
  }
  if (n_max == 0) throw ArgumentError("n_max must be at least 1");
}

// ---------------------------------------------------------------------------

ad::Var pair_losses(const ParamVars& params, std::span<const TrainingPair* const> batch,
                    std::span<const DatasetItem> items, Modality modality, double margin,
                    FeatureSource& features) {
  if (batch.empty()) throw ArgumentError("empty batch");
  ad::Tape& tape = params.begin()->second.tape();
  const std::size_t arity = batch.front()->query_refs.size();
  std::vector<int> labels;
  for (const TrainingPair* p : batch) {
    if (p->query_refs.size() != arity || arity == 0) {
      throw ArgumentError("all pairs in a run must have the same number of queries");
    }
    if (p->item >= items.size()) throw ArgumentError("pair references an unknown item");
    labels.push_back(p->y);
  }

  const Tensor& first = features.grid(items[batch.front()->item]);
  const std::size_t locations = first.rows(), channels = first.cols();
  Tensor grids({batch.size() * locations, channels});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor& g = features.grid(items[batch[b]->item]);
    if (g.shape() != first.shape()) {
      throw DimensionError("grid shapes differ within a batch: " + shape_string(g.shape()) +
                           " vs " + shape_string(first.shape()));
    }
    std::copy(g.data().begin(), g.data().end(), grids.data().begin() + b * g.size());
  }

  const auto steps = attend_batch(tape.constant(std::move(grids)), locations, arity,
                                  AttentionVars::bind(params));
  const QueryHeadVars qhead = QueryHeadVars::bind(params, modality);
  const ImageHeadVars ihead = ImageHeadVars::bind(params);

  ad::Var total;
  for (std::size_t s = 0; s < arity; ++s) {
    const std::size_t width = features.query(modality, batch.front()->query_refs[s]).size();
    Tensor raw({batch.size(), width});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Tensor& q = features.query(modality, batch[b]->query_refs[s]);
      if (q.size() != width) throw DimensionError("query feature widths differ within a batch");
      std::copy(q.data().begin(), q.data().end(), raw.row(b).begin());
    }
    const ad::Var q = embed_query_batch(tape.constant(std::move(raw)), qhead);
    const ad::Var f = embed_image_batch(steps[s].pooled, ihead);
    const ad::Var loss = ad::cosine_embedding_loss(ad::row_dot(q, f), labels, margin);
    total = s == 0 ? loss : ad::add(total, loss);
  }
  return total;
}

namespace {

struct Adam {
  explicit Adam(const ParamStore& params, const TrainConfig& cfg) : cfg(cfg) {
    for (const auto& [name, t] : params) {
      m.emplace(name, Tensor(t.shape()));
      v.emplace(name, Tensor(t.shape()));
    }
  }

  void step(ParamStore& params, const ParamStore& grads) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& [name, p] : params) {
      const Tensor& g = grads.at(name);
      Tensor& mt = m.at(name);
      Tensor& vt = v.at(name);
      for (std::size_t i = 0; i < p.size(); ++i) {
        mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g[i];
        vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] -= cfg.lr * (mt[i] / c1) / (std::sqrt(vt[i] / c2) + cfg.eps);
      }
    }
  }

  const TrainConfig& cfg;
  std::size_t t = 0;
  ParamStore m, v;
};

}  // namespace

TrainResult train(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items,
                  const ParamStore& params, const TrainConfig& cfg, Modality modality,
                  FeatureSource& features, const EpochHook& hook) {
  cfg.validate();
  if (pairs.empty()) throw ArgumentError("train: no pairs");

  TrainResult result{params, {}};
  Adam adam(result.params, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> pair_loss(pairs.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += cfg.batch, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<const TrainingPair*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&pairs[order[k]]);

      ad::Tape tape;
      const ParamVars vars = bind_params(tape, result.params);
      const ad::Var losses = pair_losses(vars, batch, items, modality, cfg.margin, features);
      const ad::Var objective = ad::mean(losses);
      if (!std::isfinite(objective.value()[0])) {
        throw DivergedError(epoch, batch_no,
                            "training diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      }
      for (std::size_t k = start; k < end; ++k) pair_loss[order[k]] = losses.value()[k - start];
      if (cfg.lr == 0.0) continue;
      tape.backward(objective);
      adam.step(result.params, collect_grads(tape, vars));
    }
    double sum = 0.0;
    for (double l : pair_loss) sum += l;
    const double mean = sum / static_cast<double>(pairs.size());
    result.loss_curve.push_back(mean);
    if (hook) hook(epoch, mean, result.params);
  }
  for (const auto& [name, t] : result.params) {
    if (!t.all_finite()) {
      throw DivergedError(cfg.epochs, 0, "training diverged: parameter " + name + " is not finite");
    }
  }
  return result;
}

double evaluate_loss(std::span<const TrainingPair> pairs, std::span<const DatasetItem> items,
                     const ParamStore& params, const TrainConfig& cfg, Modality modality,
                     FeatureSource& features) {
  if (pairs.empty()) throw ArgumentError("evaluate_loss: no pairs");
  double sum = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += cfg.batch) {
    const std::size_t end = std::min(pairs.size(), start + cfg.batch);
    std::vector<const TrainingPair*> batch;
    for (std::size_t k = start; k < end; ++k) batch.push_back(&pairs[k]);
    ad::Tape tape;
    ParamVars vars;
    for (const auto& [name, t] : params) vars.emplace(name, tape.constant(t));
    const ad::Var losses = pair_losses(vars, batch, items, modality, cfg.margin, features);
    for (double l : losses.value().data()) sum += l;
  }
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (!bitwise_equal(a.params, b.params) || !(a.config == b.config) || a.epoch != b.epoch ||
      a.annotations != b.annotations || a.loss_history.size() != b.loss_history.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.loss_history[i]) !=
        std::bit_cast<std::uint64_t>(b.loss_history[i])) {
      return false;
    }
  }
  return true;
}

namespace {
constexpr const char* kParamPrefix = "param/";
constexpr const char* kLossHistory = "meta/loss_history";
constexpr const char* kConfigScalars = "meta/config_scalars";

// Floating-point settings are stored as a tensor so they round-trip bitwise.
Tensor config_scalars(const TrainConfig& c) {
  return Tensor::vector({c.lr, c.margin, c.beta1, c.beta2, c.eps});
}
}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["format"] = "xmodal-checkpoint";
  meta["version"] = 1;
  meta["epoch"] = cp.epoch;
  meta["config"] = {{"epochs", cp.config.epochs},
                    {"batch", cp.config.batch},
                    {"seed", cp.config.seed},
                    {"n_max", cp.config.n_max},
                    {"lr", cp.config.lr},
                    {"margin", cp.config.margin}};
  meta["annotations"] = cp.annotations;

  NamedTensors c;
  c.metadata = meta.dump();
  for (const auto& [name, t] : cp.params) c.tensors.emplace(kParamPrefix + name, t);
  c.tensors.emplace(kConfigScalars, config_scalars(cp.config));
  if (!cp.loss_history.empty()) c.tensors.emplace(kLossHistory, Tensor::vector(cp.loss_history));
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const NamedTensors c = read_container(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(c.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, path.string() + ": checkpoint metadata is not JSON: " + e.what());
  }
  if (!meta.is_object() || meta.value("format", "") != "xmodal-checkpoint") {
    throw FormatError(8, path.string() + ": not a checkpoint container");
  }
  Checkpoint cp;
  try {
    cp.epoch = meta.at("epoch").get<std::size_t>();
    const auto& cfg = meta.at("config");
    cp.config.epochs = cfg.at("epochs").get<std::size_t>();
    cp.config.batch = cfg.at("batch").get<std::size_t>();
    cp.config.seed = cfg.at("seed").get<std::uint64_t>();
    cp.config.n_max = cfg.at("n_max").get<std::size_t>();
    cp.annotations = meta.at("annotations").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, path.string() + ": incomplete checkpoint metadata: " + e.what());
  }
  const auto scalars = c.tensors.find(kConfigScalars);
  if (scalars == c.tensors.end() || scalars->second.size() != 5) {
    throw FormatError(8, path.string() + ": checkpoint lacks " + kConfigScalars);
  }
  const Tensor& s = scalars->second;
  cp.config.lr = s[0];
  cp.config.margin = s[1];
  cp.config.beta1 = s[2];
  cp.config.beta2 = s[3];
  cp.config.eps = s[4];
  const std::string prefix = kParamPrefix;
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind(prefix, 0) == 0) cp.params.emplace(name.substr(prefix.size()), t);
  }
  if (const auto h = c.tensors.find(kLossHistory); h != c.tensors.end()) {
    cp.loss_history.assign(h->second.data().begin(), h->second.data().end());
  }
  return cp;
}

}  // namespace xmodal
