// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xmodal/errors.hpp"
#include "xmodal/pairgen.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/tensor_io.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.xmc";
constexpr const char* kLossFile = "loss.csv";
constexpr const char* kIndexFile = "index.xmc";
constexpr const char* kReportFile = "eval.json";
constexpr const char* kRunConfigFile = "run_config.json";

const std::set<std::string> kSubcommands = {"gen-synth", "train", "index", "query", "eval"};

struct Globals {
  std::uint64_t seed = 42;
  std::string config;
  std::string out;
};

struct TrainFlags {
  std::string manifest;
  std::string modality = "text";
  bool multi = false;
  TrainConfig train;
  PairGenConfig pairs;
  ModelDims dims;
};

struct IndexFlags {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::size_t n_max = 0;
};

struct QueryFlags {
  std::string index;
  std::string checkpoint;
  std::string modality;
  std::vector<std::string> query_files;
  bool embedded = false;
  std::size_t top_k = 10;
};

struct EvalFlags {
  std::string index;
  std::string checkpoint;
  std::string manifest;
  std::string queries;
};

std::string json_scalar_to_arg(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

/// Writes the resolved flag values of `app` and its selected subcommand.
/// Flag text as JSON: numbers stay numbers, everything else is a string.
json typed(const std::string& text) {
  const json v = json::parse(text, nullptr, false);
  if (v.is_number()) return v;
  return text;
}

void echo_config(const CLI::App& app, const CLI::App& sub, const fs::path& dir) {
  json doc;
  doc["command"] = sub.get_name();
  for (const CLI::App* a : {&app, &sub}) {
    for (const CLI::Option* opt : a->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      const bool is_flag = opt->get_expected_min() == 0;
      if (is_flag) {
        doc[name] = opt->count() > 0;
      } else if (opt->count() > 0) {
        const auto& res = opt->results();
        if (opt->get_expected_max() > 1) {
          json list = json::array();
          for (const auto& r : res) list.push_back(typed(r));
          doc[name] = std::move(list);
        } else {
          doc[name] = typed(res.back());
        }
      } else if (!opt->get_default_str().empty()) {
        doc[name] = typed(opt->get_default_str());
      }
    }
  }
  fs::create_directories(dir);
  std::ofstream(dir / kRunConfigFile) << doc.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json annotations_of(const Checkpoint& cp) {
  if (cp.annotations.empty()) throw ArgumentError("checkpoint carries no run metadata");
  return json::parse(cp.annotations);
}

std::vector<DatasetItem> select_items(const Manifest& m, const json& ids) {
  std::map<std::string, const DatasetItem*> by_id;
  for (const auto& it : m.items) by_id.emplace(it.id, &it);
  std::vector<DatasetItem> out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) {
      throw ArgumentError("checkpoint refers to item '" + id.get<std::string>() +
                          "' missing from the manifest");
    }
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const SynthConfig& cfg, const Globals& g, std::ostream& out) {
  SynthConfig resolved = cfg;
  resolved.seed = g.seed;
  const Manifest m = generate_synthetic(resolved, g.out);
  out << (fs::path(g.out) / "manifest.json").string() << "\n";
  (void)m;
  return kExitOk;
}

int cmd_train(TrainFlags f, const Globals& g, std::ostream& out) {
  const Modality modality = parse_modality(f.modality);
  f.train.seed = g.seed;
  f.pairs.seed = g.seed;
  f.train.validate();
  f.pairs.validate();

  const Manifest manifest = load_manifest(f.manifest);
  const DatasetSplit split = split_dataset(manifest.items, f.pairs);
  std::vector<TrainingPair> pairs;
  if (f.multi) {
    if (f.train.n_max < 2) throw ArgumentError("two-object training needs --n-max >= 2");
    pairs = gen_multi_pairs(split.train, modality, split_pools(sketch_pools(manifest), f.pairs).train,
                            f.pairs);
  } else if (modality == Modality::kText) {
    pairs = gen_single_text_pairs(split.train, f.pairs);
  } else {
    pairs = gen_single_sketch_pairs(split.train, f.pairs);
  }
  check_pairs(pairs, split.train);

  ManifestFeatures features(manifest);
  f.dims.channels = manifest.channels();
  f.dims.query_inputs = {{modality, features.query(modality, pairs.front().query_refs.front()).size()}};
  const ParamStore init = init_params(f.dims, g.seed);

  out << "pairs " << pairs.size() << "\n";
  const TrainResult result =
      train(pairs, split.train, init, f.train, modality, features,
            [&](std::size_t epoch, double loss, const ParamStore&) {
              out << "epoch " << epoch << " mean_loss " << fixed(loss, 6) << "\n";
            });

  json ann;
  ann["manifest"] = fs::absolute(f.manifest).lexically_normal().string();
  ann["modality"] = std::string(to_string(modality));
  ann["multi"] = f.multi;
  ann["pairgen"] = {{"seed", f.pairs.seed}, {"n_m", f.pairs.n_m},
                    {"train_fraction", f.pairs.train_fraction}};
  json train_ids = json::array(), test_ids = json::array();
  for (const auto& it : split.train) train_ids.push_back(it.id);
  for (const auto& it : split.test) test_ids.push_back(it.id);
  ann["train_ids"] = std::move(train_ids);
  ann["test_ids"] = std::move(test_ids);

  Checkpoint cp{result.params, f.train, f.train.epochs, result.loss_curve, ann.dump()};
  const fs::path dir = g.out;
  save_checkpoint(cp, dir / kCheckpointFile);
  std::string csv = "epoch,mean_loss\n";
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
    csv += std::to_string(i + 1) + "," + exact(result.loss_curve[i]) + "\n";
  }
  write_text(dir / kLossFile, csv);
  out << "checkpoint " << (dir / kCheckpointFile).string() << "\n";
  return kExitOk;
}

int cmd_index(const IndexFlags& f, const Globals& g, std::ostream& out) {
  const Checkpoint cp = load_checkpoint(f.checkpoint);
  const json ann = annotations_of(cp);
  const std::string manifest_path =
      f.manifest.empty() ? ann.at("manifest").get<std::string>() : f.manifest;
  const Manifest manifest = load_manifest(manifest_path);
  std::vector<DatasetItem> items;
  if (f.split == "all") {
    items = manifest.items;
  } else if (f.split == "test" || f.split == "train") {
    items = select_items(manifest, ann.at(f.split + "_ids"));
  } else {
    throw ArgumentError("--split must be test, train or all");
  }
  const std::size_t n_max = f.n_max == 0 ? cp.config.n_max : f.n_max;
  ManifestFeatures features(manifest);
  const ImageIndex index = build_index(items, cp.params, n_max, features);
  const fs::path path = fs::path(g.out) / kIndexFile;
  save_index(index, path);
  out << "indexed " << index.entries.size() << " items -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_query(const QueryFlags& f, std::ostream& out) {
  const ImageIndex index = load_index(f.index);
  if (f.query_files.size() > index.n_max) {
    throw ArgumentError("got " + std::to_string(f.query_files.size()) +
                        " query files; the index supports at most " + std::to_string(index.n_max));
  }
  std::vector<Embedding> queries;
  if (f.embedded) {
    for (const auto& file : f.query_files) {
      Tensor t = read_tensor(file);
      queries.push_back({t.reshaped({t.size()})});
    }
  } else {
    if (f.checkpoint.empty()) throw ArgumentError("--checkpoint is required unless --embedded");
    const Checkpoint cp = load_checkpoint(f.checkpoint);
    const std::string modality_name =
        f.modality.empty() ? annotations_of(cp).at("modality").get<std::string>() : f.modality;
    const QueryHead head = QueryHead::from_params(cp.params, parse_modality(modality_name));
    for (const auto& file : f.query_files) {
      const Tensor t = read_tensor(file);
      queries.push_back(embed_query(t.reshaped({t.size()}), head));
    }
  }
  const RankedList ranked = rank_multi(queries, index);
  for (std::size_t i = 0; i < std::min(f.top_k, ranked.size()); ++i) {
    out << ranked[i].id << " " << fixed(ranked[i].distance, 6) << "\n";
  }
  return kExitOk;
}

int cmd_eval(const EvalFlags& f, const Globals& g, std::ostream& out) {
  const ImageIndex index = load_index(f.index);
  std::vector<EvalQuery> queries;
  if (!f.queries.empty()) {
    queries = load_eval_queries(f.queries);
  } else {
    if (f.checkpoint.empty()) throw ArgumentError("eval needs --checkpoint or --queries");
    const Checkpoint cp = load_checkpoint(f.checkpoint);
    const json ann = annotations_of(cp);
    const Manifest manifest =
        load_manifest(f.manifest.empty() ? ann.at("manifest").get<std::string>() : f.manifest);
    const Modality modality = parse_modality(ann.at("modality").get<std::string>());
    const auto test_items = select_items(manifest, ann.at("test_ids"));
    PairGenConfig pg;
    pg.seed = ann.at("pairgen").at("seed").get<std::uint64_t>();
    pg.train_fraction = ann.at("pairgen").at("train_fraction").get<double>();
    const auto specs = gen_test_queries(test_items, modality,
                                        split_pools(sketch_pools(manifest), pg).test, pg.seed);
    ManifestFeatures features(manifest);
    queries = embed_queries(specs, cp.params, modality, features);
  }
  const EvalReport report = evaluate(queries, index);
  write_text(fs::path(g.out) / kReportFile, report.to_json());
  out << "mAP: " << fixed(report.map, 6) << "\n";
  return kExitOk;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ArgumentError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ArgumentError("config file " + path + " must hold a JSON object");

  std::vector<std::string> out = args;
  for (const auto& [key, value] : doc.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "command" || name == "config") continue;
    const std::string flag = "--" + name;
    if (has_flag(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(json_scalar_to_arg(v));
      }
    } else if (!value.is_null()) {
      out.push_back(flag);
      out.push_back(json_scalar_to_arg(value));
    }
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  if (const char* env = std::getenv("XMODAL_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    set_num_threads(n > 0 ? static_cast<std::size_t>(n) : 1);
  }

  CLI::App app{"Cross-modal retrieval with attention over image feature grids", "xmodal"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--config", g.config, "JSON file of flag values (command-line flags win)");
  app.add_option("--out", g.out, "Output directory");

  SynthConfig synth;
  CLI::App* gen = app.add_subcommand("gen-synth", "Generate a synthetic dataset");
  gen->add_option("--classes", synth.num_classes, "Number of (constituent) classes");
  gen->add_option("--images-per-class", synth.images_per_class);
  gen->add_option("--grid-h", synth.grid_h);
  gen->add_option("--grid-w", synth.grid_w);
  gen->add_option("--channels", synth.channels);
  gen->add_option("--object-cells", synth.object_cells);
  gen->add_option("--sigma-image", synth.sigma_image);
  gen->add_option("--sigma-text", synth.sigma_text);
  gen->add_option("--sigma-sketch", synth.sigma_sketch);
  gen->add_flag("--multi", synth.multi, "Two-object images over all class pairs");
  gen->add_option("--text-dim", synth.text_dim);
  gen->add_option("--sketch-dim", synth.sketch_dim);
  gen->add_option("--sketches-per-image", synth.sketches_per_image);
  gen->add_option("--sketches-per-class", synth.sketches_per_class);

  TrainFlags tf;
  CLI::App* trn = app.add_subcommand("train", "Split, build pairs and train a model");
  trn->add_option("--manifest", tf.manifest)->required();
  trn->add_option("--modality", tf.modality)->check(CLI::IsMember({"text", "sketch"}));
  trn->add_flag("--multi", tf.multi, "Use the two-object protocol");
  trn->add_option("--epochs", tf.train.epochs);
  trn->add_option("--lr", tf.train.lr);
  trn->add_option("--batch", tf.train.batch);
  trn->add_option("--margin", tf.train.margin);
  trn->add_option("--beta1", tf.train.beta1);
  trn->add_option("--beta2", tf.train.beta2);
  trn->add_option("--eps", tf.train.eps);
  trn->add_option("--n-max", tf.train.n_max);
  trn->add_option("--n-m", tf.pairs.n_m, "Sketch combinations per two-object image");
  trn->add_option("--train-fraction", tf.pairs.train_fraction);
  trn->add_option("--hidden", tf.dims.hidden, "Attention LSTM width");
  trn->add_option("--attn", tf.dims.attn, "Attention scorer width");
  trn->add_option("--embed", tf.dims.embed, "Joint embedding width");
  trn->add_option("--query-hidden", tf.dims.query_hidden, "Query head hidden width");

  IndexFlags xf;
  CLI::App* idx = app.add_subcommand("index", "Embed database images into an index");
  idx->add_option("--checkpoint", xf.checkpoint)->required()->check(CLI::ExistingFile);
  idx->add_option("--manifest", xf.manifest, "Defaults to the training manifest");
  idx->add_option("--split", xf.split)->check(CLI::IsMember({"test", "train", "all"}));
  idx->add_option("--n-max", xf.n_max, "Attention steps per image (0: from checkpoint)");

  QueryFlags qf;
  CLI::App* qry = app.add_subcommand("query", "Rank indexed images for one or more queries");
  qry->add_option("--index", qf.index)->required()->check(CLI::ExistingFile);
  qry->add_option("--checkpoint", qf.checkpoint)->check(CLI::ExistingFile);
  qry->add_option("--modality", qf.modality)->check(CLI::IsMember({"text", "sketch"}));
  qry->add_option("--query-file", qf.query_files, "Raw query feature tensor (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  qry->add_flag("--embedded", qf.embedded, "Query files already hold joint-space embeddings");
  qry->add_option("--top-k", qf.top_k);

  EvalFlags ef;
  CLI::App* evl = app.add_subcommand("eval", "Compute mAP over held-out queries");
  evl->add_option("--index", ef.index)->required()->check(CLI::ExistingFile);
  evl->add_option("--checkpoint", ef.checkpoint)->check(CLI::ExistingFile);
  evl->add_option("--manifest", ef.manifest);
  evl->add_option("--queries", ef.queries, "Precomputed query embeddings")->check(CLI::ExistingFile);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    const bool writes_dir = sub != qry;
    if (writes_dir && g.out.empty()) throw ArgumentError("--out is required");
    if (!g.out.empty()) echo_config(app, *sub, g.out);

    if (sub == gen) return cmd_gen_synth(synth, g, out);
    if (sub == trn) return cmd_train(tf, g, out);
    if (sub == idx) return cmd_index(xf, g, out);
    if (sub == qry) return cmd_query(qf, out);
    return cmd_eval(ef, g, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergedError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const json::exception& e) {
    err << "error: malformed run metadata: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace xmodal::cli
