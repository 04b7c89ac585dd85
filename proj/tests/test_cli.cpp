// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support.hpp"
#include "xmodal/retrieval.hpp"

using namespace xmodal;
using namespace xmodal::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const std::vector<std::string> kTinyData = {"--classes",  "3", "--images-per-class", "5",
                                            "--grid-h",   "2", "--grid-w",           "2",
                                            "--channels", "8", "--object-cells",     "1",
                                            "--text-dim", "6", "--sketch-dim",       "7"};

const std::vector<std::string> kTinyModel = {"--hidden", "4", "--attn",         "3",
                                             "--embed",  "16", "--query-hidden", "5",
                                             "--epochs", "2", "--batch",        "4"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// gen-synth + train + index in `dir`; returns the manifest path.
fs::path pipeline(const TempDir& dir, const std::string& modality = "text") {
  REQUIRE(invoke(cat({"gen-synth", "--out", (dir / "data").string()}, kTinyData)).code == 0);
  const auto manifest = dir / "data/manifest.json";
  const Run t = invoke(cat({"train", "--manifest", manifest.string(), "--modality", modality, "--out",
                         (dir / "run").string()},
                        kTinyModel));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const Run i = invoke({"index", "--checkpoint", (dir / "run/checkpoint.xmc").string(), "--split", "all",
                     "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(i.code == 0, i.err);
  return manifest;
}

}  // namespace

TEST_CASE("cli: gen-synth writes a manifest and is reproducible") {
  TempDir dir;
  const Run a = invoke(cat({"gen-synth", "--seed", "42", "--out", (dir / "a").string()}, kTinyData));
  CHECK(a.code == 0);
  CHECK(a.out.find("manifest.json") != std::string::npos);
  CHECK(fs::exists(dir / "a/manifest.json"));
  CHECK(invoke(cat({"gen-synth", "--seed", "42", "--out", (dir / "b").string()}, kTinyData)).code == 0);
  for (const char* f : {"manifest.json", "grids/img00003.xmt", "queries/text/class01.xmt"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
}

TEST_CASE("cli: oversize object cells in multi mode is a usage error") {
  TempDir dir;
  const Run r = invoke({"gen-synth", "--multi", "--grid-h", "2", "--grid-w", "2", "--object-cells", "3",
                     "--out", dir.path().string()});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("cli: usage errors") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"gen-synth", "--classes", "many", "--out", "x"}).code == 2);
  CHECK(invoke({"train", "--manifest", "/nonexistent/manifest.json", "--out", "/tmp/x"}).code == 2);
  CHECK(invoke({"gen-synth"}).code == 2);  // no --out
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("cli: train writes checkpoint, loss curve and resolved config") {
  TempDir dir;
  pipeline(dir);
  CHECK(fs::exists(dir / "run/checkpoint.xmc"));
  CHECK(fs::exists(dir / "run/index.xmc"));
  const std::string csv = slurp(dir / "run/loss.csv");
  CHECK(csv.rfind("epoch,mean_loss\n1,", 0) == 0);
  const auto cfg = nlohmann::json::parse(slurp(dir / "run/run_config.json"));
  CHECK(cfg["command"] == "index");  // index rewrote the echo in the shared dir
  CHECK(cfg.contains("split"));
}

TEST_CASE("cli: zero learning rate gives a flat curve") {
  TempDir dir;
  REQUIRE(invoke(cat({"gen-synth", "--out", (dir / "data").string()}, kTinyData)).code == 0);
  const Run r = invoke(cat(cat({"train", "--manifest", (dir / "data/manifest.json").string(), "--out",
                             (dir / "run").string()},
                            kTinyModel),
                        {"--lr", "0"}));
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(dir / "run/loss.csv"));
  std::string line;
  std::getline(csv, line);
  std::set<std::string> values;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    values.insert(line.substr(line.find(',') + 1));
    ++rows;
  }
  CHECK(rows == 2);
  CHECK(values.size() == 1);
  const auto cfg = nlohmann::json::parse(slurp(dir / "run/run_config.json"));
  CHECK(cfg["lr"] == 0);
  CHECK(cfg["margin"] == 0);  // default filled in
  CHECK(cfg["modality"] == "text");
}

TEST_CASE("cli: querying with a stored embedding returns that image first") {
  TempDir dir;
  pipeline(dir);
  const ImageIndex idx = load_index(dir / "run/index.xmc");
  const IndexEntry& e = idx.entries[4];
  write_tensor(dir / "q.xmt", e.steps[0].values);
  const Run r = invoke({"query", "--index", (dir / "run/index.xmc").string(), "--embedded",
                     "--query-file", (dir / "q.xmt").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.rfind(e.id + " 0.000000\n", 0) == 0);
  std::size_t lines = std::count(r.out.begin(), r.out.end(), '\n');
  CHECK(lines == 10);
}

TEST_CASE("cli: two query files rank the same in either order") {
  TempDir dir;
  const auto manifest = pipeline(dir);
  const auto q0 = (dir / "data/queries/text/class00.xmt").string();
  const auto q1 = (dir / "data/queries/text/class02.xmt").string();
  const auto base = std::vector<std::string>{"query", "--index", (dir / "run/index.xmc").string(),
                                             "--checkpoint", (dir / "run/checkpoint.xmc").string(),
                                             "--top-k", "15"};
  const Run a = invoke(cat(base, {"--query-file", q0, "--query-file", q1}));
  const Run b = invoke(cat(base, {"--query-file", q1, "--query-file", q0}));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  CHECK(a.out == b.out);
  const Run three = invoke(cat(base, {"--query-file", q0, "--query-file", q1, "--query-file", q0}));
  CHECK(three.code == 2);
}

TEST_CASE("cli: eval on oracle embeddings gives mAP 1") {
  TempDir dir;
  pipeline(dir);
  const ImageIndex idx = load_index(dir / "run/index.xmc");
  std::vector<EvalQuery> queries;
  for (const auto& e : idx.entries) queries.push_back({"q-" + e.id, {e.steps[0]}, e.class_labels});
  // Replace every image with its class's first embedding so classes collapse.
  ImageIndex oracle = idx;
  std::map<std::string, Embedding> first;
  for (auto& e : oracle.entries) {
    auto it = first.emplace(e.class_labels[0], e.steps[0]).first;
    for (auto& s : e.steps) s = it->second;
  }
  for (auto& q : queries) q.embeddings = {first.at(q.class_labels[0])};
  save_index(oracle, dir / "oracle.xmc");
  save_eval_queries(queries, dir / "queries.xmc");
  const Run r = invoke({"eval", "--index", (dir / "oracle.xmc").string(), "--queries",
                     (dir / "queries.xmc").string(), "--out", (dir / "eval").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out == "mAP: 1.000000\n");
  const auto report = nlohmann::json::parse(slurp(dir / "eval/eval.json"));
  CHECK(report["map"] == 1.0);
}

TEST_CASE("cli: eval from a checkpoint reproduces byte-identical reports") {
  TempDir dir;
  pipeline(dir, "sketch");
  const auto args = std::vector<std::string>{"eval", "--index", (dir / "run/index.xmc").string(),
                                             "--checkpoint", (dir / "run/checkpoint.xmc").string()};
  REQUIRE(invoke(cat(args, {"--out", (dir / "e1").string()})).code == 0);
  REQUIRE(invoke(cat(args, {"--out", (dir / "e2").string()})).code == 0);
  CHECK(slurp(dir / "e1/eval.json") == slurp(dir / "e2/eval.json"));
}

TEST_CASE("cli: config file supplies defaults and flags win") {
  TempDir dir;
  {
    std::ofstream(dir / "cfg.json") << R"({"classes": 4, "images_per_class": 3, "grid_h": 2,
      "grid_w": 2, "channels": 4, "object_cells": 1, "text_dim": 3, "sketch_dim": 3, "seed": 5})";
  }
  const Run r = invoke({"gen-synth", "--config", (dir / "cfg.json").string(), "--classes", "2", "--out",
                     (dir / "d").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto m = nlohmann::json::parse(slurp(dir / "d/manifest.json"));
  CHECK(m["classes"].size() == 2);
  CHECK(m["items"].size() == 6);
  const auto echo = nlohmann::json::parse(slurp(dir / "d/run_config.json"));
  CHECK(echo["seed"] == 5);
  CHECK(echo["classes"] == 2);

  std::ofstream(dir / "bad.json") << "{nope";
  CHECK(invoke({"gen-synth", "--config", (dir / "bad.json").string(), "--out", (dir / "e").string()}).code == 2);
}

TEST_CASE("cli: runtime failures exit with 3") {
  TempDir dir;
  REQUIRE(invoke(cat({"gen-synth", "--out", (dir / "data").string()}, kTinyData)).code == 0);
  SUBCASE("diverged training") {
    write_tensor(dir / "data/grids/img00002.xmt",
                 Tensor::filled({2, 2, 8}, std::numeric_limits<double>::infinity()));
    const Run r = invoke(cat({"train", "--manifest", (dir / "data/manifest.json").string(), "--out",
                           (dir / "run").string()},
                          kTinyModel));
    CHECK(r.code == 3);
  }
  SUBCASE("corrupt checkpoint") {
    std::ofstream(dir / "junk.xmc") << "not a checkpoint";
    const Run r = invoke({"index", "--checkpoint", (dir / "junk.xmc").string(), "--out",
                       (dir / "x").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("byte offset") != std::string::npos);
  }
}

TEST_CASE("cli: twenty epochs give a downward-trending loss curve") {
  TempDir dir;
  REQUIRE(invoke(cat({"gen-synth", "--out", (dir / "data").string()}, kTinyData)).code == 0);
  const Run r = invoke(cat(cat({"train", "--manifest", (dir / "data/manifest.json").string(), "--out",
                                (dir / "run").string()},
                               kTinyModel),
                           {"--epochs", "20"}));
  // kTinyModel already sets --epochs; the duplicate must be refused.
  CHECK(r.code == 2);
  std::vector<std::string> model = kTinyModel;
  model[std::find(model.begin(), model.end(), "--epochs") - model.begin() + 1] = "20";
  const Run ok = invoke(cat({"train", "--manifest", (dir / "data/manifest.json").string(), "--out",
                             (dir / "run").string()},
                            model));
  REQUIRE_MESSAGE(ok.code == 0, ok.err);
  std::istringstream csv(slurp(dir / "run/loss.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<double> curve;
  while (std::getline(csv, line)) curve.push_back(std::stod(line.substr(line.find(',') + 1)));
  REQUIRE(curve.size() == 20);
  double head = 0.0, tail = 0.0;
  for (std::size_t e = 0; e < 5; ++e) {
    head += curve[e];
    tail += curve[15 + e];
  }
  CHECK(tail < head);
  CHECK(curve.back() < curve.front());
}
