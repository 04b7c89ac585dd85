// SPDX-License-Identifier: Apache-2.0
#include "xmodal/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xmodal/errors.hpp"
#include "xmodal/tensor_io.hpp"

namespace xmodal {

using nlohmann::json;

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kMalformedJson: return "malformed-json";
    case ViolationKind::kMissingField: return "missing-field";
    case ViolationKind::kWrongType: return "wrong-type";
    case ViolationKind::kBadGridShape: return "bad-grid-shape";
    case ViolationKind::kUnknownClass: return "unknown-class";
    case ViolationKind::kBadLabelCount: return "bad-label-count";
    case ViolationKind::kDuplicateLabel: return "duplicate-label";
    case ViolationKind::kDuplicateId: return "duplicate-id";
    case ViolationKind::kDanglingPath: return "dangling-path";
    case ViolationKind::kUnknownQueryRef: return "unknown-query-ref";
  }
  return "unknown";
}

namespace {
std::string summarize(const std::vector<Violation>& v) {
  std::ostringstream out;
  out << "manifest validation failed with " << v.size() << " violation(s)";
  for (const auto& x : v) out << "\n  [" << to_string(x.kind) << "] " << x.message;
  return out.str();
}
}  // namespace

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(summarize(violations)), violations_(std::move(violations)) {}

bool ValidationError::has(ViolationKind kind) const {
  return std::any_of(violations_.begin(), violations_.end(),
                     [kind](const Violation& v) { return v.kind == kind; });
}

std::string DatasetItem::class_key() const {
  std::vector<std::string> sorted = class_labels;
  std::sort(sorted.begin(), sorted.end());
  std::string key;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) key += '+';
    key += sorted[i];
  }
  return key;
}

const QueryFeature& Manifest::query(Modality m, const std::string& id) const {
  const auto mod = query_features.find(std::string(to_string(m)));
  if (mod != query_features.end()) {
    const auto it = mod->second.find(id);
    if (it != mod->second.end()) return it->second;
  }
  throw ArgumentError("no " + std::string(to_string(m)) + " query feature with id '" + id + "'");
}

// ---------------------------------------------------------------------------

namespace {

class Validator {
 public:
  void add(ViolationKind kind, std::string message) {
    violations_.push_back({kind, std::move(message)});
  }
  const std::vector<Violation>& violations() const { return violations_; }

  const json* field(const json& obj, const char* key, json::value_t type, const std::string& where,
                    bool required = true) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) add(ViolationKind::kMissingField, where + ": missing \"" + key + "\"");
      return nullptr;
    }
    const bool ok = type == json::value_t::number_unsigned ? it->is_number_integer()
                                                           : it->type() == type;
    if (!ok) {
      add(ViolationKind::kWrongType,
          where + ": \"" + key + "\" must be " + type_name(type) + ", got " + it->type_name());
      return nullptr;
    }
    return &*it;
  }

  std::vector<std::string> strings(const json& arr, const std::string& where) {
    std::vector<std::string> out;
    for (const auto& v : arr) {
      if (!v.is_string()) {
        add(ViolationKind::kWrongType, where + ": expected strings, got " + v.type_name());
        continue;
      }
      out.push_back(v.get<std::string>());
    }
    return out;
  }

 private:
  static std::string type_name(json::value_t t) {
    switch (t) {
      case json::value_t::array: return "an array";
      case json::value_t::object: return "an object";
      case json::value_t::string: return "a string";
      default: return "a number";
    }
  }
  std::vector<Violation> violations_;
};

}  // namespace

Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& root) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError({{ViolationKind::kMalformedJson, e.what()}});
  }
  if (!doc.is_object()) {
    throw ValidationError({{ViolationKind::kMalformedJson, "top level must be a JSON object"}});
  }

  Validator v;
  Manifest m;
  m.root = root;

  if (const json* classes = v.field(doc, "classes", json::value_t::array, "manifest")) {
    m.classes = v.strings(*classes, "classes");
    std::set<std::string> seen;
    for (const auto& c : m.classes) {
      if (!seen.insert(c).second) v.add(ViolationKind::kDuplicateId, "duplicate class '" + c + "'");
    }
  }
  const std::set<std::string> class_set(m.classes.begin(), m.classes.end());

  if (const json* shape = v.field(doc, "grid_shape", json::value_t::array, "manifest")) {
    bool ok = shape->size() == 3;
    for (std::size_t i = 0; ok && i < 3; ++i) {
      ok = (*shape)[i].is_number_integer() && (*shape)[i].get<long long>() > 0;
      if (ok) m.grid_shape[i] = (*shape)[i].get<std::size_t>();
    }
    if (!ok) {
      v.add(ViolationKind::kBadGridShape,
            "grid_shape must be three positive integers [h, w, M], got " + shape->dump());
    }
  }

  const auto check_path = [&](const std::string& ref, const std::string& where) {
    if (ref.empty() || !std::filesystem::is_regular_file(root / ref)) {
      v.add(ViolationKind::kDanglingPath, where + ": file not found: " + (root / ref).string());
    }
  };

  if (const json* qf = v.field(doc, "query_features", json::value_t::object, "manifest")) {
    for (const auto& [modality, entries] : qf->items()) {
      if (modality != "text" && modality != "sketch") {
        v.add(ViolationKind::kWrongType, "query_features: unknown modality '" + modality + "'");
        continue;
      }
      if (!entries.is_object()) {
        v.add(ViolationKind::kWrongType, "query_features." + modality + " must be an object");
        continue;
      }
      auto& dst = m.query_features[modality];
      for (const auto& [id, entry] : entries.items()) {
        const std::string where = "query_features." + modality + "." + id;
        QueryFeature f;
        if (entry.is_string()) {
          f.path = entry.get<std::string>();
        } else if (entry.is_object()) {
          if (const json* p = v.field(entry, "path", json::value_t::string, where)) {
            f.path = p->get<std::string>();
          }
          if (const json* c = v.field(entry, "class", json::value_t::string, where, false)) {
            f.class_name = c->get<std::string>();
            if (!class_set.count(f.class_name)) {
              v.add(ViolationKind::kUnknownClass,
                    where + ": class '" + f.class_name + "' is not declared");
            }
          }
        } else {
          v.add(ViolationKind::kWrongType, where + ": expected a path or an object");
          continue;
        }
        if (f.class_name.empty() && class_set.count(id)) f.class_name = id;
        if (!f.path.empty()) check_path(f.path, where);
        dst.emplace(id, std::move(f));
      }
    }
  }

  const auto known_ref = [&](const char* modality, const std::string& id) {
    const auto it = m.query_features.find(modality);
    return it != m.query_features.end() && it->second.count(id) > 0;
  };

  if (const json* items = v.field(doc, "items", json::value_t::array, "manifest")) {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < items->size(); ++i) {
      const json& it = (*items)[i];
      std::string where = "items[" + std::to_string(i) + "]";
      if (!it.is_object()) {
        v.add(ViolationKind::kWrongType, where + ": expected an object");
        continue;
      }
      DatasetItem item;
      if (const json* id = v.field(it, "id", json::value_t::string, where)) {
        item.id = id->get<std::string>();
        where += " (" + item.id + ")";
        if (!ids.insert(item.id).second) {
          v.add(ViolationKind::kDuplicateId, where + ": duplicate item id");
        }
      }
      if (const json* labels = v.field(it, "class_labels", json::value_t::array, where)) {
        item.class_labels = v.strings(*labels, where + ".class_labels");
        if (item.class_labels.empty() || item.class_labels.size() > 2) {
          v.add(ViolationKind::kBadLabelCount,
                where + ": needs 1 or 2 class labels, has " +
                    std::to_string(item.class_labels.size()));
        } else if (item.class_labels.size() == 2 &&
                   item.class_labels[0] == item.class_labels[1]) {
          v.add(ViolationKind::kDuplicateLabel,
                where + ": combined class repeats label '" + item.class_labels[0] + "'");
        }
        for (const auto& c : item.class_labels) {
          if (!class_set.count(c)) {
            v.add(ViolationKind::kUnknownClass, where + ": label '" + c + "' is not declared");
          }
        }
      }
      if (const json* grid = v.field(it, "grid", json::value_t::string, where)) {
        item.grid_ref = grid->get<std::string>();
        check_path(item.grid_ref, where);
      }
      if (const json* s = v.field(it, "sketches", json::value_t::array, where, false)) {
        item.sketch_refs = v.strings(*s, where + ".sketches");
      }
      if (const json* t = v.field(it, "texts", json::value_t::array, where, false)) {
        item.text_refs = v.strings(*t, where + ".texts");
      }
      for (const auto& r : item.sketch_refs) {
        if (!known_ref("sketch", r)) {
          v.add(ViolationKind::kUnknownQueryRef, where + ": unknown sketch query '" + r + "'");
        }
      }
      for (const auto& r : item.text_refs) {
        if (!known_ref("text", r)) {
          v.add(ViolationKind::kUnknownQueryRef, where + ": unknown text query '" + r + "'");
        }
      }
      m.items.push_back(std::move(item));
    }
  }

  if (!v.violations().empty()) throw ValidationError(v.violations());
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError({{ViolationKind::kDanglingPath, "cannot open manifest " + path.string()}});
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

std::string manifest_to_json(const Manifest& m) {
  json doc;
  doc["classes"] = m.classes;
  doc["grid_shape"] = m.grid_shape;
  json items = json::array();
  for (const auto& it : m.items) {
    items.push_back({{"id", it.id},
                     {"class_labels", it.class_labels},
                     {"grid", it.grid_ref},
                     {"sketches", it.sketch_refs},
                     {"texts", it.text_refs}});
  }
  doc["items"] = std::move(items);
  json qf = json::object();
  for (const auto& [modality, entries] : m.query_features) {
    json e = json::object();
    for (const auto& [id, f] : entries) {
      if (f.class_name.empty() || f.class_name == id) {
        e[id] = f.path;
      } else {
        e[id] = {{"path", f.path}, {"class", f.class_name}};
      }
    }
    qf[modality] = std::move(e);
  }
  doc["query_features"] = std::move(qf);
  return doc.dump(2) + "\n";
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  const std::string text = manifest_to_json(m);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::map<std::string, std::vector<std::string>> sketch_pools(const Manifest& m) {
  std::map<std::string, std::set<std::string>> pools;
  for (const auto& it : m.items) {
    if (it.class_labels.size() == 1) {
      pools[it.class_labels[0]].insert(it.sketch_refs.begin(), it.sketch_refs.end());
    }
  }
  if (const auto sk = m.query_features.find("sketch"); sk != m.query_features.end()) {
    for (const auto& [id, f] : sk->second) {
      if (!f.class_name.empty()) pools[f.class_name].insert(id);
    }
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [c, ids] : pools) out[c].assign(ids.begin(), ids.end());
  return out;
}

// ---------------------------------------------------------------------------

const Tensor& ManifestFeatures::grid(const DatasetItem& item) {
  auto it = grids_.find(item.id);
  if (it != grids_.end()) return it->second;
  Tensor t = read_tensor(manifest_.resolve(item.grid_ref));
  const std::size_t l = manifest_.locations(), mdim = manifest_.channels();
  if (t.size() != l * mdim) {
    throw DimensionError("grid of item " + item.id + " has shape " + shape_string(t.shape()) +
                         ", manifest declares " + std::to_string(manifest_.grid_shape[0]) + "x" +
                         std::to_string(manifest_.grid_shape[1]) + "x" + std::to_string(mdim));
  }
  return grids_.emplace(item.id, t.reshaped({l, mdim})).first->second;
}

const Tensor& ManifestFeatures::query(Modality m, const std::string& ref) {
  const std::string key = std::string(to_string(m)) + "/" + ref;
  auto it = queries_.find(key);
  if (it != queries_.end()) return it->second;
  Tensor t = read_tensor(manifest_.resolve(manifest_.query(m, ref).path));
  return queries_.emplace(key, t.reshaped({t.size()})).first->second;
}

const Tensor& InMemoryFeatures::grid(const DatasetItem& item) {
  const auto it = grids_.find(item.id);
  if (it == grids_.end()) throw ArgumentError("no grid for item '" + item.id + "'");
  return it->second;
}

const Tensor& InMemoryFeatures::query(Modality m, const std::string& ref) {
  const auto it = queries_.find({m, ref});
  if (it == queries_.end()) {
    throw ArgumentError("no " + std::string(to_string(m)) + " query '" + ref + "'");
  }
  return it->second;
}

}  // namespace xmodal
