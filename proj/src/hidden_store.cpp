#include "aop/hidden_store.hpp"

#include <cmath>
#include <set>

#include "aop/error.hpp"
#include "aop/io_util.hpp"

namespace aop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;

bool safe_dir_name(const std::string& name) {
  if (name.empty() || name == "." || name == "..") return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

std::string concept_dir(const ConceptStates& c, std::size_t index) {
  return safe_dir_name(c.name) ? c.name : "concept_" + std::to_string(index);
}

std::string where(const std::string& concept_name, int layer) {
  return "concept '" + concept_name + "' layer " + std::to_string(layer);
}

}  // namespace

std::string_view to_string(PromptCondition::Kind kind) {
  switch (kind) {
    case PromptCondition::Kind::NoPrompt: return "no_prompt";
    case PromptCondition::Kind::Optimized: return "optimized";
    case PromptCondition::Kind::Custom: return "custom";
  }
  return "?";
}

PromptCondition::Kind prompt_kind_from_string(std::string_view s) {
  if (s == "no_prompt") return PromptCondition::Kind::NoPrompt;
  if (s == "optimized") return PromptCondition::Kind::Optimized;
  if (s == "custom") return PromptCondition::Kind::Custom;
  throw SchemaError("unknown prompt condition '" + std::string(s) + "'");
}

const ConceptStates* HiddenBundle::find(std::string_view name) const {
  for (const auto& c : concepts) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

BundleShape shape_of(const HiddenBundle& bundle) {
  BundleShape shape{bundle.layer_count, bundle.hidden_dim, {}};
  for (const auto& c : bundle.concepts) {
    shape.concepts.push_back({c.name, c.prefill_token_count, c.context_token_count});
  }
  return shape;
}

json to_json(const BundleShape& shape) {
  json concepts = json::array();
  for (const auto& c : shape.concepts) {
    concepts.push_back({{"name", c.name},
                        {"prefill_token_count", c.prefill_token_count},
                        {"context_token_count", c.context_token_count}});
  }
  return {{"layer_count", shape.layer_count},
          {"hidden_dim", shape.hidden_dim},
          {"concepts", concepts}};
}

BundleShape bundle_shape_from_json(const json& j) {
  BundleShape shape;
  try {
    shape.layer_count = j.at("layer_count").get<int>();
    shape.hidden_dim = j.at("hidden_dim").get<int>();
    for (const auto& c : j.at("concepts")) {
      shape.concepts.push_back({c.at("name").get<std::string>(),
                                c.at("prefill_token_count").get<std::size_t>(),
                                c.at("context_token_count").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bundle shape: ") + e.what());
  }
  if (shape.layer_count < 0 || shape.hidden_dim < 1) {
    throw SchemaError("bundle shape: invalid layer_count/hidden_dim");
  }
  return shape;
}

void check_bundle(const HiddenBundle& bundle) {
  if (bundle.layer_count < 0) throw FormatError("layer_count must be >= 0");
  if (bundle.hidden_dim < 1) throw FormatError("hidden_dim must be >= 1");
  std::set<std::string> names;
  for (const auto& c : bundle.concepts) {
    if (c.name.empty()) throw FormatError("concept with empty name");
    if (!names.insert(c.name).second) throw FormatError("duplicate concept '" + c.name + "'");
    if (c.context_token_count < 1) {
      throw FormatError("concept '" + c.name + "': context_token_count must be >= 1");
    }
    if (static_cast<int>(c.layers.size()) != bundle.num_layer_indices()) {
      throw FormatError("concept '" + c.name + "': expected " +
                        std::to_string(bundle.num_layer_indices()) + " layer matrices, found " +
                        std::to_string(c.layers.size()));
    }
    for (int l = 0; l < bundle.num_layer_indices(); ++l) {
      const auto& m = c.layers[static_cast<std::size_t>(l)];
      if (static_cast<std::size_t>(m.rows()) != c.rows() || m.cols() != bundle.hidden_dim) {
        throw FormatError(where(c.name, l) + ": shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " + std::to_string(c.rows()) +
                          "x" + std::to_string(bundle.hidden_dim));
      }
      if (!m.allFinite()) throw FormatError(where(c.name, l) + ": non-finite value");
    }
  }
}

void write_bundle(const HiddenBundle& bundle, const fs::path& dir, bool record_hashes) {
  check_bundle(bundle);
  fs::create_directories(dir / "states");
  json concepts = json::array();
  for (std::size_t i = 0; i < bundle.concepts.size(); ++i) {
    const auto& c = bundle.concepts[i];
    const std::string sub = concept_dir(c, i);
    json files = json::array();
    json hashes = json::array();
    for (int l = 0; l < bundle.num_layer_indices(); ++l) {
      const auto& m = c.layers[static_cast<std::size_t>(l)];
      const std::string rel = "states/" + sub + "/" + std::to_string(l) + ".f32";
      const std::string bytes =
          io::encode_f32(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
      io::write_file(dir / rel, bytes);
      files.push_back(rel);
      if (record_hashes) hashes.push_back(io::sha256_hex(bytes));
    }
    json entry = {{"name", c.name},
                  {"context", c.context},
                  {"prefill_token_count", c.prefill_token_count},
                  {"context_token_count", c.context_token_count},
                  {"files", files}};
    if (record_hashes) entry["sha256"] = hashes;
    concepts.push_back(std::move(entry));
  }
  json manifest = {{"format_version", kFormatVersion},
                   {"model_id", bundle.model_id},
                   {"layer_count", bundle.layer_count},
                   {"hidden_dim", bundle.hidden_dim},
                   {"prompt_condition", to_string(bundle.prompt_condition.kind)},
                   {"prompt_text", bundle.prompt_condition.text},
                   {"provenance", bundle.provenance},
                   {"concepts", concepts}};
  io::write_json(dir / "manifest.json", manifest);
}

HiddenBundle read_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("missing " + manifest_path.string());
  json m;
  try {
    m = io::read_json(manifest_path);
  } catch (const SchemaError& e) {
    throw FormatError(e.what());
  }

  HiddenBundle b;
  std::vector<json> entries;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw FormatError("unsupported format_version " + std::to_string(version));
    }
    b.model_id = m.at("model_id").get<std::string>();
    b.layer_count = m.at("layer_count").get<int>();
    b.hidden_dim = m.at("hidden_dim").get<int>();
    b.prompt_condition.kind = prompt_kind_from_string(m.at("prompt_condition").get<std::string>());
    b.prompt_condition.text = m.value("prompt_text", std::string{});
    b.provenance = m.value("provenance", json::object());
    entries = m.at("concepts").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  } catch (const SchemaError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (b.layer_count < 0 || b.hidden_dim < 1) {
    throw FormatError(manifest_path.string() + ": invalid layer_count/hidden_dim");
  }

  for (const auto& e : entries) {
    ConceptStates c;
    std::vector<std::string> files;
    std::vector<std::string> hashes;
    try {
      c.name = e.at("name").get<std::string>();
      c.context = e.value("context", std::string{});
      c.prefill_token_count = e.at("prefill_token_count").get<std::size_t>();
      c.context_token_count = e.at("context_token_count").get<std::size_t>();
      files = e.at("files").get<std::vector<std::string>>();
      if (e.contains("sha256")) hashes = e.at("sha256").get<std::vector<std::string>>();
    } catch (const json::exception& ex) {
      throw FormatError(manifest_path.string() + ": concept entry: " + ex.what());
    }
    if (static_cast<int>(files.size()) != b.num_layer_indices()) {
      throw FormatError("concept '" + c.name + "': manifest lists " +
                        std::to_string(files.size()) + " layer files, expected " +
                        std::to_string(b.num_layer_indices()));
    }
    if (!hashes.empty() && hashes.size() != files.size()) {
      throw FormatError("concept '" + c.name + "': sha256 list length mismatch");
    }
    for (int l = 0; l < b.num_layer_indices(); ++l) {
      const fs::path file = dir / files[static_cast<std::size_t>(l)];
      if (!fs::exists(file)) {
        throw FormatError(where(c.name, l) + ": missing file " + file.string());
      }
      const std::string bytes = io::read_file(file);
      const std::size_t expected = c.rows() * static_cast<std::size_t>(b.hidden_dim) * 4;
      if (bytes.size() != expected) {
        throw FormatError(where(c.name, l) + ": " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected));
      }
      if (!hashes.empty() && io::sha256_hex(bytes) != hashes[static_cast<std::size_t>(l)]) {
        throw FormatError(where(c.name, l) + ": sha256 mismatch");
      }
      const auto values = io::decode_f32(bytes);
      StateMatrix mat(static_cast<Eigen::Index>(c.rows()), b.hidden_dim);
      std::copy(values.begin(), values.end(), mat.data());
      c.layers.push_back(std::move(mat));
    }
    b.concepts.push_back(std::move(c));
  }
  check_bundle(b);
  return b;
}

ConceptVector lmp_pool(const HiddenBundle& bundle, std::string_view concept_name, int layer) {
  const ConceptStates* c = bundle.find(concept_name);
  if (!c) throw LookupError("lmp_pool: unknown concept '" + std::string(concept_name) + "'");
  if (layer < 0 || layer > bundle.layer_count) {
    throw LookupError("lmp_pool: layer " + std::to_string(layer) + " outside 0.." +
                      std::to_string(bundle.layer_count));
  }
  if (c->context_token_count == 0) {
    throw FormatError("lmp_pool: concept '" + c->name + "' has no context tokens");
  }
  const auto& m = c->layers[static_cast<std::size_t>(layer)];
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m.cols());
  for (std::size_t r = c->prefill_token_count; r < c->rows(); ++r) {
    sum += m.row(static_cast<Eigen::Index>(r)).transpose().cast<double>();
  }
  ConceptVector out;
  out.values = sum / static_cast<double>(c->context_token_count);
  out.layer = layer;
  out.concept_name = c->name;
  return out;
}

}  // namespace aop
