#pragma once

// Model document: trained hyper-variational parameters as versioned JSON.
// Doubles are written in shortest round-trip form, so save/load/save is
// byte-identical.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdmn/propagation.hpp"
#include "vdmn/riemannian.hpp"

namespace vdmn {

inline constexpr int kModelFormatVersion = 1;

struct TrainingFingerprint {
  std::string config_hash;
  std::string dataset_hash;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  int epochs = 0;
  int best_epoch = 0;
};

struct ModelDocument {
  VdmnParams params;
  int mean_order = 1;
  NllMode loss_mode = NllMode::riemannian;
  TrainingFingerprint fingerprint;
};

/// FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string model_to_json(const ModelDocument& doc) {
  using nlohmann::ordered_json;
  const VdmnParams& p = doc.params;
  ordered_json j;
  j["format"] = "vdmn-model";
  j["format_version"] = kModelFormatVersion;
  j["depth"] = p.depth;
  j["leaf_weight_transform"] = "softplus";
  j["leaf_weights"] = p.weight_param;
  j["angle_mean"] = p.angle_mean;
  j["angle_logvar"] = p.angle_logvar;
  j["df_logvar"] = p.df_logvar;
  j["leaf_phase"] = p.leaf_phase;
  j["normalization"] = {{"reference", p.normalization.reference}, {"normalized", p.normalization.normalized}};
  j["propagation"] = {{"mean_order", doc.mean_order}, {"loss_mode", to_string(doc.loss_mode)}};
  const auto& f = doc.fingerprint;
  j["training"] = {{"config_hash", f.config_hash},       {"dataset_hash", f.dataset_hash},
                   {"final_train_loss", f.final_train_loss}, {"best_val_loss", f.best_val_loss},
                   {"epochs", f.epochs},                 {"best_epoch", f.best_epoch}};
  return j.dump(2) + "\n";
}

namespace detail {

template <class T>
T field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw SchemaError(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(std::string("field '") + name + "' has the wrong type");
  }
}

}  // namespace detail

inline ModelDocument model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model document does not parse", e.byte);
  }
  if (!j.is_object()) throw SchemaError("model document is not an object");
  if (detail::field<std::string>(j, "format") != "vdmn-model") throw SchemaError("field 'format' is not vdmn-model");
  const int version = detail::field<int>(j, "format_version");
  if (version != kModelFormatVersion)
    throw SchemaError("unsupported format_version " + std::to_string(version));
  ModelDocument doc;
  VdmnParams& p = doc.params;
  p.depth = detail::field<int>(j, "depth");
  if (p.depth < 1 || p.depth > 16) throw SchemaError("field 'depth' out of range");
  if (detail::field<std::string>(j, "leaf_weight_transform") != "softplus")
    throw SchemaError("field 'leaf_weight_transform' must be softplus");
  p.weight_param = detail::field<std::vector<double>>(j, "leaf_weights");
  p.angle_mean = detail::field<std::vector<double>>(j, "angle_mean");
  p.angle_logvar = detail::field<std::vector<double>>(j, "angle_logvar");
  p.df_logvar = detail::field<std::vector<double>>(j, "df_logvar");
  p.leaf_phase = detail::field<std::vector<int>>(j, "leaf_phase");
  const std::pair<const char*, std::size_t> lengths[] = {{"leaf_weights", p.weight_param.size()},
                                                         {"angle_mean", p.angle_mean.size()},
                                                         {"angle_logvar", p.angle_logvar.size()},
                                                         {"df_logvar", p.df_logvar.size()},
                                                         {"leaf_phase", p.leaf_phase.size()}};
  const std::size_t expect[] = {static_cast<std::size_t>(num_leaves(p.depth)),
                                static_cast<std::size_t>(num_internal(p.depth)),
                                static_cast<std::size_t>(num_internal(p.depth)),
                                static_cast<std::size_t>(num_leaves(p.depth) / 2),
                                static_cast<std::size_t>(num_leaves(p.depth))};
  for (int k = 0; k < 5; ++k)
    if (lengths[k].second != expect[k])
      throw SchemaError(std::string("field '") + lengths[k].first + "' has length " + std::to_string(lengths[k].second) +
                        ", depth " + std::to_string(p.depth) + " needs " + std::to_string(expect[k]));
  const auto norm = detail::field<nlohmann::json>(j, "normalization");
  p.normalization.reference = detail::field<std::string>(norm, "reference");
  p.normalization.normalized = detail::field<bool>(norm, "normalized");
  const auto prop = detail::field<nlohmann::json>(j, "propagation");
  doc.mean_order = detail::field<int>(prop, "mean_order");
  try {
    doc.loss_mode = parse_nll_mode(detail::field<std::string>(prop, "loss_mode"));
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("field 'loss_mode': ") + e.what());
  }
  if (doc.mean_order != 1 && doc.mean_order != 2) throw SchemaError("field 'mean_order' must be 1 or 2");
  const auto tr = detail::field<nlohmann::json>(j, "training");
  auto& f = doc.fingerprint;
  f.config_hash = detail::field<std::string>(tr, "config_hash");
  f.dataset_hash = detail::field<std::string>(tr, "dataset_hash");
  f.final_train_loss = detail::field<double>(tr, "final_train_loss");
  f.best_val_loss = detail::field<double>(tr, "best_val_loss");
  f.epochs = detail::field<int>(tr, "epochs");
  f.best_epoch = detail::field<int>(tr, "best_epoch");
  try {
    p.validate();
  } catch (const StructuralError& e) {
    throw SchemaError(e.what());
  }
  return doc;
}

inline void save_model(const ModelDocument& doc, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write model file " + path);
  os << model_to_json(doc);
  if (!os) throw ConfigError("failed writing model file " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline ModelDocument load_model(const std::string& path) { return model_from_json(read_file(path)); }

}  // namespace vdmn
