#pragma once

// Self-describing tensor archive used for checkpoints and feature caches.
//
// Layout: 8-byte magic "MLNARC01", u64 little-endian header length, a JSON
// header {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}, then the
// raw little-endian doubles of every tensor back to back.

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "abtts/nn.hpp"
#include "abtts/tensor.hpp"

namespace abtts {

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

/// Written to a sibling temp file and renamed, so readers never see a
/// half-written archive.
void save_archive(const std::string& path, const nlohmann::json& meta, const nn::ParamList& tensors);
Archive load_archive(const std::string& path);

/// Copies every tensor named in `dst` out of the archive (exact values).
void restore_params(const Archive& archive, const nn::ParamList& dst);
nn::ParamList archive_params(const Archive& archive);

}  // namespace abtts
