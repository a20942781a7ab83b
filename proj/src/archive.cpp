#include "abtts/archive.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "abtts/error.hpp"

namespace abtts {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'N', 'A', 'R', 'C', '0', '1'};
static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

}  // namespace

const Tensor& Archive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("archive has no tensor named '" + name + "'");
  return it->second;
}

void save_archive(const std::string& path, const nlohmann::json& meta, const nn::ParamList& tensors) {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(kMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      const auto d = t.data();
      out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!out) throw DataError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path);
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError(path + ": not a tensor archive");
  if (!in.read(reinterpret_cast<char*>(&len), 8) || len > (1ull << 32)) throw DataError(path + ": corrupt header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError(path + ": truncated header");
  Archive a;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad header: " + e.what());
  }
  a.meta = header.value("meta", nlohmann::json::object());
  const auto base = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::vector<double> v(shape_numel(shape));
    in.seekg(base + static_cast<std::streamoff>(offset * sizeof(double)));
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw DataError(path + ": truncated data for " + entry.at("name").get<std::string>());
    a.tensors.emplace(entry.at("name").get<std::string>(), Tensor::from(shape, std::move(v)));
  }
  return a;
}

void restore_params(const Archive& archive, const nn::ParamList& dst) {
  nn::copy_params(archive_params(archive), dst);
}

nn::ParamList archive_params(const Archive& archive) {
  nn::ParamList out;
  for (const auto& [name, t] : archive.tensors) out.emplace_back(name, t);
  return out;
}

}  // namespace abtts
