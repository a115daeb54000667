#include "aat/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container blobs are little-endian; big-endian hosts are unsupported");

namespace aat {

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContainerError(ContainerFault::shape_mismatch, "non-positive dimension");
    n *= std::size_t(d);
  }
  return n;
}

}  // namespace

void Container::put(const std::string& name, std::vector<int> shape, std::vector<float> data) {
  if (element_count(shape) != data.size())
    throw ContainerError(ContainerFault::shape_mismatch,
                         "tensor '" + name + "': shape does not match value count");
  for (const auto& t : tensors_)
    if (t.name == name)
      throw ContainerError(ContainerFault::corrupt_manifest, "duplicate tensor '" + name + "'");
  tensors_.push_back(NamedTensor{name, std::move(shape), std::move(data)});
}

void Container::put(const std::string& name, const Tensor2& t) {
  put(name, {t.rows, t.cols}, t.data);
}

void Container::put(const std::string& name, const std::vector<float>& v) {
  put(name, {int(v.size())}, v);
}

bool Container::has(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const NamedTensor& Container::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw ContainerError(ContainerFault::corrupt_manifest, "missing tensor '" + name + "'");
}

Tensor2 Container::get2d(const std::string& name) const {
  const NamedTensor& t = get(name);
  if (t.shape.size() != 2)
    throw ContainerError(ContainerFault::shape_mismatch, "tensor '" + name + "' is not 2-d");
  Tensor2 out(t.shape[0], t.shape[1]);
  out.data = t.data;
  return out;
}

std::vector<float> Container::get1d(const std::string& name) const {
  const NamedTensor& t = get(name);
  if (t.shape.size() != 1)
    throw ContainerError(ContainerFault::shape_mismatch, "tensor '" + name + "' is not 1-d");
  return t.data;
}

std::string blob_path_for(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

void save_container(const Container& c, const std::string& manifest_path) {
  const std::string blob_path = blob_path_for(manifest_path);

  nlohmann::json manifest;
  manifest["blob"] = std::filesystem::path(blob_path).filename().string();
  nlohmann::json list = nlohmann::json::array();

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw ContainerError(ContainerFault::missing_file, "cannot open " + blob_path);

  std::uint64_t offset = 0;
  for (const auto& t : c.tensors()) {
    const std::uint64_t length = std::uint64_t(t.data.size()) * 4;
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["offset"] = offset;
    entry["length"] = length;
    list.push_back(entry);
    blob.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(length));
    offset += length;
  }
  blob.close();
  if (!blob) throw ContainerError(ContainerFault::missing_file, "short write to " + blob_path);

  manifest["tensors"] = list;
  if (!c.meta.is_null() && !c.meta.empty()) manifest["meta"] = c.meta;

  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw ContainerError(ContainerFault::missing_file, "cannot open " + manifest_path);
  out << manifest.dump(2) << "\n";
}

Container load_container(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ContainerError(ContainerFault::missing_file, "cannot open " + manifest_path);

  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerFault::corrupt_manifest,
                         manifest_path + ": " + std::string(e.what()));
  }
  if (!manifest.is_object() || !manifest.contains("blob") || !manifest.contains("tensors"))
    throw ContainerError(ContainerFault::corrupt_manifest,
                         manifest_path + ": missing blob/tensors keys");

  const std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
  const std::string blob_path = (dir / manifest["blob"].get<std::string>()).string();

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw ContainerError(ContainerFault::missing_file, "cannot open " + blob_path);
  blob.seekg(0, std::ios::end);
  const std::uint64_t blob_size = std::uint64_t(blob.tellg());

  Container c;
  if (manifest.contains("meta")) c.meta = manifest["meta"];

  try {
    for (const auto& entry : manifest["tensors"]) {
      const std::string name = entry.at("name").get<std::string>();
      const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t length = entry.at("length").get<std::uint64_t>();

      const std::size_t count = element_count(shape);
      if (length != count * 4)
        throw ContainerError(ContainerFault::shape_mismatch,
                             "tensor '" + name + "': length disagrees with shape");
      if (offset + length > blob_size)
        throw ContainerError(ContainerFault::truncated_blob,
                             "tensor '" + name + "' extends past end of blob");

      std::vector<float> data(count);
      blob.seekg(std::streamoff(offset));
      blob.read(reinterpret_cast<char*>(data.data()), std::streamsize(length));
      if (!blob)
        throw ContainerError(ContainerFault::truncated_blob, "short read for tensor '" + name + "'");
      c.put(name, shape, std::move(data));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerFault::corrupt_manifest,
                         manifest_path + ": " + std::string(e.what()));
  }
  return c;
}

}  // namespace aat
