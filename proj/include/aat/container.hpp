#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "aat/tensor.hpp"

namespace aat {

// On-disk tensor bundle: a manifest JSON listing every tensor (name, shape,
// byte offset, byte length) next to a single blob file of little-endian
// float32 values in row-major order.  Model weights and datasets both ride
// on this container.

enum class ContainerFault {
  missing_file,
  corrupt_manifest,
  truncated_blob,
  shape_mismatch,
};

class ContainerError : public std::runtime_error {
 public:
  ContainerError(ContainerFault fault, const std::string& what)
      : std::runtime_error(what), fault(fault) {}
  ContainerFault fault;
};

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

class Container {
 public:
  void put(const std::string& name, std::vector<int> shape, std::vector<float> data);
  void put(const std::string& name, const Tensor2& t);
  void put(const std::string& name, const std::vector<float>& v);

  bool has(const std::string& name) const;
  const NamedTensor& get(const std::string& name) const;
  Tensor2 get2d(const std::string& name) const;
  std::vector<float> get1d(const std::string& name) const;

  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  // Free-form manifest section for things that are not tensors (model spec,
  // planted-head list, dataset shape).
  nlohmann::json meta = nlohmann::json::object();

 private:
  std::vector<NamedTensor> tensors_;
};

// `manifest_path` names the JSON file; the blob lands next to it with the
// extension replaced by ".bin".
void save_container(const Container& c, const std::string& manifest_path);
Container load_container(const std::string& manifest_path);

std::string blob_path_for(const std::string& manifest_path);

}  // namespace aat
