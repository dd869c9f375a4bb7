#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ccrl/tensor.hpp"

namespace ccrl {

/// Named tensor records: "CCRL", u32 version, u32 count, then per record a
/// u16 name length, the UTF-8 name and a tensor blob. Record order is kept.
class Checkpoint {
 public:
  template <class T>
  void put(const std::string& name, const Tensor<T>& t);
  void put_scalar(const std::string& name, double v) { put(name, Tensor<double>::scalar(v)); }
  /// Converts from the stored dtype.
  template <class T>
  Tensor<T> get(const std::string& name) const;
  double get_scalar(const std::string& name) const;

  bool has(const std::string& name) const { return blobs_.contains(name); }
  const std::vector<std::string>& names() const noexcept { return order_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> blobs_;
};

}  // namespace ccrl
