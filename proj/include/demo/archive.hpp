// SPDX-License-Identifier: Apache-2.0
//
// Named-array archive: the single on-disk container for checkpoints and
// feature files.
//
// Layout (all integers little-endian):
//   bytes 0..7    magic "DEMOARC1"
//   bytes 8..15   uint64 manifest length L
//   next L bytes  UTF-8 JSON manifest:
//                   {"format": "demo-array-archive", "version": 1,
//                    "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}...],
//                    "meta": {...}}
//   remainder     payload; each array stored contiguously in row-major order
//                 at manifest "offset" (relative to payload start).
// dtype is "float64" (2-D matrices) or "int64" (1-D vectors).
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "demo/tensor.hpp"

namespace demo {

class ArrayArchive {
 public:
  void put(const std::string& name, const Mat& value);
  void put_ints(const std::string& name, const std::vector<std::int64_t>& value);

  bool contains(const std::string& name) const;
  bool is_matrix(const std::string& name) const;
  const Mat& matrix(const std::string& name) const;
  const std::vector<std::int64_t>& ints(const std::string& name) const;
  /// Names in insertion order.
  const std::vector<std::string>& names() const { return order_; }

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  void claim(const std::string& name);

  std::vector<std::string> order_;
  std::map<std::string, Mat> matrices_;
  std::map<std::string, std::vector<std::int64_t>> ints_;
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace demo
