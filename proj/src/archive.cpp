// SPDX-License-Identifier: Apache-2.0
#include "demo/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "demo/errors.hpp"

namespace demo {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'M', 'O', 'A', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

}  // namespace

void ArrayArchive::claim(const std::string& name) {
  if (contains(name)) throw InputError("archive: duplicate array '" + name + "'");
  order_.push_back(name);
}

void ArrayArchive::put(const std::string& name, const Mat& value) {
  claim(name);
  matrices_.emplace(name, value);
}

void ArrayArchive::put_ints(const std::string& name, const std::vector<std::int64_t>& value) {
  claim(name);
  ints_.emplace(name, value);
}

bool ArrayArchive::contains(const std::string& name) const {
  return matrices_.count(name) > 0 || ints_.count(name) > 0;
}

bool ArrayArchive::is_matrix(const std::string& name) const { return matrices_.count(name) > 0; }

const Mat& ArrayArchive::matrix(const std::string& name) const {
  auto it = matrices_.find(name);
  if (it == matrices_.end()) throw CheckpointError("archive: no float64 array '" + name + "'");
  return it->second;
}

const std::vector<std::int64_t>& ArrayArchive::ints(const std::string& name) const {
  auto it = ints_.find(name);
  if (it == ints_.end()) throw CheckpointError("archive: no int64 array '" + name + "'");
  return it->second;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  nlohmann::json arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : order_) {
    nlohmann::json entry;
    entry["name"] = name;
    std::uint64_t nbytes = 0;
    if (auto it = matrices_.find(name); it != matrices_.end()) {
      entry["dtype"] = "float64";
      entry["shape"] = {it->second.rows(), it->second.cols()};
      nbytes = static_cast<std::uint64_t>(it->second.size()) * sizeof(double);
    } else {
      const auto& v = ints_.at(name);
      entry["dtype"] = "int64";
      entry["shape"] = {v.size()};
      nbytes = v.size() * sizeof(std::int64_t);
    }
    entry["offset"] = offset;
    entry["nbytes"] = nbytes;
    offset += nbytes;
    arrays.push_back(std::move(entry));
  }
  nlohmann::json manifest;
  manifest["format"] = "demo-array-archive";
  manifest["version"] = 1;
  manifest["arrays"] = std::move(arrays);
  manifest["meta"] = meta_;
  const std::string header = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("archive: cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& name : order_) {
    if (auto it = matrices_.find(name); it != matrices_.end()) {
      os.write(reinterpret_cast<const char*>(it->second.data()),
               static_cast<std::streamsize>(it->second.size() * sizeof(double)));
    } else {
      const auto& v = ints_.at(name);
      os.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(std::int64_t)));
    }
  }
  if (!os) throw CheckpointError("archive: write failed for " + path.string());
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("archive: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("archive: bad magic in " + path.string());
  }
  std::uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!is || header_len > (1ULL << 32)) throw CheckpointError("archive: truncated header");
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("archive: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("archive: manifest is not JSON: ") + e.what());
  }
  if (manifest.value("format", "") != "demo-array-archive") {
    throw CheckpointError("archive: unknown format tag");
  }
  std::vector<char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  ArrayArchive ar;
  ar.meta_ = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    const std::string name = entry.at("name");
    const std::string dtype = entry.at("dtype");
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (offset + nbytes > payload.size()) {
      throw CheckpointError("archive: array '" + name + "' extends past end of file");
    }
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (dtype == "float64") {
      if (shape.size() != 2 || static_cast<std::uint64_t>(shape[0] * shape[1]) * 8 != nbytes) {
        throw CheckpointError("archive: inconsistent shape for '" + name + "'");
      }
      Mat m(shape[0], shape[1]);
      std::memcpy(m.data(), payload.data() + offset, nbytes);
      ar.put(name, m);
    } else if (dtype == "int64") {
      if (shape.size() != 1 || static_cast<std::uint64_t>(shape[0]) * 8 != nbytes) {
        throw CheckpointError("archive: inconsistent shape for '" + name + "'");
      }
      std::vector<std::int64_t> v(shape[0]);
      std::memcpy(v.data(), payload.data() + offset, nbytes);
      ar.put_ints(name, v);
    } else {
      throw CheckpointError("archive: unsupported dtype '" + dtype + "' for '" + name + "'");
    }
  }
  return ar;
}

}  // namespace demo
