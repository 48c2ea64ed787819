// SPDX-License-Identifier: Apache-2.0
#include "demo/checkpoint.hpp"

#include <set>
#include <sstream>
#include <vector>

#include "demo/errors.hpp"

namespace demo {

namespace {

constexpr const char* kParamPrefix = "param/";
constexpr const char* kBufferPrefix = "buffer/";

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

std::string shape_of(const Mat& m) {
  return "(" + std::to_string(m.rows()) + "," + std::to_string(m.cols()) + ")";
}

}  // namespace

void save_parameters(const ParameterStore& store, ArrayArchive& archive) {
  for (const auto& p : store.params()) archive.put(kParamPrefix + p.name, p.var.value());
  for (const auto& b : store.buffers()) archive.put(kBufferPrefix + b.name, b.var.value());
}

void load_parameters(const ArrayArchive& archive, const ParameterStore& store,
                     const std::string& prefix) {
  std::vector<std::string> missing;
  std::vector<std::string> mismatched;
  std::vector<std::string> extra;
  std::set<std::string> expected;

  auto check = [&](const std::string& key, const Var& target) {
    expected.insert(key);
    if (!archive.contains(key) || !archive.is_matrix(key)) {
      missing.push_back(key);
      return;
    }
    const Mat& stored = archive.matrix(key);
    if (stored.rows() != target.rows() || stored.cols() != target.cols()) {
      mismatched.push_back(key + " " + shape_of(stored) + " vs expected " +
                           shape_of(target.value()));
    }
  };
  for (const auto& p : store.params()) {
    if (starts_with(p.name, prefix)) check(kParamPrefix + p.name, p.var);
  }
  for (const auto& b : store.buffers()) {
    if (starts_with(b.name, prefix)) check(kBufferPrefix + b.name, b.var);
  }
  for (const auto& name : archive.names()) {
    const bool in_scope = starts_with(name, kParamPrefix + prefix) ||
                          starts_with(name, kBufferPrefix + prefix);
    if (in_scope && !expected.count(name)) extra.push_back(name);
  }

  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::ostringstream msg;
    msg << "checkpoint does not match model";
    auto list = [&](const char* label, const std::vector<std::string>& items) {
      if (items.empty()) return;
      msg << "; " << label << ":";
      for (const auto& s : items) msg << " " << s;
    };
    list("missing", missing);
    list("shape mismatch", mismatched);
    list("unexpected", extra);
    throw CheckpointError(msg.str());
  }

  for (const auto& p : store.params()) {
    if (!starts_with(p.name, prefix)) continue;
    Var v = p.var;
    v.value_mut() = archive.matrix(kParamPrefix + p.name);
  }
  for (const auto& b : store.buffers()) {
    if (!starts_with(b.name, prefix)) continue;
    Var v = b.var;
    v.value_mut() = archive.matrix(kBufferPrefix + b.name);
  }
}

}  // namespace demo
