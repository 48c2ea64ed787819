// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "demo/archive.hpp"
#include "demo/nn.hpp"

namespace demo {

/// Writes every parameter as "param/<name>" and every buffer as "buffer/<name>".
void save_parameters(const ParameterStore& store, ArrayArchive& archive);

/// Restores parameters (and buffers) whose names start with `prefix`.
/// Every expected name must be present with the same shape, and the archive may
/// not hold unexpected entries under the same prefix; all offenders are listed
/// in one CheckpointError.
void load_parameters(const ArrayArchive& archive, const ParameterStore& store,
                     const std::string& prefix = "");

}  // namespace demo
