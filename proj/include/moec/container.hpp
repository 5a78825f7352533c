// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "moec/model.hpp"

namespace moec {

// MOEC1 container: 5-byte magic "MOEC1", then little-endian u32 d_model,
// u32 d_ff, u32 num_layers, u32 num_experts, u32 top_k, u64 seed, then per
// layer: gate (num_experts*d_model), then per expert gate_proj, up_proj
// (d_ff*d_model each) and down_proj (d_model*d_ff), all row-major raw
// little-endian float32. Writes are atomic (temp file + rename).
void save_model(const ModelSpec& model, const std::string& path);
ModelSpec load_model(const std::string& path);

// Atomic text write used for manifests, reports and tables.
void atomic_write_text(const std::string& path, const std::string& content);

} // namespace moec
