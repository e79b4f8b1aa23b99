#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "emochat/tensor.hpp"

namespace emochat {

// Binary checkpoint: magic "EPOC", u32 format version, length-prefixed
// model-config text (JSON), then a named tensor table. Tensor payloads are
// row-major 32-bit little-endian floats regardless of build mode, so the
// float build round-trips bit-exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamRefs& params);

struct LoadedCheckpoint {
  std::string config_json;
  std::vector<std::string> names;  // file order
  std::unordered_map<std::string, Tensor> tensors;
};

// Parses and validates the whole file before returning; a truncated or
// mismatched file never yields a partial result.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Strict load: every parameter whose name starts with `prefix` must be
// present with a matching shape; missing slots are listed in the error.
// An empty prefix loads everything in `params`.
void load_into(const LoadedCheckpoint& ckpt, const ParamRefs& params,
               const std::string& prefix = "");

}  // namespace emochat
