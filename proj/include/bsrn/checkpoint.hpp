#pragma once

#include <cstdint>
#include <string>

#include "bsrn/model.hpp"
#include "bsrn/optim.hpp"

namespace bsrn {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  AdamState opt;
  std::uint64_t step = 0;
};

// Binary format, little-endian, version 1:
//   magic "BSRN", u32 version,
//   u32 channels, u32 state_channels, u32 recursions, u32 freq_control,
//   u32 scale_count, u32 scales[...],
//   u32 tensor_count, then per tensor:
//     u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 payload;
//   u64 global_step.
// Tensors appear in canonical order: parameters, then first moments under
// opt/m/, then second moments under opt/v/. Loading validates every name and
// shape against the stored config before anything is copied out, so a failed
// load leaves no partial state behind.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bsrn
