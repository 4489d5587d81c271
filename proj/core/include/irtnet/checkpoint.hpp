#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "IRTCKPT1"
//   u32 version (1), n, d, N, embed_dim, expert_hidden, hidden_dim, flags (bit 0: MLP ablation)
//   n x { u32 byte length, UTF-8 model name }
//   blocks, each { u64 element count, f32 values row-major }, in order:
//     theta, gate.weight, gate.bias, balance_bias, shared expert
//     (hidden.weight, hidden.bias, output.weight, output.bias), routed experts
//     0..N-1 likewise, alpha_head.weight, alpha_head.bias, beta_head.weight,
//     beta_head.bias
//   u32 CRC-32 of every preceding byte
//
// Ablation checkpoints keep the mixture's N/expert_hidden in the header; the
// MLP width is recomputed from them and the gate, balance and routed blocks
// are empty.

#include <filesystem>
#include <optional>
#include <vector>

#include "irtnet/model.hpp"

namespace irtnet {

std::vector<char> encode_checkpoint(const IrtNetParams& params);
/// Throws ChecksumError on CRC mismatch, FormatError on any structural problem,
/// including an encoder kind different from `expected_kind` when given.
IrtNetParams decode_checkpoint(const std::vector<char>& bytes, const std::string& source = "<memory>",
                               std::optional<EncoderKind> expected_kind = std::nullopt);

void save_checkpoint(const IrtNetParams& params, const std::filesystem::path& path);
IrtNetParams load_checkpoint(const std::filesystem::path& path,
                             std::optional<EncoderKind> expected_kind = std::nullopt);

/// Rounds every stored value through f32, i.e. what a save/load cycle yields.
IrtNetParams round_to_storage(const IrtNetParams& params);

}  // namespace irtnet
