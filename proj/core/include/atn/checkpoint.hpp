#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atn/layers.hpp"

namespace atn {

// Ordered flat key-value settings.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

// FNV-1a 64 over the sorted "key=value\n" lines.
std::uint64_t config_hash(const KeyValues& config);

const std::string* find_value(const KeyValues& kv, std::string_view key);

// "ATNCKPT1", u64 manifest length, manifest text, then one little-endian
// float32 buffer per tensor in manifest order.
struct Checkpoint {
  std::string kind;
  std::uint64_t seed = 0;
  KeyValues config;
  KeyValues state;  // resume bookkeeping: epoch, learning rate, scheduler
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  std::string state_value(std::string_view key) const;
};

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Throws FormatError unless the checkpoint was written for `config`.
void verify_config(const Checkpoint& checkpoint, const KeyValues& config);

// Parameters (plus Adam moments and step counts when requested) and buffers.
void store_parameters(Checkpoint& checkpoint, const ParamRefs<float>& params, const BufferRefs<float>& buffers,
                      bool optimizer_state);
void load_parameters(const Checkpoint& checkpoint, const ParamRefs<float>& params, const BufferRefs<float>& buffers,
                     bool optimizer_state);

}  // namespace atn
