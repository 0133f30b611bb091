#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dclstm/tensor.hpp"

namespace dclstm {

// Self-describing binary container: magic, format version, JSON header with
// named array shapes, raw little-endian float64 payload, trailing FNV-1a
// checksum over everything before it.
inline constexpr char kContainerMagic[8] = {'D', 'C', 'L', 'S', 'T', 'M', 'C', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& array(const std::string& name) const;
};

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays);
Container read_container(const std::string& path);

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t fnv1a_file(const std::string& path);

}  // namespace dclstm
