#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace canht {

// FNV-1a 64-bit: stable content fingerprints for run manifests and
// determinism checks. Not cryptographic.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

}  // namespace canht
