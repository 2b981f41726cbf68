// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace tts {

using Digest = std::array<std::uint8_t, 32>;
using Bytes = std::basic_string<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// 256-bit hash families selectable for the ledger. The numeric values are
/// written into chain files and must not change.
enum class HashAlgorithm : std::uint8_t {
  Sha256 = 1,
  Blake2b256 = 2,
};

std::string_view to_string(HashAlgorithm algo) noexcept;
HashAlgorithm hash_algorithm_from_string(std::string_view name);

Digest hash(ByteView data, HashAlgorithm algo = HashAlgorithm::Sha256);
Digest hash(std::string_view data, HashAlgorithm algo = HashAlgorithm::Sha256);

inline constexpr Digest kZeroDigest{};

std::string to_hex(ByteView data);
inline std::string to_hex(const Digest& d) { return to_hex(ByteView(d.data(), d.size())); }
Bytes from_hex(std::string_view hex);
Digest digest_from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

/// Initialises libsodium exactly once; safe to call from any thread.
void ensure_crypto();

}  // namespace tts
