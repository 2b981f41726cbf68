// SPDX-License-Identifier: Apache-2.0
#include "tts/common/digest.hpp"

#include <sodium.h>

#include <mutex>

#include "tts/common/error.hpp"

namespace tts {

void ensure_crypto() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (sodium_init() < 0) throw Error(Errc::Io, "libsodium initialisation failed");
  });
}

std::string_view to_string(HashAlgorithm algo) noexcept {
  switch (algo) {
    case HashAlgorithm::Sha256: return "sha256";
    case HashAlgorithm::Blake2b256: return "blake2b-256";
  }
  return "unknown";
}

HashAlgorithm hash_algorithm_from_string(std::string_view name) {
  if (name == "sha256") return HashAlgorithm::Sha256;
  if (name == "blake2b-256") return HashAlgorithm::Blake2b256;
  throw Error(Errc::InvalidArgument, "unknown hash algorithm '" + std::string(name) + "'");
}

Digest hash(ByteView data, HashAlgorithm algo) {
  ensure_crypto();
  Digest out{};
  switch (algo) {
    case HashAlgorithm::Sha256:
      crypto_hash_sha256(out.data(), data.data(), data.size());
      return out;
    case HashAlgorithm::Blake2b256:
      crypto_generichash(out.data(), out.size(), data.data(), data.size(), nullptr, 0);
      return out;
  }
  throw Error(Errc::InvalidArgument, "unsupported hash algorithm");
}

Digest hash(std::string_view data, HashAlgorithm algo) { return hash(as_bytes(data), algo); }

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

namespace {
int nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(Errc::Malformed, "odd-length hex string");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::Malformed, "invalid hex digit");
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return out;
}

Digest digest_from_hex(std::string_view hex) {
  auto bytes = from_hex(hex);
  if (bytes.size() != 32) throw Error(Errc::Malformed, "digest must be 32 bytes");
  Digest d{};
  std::copy(bytes.begin(), bytes.end(), d.begin());
  return d;
}

}  // namespace tts
