// SPDX-License-Identifier: Apache-2.0
#include "tts/common/canonical.hpp"

#include <bit>
#include <limits>

#include "tts/common/error.hpp"

namespace tts {

ByteWriter& ByteWriter::u8(std::uint8_t v) {
  buf_.push_back(v);
  return *this;
}

ByteWriter& ByteWriter::u32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

ByteWriter& ByteWriter::u64(std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

ByteWriter& ByteWriter::i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }

ByteWriter& ByteWriter::f64(double v) {
  // Collapse -0.0 and NaN payloads so equal values always encode equally.
  if (v == 0.0) v = 0.0;
  if (v != v) v = std::numeric_limits<double>::quiet_NaN();
  return u64(std::bit_cast<std::uint64_t>(v));
}

ByteWriter& ByteWriter::str(std::string_view s) { return blob(as_bytes(s)); }

ByteWriter& ByteWriter::blob(ByteView b) {
  if (b.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::InvalidArgument, "field exceeds 4 GiB");
  }
  u32(static_cast<std::uint32_t>(b.size()));
  return raw(b);
}

ByteWriter& ByteWriter::raw(ByteView b) {
  buf_.append(b.data(), b.size());
  return *this;
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw Error(Errc::Malformed, "truncated canonical record");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_++];
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_++];
  return v;
}

std::int64_t ByteReader::i64() { return static_cast<std::int64_t>(u64()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

bool ByteReader::boolean() {
  auto v = u8();
  if (v > 1) throw Error(Errc::Malformed, "invalid boolean byte");
  return v == 1;
}

std::string ByteReader::str() {
  auto b = blob();
  return std::string(b.begin(), b.end());
}

Bytes ByteReader::blob() {
  auto n = u32();
  return raw(n);
}

Bytes ByteReader::raw(std::size_t n) {
  need(n);
  Bytes out(data_.data() + pos_, n);
  pos_ += n;
  return out;
}

Digest ByteReader::digest() {
  need(32);
  Digest d{};
  for (auto& b : d) b = data_[pos_++];
  return d;
}

void ByteReader::finish() const {
  if (remaining() != 0) throw Error(Errc::Malformed, "trailing bytes after canonical record");
}

}  // namespace tts
