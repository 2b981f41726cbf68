// SPDX-License-Identifier: Apache-2.0
#pragma once

// Bit-exact canonical encoding used for every hashed or signed structure:
// fields are written in declared order, integers big-endian, doubles as
// their IEEE-754 bit pattern (big-endian), strings and byte blobs with a
// u32 length prefix followed by the raw bytes.

#include <cstdint>
#include <string>
#include <string_view>

#include "tts/common/digest.hpp"

namespace tts {

class ByteWriter {
 public:
  ByteWriter& u8(std::uint8_t v);
  ByteWriter& u32(std::uint32_t v);
  ByteWriter& u64(std::uint64_t v);
  ByteWriter& i64(std::int64_t v);
  ByteWriter& f64(double v);
  ByteWriter& boolean(bool v) { return u8(v ? 1 : 0); }
  ByteWriter& str(std::string_view s);
  ByteWriter& blob(ByteView b);
  ByteWriter& raw(ByteView b);
  ByteWriter& digest(const Digest& d) { return raw(ByteView(d.data(), d.size())); }

  const Bytes& bytes() const& { return buf_; }
  Bytes bytes() && { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  Bytes buf_;
};

/// Strict reader: every accessor throws Error(Malformed) when the input is
/// exhausted, and finish() rejects trailing bytes.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  bool boolean();
  std::string str();
  Bytes blob();
  Bytes raw(std::size_t n);
  Digest digest();

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void finish() const;

 private:
  void need(std::size_t n) const;

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace tts
