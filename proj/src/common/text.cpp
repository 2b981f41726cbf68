// SPDX-License-Identifier: Apache-2.0
#include "tts/common/text.hpp"

#include <charconv>
#include <cmath>

#include "tts/common/error.hpp"

namespace tts {

std::string format_number(double v) {
  if (v == 0.0) v = 0.0;
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error(Errc::InvalidArgument, "cannot format number");
  return std::string(buf, end);
}

double parse_number(std::string_view text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw Error(Errc::Malformed, "not a number: '" + std::string(text) + "'");
  }
  return v;
}

bool is_finite(double v) noexcept { return std::isfinite(v); }

}  // namespace tts
