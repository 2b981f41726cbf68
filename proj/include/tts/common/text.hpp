// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace tts {

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double v);

/// Parses a complete decimal number; throws Error(Malformed) otherwise.
double parse_number(std::string_view text);

bool is_finite(double v) noexcept;

}  // namespace tts
