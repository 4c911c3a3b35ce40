// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>

#include "pbp/layers.hpp"

namespace pbp {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

/// SHA-256 over (name, shape, raw f64 bytes) of every registry tensor, in order.
std::string parameter_digest(const Network& net);

}  // namespace pbp
