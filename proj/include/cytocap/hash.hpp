#pragma once

#include <span>
#include <string>
#include <string_view>

namespace cytocap {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view bytes);

}  // namespace cytocap
