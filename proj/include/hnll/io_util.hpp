#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hnll/error.hpp"

namespace hnll {

template <std::unsigned_integral T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <std::unsigned_integral T>
T get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw RuntimeError("unexpected end of data");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace hnll
