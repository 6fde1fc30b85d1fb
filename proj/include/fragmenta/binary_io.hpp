#pragma once
// Little-endian primitives for the binary containers (FRGC, PRNG, FSIX).

#include "fragmenta/errors.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace fragmenta::bin {

template <typename U>
void write_le(std::ostream& out, U value) {
    static_assert(std::is_unsigned_v<U>);
    std::array<char, sizeof(U)> buf;
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    out.write(buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& in) {
    static_assert(std::is_unsigned_v<U>);
    std::array<unsigned char, sizeof(U)> buf;
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!in) throw DataError("unexpected end of binary file");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
    return value;
}

inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic) {
    char buf[4] = {};
    in.read(buf, 4);
    if (!in || std::string_view(buf, 4) != magic) {
        throw DataError("bad magic, expected '" + std::string(magic) + "'");
    }
}

inline void write_string(std::ostream& out, std::string_view s) {
    write_le(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto n = read_le<std::uint32_t>(in);
    if (n > (1u << 20)) throw DataError("string length out of range");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("unexpected end of binary file");
    return s;
}

} // namespace fragmenta::bin
