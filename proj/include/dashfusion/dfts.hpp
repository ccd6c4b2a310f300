#pragma once

// Tensor container ("DFTS"), shared by dataset files and checkpoints.
//
//   offset  size        field
//   0       4           magic "DFTS"
//   4       2           format version, u16 (currently 1)
//   6       4           rank, u32
//   10      4 * rank    dims, u32 each
//   ..      1           dtype tag, u8 (0 = float32, 1 = uint32)
//   ..      4 * numel   payload, row-major
//   end-4   4           CRC-32 (IEEE, zlib polynomial) of every preceding byte
//
// All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "dashfusion/errors.hpp"

namespace dashfusion {

inline constexpr std::uint16_t kDftsVersion = 1;

enum class DType : std::uint8_t { float32 = 0, uint32 = 1 };

struct TensorFile {
    DType dtype = DType::float32;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;           // when dtype == float32
    std::vector<std::uint32_t> u32;   // when dtype == uint32

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dfts(const TensorFile& t) {
    const std::size_t n = t.count();
    const std::size_t have = t.dtype == DType::float32 ? t.f32.size() : t.u32.size();
    if (have != n) throw FormatError("encode_dfts: payload has " + std::to_string(have) + " values, dims need " + std::to_string(n));
    std::vector<std::uint8_t> out;
    out.reserve(4 + 2 + 4 + 4 * t.dims.size() + 1 + 4 * n + 4);
    for (char c : {'D', 'F', 'T', 'S'}) out.push_back(static_cast<std::uint8_t>(c));
    detail::put_u16(out, kDftsVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    if (t.dtype == DType::float32) {
        for (float v : t.f32) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
        for (auto v : t.u32) detail::put_u32(out, v);
    }
    detail::put_u32(out, crc32_of(out.data(), out.size()));
    return out;
}

/// Parses a container; `name` is used in error messages.
inline TensorFile decode_dfts(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    auto need = [&](std::size_t at, std::size_t len) {
        if (at + len > bytes.size()) throw FormatError(name + ": truncated file (" + std::to_string(bytes.size()) + " bytes)");
    };
    need(0, 10);
    if (!(bytes[0] == 'D' && bytes[1] == 'F' && bytes[2] == 'T' && bytes[3] == 'S')) throw FormatError(name + ": bad magic");
    const auto version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
    if (version != kDftsVersion) {
        throw FormatError(name + ": unsupported format version " + std::to_string(version));
    }
    TensorFile t;
    const std::uint32_t rank = detail::get_u32(&bytes[6]);
    if (rank > 16) throw FormatError(name + ": implausible rank " + std::to_string(rank));
    need(10, 4 * static_cast<std::size_t>(rank) + 1);
    std::size_t pos = 10;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i, pos += 4) {
        t.dims.push_back(detail::get_u32(&bytes[pos]));
        n *= t.dims.back();
    }
    const auto tag = bytes[pos++];
    if (tag > 1) throw FormatError(name + ": unknown dtype tag " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    need(pos, 4 * n + 4);
    if (pos + 4 * n + 4 != bytes.size()) throw FormatError(name + ": trailing bytes after payload");
    const std::uint32_t stored = detail::get_u32(&bytes[pos + 4 * n]);
    const std::uint32_t actual = crc32_of(bytes.data(), pos + 4 * n);
    if (stored != actual) throw ChecksumError(name, stored, actual);
    if (t.dtype == DType::float32) {
        t.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.f32[i] = std::bit_cast<float>(detail::get_u32(&bytes[pos + 4 * i]));
    } else {
        t.u32.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.u32[i] = detail::get_u32(&bytes[pos + 4 * i]);
    }
    return t;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

/// Writes the container and returns the CRC of the whole file.
inline std::uint32_t write_dfts(const std::filesystem::path& path, const TensorFile& t) {
    const auto bytes = encode_dfts(t);
    write_bytes(path, bytes);
    return crc32_of(bytes.data(), bytes.size());
}

inline TensorFile read_dfts(const std::filesystem::path& path) {
    return decode_dfts(read_bytes(path), path.filename().string());
}

}  // namespace dashfusion
