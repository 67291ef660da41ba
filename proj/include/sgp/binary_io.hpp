#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sgp/error.hpp"

// Little-endian binary readers/writers shared by the checkpoint and dataset
// dump formats.

namespace sgp::detail {

inline bool little_endian_host() {
    const std::uint16_t probe = 0x1;
    unsigned char byte0;
    std::memcpy(&byte0, &probe, 1);
    return byte0 == 1;
}

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if (!little_endian_host()) std::reverse(buf, buf + sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
    if (!out) throw IoError("binary write failed");
}

template <typename T>
T read_le(std::istream& in) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw IoError("binary read failed or file truncated");
    if (!little_endian_host()) std::reverse(buf, buf + sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

inline void write_f64_vec(std::ostream& out, const std::vector<double>& v) {
    write_le<std::uint64_t>(out, v.size());
    for (double x : v) write_le<double>(out, x);
}

inline std::vector<double> read_f64_vec(std::istream& in) {
    const auto n = read_le<std::uint64_t>(in);
    std::vector<double> v(n);
    for (auto& x : v) x = read_le<double>(in);
    return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) {
    out.write(magic, 4);
    if (!out) throw IoError("binary write failed");
}

inline void expect_magic(std::istream& in, const char magic[4], const std::string& what) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw IoError(what + ": bad magic, not a " + what + " file");
}

inline void expect_version(std::istream& in, std::uint32_t expected, const std::string& what) {
    const auto got = read_le<std::uint32_t>(in);
    if (got != expected)
        throw IoError(what + ": unsupported format version " + std::to_string(got) +
                      " (expected " + std::to_string(expected) + ")");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return in;
}

} // namespace sgp::detail
