#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "speede/errors.hpp"

namespace speede {

// Little-endian binary serialization helpers shared by the on-disk formats.
// The build targets little-endian hosts only, so these are raw memcpys.

inline void put_bytes(std::string& out, const void* src, std::size_t n) {
    out.append(static_cast<const char*>(src), n);
}

inline void put_u32(std::string& out, std::uint32_t v) { put_bytes(out, &v, 4); }
inline void put_u64(std::string& out, std::uint64_t v) { put_bytes(out, &v, 8); }
inline void put_f32(std::string& out, float v) { put_bytes(out, &v, 4); }
inline void put_f64(std::string& out, double v) { put_bytes(out, &v, 8); }

// Cursor over an in-memory byte buffer; throws IoError naming `origin` when
// a read runs past the end.
class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string origin)
        : bytes_(bytes), origin_(std::move(origin)) {}

    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw IoError(origin_ + ": truncated file (needed " + std::to_string(n) +
                          " bytes at offset " + std::to_string(pos_) + ")");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::string read_magic(std::size_t n) {
        std::string m(n, '\0');
        read(m.data(), n);
        return m;
    }

    std::uint32_t read_u32() { std::uint32_t v; read(&v, 4); return v; }
    std::uint64_t read_u64() { std::uint64_t v; read(&v, 8); return v; }
    float read_f32() { float v; read(&v, 4); return v; }
    double read_f64() { double v; read(&v, 8); return v; }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& origin() const { return origin_; }

private:
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(path + ": read failed");
    return bytes;
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

}  // namespace speede
