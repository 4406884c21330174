#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "elm/errors.hpp"
#include "elm/real.hpp"

namespace elm {

// Little-endian primitive IO shared by the checkpoint and dataset formats.

inline void write_u8(std::ostream& f, std::uint8_t v) {
    f.put(static_cast<char>(v));
}
inline void write_u16(std::ostream& f, std::uint16_t v) {
    f.put(static_cast<char>(v & 0xFF));
    f.put(static_cast<char>((v >> 8) & 0xFF));
}
inline void write_u32(std::ostream& f, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void write_u64(std::ostream& f, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void write_f32(std::ostream& f, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

inline std::uint8_t read_u8(std::istream& f, const std::string& what) {
    const int c = f.get();
    if (c == EOF) throw DataError("unexpected end of file reading " + what);
    return static_cast<std::uint8_t>(c);
}
inline std::uint16_t read_u16(std::istream& f, const std::string& what) {
    std::uint16_t v = read_u8(f, what);
    v = static_cast<std::uint16_t>(v | (static_cast<std::uint16_t>(read_u8(f, what)) << 8));
    return v;
}
inline std::uint32_t read_u32(std::istream& f, const std::string& what) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(f, what)) << (8 * i);
    return v;
}
inline std::uint64_t read_u64(std::istream& f, const std::string& what) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(f, what)) << (8 * i);
    return v;
}
inline float read_f32(std::istream& f, const std::string& what) {
    const std::uint32_t bits = read_u32(f, what);
    float v;
    __builtin_memcpy(&v, &bits, 4);
    return v;
}

inline void write_magic(std::ostream& f, const char magic[5]) { f.write(magic, 4); }
inline void expect_magic(std::istream& f, const char magic[5], const std::string& path) {
    char got[5] = {0, 0, 0, 0, 0};
    f.read(got, 4);
    if (f.gcount() != 4 || std::string(got) != magic)
        throw DataError(path + ": bad magic \"" + got + "\", expected \"" + magic + "\"");
}

// Ordered key=value block: u32 byte length, then "key=value\n" lines (UTF-8).
class KvBlock {
public:
    void set(const std::string& key, const std::string& value) {
        for (auto& kv : items_)
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        items_.emplace_back(key, value);
    }
    void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
    void set_real(const std::string& key, double v) {
        char buf[32];
        snprintf(buf, sizeof buf, "%.17g", v);
        set(key, buf);
    }

    bool has(const std::string& key) const {
        for (const auto& kv : items_)
            if (kv.first == key) return true;
        return false;
    }
    const std::string& get(const std::string& key) const {
        for (const auto& kv : items_)
            if (kv.first == key) return kv.second;
        throw DataError("config block missing key \"" + key + "\"");
    }
    long long get_int(const std::string& key) const { return std::stoll(get(key)); }
    double get_real(const std::string& key) const { return std::stod(get(key)); }

    void write(std::ostream& f) const {
        std::string body;
        for (const auto& kv : items_) body += kv.first + "=" + kv.second + "\n";
        write_u32(f, static_cast<std::uint32_t>(body.size()));
        f.write(body.data(), static_cast<std::streamsize>(body.size()));
    }
    static KvBlock read(std::istream& f, const std::string& path) {
        const std::uint32_t len = read_u32(f, path + " config length");
        std::string body(len, '\0');
        f.read(body.data(), len);
        if (static_cast<std::uint32_t>(f.gcount()) != len)
            throw DataError(path + ": truncated config block");
        KvBlock kv;
        std::size_t pos = 0;
        while (pos < body.size()) {
            const auto nl = body.find('\n', pos);
            const std::string line = body.substr(pos, nl == std::string::npos ? nl : nl - pos);
            pos = nl == std::string::npos ? body.size() : nl + 1;
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw DataError(path + ": malformed config line \"" + line + "\"");
            kv.items_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        }
        return kv;
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace elm
