#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "sohnet/error.hpp"

// Little-endian byte packing shared by the checkpoint and dataset caches.

namespace sohnet::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

inline void put_doubles(std::string& out, std::span<const double> values) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

inline void put_string(std::string& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out += s;
}

class Reader {
public:
    Reader(const std::string& bytes, ErrorKind kind, std::string what)
        : bytes_(bytes), kind_(kind), what_(std::move(what)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::string get_string() { return get_string(get<std::uint64_t>()); }

    void get_doubles(std::span<double> out) {
        need(out.size() * sizeof(double));
        std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }

    std::vector<double> get_double_vector() {
        std::vector<double> v(get<std::uint64_t>());
        get_doubles(v);
        return v;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) fail(kind_, what_ + " truncated");
    }

    const std::string& bytes_;
    ErrorKind kind_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace sohnet::binio
