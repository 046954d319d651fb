#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>
#include <type_traits>

#include "classkit/types.hpp"

namespace classkit::binio {

template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

// Little-endian reader over an in-memory file; throws CorruptFileError on truncation.
class Reader {
public:
    Reader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > data_.size()) throw CorruptFileError(what_ + " truncated");
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t pos() const { return pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    const std::string& data_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace classkit::binio
