#pragma once

// Tensor (de)serialization: a little-endian u32 header length, a JSON header
// carrying dtype and shape, then the raw element buffer.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "segkit/tensor.hpp"

namespace segkit {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

inline void write_u32le(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline uint32_t read_u32le(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw Error("unexpected end of stream while reading length field");
    return v;
}

inline void write_u64le(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline uint64_t read_u64le(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw Error("unexpected end of stream while reading length field");
    return v;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    nlohmann::json header;
    header["dtype"] = dtype_name<T>();
    header["shape"] = t.shape();
    const std::string hs = header.dump();
    write_u32le(os, static_cast<uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!os) throw Error("stream write failed while serializing tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    const uint32_t hlen = read_u32le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw Error("unexpected end of stream while reading tensor header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed tensor header: ") + e.what());
    }
    if (!header.contains("dtype") || !header.contains("shape"))
        throw Error("tensor header missing dtype or shape");
    const std::string dt = header["dtype"].get<std::string>();
    if (dt != dtype_name<T>())
        throw Error("tensor dtype mismatch: stream holds " + dt + ", requested " +
                    dtype_name<T>());
    std::vector<int64_t> shape = header["shape"].get<std::vector<int64_t>>();
    Tensor<T> t = Tensor<T>::zeros(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!is) throw Error("unexpected end of stream while reading tensor payload of shape " +
                         shape_str(shape));
    return t;
}

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    write_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path + " for reading");
    return read_tensor<T>(is);
}

}  // namespace segkit
