#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivgen/tensor.hpp"

namespace ivgen::checkpoint {

// Binary container: 8-byte magic, u64 little-endian JSON length, JSON metadata
// (which carries a tensor directory with shapes, in file order), zero padding
// to an 8-byte boundary, then the raw float32 blocks back to back. No
// timestamps anywhere, so identical runs produce identical files.

inline constexpr char kMagic[8] = {'I', 'V', 'G', 'E', 'N', 'C', 'K', '1'};

struct Entry {
    std::string name;
    Tensor<float> tensor;
};

struct Container {
    nlohmann::ordered_json meta;
    std::vector<Entry> entries;

    const Tensor<float>& get(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.tensor;
        throw std::out_of_range("checkpoint: no tensor named " + name);
    }
    bool has(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return true;
        return false;
    }
};

inline void write_u64le(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline std::uint64_t read_u64le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void save(const Container& ck, const std::filesystem::path& path) {
    nlohmann::ordered_json meta = ck.meta;
    nlohmann::ordered_json dir = nlohmann::ordered_json::array();
    for (const auto& e : ck.entries) {
        dir.push_back({{"name", e.name}, {"shape", e.tensor.shape}, {"dtype", "f32"}});
    }
    meta["tensors"] = std::move(dir);
    const std::string js = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for write");
    out.write(kMagic, 8);
    write_u64le(out, js.size());
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    const std::size_t pad = (8 - js.size() % 8) % 8;
    static const char zeros[8] = {};
    out.write(zeros, static_cast<std::streamsize>(pad));
    for (const auto& e : ck.entries) {
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(e.tensor.data.data()),
                  static_cast<std::streamsize>(e.tensor.data.size() * 4));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

inline Container load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const std::uint64_t js_len = read_u64le(in);
    std::string js(js_len, '\0');
    in.read(js.data(), static_cast<std::streamsize>(js_len));
    if (!in) throw std::runtime_error("checkpoint: truncated metadata in " + path.string());
    in.ignore(static_cast<std::streamsize>((8 - js_len % 8) % 8));

    Container ck;
    ck.meta = nlohmann::ordered_json::parse(js);
    for (const auto& d : ck.meta.at("tensors")) {
        Entry e;
        e.name = d.at("name").get<std::string>();
        const auto shape = d.at("shape").get<std::vector<int>>();
        if (d.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("checkpoint: unsupported dtype for " + e.name);
        e.tensor = Tensor<float>(shape);
        in.read(reinterpret_cast<char*>(e.tensor.data.data()),
                static_cast<std::streamsize>(e.tensor.data.size() * 4));
        if (!in) throw std::runtime_error("checkpoint: truncated data for " + e.name);
        ck.entries.push_back(std::move(e));
    }
    ck.meta.erase("tensors");
    return ck;
}

}  // namespace ivgen::checkpoint
