// BGTS checkpoint container: magic bytes, versioned, little-endian.
//
// Layout:
//   "BGTS" | u32 version | u32 json_len | json bytes | u32 n_records
//   record: u16 name_len | name | u8 dtype (0=f32, 1=f64) | u8 ndim
//           | u32 dims[ndim] | payload
//
// Model exports may use f32 payloads; training state uses f64 so that a
// restored run continues bit-identically.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgts/common.hpp"

namespace bgts {

inline constexpr uint32_t kContainerVersion = 1;

struct ArrayRecord {
    std::string name;
    Shape shape;
    bool f32 = false;
    std::vector<double> data;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    check<FormatError>(in.good(), "checkpoint: truncated file while reading " + what);
    return v;
}

}  // namespace detail

inline void write_container(const std::string& path, const nlohmann::json& config,
                            const std::vector<ArrayRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    check<FormatError>(out.good(), "checkpoint: cannot open " + path + " for writing");
    out.write("BGTS", 4);
    detail::write_pod<uint32_t>(out, kContainerVersion);
    const std::string json = config.dump();
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(json.size()));
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(records.size()));
    for (const ArrayRecord& rec : records) {
        detail::write_pod<uint16_t>(out, static_cast<uint16_t>(rec.name.size()));
        out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
        detail::write_pod<uint8_t>(out, rec.f32 ? 0 : 1);
        detail::write_pod<uint8_t>(out, static_cast<uint8_t>(rec.shape.size()));
        for (int d : rec.shape) detail::write_pod<uint32_t>(out, static_cast<uint32_t>(d));
        check<FormatError>(static_cast<int64_t>(rec.data.size()) == numel(rec.shape),
                           "checkpoint: record '" + rec.name + "' data does not match shape");
        if (rec.f32) {
            for (double v : rec.data) detail::write_pod<float>(out, static_cast<float>(v));
        } else {
            out.write(reinterpret_cast<const char*>(rec.data.data()),
                      static_cast<std::streamsize>(rec.data.size() * sizeof(double)));
        }
    }
    check<FormatError>(out.good(), "checkpoint: write failed for " + path);
}

struct Container {
    nlohmann::json config;
    std::vector<ArrayRecord> records;

    const ArrayRecord* find(const std::string& name) const {
        for (const ArrayRecord& r : records)
            if (r.name == name) return &r;
        return nullptr;
    }
};

inline Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check<FormatError>(in.good(), "checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    check<FormatError>(in.good() && std::memcmp(magic, "BGTS", 4) == 0,
                       "checkpoint: bad magic bytes in " + path + " (expected BGTS)");
    const auto version = detail::read_pod<uint32_t>(in, "version");
    check<FormatError>(version <= kContainerVersion,
                       "checkpoint: file version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kContainerVersion));
    const auto json_len = detail::read_pod<uint32_t>(in, "config length");
    std::string json(json_len, '\0');
    in.read(json.data(), json_len);
    check<FormatError>(in.good(), "checkpoint: truncated config block");
    Container c;
    try {
        c.config = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad config json: ") + e.what());
    }
    const auto n_records = detail::read_pod<uint32_t>(in, "record count");
    for (uint32_t r = 0; r < n_records; ++r) {
        ArrayRecord rec;
        const auto name_len = detail::read_pod<uint16_t>(in, "record name length");
        rec.name.resize(name_len);
        in.read(rec.name.data(), name_len);
        const auto dtype = detail::read_pod<uint8_t>(in, "dtype");
        check<FormatError>(dtype <= 1, "checkpoint: unknown dtype tag " + std::to_string(dtype));
        rec.f32 = dtype == 0;
        const auto ndim = detail::read_pod<uint8_t>(in, "rank");
        for (int d = 0; d < ndim; ++d)
            rec.shape.push_back(static_cast<int>(detail::read_pod<uint32_t>(in, "dim")));
        const int64_t n = numel(rec.shape);
        rec.data.resize(n);
        if (rec.f32) {
            for (int64_t i = 0; i < n; ++i) rec.data[i] = detail::read_pod<float>(in, "payload");
        } else {
            in.read(reinterpret_cast<char*>(rec.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
            check<FormatError>(in.good(), "checkpoint: truncated payload in record '" + rec.name + "'");
        }
        c.records.push_back(std::move(rec));
    }
    return c;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check<DataError>(in.good(), "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::string file_content_hash(const std::string& path) { return hex64(fnv1a64(read_file_bytes(path))); }

}  // namespace bgts
