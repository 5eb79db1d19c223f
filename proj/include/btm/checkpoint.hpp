#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/nn.hpp"
#include "btm/tensor.hpp"

namespace btm {

// On-disk tensor archive. Little-endian throughout:
//   magic "BTMT" | u32 version | u32 record count
//   per record: u16 name length | name bytes | u8 rank | u32 dims[rank] |
//               f32 payload, row-major
// Values are stored in f32; loading widens back to f64. Callers that need
// save/resume bit-equality push their live values through quantize_f32 at
// every save point so in-memory and on-disk states agree.
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

namespace detail {

template <typename T>
void put_le(std::ofstream& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in, const std::string& path) {
    unsigned char b[sizeof(T)];
    in.read(reinterpret_cast<char*>(b), sizeof(T));
    if (in.gcount() != sizeof(T)) throw data_error(strcat_(path, ": truncated checkpoint"));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error(strcat_("cannot write checkpoint ", path));
    out.write("BTMT", 4);
    detail::put_le<uint32_t>(out, kCheckpointVersion);
    detail::put_le<uint32_t>(out, static_cast<uint32_t>(records.size()));
    for (auto& r : records) {
        if (r.name.size() > 0xffff) throw data_error(strcat_("record name too long: ", r.name));
        if (r.shape.size() > 0xff) throw data_error(strcat_("record rank too large: ", r.name));
        detail::put_le<uint16_t>(out, static_cast<uint16_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::put_le<uint8_t>(out, static_cast<uint8_t>(r.shape.size()));
        size_t numel = 1;
        for (int d : r.shape) {
            detail::put_le<uint32_t>(out, static_cast<uint32_t>(d));
            numel *= static_cast<size_t>(d);
        }
        if (r.data.size() != numel)
            throw data_error(strcat_("record ", r.name, ": payload ", r.data.size(), " != shape ", numel));
        for (float f : r.data) detail::put_le<float>(out, f);
    }
    if (!out) throw data_error(strcat_("short write on checkpoint ", path));
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error(strcat_("cannot open checkpoint ", path));
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "BTMT", 4) != 0)
        throw data_error(strcat_(path, ": not a checkpoint file"));
    uint32_t version = detail::get_le<uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw data_error(strcat_(path, ": unsupported checkpoint version ", version));
    uint32_t count = detail::get_le<uint32_t>(in, path);
    std::vector<CheckpointRecord> records;
    records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointRecord r;
        uint16_t nlen = detail::get_le<uint16_t>(in, path);
        r.name.resize(nlen);
        in.read(r.name.data(), nlen);
        if (in.gcount() != nlen) throw data_error(strcat_(path, ": truncated checkpoint"));
        uint8_t rank = detail::get_le<uint8_t>(in, path);
        size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            uint32_t dim = detail::get_le<uint32_t>(in, path);
            r.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        r.data.resize(numel);
        for (size_t k = 0; k < numel; ++k) r.data[k] = detail::get_le<float>(in, path);
        records.push_back(std::move(r));
    }
    return records;
}

inline CheckpointRecord to_record(const std::string& name, const Tensor& t) {
    CheckpointRecord r;
    r.name = name;
    r.shape = t.shape();
    r.data.reserve(t.values().size());
    for (double v : t.values()) r.data.push_back(static_cast<float>(v));
    return r;
}

// Rounds a live tensor through f32 so memory matches what a save would store.
inline void quantize_f32(Tensor& t) {
    for (auto& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

inline void load_record_into(const CheckpointRecord& r, Tensor& t) {
    if (r.shape != t.shape())
        throw data_error(strcat_("checkpoint record ", r.name, ": shape ", shape_str(r.shape),
                                 " does not match model shape ", shape_str(t.shape())));
    auto& v = t.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(r.data[i]);
}

// Loads model parameters by name; every model parameter must be present.
inline void load_params(const std::vector<CheckpointRecord>& records, ParamList& params) {
    std::map<std::string, const CheckpointRecord*> byname;
    for (auto& r : records) byname[r.name] = &r;
    for (auto& p : params) {
        auto it = byname.find(p.name);
        if (it == byname.end()) throw data_error(strcat_("checkpoint missing parameter ", p.name));
        load_record_into(*it->second, p.t);
    }
}

}  // namespace btm
