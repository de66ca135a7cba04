#include "oats/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace oats::checkpoint {

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);  // x86-64: native order is LE
    out.write(buf, 4);
}

bool read_u32(std::ifstream& in, uint32_t& v) {
    char buf[4];
    if (!in.read(buf, 4)) return false;
    std::memcpy(&v, buf, 4);
    return true;
}

size_t numel(const std::vector<int>& dims) {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    return n;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<ConstTensorRef>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("MissingFile", "cannot write checkpoint " + path);
    out.write(kMagic, 5);
    for (const auto& t : tensors) {
        write_u32(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(out, static_cast<uint32_t>(t.dims.size()));
        for (int d : t.dims) write_u32(out, static_cast<uint32_t>(d));
        if (t.data->size() != numel(t.dims))
            fail("ShapeMismatch", "tensor " + t.name + " size disagrees with dims");
        std::vector<float> payload(t.data->begin(), t.data->end());
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(float)));
    }
    if (!out) fail("MissingFile", "short write on checkpoint " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("MissingCheckpoint", "cannot open checkpoint " + path);
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
        fail("MissingCheckpoint", path + " is not an OATS1 checkpoint");
    std::vector<NamedTensor> out;
    uint32_t name_len = 0;
    while (read_u32(in, name_len)) {
        NamedTensor t;
        t.name.resize(name_len);
        if (!in.read(t.name.data(), name_len))
            fail("MissingCheckpoint", "truncated checkpoint " + path);
        uint32_t rank = 0;
        if (!read_u32(in, rank)) fail("MissingCheckpoint", "truncated checkpoint " + path);
        t.dims.resize(rank);
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = 0;
            if (!read_u32(in, d)) fail("MissingCheckpoint", "truncated checkpoint " + path);
            t.dims[i] = static_cast<int>(d);
        }
        const size_t n = numel(t.dims);
        std::vector<float> payload(n);
        if (!in.read(reinterpret_cast<char*>(payload.data()),
                     static_cast<std::streamsize>(n * sizeof(float))))
            fail("MissingCheckpoint", "truncated checkpoint " + path);
        t.data.assign(payload.begin(), payload.end());
        out.push_back(std::move(t));
    }
    return out;
}

void apply_checkpoint(const std::vector<TensorRef>& dst, const std::vector<NamedTensor>& src) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : src) by_name[t.name] = &t;
    for (const auto& d : dst) {
        auto it = by_name.find(d.name);
        if (it == by_name.end())
            fail("MissingCheckpoint", "checkpoint lacks tensor " + d.name);
        const auto& s = *it->second;
        if (s.dims != d.dims || s.data.size() != d.data->size())
            fail("ShapeMismatch", "checkpoint tensor " + d.name + " has the wrong shape");
        *d.data = s.data;
    }
}

}  // namespace oats::checkpoint
