#include "biblab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace biblab {

namespace {

constexpr char kMagic[4] = {'B', 'I', 'B', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw CheckpointError("checkpoint truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CheckpointError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

} // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw CheckpointError("name too long: " + e.name);
        if (e.dims.size() > 0xff) throw CheckpointError("rank too large");
        put_u16(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        os.put(static_cast<char>(e.dims.size()));
        std::size_t numel = 1;
        for (Index d : e.dims) {
            put_u32(os, static_cast<std::uint32_t>(d));
            numel *= static_cast<std::size_t>(d);
        }
        if (e.values.size() != numel) {
            throw CheckpointError("entry '" + e.name + "' has " +
                                  std::to_string(e.values.size()) +
                                  " values for dims product " + std::to_string(numel));
        }
        for (double v : e.values) put_f64(os, v);
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("bad magic in checkpoint: " + path);
    }
    std::uint32_t version = get_u32(is);
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint32_t count = get_u32(is);
    std::vector<CheckpointEntry> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        std::uint16_t name_len = get_u16(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        if (!is) throw CheckpointError("checkpoint truncated");
        int rank = is.get();
        if (rank < 0 || rank > 2) throw CheckpointError("bad rank in checkpoint");
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            std::uint32_t dim = get_u32(is);
            if (dim == 0) throw CheckpointError("zero dimension in checkpoint");
            e.dims.push_back(static_cast<Index>(dim));
            numel *= dim;
        }
        e.values.resize(numel);
        for (std::size_t k = 0; k < numel; ++k) e.values[k] = get_f64(is);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CheckpointEntry> snapshot(const std::vector<Parameter*>& params) {
    std::vector<CheckpointEntry> out;
    out.reserve(params.size());
    for (const Parameter* p : params) {
        out.push_back({p->name, p->value.shape(), p->value.flat()});
    }
    return out;
}

void restore(const std::vector<CheckpointEntry>& entries,
             const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        const CheckpointEntry* found = nullptr;
        for (const auto& e : entries) {
            if (e.name == p->name) {
                found = &e;
                break;
            }
        }
        if (!found) throw CheckpointError("checkpoint missing parameter '" + p->name + "'");
        if (found->dims != p->value.shape()) {
            throw CheckpointError("dims mismatch for parameter '" + p->name + "'");
        }
        p->value = Tensor::from_flat(found->dims, found->values).set_requires_grad(true);
        p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    }
}

} // namespace biblab
