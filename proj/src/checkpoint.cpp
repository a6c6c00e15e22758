#include "evt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace evt {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', 'F'};

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError("checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t{b[i]} << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw CheckpointError("checkpoint truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t{b[i]} << (8 * i);
    return v;
}

float get_f32(std::istream& in) {
    uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string meta_text(const std::map<std::string, std::string>& meta) {
    std::string out;
    for (const auto& [k, v] : meta) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    const std::string text = meta_text(ckpt.meta);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_u64(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (size_t d : t.shape) put_u64(out, d);
        for (float v : t.v) put_f32(out, v);
    }
    if (!out) throw CheckpointError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad checkpoint magic in " + path);
    const uint32_t version = get_u32(in);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    const uint64_t text_len = get_u64(in);
    std::string text(text_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(text_len));
    if (!in) throw CheckpointError("checkpoint truncated in metadata");
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) throw CheckpointError("unterminated metadata line");
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("malformed metadata line: " + line);
        ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }

    const uint64_t count = get_u64(in);
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t name_len = get_u64(in);
        if (name_len > (1u << 16)) throw CheckpointError("implausible tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint32_t ndim = get_u32(in);
        if (ndim > 8) throw CheckpointError("implausible tensor rank");
        std::vector<size_t> shape(ndim);
        size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<size_t>(get_u64(in));
            numel *= d;
        }
        Tensor<float> t(shape);
        for (size_t j = 0; j < numel; ++j) t.v[j] = get_f32(in);
        if (!in) throw CheckpointError("checkpoint truncated in tensor '" + name + "'");
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace evt
