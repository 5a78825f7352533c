// SPDX-License-Identifier: Apache-2.0
#include "moec/container.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "moec/error.hpp"

namespace moec {

namespace {

constexpr char kMagic[5] = {'M', 'O', 'E', 'C', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_matrix(std::string& out, const Matrix& m) {
    for (double v : m.data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        put_u32(out, bits);
    }
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > buf.size()) throw IoError("load_model: truncated file");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }

    std::uint64_t u64() {
        if (pos + 8 > buf.size()) throw IoError("load_model: truncated file");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }

    Matrix matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& d : m.data) {
            const std::uint32_t bits = u32();
            float f;
            std::memcpy(&f, &bits, sizeof(f));
            if (!std::isfinite(f)) throw IoError("load_model: non-finite weight");
            d = static_cast<double>(f);
        }
        return m;
    }
};

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("rename failed: " + path);
}

} // namespace

void save_model(const ModelSpec& model, const std::string& path) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(model.d_model));
    put_u32(out, static_cast<std::uint32_t>(model.d_ff));
    put_u32(out, static_cast<std::uint32_t>(model.num_layers));
    put_u32(out, static_cast<std::uint32_t>(model.num_experts()));
    put_u32(out, static_cast<std::uint32_t>(model.top_k));
    put_u64(out, model.seed);
    for (const MoELayer& layer : model.layers) {
        put_matrix(out, layer.gate);
        for (const ExpertWeights& e : layer.experts) {
            put_matrix(out, e.gate_proj);
            put_matrix(out, e.up_proj);
            put_matrix(out, e.down_proj);
        }
    }
    atomic_write(path, out);
}

ModelSpec load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("load_model: bad magic (not a MOEC1 file): " + path);

    Reader r{buf, sizeof(kMagic)};
    ModelSpec model;
    model.d_model = r.u32();
    model.d_ff = r.u32();
    model.num_layers = r.u32();
    const std::size_t n = r.u32();
    model.top_k = r.u32();
    model.seed = r.u64();
    if (model.d_model == 0 || model.d_ff == 0 || model.num_layers == 0 || n == 0)
        throw IoError("load_model: invalid header dimensions");
    if (model.top_k < 1 || model.top_k > n) throw IoError("load_model: invalid top_k");

    for (std::size_t l = 0; l < model.num_layers; ++l) {
        MoELayer layer;
        layer.top_k = model.top_k;
        layer.gate = r.matrix(n, model.d_model);
        layer.experts.resize(n);
        for (ExpertWeights& e : layer.experts) {
            e.gate_proj = r.matrix(model.d_ff, model.d_model);
            e.up_proj = r.matrix(model.d_ff, model.d_model);
            e.down_proj = r.matrix(model.d_model, model.d_ff);
        }
        model.layers.push_back(std::move(layer));
    }
    if (r.pos != buf.size()) throw IoError("load_model: trailing bytes");
    return model;
}

void atomic_write_text(const std::string& path, const std::string& content) {
    atomic_write(path, content);
}

} // namespace moec
