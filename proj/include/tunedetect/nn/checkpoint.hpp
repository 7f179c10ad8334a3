#pragma once

// Checkpoint layout (all integers little-endian u32, tensors little-endian f32):
//   "TDCKPT01" | 0x01020304 | header_len | header (key = value text)
//   | n_tensors | { name_len | name | ndim | dims... | data... } * n_tensors

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "tunedetect/config.hpp"
#include "tunedetect/nn/models.hpp"

namespace tunedetect::nn {

inline constexpr char kCheckpointMagic[9] = "TDCKPT01";
inline constexpr std::uint32_t kByteOrderMark = 0x01020304u;

inline KeyValues to_keyvalues(const EmbedderConfig& c) {
    KeyValues kv;
    kv.set("model", "embedder");
    std::string blocks;
    for (const auto& b : c.blocks) {
        if (!blocks.empty()) blocks += ",";
        blocks += std::to_string(b.out_channels) + ":" + std::to_string(b.stride);
    }
    kv.set("blocks", blocks);
    kv.set("input_frames", c.input_frames);
    kv.set("input_mels", c.input_mels);
    kv.set("embedding_dim", c.embedding_dim);
    kv.set("l2_normalize", c.l2_normalize);
    kv.set("margin", c.margin);
    kv.set("batch_size", c.batch_size);
    kv.set("learning_rate", c.learning_rate);
    kv.set("max_epochs", c.max_epochs);
    kv.set("patience", c.patience);
    kv.set("seed", c.seed, 0);
    return kv;
}

inline KeyValues to_keyvalues(const ClassifierConfig& c) {
    KeyValues kv;
    kv.set("model", "classifier");
    kv.set("input_dim", c.input_dim);
    std::string hidden;
    for (auto h : c.hidden_dims) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
    kv.set("hidden_dims", hidden);
    kv.set("batch_size", c.batch_size);
    kv.set("learning_rate", c.learning_rate);
    kv.set("max_epochs", c.max_epochs);
    kv.set("patience", c.patience);
    kv.set("seed", c.seed, 0);
    return kv;
}

/// Fields absent from `kv` keep the values already in `c`.
inline EmbedderConfig embedder_config_from(const KeyValues& kv, EmbedderConfig c = {}) {
    if (auto b = kv.get("blocks")) {
        c.blocks.clear();
        for (const auto& item : split(*b, ',')) {
            auto parts = split(trim(item), ':');
            if (parts.empty() || parts.size() > 2 || trim(parts[0]).empty())
                throw FormatError("blocks: expected channels[:stride] list, got '" + *b + "'");
            ConvBlockSpec spec;
            spec.out_channels = std::stoul(parts[0]);
            spec.stride = parts.size() == 2 ? std::stoul(parts[1]) : 1;
            if (spec.stride == 0 || spec.out_channels == 0) throw FormatError("blocks: zero channel or stride");
            c.blocks.push_back(spec);
        }
    }
    c.input_frames = kv.get_uint("input_frames", c.input_frames);
    c.input_mels = kv.get_uint("input_mels", c.input_mels);
    c.embedding_dim = kv.get_uint("embedding_dim", c.embedding_dim);
    c.l2_normalize = kv.get_bool("l2_normalize", c.l2_normalize);
    c.margin = kv.get_double("margin", c.margin);
    c.batch_size = kv.get_uint("batch_size", c.batch_size);
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.max_epochs = kv.get_uint("max_epochs", c.max_epochs);
    c.patience = kv.get_uint("patience", c.patience);
    c.seed = kv.get_uint("seed", c.seed);
    return c;
}

inline ClassifierConfig classifier_config_from(const KeyValues& kv, ClassifierConfig c = {}) {
    c.input_dim = kv.get_uint("input_dim", c.input_dim);
    if (auto h = kv.get("hidden_dims")) {
        c.hidden_dims.clear();
        for (const auto& item : split(*h, ','))
            if (!trim(item).empty()) c.hidden_dims.push_back(std::stoul(trim(item)));
    }
    c.batch_size = kv.get_uint("batch_size", c.batch_size);
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.max_epochs = kv.get_uint("max_epochs", c.max_epochs);
    c.patience = kv.get_uint("patience", c.patience);
    c.seed = kv.get_uint("seed", c.seed);
    return c;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    Reader(std::string_view bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError(origin_ + ": truncated checkpoint");
    }
    std::string_view b_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string encode_checkpoint(const KeyValues& header, const ParamList<T>& params) {
    std::string out(kCheckpointMagic, 8);
    detail::put_u32(out, kByteOrderMark);
    const std::string text = header.to_text();
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        const auto& t = p.var.value();
        detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (auto v : t.data) detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

struct CheckpointData {
    KeyValues header;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

inline CheckpointData decode_checkpoint(std::string_view bytes, const std::string& origin = "<checkpoint>") {
    if (bytes.size() < 8 || bytes.substr(0, 8) != std::string_view(kCheckpointMagic, 8))
        throw FormatError(origin + ": not a checkpoint (bad magic)");
    detail::Reader r(bytes.substr(8), origin);
    if (r.u32() != kByteOrderMark) throw FormatError(origin + ": unexpected byte-order mark");
    CheckpointData out;
    const auto hlen = r.u32();
    out.header = KeyValues::parse(r.str(hlen), origin);
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str(r.u32());
        const auto ndim = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(r.u32());
        Tensor<float> t(shape);
        for (auto& v : t.data) v = r.f32();
        out.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw FormatError(origin + ": trailing bytes after checkpoint");
    return out;
}

template <class T>
void load_params(ParamList<T>& params, const CheckpointData& ck, const std::string& origin) {
    if (ck.tensors.size() != params.size())
        throw FormatError(origin + ": checkpoint has " + std::to_string(ck.tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = ck.tensors[i];
        auto& dst = params[i].var.mutable_value();
        if (name != params[i].name || t.shape != dst.shape)
            throw FormatError(origin + ": tensor " + name + " " + shape_str(t.shape) + " does not match " +
                              params[i].name + " " + shape_str(dst.shape));
        for (std::size_t k = 0; k < t.size(); ++k) dst[k] = static_cast<T>(t[k]);
    }
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed: " + path.string());
}

template <class T>
void save_embedder(const std::filesystem::path& path, const Embedder<T>& m) {
    write_bytes(path, encode_checkpoint(to_keyvalues(m.config()), m.params()));
}

template <class T>
void save_classifier(const std::filesystem::path& path, const Classifier<T>& m) {
    write_bytes(path, encode_checkpoint(to_keyvalues(m.config()), m.params()));
}

inline Embedder<float> load_embedder(const std::filesystem::path& path) {
    auto ck = decode_checkpoint(read_file_bytes(path), path.string());
    if (ck.header.get_or("model", "") != "embedder") throw FormatError(path.string() + ": not an embedder checkpoint");
    Embedder<float> m(embedder_config_from(ck.header));
    load_params(m.params(), ck, path.string());
    return m;
}

inline Classifier<float> load_classifier(const std::filesystem::path& path) {
    auto ck = decode_checkpoint(read_file_bytes(path), path.string());
    if (ck.header.get_or("model", "") != "classifier")
        throw FormatError(path.string() + ": not a classifier checkpoint");
    Classifier<float> m(classifier_config_from(ck.header));
    load_params(m.params(), ck, path.string());
    return m;
}

}  // namespace tunedetect::nn
