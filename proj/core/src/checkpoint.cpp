#include "jam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "jam/error.hpp"

namespace jam {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'J', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) { bytes(s.data(), s.size()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) throw FormatError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

json config_to_json(const TransformerConfig& c) {
    return json{{"n_layers", c.n_layers},       {"d_model", c.d_model},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                {"no_bias", c.no_bias},         {"affine_norm", c.affine_norm}, {"norm", to_string(c.norm)},
                {"init_std", c.init_std}};
}

TransformerConfig config_from_json(const json& j) {
    TransformerConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.no_bias = j.at("no_bias").get<bool>();
    c.affine_norm = j.at("affine_norm").get<bool>();
    const auto norm = j.at("norm").get<std::string>();
    if (norm != "pre" && norm != "post") throw FormatError("checkpoint: unknown norm placement '" + norm + "'");
    c.norm = norm == "pre" ? NormPlacement::pre : NormPlacement::post;
    c.init_std = j.at("init_std").get<double>();
    return c;
}

json header_json(const Checkpoint& ckpt) {
    const ModelSpec& s = ckpt.model.spec;
    json model{{"arch", to_string(s.arch)}, {"config", config_to_json(s.config)}};
    if (s.arch == Architecture::jam_cross) {
        model["cross"] = json{{"insertion_every", s.cross.insertion_every},
                              {"cross_ffn", s.cross.cross_ffn},
                              {"init_std", s.cross.init_std}};
    }
    json header{{"format_version", kCheckpointFormatVersion}, {"model", model}, {"metadata", ckpt.metadata}};
    if (ckpt.fusion) {
        const FusionSpec& f = *ckpt.fusion;
        header["fusion"] = json{{"kind", to_string(f.kind)},
                                {"insertion_every", f.insertion_every},
                                {"cross_ffn", f.cross_ffn},
                                {"cross_init_std", f.cross_init_std},
                                {"seed", f.seed}};
    } else {
        header["fusion"] = nullptr;
    }
    return header;
}

void write_records(Writer& w, const ParameterSet& params) {
    w.u64(params.size());
    for (const auto& [name, t] : params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        for (double v : t.data()) w.f64(v);
    }
}

}  // namespace

std::vector<std::uint8_t> encode_records(const ParameterSet& params) {
    Writer w;
    write_records(w, params);
    return w.take();
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(kCheckpointFormatVersion);
    const std::string header = header_json(ckpt).dump();
    w.u64(header.size());
    w.str(header);
    write_records(w, ckpt.model.params);
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion) {
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
    }
    const std::uint64_t header_len = r.u64();
    Checkpoint ckpt;
    try {
        const json header = json::parse(r.str(header_len));
        if (header.at("format_version").get<std::uint32_t>() != version) {
            throw FormatError("checkpoint: header version disagrees with preamble");
        }
        const json& model = header.at("model");
        const auto arch = model.at("arch").get<std::string>();
        if (arch == "decoder") {
            ckpt.model.spec.arch = Architecture::decoder;
        } else if (arch == "jam_cross") {
            ckpt.model.spec.arch = Architecture::jam_cross;
            const json& cross = model.at("cross");
            ckpt.model.spec.cross.insertion_every = cross.at("insertion_every").get<std::size_t>();
            ckpt.model.spec.cross.cross_ffn = cross.at("cross_ffn").get<bool>();
            ckpt.model.spec.cross.init_std = cross.at("init_std").get<double>();
        } else {
            throw FormatError("checkpoint: unknown architecture '" + arch + "'");
        }
        ckpt.model.spec.config = config_from_json(model.at("config"));
        ckpt.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
        const json& fusion = header.at("fusion");
        if (!fusion.is_null()) {
            FusionSpec f;
            f.kind = parse_fusion_kind(fusion.at("kind").get<std::string>());
            f.insertion_every = fusion.at("insertion_every").get<std::size_t>();
            f.cross_ffn = fusion.at("cross_ffn").get<bool>();
            f.cross_init_std = fusion.at("cross_init_std").get<double>();
            f.seed = fusion.at("seed").get<std::uint64_t>();
            ckpt.fusion = f;
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }

    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str(r.u32());
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError("checkpoint: implausible rank for '" + name + "'");
        Tensor::Shape shape(rank);
        for (auto& d : shape) d = r.u64();
        const std::size_t n = shape_size(shape);
        r.need(n * 8);
        std::vector<double> data(n);
        for (auto& v : data) v = r.f64();
        if (ckpt.model.params.contains(name)) throw FormatError("checkpoint: duplicate record '" + name + "'");
        ckpt.model.params.insert(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes");
    ckpt.model.spec.validate();
    validate_structure(ckpt.model.spec, ckpt.model.params);
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t payload_hash(const ParameterSet& params) { return fnv1a64(encode_records(params)); }

std::string hex64(std::uint64_t value) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << value;
    return out.str();
}

}  // namespace jam
