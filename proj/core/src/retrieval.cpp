#include "jam/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "jam/error.hpp"

namespace jam {

const char* to_string(SkipDirection direction) {
    return direction == SkipDirection::skip_if_geq ? "skip_if_geq" : "skip_if_leq";
}

SkipDirection parse_skip_direction(const std::string& name) {
    if (name == "skip_if_geq") return SkipDirection::skip_if_geq;
    if (name == "skip_if_leq") return SkipDirection::skip_if_leq;
    throw ConfigError("retrieval: unknown skip direction '" + name + "'");
}

void RetrievalConfig::validate() const {
    if (!(skip_threshold >= -1.0 && skip_threshold <= 1.0)) throw ConfigError("retrieval: skip_threshold must lie in [-1, 1]");
    if (!(query_dropout >= 0.0 && query_dropout < 1.0)) throw ConfigError("retrieval: query_dropout must lie in [0, 1)");
    if (embedding_dim == 0) throw ConfigError("retrieval: embedding_dim must be >= 1");
}

namespace {

void normalize(std::vector<double>& v, const char* what) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DomainError(std::string("retrieval: cannot normalise ") + what);
    for (double& x : v) x /= norm;
}

}  // namespace

ToyEncoder::ToyEncoder(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed)
    : vocab_(vocab), dim_(dim), seed_(seed) {
    if (dim == 0) throw ConfigError("retrieval: encoder dimension must be >= 1");
    Rng text_rng(mix_seed(seed, 0));
    text_proj_.resize(vocab.n_text() * dim);
    for (double& x : text_proj_) x = text_rng.normal();
    Rng image_rng(mix_seed(seed, 1));
    image_proj_.resize(vocab.n_image() * dim);
    for (double& x : image_proj_) x = image_rng.normal();
}

std::vector<double> ToyEncoder::project(std::span<const TokenId> tokens, const std::vector<double>& table,
                                        TokenId base) const {
    std::vector<double> out(dim_, 0.0);
    for (TokenId t : tokens) {
        const double* row = table.data() + static_cast<std::size_t>(t - base) * dim_;
        for (std::size_t j = 0; j < dim_; ++j) out[j] += row[j];
    }
    return out;
}

std::vector<double> ToyEncoder::embed_text(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens) {
        if (!vocab_.is_text(t)) throw DomainError("retrieval: non-text token " + std::to_string(t) + " in text input");
    }
    auto v = project(tokens, text_proj_, 0);
    normalize(v, "an empty text input");
    return v;
}

std::vector<double> ToyEncoder::embed_image(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens) {
        if (!vocab_.is_image(t)) throw DomainError("retrieval: non-image token " + std::to_string(t) + " in image input");
    }
    auto v = project(tokens, image_proj_, vocab_.image_begin());
    normalize(v, "an empty image input");
    return v;
}

std::vector<double> ToyEncoder::embed_document(std::span<const TokenId> text, std::span<const TokenId> image) const {
    if (text.empty() && image.empty()) throw DomainError("retrieval: document has neither text nor image tokens");
    if (image.empty()) return embed_text(text);
    if (text.empty()) return embed_image(image);
    auto v = embed_text(text);
    const auto w = embed_image(image);
    for (std::size_t j = 0; j < dim_; ++j) v[j] = 0.5 * (v[j] + w[j]);
    normalize(v, "a document whose modality vectors cancel");
    return v;
}

std::vector<double> ToyEncoder::embed_tokens(std::span<const TokenId> tokens) const {
    std::vector<TokenId> text, image;
    for (TokenId t : tokens) {
        if (vocab_.is_text(t)) text.push_back(t);
        else if (vocab_.is_image(t)) image.push_back(t);
    }
    return embed_document(text, image);
}

void MemoryBank::add(Document doc) {
    double sq = 0.0;
    for (double x : doc.embedding) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
        throw DomainError("retrieval: embedding of document " + std::to_string(doc.doc_id) + " is not unit-norm");
    }
    if (!docs_.empty() && docs_.front().embedding.size() != doc.embedding.size()) {
        throw ShapeError("retrieval: embedding dimension mismatch for document " + std::to_string(doc.doc_id));
    }
    for (const auto& d : docs_) {
        if (d.doc_id == doc.doc_id) throw DomainError("retrieval: duplicate doc_id " + std::to_string(doc.doc_id));
    }
    docs_.push_back(std::move(doc));
}

const Document& MemoryBank::by_id(std::uint64_t doc_id) const {
    for (const auto& d : docs_) {
        if (d.doc_id == doc_id) return d;
    }
    throw DomainError("retrieval: no document with id " + std::to_string(doc_id));
}

namespace {

Document make_document(std::uint64_t id, const MixedSequence& seq) {
    Document doc;
    doc.doc_id = id;
    doc.content = seq;
    for (const Span& s : seq.spans) {
        auto& dst = s.kind == SpanKind::text ? doc.text : doc.image;
        dst.insert(dst.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(s.start),
                   seq.tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
    }
    return doc;
}

}  // namespace

MemoryBank MemoryBank::build(const std::vector<MixedSequence>& sequences, const ToyEncoder& encoder) {
    MemoryBank bank;
    bank.docs_.reserve(sequences.size());
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Document doc = make_document(i, sequences[i]);
        doc.embedding = encoder.embed_document(doc.text, doc.image);
        bank.docs_.push_back(std::move(doc));
    }
    return bank;
}

double score(std::span<const double> query, std::span<const double> doc) {
    if (query.size() != doc.size()) throw ShapeError("retrieval: query/document dimension mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) s += query[j] * doc[j];
    return s;
}

bool is_skipped(double s, const RetrievalConfig& cfg) {
    return cfg.skip_direction == SkipDirection::skip_if_geq ? s >= cfg.skip_threshold : s <= cfg.skip_threshold;
}

std::vector<Retrieved> retrieve(const MemoryBank& bank, std::span<const double> query, const RetrievalConfig& cfg) {
    std::vector<Retrieved> candidates;
    if (cfg.k == 0) return candidates;
    candidates.reserve(bank.size());
    for (const auto& doc : bank.documents()) {
        const double s = score(query, doc.embedding);
        if (!is_skipped(s, cfg)) candidates.push_back({doc.doc_id, s});
    }
    auto better = [](const Retrieved& a, const Retrieved& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    };
    const std::size_t k = std::min(cfg.k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                      better);
    candidates.resize(k);
    return candidates;
}

std::vector<TokenId> query_dropout(std::span<const TokenId> tokens, double p, const Vocabulary& vocab, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("retrieval: dropout probability must lie in [0, 1)");
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (vocab.is_special(t)) {
            out.push_back(t);
        } else if (!rng.bernoulli(p)) {
            out.push_back(t);
        }
    }
    return out;
}

AugmentedSequence prepend_retrieved(const MixedSequence& seq, std::span<const Retrieved> retrieved,
                                    const MemoryBank& bank, const Vocabulary& vocab, std::size_t image_len,
                                    std::size_t max_seq_len) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& r : retrieved) {
        std::vector<TokenId> tokens = bank.by_id(r.doc_id).content.tokens;
        if (!tokens.empty() && tokens.back() == vocab.eos()) tokens.pop_back();
        prefixes.push_back(std::move(tokens));
    }
    std::size_t used = prefixes.size();
    auto total = [&](std::size_t n) {
        std::size_t len = seq.tokens.size();
        for (std::size_t i = 0; i < n; ++i) len += prefixes[i].size();
        return len;
    };
    while (used > 0 && total(used) > max_seq_len) --used;

    std::vector<TokenId> tokens;
    for (std::size_t i = 0; i < used; ++i) tokens.insert(tokens.end(), prefixes[i].begin(), prefixes[i].end());
    AugmentedSequence out;
    out.prefix_length = tokens.size();
    out.documents_used = used;
    tokens.insert(tokens.end(), seq.tokens.begin(), seq.tokens.end());
    out.sequence = annotate(tokens, vocab, image_len);
    return out;
}

namespace {

constexpr char kBankMagic[8] = {'J', 'A', 'M', 'B', 'A', 'N', 'K', '\0'};
constexpr std::uint32_t kBankVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("bank sidecar: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_bank_embeddings(const std::filesystem::path& path, const MemoryBank& bank, const ToyEncoder& encoder) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(kBankMagic, sizeof(kBankMagic));
    const std::uint32_t version = kBankVersion;
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((version >> (8 * i)) & 0xff));
    put_u64(out, encoder.seed());
    put_u64(out, encoder.dim());
    put_u64(out, bank.size());
    for (const auto& doc : bank.documents()) {
        put_u64(out, doc.doc_id);
        for (double x : doc.embedding) put_u64(out, std::bit_cast<std::uint64_t>(x));
    }
    if (!out) throw Error("write to '" + path.string() + "' failed");
}

MemoryBank load_bank(const std::vector<MixedSequence>& sequences, const std::filesystem::path& sidecar,
                     const Vocabulary& vocab) {
    std::ifstream in(sidecar, std::ios::binary);
    if (!in) throw Error("cannot open bank sidecar '" + sidecar.string() + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != std::string(kBankMagic, 8)) {
        throw FormatError("bank sidecar: bad magic");
    }
    unsigned char vb[4];
    if (!in.read(reinterpret_cast<char*>(vb), 4)) throw FormatError("bank sidecar: truncated file");
    const std::uint32_t version = vb[0] | (vb[1] << 8) | (vb[2] << 16) | (static_cast<std::uint32_t>(vb[3]) << 24);
    if (version != kBankVersion) throw FormatError("bank sidecar: unsupported version " + std::to_string(version));
    const std::uint64_t seed = get_u64(in);
    const std::uint64_t dim = get_u64(in);
    const std::uint64_t count = get_u64(in);
    if (count != sequences.size()) {
        throw FormatError("bank sidecar: " + std::to_string(count) + " embeddings for " +
                          std::to_string(sequences.size()) + " documents");
    }
    // The sidecar is a cache: it must agree with a deterministic rebuild.
    const ToyEncoder encoder(vocab, dim, seed);
    const MemoryBank rebuilt = MemoryBank::build(sequences, encoder);
    MemoryBank bank;
    for (std::uint64_t i = 0; i < count; ++i) {
        Document doc = rebuilt.documents()[i];
        if (get_u64(in) != doc.doc_id) throw FormatError("bank sidecar: document ids out of order");
        for (double& x : doc.embedding) {
            const double stored = std::bit_cast<double>(get_u64(in));
            if (stored != x) throw FormatError("bank sidecar: embedding of document " + std::to_string(i) + " is stale");
        }
        bank.add(std::move(doc));
    }
    return bank;
}

}  // namespace jam
