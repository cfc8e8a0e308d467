#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <span>
#include <vector>

#include "jam/rng.hpp"
#include "jam/sequence.hpp"

namespace jam {

enum class SkipDirection { skip_if_geq, skip_if_leq };

const char* to_string(SkipDirection direction);
SkipDirection parse_skip_direction(const std::string& name);

struct RetrievalConfig {
    std::size_t k = 1;
    double skip_threshold = 0.9;
    // skip_if_geq drops near-duplicates of the query; skip_if_leq is the
    // opposite rule and keeps only candidates scoring above the threshold.
    SkipDirection skip_direction = SkipDirection::skip_if_geq;
    double query_dropout = 0.2;
    std::size_t embedding_dim = 32;
    std::uint64_t encoder_seed = 97;

    void validate() const;
};

// Seeded random-projection encoders, one per modality: a token multiset is
// mapped to the L2-normalised sum of its tokens' projection rows.
class ToyEncoder {
public:
    ToyEncoder(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed);

    std::size_t dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<double> embed_text(std::span<const TokenId> tokens) const;
    std::vector<double> embed_image(std::span<const TokenId> tokens) const;
    // Average of the available modality vectors, renormalised. Throws
    // DomainError when both modalities are empty.
    std::vector<double> embed_document(std::span<const TokenId> text, std::span<const TokenId> image) const;
    // Splits a token stream by modality (specials ignored) and embeds it.
    std::vector<double> embed_tokens(std::span<const TokenId> tokens) const;

private:
    std::vector<double> project(std::span<const TokenId> tokens, const std::vector<double>& table, TokenId base) const;

    Vocabulary vocab_;
    std::size_t dim_;
    std::uint64_t seed_;
    std::vector<double> text_proj_;   // n_text x dim
    std::vector<double> image_proj_;  // n_image x dim
};

struct Document {
    std::uint64_t doc_id = 0;
    MixedSequence content;
    std::vector<TokenId> text;
    std::vector<TokenId> image;
    std::vector<double> embedding;
};

// Immutable once built; retrieve() may be called concurrently.
class MemoryBank {
public:
    // Throws if the id is taken or the embedding is not unit-norm (1e-9).
    void add(Document doc);
    const std::vector<Document>& documents() const { return docs_; }
    const Document& by_id(std::uint64_t doc_id) const;
    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }

    // One document per sequence, doc_id = index.
    static MemoryBank build(const std::vector<MixedSequence>& sequences, const ToyEncoder& encoder);

private:
    std::vector<Document> docs_;
};

// Inner product r(q, m).
double score(std::span<const double> query, std::span<const double> doc);

bool is_skipped(double score, const RetrievalConfig& cfg);

struct Retrieved {
    std::uint64_t doc_id;
    double score;
    bool operator==(const Retrieved&) const = default;
};

// Exact full-scan maximum inner product search: candidates surviving the
// skip rule, top-k by descending score, ties broken by ascending doc_id.
std::vector<Retrieved> retrieve(const MemoryBank& bank, std::span<const double> query, const RetrievalConfig& cfg);

// Drops each non-special token independently with probability p.
// Special tokens (<break> in particular) are always kept.
std::vector<TokenId> query_dropout(std::span<const TokenId> tokens, double p, const Vocabulary& vocab, Rng& rng);

struct AugmentedSequence {
    MixedSequence sequence;
    std::size_t prefix_length = 0;  // tokens contributed by retrieved documents
    std::size_t documents_used = 0;
};

// Prefixes the retrieved documents' token streams (in the given order) to
// `seq`. Every document ends with the <break> that closes its image, which
// separates it from what follows. When the result would exceed
// max_seq_len, documents are dropped from the end of the list (lowest
// score first).
AugmentedSequence prepend_retrieved(const MixedSequence& seq, std::span<const Retrieved> retrieved,
                                    const MemoryBank& bank, const Vocabulary& vocab, std::size_t image_len,
                                    std::size_t max_seq_len);

// Embedding sidecar: "JAMBANK\0", u32 version, u64 encoder seed, u64 dim,
// u64 count, then per document u64 doc_id and dim f64 values.
void save_bank_embeddings(const std::filesystem::path& path, const MemoryBank& bank, const ToyEncoder& encoder);
MemoryBank load_bank(const std::vector<MixedSequence>& sequences, const std::filesystem::path& sidecar,
                     const Vocabulary& vocab);

}  // namespace jam
