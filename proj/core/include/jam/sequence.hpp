#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "jam/vocab.hpp"

namespace jam {

enum class SpanKind { text, image };

struct Span {
    SpanKind kind;
    std::size_t start;
    std::size_t end;  // exclusive

    std::size_t length() const { return end - start; }
    bool operator==(const Span&) const = default;
};

// Token stream with its modality spans.
//
// Valid streams follow
//     text* (<break> image^L <break> text*)* <eos>?
// where L is the image length. Spans list the non-empty text runs and every
// image run, in order; <break> and the optional trailing <eos> belong to no
// span.
struct MixedSequence {
    std::vector<TokenId> tokens;
    std::vector<Span> spans;

    bool operator==(const MixedSequence&) const = default;
};

// Parses `tokens` against the grammar and returns the annotated sequence.
// Throws FormatError describing the first violation.
MixedSequence annotate(std::span<const TokenId> tokens, const Vocabulary& vocab, std::size_t image_len);

// Throws FormatError unless seq.spans equals annotate(seq.tokens).
void validate_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t image_len);
bool is_valid_sequence(std::span<const TokenId> tokens, const Vocabulary& vocab, std::size_t image_len);

bool ends_with_eos(const MixedSequence& seq, const Vocabulary& vocab);

// Human-readable rendering: one line per text span ("text: t3 t9"), one line
// per <break>/<eos>, and images as a grid of code indices ("image 4x4:" then
// rows). Throws FormatError when spans disagree with tokens.
std::string render_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t image_len);

// Inverse of render_sequence.
MixedSequence parse_rendered(const std::string& text, const Vocabulary& vocab, std::size_t image_len);

// Rows x cols of the image grid: square when image_len is a perfect square,
// otherwise a single row.
std::pair<std::size_t, std::size_t> image_grid(std::size_t image_len);

}  // namespace jam
