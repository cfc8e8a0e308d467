#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jam/rng.hpp"
#include "jam/sequence.hpp"

namespace jam {

// Causally-masked infilling parameters. k is drawn uniformly from
// [1, max_spans], each span length uniformly from [min_span_length,
// max_span_length].
struct Cm3Params {
    double transform_probability = 0.5;
    std::size_t max_spans = 3;
    std::size_t min_span_length = 1;
    std::size_t max_span_length = 16;

    void validate(const Vocabulary& vocab) const;
};

// Sequences with fewer maskable tokens than this are returned unchanged.
inline constexpr std::size_t kMinMaskableTokens = 2;

struct Cm3Result {
    std::vector<TokenId> tokens;
    // Masked [start, end) ranges of the input, in positional order; span i
    // was replaced by mask_i.
    std::vector<std::pair<std::size_t, std::size_t>> masked;
    bool transformed = false;
};

// Either returns `tokens` unchanged (probability 1 - p) or replaces k
// non-overlapping spans with <mask_i>, then appends <mask_i> followed by the
// original span for each i and a final <eos>. Spans never contain <break> or
// any other special token. A trailing <eos> on the input is not maskable and
// is dropped when the sequence is transformed (the output's own <eos>
// replaces it).
Cm3Result cm3_transform_detailed(std::span<const TokenId> tokens, const Vocabulary& vocab, const Cm3Params& params,
                                 Rng& rng);

std::vector<TokenId> cm3_transform(const MixedSequence& seq, const Vocabulary& vocab, const Cm3Params& params, Rng& rng);

}  // namespace jam
