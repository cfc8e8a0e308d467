#include "jam/cm3.hpp"

#include <algorithm>

#include "jam/error.hpp"

namespace jam {

void Cm3Params::validate(const Vocabulary& vocab) const {
    if (!(transform_probability >= 0.0 && transform_probability <= 1.0)) {
        throw ConfigError("cm3: transform_probability must lie in [0, 1]");
    }
    if (max_spans < 1) throw ConfigError("cm3: max_spans must be >= 1");
    if (max_spans > vocab.n_mask_sentinels()) {
        throw ConfigError("cm3: max_spans exceeds the number of mask sentinels in the vocabulary");
    }
    if (min_span_length < 1 || max_span_length < min_span_length) {
        throw ConfigError("cm3: span length bounds must satisfy 1 <= min <= max");
    }
}

Cm3Result cm3_transform_detailed(std::span<const TokenId> tokens, const Vocabulary& vocab, const Cm3Params& params,
                                 Rng& rng) {
    params.validate(vocab);
    Cm3Result result;
    result.tokens.assign(tokens.begin(), tokens.end());
    if (!rng.bernoulli(params.transform_probability)) return result;

    std::size_t n = tokens.size();
    if (n > 0 && tokens[n - 1] == vocab.eos()) --n;

    // Special tokens (<break> above all) are never maskable.
    std::vector<bool> free(n);
    std::size_t maskable = 0;
    for (std::size_t i = 0; i < n; ++i) {
        free[i] = !vocab.is_special(tokens[i]);
        maskable += free[i] ? 1 : 0;
    }
    if (maskable < kMinMaskableTokens) return result;

    const auto k = static_cast<std::size_t>(rng.uniform_range(1, static_cast<std::int64_t>(params.max_spans)));
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < k; ++s) {
        auto length = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(params.min_span_length),
                                                                 static_cast<std::int64_t>(params.max_span_length)));
        std::size_t longest = 0, run = 0;
        for (std::size_t i = 0; i < n; ++i) {
            run = free[i] ? run + 1 : 0;
            longest = std::max(longest, run);
        }
        if (longest == 0) break;
        length = std::min(length, longest);

        starts.clear();
        run = 0;
        for (std::size_t i = 0; i < n; ++i) {
            run = free[i] ? run + 1 : 0;
            if (run >= length) starts.push_back(i + 1 - length);
        }
        const std::size_t start = starts[rng.uniform_int(starts.size())];
        for (std::size_t i = start; i < start + length; ++i) free[i] = false;
        spans.emplace_back(start, start + length);
    }
    std::sort(spans.begin(), spans.end());

    std::vector<TokenId> out;
    out.reserve(n + 2 * spans.size() + 1);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                   tokens.begin() + static_cast<std::ptrdiff_t>(spans[i].first));
        out.push_back(vocab.mask(i));
        pos = spans[i].second;
    }
    out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos),
               tokens.begin() + static_cast<std::ptrdiff_t>(n));
    for (std::size_t i = 0; i < spans.size(); ++i) {
        out.push_back(vocab.mask(i));
        out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(spans[i].first),
                   tokens.begin() + static_cast<std::ptrdiff_t>(spans[i].second));
    }
    out.push_back(vocab.eos());

    result.tokens = std::move(out);
    result.masked = std::move(spans);
    result.transformed = true;
    return result;
}

std::vector<TokenId> cm3_transform(const MixedSequence& seq, const Vocabulary& vocab, const Cm3Params& params, Rng& rng) {
    return cm3_transform_detailed(seq.tokens, vocab, params, rng).tokens;
}

}  // namespace jam
