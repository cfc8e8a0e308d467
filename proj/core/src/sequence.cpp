#include "jam/sequence.hpp"

#include <cmath>
#include <sstream>

#include "jam/error.hpp"

namespace jam {

MixedSequence annotate(std::span<const TokenId> tokens, const Vocabulary& vocab, std::size_t image_len) {
    if (image_len == 0) throw ConfigError("image_len must be >= 1");
    MixedSequence seq;
    seq.tokens.assign(tokens.begin(), tokens.end());

    std::size_t n = tokens.size();
    if (n > 0 && tokens[n - 1] == vocab.eos()) --n;

    auto fail = [&](std::size_t pos, const std::string& why) -> MixedSequence {
        throw FormatError("invalid mixed sequence at position " + std::to_string(pos) + ": " + why);
    };

    std::size_t i = 0;
    auto read_text = [&] {
        const std::size_t start = i;
        while (i < n && vocab.is_text(tokens[i])) ++i;
        if (i > start) seq.spans.push_back({SpanKind::text, start, i});
    };

    read_text();
    while (i < n) {
        if (tokens[i] != vocab.break_id()) {
            if (!vocab.contains(tokens[i])) return fail(i, "token id " + std::to_string(tokens[i]) + " out of range");
            return fail(i, "unexpected " + vocab.name(tokens[i]) + " in text span");
        }
        ++i;
        const std::size_t start = i;
        while (i < n && i - start < image_len) {
            if (!vocab.is_image(tokens[i])) {
                return fail(i, vocab.contains(tokens[i]) ? "unexpected " + vocab.name(tokens[i]) + " in image span"
                                                         : "token id out of range");
            }
            ++i;
        }
        if (i - start != image_len) return fail(i, "image span shorter than " + std::to_string(image_len));
        seq.spans.push_back({SpanKind::image, start, i});
        if (i >= n || tokens[i] != vocab.break_id()) return fail(i, "image span not closed by <break>");
        ++i;
        read_text();
    }
    return seq;
}

void validate_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t image_len) {
    const MixedSequence expected = annotate(seq.tokens, vocab, image_len);
    if (expected.spans != seq.spans) throw FormatError("mixed sequence spans disagree with its tokens");
}

bool is_valid_sequence(std::span<const TokenId> tokens, const Vocabulary& vocab, std::size_t image_len) {
    try {
        annotate(tokens, vocab, image_len);
        return true;
    } catch (const FormatError&) {
        return false;
    }
}

bool ends_with_eos(const MixedSequence& seq, const Vocabulary& vocab) {
    return !seq.tokens.empty() && seq.tokens.back() == vocab.eos();
}

std::pair<std::size_t, std::size_t> image_grid(std::size_t image_len) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(image_len))));
    if (side * side == image_len) return {side, side};
    return {1, image_len};
}

std::string render_sequence(const MixedSequence& seq, const Vocabulary& vocab, std::size_t image_len) {
    validate_sequence(seq, vocab, image_len);
    const auto [rows, cols] = image_grid(image_len);
    std::ostringstream out;
    std::size_t pos = 0;
    auto emit_special = [&](std::size_t until) {
        for (; pos < until; ++pos) out << vocab.name(seq.tokens[pos]) << '\n';
    };
    for (const Span& span : seq.spans) {
        emit_special(span.start);
        if (span.kind == SpanKind::text) {
            out << "text:";
            for (std::size_t i = span.start; i < span.end; ++i) out << ' ' << vocab.name(seq.tokens[i]);
            out << '\n';
        } else {
            out << "image " << rows << 'x' << cols << ":\n";
            for (std::size_t r = 0; r < rows; ++r) {
                out << ' ';
                for (std::size_t c = 0; c < cols; ++c) out << ' ' << vocab.name(seq.tokens[span.start + r * cols + c]);
                out << '\n';
            }
        }
        pos = span.end;
    }
    emit_special(seq.tokens.size());
    return out.str();
}

MixedSequence parse_rendered(const std::string& text, const Vocabulary& vocab, std::size_t image_len) {
    std::vector<TokenId> tokens;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::istringstream words(line);
        std::string word;
        bool first = true;
        while (words >> word) {
            const bool label = first && (word == "text:" || word == "image");
            first = false;
            if (label) {
                if (word == "image") words >> word;  // "RxC:"
                continue;
            }
            auto id = vocab.parse(word);
            if (!id) throw FormatError("rendered sequence: unknown token '" + word + "'");
            tokens.push_back(*id);
        }
    }
    return annotate(tokens, vocab, image_len);
}

}  // namespace jam
