#include "jam/corpus.hpp"

#include <algorithm>
#include <numeric>

#include "jam/error.hpp"

namespace jam {

const char* to_string(CorpusKind kind) {
    switch (kind) {
        case CorpusKind::text_only: return "text_only";
        case CorpusKind::caption_pairs: return "caption_pairs";
        case CorpusKind::interleaved_instruct: return "interleaved_instruct";
    }
    return "?";
}

CorpusKind parse_corpus_kind(const std::string& name) {
    if (name == "text_only") return CorpusKind::text_only;
    if (name == "caption_pairs") return CorpusKind::caption_pairs;
    if (name == "interleaved_instruct") return CorpusKind::interleaved_instruct;
    throw ConfigError("unknown corpus kind '" + name + "'");
}

void WorldParams::validate(const Vocabulary& vocab) const {
    if (image_len < 1) throw ConfigError("world: image_len must be >= 1");
    if (n_topics < 1) throw ConfigError("world: n_topics must be >= 1");
    if (SyntheticWorld::kFirstTopicWord + n_topics + 4 > vocab.n_text()) {
        throw ConfigError("world: text vocabulary too small for the requested topics");
    }
    if (palette_size < 1 || palette_size > vocab.n_image()) throw ConfigError("world: palette_size out of range");
    if (!(caption_noise >= 0.0 && caption_noise <= 1.0)) throw ConfigError("world: caption_noise must lie in [0, 1]");
}

SyntheticWorld::SyntheticWorld(Vocabulary vocab, WorldParams params) : vocab_(std::move(vocab)), params_(params) {
    params_.validate(vocab_);
    Rng rng(params_.world_seed);

    // Successors avoid the two marker words so they only appear where placed.
    const std::size_t first_word = kAnswerMarker + 1;
    const std::size_t n_words = vocab_.n_text() - first_word;
    successors_.resize(vocab_.n_text());
    for (auto& next : successors_) {
        for (auto& t : next) t = vocab_.text(first_word + rng.uniform_int(n_words));
    }

    templates_.resize(params_.n_topics);
    for (auto& tmpl : templates_) {
        std::vector<TokenId> palette;
        while (palette.size() < params_.palette_size) {
            const TokenId code = vocab_.image(rng.uniform_int(vocab_.n_image()));
            if (std::find(palette.begin(), palette.end(), code) == palette.end()) palette.push_back(code);
        }
        tmpl.resize(params_.image_len);
        for (auto& code : tmpl) code = palette[rng.uniform_int(palette.size())];
    }

    // Fisher-Yates permutation of the image codes, the instruction "style".
    style_map_.resize(vocab_.n_image());
    std::iota(style_map_.begin(), style_map_.end(), vocab_.image_begin());
    for (std::size_t i = style_map_.size(); i > 1; --i) std::swap(style_map_[i - 1], style_map_[rng.uniform_int(i)]);
}

std::vector<TokenId> SyntheticWorld::chain(TokenId start, std::size_t length, Rng& rng) const {
    std::vector<TokenId> out;
    out.reserve(length);
    TokenId cur = start;
    for (std::size_t i = 0; i < length; ++i) {
        const double u = rng.uniform();
        const auto& next = successors_[vocab_.text_index(cur)];
        cur = u < 0.6 ? next[0] : (u < 0.9 ? next[1] : next[2]);
        out.push_back(cur);
    }
    return out;
}

TokenId SyntheticWorld::styled(TokenId image_token) const { return style_map_[vocab_.image_index(image_token)]; }

void SyntheticWorld::append_image(std::vector<TokenId>& out, std::size_t topic, bool instruct_style, Rng& rng) const {
    out.push_back(vocab_.break_id());
    for (TokenId code : templates_[topic]) {
        TokenId t = instruct_style ? styled(code) : code;
        if (rng.bernoulli(params_.caption_noise)) t = vocab_.image(rng.uniform_int(vocab_.n_image()));
        out.push_back(t);
    }
    out.push_back(vocab_.break_id());
}

MixedSequence SyntheticWorld::text_only(Rng& rng) const {
    const std::size_t first_word = kAnswerMarker + 1;
    const TokenId start = vocab_.text(first_word + rng.uniform_int(vocab_.n_text() - first_word));
    const auto length = static_cast<std::size_t>(rng.uniform_range(7, 23));
    std::vector<TokenId> tokens{start};
    auto rest = chain(start, length, rng);
    tokens.insert(tokens.end(), rest.begin(), rest.end());
    return annotate(tokens, vocab_, params_.image_len);
}

MixedSequence SyntheticWorld::caption_pair(Rng& rng) const {
    const std::size_t topic = rng.uniform_int(params_.n_topics);
    std::vector<TokenId> tokens{topic_word(topic)};
    auto rest = chain(topic_word(topic), static_cast<std::size_t>(rng.uniform_range(2, 5)), rng);
    tokens.insert(tokens.end(), rest.begin(), rest.end());
    append_image(tokens, topic, /*instruct_style=*/false, rng);
    return annotate(tokens, vocab_, params_.image_len);
}

MixedSequence SyntheticWorld::interleaved(Rng& rng) const {
    const std::size_t topic = rng.uniform_int(params_.n_topics);
    std::vector<TokenId> tokens{vocab_.text(kHowToMarker), topic_word(topic), vocab_.text(kAnswerMarker)};
    auto answer = chain(topic_word(topic), static_cast<std::size_t>(rng.uniform_range(6, 10)), rng);
    tokens.insert(tokens.end(), answer.begin(), answer.end());
    const TokenId last_word = tokens.back();
    append_image(tokens, topic, /*instruct_style=*/true, rng);
    auto more = chain(last_word, static_cast<std::size_t>(rng.uniform_range(3, 6)), rng);
    tokens.insert(tokens.end(), more.begin(), more.end());
    if (rng.bernoulli(0.5)) append_image(tokens, topic, /*instruct_style=*/true, rng);
    return annotate(tokens, vocab_, params_.image_len);
}

MixedSequence SyntheticWorld::sample(CorpusKind kind, Rng& rng) const {
    switch (kind) {
        case CorpusKind::text_only: return text_only(rng);
        case CorpusKind::caption_pairs: return caption_pair(rng);
        case CorpusKind::interleaved_instruct: return interleaved(rng);
    }
    throw ConfigError("unknown corpus kind");
}

std::optional<std::size_t> SyntheticWorld::caption_topic(const MixedSequence& seq) const {
    if (seq.tokens.empty() || !vocab_.is_text(seq.tokens[0])) return std::nullopt;
    const std::size_t idx = vocab_.text_index(seq.tokens[0]);
    if (idx < kFirstTopicWord || idx >= kFirstTopicWord + params_.n_topics) return std::nullopt;
    return idx - kFirstTopicWord;
}

std::vector<MixedSequence> synth_corpus(const SyntheticWorld& world, CorpusKind kind, std::size_t size,
                                        std::uint64_t seed) {
    if (size < 1) throw ConfigError("synth_corpus: size must be >= 1");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
    std::vector<MixedSequence> out;
    out.reserve(size);
    for (std::size_t i = 0; i < size; ++i) out.push_back(world.sample(kind, rng));
    return out;
}

}  // namespace jam
