#pragma once

#include <cstddef>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jam/rng.hpp"
#include "jam/sequence.hpp"

namespace jam {

enum class CorpusKind { text_only, caption_pairs, interleaved_instruct };

const char* to_string(CorpusKind kind);
CorpusKind parse_corpus_kind(const std::string& name);

// Fixed structure shared by every corpus drawn from the same world seed.
struct WorldParams {
    std::size_t image_len = 16;
    std::uint64_t world_seed = 20231010;
    std::size_t n_topics = 8;
    // Distinct image codes a topic's template draws from.
    std::size_t palette_size = 6;
    // Probability that an image code is replaced by a uniform random code.
    double caption_noise = 0.1;

    void validate(const Vocabulary& vocab) const;
    bool operator==(const WorldParams&) const = default;
};

// Synthetic stand-in for the real corpora.
//
//  * text: a sparse bigram chain over the text ids (each id has three
//    successors with probabilities 0.6 / 0.3 / 0.1);
//  * captions: a topic word followed by a short chain; the image is the
//    topic's code template with per-code noise, so the caption determines
//    the image up to the noise;
//  * instructions: "how to" marker + topic, "answer" marker + chain text,
//    then one or two images of the topic rendered in a distinct style
//    (a fixed permutation of image codes) separated by more text.
class SyntheticWorld {
public:
    static constexpr std::size_t kHowToMarker = 0;
    static constexpr std::size_t kAnswerMarker = 1;
    static constexpr std::size_t kFirstTopicWord = 2;

    SyntheticWorld(Vocabulary vocab, WorldParams params);

    const Vocabulary& vocab() const { return vocab_; }
    const WorldParams& params() const { return params_; }

    MixedSequence text_only(Rng& rng) const;
    MixedSequence caption_pair(Rng& rng) const;
    MixedSequence interleaved(Rng& rng) const;
    MixedSequence sample(CorpusKind kind, Rng& rng) const;

    TokenId topic_word(std::size_t topic) const { return vocab_.text(kFirstTopicWord + topic); }
    // Topic whose word opens a caption, if any.
    std::optional<std::size_t> caption_topic(const MixedSequence& seq) const;
    const std::vector<TokenId>& image_template(std::size_t topic) const { return templates_[topic]; }
    TokenId styled(TokenId image_token) const;

private:
    std::vector<TokenId> chain(TokenId start, std::size_t length, Rng& rng) const;
    void append_image(std::vector<TokenId>& out, std::size_t topic, bool instruct_style, Rng& rng) const;

    Vocabulary vocab_;
    WorldParams params_;
    std::vector<std::array<TokenId, 3>> successors_;
    std::vector<std::vector<TokenId>> templates_;
    std::vector<TokenId> style_map_;
};

// `size` sequences, deterministic in (world, kind, seed).
std::vector<MixedSequence> synth_corpus(const SyntheticWorld& world, CorpusKind kind, std::size_t size,
                                        std::uint64_t seed);

}  // namespace jam
