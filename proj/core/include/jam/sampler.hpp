#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "jam/model.hpp"
#include "jam/retrieval.hpp"
#include "jam/rng.hpp"
#include "jam/sequence.hpp"

namespace jam {

struct SamplerConfig {
    double temperature = 1.0;
    double top_p = 0.9;
    double cfg_alpha = 3.5;
    std::size_t max_tokens = 64;  // newly generated tokens
    std::size_t max_images = 2;
    std::uint64_t seed = 0;
    // Guidance is applied to image tokens only unless this is set.
    bool cfg_on_text = false;

    void validate() const;
};

// Next-token logits for the last position of `context`.
using LogitsFn = std::function<std::vector<double>(std::span<const TokenId> context)>;

// Full-context forward per call (no KV cache).
LogitsFn model_logits(const Model& model);

std::vector<double> apply_temperature(std::span<const double> logits, double temperature);
// Max-subtracted softmax; -inf entries get probability 0.
std::vector<double> softmax(std::span<const double> logits);
// Keeps the smallest prefix of tokens, sorted by descending probability
// (ties: ascending id), whose cumulative mass reaches top_p, then
// renormalises. Cumulative sums are compared with a 1e-12 slack so that
// e.g. 0.5 + 0.3 counts as reaching 0.8.
std::vector<double> top_p_filter(std::span<const double> probs, double top_p);
inline constexpr double kTopPSlack = 1e-12;
// uncond + alpha * (cond - uncond), evaluated as (1 - alpha) * uncond +
// alpha * cond so that alpha = 1 and alpha = 0 return cond and uncond exactly.
std::vector<double> cfg_mix(std::span<const double> cond, std::span<const double> uncond, double alpha);
// Inverse-CDF draw over ids in ascending order.
TokenId sample_categorical(std::span<const double> probs, Rng& rng);

struct RetrievalContext {
    const MemoryBank* bank = nullptr;
    const ToyEncoder* encoder = nullptr;
    RetrievalConfig config;
};

// Interleaved decoding loop. In TEXT state only text ids, <break> and <eos>
// are allowed; <break> is masked once fewer than image_len + 2 tokens of
// budget remain or max_images images exist. A sampled <break> switches to
// IMAGE state: exactly image_len image ids are drawn from the guided mix of
// the conditional stream and an unconditional stream whose context is
// [<query_mask>, <break>, image tokens so far], then a closing <break> is
// emitted. Generation ends on <eos>, when the token budget (max_tokens or
// the model context) runs out, or right after the max_images-th generated
// image (images already in the prompt do not count).
//
// With `retrieval`, documents retrieved for the prompt are prefixed to the
// model context; the returned sequence is prompt + continuation only.
MixedSequence generate_interleaved(const LogitsFn& model, const MixedSequence& prompt, const Vocabulary& vocab,
                                   std::size_t image_len, std::size_t max_seq_len, const SamplerConfig& cfg,
                                   const RetrievalContext* retrieval = nullptr);

}  // namespace jam
