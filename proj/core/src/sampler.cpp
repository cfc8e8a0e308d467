#include "jam/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "jam/error.hpp"

namespace jam {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void SamplerConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("sampler: temperature must be > 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler: top_p must lie in (0, 1]");
    if (!std::isfinite(cfg_alpha)) throw ConfigError("sampler: cfg_alpha must be finite");
    if (max_tokens < 1) throw ConfigError("sampler: max_tokens must be >= 1");
}

LogitsFn model_logits(const Model& model) {
    return [&model](std::span<const TokenId> context) {
        const Tensor logits = compute_logits(model, context);
        const auto last = logits.row(logits.rows() - 1);
        return std::vector<double>(last.begin(), last.end());
    };
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("sampler: temperature must be > 0");
    std::vector<double> out(logits.begin(), logits.end());
    for (double& x : out) x /= temperature;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("sampler: softmax of an empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    if (m == kNegInf) throw DomainError("sampler: every logit is masked");
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& p : out) p /= z;
    return out;
}

std::vector<double> top_p_filter(std::span<const double> probs, double top_p) {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw DomainError("sampler: top_p must lie in (0, 1]");
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::vector<double> out(probs.size(), 0.0);
    double cumulative = 0.0;
    for (std::size_t i : order) {
        out[i] = probs[i];
        cumulative += probs[i];
        if (cumulative >= top_p - kTopPSlack) break;
    }
    for (double& p : out) p /= cumulative;
    return out;
}

std::vector<double> cfg_mix(std::span<const double> cond, std::span<const double> uncond, double alpha) {
    if (cond.size() != uncond.size()) throw ShapeError("sampler: cfg_mix shape mismatch");
    std::vector<double> out(cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) out[i] = (1.0 - alpha) * uncond[i] + alpha * cond[i];
    return out;
}

TokenId sample_categorical(std::span<const double> probs, Rng& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_nonzero = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        cumulative += probs[i];
        last_nonzero = i;
        if (u < cumulative) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(last_nonzero);
}

namespace {

// Mask, temperature, softmax, nucleus, draw.
TokenId draw(std::vector<double> logits, const std::vector<bool>& allowed, const SamplerConfig& cfg, Rng& rng) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!allowed[i]) logits[i] = kNegInf;
    }
    return sample_categorical(top_p_filter(softmax(apply_temperature(logits, cfg.temperature)), cfg.top_p), rng);
}

}  // namespace

MixedSequence generate_interleaved(const LogitsFn& model, const MixedSequence& prompt, const Vocabulary& vocab,
                                   std::size_t image_len, std::size_t max_seq_len, const SamplerConfig& cfg,
                                   const RetrievalContext* retrieval) {
    cfg.validate();
    validate_sequence(prompt, vocab, image_len);
    if (prompt.tokens.size() > max_seq_len) {
        throw DomainError("sampler: prompt of " + std::to_string(prompt.tokens.size()) +
                          " tokens exceeds the model context of " + std::to_string(max_seq_len));
    }
    if (ends_with_eos(prompt, vocab)) return prompt;

    std::vector<TokenId> prefix;
    if (retrieval && retrieval->bank && retrieval->encoder && !retrieval->bank->empty()) {
        const bool has_content = std::any_of(prompt.tokens.begin(), prompt.tokens.end(),
                                             [&](TokenId t) { return !vocab.is_special(t); });
        if (has_content) {
            const auto query = retrieval->encoder->embed_tokens(prompt.tokens);
            const auto docs = retrieve(*retrieval->bank, query, retrieval->config);
            const auto aug = prepend_retrieved(prompt, docs, *retrieval->bank, vocab, image_len, max_seq_len);
            prefix.assign(aug.sequence.tokens.begin(),
                          aug.sequence.tokens.begin() + static_cast<std::ptrdiff_t>(aug.prefix_length));
        }
    }

    Rng rng(cfg.seed);
    const std::size_t V = vocab.size();
    std::vector<TokenId> context = prefix;
    context.insert(context.end(), prompt.tokens.begin(), prompt.tokens.end());
    std::vector<TokenId> out = prompt.tokens;
    std::size_t images = 0;  // generated, prompt images not counted
    std::size_t generated = 0;
    auto remaining = [&] {
        return std::min(cfg.max_tokens - generated, max_seq_len - context.size());
    };
    auto emit = [&](TokenId t) {
        context.push_back(t);
        out.push_back(t);
        ++generated;
    };

    std::vector<bool> text_allowed(V, false), image_allowed(V, false);
    for (std::size_t i = 0; i < vocab.n_text(); ++i) text_allowed[static_cast<std::size_t>(vocab.text(i))] = true;
    for (std::size_t i = 0; i < vocab.n_image(); ++i) image_allowed[static_cast<std::size_t>(vocab.image(i))] = true;
    text_allowed[static_cast<std::size_t>(vocab.eos())] = true;

    while (remaining() > 0) {
        // TEXT state.
        std::vector<bool> allowed = text_allowed;
        allowed[static_cast<std::size_t>(vocab.break_id())] = images < cfg.max_images && remaining() >= image_len + 2;
        std::vector<double> logits = model(context);
        if (logits.size() != V) throw ShapeError("sampler: model returned " + std::to_string(logits.size()) +
                                                 " logits for a vocabulary of " + std::to_string(V));
        if (cfg.cfg_on_text) {
            std::vector<TokenId> uncond{vocab.query_mask()};
            std::size_t run = out.size();
            while (run > 0 && vocab.is_text(out[run - 1])) --run;
            uncond.insert(uncond.end(), out.begin() + static_cast<std::ptrdiff_t>(run), out.end());
            logits = cfg_mix(logits, model(uncond), cfg.cfg_alpha);
        }
        const TokenId next = draw(std::move(logits), allowed, cfg, rng);
        emit(next);
        if (next == vocab.eos()) break;
        if (next != vocab.break_id()) continue;

        // IMAGE state.
        std::vector<TokenId> uncond{vocab.query_mask(), vocab.break_id()};
        for (std::size_t j = 0; j < image_len; ++j) {
            const auto cond_logits = model(context);
            const auto uncond_logits = model(uncond);
            const TokenId code = draw(cfg_mix(cond_logits, uncond_logits, cfg.cfg_alpha), image_allowed, cfg, rng);
            emit(code);
            uncond.push_back(code);
        }
        emit(vocab.break_id());
        if (++images >= cfg.max_images) break;
    }
    return annotate(out, vocab, image_len);
}

}  // namespace jam
