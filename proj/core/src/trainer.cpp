#include "jam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>

#include "jam/error.hpp"

namespace jam {

const char* to_string(Phase phase) { return phase == Phase::alignment ? "alignment" : "instruct"; }

Phase parse_phase(const std::string& name) {
    if (name == "alignment") return Phase::alignment;
    if (name == "instruct") return Phase::instruct;
    throw ConfigError("trainer: unknown phase '" + name + "'");
}

const char* to_string(LrSchedule schedule) { return schedule == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(const std::string& name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    throw ConfigError("trainer: unknown lr schedule '" + name + "'");
}

const char* to_string(SpanFilter filter) {
    switch (filter) {
        case SpanFilter::all: return "all";
        case SpanFilter::text: return "text";
        case SpanFilter::image: return "image";
    }
    return "?";
}

SpanFilter parse_span_filter(const std::string& name) {
    if (name == "all") return SpanFilter::all;
    if (name == "text") return SpanFilter::text;
    if (name == "image") return SpanFilter::image;
    throw ConfigError("unknown span filter '" + name + "' (expected all, text or image)");
}

void TrainConfig::validate(std::size_t n_datasets) const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("trainer: lr must be finite and >= 0");
    if (epochs == 0 && warmup_steps > total_steps) throw ConfigError("trainer: warmup_steps exceeds total_steps");
    if (epochs == 0 && total_steps == 0) throw ConfigError("trainer: total_steps must be >= 1");
    if (batch_tokens == 0) throw ConfigError("trainer: batch_tokens must be >= 1");
    if (epochs == 0 && eval_interval == 0) throw ConfigError("trainer: eval_interval must be >= 1");
    if (mixture_weights.size() != n_datasets) {
        throw ConfigError("trainer: " + std::to_string(mixture_weights.size()) + " mixture weights for " +
                          std::to_string(n_datasets) + " datasets");
    }
    double total = 0.0;
    for (double w : mixture_weights) {
        if (!(w >= 0.0)) throw ConfigError("trainer: mixture weights must be >= 0");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("trainer: mixture weights must sum to 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("trainer: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("trainer: adam_eps must be > 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("trainer: grad_clip must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("trainer: weight_decay must be >= 0");
    if (!(uncond_prob >= 0.0 && uncond_prob <= 1.0)) throw ConfigError("trainer: uncond_prob must lie in [0, 1]");
    if (max_eval_sequences == 0) throw ConfigError("trainer: max_eval_sequences must be >= 1");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps) {
        throw DomainError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                          std::to_string(cfg.total_steps));
    }
    if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (cfg.schedule == LrSchedule::constant || cfg.total_steps == cfg.warmup_steps) return cfg.lr;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double PplBreakdown::ppl() const {
    if (count == 0) throw DomainError("perplexity: no positions selected");
    return std::exp(nll_sum / static_cast<double>(count));
}

namespace {

double log_sum_exp_range(std::span<const double> row, std::size_t begin, std::size_t end) {
    double m = row[begin];
    for (std::size_t i = begin; i < end; ++i) m = std::max(m, row[i]);
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += std::exp(row[i] - m);
    return m + std::log(s);
}

}  // namespace

PplBreakdown evaluate_nll(const Model& model, const std::vector<MixedSequence>& data, SpanFilter filter,
                          const Vocabulary& vocab) {
    if (model.spec.config.vocab_size != vocab.size()) {
        throw StructureError("evaluate: model vocabulary " + std::to_string(model.spec.config.vocab_size) +
                             " does not match " + std::to_string(vocab.size()));
    }
    PplBreakdown acc;
    const std::size_t max_len = model.spec.config.max_seq_len;
    for (const MixedSequence& seq : data) {
        std::vector<TokenId> tokens = seq.tokens;
        if (!ends_with_eos(seq, vocab)) tokens.push_back(vocab.eos());
        // The model sees at most max_len inputs, predicting tokens[1..max_len].
        const std::size_t n_inputs = std::min(tokens.size() - 1, max_len);
        if (n_inputs == 0) continue;
        std::vector<int> kind(tokens.size(), -1);  // -1 none, 0 text, 1 image
        for (const Span& s : seq.spans) {
            for (std::size_t j = s.start; j < s.end; ++j) kind[j] = s.kind == SpanKind::text ? 0 : 1;
        }
        const Tensor logits = compute_logits(model, std::span<const TokenId>(tokens.data(), n_inputs));
        for (std::size_t t = 0; t < n_inputs; ++t) {
            const std::size_t j = t + 1;
            const auto row = logits.row(t);
            const auto target = static_cast<std::size_t>(tokens[j]);
            double lse = 0.0;
            if (filter == SpanFilter::all) {
                lse = log_sum_exp_range(row, 0, row.size());
            } else if (filter == SpanFilter::text && kind[j] == 0) {
                lse = log_sum_exp_range(row, 0, vocab.n_text());
            } else if (filter == SpanFilter::image && kind[j] == 1) {
                lse = log_sum_exp_range(row, static_cast<std::size_t>(vocab.image_begin()),
                                        static_cast<std::size_t>(vocab.image_end()));
            } else {
                continue;
            }
            acc.nll_sum += lse - row[target];
            ++acc.count;
        }
    }
    if (acc.count == 0) {
        throw DomainError(std::string("evaluate: no ") + to_string(filter) + " positions in the evaluation data");
    }
    return acc;
}

double evaluate_ppl(const Model& model, const std::vector<MixedSequence>& data, SpanFilter filter,
                    const Vocabulary& vocab) {
    return evaluate_nll(model, data, filter, vocab).ppl();
}

EvalMetrics evaluate_metrics(const Model& model, const std::vector<MixedSequence>& validation, const Vocabulary& vocab,
                             std::size_t max_sequences) {
    const std::size_t n = std::min(max_sequences, validation.size());
    const std::vector<MixedSequence> subset(validation.begin(), validation.begin() + static_cast<std::ptrdiff_t>(n));
    return {evaluate_ppl(model, subset, SpanFilter::text, vocab), evaluate_ppl(model, subset, SpanFilter::image, vocab)};
}

BatchBuilder::BatchBuilder(const TrainData& data, const TrainConfig& cfg, const Vocabulary& vocab,
                           std::size_t max_seq_len)
    : data_(data), cfg_(cfg), vocab_(vocab), max_seq_len_(max_seq_len), rng_(mix_seed(cfg.seed, 0xba7c4)) {
    if (data.datasets.empty()) throw ConfigError("trainer: no training datasets");
    for (std::size_t i = 0; i < data.datasets.size(); ++i) {
        if (data.datasets[i].empty() && cfg.mixture_weights[i] > 0.0) {
            throw ConfigError("trainer: training dataset " + std::to_string(i) + " is empty");
        }
    }
    if (cfg.retrieval_enabled && (!data.bank || !data.encoder)) {
        throw ConfigError("trainer: retrieval enabled without a memory bank");
    }
}

std::size_t BatchBuilder::steps_per_epoch() const {
    std::size_t tokens = 0;
    for (const auto& seq : data_.datasets.front()) tokens += seq.tokens.size() + 1;
    return std::max<std::size_t>(1, (tokens + cfg_.batch_tokens - 1) / cfg_.batch_tokens);
}

Example BatchBuilder::make_example(const MixedSequence& seq) {
    std::vector<TokenId> tokens = seq.tokens;
    if (!tokens.empty() && tokens.back() == vocab_.eos()) tokens.pop_back();

    // Caption dropout: the conditioning text before the first image becomes <query_mask>.
    const auto first_break = std::find(tokens.begin(), tokens.end(), vocab_.break_id());
    if (first_break != tokens.end() && first_break != tokens.begin() && rng_.bernoulli(cfg_.uncond_prob)) {
        tokens.erase(tokens.begin(), first_break);
        tokens.insert(tokens.begin(), vocab_.query_mask());
    }

    Cm3Result cm3 = cm3_transform_detailed(tokens, vocab_, cfg_.cm3, rng_);
    std::vector<TokenId> body = std::move(cm3.tokens);
    if (!cm3.transformed) body.push_back(vocab_.eos());

    Example ex;
    if (cfg_.retrieval_enabled && !data_.bank->empty()) {
        const auto dropped = query_dropout(seq.tokens, data_.retrieval.query_dropout, vocab_, rng_);
        const bool has_content =
            std::any_of(dropped.begin(), dropped.end(), [&](TokenId t) { return !vocab_.is_special(t); });
        if (has_content) {
            const auto query = data_.encoder->embed_tokens(dropped);
            const auto docs = retrieve(*data_.bank, query, data_.retrieval);
            const std::size_t room = body.size() < max_seq_len_ ? max_seq_len_ - body.size() + seq.tokens.size() : 0;
            const auto aug = prepend_retrieved(seq, docs, *data_.bank, vocab_, data_.image_len,
                                               std::max(room, seq.tokens.size()));
            ex.tokens.assign(aug.sequence.tokens.begin(),
                             aug.sequence.tokens.begin() + static_cast<std::ptrdiff_t>(aug.prefix_length));
            ex.prefix_length = aug.prefix_length;
        }
    }
    ex.tokens.insert(ex.tokens.end(), body.begin(), body.end());
    // One extra token: the model reads max_seq_len inputs.
    if (ex.tokens.size() > max_seq_len_ + 1) ex.tokens.resize(max_seq_len_ + 1);
    return ex;
}

std::vector<Example> BatchBuilder::next() {
    std::vector<Example> batch;
    std::size_t tokens = 0;
    while (tokens < cfg_.batch_tokens) {
        const double u = rng_.uniform();
        std::size_t d = 0;
        double cumulative = 0.0;
        for (; d + 1 < cfg_.mixture_weights.size(); ++d) {
            cumulative += cfg_.mixture_weights[d];
            if (u < cumulative) break;
        }
        while (data_.datasets[d].empty()) d = (d + 1) % data_.datasets.size();
        const auto& pool = data_.datasets[d];
        Example ex = make_example(pool[rng_.uniform_int(pool.size())]);
        if (ex.tokens.size() < 2) continue;
        tokens += ex.tokens.size() - 1;
        batch.push_back(std::move(ex));
    }
    return batch;
}

std::pair<std::vector<TokenId>, std::vector<TokenId>> shift_targets(const Example& ex) {
    if (ex.tokens.size() < 2) throw DomainError("trainer: example shorter than two tokens");
    std::vector<TokenId> inputs(ex.tokens.begin(), ex.tokens.end() - 1);
    std::vector<TokenId> targets(ex.tokens.begin() + 1, ex.tokens.end());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (t + 1 < ex.prefix_length) targets[t] = ad::kIgnoreTarget;
    }
    return {std::move(inputs), std::move(targets)};
}

double batch_loss_and_grads(const Model& model, const std::vector<Example>& batch, ParameterSet* grads) {
    ad::Graph graph(grads != nullptr);
    const BoundParams bound = bind(graph, model.params, grads != nullptr);
    std::vector<std::pair<ad::Var, std::size_t>> parts;
    std::size_t total = 0;
    for (const Example& ex : batch) {
        auto [inputs, targets] = shift_targets(ex);
        const auto n = static_cast<std::size_t>(
            std::count_if(targets.begin(), targets.end(), [](TokenId t) { return t != ad::kIgnoreTarget; }));
        if (n == 0) continue;
        ad::Var logits = forward(model.spec, bound, inputs);
        parts.emplace_back(ad::cross_entropy(logits, targets), n);
        total += n;
    }
    if (parts.empty()) throw DomainError("trainer: batch has no loss positions");
    ad::Var loss = ad::scale(parts[0].first, static_cast<double>(parts[0].second) / static_cast<double>(total));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        loss = ad::add(loss, ad::scale(parts[i].first, static_cast<double>(parts[i].second) / static_cast<double>(total)));
    }
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericError("trainer: non-finite loss " + std::to_string(value));
    if (grads) {
        graph.backward(loss);
        *grads = ParameterSet{};
        for (const auto& [name, var] : bound) grads->insert(name, graph.grad(var));
    }
    return value;
}

double global_norm(const ParameterSet& grads) {
    double sq = 0.0;
    for (const auto& [_, g] : grads) {
        for (double x : g.data()) sq += x * x;
    }
    return std::sqrt(sq);
}

void Adam::step(ParameterSet& params, ParameterSet& grads, double lr) {
    params.require_same_structure(grads, "adam");
    if (m_.empty()) {
        for (const auto& [name, p] : params) {
            m_.insert(name, Tensor(p.shape()));
            v_.insert(name, Tensor(p.shape()));
        }
    }
    if (cfg_.grad_clip > 0.0) {
        const double norm = global_norm(grads);
        if (!std::isfinite(norm)) throw NumericError("adam: non-finite gradient norm");
        if (norm > cfg_.grad_clip) {
            const double s = cfg_.grad_clip / norm;
            for (auto& [_, g] : grads) {
                for (double& x : g.data()) x *= s;
            }
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        auto pd = p.data();
        const auto gd = grads.at(name).data();
        auto md = m_.at(name).data();
        auto vd = v_.at(name).data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            md[i] = cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * gd[i];
            vd[i] = cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
            const double update = (md[i] / bc1) / (std::sqrt(vd[i] / bc2) + cfg_.adam_eps);
            pd[i] -= lr * (update + cfg_.weight_decay * pd[i]);
        }
    }
}

TrainResult train(const Model& init, const TrainData& data, const TrainConfig& cfg_in, const Vocabulary& vocab,
                  const ProgressFn& progress) {
    cfg_in.validate(data.datasets.size());
    init.spec.validate();
    validate_structure(init.spec, init.params);
    if (init.spec.config.vocab_size != vocab.size()) throw StructureError("trainer: model/vocabulary size mismatch");
    if (data.validation.empty()) throw ConfigError("trainer: empty validation set");

    TrainConfig cfg = cfg_in;
    BatchBuilder batches(data, cfg, vocab, init.spec.config.max_seq_len);
    const std::size_t per_epoch = cfg.epochs > 0 ? batches.steps_per_epoch() : 0;
    if (cfg.epochs > 0) {
        cfg.total_steps = cfg.epochs * per_epoch;
        cfg.warmup_steps = std::min(cfg.warmup_steps, cfg.total_steps);
    }

    TrainResult result;
    result.model = init;
    Adam adam(cfg);

    auto record = [&](std::size_t step, double train_loss) {
        CheckpointRecord rec;
        rec.step = step;
        rec.epoch = per_epoch > 0 ? step / per_epoch : 0;
        rec.train_loss = train_loss;
        rec.metrics = evaluate_metrics(result.model, data.validation, vocab, cfg.max_eval_sequences);
        rec.params = result.model.params;
        if (!std::isfinite(rec.metrics.ppl_text) || !std::isfinite(rec.metrics.ppl_image)) {
            throw NumericError("trainer: non-finite validation perplexity at step " + std::to_string(step));
        }
        MetricsRow row{step, lr_at(step, cfg), train_loss, rec.metrics};
        result.metrics.push_back(row);
        result.records.push_back(std::move(rec));
        if (progress && step > 0) progress(row);
    };

    record(0, 0.0);
    double since_record = 0.0;
    std::size_t steps_since = 0;
    ParameterSet grads;
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        const auto batch = batches.next();
        double loss = 0.0;
        try {
            loss = batch_loss_and_grads(result.model, batch, &grads);
        } catch (const NumericError& e) {
            throw NumericError("trainer: step " + std::to_string(step) + ": " + e.what());
        }
        if (step == 1) {
            // The first batch's loss is measured before any update.
            result.records.front().train_loss = loss;
            result.metrics.front().train_loss = loss;
            if (progress) progress(result.metrics.front());
        }
        adam.step(result.model.params, grads, lr_at(step, cfg));
        result.losses.push_back(loss);
        since_record += loss;
        ++steps_since;
        const bool due = per_epoch > 0 ? step % per_epoch == 0
                                       : step % cfg.eval_interval == 0 || step == cfg.total_steps;
        if (due) {
            record(step, since_record / static_cast<double>(steps_since));
            since_record = 0.0;
            steps_since = 0;
        }
    }
    return result;
}

std::size_t select_alignment_record(const std::vector<CheckpointRecord>& records) {
    if (records.empty()) throw DomainError("select: no checkpoint records");
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].metrics.ppl_avg() < records[best].metrics.ppl_avg()) best = i;
    }
    return best;
}

std::string format_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
    out << "step,lr,train_loss,val_ppl_text,val_ppl_image,val_ppl_avg\n";
    for (const auto& r : rows) {
        out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
            << format_double(r.metrics.ppl_text) << ',' << format_double(r.metrics.ppl_image) << ','
            << format_double(r.metrics.ppl_avg()) << '\n';
    }
}

void save_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    write_metrics_csv(out, rows);
    if (!out) throw Error("write to '" + path.string() + "' failed");
}

}  // namespace jam
