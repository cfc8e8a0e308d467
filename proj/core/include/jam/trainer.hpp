#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jam/cm3.hpp"
#include "jam/model.hpp"
#include "jam/retrieval.hpp"
#include "jam/sequence.hpp"

namespace jam {

enum class Phase { alignment, instruct };
enum class LrSchedule { constant, cosine };

const char* to_string(Phase phase);
Phase parse_phase(const std::string& name);
const char* to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(const std::string& name);

struct TrainConfig {
    double lr = 3e-3;
    std::size_t warmup_steps = 20;
    std::size_t total_steps = 200;
    std::size_t batch_tokens = 512;
    std::uint64_t seed = 0;
    Phase phase = Phase::alignment;
    // One weight per training dataset; must sum to 1.
    std::vector<double> mixture_weights{1.0};
    bool retrieval_enabled = false;
    // Validation every eval_interval steps (and at steps 0 and total_steps).
    // When epochs > 0 the run is epoch based instead: total_steps becomes
    // epochs x steps_per_epoch and a checkpoint is taken after every epoch.
    std::size_t eval_interval = 50;
    std::size_t epochs = 0;

    LrSchedule schedule = LrSchedule::constant;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm; 0 disables
    double weight_decay = 0.0;

    Cm3Params cm3;
    // Probability that the text before a sequence's first image is replaced
    // by <query_mask>, which trains the unconditional stream used for
    // guidance.
    double uncond_prob = 0.1;
    std::size_t max_eval_sequences = 64;

    void validate(std::size_t n_datasets) const;
};

// Linear ramp 0 -> lr over warmup_steps, then constant (or cosine decay to
// zero at total_steps).
double lr_at(std::size_t step, const TrainConfig& cfg);

enum class SpanFilter { all, text, image };
const char* to_string(SpanFilter filter);
SpanFilter parse_span_filter(const std::string& name);

struct PplBreakdown {
    double nll_sum = 0.0;
    std::size_t count = 0;
    double ppl() const;
};

// Teacher-forced perplexity of each sequence followed by <eos>. `all`
// scores every target under the full vocabulary. `text` / `image` score
// only targets inside text / image spans, normalised over that modality's
// ids (the position's modality is known from the grammar), so a model
// with uniform logits scores n_text / n_image exactly. Throws DomainError
// when nothing is selected.
PplBreakdown evaluate_nll(const Model& model, const std::vector<MixedSequence>& data, SpanFilter filter,
                          const Vocabulary& vocab);
double evaluate_ppl(const Model& model, const std::vector<MixedSequence>& data, SpanFilter filter,
                    const Vocabulary& vocab);

struct EvalMetrics {
    double ppl_text = 0.0;
    double ppl_image = 0.0;
    double ppl_avg() const { return 0.5 * (ppl_text + ppl_image); }
};

struct CheckpointRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;  // 0 outside epoch-based runs
    double train_loss = 0.0;  // mean over steps since the previous record
    EvalMetrics metrics;
    ParameterSet params;
};

struct MetricsRow {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    EvalMetrics metrics;
};

struct TrainData {
    std::vector<std::vector<MixedSequence>> datasets;
    // Validation set: text PPL over its text spans, image PPL over its
    // image spans.
    std::vector<MixedSequence> validation;
    std::size_t image_len = 16;
    // Required when retrieval_enabled.
    const MemoryBank* bank = nullptr;
    const ToyEncoder* encoder = nullptr;
    RetrievalConfig retrieval;
};

struct TrainResult {
    Model model;  // parameters after the last step
    std::vector<CheckpointRecord> records;
    std::vector<MetricsRow> metrics;
    std::vector<double> losses;  // per-step training loss
};

// One assembled training example.
struct Example {
    std::vector<TokenId> tokens;
    std::size_t prefix_length = 0;  // retrieved conditioning, excluded from the loss
};

// Deterministic batch assembly: draws examples from the weighted mixture
// until batch_tokens is reached, applying caption dropout, retrieval and the
// infilling transform. Untransformed sequences get a trailing <eos>.
class BatchBuilder {
public:
    BatchBuilder(const TrainData& data, const TrainConfig& cfg, const Vocabulary& vocab, std::size_t max_seq_len);
    std::vector<Example> next();
    // Steps needed to cover dataset 0's tokens once.
    std::size_t steps_per_epoch() const;

private:
    Example make_example(const MixedSequence& seq);

    const TrainData& data_;
    const TrainConfig& cfg_;
    const Vocabulary& vocab_;
    std::size_t max_seq_len_;
    Rng rng_;
};

// Inputs/targets for next-token prediction; targets inside the retrieval
// prefix are kIgnoreTarget.
std::pair<std::vector<TokenId>, std::vector<TokenId>> shift_targets(const Example& ex);

// Token-weighted mean next-token loss of a batch with gradients w.r.t. every
// parameter. Throws NumericError on a non-finite loss.
double batch_loss_and_grads(const Model& model, const std::vector<Example>& batch, ParameterSet* grads);

class Adam {
public:
    explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
    // Clips `grads` to the global norm and applies one update at `lr`.
    void step(ParameterSet& params, ParameterSet& grads, double lr);
    std::size_t steps() const { return t_; }

private:
    const TrainConfig& cfg_;
    ParameterSet m_;
    ParameterSet v_;
    std::size_t t_ = 0;
};

double global_norm(const ParameterSet& grads);

using ProgressFn = std::function<void(const MetricsRow&)>;

EvalMetrics evaluate_metrics(const Model& model, const std::vector<MixedSequence>& validation, const Vocabulary& vocab,
                             std::size_t max_sequences);

TrainResult train(const Model& init, const TrainData& data, const TrainConfig& cfg, const Vocabulary& vocab,
                  const ProgressFn& progress = {});

// Index of the record with the lowest average validation PPL (earliest on
// ties). Throws on an empty list.
std::size_t select_alignment_record(const std::vector<CheckpointRecord>& records);

// step,lr,train_loss,val_ppl_text,val_ppl_image,val_ppl_avg
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void save_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

// Round-trip-exact decimal rendering used in every CSV.
std::string format_double(double value);

}  // namespace jam
