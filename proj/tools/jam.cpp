// jam: train parents, fuse, align, instruct-tune, sample, evaluate, ablate.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Failures also print one JSON line {"error":...,"message":...} on stderr.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "jam/ablation.hpp"
#include "jam/checkpoint.hpp"
#include "jam/corpus.hpp"
#include "jam/dataset_io.hpp"
#include "jam/error.hpp"
#include "jam/fusion.hpp"
#include "jam/grad_check.hpp"
#include "jam/retrieval.hpp"
#include "jam/run_config.hpp"
#include "jam/sampler.hpp"
#include "jam/trainer.hpp"

namespace {

using namespace jam;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;

    RunConfig load() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed) cfg.seed = *seed;
        cfg.validate();
        return cfg;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "Run configuration (JSON)");
    cmd->add_option("--seed", common.seed, "Seed; overrides the config's seed");
}

// Fixed sub-streams of the run seed.
enum Stream : std::uint64_t {
    kTextData = 1,
    kCaptionData,
    kInstructData,
    kValText,
    kValCaption,
    kInit,
    kTrain,
    kFusion,
    kSample,
};

SyntheticWorld world_of(const RunConfig& cfg) { return SyntheticWorld(cfg.vocab(), cfg.world); }

std::vector<MixedSequence> corpus(const RunConfig& cfg, CorpusKind kind) {
    const SyntheticWorld world = world_of(cfg);
    switch (kind) {
        case CorpusKind::text_only:
            return synth_corpus(world, kind, cfg.data.n_text, mix_seed(cfg.seed, kTextData));
        case CorpusKind::caption_pairs:
            return synth_corpus(world, kind, cfg.data.n_caption, mix_seed(cfg.seed, kCaptionData));
        case CorpusKind::interleaved_instruct:
            return synth_corpus(world, kind, cfg.data.n_instruct, mix_seed(cfg.seed, kInstructData));
    }
    return {};
}

std::vector<MixedSequence> validation(const RunConfig& cfg) {
    const SyntheticWorld world = world_of(cfg);
    const auto text = synth_corpus(world, CorpusKind::text_only, cfg.data.n_validation, mix_seed(cfg.seed, kValText));
    const auto caption =
        synth_corpus(world, CorpusKind::caption_pairs, cfg.data.n_validation, mix_seed(cfg.seed, kValCaption));
    std::vector<MixedSequence> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        out.push_back(text[i]);
        out.push_back(caption[i]);
    }
    return out;
}

Dataset load_checked(const std::string& path, const Vocabulary& vocab, std::size_t image_len) {
    Dataset d = load_dataset(path);
    if (!(d.header.vocab == vocab) || d.header.image_len != image_len) {
        throw ConfigError("dataset '" + path + "' was written for a different vocabulary or image length");
    }
    return d;
}

Checkpoint load_model(const std::string& path, const RunConfig& cfg) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.model.spec.config.vocab_size != cfg.vocab().size()) {
        throw ConfigError("checkpoint '" + path + "' has vocabulary size " +
                          std::to_string(ckpt.model.spec.config.vocab_size) + ", config expects " +
                          std::to_string(cfg.vocab().size()));
    }
    return ckpt;
}

void print_progress(const MetricsRow& r) {
    std::cerr << "step " << r.step << "  lr " << format_double(r.lr) << "  loss " << r.train_loss << "  ppl text "
              << r.metrics.ppl_text << "  image " << r.metrics.ppl_image << '\n';
}

struct MemoryBankFiles {
    std::string data;
    std::string sidecar;
};

struct LoadedBank {
    Dataset dataset;
    MemoryBank bank;
    std::optional<ToyEncoder> encoder;
};

LoadedBank load_bank_files(const MemoryBankFiles& files, const RunConfig& cfg) {
    if (files.data.empty() || files.sidecar.empty()) throw UsageError("retrieval needs --bank-data and --bank");
    LoadedBank lb;
    lb.dataset = load_checked(files.data, cfg.vocab(), cfg.world.image_len);
    lb.bank = load_bank(lb.dataset.sequences, files.sidecar, cfg.vocab());
    lb.encoder.emplace(cfg.vocab(), cfg.retrieval.embedding_dim, cfg.retrieval.encoder_seed);
    return lb;
}

std::map<std::string, std::string> run_metadata(const RunConfig& cfg, const std::string& command) {
    return {{"command", command}, {"seed", std::to_string(cfg.seed)}};
}

TrainResult run_training(const Model& start, std::vector<std::vector<MixedSequence>> datasets, TrainConfig tc,
                         const RunConfig& cfg, const std::optional<LoadedBank>& bank) {
    TrainData data;
    data.datasets = std::move(datasets);
    data.validation = validation(cfg);
    data.image_len = cfg.world.image_len;
    if (bank) {
        data.bank = &bank->bank;
        data.encoder = &*bank->encoder;
        data.retrieval = cfg.retrieval;
        tc.retrieval_enabled = true;
    }
    tc.seed = mix_seed(cfg.seed, kTrain);
    return train(start, data, tc, cfg.vocab(), print_progress);
}

Checkpoint selected_checkpoint(const TrainResult& result, const Checkpoint& base, const RunConfig& cfg,
                               const std::string& command) {
    const std::size_t best = select_alignment_record(result.records);
    Checkpoint out = base;
    out.model.params = result.records[best].params;
    out.metadata = run_metadata(cfg, command);
    out.metadata["selected_step"] = std::to_string(result.records[best].step);
    out.metadata["val_ppl_avg"] = format_double(result.records[best].metrics.ppl_avg());
    return out;
}

void report_saved(const std::string& path, const Checkpoint& ckpt) {
    std::cout << "wrote " << path << "  params " << enumerate_param_count(ckpt.model.params) << "  payload "
              << hex64(payload_hash(ckpt.model.params)) << '\n';
}

MixedSequence parse_prompt(const std::string& text, const Vocabulary& vocab, std::size_t image_len) {
    std::vector<TokenId> tokens;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        auto id = vocab.parse(word);
        if (!id) throw UsageError("unknown token '" + word + "' in prompt");
        tokens.push_back(*id);
    }
    return annotate(tokens, vocab, image_len);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"jam: joint multimodal model fusion toolkit"};
    app.require_subcommand(1);
    Common common;

    // config
    auto* c_config = app.add_subcommand("config", "Print the effective run configuration");
    add_common(c_config, common);
    std::string config_out;
    c_config->add_option("--out", config_out, "Write to a file instead of stdout");

    // make-data
    auto* c_data = app.add_subcommand("make-data", "Write a synthetic corpus in the dataset format");
    add_common(c_data, common);
    std::string data_kind, data_out;
    std::optional<std::size_t> data_count;
    c_data->add_option("--kind", data_kind, "text_only | caption_pairs | interleaved_instruct")->required();
    c_data->add_option("--count", data_count, "Number of sequences (default: the config's size for the kind)");
    c_data->add_option("--out", data_out, "Output dataset file")->required();

    // build-bank
    auto* c_bank = app.add_subcommand("build-bank", "Embed a dataset into a retrieval memory bank sidecar");
    add_common(c_bank, common);
    std::string bank_data, bank_out;
    c_bank->add_option("--data", bank_data, "Dataset file")->required();
    c_bank->add_option("--out", bank_out, "Embedding sidecar to write")->required();

    // init
    auto* c_init = app.add_subcommand("init", "Write a freshly initialised decoder");
    add_common(c_init, common);
    std::string init_out;
    bool init_zero = false;
    c_init->add_option("--out", init_out, "Output checkpoint")->required();
    c_init->add_flag("--zero", init_zero, "All-zero weights (uniform next-token distribution)");

    // train-parent
    auto* c_parent = app.add_subcommand("train-parent", "Train a toy parent model");
    add_common(c_parent, common);
    std::string parent_corpus, parent_data, parent_out, parent_metrics;
    std::optional<std::size_t> parent_steps;
    c_parent->add_option("--corpus", parent_corpus, "Synthesize the training corpus: text_only | caption_pairs");
    c_parent->add_option("--data", parent_data, "Train on a dataset file instead");
    c_parent->add_option("--out", parent_out, "Output checkpoint")->required();
    c_parent->add_option("--metrics", parent_metrics, "Metrics CSV");
    c_parent->add_option("--steps", parent_steps, "Override train.parent.total_steps");

    // fuse
    auto* c_fuse = app.add_subcommand("fuse", "Combine two parents into one model");
    add_common(c_fuse, common);
    std::string fuse_a, fuse_b, fuse_out, fuse_kind;
    std::optional<std::size_t> fuse_every;
    bool fuse_cross_ffn = false;
    c_fuse->add_option("llm", fuse_a, "Language parent checkpoint")->required();
    c_fuse->add_option("img", fuse_b, "Image-text parent checkpoint")->required();
    c_fuse->add_option("--kind", fuse_kind, "uniform | width | width_copy | width_average | cross");
    c_fuse->add_option("--every", fuse_every, "Cross-attention insertion frequency");
    c_fuse->add_flag("--cross-ffn", fuse_cross_ffn, "Give every cross block a feed-forward sublayer");
    c_fuse->add_option("--out", fuse_out, "Output checkpoint")->required();

    // align / instruct share retrieval options
    MemoryBankFiles bank_files;
    bool use_retrieval = false;
    auto add_retrieval = [&](CLI::App* cmd) {
        cmd->add_flag("--retrieval", use_retrieval, "Retrieval-augment with a memory bank");
        cmd->add_option("--bank-data", bank_files.data, "Memory bank dataset file");
        cmd->add_option("--bank", bank_files.sidecar, "Memory bank embedding sidecar");
    };

    auto* c_align = app.add_subcommand("align", "Continued pretraining of a fused model on text + caption data");
    add_common(c_align, common);
    std::string align_model, align_out, align_metrics;
    std::optional<std::size_t> align_steps;
    c_align->add_option("--model", align_model, "Fused checkpoint")->required();
    c_align->add_option("--out", align_out, "Selected (lowest validation PPL) checkpoint")->required();
    c_align->add_option("--metrics", align_metrics, "Metrics CSV");
    c_align->add_option("--steps", align_steps, "Override train.align.total_steps");
    add_retrieval(c_align);

    auto* c_instruct = app.add_subcommand("instruct", "Instruction-tune on interleaved data");
    add_common(c_instruct, common);
    std::string instruct_model, instruct_out, instruct_metrics, instruct_epoch_dir;
    bool instruct_mix = false;
    std::optional<std::size_t> instruct_epochs;
    c_instruct->add_option("--model", instruct_model, "Aligned checkpoint")->required();
    c_instruct->add_option("--out", instruct_out, "Checkpoint after the last epoch")->required();
    c_instruct->add_option("--metrics", instruct_metrics, "Metrics CSV");
    c_instruct->add_option("--epoch-dir", instruct_epoch_dir, "Directory receiving every epoch's checkpoint");
    c_instruct->add_flag("--mix-captions", instruct_mix, "Mix caption_pairs data into the instruction data");
    c_instruct->add_option("--epochs", instruct_epochs, "Override train.instruct.epochs");
    add_retrieval(c_instruct);

    // sample
    auto* c_sample = app.add_subcommand("sample", "Generate interleaved text and images");
    add_common(c_sample, common);
    std::string sample_model, sample_prompt, sample_out;
    std::size_t sample_count = 1;
    std::optional<double> sample_alpha, sample_top_p, sample_temperature;
    c_sample->add_option("--model", sample_model, "Checkpoint")->required();
    c_sample->add_option("--prompt", sample_prompt, "Prompt tokens, e.g. \"t0 t5 t1\"");
    c_sample->add_option("--count", sample_count, "Number of samples");
    c_sample->add_option("--out", sample_out, "Write samples as a dataset file");
    c_sample->add_option("--cfg-alpha", sample_alpha, "Guidance scale");
    c_sample->add_option("--top-p", sample_top_p, "Nucleus threshold");
    c_sample->add_option("--temperature", sample_temperature, "Softmax temperature");
    add_retrieval(c_sample);

    // eval
    auto* c_eval = app.add_subcommand("eval", "Teacher-forced perplexity");
    add_common(c_eval, common);
    std::string eval_model, eval_data, eval_corpus, eval_filter = "all";
    c_eval->add_option("--model", eval_model, "Checkpoint")->required();
    c_eval->add_option("--data", eval_data, "Dataset file");
    c_eval->add_option("--corpus", eval_corpus, "Synthesize validation data of this kind instead");
    c_eval->add_option("--filter", eval_filter, "all | text | image");

    // ablate
    auto* c_ablate = app.add_subcommand("ablate", "Run the fusion / cross / instruct ablation suite");
    add_common(c_ablate, common);
    std::string ablate_out, ablate_report;
    c_ablate->add_option("--out", ablate_out, "Report CSV")->required();
    c_ablate->add_option("--report", ablate_report, "Also write the formatted tables here");

    // gradcheck
    auto* c_grad = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
    add_common(c_grad, common);
    std::string grad_arch = "decoder";
    ToyGradCheckSpec grad_spec;
    ad::GradCheckOptions grad_options;
    std::string grad_stencil = "four_point";
    c_grad->add_option("--arch", grad_arch, "decoder | cross");
    c_grad->add_option("--layers", grad_spec.n_layers, "Layers");
    c_grad->add_option("--d-model", grad_spec.d_model, "Hidden width");
    c_grad->add_option("--every", grad_spec.insertion_every, "Cross insertion frequency");
    c_grad->add_flag("--cross-ffn", grad_spec.cross_ffn, "Cross blocks with feed-forward sublayers");
    c_grad->add_option("--floor", grad_options.floor, "Relative-error denominator floor");
    c_grad->add_option("--step", grad_options.step, "Finite-difference step");
    c_grad->add_option("--stencil", grad_stencil, "four_point | ridders | two_point");

    // inspect
    auto* c_inspect = app.add_subcommand("inspect", "Describe a checkpoint");
    std::string inspect_path;
    c_inspect->add_option("checkpoint", inspect_path, "Checkpoint")->required();

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            throw UsageError(e.what());
        }

        if (c_config->parsed()) {
            const std::string text = dump_run_config(common.load());
            if (config_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream(config_out) << text;
            }
        } else if (c_data->parsed()) {
            const RunConfig cfg = common.load();
            const CorpusKind kind = parse_corpus_kind(data_kind);
            auto seqs = corpus(cfg, kind);
            if (data_count) seqs = synth_corpus(world_of(cfg), kind, *data_count, mix_seed(cfg.seed, kTextData + static_cast<std::uint64_t>(kind)));
            Dataset d{{to_string(kind), cfg.seed, cfg.vocab(), cfg.world.image_len, cfg.world}, std::move(seqs)};
            save_dataset(data_out, d);
            std::cout << "wrote " << d.sequences.size() << " sequences to " << data_out << '\n';
        } else if (c_bank->parsed()) {
            const RunConfig cfg = common.load();
            const Dataset d = load_checked(bank_data, cfg.vocab(), cfg.world.image_len);
            const ToyEncoder encoder(cfg.vocab(), cfg.retrieval.embedding_dim, cfg.retrieval.encoder_seed);
            const MemoryBank bank = MemoryBank::build(d.sequences, encoder);
            save_bank_embeddings(bank_out, bank, encoder);
            std::cout << "wrote " << bank.size() << " embeddings to " << bank_out << '\n';
        } else if (c_init->parsed()) {
            const RunConfig cfg = common.load();
            Checkpoint ckpt;
            ckpt.model.spec = ModelSpec{Architecture::decoder, cfg.model_config(), {}};
            ckpt.model.params = init_decoder(cfg.model_config(), mix_seed(cfg.seed, kInit));
            if (init_zero) {
                for (auto& [_, t] : ckpt.model.params) t = Tensor(t.shape());
            }
            ckpt.metadata = run_metadata(cfg, "init");
            save_checkpoint(init_out, ckpt);
            report_saved(init_out, ckpt);
        } else if (c_parent->parsed()) {
            RunConfig cfg = common.load();
            if (parent_corpus.empty() == parent_data.empty()) throw UsageError("give exactly one of --corpus or --data");
            std::vector<MixedSequence> train_seqs =
                parent_data.empty() ? corpus(cfg, parse_corpus_kind(parent_corpus))
                                    : load_checked(parent_data, cfg.vocab(), cfg.world.image_len).sequences;
            TrainConfig tc = cfg.parent_train;
            tc.mixture_weights = {1.0};
            if (parent_steps) tc.total_steps = *parent_steps;
            Checkpoint base;
            base.model.spec = ModelSpec{Architecture::decoder, cfg.model_config(), {}};
            base.model.params = init_decoder(cfg.model_config(), mix_seed(cfg.seed, kInit));
            const TrainResult result = run_training(base.model, {train_seqs}, tc, cfg, std::nullopt);
            const Checkpoint out = selected_checkpoint(result, base, cfg, "train-parent");
            save_checkpoint(parent_out, out);
            if (!parent_metrics.empty()) save_metrics_csv(parent_metrics, result.metrics);
            report_saved(parent_out, out);
        } else if (c_fuse->parsed()) {
            const RunConfig cfg = common.load();
            FusionSpec fs = cfg.fusion;
            if (!fuse_kind.empty()) fs.kind = parse_fusion_kind(fuse_kind);
            if (fuse_every) fs.insertion_every = *fuse_every;
            if (fuse_cross_ffn) fs.cross_ffn = true;
            fs.seed = mix_seed(cfg.seed, kFusion);
            fs.validate();
            const Checkpoint a = load_model(fuse_a, cfg);
            const Checkpoint b = load_model(fuse_b, cfg);
            Checkpoint out;
            out.model = fuse(a.model, b.model, fs, cfg.vocab().embedding_sources());
            out.fusion = fs;
            out.metadata = run_metadata(cfg, "fuse");
            save_checkpoint(fuse_out, out);
            report_saved(fuse_out, out);
        } else if (c_align->parsed()) {
            const RunConfig cfg = common.load();
            const Checkpoint base = load_model(align_model, cfg);
            std::optional<LoadedBank> bank;
            if (use_retrieval) bank = load_bank_files(bank_files, cfg);
            TrainConfig tc = cfg.align_train;
            if (tc.mixture_weights.size() != 2) throw ConfigError("train.align.mixture_weights needs 2 entries (text_only, caption_pairs)");
            if (align_steps) tc.total_steps = *align_steps;
            const TrainResult result = run_training(
                base.model, {corpus(cfg, CorpusKind::text_only), corpus(cfg, CorpusKind::caption_pairs)}, tc, cfg, bank);
            const Checkpoint out = selected_checkpoint(result, base, cfg, "align");
            save_checkpoint(align_out, out);
            if (!align_metrics.empty()) save_metrics_csv(align_metrics, result.metrics);
            report_saved(align_out, out);
        } else if (c_instruct->parsed()) {
            const RunConfig cfg = common.load();
            const Checkpoint base = load_model(instruct_model, cfg);
            std::optional<LoadedBank> bank;
            if (use_retrieval) bank = load_bank_files(bank_files, cfg);
            TrainConfig tc = cfg.instruct_train;
            if (instruct_epochs) tc.epochs = *instruct_epochs;
            if (tc.epochs == 0) throw ConfigError("train.instruct.epochs must be >= 1");
            std::vector<std::vector<MixedSequence>> datasets{corpus(cfg, CorpusKind::interleaved_instruct)};
            if (instruct_mix) {
                datasets.push_back(corpus(cfg, CorpusKind::caption_pairs));
                tc.mixture_weights = {1.0 - cfg.instruct_caption_mix, cfg.instruct_caption_mix};
            } else {
                tc.mixture_weights = {1.0};
            }
            const TrainResult result = run_training(base.model, std::move(datasets), tc, cfg, bank);
            for (const auto& rec : result.records) {
                if (instruct_epoch_dir.empty() || rec.epoch == 0) continue;
                Checkpoint epoch = base;
                epoch.model.params = rec.params;
                epoch.metadata = run_metadata(cfg, "instruct");
                epoch.metadata["epoch"] = std::to_string(rec.epoch);
                char name[32];
                std::snprintf(name, sizeof(name), "epoch_%02zu.ckpt", rec.epoch);
                std::filesystem::create_directories(instruct_epoch_dir);
                save_checkpoint(std::filesystem::path(instruct_epoch_dir) / name, epoch);
            }
            Checkpoint out = base;
            out.model = result.model;
            out.metadata = run_metadata(cfg, "instruct");
            out.metadata["epochs"] = std::to_string(result.records.back().epoch);
            save_checkpoint(instruct_out, out);
            if (!instruct_metrics.empty()) save_metrics_csv(instruct_metrics, result.metrics);
            report_saved(instruct_out, out);
        } else if (c_sample->parsed()) {
            const RunConfig cfg = common.load();
            const Vocabulary vocab = cfg.vocab();
            const Checkpoint ckpt = load_model(sample_model, cfg);
            SamplerConfig sc = cfg.sampler;
            if (sample_alpha) sc.cfg_alpha = *sample_alpha;
            if (sample_top_p) sc.top_p = *sample_top_p;
            if (sample_temperature) sc.temperature = *sample_temperature;
            std::optional<LoadedBank> bank;
            RetrievalContext rctx;
            if (use_retrieval) {
                bank = load_bank_files(bank_files, cfg);
                rctx = RetrievalContext{&bank->bank, &*bank->encoder, cfg.retrieval};
            }
            const MixedSequence prompt = parse_prompt(sample_prompt, vocab, cfg.world.image_len);
            const LogitsFn logits = model_logits(ckpt.model);
            Dataset out{{"samples", cfg.seed, vocab, cfg.world.image_len, std::nullopt}, {}};
            for (std::size_t i = 0; i < sample_count; ++i) {
                sc.seed = mix_seed(mix_seed(cfg.seed, kSample), i);
                MixedSequence s = generate_interleaved(logits, prompt, vocab, cfg.world.image_len,
                                                       ckpt.model.spec.config.max_seq_len, sc,
                                                       use_retrieval ? &rctx : nullptr);
                std::cout << "# sample " << i << '\n' << render_sequence(s, vocab, cfg.world.image_len);
                out.sequences.push_back(std::move(s));
            }
            if (!sample_out.empty()) save_dataset(sample_out, out);
        } else if (c_eval->parsed()) {
            const RunConfig cfg = common.load();
            const Checkpoint ckpt = load_model(eval_model, cfg);
            std::vector<MixedSequence> data;
            if (!eval_data.empty()) {
                data = load_checked(eval_data, cfg.vocab(), cfg.world.image_len).sequences;
            } else if (!eval_corpus.empty()) {
                const CorpusKind kind = parse_corpus_kind(eval_corpus);
                data = synth_corpus(world_of(cfg), kind, cfg.data.n_validation,
                                    mix_seed(cfg.seed, kind == CorpusKind::text_only ? kValText : kValCaption));
            } else {
                data = validation(cfg);
            }
            const SpanFilter filter = parse_span_filter(eval_filter);
            const PplBreakdown b = evaluate_nll(ckpt.model, data, filter, cfg.vocab());
            std::cout << "filter " << to_string(filter) << "  positions " << b.count << "  ppl "
                      << format_double(b.ppl()) << '\n';
        } else if (c_ablate->parsed()) {
            const RunConfig cfg = common.load();
            const auto start = std::chrono::steady_clock::now();
            const AblationReport report = run_ablation_suite(cfg.ablation(), cfg.vocab(), [&](const std::string& m) {
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                std::cerr << "[" << static_cast<long>(s) << "s] " << m << '\n';
            });
            std::ofstream csv(ablate_out);
            write_ablation_csv(csv, report);
            const std::string text = format_ablation_report(report);
            std::cout << text;
            if (!ablate_report.empty()) std::ofstream(ablate_report) << text;
        } else if (c_grad->parsed()) {
            const RunConfig cfg = common.load();
            if (grad_arch == "decoder") {
                grad_spec.arch = Architecture::decoder;
            } else if (grad_arch == "cross") {
                grad_spec.arch = Architecture::jam_cross;
            } else {
                throw UsageError("--arch must be decoder or cross");
            }
            grad_spec.seed = cfg.seed;
            if (grad_stencil == "ridders") {
                grad_options.stencil = ad::Stencil::ridders;
            } else if (grad_stencil == "four_point") {
                grad_options.stencil = ad::Stencil::four_point;
            } else if (grad_stencil == "two_point") {
                grad_options.stencil = ad::Stencil::two_point;
            } else {
                throw UsageError("--stencil must be ridders, four_point or two_point");
            }
            const auto r = run_toy_grad_check(grad_spec, grad_options);
            std::cout << "arch " << grad_arch << "  checked " << r.checked << "  max_rel_error "
                      << format_double(r.max_relative_error) << "  max_abs_error "
                      << format_double(r.max_absolute_error) << "  worst analytic "
                      << format_double(r.worst_analytic) << " numeric " << format_double(r.worst_numeric) << '\n';
        } else if (c_inspect->parsed()) {
            const Checkpoint ckpt = load_checkpoint(inspect_path);
            const ModelSpec& s = ckpt.model.spec;
            std::cout << "arch " << to_string(s.arch) << "  layers " << s.config.n_layers << "  d_model "
                      << s.config.d_model << "  heads " << s.config.n_heads << "  d_ff " << s.config.d_ff
                      << "  vocab " << s.config.vocab_size << '\n';
            if (s.arch == Architecture::jam_cross) {
                std::cout << "cross every " << s.cross.insertion_every << "  blocks "
                          << s.cross.insertion_count(s.config.n_layers) << "  ffn " << s.cross.cross_ffn << '\n';
            }
            if (ckpt.fusion) std::cout << "fusion " << to_string(ckpt.fusion->kind) << '\n';
            std::cout << "params " << enumerate_param_count(ckpt.model.params) << "  closed form " << param_count(s)
                      << "  payload " << hex64(payload_hash(ckpt.model.params)) << '\n';
            for (const auto& [k, v] : ckpt.metadata) std::cout << k << " = " << v << '\n';
        }
        return 0;
    } catch (const UsageError& e) {
        std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << nlohmann::json{{"error", "config"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "runtime"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
}
