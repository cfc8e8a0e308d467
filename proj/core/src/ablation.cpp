#include "jam/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "jam/error.hpp"

namespace jam {

void AblationConfig::validate() const {
    if (seeds.empty()) throw ConfigError("ablation: no seeds");
    if (n_text == 0 || n_caption == 0 || n_instruct == 0 || n_validation == 0) {
        throw ConfigError("ablation: corpus sizes must be >= 1");
    }
    if (!(instruct_caption_mix > 0.0 && instruct_caption_mix < 1.0)) {
        throw ConfigError("ablation: instruct_caption_mix must lie in (0, 1)");
    }
    if (std::find(cross_every.begin(), cross_every.end(), instruct_base_every) == cross_every.end()) {
        throw ConfigError("ablation: instruct_base_every must be one of cross_every");
    }
}

std::string cross_variant_name(std::size_t every) {
    return every == 0 ? "cross_none" : "cross_every_" + std::to_string(every);
}

const AblationRow& AblationReport::find(std::uint64_t seed, const std::string& variant) const {
    for (const auto& r : rows) {
        if (r.seed == seed && r.variant == variant) return r;
    }
    throw DomainError("ablation: no row for variant '" + variant + "' seed " + std::to_string(seed));
}

std::size_t AblationReport::n_seeds() const {
    std::set<std::uint64_t> seeds;
    for (const auto& r : rows) seeds.insert(r.seed);
    return seeds.size();
}

std::size_t AblationReport::wins(const std::string& a, const std::string& b, double AblationRow::*metric) const {
    std::set<std::uint64_t> seeds;
    for (const auto& r : rows) seeds.insert(r.seed);
    std::size_t n = 0;
    for (auto s : seeds) n += find(s, a).*metric < find(s, b).*metric;
    return n;
}

namespace {

struct SeedData {
    std::vector<MixedSequence> text, caption, instruct;
    std::vector<MixedSequence> val_text, val_caption, val_mixed;
};

SeedData make_data(const AblationConfig& cfg, const SyntheticWorld& world, std::uint64_t seed) {
    SeedData d;
    d.text = synth_corpus(world, CorpusKind::text_only, cfg.n_text, mix_seed(seed, 1));
    d.caption = synth_corpus(world, CorpusKind::caption_pairs, cfg.n_caption, mix_seed(seed, 2));
    d.instruct = synth_corpus(world, CorpusKind::interleaved_instruct, cfg.n_instruct, mix_seed(seed, 3));
    d.val_text = synth_corpus(world, CorpusKind::text_only, cfg.n_validation, mix_seed(seed, 4));
    d.val_caption = synth_corpus(world, CorpusKind::caption_pairs, cfg.n_validation, mix_seed(seed, 5));
    for (std::size_t i = 0; i < cfg.n_validation; ++i) {
        d.val_mixed.push_back(d.val_text[i]);
        d.val_mixed.push_back(d.val_caption[i]);
    }
    return d;
}

AblationRow measure(const Model& model, const SeedData& d, const Vocabulary& vocab, std::uint64_t seed,
                    std::string group, std::string variant) {
    AblationRow row;
    row.seed = seed;
    row.group = std::move(group);
    row.variant = std::move(variant);
    row.params = enumerate_param_count(model.params);
    row.ppl_joint = evaluate_ppl(model, d.val_mixed, SpanFilter::all, vocab);
    row.ppl_text = evaluate_ppl(model, d.val_mixed, SpanFilter::text, vocab);
    row.ppl_image = evaluate_ppl(model, d.val_mixed, SpanFilter::image, vocab);
    row.ppl_caption = evaluate_ppl(model, d.val_caption, SpanFilter::image, vocab);
    return row;
}

Model trained_selection(const TrainResult& result) {
    Model m = result.model;
    m.params = result.records[select_alignment_record(result.records)].params;
    return m;
}

}  // namespace

AblationReport run_ablation_suite(const AblationConfig& cfg, const Vocabulary& vocab, const AblationProgress& progress) {
    cfg.validate();
    auto say = [&](const std::string& msg) {
        if (progress) progress(msg);
    };
    const SyntheticWorld world(vocab, cfg.world);
    const auto row_source = vocab.embedding_sources();
    TransformerConfig pc = cfg.parent;
    pc.vocab_size = vocab.size();
    pc.validate();

    AblationReport report;
    for (std::uint64_t seed : cfg.seeds) {
        const SeedData d = make_data(cfg, world, seed);
        // Both parents start from one initialisation, as two fine-tunes of a
        // common ancestor would.
        const Model init{ModelSpec{Architecture::decoder, pc, {}}, init_decoder(pc, mix_seed(seed, 10))};

        auto run = [&](const Model& start, std::vector<std::vector<MixedSequence>> datasets, TrainConfig tc,
                       std::uint64_t stream) {
            TrainData data;
            data.datasets = std::move(datasets);
            data.validation = d.val_mixed;
            data.image_len = cfg.world.image_len;
            tc.seed = mix_seed(seed, stream);
            return train(start, data, tc, vocab);
        };

        say("seed " + std::to_string(seed) + ": training parents");
        TrainConfig ptc = cfg.parent_train;
        ptc.mixture_weights = {1.0};
        const Model llm = trained_selection(run(init, {d.text}, ptc, 20));
        const Model img = trained_selection(run(init, {d.caption}, ptc, 21));
        report.rows.push_back(measure(llm, d, vocab, seed, "parent", "parent_llm"));
        report.rows.push_back(measure(img, d, vocab, seed, "parent", "parent_img"));

        TrainConfig atc = cfg.align_train;
        if (atc.mixture_weights.size() != 2) atc.mixture_weights = {0.5, 0.5};
        auto align = [&](const FusionSpec& fs, std::uint64_t stream) {
            const Model fused = fuse(llm, img, fs, row_source);
            return trained_selection(run(fused, {d.text, d.caption}, atc, stream));
        };

        for (FusionKind kind : {FusionKind::uniform, FusionKind::width_copy, FusionKind::width_average}) {
            say("seed " + std::to_string(seed) + ": aligning " + to_string(kind));
            FusionSpec fs;
            fs.kind = kind;
            fs.seed = mix_seed(seed, 30);
            report.rows.push_back(measure(align(fs, 31), d, vocab, seed, "fusion", to_string(kind)));
        }

        Model instruct_base;
        for (std::size_t every : cfg.cross_every) {
            const std::string name = cross_variant_name(every);
            say("seed " + std::to_string(seed) + ": aligning " + name);
            FusionSpec fs;
            fs.kind = FusionKind::cross;
            fs.insertion_every = every == 0 ? pc.n_layers + 1 : every;
            fs.cross_ffn = cfg.cross_ffn;
            fs.cross_init_std = cfg.cross_init_std;
            fs.seed = mix_seed(seed, 30);
            Model aligned = align(fs, 31);
            report.rows.push_back(measure(aligned, d, vocab, seed, "cross", name));
            if (every == cfg.instruct_base_every) instruct_base = std::move(aligned);
        }

        for (bool mix : {false, true}) {
            const std::string name = mix ? "caption_mix" : "no_caption_mix";
            say("seed " + std::to_string(seed) + ": instruct tuning, " + name);
            TrainConfig itc = cfg.instruct_train;
            itc.phase = Phase::instruct;
            std::vector<std::vector<MixedSequence>> datasets{d.instruct};
            if (mix) {
                datasets.push_back(d.caption);
                itc.mixture_weights = {1.0 - cfg.instruct_caption_mix, cfg.instruct_caption_mix};
            } else {
                itc.mixture_weights = {1.0};
            }
            const TrainResult r = run(instruct_base, std::move(datasets), itc, 40);
            report.rows.push_back(measure(r.model, d, vocab, seed, "instruct", name));
        }
    }
    return report;
}

void write_ablation_csv(std::ostream& out, const AblationReport& report) {
    out << "seed,group,variant,params,ppl_joint,ppl_text,ppl_image,ppl_caption\n";
    for (const auto& r : report.rows) {
        out << r.seed << ',' << r.group << ',' << r.variant << ',' << r.params << ',' << format_double(r.ppl_joint)
            << ',' << format_double(r.ppl_text) << ',' << format_double(r.ppl_image) << ','
            << format_double(r.ppl_caption) << '\n';
    }
}

std::string format_ablation_report(const AblationReport& report) {
    std::vector<std::uint64_t> seeds;
    for (const auto& r : report.rows) {
        if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
    }
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    auto table = [&](const std::string& group, const std::string& title, double AblationRow::*metric) {
        std::vector<std::string> variants;
        for (const auto& r : report.rows) {
            if (r.group == group && std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
                variants.push_back(r.variant);
            }
        }
        if (variants.empty()) return;
        out << title << '\n' << std::left << std::setw(18) << "variant" << std::right << std::setw(12) << "params";
        for (auto s : seeds) out << std::setw(12) << ("seed " + std::to_string(s));
        out << '\n';
        for (const auto& v : variants) {
            out << std::left << std::setw(18) << v << std::right << std::setw(12) << report.find(seeds.front(), v).params;
            for (auto s : seeds) out << std::setw(12) << report.find(s, v).*metric;
            out << '\n';
        }
        out << '\n';
    };
    table("parent", "Parents (joint PPL)", &AblationRow::ppl_joint);
    table("fusion", "Fusion methods (joint PPL)", &AblationRow::ppl_joint);
    table("cross", "Cross-attention insertion (joint PPL)", &AblationRow::ppl_joint);
    table("instruct", "Instruction tuning (caption image PPL)", &AblationRow::ppl_caption);

    auto verdict = [&](const std::string& label, const std::string& a, const std::string& b, double AblationRow::*m) {
        try {
            out << label << ": " << report.wins(a, b, m) << '/' << seeds.size() << " seeds\n";
        } catch (const DomainError&) {
        }
    };
    verdict("width_copy < width_average (joint)", "width_copy", "width_average", &AblationRow::ppl_joint);
    verdict("cross_every_2 < uniform (joint)", "cross_every_2", "uniform", &AblationRow::ppl_joint);
    verdict("caption_mix < no_caption_mix (caption)", "caption_mix", "no_caption_mix", &AblationRow::ppl_caption);
    return out.str();
}

}  // namespace jam
