#include "jam/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "jam/error.hpp"

namespace jam {

using nlohmann::json;

RunConfig::RunConfig() {
    model.n_layers = 4;
    model.d_model = 32;
    model.n_heads = 4;
    model.d_ff = 64;
    model.max_seq_len = 128;
    model.init_std = 0.02;

    parent_train.lr = 3e-3;
    parent_train.warmup_steps = 20;
    parent_train.total_steps = 300;
    parent_train.eval_interval = 100;

    align_train = parent_train;
    align_train.phase = Phase::alignment;
    align_train.lr = 1e-3;
    align_train.total_steps = 200;
    align_train.eval_interval = 50;
    align_train.mixture_weights = {0.5, 0.5};

    instruct_train = parent_train;
    instruct_train.phase = Phase::instruct;
    instruct_train.lr = 1e-3;
    instruct_train.warmup_steps = 10;
    instruct_train.epochs = 15;
    instruct_train.mixture_weights = {1.0};
}

TransformerConfig RunConfig::model_config() const {
    TransformerConfig c = model;
    c.vocab_size = vocab().size();
    return c;
}

AblationConfig RunConfig::ablation() const {
    AblationConfig a;
    a.seeds = ablation_seeds;
    a.parent = model_config();
    a.world = world;
    a.n_text = data.n_text;
    a.n_caption = data.n_caption;
    a.n_instruct = data.n_instruct;
    a.n_validation = data.n_validation;
    a.parent_train = parent_train;
    a.align_train = align_train;
    a.instruct_train = instruct_train;
    a.instruct_caption_mix = instruct_caption_mix;
    a.cross_every = ablation_cross_every;
    a.cross_ffn = fusion.cross_ffn;
    a.cross_init_std = fusion.cross_init_std;
    a.instruct_base_every = instruct_base_every;
    return a;
}

void RunConfig::validate() const {
    const Vocabulary v = vocab();
    world.validate(v);
    model_config().validate();
    fusion.validate();
    parent_train.validate(1);
    align_train.validate(align_train.mixture_weights.size());
    instruct_train.validate(instruct_train.mixture_weights.size());
    parent_train.cm3.validate(v);
    sampler.validate();
    retrieval.validate();
    ablation().validate();
}

namespace {

// Reads the keys of one JSON object into fields, rejecting unknown keys.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigError("config: unknown key '" + qualified(key) + "'");
        }
    }
    template <typename T>
    void get(const std::string& key, T& field) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            field = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for '" + qualified(key) + "': " + e.what());
        }
    }
    template <typename Fn>
    void section(const std::string& key, Fn&& fn) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Section inner(j_.at(key), qualified(key));
        fn(inner);
    }
    template <typename Parse, typename T>
    void named(const std::string& key, T& field, Parse&& parse) {
        std::string name;
        get(key, name);
        if (j_.contains(key)) field = parse(name);
    }
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_train(Section& s, TrainConfig& t) {
    s.get("lr", t.lr);
    s.get("warmup_steps", t.warmup_steps);
    s.get("total_steps", t.total_steps);
    s.get("batch_tokens", t.batch_tokens);
    s.get("mixture_weights", t.mixture_weights);
    s.get("retrieval_enabled", t.retrieval_enabled);
    s.get("eval_interval", t.eval_interval);
    s.get("epochs", t.epochs);
    s.named("schedule", t.schedule, parse_lr_schedule);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("grad_clip", t.grad_clip);
    s.get("weight_decay", t.weight_decay);
    s.get("uncond_prob", t.uncond_prob);
    s.get("max_eval_sequences", t.max_eval_sequences);
    s.section("cm3", [&](Section& c) {
        c.get("transform_probability", t.cm3.transform_probability);
        c.get("max_spans", t.cm3.max_spans);
        c.get("min_span_length", t.cm3.min_span_length);
        c.get("max_span_length", t.cm3.max_span_length);
    });
}

json train_json(const TrainConfig& t) {
    return json{{"lr", t.lr},
                {"warmup_steps", t.warmup_steps},
                {"total_steps", t.total_steps},
                {"batch_tokens", t.batch_tokens},
                {"mixture_weights", t.mixture_weights},
                {"retrieval_enabled", t.retrieval_enabled},
                {"eval_interval", t.eval_interval},
                {"epochs", t.epochs},
                {"schedule", to_string(t.schedule)},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"grad_clip", t.grad_clip},
                {"weight_decay", t.weight_decay},
                {"uncond_prob", t.uncond_prob},
                {"max_eval_sequences", t.max_eval_sequences},
                {"cm3",
                 {{"transform_probability", t.cm3.transform_probability},
                  {"max_spans", t.cm3.max_spans},
                  {"min_span_length", t.cm3.min_span_length},
                  {"max_span_length", t.cm3.max_span_length}}}};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
    if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kRunConfigSchemaVersion) {
        throw ConfigError("config: unsupported schema_version " + j.at("schema_version").dump() + " (expected " +
                          std::to_string(kRunConfigSchemaVersion) + ")");
    }

    RunConfig cfg;
    {
        Section root(j, "");
        int version = 0;
        root.get("schema_version", version);
        root.get("seed", cfg.seed);
        root.section("vocab", [&](Section& s) {
            s.get("n_text", cfg.vocab_text);
            s.get("n_image", cfg.vocab_image);
            s.get("n_mask_sentinels", cfg.vocab_masks);
        });
        root.section("world", [&](Section& s) {
            s.get("image_len", cfg.world.image_len);
            s.get("world_seed", cfg.world.world_seed);
            s.get("n_topics", cfg.world.n_topics);
            s.get("palette_size", cfg.world.palette_size);
            s.get("caption_noise", cfg.world.caption_noise);
        });
        root.section("data", [&](Section& s) {
            s.get("n_text", cfg.data.n_text);
            s.get("n_caption", cfg.data.n_caption);
            s.get("n_instruct", cfg.data.n_instruct);
            s.get("n_validation", cfg.data.n_validation);
        });
        root.section("model", [&](Section& s) {
            s.get("n_layers", cfg.model.n_layers);
            s.get("d_model", cfg.model.d_model);
            s.get("n_heads", cfg.model.n_heads);
            s.get("d_ff", cfg.model.d_ff);
            s.get("max_seq_len", cfg.model.max_seq_len);
            s.get("no_bias", cfg.model.no_bias);
            s.get("affine_norm", cfg.model.affine_norm);
            s.named("norm", cfg.model.norm, [](const std::string& n) {
                if (n == "pre") return NormPlacement::pre;
                if (n == "post") return NormPlacement::post;
                throw ConfigError("config: unknown norm placement '" + n + "'");
            });
            s.get("init_std", cfg.model.init_std);
        });
        root.section("fusion", [&](Section& s) {
            s.named("kind", cfg.fusion.kind, parse_fusion_kind);
            s.get("insertion_every", cfg.fusion.insertion_every);
            s.get("cross_ffn", cfg.fusion.cross_ffn);
            s.get("cross_init_std", cfg.fusion.cross_init_std);
        });
        root.section("train", [&](Section& s) {
            s.section("parent", [&](Section& t) { read_train(t, cfg.parent_train); });
            s.section("align", [&](Section& t) { read_train(t, cfg.align_train); });
            s.section("instruct", [&](Section& t) { read_train(t, cfg.instruct_train); });
        });
        root.section("sampler", [&](Section& s) {
            s.get("temperature", cfg.sampler.temperature);
            s.get("top_p", cfg.sampler.top_p);
            s.get("cfg_alpha", cfg.sampler.cfg_alpha);
            s.get("max_tokens", cfg.sampler.max_tokens);
            s.get("max_images", cfg.sampler.max_images);
            s.get("cfg_on_text", cfg.sampler.cfg_on_text);
        });
        root.section("retrieval", [&](Section& s) {
            s.get("k", cfg.retrieval.k);
            s.get("skip_threshold", cfg.retrieval.skip_threshold);
            s.named("skip_direction", cfg.retrieval.skip_direction, parse_skip_direction);
            s.get("query_dropout", cfg.retrieval.query_dropout);
            s.get("embedding_dim", cfg.retrieval.embedding_dim);
            s.get("encoder_seed", cfg.retrieval.encoder_seed);
        });
        root.section("ablation", [&](Section& s) {
            s.get("seeds", cfg.ablation_seeds);
            s.get("cross_every", cfg.ablation_cross_every);
            s.get("instruct_caption_mix", cfg.instruct_caption_mix);
            s.get("instruct_base_every", cfg.instruct_base_every);
        });
    }
    cfg.parent_train.phase = Phase::alignment;
    cfg.align_train.phase = Phase::alignment;
    cfg.instruct_train.phase = Phase::instruct;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string dump_run_config(const RunConfig& c) {
    json j{{"schema_version", kRunConfigSchemaVersion},
           {"seed", c.seed},
           {"vocab", {{"n_text", c.vocab_text}, {"n_image", c.vocab_image}, {"n_mask_sentinels", c.vocab_masks}}},
           {"world",
            {{"image_len", c.world.image_len},
             {"world_seed", c.world.world_seed},
             {"n_topics", c.world.n_topics},
             {"palette_size", c.world.palette_size},
             {"caption_noise", c.world.caption_noise}}},
           {"data",
            {{"n_text", c.data.n_text},
             {"n_caption", c.data.n_caption},
             {"n_instruct", c.data.n_instruct},
             {"n_validation", c.data.n_validation}}},
           {"model",
            {{"n_layers", c.model.n_layers},
             {"d_model", c.model.d_model},
             {"n_heads", c.model.n_heads},
             {"d_ff", c.model.d_ff},
             {"max_seq_len", c.model.max_seq_len},
             {"no_bias", c.model.no_bias},
             {"affine_norm", c.model.affine_norm},
             {"norm", to_string(c.model.norm)},
             {"init_std", c.model.init_std}}},
           {"fusion",
            {{"kind", to_string(c.fusion.kind)},
             {"insertion_every", c.fusion.insertion_every},
             {"cross_ffn", c.fusion.cross_ffn},
             {"cross_init_std", c.fusion.cross_init_std}}},
           {"train",
            {{"parent", train_json(c.parent_train)},
             {"align", train_json(c.align_train)},
             {"instruct", train_json(c.instruct_train)}}},
           {"sampler",
            {{"temperature", c.sampler.temperature},
             {"top_p", c.sampler.top_p},
             {"cfg_alpha", c.sampler.cfg_alpha},
             {"max_tokens", c.sampler.max_tokens},
             {"max_images", c.sampler.max_images},
             {"cfg_on_text", c.sampler.cfg_on_text}}},
           {"retrieval",
            {{"k", c.retrieval.k},
             {"skip_threshold", c.retrieval.skip_threshold},
             {"skip_direction", to_string(c.retrieval.skip_direction)},
             {"query_dropout", c.retrieval.query_dropout},
             {"embedding_dim", c.retrieval.embedding_dim},
             {"encoder_seed", c.retrieval.encoder_seed}}},
           {"ablation",
            {{"seeds", c.ablation_seeds},
             {"cross_every", c.ablation_cross_every},
             {"instruct_caption_mix", c.instruct_caption_mix},
             {"instruct_base_every", c.instruct_base_every}}}};
    return j.dump(2) + "\n";
}

}  // namespace jam
