#include "jam/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "jam/error.hpp"

namespace jam {

using nlohmann::json;

namespace {

json header_to_json(const DatasetHeader& h, std::size_t count) {
    json j{{"format", "jam-dataset"},
           {"version", kDatasetFormatVersion},
           {"kind", h.kind},
           {"seed", h.seed},
           {"count", count},
           {"image_len", h.image_len},
           {"vocab",
            {{"n_text", h.vocab.n_text()},
             {"n_image", h.vocab.n_image()},
             {"n_mask_sentinels", h.vocab.n_mask_sentinels()}}}};
    if (h.world) {
        j["world"] = json{{"world_seed", h.world->world_seed},
                          {"n_topics", h.world->n_topics},
                          {"palette_size", h.world->palette_size},
                          {"caption_noise", h.world->caption_noise},
                          {"image_len", h.world->image_len}};
    } else {
        j["world"] = nullptr;
    }
    return j;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
    out << header_to_json(dataset.header, dataset.sequences.size()).dump() << '\n';
    for (const MixedSequence& seq : dataset.sequences) {
        validate_sequence(seq, dataset.header.vocab, dataset.header.image_len);
        json spans = json::array();
        for (const Span& s : seq.spans) spans.push_back(json::array({s.kind == SpanKind::text ? "text" : "image", s.start, s.end}));
        out << json{{"tokens", seq.tokens}, {"spans", spans}}.dump() << '\n';
    }
}

Dataset read_dataset(std::istream& in) {
    Dataset dataset;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("dataset: missing header");
    std::size_t count = 0;
    try {
        const json h = json::parse(line);
        if (h.at("format").get<std::string>() != "jam-dataset") throw FormatError("dataset: not a jam dataset");
        const int version = h.at("version").get<int>();
        if (version != kDatasetFormatVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
        dataset.header.kind = h.at("kind").get<std::string>();
        dataset.header.seed = h.at("seed").get<std::uint64_t>();
        dataset.header.image_len = h.at("image_len").get<std::size_t>();
        const json& v = h.at("vocab");
        dataset.header.vocab = Vocabulary(v.at("n_text").get<std::size_t>(), v.at("n_image").get<std::size_t>(),
                                          v.at("n_mask_sentinels").get<std::size_t>());
        if (!h.at("world").is_null()) {
            const json& w = h.at("world");
            WorldParams world;
            world.world_seed = w.at("world_seed").get<std::uint64_t>();
            world.n_topics = w.at("n_topics").get<std::size_t>();
            world.palette_size = w.at("palette_size").get<std::size_t>();
            world.caption_noise = w.at("caption_noise").get<double>();
            world.image_len = w.at("image_len").get<std::size_t>();
            dataset.header.world = world;
        }
        count = h.at("count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset: malformed header: ") + e.what());
    }

    dataset.sequences.reserve(count);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json r = json::parse(line);
            MixedSequence seq;
            seq.tokens = r.at("tokens").get<std::vector<TokenId>>();
            for (const json& s : r.at("spans")) {
                const auto kind = s.at(0).get<std::string>();
                if (kind != "text" && kind != "image") throw FormatError("unknown span kind '" + kind + "'");
                seq.spans.push_back({kind == "text" ? SpanKind::text : SpanKind::image, s.at(1).get<std::size_t>(),
                                     s.at(2).get<std::size_t>()});
            }
            validate_sequence(seq, dataset.header.vocab, dataset.header.image_len);
            dataset.sequences.push_back(std::move(seq));
        } catch (const json::exception& e) {
            throw FormatError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (dataset.sequences.size() != count) {
        throw FormatError("dataset: header announces " + std::to_string(count) + " records, found " +
                          std::to_string(dataset.sequences.size()));
    }
    return dataset;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    write_dataset(out, dataset);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset '" + path.string() + "'");
    return read_dataset(in);
}

}  // namespace jam
