#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jam/corpus.hpp"
#include "jam/sequence.hpp"

namespace jam {

inline constexpr int kDatasetFormatVersion = 1;

// Line-delimited dataset file. The first line is a JSON header
//   {"format":"jam-dataset","version":1,"kind":...,"seed":...,"count":N,
//    "image_len":L,"vocab":{...},"world":{...}|null}
// followed by N records
//   {"tokens":[...],"spans":[["text",0,5],["image",6,22],...]}
struct DatasetHeader {
    std::string kind;  // corpus kind, "samples", ...
    std::uint64_t seed = 0;
    Vocabulary vocab;
    std::size_t image_len = 16;
    std::optional<WorldParams> world;
};

struct Dataset {
    DatasetHeader header;
    std::vector<MixedSequence> sequences;
};

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace jam
