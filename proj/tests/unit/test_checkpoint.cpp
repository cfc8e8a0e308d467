#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "jam/checkpoint.hpp"
#include "jam/error.hpp"
#include "jam/fusion.hpp"
#include "jam/vocab.hpp"

namespace {

using namespace jam;

Checkpoint sample_checkpoint() {
    TransformerConfig c;
    c.n_layers = 2;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 6;
    c.vocab_size = 9;
    c.max_seq_len = 8;
    const Model p{ModelSpec{Architecture::decoder, c, {}}, init_decoder(c, 1)};
    FusionSpec fs;
    fs.kind = FusionKind::cross;
    fs.insertion_every = 1;
    fs.cross_ffn = true;
    Checkpoint ck{build_cross(p, p, {1, true, 0.02}, Vocabulary(3, 1, 1).embedding_sources(), 2), fs,
                  {{"stage", "fused"}, {"step", "0"}}};
    return ck;
}

TEST(Checkpoint, RoundTripIsExact) {
    const Checkpoint ck = sample_checkpoint();
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    EXPECT_EQ(back.model.spec, ck.model.spec);
    EXPECT_EQ(back.model.params, ck.model.params);
    EXPECT_EQ(back.fusion, ck.fusion);
    EXPECT_EQ(back.metadata, ck.metadata);
}

TEST(Checkpoint, EncodingIsDeterministic) {
    EXPECT_EQ(encode_checkpoint(sample_checkpoint()), encode_checkpoint(sample_checkpoint()));
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "jam_ckpt_test.bin";
    const Checkpoint ck = sample_checkpoint();
    save_checkpoint(path, ck);
    EXPECT_EQ(load_checkpoint(path).model.params, ck.model.params);
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Checkpoint, DetectsCorruption) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    auto bad_magic = bytes;
    bad_magic[0] ^= 1;
    EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[8] = 99;
    EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
    for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(std::span(bytes).first(cut)), FormatError) << cut;
    }
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_THROW(decode_checkpoint(trailing), FormatError);
}

TEST(Checkpoint, PayloadHashIgnoresHeader) {
    Checkpoint a = sample_checkpoint();
    Checkpoint b = sample_checkpoint();
    b.metadata["note"] = "different";
    EXPECT_NE(encode_checkpoint(a), encode_checkpoint(b));
    EXPECT_EQ(payload_hash(a.model.params), payload_hash(b.model.params));
    b.model.params.at("cross.0.to_img.wq")[0] += 1e-12;
    EXPECT_NE(payload_hash(a.model.params), payload_hash(b.model.params));
}

TEST(Checkpoint, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
    const std::uint8_t a[] = {'a'};
    EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
    const std::string foobar = "foobar";
    EXPECT_EQ(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(foobar.data()), foobar.size())),
              0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

}  // namespace
