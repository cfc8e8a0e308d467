#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "jam/corpus.hpp"
#include "jam/error.hpp"
#include "jam/retrieval.hpp"
#include "jam/rng.hpp"

namespace {

using namespace jam;

struct Fixture : ::testing::Test {
    Vocabulary vocab;
    SyntheticWorld world{vocab, WorldParams{}};
    ToyEncoder encoder{vocab, 32, 97};
    std::vector<MixedSequence> docs = synth_corpus(world, CorpusKind::caption_pairs, 100, 2);
    MemoryBank bank = MemoryBank::build(docs, encoder);
};

double norm(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

TEST_F(Fixture, EmbeddingsAreUnitNorm) {
    ASSERT_EQ(bank.size(), 100u);
    for (const auto& d : bank.documents()) EXPECT_NEAR(norm(d.embedding), 1.0, 1e-12);
    EXPECT_NEAR(norm(encoder.embed_tokens(docs[0].tokens)), 1.0, 1e-12);
    EXPECT_THROW(encoder.embed_document({}, {}), DomainError);
}

TEST_F(Fixture, BankRejectsBadDocuments) {
    MemoryBank b;
    Document d = bank.documents()[0];
    b.add(d);
    EXPECT_THROW(b.add(d), DomainError);
    d.doc_id = 1000;
    d.embedding[0] += 0.01;
    EXPECT_THROW(b.add(d), DomainError);
    d.embedding.pop_back();
    EXPECT_THROW(b.add(d), Error);
}

// Brute-force top-k oracle: sort all (score, id) pairs.
TEST_F(Fixture, MatchesBruteForce) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = encoder.embed_tokens(synth_corpus(world, CorpusKind::caption_pairs, 1, 100 + trial)[0].tokens);
        std::vector<std::pair<double, std::size_t>> all;
        for (const auto& d : bank.documents()) {
            double s = 0;
            for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * d.embedding[i];
            all.emplace_back(s, d.doc_id);
        }
        std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        for (std::size_t k : {1, 3, 7}) {
            RetrievalConfig cfg;
            cfg.k = k;
            cfg.skip_threshold = 2.0;
            const auto got = retrieve(bank, q, cfg);
            ASSERT_EQ(got.size(), k);
            for (std::size_t i = 0; i < k; ++i) {
                EXPECT_EQ(got[i].doc_id, all[i].second);
                EXPECT_NEAR(got[i].score, all[i].first, 1e-12);
            }
        }
    }
}

TEST_F(Fixture, SkipRule) {
    const auto q = bank.documents()[5].embedding;
    RetrievalConfig cfg;
    cfg.k = 3;
    cfg.skip_threshold = 0.9;
    for (const auto& r : retrieve(bank, q, cfg)) {
        EXPECT_LT(r.score, 0.9);
        EXPECT_NE(r.doc_id, 5u);
    }
    EXPECT_TRUE(is_skipped(0.9, cfg));
    EXPECT_FALSE(is_skipped(0.89, cfg));
    cfg.skip_direction = SkipDirection::skip_if_leq;
    EXPECT_TRUE(is_skipped(0.9, cfg));
    EXPECT_FALSE(is_skipped(0.91, cfg));
    EXPECT_EQ(parse_skip_direction(to_string(SkipDirection::skip_if_leq)), SkipDirection::skip_if_leq);
    cfg.k = 0;
    EXPECT_TRUE(retrieve(bank, q, cfg).empty());
}

TEST_F(Fixture, TiesBreakByLowerId) {
    MemoryBank b;
    Document d = bank.documents()[0];
    for (std::size_t id : {9, 3, 6}) {
        d.doc_id = id;
        b.add(d);
    }
    RetrievalConfig cfg;
    cfg.k = 3;
    cfg.skip_threshold = 2.0;
    const auto got = retrieve(b, d.embedding, cfg);
    ASSERT_EQ(got.size(), 3u);
    EXPECT_EQ(got[0].doc_id, 3u);
    EXPECT_EQ(got[1].doc_id, 6u);
    EXPECT_EQ(got[2].doc_id, 9u);
    EXPECT_THROW(score(std::vector<double>{1.0}, d.embedding), ShapeError);
}

TEST_F(Fixture, QueryDropoutKeepsAboutEightyPercent) {
    std::vector<TokenId> tokens;
    for (const auto& s : docs) tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
    std::size_t maskable = 0, kept = 0;
    Rng rng(12);
    for (int rep = 0; rep < 10; ++rep) {
        const auto out = query_dropout(tokens, 0.2, vocab, rng);
        for (TokenId t : tokens) maskable += !vocab.is_special(t);
        for (TokenId t : out) kept += !vocab.is_special(t);
        EXPECT_EQ(std::count_if(out.begin(), out.end(), [&](TokenId t) { return vocab.is_special(t); }),
                  std::count_if(tokens.begin(), tokens.end(), [&](TokenId t) { return vocab.is_special(t); }));
    }
    EXPECT_NEAR(static_cast<double>(kept) / maskable, 0.8, 0.02);
    EXPECT_EQ(query_dropout(tokens, 0.0, vocab, rng), tokens);
}

TEST_F(Fixture, PrependRetrieved) {
    const MixedSequence& target = docs[0];
    RetrievalConfig cfg;
    cfg.k = 2;
    cfg.skip_threshold = 2.0;
    const auto hits = retrieve(bank, encoder.embed_tokens(docs[1].tokens), cfg);
    const auto aug = prepend_retrieved(target, hits, bank, vocab, 16, 1000);
    EXPECT_EQ(aug.documents_used, 2u);
    std::vector<TokenId> expected;
    for (const auto& h : hits) {
        const auto& c = bank.by_id(h.doc_id).content.tokens;
        expected.insert(expected.end(), c.begin(), c.end());
    }
    EXPECT_EQ(aug.prefix_length, expected.size());
    expected.insert(expected.end(), target.tokens.begin(), target.tokens.end());
    EXPECT_EQ(aug.sequence.tokens, expected);
    EXPECT_NO_THROW(validate_sequence(aug.sequence, vocab, 16));

    // Too long for both documents: the lower-scored one is dropped first.
    const std::size_t room = target.tokens.size() + bank.by_id(hits[0].doc_id).content.tokens.size();
    const auto one = prepend_retrieved(target, hits, bank, vocab, 16, room);
    EXPECT_EQ(one.documents_used, 1u);
    EXPECT_EQ(one.sequence.tokens.size(), room);
    const auto none = prepend_retrieved(target, hits, bank, vocab, 16, target.tokens.size());
    EXPECT_EQ(none.documents_used, 0u);
    EXPECT_EQ(none.prefix_length, 0u);
    EXPECT_EQ(none.sequence, target);
}

TEST_F(Fixture, SidecarRoundTripAndStaleness) {
    const auto path = std::filesystem::temp_directory_path() / "jam_bank_test.bin";
    save_bank_embeddings(path, bank, encoder);
    const MemoryBank loaded = load_bank(docs, path, vocab);
    ASSERT_EQ(loaded.size(), bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) EXPECT_EQ(loaded.documents()[i].embedding, bank.documents()[i].embedding);
    auto changed = docs;
    changed[3] = docs[4];
    EXPECT_THROW(load_bank(changed, path, vocab), FormatError);
    std::ofstream(path, std::ios::binary) << "garbage";
    EXPECT_THROW(load_bank(docs, path, vocab), FormatError);
    std::filesystem::remove(path);
}

TEST(RetrievalConfig, Validation) {
    RetrievalConfig c;
    EXPECT_NO_THROW(c.validate());
    c.query_dropout = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
