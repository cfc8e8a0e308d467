#include <benchmark/benchmark.h>

#include "jam/autodiff.hpp"
#include "jam/corpus.hpp"
#include "jam/retrieval.hpp"
#include "jam/rng.hpp"
#include "jam/run_config.hpp"
#include "jam/trainer.hpp"

namespace {

using namespace jam;

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor a = Tensor::randn({n, n}, 1.0, rng);
    const Tensor b = Tensor::randn({n, n}, 1.0, rng);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul_nt(a, b));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_AttentionForwardBackward(benchmark::State& state) {
    const auto t = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const Tensor q = Tensor::randn({t, 32}, 1.0, rng);
    const Tensor k = Tensor::randn({t, 32}, 1.0, rng);
    const Tensor v = Tensor::randn({t, 32}, 1.0, rng);
    for (auto _ : state) {
        ad::Graph g;
        const ad::Var out = ad::attention(g.leaf(q), g.leaf(k), g.leaf(v), 4, true);
        g.backward(ad::sum(out));
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(32)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
    const RunConfig rc;
    const Vocabulary vocab = rc.vocab();
    const SyntheticWorld world(vocab, rc.world);
    const TransformerConfig c = rc.model_config();
    const Model model{ModelSpec{Architecture::decoder, c, {}}, init_decoder(c, 1)};
    TrainData data;
    data.datasets = {synth_corpus(world, CorpusKind::caption_pairs, 200, 1)};
    BatchBuilder builder(data, rc.parent_train, vocab, c.max_seq_len);
    const auto batch = builder.next();
    ParameterSet grads;
    for (auto _ : state) benchmark::DoNotOptimize(batch_loss_and_grads(model, batch, &grads));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Retrieve(benchmark::State& state) {
    const Vocabulary vocab;
    const SyntheticWorld world(vocab, WorldParams{});
    const ToyEncoder encoder(vocab, 32, 97);
    const MemoryBank bank = MemoryBank::build(
        synth_corpus(world, CorpusKind::caption_pairs, static_cast<std::size_t>(state.range(0)), 1), encoder);
    const auto query = encoder.embed_tokens(synth_corpus(world, CorpusKind::caption_pairs, 1, 2)[0].tokens);
    RetrievalConfig cfg;
    cfg.k = 2;
    for (auto _ : state) benchmark::DoNotOptimize(retrieve(bank, query, cfg));
}
BENCHMARK(BM_Retrieve)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
