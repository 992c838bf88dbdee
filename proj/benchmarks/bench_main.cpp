#include <benchmark/benchmark.h>

#include <algorithm>

#include "crecl/classifier.hpp"
#include "crecl/contrast.hpp"
#include "crecl/kmeans.hpp"
#include "crecl/synthetic.hpp"

namespace {

using namespace crecl;

EncoderOptions encoder_options()
{
    EncoderOptions o;
    o.toy.token_dim = 16;
    o.hidden_dim = 16;
    return o;
}

std::vector<Instance> corpus_sample(std::size_t n)
{
    SyntheticSpec spec;
    spec.relations = 10;
    spec.instances_per_relation = static_cast<int>((n + 9) / 10);
    std::vector<Instance> all;
    for (const auto& [relation, xs] : make_synthetic_corpus(spec)) {
        all.insert(all.end(), xs.begin(), xs.end());
    }
    all.resize(std::min(all.size(), n));
    return all;
}

void BM_KMeans(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng draw(1);
    std::vector<Vec> points;
    for (std::size_t i = 0; i < n; ++i) {
        Vec p(16);
        for (Eigen::Index j = 0; j < p.size(); ++j) {
            p[j] = draw.normal();
        }
        points.push_back(p);
    }
    for (auto _ : state) {
        Rng rng(2);
        benchmark::DoNotOptimize(kmeans(points, 10, {}, rng));
    }
}
BENCHMARK(BM_KMeans)->Arg(100)->Arg(420);

void BM_EncoderForwardBackward(benchmark::State& state)
{
    Rng init(1);
    InstanceEncoder encoder(encoder_options(), init);
    const auto batch = corpus_sample(32);
    std::vector<std::string> relations;
    for (const auto& x : batch) {
        if (std::find(relations.begin(), relations.end(), x.relation) == relations.end()) {
            relations.push_back(x.relation);
        }
    }
    ClassifierHead head(relations, 16, true, init);
    ClassificationConfig config;
    Rng rng(3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(classification_batch_loss(batch, encoder, head, config, rng, true));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch.size()));
}
BENCHMARK(BM_EncoderForwardBackward);

void BM_Predict(benchmark::State& state)
{
    Rng init(1);
    const InstanceEncoder encoder(encoder_options(), init);
    const Projector projector(16, init);
    const auto data = corpus_sample(200);
    EpisodicMemory memory(10);
    Rng rng(4);
    Task task;
    task.train = data;
    for (const auto& x : data) {
        if (std::find(task.relations.begin(), task.relations.end(), x.relation) == task.relations.end()) {
            task.relations.push_back(x.relation);
        }
    }
    store_task_exemplars(task, encoder, memory, rng);
    const auto index = build_prototype_index(memory, encoder, projector);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(similarity_scores(data[i++ % data.size()], index, encoder, projector));
    }
}
BENCHMARK(BM_Predict);

} // namespace

BENCHMARK_MAIN();
