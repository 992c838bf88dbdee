#include <gtest/gtest.h>

#include <set>

#include "crecl/error.hpp"
#include "crecl/kmeans.hpp"
#include "crecl/memory.hpp"
#include "oracles.hpp"

namespace crecl {
namespace {

const std::filesystem::path kFixtures = CRECL_FIXTURE_DIR;

std::vector<Instance> point_instances(std::size_t n, const std::string& relation = "r")
{
    std::vector<Instance> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "p%02zu", i);
        out.push_back(oracle::make_instance(id, {"a", "b"}, {0, 1}, {1, 2}, relation));
    }
    return out;
}

std::vector<std::string> ids_of(const std::vector<Instance>& xs)
{
    std::vector<std::string> out;
    for (const auto& x : xs) {
        out.push_back(x.id);
    }
    return out;
}

Vec point(double x) { return (Vec(1) << x).finished(); }

TEST(KMeans, RejectsBadK)
{
    const std::vector<Vec> pts = {point(0), point(1)};
    Rng rng(1);
    EXPECT_THROW(kmeans(pts, 0, {}, rng), Error);
    EXPECT_THROW(kmeans(pts, 3, {}, rng), Error);
}

TEST(KMeans, EveryClusterIsNonEmptyEvenWithDuplicates)
{
    const std::vector<Vec> pts = {point(0), point(0), point(0), point(5)};
    Rng rng(1);
    const auto res = kmeans(pts, 3, {}, rng);
    std::vector<int> counts(3, 0);
    for (const int a : res.assignment) {
        ++counts[static_cast<std::size_t>(a)];
    }
    for (const int c : counts) {
        EXPECT_GE(c, 1);
    }
}

TEST(KMeans, FindsTheOptimumOnSeparatedBlobs)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto pts = oracle::kmeans_fixture(seed, 8, 3, true);
        Rng rng(seed);
        const auto res = kmeans(pts, 3, {}, rng);
        EXPECT_NEAR(res.inertia, oracle::optimal_partition(pts, 3).inertia, 1e-9);
        EXPECT_TRUE(res.converged);
    }
}

TEST(Memory, TwoSeparatedTriplesOnALine)
{
    const std::vector<Vec> reps = {point(0.0), point(1.0), point(2.5), point(10.0), point(11.5), point(12.0)};
    const auto instances = point_instances(6);
    Rng rng(3);
    const auto chosen = select_from_representations(instances, reps, 2, rng);
    const auto part = oracle::optimal_partition(reps, 2);
    std::vector<std::string> expected;
    for (const auto i : oracle::partition_exemplars(reps, part)) {
        expected.push_back(instances[i].id);
    }
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(ids_of(chosen), expected);
    EXPECT_EQ(ids_of(chosen), (std::vector<std::string>{"p01", "p04"}));
}

TEST(Memory, SmallRelationsAreStoredWhole)
{
    const auto instances = point_instances(3);
    const std::vector<Vec> reps = {point(0), point(1), point(2)};
    Rng rng(3);
    EXPECT_EQ(select_from_representations(instances, reps, 3, rng), instances);
    EXPECT_EQ(select_from_representations(instances, reps, 7, rng), instances);
}

TEST(Memory, SingleExemplarIsClosestToTheMean)
{
    const std::vector<Vec> reps = {point(0.0), point(1.0), point(1.9), point(8.0)};
    const auto instances = point_instances(4);
    Rng rng(3);
    // mean = 2.725, nearest is 1.9
    EXPECT_EQ(ids_of(select_from_representations(instances, reps, 1, rng)), (std::vector<std::string>{"p02"}));
}

TEST(Memory, TiesGoToTheLowestId)
{
    const std::vector<Vec> reps = {point(1.0), point(-1.0)};
    std::vector<Instance> instances = point_instances(2);
    std::swap(instances[0].id, instances[1].id);  // p01 at +1, p00 at -1
    Rng rng(3);
    const auto chosen = select_from_representations(instances, reps, 1, rng);
    EXPECT_EQ(ids_of(chosen), (std::vector<std::string>{"p00"}));
}

TEST(Memory, SelectionPropertiesOverSeeds)
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t n = 1 + seed % 12;
        const int L = 1 + static_cast<int>(seed % 5);
        const auto reps = oracle::kmeans_fixture(seed, n, 2, false);
        const auto instances = point_instances(n);
        Rng rng(seed);
        const auto chosen = select_from_representations(instances, reps, L, rng);
        EXPECT_EQ(chosen.size(), std::min<std::size_t>(n, static_cast<std::size_t>(L)));
        const auto ids = ids_of(chosen);
        EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
        EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
    }
}

TEST(Memory, TypicalSelectionUsesDropoutFreeRepresentations)
{
    EncoderOptions o;
    o.toy.token_dim = 4;
    o.toy.buckets = 32;
    o.hidden_dim = 4;
    o.dropout = 0.5;
    Rng init(2);
    const InstanceEncoder enc(o, init);
    std::vector<Instance> instances;
    for (int i = 0; i < 9; ++i) {
        instances.push_back(oracle::make_instance("i" + std::to_string(i), {"w" + std::to_string(i), "x", "y"}, {0, 1},
                                                  {2, 3}, "r"));
    }
    std::vector<Vec> reps;
    for (const auto& inst : instances) {
        reps.push_back(enc.represent(inst));
    }
    Rng a(5);
    Rng b(5);
    EXPECT_EQ(select_typical_instances(instances, enc, 3, a), select_from_representations(instances, reps, 3, b));
}

TEST(Memory, RandomSelection)
{
    const auto instances = point_instances(10);
    Rng rng(1);
    const auto chosen = select_random_instances(instances, 4, rng);
    EXPECT_EQ(chosen.size(), 4u);
    Rng again(1);
    EXPECT_EQ(select_random_instances(instances, 4, again), chosen);
}

TEST(Memory, AddEnforcesInvariants)
{
    EpisodicMemory memory(2);
    memory.add("r", point_instances(2));
    EXPECT_THROW(memory.add("r", point_instances(1)), Error);
    EXPECT_THROW(memory.add("s", point_instances(3, "s")), Error);
    EXPECT_THROW(memory.add("s", {}), Error);
    EXPECT_THROW(memory.add("s", point_instances(1, "r")), Error);
    auto dup = point_instances(2, "s");
    dup[1].id = dup[0].id;
    EXPECT_THROW(memory.add("s", dup), Error);
    EXPECT_EQ(memory.size(), 1u);
    EXPECT_THROW(EpisodicMemory(0), Error);
}

Task task_of(int index, const std::vector<std::string>& relations, std::size_t per)
{
    Task t;
    t.index = index;
    t.relations = relations;
    for (const auto& r : relations) {
        for (std::size_t i = 0; i < per; ++i) {
            t.train.push_back(oracle::make_instance(r + "#" + std::to_string(i), {r, "w" + std::to_string(i), "z"},
                                                    {0, 1}, {1, 2}, r));
        }
    }
    return t;
}

TEST(Memory, StoreTaskExemplarsGrowsAdditively)
{
    EncoderOptions o;
    o.toy.buckets = 64;
    Rng init(2);
    const InstanceEncoder enc(o, init);
    EpisodicMemory memory(10);
    Rng rng(1);
    store_task_exemplars(task_of(1, {"a", "b", "c", "d", "e", "f", "g", "h"}, 14), enc, memory, rng);
    EXPECT_EQ(memory.size(), 8u);
    for (const auto& r : memory.relations()) {
        EXPECT_LE(memory.instances(r).size(), 10u);
    }
    const auto before = memory.instances("a");
    store_task_exemplars(task_of(2, {"i", "j", "k", "l"}, 5), enc, memory, rng);
    EXPECT_EQ(memory.size(), 12u);
    EXPECT_EQ(memory.instances("a"), before);
    EXPECT_THROW(store_task_exemplars(task_of(3, {"a"}, 3), enc, memory, rng), Error);
}

TEST(Memory, PrototypesAreMeansUnderTheCurrentEncoder)
{
    EncoderOptions o;
    o.toy.token_dim = 2;
    o.toy.buckets = 16;
    o.hidden_dim = 2;
    Rng init(2);
    InstanceEncoder enc(o, init);
    enc.hidden_layer().weight().value.setZero();
    EpisodicMemory memory(4);
    std::vector<Instance> xs = {oracle::make_instance("x0", {"alpha", "beta", "gamma"}, {0, 1}, {2, 3}, "r"),
                                oracle::make_instance("x1", {"delta", "eps", "zeta"}, {0, 1}, {2, 3}, "r")};
    memory.add("r", xs);
    memory.add("s", {point_instances(1, "s")});

    enc.hidden_layer().bias().value << 1.0, 0.0;
    auto protos = compute_prototypes(memory, enc);
    EXPECT_EQ(protos.at("s").source_count, 1);
    EXPECT_EQ(protos.at("s").p, enc.represent(memory.instances("s").front()));
    EXPECT_EQ(protos.at("r").source_count, 2);

    // Arithmetic mean: make the two representations (1,0) and (0,1).
    Rng init2(9);
    InstanceEncoder enc2(o, init2);
    const Vec e0 = enc2.embed(xs[0]);
    const Vec e1 = enc2.embed(xs[1]);
    Mat E(2, 2);
    E << e0.head(2), e1.head(2);  // columns
    Mat W = Mat::Zero(2, 4);
    W.leftCols(2) = E.inverse();
    enc2.hidden_layer().weight().value = W;
    enc2.hidden_layer().bias().value.setZero();
    protos = compute_prototypes(memory, enc2, std::vector<std::string>{"r"});
    EXPECT_TRUE(protos.at("r").p.isApprox((Vec(2) << 0.5, 0.5).finished(), 1e-9));

    // Staleness: a parameter change shows up in freshly computed prototypes.
    const Vec old = protos.at("r").p;
    enc2.hidden_layer().bias().value << 1.0, 1.0;
    EXPECT_TRUE(compute_prototypes(memory, enc2).at("r").p.isApprox(old + Vec::Ones(2), 1e-9));

    EXPECT_THROW(compute_prototypes(memory, enc2, std::vector<std::string>{"missing"}), Error);
}

TEST(Memory, JsonRoundTripAndErrors)
{
    const auto loaded = load_memory(kFixtures / "memory_2x3.json");
    EXPECT_EQ(loaded.capacity(), 3);
    EXPECT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded.instance_count(), 6u);
    EXPECT_EQ(memory_from_json(memory_to_json(loaded)), loaded);

    const auto path = std::filesystem::temp_directory_path() / "crecl_memory_roundtrip.json";
    save_memory(loaded, path);
    EXPECT_EQ(load_memory(path), loaded);
    std::filesystem::remove(path);

    auto doc = memory_to_json(loaded);
    doc["L"] = 0;
    EXPECT_THROW(memory_from_json(doc), FormatError);
    doc = memory_to_json(loaded);
    doc["version"] = 2;
    EXPECT_THROW(memory_from_json(doc), FormatError);
    doc = memory_to_json(loaded);
    doc["relations"]["r1"][0].erase("tokens");
    EXPECT_THROW(memory_from_json(doc), FormatError);
}

} // namespace
} // namespace crecl
