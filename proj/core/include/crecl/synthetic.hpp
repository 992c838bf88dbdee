#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "crecl/corpus.hpp"

namespace crecl {

/// Generator settings for a toy relation corpus. Every relation owns a pool
/// of head-entity and tail-entity words; sentences surround the two entity
/// spans with filler words shared by all relations. `entity_noise` is the
/// probability that an entity word is drawn from a pool shared by all
/// relations instead of the relation's own pool.
struct SyntheticSpec {
    int relations = 10;
    int instances_per_relation = 140;
    int entity_pool = 6;
    int shared_entity_pool = 20;
    int filler_pool = 50;
    double entity_noise = 0.2;
    int max_entity_len = 2;
    int max_filler_len = 5;
    std::uint64_t seed = 7;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

Corpus make_synthetic_corpus(const SyntheticSpec& spec);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_from_json(const nlohmann::json& doc);

} // namespace crecl
