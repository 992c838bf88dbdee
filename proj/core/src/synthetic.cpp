#include "crecl/synthetic.hpp"

#include <cstdio>

#include "crecl/error.hpp"
#include "crecl/rng.hpp"

namespace crecl {
namespace {

std::string relation_name(int r)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "rel_%02d", r);
    return buf;
}

} // namespace

Corpus make_synthetic_corpus(const SyntheticSpec& spec)
{
    if (spec.relations < 1 || spec.instances_per_relation < 2 || spec.entity_pool < 1 ||
        spec.filler_pool < 1 || spec.max_entity_len < 1 || spec.max_filler_len < 0) {
        throw Error("invalid synthetic corpus settings");
    }
    Rng rng(spec.seed);
    Corpus corpus;
    for (int r = 0; r < spec.relations; ++r) {
        const std::string relation = relation_name(r);
        auto entity_word = [&](char role) {
            if (spec.shared_entity_pool > 0 && rng.bernoulli(spec.entity_noise)) {
                return "ent_" + std::to_string(rng.below(static_cast<std::size_t>(spec.shared_entity_pool)));
            }
            return relation + "_" + role + std::to_string(rng.below(static_cast<std::size_t>(spec.entity_pool)));
        };
        auto filler = [&](std::vector<std::string>& tokens) {
            const auto n = rng.below(static_cast<std::size_t>(spec.max_filler_len) + 1);
            for (std::size_t i = 0; i < n; ++i) {
                tokens.push_back("w" + std::to_string(rng.below(static_cast<std::size_t>(spec.filler_pool))));
            }
        };
        auto entity = [&](std::vector<std::string>& tokens, char role) {
            const Span span{static_cast<int>(tokens.size()), 0};
            const auto n = 1 + rng.below(static_cast<std::size_t>(spec.max_entity_len));
            for (std::size_t i = 0; i < n; ++i) {
                tokens.push_back(entity_word(role));
            }
            return Span{span.start, static_cast<int>(tokens.size())};
        };

        auto& instances = corpus[relation];
        for (int i = 0; i < spec.instances_per_relation; ++i) {
            Instance inst;
            inst.id = relation + "#" + std::to_string(i);
            inst.relation = relation;
            const bool head_first = rng.bernoulli(0.5);
            filler(inst.tokens);
            if (head_first) {
                inst.head = entity(inst.tokens, 'h');
                filler(inst.tokens);
                inst.tail = entity(inst.tokens, 't');
            } else {
                inst.tail = entity(inst.tokens, 't');
                filler(inst.tokens);
                inst.head = entity(inst.tokens, 'h');
            }
            filler(inst.tokens);
            instances.push_back(std::move(inst));
        }
    }
    return corpus;
}

nlohmann::json to_json(const SyntheticSpec& spec)
{
    return {{"relations", spec.relations},
            {"instances_per_relation", spec.instances_per_relation},
            {"entity_pool", spec.entity_pool},
            {"shared_entity_pool", spec.shared_entity_pool},
            {"filler_pool", spec.filler_pool},
            {"entity_noise", spec.entity_noise},
            {"max_entity_len", spec.max_entity_len},
            {"max_filler_len", spec.max_filler_len},
            {"seed", spec.seed}};
}

SyntheticSpec synthetic_from_json(const nlohmann::json& doc)
{
    SyntheticSpec spec;
    spec.relations = doc.value("relations", spec.relations);
    spec.instances_per_relation = doc.value("instances_per_relation", spec.instances_per_relation);
    spec.entity_pool = doc.value("entity_pool", spec.entity_pool);
    spec.shared_entity_pool = doc.value("shared_entity_pool", spec.shared_entity_pool);
    spec.filler_pool = doc.value("filler_pool", spec.filler_pool);
    spec.entity_noise = doc.value("entity_noise", spec.entity_noise);
    spec.max_entity_len = doc.value("max_entity_len", spec.max_entity_len);
    spec.max_filler_len = doc.value("max_filler_len", spec.max_filler_len);
    spec.seed = doc.value("seed", spec.seed);
    return spec;
}

} // namespace crecl
