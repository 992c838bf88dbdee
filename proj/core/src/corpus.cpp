#include "crecl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "crecl/error.hpp"
#include "crecl/rng.hpp"

namespace crecl {
namespace {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

bool blank(std::string_view text)
{
    return std::all_of(text.begin(), text.end(),
                       [](char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; });
}

template <class Json>
Json parse_json(std::string_view text)
{
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        const auto offset = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n');
        throw FormatError("malformed JSON at line " + std::to_string(line) + ", byte offset " +
                          std::to_string(e.byte) + ": " + e.what());
    }
}

std::string span_text(const Span& s)
{
    return "[" + std::to_string(s.start) + "," + std::to_string(s.end) + ")";
}

void add_validated(Corpus& corpus, Instance instance, std::size_t record)
{
    try {
        validate(instance);
    } catch (const FormatError& e) {
        throw FormatError("record " + std::to_string(record) + ": " + e.what());
    }
    corpus[instance.relation].push_back(std::move(instance));
}

template <class Json>
Span fewrel_span(const Json& entity, std::size_t record)
{
    // [name, id, [[p0, p1, ...], ...]] -- first mention, contiguous positions
    if (!entity.is_array() || entity.size() < 3 || !entity[2].is_array() || entity[2].empty() ||
        !entity[2][0].is_array() || entity[2][0].empty()) {
        throw FormatError("record " + std::to_string(record) + ": malformed entity positions");
    }
    const auto& positions = entity[2][0];
    int lo = positions[0].template get<int>();
    int hi = lo;
    for (const auto& p : positions) {
        lo = std::min(lo, p.template get<int>());
        hi = std::max(hi, p.template get<int>());
    }
    return Span{lo, hi + 1};
}

} // namespace

void validate(const Instance& instance)
{
    const int n = static_cast<int>(instance.tokens.size());
    auto check = [&](const Span& s, const char* role) {
        if (s.size() <= 0) {
            throw FormatError(std::string(role) + " span " + span_text(s) + " is empty");
        }
        if (s.start < 0 || s.end > n) {
            throw FormatError(std::string(role) + " span " + span_text(s) + " out of range for " +
                              std::to_string(n) + " tokens");
        }
    };
    check(instance.head, "head");
    check(instance.tail, "tail");
    if (instance.head == instance.tail) {
        throw FormatError("head and tail spans are identical " + span_text(instance.head));
    }
    if (instance.relation.empty()) {
        throw FormatError("empty relation label");
    }
}

nlohmann::json to_json(const Instance& instance)
{
    return {{"id", instance.id},
            {"tokens", instance.tokens},
            {"head", {instance.head.start, instance.head.end}},
            {"tail", {instance.tail.start, instance.tail.end}},
            {"relation", instance.relation}};
}

Instance instance_from_json(const nlohmann::json& record)
{
    try {
        Instance inst;
        inst.id = record.at("id").get<std::string>();
        inst.tokens = record.at("tokens").get<std::vector<std::string>>();
        inst.head = Span{record.at("head").at(0).get<int>(), record.at("head").at(1).get<int>()};
        inst.tail = Span{record.at("tail").at(0).get<int>(), record.at("tail").at(1).get<int>()};
        inst.relation = record.at("relation").get<std::string>();
        validate(inst);
        return inst;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed instance record: ") + e.what());
    }
}

CorpusFormat parse_corpus_format(std::string_view tag)
{
    if (tag == "fewrel" || tag == "fewrel-json") {
        return CorpusFormat::fewrel_json;
    }
    if (tag == "tacred" || tag == "tacred-json") {
        return CorpusFormat::tacred_json;
    }
    throw FormatError("unknown corpus format '" + std::string(tag) + "'");
}

std::string_view to_string(CorpusFormat format)
{
    return format == CorpusFormat::fewrel_json ? "fewrel-json" : "tacred-json";
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format)
{
    const std::string text = read_file(path);
    return format == CorpusFormat::fewrel_json ? parse_fewrel(text) : parse_tacred(text);
}

Corpus parse_fewrel(std::string_view text)
{
    if (blank(text)) {
        throw FormatError("no instances");
    }
    const auto doc = parse_json<nlohmann::ordered_json>(text);
    if (!doc.is_object()) {
        throw FormatError("fewrel-json: top level must be an object of relation -> records");
    }
    Corpus corpus;
    std::size_t record = 0;
    for (const auto& [relation, records] : doc.items()) {
        if (!records.is_array()) {
            throw FormatError("fewrel-json: relation '" + relation + "' must map to an array");
        }
        std::size_t ordinal = 0;
        for (const auto& rec : records) {
            ++record;
            Instance inst;
            try {
                inst.tokens = rec.at("tokens").get<std::vector<std::string>>();
                inst.head = fewrel_span(rec.at("h"), record);
                inst.tail = fewrel_span(rec.at("t"), record);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("record " + std::to_string(record) + ": " + e.what());
            }
            inst.relation = relation;
            inst.id = rec.contains("id") ? rec["id"].get<std::string>()
                                         : relation + "#" + std::to_string(ordinal);
            ++ordinal;
            add_validated(corpus, std::move(inst), record);
        }
    }
    if (corpus.empty()) {
        throw FormatError("no instances");
    }
    return corpus;
}

Corpus parse_tacred(std::string_view text)
{
    if (blank(text)) {
        throw FormatError("no instances");
    }
    const auto doc = parse_json<nlohmann::json>(text);
    if (!doc.is_array()) {
        throw FormatError("tacred-json: top level must be an array of records");
    }
    Corpus corpus;
    std::map<std::string, std::size_t> ordinals;
    std::size_t record = 0;
    for (const auto& rec : doc) {
        ++record;
        Instance inst;
        try {
            inst.tokens = rec.at("token").get<std::vector<std::string>>();
            inst.head = Span{rec.at("subj_start").get<int>(), rec.at("subj_end").get<int>() + 1};
            inst.tail = Span{rec.at("obj_start").get<int>(), rec.at("obj_end").get<int>() + 1};
            inst.relation = rec.at("relation").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("record " + std::to_string(record) + ": " + e.what());
        }
        const std::size_t ordinal = ordinals[inst.relation]++;
        inst.id = rec.contains("id") ? rec["id"].get<std::string>()
                                     : inst.relation + "#" + std::to_string(ordinal);
        add_validated(corpus, std::move(inst), record);
    }
    if (corpus.empty()) {
        throw FormatError("no instances");
    }
    return corpus;
}

std::map<std::string, std::size_t> relation_counts(const Corpus& corpus)
{
    std::map<std::string, std::size_t> counts;
    for (const auto& [relation, instances] : corpus) {
        counts[relation] = instances.size();
    }
    return counts;
}

std::size_t instance_count(const Corpus& corpus)
{
    std::size_t n = 0;
    for (const auto& [relation, instances] : corpus) {
        n += instances.size();
    }
    return n;
}

Corpus drop_relation(const Corpus& corpus, const std::string& relation)
{
    if (!corpus.contains(relation)) {
        throw Error("unknown relation '" + relation + "'");
    }
    Corpus out = corpus;
    out.erase(relation);
    return out;
}

SplitCorpus cap_samples(const Corpus& corpus, std::size_t max_train, std::size_t max_test,
                        std::uint64_t seed)
{
    if (max_train < 1 || max_test < 1) {
        throw Error("cap_samples: caps must be at least 1");
    }
    Rng rng(seed);
    SplitCorpus split;
    for (const auto& [relation, instances] : corpus) {
        if (instances.size() < 2) {
            throw Error("relation '" + relation + "' has fewer than 2 instances; cannot split");
        }
        std::vector<std::size_t> order(instances.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        const std::size_t n_test = std::min(max_test, instances.size() - 1);
        const std::size_t n_train = std::min(max_train, instances.size() - n_test);
        auto& test = split.test[relation];
        auto& train = split.train[relation];
        for (std::size_t i = 0; i < n_test; ++i) {
            test.push_back(instances[order[i]]);
        }
        for (std::size_t i = n_test; i < n_test + n_train; ++i) {
            train.push_back(instances[order[i]]);
        }
    }
    return split;
}

TaskStream assign_tasks(const SplitCorpus& split, const std::vector<std::vector<std::string>>& groups,
                        std::uint64_t seed)
{
    TaskStream stream;
    stream.seed = seed;
    int index = 0;
    for (const auto& group : groups) {
        Task task;
        task.index = ++index;
        task.relations = group;
        std::sort(task.relations.begin(), task.relations.end());
        for (const auto& relation : task.relations) {
            auto train = split.train.find(relation);
            auto test = split.test.find(relation);
            if (train == split.train.end() || test == split.test.end()) {
                throw Error("task " + std::to_string(task.index) + ": unknown relation '" + relation + "'");
            }
            task.train.insert(task.train.end(), train->second.begin(), train->second.end());
            task.test.insert(task.test.end(), test->second.begin(), test->second.end());
        }
        stream.tasks.push_back(std::move(task));
    }
    validate(stream);
    return stream;
}

TaskStream partition_tasks(const SplitCorpus& split, int num_tasks, std::uint64_t seed)
{
    if (num_tasks < 1) {
        throw Error("num_tasks must be at least 1");
    }
    std::vector<std::string> relations;
    for (const auto& [relation, instances] : split.train) {
        relations.push_back(relation);
    }
    if (static_cast<std::size_t>(num_tasks) > relations.size()) {
        throw Error("num_tasks (" + std::to_string(num_tasks) + ") exceeds relation count (" +
                    std::to_string(relations.size()) + ")");
    }
    Rng rng(seed);
    rng.shuffle(relations);
    std::vector<std::vector<std::string>> groups(static_cast<std::size_t>(num_tasks));
    for (std::size_t i = 0; i < relations.size(); ++i) {
        groups[i % groups.size()].push_back(relations[i]);
    }
    return assign_tasks(split, groups, seed);
}

void validate(const TaskStream& stream)
{
    std::set<std::string> seen;
    for (const auto& task : stream.tasks) {
        if (task.relations.empty()) {
            throw Error("task " + std::to_string(task.index) + " has no relations");
        }
        const std::set<std::string> own(task.relations.begin(), task.relations.end());
        for (const auto& relation : task.relations) {
            if (!seen.insert(relation).second) {
                throw Error("relation '" + relation + "' appears in more than one task");
            }
        }
        for (const auto* split : {&task.train, &task.test}) {
            for (const auto& inst : *split) {
                if (!own.contains(inst.relation)) {
                    throw Error("task " + std::to_string(task.index) + ": instance '" + inst.id +
                                "' has relation outside the task");
                }
            }
        }
    }
}

nlohmann::json stream_to_json(const TaskStream& stream)
{
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& task : stream.tasks) {
        nlohmann::json train = nlohmann::json::array();
        nlohmann::json test = nlohmann::json::array();
        for (const auto& inst : task.train) {
            train.push_back(inst.id);
        }
        for (const auto& inst : task.test) {
            test.push_back(inst.id);
        }
        tasks.push_back({{"index", task.index}, {"relations", task.relations}, {"train", train}, {"test", test}});
    }
    return {{"format", "crecl-task-stream"}, {"version", 1}, {"seed", stream.seed}, {"tasks", tasks}};
}

TaskStream stream_from_json(const nlohmann::json& doc, const Corpus& corpus)
{
    std::unordered_map<std::string, const Instance*> by_id;
    for (const auto& [relation, instances] : corpus) {
        for (const auto& inst : instances) {
            if (!by_id.emplace(inst.id, &inst).second) {
                throw FormatError("duplicate instance id '" + inst.id + "' in corpus");
            }
        }
    }
    auto resolve = [&](const nlohmann::json& ids, std::vector<Instance>& out) {
        for (const auto& id : ids) {
            const auto it = by_id.find(id.get<std::string>());
            if (it == by_id.end()) {
                throw FormatError("stream references unknown instance '" + id.get<std::string>() + "'");
            }
            out.push_back(*it->second);
        }
    };
    TaskStream stream;
    try {
        if (doc.value("version", 0) != 1) {
            throw FormatError("unsupported task stream version");
        }
        stream.seed = doc.at("seed").get<std::uint64_t>();
        for (const auto& t : doc.at("tasks")) {
            Task task;
            task.index = t.at("index").get<int>();
            task.relations = t.at("relations").get<std::vector<std::string>>();
            resolve(t.at("train"), task.train);
            resolve(t.at("test"), task.test);
            stream.tasks.push_back(std::move(task));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed task stream: ") + e.what());
    }
    validate(stream);
    return stream;
}

void save_stream(const TaskStream& stream, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << stream_to_json(stream).dump(1) << '\n';
}

TaskStream load_stream(const std::filesystem::path& path, const Corpus& corpus)
{
    return stream_from_json(parse_json<nlohmann::json>(read_file(path)), corpus);
}

} // namespace crecl
