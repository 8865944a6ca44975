#include "faceval/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

namespace faceval {

namespace {

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open file", path.string());
    std::vector<T> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line).get<T>());
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), path.string() + ":" + std::to_string(lineno));
        }
    }
    return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& item : items) out << json(item).dump() << '\n';
}

}  // namespace

CorpusManifest CorpusManifest::from_json(const json& doc, const std::filesystem::path& base_dir) {
    CorpusManifest m;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    try {
        m.name = doc.value("name", std::string("corpus"));
        for (const auto& p : doc.at("dialogues")) m.dialogue_files.push_back(resolve(p.get<std::string>()));
        if (doc.contains("annotations"))
            for (const auto& p : doc.at("annotations")) m.annotation_files.push_back(resolve(p.get<std::string>()));
        if (doc.contains("aspects")) {
            for (const auto& a : doc.at("aspects")) {
                if (a.is_string()) {
                    m.aspects.push_back(a.get<std::string>());
                } else {
                    auto spec = a.get<AspectSpec>();
                    m.aspects.push_back(spec.name);
                    m.custom_aspects.push_back(std::move(spec));
                }
            }
        }
        if (doc.contains("split")) {
            const auto& s = doc.at("split");
            m.split.train_fraction = s.value("train_fraction", 0.6);
            m.split.seed = s.value("seed", std::uint64_t{0});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed corpus manifest: ") + e.what());
    }
    if (!(m.split.train_fraction > 0.0 && m.split.train_fraction < 1.0))
        throw ConfigError("split.train_fraction must lie in (0, 1)");
    return m;
}

CorpusManifest CorpusManifest::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus manifest " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("corpus manifest " + path.string() + " is not valid JSON");
    return from_json(doc, path.parent_path());
}

json CorpusManifest::to_json() const {
    json aspects_json = json::array();
    for (const auto& name : aspects) {
        auto it = std::find_if(custom_aspects.begin(), custom_aspects.end(),
                               [&](const AspectSpec& s) { return s.name == name; });
        aspects_json.push_back(it == custom_aspects.end() ? json(name) : json(*it));
    }
    json dialogues_json = json::array();
    for (const auto& p : dialogue_files) dialogues_json.push_back(p.string());
    json annotations_json = json::array();
    for (const auto& p : annotation_files) annotations_json.push_back(p.string());
    return json{{"name", name},
                {"dialogues", dialogues_json},
                {"annotations", annotations_json},
                {"aspects", aspects_json},
                {"split", {{"train_fraction", split.train_fraction}, {"seed", split.seed}}}};
}

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path) { return read_jsonl<Dialogue>(path); }

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
    return read_jsonl<AnnotationRecord>(path);
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
    write_jsonl(path, dialogues);
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& annotations) {
    write_jsonl(path, annotations);
}

DialogueMap Corpus::by_id() const {
    DialogueMap out;
    for (const auto& d : dialogues) out.emplace(d.dialogue_id, d);
    return out;
}

std::vector<AnnotationRecord> Corpus::annotations_for(std::string_view aspect) const {
    std::vector<AnnotationRecord> out;
    for (const auto& a : annotations)
        if (a.aspect == aspect) out.push_back(a);
    return out;
}

Corpus load_corpus(const CorpusManifest& manifest) {
    Corpus c;
    c.name = manifest.name;
    c.split = manifest.split;
    for (const auto& spec : manifest.custom_aspects) c.aspects.add(spec);

    std::map<std::string, std::size_t> index;
    for (const auto& file : manifest.dialogue_files) {
        std::ifstream in(file);
        if (!in) throw SchemaError("cannot open dialogue file", file.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const std::string where = file.string() + ":" + std::to_string(lineno);
            Dialogue d;
            try {
                d = json::parse(line).get<Dialogue>();
            } catch (const std::exception& e) {
                throw SchemaError(e.what(), where);
            }
            if (auto v = validate_dialogue(d); !v.empty())
                throw SchemaError("dialogue " + d.dialogue_id + ": " + v.front().field + ": " + v.front().rule, where);
            if (!index.emplace(d.dialogue_id, c.dialogues.size()).second)
                throw SchemaError("duplicate dialogue_id " + d.dialogue_id, where);
            c.dialogues.push_back(std::move(d));
        }
    }

    std::set<std::string> seen_aspects;
    std::set<std::pair<std::string, UnitRef>> seen_units;
    for (const auto& file : manifest.annotation_files) {
        std::ifstream in(file);
        if (!in) throw SchemaError("cannot open annotation file", file.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const std::string where = file.string() + ":" + std::to_string(lineno);
            AnnotationRecord a;
            try {
                a = json::parse(line).get<AnnotationRecord>();
            } catch (const std::exception& e) {
                throw SchemaError(e.what(), where);
            }
            const AspectSpec* spec = c.aspects.find(a.aspect);
            if (!spec) throw SchemaError("unknown aspect " + a.aspect, where);
            auto it = index.find(a.unit.dialogue_id);
            if (it == index.end()) throw SchemaError("annotation references unknown dialogue_id " + a.unit.dialogue_id, where);
            if (auto v = validate_annotation(a, *spec, &c.dialogues[it->second]); !v.empty())
                throw SchemaError(v.front().field + ": " + v.front().rule, where);
            if (!seen_units.emplace(a.aspect, a.unit).second)
                throw SchemaError("duplicate " + a.aspect + " label for " + to_string(a.unit), where);
            seen_aspects.insert(a.aspect);
            c.annotations.push_back(std::move(a));
        }
    }

    if (!manifest.aspects.empty()) {
        for (const auto& name : manifest.aspects) c.aspects.get(name);
        c.aspect_names = manifest.aspects;
    } else {
        for (const auto& name : c.aspects.names())
            if (seen_aspects.count(name)) c.aspect_names.push_back(name);
    }
    return c;
}

Split split_dialogues(std::vector<std::string> ids, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw PreconditionError("train_fraction must lie in (0, 1)");
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const std::size_t n = ids.size();
    if (n < 2) throw PreconditionError("split needs at least 2 dialogues");
    std::mt19937_64 rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(ids[i], ids[uniform_index(rng, i + 1)]);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    Split s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    return s;
}

Split split_dialogues(const std::vector<Dialogue>& dialogues, const SplitSpec& spec) {
    std::vector<std::string> ids;
    ids.reserve(dialogues.size());
    for (const auto& d : dialogues) ids.push_back(d.dialogue_id);
    return split_dialogues(std::move(ids), spec.train_fraction, spec.seed);
}

JoinedUnits join_units(const AspectSpec& aspect, const std::vector<AnnotationRecord>& annotations,
                       const ScoreTable& scores) {
    if (scores.aspect != aspect.name || scores.level != aspect.level)
        throw PreconditionError("score table for " + scores.aspect + " cannot be joined with aspect " + aspect.name);
    std::map<UnitRef, double> labels;
    for (const auto& a : annotations) {
        if (a.aspect != aspect.name) continue;
        if (a.unit.turn_index.has_value() != (aspect.level == AspectLevel::Turn))
            throw PreconditionError("annotation level does not match aspect " + aspect.name);
        labels[a.unit] = a.label;
    }
    JoinedUnits out;
    std::set<UnitRef> scored;
    for (const auto& row : scores.rows) {
        scored.insert(row.unit);
        auto it = labels.find(row.unit);
        if (it == labels.end()) {
            out.missing_label.push_back(row.unit);
            continue;
        }
        out.units.push_back(row.unit);
        out.predicted.push_back(row.score);
        out.gold.push_back(it->second);
    }
    for (const auto& [unit, label] : labels)
        if (!scored.count(unit)) out.missing_score.push_back(unit);
    if (out.units.empty()) throw PreconditionError("empty join between scores and annotations for " + aspect.name);
    return out;
}

}  // namespace faceval
