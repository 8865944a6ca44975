#include "faceval/model.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

namespace faceval {

namespace {

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

std::string to_string(const UnitRef& unit) {
    return unit.turn_index ? unit.dialogue_id + "#" + std::to_string(*unit.turn_index) : unit.dialogue_id;
}

std::vector<Violation> validate_dialogue(const Dialogue& dialogue) {
    std::vector<Violation> out;
    if (dialogue.dialogue_id.empty()) out.push_back({"dialogue_id", "empty dialogue_id"});
    bool has_user = false;
    bool has_system = false;
    bool consecutive = true;
    for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
        const auto& u = dialogue.utterances[i];
        if (u.index != static_cast<int>(i)) consecutive = false;
        if (is_blank(u.text))
            out.push_back({"utterances[" + std::to_string(i) + "].text", "empty text"});
        (u.speaker == Speaker::System ? has_system : has_user) = true;
    }
    if (!consecutive) out.push_back({"utterances.index", "non-consecutive indices"});
    if (!has_system) out.push_back({"utterances.speaker", "no system utterance"});
    if (!has_user) out.push_back({"utterances.speaker", "no user utterance"});
    return out;
}

std::vector<Violation> validate_annotation(const AnnotationRecord& record, const AspectSpec& spec,
                                           const Dialogue* dialogue) {
    std::vector<Violation> out;
    if (record.aspect != spec.name) out.push_back({"aspect", "aspect mismatch: " + record.aspect});
    if (record.label < spec.min_score || record.label > spec.max_score)
        out.push_back({"label", "label " + std::to_string(record.label) + " outside " + spec.name + " range [" +
                                    std::to_string(spec.min_score) + ", " + std::to_string(spec.max_score) + "]"});
    const bool turn_level = spec.level == AspectLevel::Turn;
    if (turn_level && !record.unit.turn_index)
        out.push_back({"unit.turn_index", "turn-level aspect requires turn_index"});
    if (!turn_level && record.unit.turn_index)
        out.push_back({"unit.turn_index", "dialogue-level aspect forbids turn_index"});
    if (dialogue && record.unit.turn_index) {
        const int t = *record.unit.turn_index;
        if (t < 0 || t >= static_cast<int>(dialogue->utterances.size()))
            out.push_back({"unit.turn_index", "turn_index out of range"});
        else if (dialogue->utterances[static_cast<std::size_t>(t)].speaker != Speaker::System)
            out.push_back({"unit.turn_index", "turn_index does not refer to a system utterance"});
    }
    return out;
}

void validate_lineage(const std::vector<Instruction>& instructions) {
    std::unordered_map<std::string, const Instruction*> by_id;
    for (const auto& ins : instructions) {
        if (is_blank(ins.text)) throw SchemaError("instruction " + ins.instruction_id + " has empty text");
        by_id[ins.instruction_id] = &ins;
    }
    for (const auto& ins : instructions) {
        std::set<std::string> seen{ins.instruction_id};
        const Instruction* cur = &ins;
        while (cur->parent_id) {
            if (!seen.insert(*cur->parent_id).second)
                throw SchemaError("instruction lineage cycle through " + *cur->parent_id);
            auto it = by_id.find(*cur->parent_id);
            if (it == by_id.end()) break;
            cur = it->second;
        }
    }
}

std::string make_particle_id(std::string_view dialogue_id, int turn_index, int ordinal) {
    std::uint64_t h = fnv1a64(dialogue_id);
    h = fnv1a64("\x1f" + std::to_string(turn_index), h);
    h = fnv1a64("\x1f" + std::to_string(ordinal), h);
    return "p-" + to_hex(h);
}

std::string make_instruction_id(std::string_view aspect, std::string_view text) {
    std::uint64_t h = fnv1a64(aspect);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(text, h);
    return "ins-" + to_hex(h, 12);
}

const std::vector<AspectSpec>& builtin_aspects() {
    static const std::vector<AspectSpec> specs{
        {"Relevance", AspectLevel::Turn, 0, 3,
         "Does the assistant's response make sense and meet the user's interests?"},
        {"Interestingness", AspectLevel::Turn, 0, 2,
         "Does the response make the user want to continue the conversation?"},
        {"Understanding", AspectLevel::Dialogue, 0, 2,
         "Does the assistant understand the user's request and try to fulfill it?"},
        {"TaskCompletion", AspectLevel::Dialogue, 0, 2,
         "Does the assistant make suggestions that the user finally accepts?"},
        {"Efficiency", AspectLevel::Dialogue, 0, 1,
         "Does the assistant suggest items matching the user's interests within the first three interactions?"},
        {"InterestArousal", AspectLevel::Dialogue, 0, 2,
         "Does the assistant try to spark the user's interest in something new?"},
        {"OverallImpression", AspectLevel::Dialogue, 0, 4,
         "What is the overall impression of the assistant's performance?"},
    };
    return specs;
}

AspectRegistry::AspectRegistry() : specs_(builtin_aspects()) {}

AspectRegistry AspectRegistry::empty() { return AspectRegistry(EmptyTag{}); }

void AspectRegistry::add(AspectSpec spec) {
    if (spec.name.empty()) throw ConfigError("aspect name must be non-empty");
    if (spec.min_score >= spec.max_score)
        throw ConfigError("aspect " + spec.name + ": min_score must be < max_score");
    for (auto& s : specs_) {
        if (s.name == spec.name) {
            s = std::move(spec);
            return;
        }
    }
    specs_.push_back(std::move(spec));
}

const AspectSpec* AspectRegistry::find(std::string_view name) const noexcept {
    for (const auto& s : specs_)
        if (s.name == name) return &s;
    return nullptr;
}

const AspectSpec& AspectRegistry::get(std::string_view name) const {
    if (const auto* s = find(name)) return *s;
    throw ConfigError("unknown aspect '" + std::string(name) + "'; known aspects: " + join(names(), ", "));
}

std::vector<std::string> AspectRegistry::names() const {
    std::vector<std::string> out;
    out.reserve(specs_.size());
    for (const auto& s : specs_) out.push_back(s.name);
    return out;
}

std::string to_string(Speaker s) { return s == Speaker::User ? "user" : "system"; }

std::string to_string(DialogueAct a) {
    switch (a) {
        case DialogueAct::Greetings: return "greetings";
        case DialogueAct::PreferenceElicitation: return "preference_elicitation";
        case DialogueAct::Recommendation: return "recommendation";
        case DialogueAct::Goodbye: return "goodbye";
        case DialogueAct::Others: return "others";
    }
    return "others";
}

std::string display_name(DialogueAct a) {
    switch (a) {
        case DialogueAct::Greetings: return "Greetings";
        case DialogueAct::PreferenceElicitation: return "Preference elicitation";
        case DialogueAct::Recommendation: return "Recommendation";
        case DialogueAct::Goodbye: return "Goodbye";
        case DialogueAct::Others: return "Others";
    }
    return "Others";
}

std::string to_string(AspectLevel l) { return l == AspectLevel::Turn ? "turn" : "dialogue"; }

Speaker speaker_from_string(std::string_view s) {
    if (s == "user") return Speaker::User;
    if (s == "system") return Speaker::System;
    throw SchemaError("unknown speaker '" + std::string(s) + "'");
}

DialogueAct act_from_string(std::string_view s) {
    for (auto a : kAllActs)
        if (to_string(a) == s) return a;
    throw SchemaError("unknown dialogue act '" + std::string(s) + "'");
}

AspectLevel level_from_string(std::string_view s) {
    if (s == "turn") return AspectLevel::Turn;
    if (s == "dialogue") return AspectLevel::Dialogue;
    throw SchemaError("unknown aspect level '" + std::string(s) + "'");
}

std::size_t word_count(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

void to_json(json& j, const Utterance& u) {
    j = json{{"index", u.index}, {"speaker", to_string(u.speaker)}, {"text", u.text}};
}

void from_json(const json& j, Utterance& u) {
    u.index = j.at("index").get<int>();
    u.speaker = speaker_from_string(j.at("speaker").get<std::string>());
    u.text = j.at("text").get<std::string>();
}

void to_json(json& j, const Dialogue& d) {
    j = json{{"dialogue_id", d.dialogue_id}, {"system_id", d.system_id}, {"utterances", d.utterances}};
}

void from_json(const json& j, Dialogue& d) {
    d.dialogue_id = j.at("dialogue_id").get<std::string>();
    d.system_id = j.at("system_id").get<std::string>();
    d.utterances = j.at("utterances").get<std::vector<Utterance>>();
}

void to_json(json& j, const Particle& p) {
    j = json{{"particle_id", p.particle_id}, {"dialogue_id", p.dialogue_id}, {"turn_index", p.turn_index},
             {"act", to_string(p.act)},      {"mention", p.mention},         {"feedback", nullptr}};
    if (p.feedback) j["feedback"] = *p.feedback;
}

void from_json(const json& j, Particle& p) {
    p.particle_id = j.at("particle_id").get<std::string>();
    p.dialogue_id = j.at("dialogue_id").get<std::string>();
    p.turn_index = j.at("turn_index").get<int>();
    p.act = act_from_string(j.at("act").get<std::string>());
    p.mention = j.at("mention").get<std::string>();
    if (p.mention.empty()) throw SchemaError("particle " + p.particle_id + " has empty mention");
    p.feedback.reset();
    if (auto it = j.find("feedback"); it != j.end() && !it->is_null()) p.feedback = it->get<std::string>();
}

void to_json(json& j, const UnitRef& u) {
    j = json{{"dialogue_id", u.dialogue_id}};
    if (u.turn_index) j["turn_index"] = *u.turn_index;
}

void from_json(const json& j, UnitRef& u) {
    u.dialogue_id = j.at("dialogue_id").get<std::string>();
    u.turn_index.reset();
    if (auto it = j.find("turn_index"); it != j.end() && !it->is_null()) u.turn_index = it->get<int>();
}

void to_json(json& j, const AnnotationRecord& a) {
    j = json{{"unit", a.unit}, {"aspect", a.aspect}, {"label", a.label}};
}

void from_json(const json& j, AnnotationRecord& a) {
    a.unit = j.at("unit").get<UnitRef>();
    a.aspect = j.at("aspect").get<std::string>();
    const auto& label = j.at("label");
    if (!label.is_number_integer()) throw SchemaError("label must be an integer");
    a.label = label.get<int>();
}

void to_json(json& j, const Instruction& i) {
    j = json{{"instruction_id", i.instruction_id}, {"aspect", i.aspect},
             {"text", i.text},                     {"parent_id", nullptr},
             {"iteration_born", i.iteration_born}};
    if (i.parent_id) j["parent_id"] = *i.parent_id;
}

void from_json(const json& j, Instruction& i) {
    i.instruction_id = j.at("instruction_id").get<std::string>();
    i.aspect = j.at("aspect").get<std::string>();
    i.text = j.at("text").get<std::string>();
    i.parent_id.reset();
    if (auto it = j.find("parent_id"); it != j.end() && !it->is_null()) i.parent_id = it->get<std::string>();
    i.iteration_born = j.value("iteration_born", 0);
}

void to_json(json& j, const AspectSpec& s) {
    j = json{{"name", s.name},
             {"level", to_string(s.level)},
             {"min_score", s.min_score},
             {"max_score", s.max_score},
             {"description", s.description}};
}

void from_json(const json& j, AspectSpec& s) {
    s.name = j.at("name").get<std::string>();
    s.level = level_from_string(j.at("level").get<std::string>());
    s.min_score = j.at("min_score").get<int>();
    s.max_score = j.at("max_score").get<int>();
    s.description = j.value("description", std::string{});
    if (s.min_score >= s.max_score) throw SchemaError("aspect " + s.name + ": min_score must be < max_score");
}

}  // namespace faceval
