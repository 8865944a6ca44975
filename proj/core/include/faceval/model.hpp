#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace faceval {

using json = nlohmann::json;

enum class Speaker { User, System };

struct Utterance {
    int index = 0;
    Speaker speaker = Speaker::User;
    std::string text;

    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
    std::string dialogue_id;
    std::string system_id;
    std::vector<Utterance> utterances;

    friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// The closed set of system intents a particle can carry.
enum class DialogueAct { Greetings, PreferenceElicitation, Recommendation, Goodbye, Others };

inline constexpr DialogueAct kAllActs[] = {DialogueAct::Greetings, DialogueAct::PreferenceElicitation,
                                           DialogueAct::Recommendation, DialogueAct::Goodbye,
                                           DialogueAct::Others};

/// Atomic evaluation unit: one statement of a system turn plus the user's reaction to it.
struct Particle {
    std::string particle_id;
    std::string dialogue_id;
    int turn_index = 0;  // index of the System utterance it was extracted from
    DialogueAct act = DialogueAct::Others;
    std::string mention;
    std::optional<std::string> feedback;  // absent when the user gave no evaluative reply

    friend bool operator==(const Particle&, const Particle&) = default;
};

enum class AspectLevel { Turn, Dialogue };

struct AspectSpec {
    std::string name;
    AspectLevel level = AspectLevel::Turn;
    int min_score = 0;
    int max_score = 1;
    std::string description;

    bool contains(double score) const noexcept { return score >= min_score && score <= max_score; }
    friend bool operator==(const AspectSpec&, const AspectSpec&) = default;
};

/// A turn (turn_index set) or a whole dialogue (turn_index empty).
struct UnitRef {
    std::string dialogue_id;
    std::optional<int> turn_index;

    friend auto operator<=>(const UnitRef&, const UnitRef&) = default;
    friend bool operator==(const UnitRef&, const UnitRef&) = default;
};

std::string to_string(const UnitRef& unit);

struct AnnotationRecord {
    UnitRef unit;
    std::string aspect;
    int label = 0;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// An evaluation prompt (task + chain-of-thought steps) with its lineage.
struct Instruction {
    std::string instruction_id;
    std::string aspect;
    std::string text;
    std::optional<std::string> parent_id;
    int iteration_born = 0;

    friend bool operator==(const Instruction&, const Instruction&) = default;
};

struct Violation {
    std::string field;
    std::string rule;

    friend bool operator==(const Violation&, const Violation&) = default;
};

/// Reports every Dialogue/Utterance invariant that does not hold. Empty means valid.
std::vector<Violation> validate_dialogue(const Dialogue& dialogue);

/// Checks a label against its aspect and, when given, the dialogue it refers to.
std::vector<Violation> validate_annotation(const AnnotationRecord& record, const AspectSpec& spec,
                                           const Dialogue* dialogue = nullptr);

/// Throws SchemaError if an instruction's parent chain loops or texts are empty.
void validate_lineage(const std::vector<Instruction>& instructions);

/// Deterministic id from (dialogue_id, turn_index, ordinal within the decomposition).
std::string make_particle_id(std::string_view dialogue_id, int turn_index, int ordinal);

/// Deterministic id for an instruction text under an aspect.
std::string make_instruction_id(std::string_view aspect, std::string_view text);

/// The seven aspects annotated for conversational recommendation.
const std::vector<AspectSpec>& builtin_aspects();

/// Name-indexed set of aspects. Starts with the built-ins; custom specs may be added.
class AspectRegistry {
public:
    AspectRegistry();
    static AspectRegistry empty();

    void add(AspectSpec spec);
    const AspectSpec& get(std::string_view name) const;  // throws ConfigError listing known names
    const AspectSpec* find(std::string_view name) const noexcept;
    std::vector<std::string> names() const;

private:
    struct EmptyTag {};
    explicit AspectRegistry(EmptyTag) {}
    std::vector<AspectSpec> specs_;
};

std::string to_string(Speaker s);
std::string to_string(DialogueAct a);
std::string to_string(AspectLevel l);
std::string display_name(DialogueAct a);
Speaker speaker_from_string(std::string_view s);
DialogueAct act_from_string(std::string_view s);  // exact snake_case names only
AspectLevel level_from_string(std::string_view s);

/// Whitespace-separated token count: "a b  c" has 3 words.
std::size_t word_count(std::string_view text);

// Canonical JSON shapes. Enums are lowercase snake_case strings.
void to_json(json& j, const Utterance& u);
void from_json(const json& j, Utterance& u);
void to_json(json& j, const Dialogue& d);
void from_json(const json& j, Dialogue& d);
void to_json(json& j, const Particle& p);
void from_json(const json& j, Particle& p);
void to_json(json& j, const UnitRef& u);
void from_json(const json& j, UnitRef& u);
void to_json(json& j, const AnnotationRecord& a);
void from_json(const json& j, AnnotationRecord& a);
void to_json(json& j, const Instruction& i);
void from_json(const json& j, Instruction& i);
void to_json(json& j, const AspectSpec& s);
void from_json(const json& j, AspectSpec& s);

}  // namespace faceval
