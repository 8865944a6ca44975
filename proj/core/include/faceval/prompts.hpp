#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faceval/model.hpp"

namespace faceval::prompts {

// Opening lines. They double as markers for classifying prompts (see classify).
inline constexpr std::string_view kDecomposerOpening = "Your task is to extract conversation nuggets";
inline constexpr std::string_view kEvaluationOpening = "You are an expert evaluator of conversational assistants.";
inline constexpr std::string_view kDirectOpening = "You are annotating a conversation between a user and an assistant.";
inline constexpr std::string_view kGradientOpening =
    "Examine the original instructions, predicted nugget score, and gold score.";
inline constexpr std::string_view kRewriteOpening = "Propose new instructions of ~50 words based on";
inline constexpr std::string_view kNoFeedback = "No user feedback available.";

/// Seed evaluation instruction used to start optimization.
std::string seed_instruction_text();

enum class Kind { Decomposition, Evaluation, Direct, Gradient, Rewrite, Combined, Unknown };
Kind classify(std::string_view prompt);

/// Text between <tag ...> and </tag>, trimmed. Searches from the first opening tag.
std::optional<std::string> extract_section(std::string_view text, std::string_view tag);
/// Every <tag>...</tag> body in order.
std::vector<std::string> extract_sections(std::string_view text, std::string_view tag);

std::string trim(std::string_view s);

/// "[i] User: ..." lines for utterances [first, last], marking `target` when set.
std::string render_turns(const Dialogue& d, int first, int last, std::optional<int> target = std::nullopt);

struct DecomposerInput {
    std::vector<Utterance> history;
    Utterance response;
    std::optional<Utterance> user_reply;
};

/// Decomposer prompt. History is truncated oldest-first to fit `history_word_budget` (0 = unlimited).
std::string render_decomposer(const DecomposerInput& in, std::size_t history_word_budget = 0);

/// Context rendered around a particle: the dialogue up to the user's reply to the particle's turn.
std::string particle_context(const Dialogue& d, int turn_index);

std::string render_evaluation(const AspectSpec& aspect, std::string_view context, const Particle& particle,
                              std::string_view instruction_text);

/// Unit rendering for the direct baseline. Turn units mark the target response.
std::string unit_content(const Dialogue& d, std::optional<int> turn_index);
std::string render_direct(const AspectSpec& aspect, std::string_view unit_content);

std::string render_gradient(const AspectSpec& aspect, std::string_view instruction_text, const Particle& particle,
                            double predicted, int gold);
std::string render_rewrite(const AspectSpec& aspect, std::string_view instruction_text, std::string_view gradient);
std::string render_combined(const AspectSpec& aspect, std::string_view instruction_text, const Particle& particle,
                            double predicted, int gold);

}  // namespace faceval::prompts
