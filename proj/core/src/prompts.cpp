#include "faceval/prompts.hpp"

#include <cctype>
#include <cstdio>
#include <deque>

namespace faceval::prompts {

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::string speaker_label(Speaker s) { return s == Speaker::User ? "User" : "Assistant"; }

std::string fmt_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string aspect_block(const AspectSpec& aspect) {
    return "<aspect name=\"" + aspect.name + "\" scale=\"" + std::to_string(aspect.min_score) + "-" +
           std::to_string(aspect.max_score) + "\">\n" + aspect.description + "\n</aspect>\n";
}

std::string particle_block(const Particle& p) {
    return "<particle>\nAct: " + display_name(p.act) + "\nMention: " + p.mention +
           "\nFeedback: " + (p.feedback ? *p.feedback : std::string(kNoFeedback)) + "\n</particle>\n";
}

std::string score_demand(const AspectSpec& aspect) {
    return "Reason step by step, then finish with a final line of the form \"Score: N\" where N is an integer from " +
           std::to_string(aspect.min_score) + " to " + std::to_string(aspect.max_score) + ".";
}

std::string gradient_body(const AspectSpec& aspect, std::string_view instruction_text, const Particle& particle,
                          double predicted, int gold) {
    std::string s;
    s += kGradientOpening;
    s += "\nAn evaluator followed the instruction below to score one conversation nugget for the aspect \"" +
         aspect.name + "\". Work through these items:\n"
         "1. Identify any inconsistency between the predicted score and the gold score, and what caused it.\n"
         "2. Judge whether the task description and the chain-of-thought steps of the instruction are correct "
         "and complete for this aspect.\n"
         "3. Suggest concrete edits to the instruction if they are necessary; say so if none are needed.\n\n";
    s += aspect_block(aspect);
    s += "<current_instruction>\n" + std::string(instruction_text) + "\n</current_instruction>\n";
    s += particle_block(particle);
    s += "<predicted_score>" + fmt_score(predicted) + "</predicted_score>\n";
    s += "<gold_score>" + std::to_string(gold) + "</gold_score>\n";
    return s;
}

}  // namespace

std::string seed_instruction_text() {
    return "Given the dialogue, evaluate the quality of the target nugget based on the given aspect. "
           "Step 1: Read the dialogue context and the aspect definition. "
           "Step 2: Examine the nugget's mention and the user's feedback to it. "
           "Step 3: Decide how well the nugget satisfies the aspect and assign an integer score on the given scale.";
}

Kind classify(std::string_view prompt) {
    if (starts_with(prompt, kGradientOpening))
        return prompt.find(kRewriteOpening) != std::string_view::npos ? Kind::Combined : Kind::Gradient;
    if (starts_with(prompt, kRewriteOpening)) return Kind::Rewrite;
    if (starts_with(prompt, kEvaluationOpening)) return Kind::Evaluation;
    if (starts_with(prompt, kDirectOpening)) return Kind::Direct;
    if (starts_with(prompt, kDecomposerOpening)) return Kind::Decomposition;
    return Kind::Unknown;
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> extract_sections(std::string_view text, std::string_view tag) {
    std::vector<std::string> out;
    const std::string open = "<" + std::string(tag);
    const std::string close = "</" + std::string(tag) + ">";
    std::size_t pos = 0;
    while (true) {
        auto start = text.find(open, pos);
        if (start == std::string_view::npos) break;
        const auto after = start + open.size();
        if (after >= text.size() || (text[after] != '>' && text[after] != ' ')) {
            pos = after;
            continue;
        }
        const auto gt = text.find('>', after);
        if (gt == std::string_view::npos) break;
        const auto end = text.find(close, gt + 1);
        if (end == std::string_view::npos) break;
        out.push_back(trim(text.substr(gt + 1, end - gt - 1)));
        pos = end + close.size();
    }
    return out;
}

std::optional<std::string> extract_section(std::string_view text, std::string_view tag) {
    auto all = extract_sections(text, tag);
    if (all.empty()) return std::nullopt;
    return all.front();
}

std::string render_turns(const Dialogue& d, int first, int last, std::optional<int> target) {
    std::string out;
    for (const auto& u : d.utterances) {
        if (u.index < first || u.index > last) continue;
        out += "[" + std::to_string(u.index) + "] " + speaker_label(u.speaker) + ": " + u.text;
        if (target && u.index == *target) out += "   <-- target response";
        out += '\n';
    }
    return out;
}

std::string render_decomposer(const DecomposerInput& in, std::size_t history_word_budget) {
    std::deque<const Utterance*> kept;
    std::size_t words = 0;
    for (auto it = in.history.rbegin(); it != in.history.rend(); ++it) {
        const std::size_t w = word_count(it->text);
        if (history_word_budget != 0 && words + w > history_word_budget) break;
        words += w;
        kept.push_front(&*it);
    }
    std::string s;
    s += kDecomposerOpening;
    s += " from the target response of a conversational recommender system. A nugget is a self-contained "
         "statement of the assistant together with the user's evaluative reaction to it.\n"
         "For each nugget give:\n"
         "- act: one of greetings, preference_elicitation, recommendation, goodbye, others\n"
         "- mention: the atomic statement, copied or minimally condensed from the target response\n"
         "- feedback: the part of the user's reply that reacts to the mention, or null if there is none\n"
         "Think step by step: split the target response into atomic statements, label each with its act, then "
         "find the user's reaction to each.\n\n";
    s += "<history>\n";
    for (const auto* u : kept) s += "[" + std::to_string(u->index) + "] " + speaker_label(u->speaker) + ": " + u->text + "\n";
    if (kept.size() < in.history.size()) s += "(" + std::to_string(in.history.size() - kept.size()) + " earlier turns omitted)\n";
    s += "</history>\n";
    s += "<target_response>\n" + in.response.text + "\n</target_response>\n";
    s += "<user_reply>\n" + (in.user_reply ? in.user_reply->text : std::string(kNoFeedback)) + "\n</user_reply>\n\n";
    s += "Answer with a JSON array only, for example:\n"
         "[{\"act\": \"recommendation\", \"mention\": \"How about the movie A?\", \"feedback\": \"The movie A seems "
         "interesting.\"}]\n"
         "Return [] if the response contains no nugget.";
    if (!in.user_reply) s += " Use null for every feedback since no user reply follows.";
    return s;
}

std::string particle_context(const Dialogue& d, int turn_index) {
    int last = turn_index;
    const auto next = static_cast<std::size_t>(turn_index + 1);
    if (next < d.utterances.size() && d.utterances[next].speaker == Speaker::User) last = turn_index + 1;
    return render_turns(d, 0, last, turn_index);
}

std::string render_evaluation(const AspectSpec& aspect, std::string_view context, const Particle& particle,
                              std::string_view instruction_text) {
    std::string s;
    s += kEvaluationOpening;
    s += "\n\n";
    s += aspect_block(aspect);
    s += "<dialogue>\n" + std::string(context) + "</dialogue>\n";
    s += particle_block(particle);
    s += "<instruction>\n" + std::string(instruction_text) + "\n</instruction>\n\n";
    s += score_demand(aspect);
    return s;
}

std::string unit_content(const Dialogue& d, std::optional<int> turn_index) {
    if (!turn_index) return render_turns(d, 0, static_cast<int>(d.utterances.size()) - 1);
    return particle_context(d, *turn_index);
}

std::string render_direct(const AspectSpec& aspect, std::string_view content) {
    std::string s;
    s += kDirectOpening;
    s += "\nRate it on the aspect below, using the same definition given to human annotators.\n\n";
    s += aspect_block(aspect);
    s += "<conversation>\n" + std::string(content) + "</conversation>\n\n";
    s += score_demand(aspect);
    return s;
}

std::string render_gradient(const AspectSpec& aspect, std::string_view instruction_text, const Particle& particle,
                            double predicted, int gold) {
    return gradient_body(aspect, instruction_text, particle, predicted, gold) +
           "\nWrite your analysis inside <feedback></feedback> tags.";
}

std::string render_rewrite(const AspectSpec& aspect, std::string_view instruction_text, std::string_view gradient) {
    std::string s;
    s += kRewriteOpening;
    s += " the original instruction and the feedback below. Keep the task description, revise the "
         "chain-of-thought steps so they address the feedback, and keep the instruction usable for any nugget of "
         "the aspect \"" + aspect.name + "\".\n\n";
    s += aspect_block(aspect);
    s += "<current_instruction>\n" + std::string(instruction_text) + "\n</current_instruction>\n";
    s += "<feedback>\n" + std::string(gradient) + "\n</feedback>\n\n";
    s += "Return the new instruction inside <instruction></instruction> tags.";
    return s;
}

std::string render_combined(const AspectSpec& aspect, std::string_view instruction_text, const Particle& particle,
                            double predicted, int gold) {
    std::string s = gradient_body(aspect, instruction_text, particle, predicted, gold);
    s += "\nFirst write your analysis inside <feedback></feedback> tags.\n";
    s += "Then: ";
    s += kRewriteOpening;
    s += " the original instruction and your feedback. Keep the task description, revise the chain-of-thought "
         "steps so they address the feedback, and return the new instruction inside <instruction></instruction> "
         "tags.";
    return s;
}

}  // namespace faceval::prompts
