#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "faceval/corpus.hpp"
#include "faceval/model.hpp"
#include "faceval/optimizer.hpp"
#include "faceval/prompts.hpp"
#include "faceval/sim.hpp"

namespace faceval::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<unsigned> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("faceval-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(std::string_view rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path fixture(std::string_view rel) { return std::filesystem::path(FACEVAL_FIXTURE_DIR) / rel; }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Dialogue make_dialogue(std::string id, std::string system, std::vector<std::string> texts) {
    Dialogue d{std::move(id), std::move(system), {}};
    for (std::size_t i = 0; i < texts.size(); ++i)
        d.utterances.push_back({static_cast<int>(i), i % 2 == 0 ? Speaker::User : Speaker::System, std::move(texts[i])});
    return d;
}

/// Writes a synthetic corpus, its oracle world and a run config into `dir`. Returns the config path.
inline std::filesystem::path write_oracle_project(const std::filesystem::path& dir, const sim::SyntheticCorpus& c,
                                                  const json& hyperparams, std::uint64_t seed,
                                                  double train_fraction = 0.6) {
    write_dialogues(dir / "dialogues.jsonl", c.dialogues);
    write_annotations(dir / "annotations.jsonl", c.annotations);
    json manifest{{"name", "synthetic"},
                  {"dialogues", {"dialogues.jsonl"}},
                  {"annotations", {"annotations.jsonl"}},
                  {"aspects", {c.aspect.name}},
                  {"split", {{"train_fraction", train_fraction}, {"seed", seed}}}};
    write_file(dir / "manifest.json", manifest.dump(2));
    write_file(dir / "world.json", c.world.to_json().dump(2));
    json config{{"backend", {{"kind", "oracle"}, {"world", "world.json"}}},
                {"corpus", "manifest.json"},
                {"output_dir", "out"},
                {"seed", seed},
                {"hyperparams", hyperparams}};
    write_file(dir / "config.json", config.dump(2));
    return dir / "config.json";
}

/// Synthetic corpus plus its dialogue-level split into labelled train and validation sets.
struct OracleSetup {
    sim::SyntheticCorpus corpus;
    Split split;
    LabeledSet train;
    LabeledSet val;
    DialogueMap dialogues;
};

inline OracleSetup oracle_setup(std::uint64_t seed, double train_fraction = 0.6) {
    OracleSetup s;
    sim::SyntheticOptions so;
    so.seed = seed;
    s.corpus = sim::make_synthetic_corpus(so);
    s.split = split_dialogues(s.corpus.dialogues, SplitSpec{train_fraction, seed});
    s.train = build_labeled_set(s.corpus.aspect, s.split.train, s.corpus.particles, s.corpus.annotations);
    s.val = build_labeled_set(s.corpus.aspect, s.split.validation, s.corpus.particles, s.corpus.annotations);
    for (const auto& d : s.corpus.dialogues) s.dialogues[d.dialogue_id] = d;
    return s;
}

/// The small search used by the end-to-end checks: K=4, b=2, b'=4, alpha=1, n=3.
inline Hyperparams small_hyperparams() {
    Hyperparams hp;
    hp.iterations = 4;
    hp.beam_width = 2;
    hp.candidates_kept = 4;
    hp.gradients = 1;
    hp.samples = 3;
    return hp;
}

inline Instruction seed_instruction(const std::string& aspect) {
    return {make_instruction_id(aspect, prompts::seed_instruction_text()), aspect, prompts::seed_instruction_text(),
            std::nullopt, 0};
}

}  // namespace faceval::test
