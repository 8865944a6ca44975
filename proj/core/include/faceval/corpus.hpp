#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faceval/evaluator.hpp"
#include "faceval/model.hpp"

namespace faceval {

struct SplitSpec {
    double train_fraction = 0.6;
    std::uint64_t seed = 0;
};

/// Manifest document:
/// {"name": "...", "dialogues": ["d.jsonl"], "annotations": ["a.jsonl"],
///  "aspects": ["Relevance", {"name": "Custom", "level": "turn", "min_score": 0, "max_score": 5}],
///  "split": {"train_fraction": 0.6, "seed": 0}}
/// Relative paths resolve against the manifest's directory.
struct CorpusManifest {
    std::string name;
    std::vector<std::filesystem::path> dialogue_files;
    std::vector<std::filesystem::path> annotation_files;
    std::vector<std::string> aspects;  // empty: every aspect that appears in the annotations
    std::vector<AspectSpec> custom_aspects;
    SplitSpec split;

    static CorpusManifest from_json(const json& doc, const std::filesystem::path& base_dir = {});
    static CorpusManifest from_file(const std::filesystem::path& path);
    json to_json() const;
};

struct Corpus {
    std::string name;
    std::vector<Dialogue> dialogues;  // file order
    std::vector<AnnotationRecord> annotations;
    AspectRegistry aspects;
    std::vector<std::string> aspect_names;
    SplitSpec split;

    DialogueMap by_id() const;
    std::vector<AnnotationRecord> annotations_for(std::string_view aspect) const;
};

/// Loads and validates every dialogue and annotation. Throws SchemaError with file:line.
Corpus load_corpus(const CorpusManifest& manifest);

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& annotations);

struct Split {
    std::vector<std::string> train;  // sorted
    std::vector<std::string> validation;  // sorted
};

/// Dialogue-level split; |train| = round(fraction * N) clamped to [1, N-1]. Depends only on
/// the set of ids, the fraction and the seed.
Split split_dialogues(std::vector<std::string> dialogue_ids, double train_fraction, std::uint64_t seed);
Split split_dialogues(const std::vector<Dialogue>& dialogues, const SplitSpec& spec);

struct JoinedUnits {
    std::vector<UnitRef> units;
    std::vector<double> predicted;
    std::vector<double> gold;
    std::vector<UnitRef> missing_score;  // labelled but unscored
    std::vector<UnitRef> missing_label;  // scored but unlabelled
};

/// Inner join of a score table with the aspect's annotations on UnitRef. Throws on an empty join.
JoinedUnits join_units(const AspectSpec& aspect, const std::vector<AnnotationRecord>& annotations,
                       const ScoreTable& scores);

}  // namespace faceval
