#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "common.hpp"
#include "faceval/errors.hpp"
#include "faceval/metrics.hpp"
#include "faceval_app/commands.hpp"

namespace faceval::app {

namespace {

constexpr const char* kMethods[] = {"face", "direct"};

std::string cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

json maybe(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

template <typename Fn>
std::optional<double> defined(Fn&& fn) {
    try {
        return fn();
    } catch (const UndefinedStatistic&) {
        return std::nullopt;
    } catch (const PreconditionError&) {
        return std::nullopt;
    }
}

double rescale(double raw, const AspectSpec& a) {
    return (raw - a.min_score) / static_cast<double>(a.max_score - a.min_score) * 100.0;
}

struct Loaded {
    std::map<std::string, std::map<std::string, ScoreTable>> tables;  // aspect -> method -> table
    std::map<std::string, std::vector<ParticleResult>> particles;     // aspect -> face particle scores
};

Loaded load_inputs(const RunConfig& config, const std::vector<std::string>& aspects) {
    Loaded in;
    std::vector<std::string> missing;
    for (const auto& a : aspects) {
        for (const char* m : kMethods) {
            const auto path = score_table_path(config, a, m);
            if (std::filesystem::exists(path)) in.tables[a][m] = read_score_table(path);
        }
        if (!in.tables.count(a)) {
            missing.push_back(score_table_path(config, a, "face").string());
            continue;
        }
        const auto ppath = particle_scores_path(config, a);
        if (in.tables[a].count("face")) {
            if (std::filesystem::exists(ppath))
                in.particles[a] = read_particle_results(ppath);
            else
                missing.push_back(ppath.string());
        }
    }
    if (!missing.empty()) {
        std::string msg = "report inputs missing:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw ConfigError(msg);
    }
    return in;
}

struct PairRecord {
    std::string human_dialogue_id;
    std::string system_dialogue_id;
    metrics::Side preferred = metrics::Side::Human;
};

std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read preference pairs " + path.string());
    std::vector<PairRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const auto pref = j.at("preferred").get<std::string>();
            if (pref != "human" && pref != "system") throw SchemaError("preferred must be human or system");
            out.push_back({j.at("human_dialogue_id").get<std::string>(), j.at("system_dialogue_id").get<std::string>(),
                           pref == "human" ? metrics::Side::Human : metrics::Side::System});
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), path.string() + ":" + std::to_string(lineno));
        }
    }
    return out;
}

/// Dialogue-level score: the dialogue row, or the mean of the dialogue's turn rows.
std::optional<double> dialogue_score(const ScoreTable& t, const std::string& dialogue_id) {
    std::vector<double> values;
    for (const auto& r : t.rows)
        if (r.unit.dialogue_id == dialogue_id) values.push_back(r.score);
    if (values.empty()) return std::nullopt;
    return stable_mean(values);
}

}  // namespace

int cmd_report(const RunConfig& config, std::ostream& log) {
    const Corpus corpus = load_run_corpus(config);
    const auto aspects = resolve_aspects(config, corpus);
    const Loaded in = load_inputs(config, aspects);
    const std::string hash = config.hash();
    const auto dir = config.report_dir();

    // (a) annotation correlations and (b) system ranking correlations: one row per method.
    std::string header = "method";
    for (const auto& a : aspects) header += "," + a + "_r," + a + "_rho";
    std::string corr_csv = "# config_hash: " + hash + "\n" + header + "\n";
    std::string rank_csv = corr_csv;
    for (const char* m : kMethods) {
        bool any = false;
        std::string corr_row = m;
        std::string rank_row = m;
        for (const auto& a : aspects) {
            const auto& by_method = in.tables.at(a);
            auto it = by_method.find(m);
            std::optional<double> r, rho, rank_r, rank_rho;
            if (it != by_method.end()) {
                any = true;
                const auto joined = join_units(corpus.aspects.get(a), corpus.annotations, it->second);
                r = defined([&] { return metrics::pearson(joined.predicted, joined.gold).coefficient; });
                rho = defined([&] { return metrics::spearman(joined.predicted, joined.gold).coefficient; });
                const auto units = metrics::system_units(it->second, corpus.annotations, corpus.dialogues);
                try {
                    const auto rc = metrics::system_ranking_correlation(units);
                    rank_r = rc.pearson.coefficient;
                    rank_rho = rc.spearman.coefficient;
                } catch (const UndefinedStatistic&) {
                }
            }
            corr_row += "," + cell(r) + "," + cell(rho);
            rank_row += "," + cell(rank_r) + "," + cell(rank_rho);
        }
        if (!any) continue;
        corr_csv += corr_row + "\n";
        rank_csv += rank_row + "\n";
    }
    write_text(dir / "correlations.csv", corr_csv);
    write_text(dir / "system_ranking.csv", rank_csv);

    std::map<std::string, std::string> system_of;
    std::map<std::string, std::vector<int>> system_turns;  // dialogue -> system utterance indices
    std::size_t max_turns = 0;
    for (const auto& d : corpus.dialogues) {
        system_of[d.dialogue_id] = d.system_id;
        auto& turns = system_turns[d.dialogue_id];
        for (const auto& u : d.utterances)
            if (u.speaker == Speaker::System) turns.push_back(u.index);
        max_turns = std::max(max_turns, turns.size());
    }

    // (c) radar: per-system mean FACE score per aspect on a 0-100 scale.
    json radar{{"config_hash", hash}, {"systems", json::object()}};
    // (d) per-turn series and (e) per-act means from particle-level FACE scores.
    json per_turn{{"config_hash", hash}, {"length", max_turns}, {"aspects", json::object()}};
    json per_act{{"config_hash", hash}, {"scale", "0-100"}, {"aspects", json::object()}};
    // (f) sample efficiency and (g) biases.
    json efficiency{{"config_hash", hash}, {"trials", config.report.trials}, {"aspects", json::object()}};
    json bias{{"config_hash", hash}, {"aspects", json::object()}};
    const auto pairs = config.report.pairs.empty() ? std::vector<PairRecord>{} : read_pairs(config.report.pairs);

    for (const auto& a : aspects) {
        const AspectSpec& spec = corpus.aspects.get(a);
        const auto& by_method = in.tables.at(a);
        auto face = by_method.find("face");
        const ScoreTable& primary = face != by_method.end() ? face->second : by_method.begin()->second;

        std::map<std::string, std::vector<double>> per_system;
        for (const auto& row : primary.rows) per_system[system_of.at(row.unit.dialogue_id)].push_back(row.score);
        for (const auto& [system, values] : per_system) radar["systems"][system][a] = rescale(stable_mean(values), spec);

        if (auto pit = in.particles.find(a); pit != in.particles.end()) {
            std::map<std::string, std::vector<std::vector<double>>> series;  // system -> turn -> scores
            std::vector<std::vector<double>> overall(max_turns);
            std::map<DialogueAct, std::vector<double>> acts;
            for (const auto& p : pit->second) {
                const auto& turns = system_turns.at(p.dialogue_id);
                const auto pos = static_cast<std::size_t>(std::find(turns.begin(), turns.end(), p.turn_index) - turns.begin());
                if (pos >= turns.size()) continue;
                auto& s = series[system_of.at(p.dialogue_id)];
                s.resize(max_turns);
                s[pos].push_back(p.score);
                overall[pos].push_back(p.score);
                acts[p.act].push_back(p.score);
            }
            auto summarise = [&](const std::vector<std::vector<double>>& buckets) {
                json arr = json::array();
                for (const auto& b : buckets) arr.push_back(b.empty() ? json(nullptr) : json(stable_mean(b)));
                return arr;
            };
            json entry{{"all", summarise(overall)}, {"systems", json::object()}};
            for (const auto& [system, buckets] : series) entry["systems"][system] = summarise(buckets);
            per_turn["aspects"][a] = entry;
            json act_entry = json::object();
            for (DialogueAct act : kAllActs) {
                auto it = acts.find(act);
                act_entry[to_string(act)] =
                    it == acts.end() ? json(nullptr) : json(rescale(stable_mean(it->second), spec));
            }
            per_act["aspects"][a] = act_entry;
        }

        const auto units = metrics::system_units(primary, corpus.annotations, corpus.dialogues);
        std::map<std::string, std::set<std::string>> dialogues_per_system;
        for (const auto& u : units) dialogues_per_system[u.system_id].insert(u.dialogue_id);
        std::vector<std::size_t> sizes = config.report.sizes;
        if (sizes.empty() && !dialogues_per_system.empty()) {
            std::size_t smallest = SIZE_MAX;
            for (const auto& [s, ds] : dialogues_per_system) smallest = std::min(smallest, ds.size());
            for (std::size_t k = 1; k <= smallest; ++k) sizes.push_back(k);
        }
        json curve = json::array();
        try {
            for (const auto& pt : metrics::sample_efficiency_curve(units, sizes, config.report.trials, config.seed))
                curve.push_back({{"size", pt.size}, {"mean", pt.mean}, {"ci_low", pt.ci_low}, {"ci_high", pt.ci_high}});
            efficiency["aspects"][a] = {{"method", primary.provenance.method}, {"curve", curve}};
        } catch (const UndefinedStatistic& e) {
            efficiency["aspects"][a] = {{"method", primary.provenance.method}, {"curve", nullptr}, {"note", e.what()}};
        } catch (const PreconditionError& e) {
            efficiency["aspects"][a] = {{"method", primary.provenance.method}, {"curve", nullptr}, {"note", e.what()}};
        }

        json bias_entry = json::object();
        for (const auto& [method, table] : by_method) {
            json m{{"length_bias_r", maybe(defined([&] { return metrics::length_bias(corpus.dialogues, table).coefficient; }))}};
            if (!pairs.empty()) {
                std::vector<metrics::PreferencePair> prefs;
                for (const auto& p : pairs) {
                    const auto h = dialogue_score(table, p.human_dialogue_id);
                    const auto s = dialogue_score(table, p.system_dialogue_id);
                    if (h && s) prefs.push_back({*h, *s, p.preferred});
                }
                if (!prefs.empty()) {
                    const auto rep = metrics::self_bias_agreement(prefs);
                    m["self_bias"] = {{"human_preferred", rep.human_preferred},
                                      {"human_preferred_agree", rep.human_preferred_agree},
                                      {"system_preferred", rep.system_preferred},
                                      {"system_preferred_agree", rep.system_preferred_agree},
                                      {"ties", rep.ties},
                                      {"human_agreement_pct", maybe(rep.human_rate())},
                                      {"system_agreement_pct", maybe(rep.system_rate())}};
                }
            }
            bias_entry[method] = m;
        }
        bias["aspects"][a] = bias_entry;
    }

    write_text(dir / "radar.json", radar.dump(2) + "\n");
    write_text(dir / "per_turn.json", per_turn.dump(2) + "\n");
    write_text(dir / "per_act.json", per_act.dump(2) + "\n");
    write_text(dir / "sample_efficiency.json", efficiency.dump(2) + "\n");
    write_text(dir / "bias.json", bias.dump(2) + "\n");
    log << "report: " << aspects.size() << " aspects -> " << dir.string() << "\n";
    return kExitOk;
}

}  // namespace faceval::app
