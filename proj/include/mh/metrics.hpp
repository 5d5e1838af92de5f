#pragma once

// Classification metrics (confusion matrix, accuracy, support-weighted F1) and
// CoQA-style answer scoring (SQuAD normalisation, bag-of-tokens F1, max over
// references, mean over questions).

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mh/datamodel.hpp"
#include "mh/errors.hpp"

namespace mh {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(LabelSet labels)
        : labels_(std::move(labels)), counts_(labels_.size(), std::vector<long>(labels_.size(), 0)) {}

    const LabelSet& labels() const noexcept { return labels_; }

    /// Rows are gold labels, columns predictions.
    long count(std::size_t gold, std::size_t pred) const { return counts_.at(gold).at(pred); }

    void add(std::size_t gold, std::size_t pred, long n = 1) { counts_.at(gold).at(pred) += n; }

    void add(std::string_view gold, std::string_view pred) {
        auto g = labels_.index_of(gold), p = labels_.index_of(pred);
        if (!g) throw DataIntegrityError("gold label '" + std::string(gold) + "' is not in the label set");
        if (!p) throw DataIntegrityError("prediction '" + std::string(pred) + "' is not in the label set");
        add(*g, *p);
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        if (!(other.labels_ == labels_)) throw DomainError("confusion matrix merge: label sets differ");
        for (std::size_t i = 0; i < counts_.size(); ++i)
            for (std::size_t j = 0; j < counts_.size(); ++j) counts_[i][j] += other.counts_[i][j];
        return *this;
    }

    long support(std::size_t gold) const {
        long s = 0;
        for (long c : counts_.at(gold)) s += c;
        return s;
    }

    long predicted(std::size_t pred) const {
        long s = 0;
        for (const auto& row : counts_) s += row.at(pred);
        return s;
    }

    long total() const {
        long s = 0;
        for (std::size_t i = 0; i < counts_.size(); ++i) s += support(i);
        return s;
    }

    long trace() const {
        long s = 0;
        for (std::size_t i = 0; i < counts_.size(); ++i) s += counts_[i][i];
        return s;
    }

private:
    LabelSet labels_;
    std::vector<std::vector<long>> counts_;
};

struct LabelScores {
    double precision = 0, recall = 0, f1 = 0;
    long support = 0;
};

struct ClassificationScores {
    double wf1 = 0, accuracy = 0;
    std::vector<LabelScores> per_label;  // LabelSet order
};

/// Per-label F1 with 0/0 taken as 0, weighted by gold support.
inline ClassificationScores weighted_f1(const ConfusionMatrix& cm) {
    const long total = cm.total();
    if (total == 0) throw DomainError("weighted_f1: empty confusion matrix");
    ClassificationScores out;
    for (std::size_t i = 0; i < cm.labels().size(); ++i) {
        LabelScores s;
        const long tp = cm.count(i, i), pred = cm.predicted(i);
        s.support = cm.support(i);
        s.precision = pred ? double(tp) / double(pred) : 0.0;
        s.recall = s.support ? double(tp) / double(s.support) : 0.0;
        s.f1 = pred + s.support ? 2.0 * double(tp) / double(pred + s.support) : 0.0;
        out.wf1 += double(s.support) / double(total) * s.f1;
        out.per_label.push_back(s);
    }
    out.accuracy = double(cm.trace()) / double(total);
    return out;
}

/// Lower-case, drop ASCII punctuation, drop the articles a/an/the, split on whitespace.
inline std::vector<std::string> normalize_answer(std::string_view text) {
    std::string cleaned;
    for (unsigned char c : text) {
        if (c < 0x80 && std::ispunct(c)) continue;
        cleaned += char(c < 0x80 ? std::tolower(c) : c);
    }
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
        std::size_t j = i;
        while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
        if (j > i) {
            std::string tok = cleaned.substr(i, j - i);
            if (tok != "a" && tok != "an" && tok != "the") tokens.push_back(std::move(tok));
        }
        i = j;
    }
    return tokens;
}

inline double token_f1(std::string_view prediction, std::string_view reference) {
    const auto p = normalize_answer(prediction), r = normalize_answer(reference);
    if (p.empty() || r.empty()) return p.empty() && r.empty() ? 1.0 : 0.0;
    std::map<std::string, long> bag;
    for (const auto& t : r) ++bag[t];
    long common = 0;
    for (const auto& t : p)
        if (auto it = bag.find(t); it != bag.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    if (common == 0) return 0.0;
    const double precision = double(common) / double(p.size());
    const double recall = double(common) / double(r.size());
    return 2 * precision * recall / (precision + recall);
}

/// Best F1 of `prediction` against any reference.
inline double max_over_references(std::string_view prediction, const std::vector<std::string>& references) {
    double best = 0;
    for (const auto& ref : references) best = std::max(best, token_f1(prediction, ref));
    return best;
}

enum class Task { er, qa };

NLOHMANN_JSON_SERIALIZE_ENUM(Task, {{Task::er, "er"}, {Task::qa, "qa"}})

struct ScoreReport {
    Task task = Task::er;
    // ER
    double wf1 = 0, accuracy = 0;
    std::map<std::string, LabelScores> per_label;
    // QA
    double of1 = 0;
    std::map<std::string, double> per_story_f1;

    long n_scored = 0;
    long n_fallback = 0;
};

inline void to_json(json& j, const LabelScores& s) {
    j = json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
}

inline void to_json(json& j, const ScoreReport& r) {
    j = json{{"task", r.task}, {"n_scored", r.n_scored}, {"n_fallback", r.n_fallback}};
    if (r.task == Task::er) {
        j["wf1"] = r.wf1;
        j["accuracy"] = r.accuracy;
        j["per_label"] = r.per_label;
        j["zero_division"] = 0;
    } else {
        j["of1"] = r.of1;
        j["per_story_f1"] = r.per_story_f1;
        j["reference_aggregation"] = "max";
    }
}

inline void from_json(const json& j, ScoreReport& r) {
    r = ScoreReport{};
    r.task = j.at("task").get<Task>();
    r.n_scored = j.value("n_scored", 0L);
    r.n_fallback = j.value("n_fallback", 0L);
    if (r.task == Task::er) {
        r.wf1 = j.at("wf1").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        const json per_label = j.value("per_label", json::object());
        for (const auto& [k, v] : per_label.items())
            r.per_label[k] = {v.at("precision").get<double>(), v.at("recall").get<double>(), v.at("f1").get<double>(),
                              v.at("support").get<long>()};
    } else {
        r.of1 = j.at("of1").get<double>();
        r.per_story_f1 = j.value("per_story_f1", std::map<std::string, double>{});
    }
}

/// Classification report from (gold, prediction) pairs.
inline ScoreReport score_er(const LabelSet& labels, const std::vector<std::pair<std::string, std::string>>& pairs,
                            long n_fallback = 0) {
    ConfusionMatrix cm(labels);
    for (const auto& [gold, pred] : pairs) cm.add(gold, pred);
    const auto s = weighted_f1(cm);
    ScoreReport r;
    r.task = Task::er;
    r.wf1 = s.wf1;
    r.accuracy = s.accuracy;
    for (std::size_t i = 0; i < labels.size(); ++i) r.per_label[labels[i]] = s.per_label[i];
    r.n_scored = cm.total();
    r.n_fallback = n_fallback;
    return r;
}

/// Record id of turn `turn` of story `story_id` in QA prediction files.
inline std::string qa_record_id(std::string_view story_id, int turn) {
    return std::string(story_id) + "#" + std::to_string(turn);
}

struct QAPrediction {
    std::string id;  // qa_record_id()
    std::string answer;
};

/// Mean over questions of the best reference F1; per-story means alongside.
inline ScoreReport coqa_overall_f1(const std::vector<QAPrediction>& predictions, const std::vector<Story>& stories,
                                   long n_fallback = 0) {
    std::map<std::string, std::pair<const Story*, const QATurn*>> turns;
    for (const auto& s : stories)
        for (const auto& t : s.turns) turns[qa_record_id(s.id, t.index)] = {&s, &t};
    if (predictions.empty()) throw DomainError("coqa_overall_f1: no predictions");

    std::map<std::string, std::pair<double, long>> per_story;
    double sum = 0;
    for (const auto& p : predictions) {
        auto it = turns.find(p.id);
        if (it == turns.end()) throw DataIntegrityError("prediction '" + p.id + "' matches no question");
        const double f = max_over_references(p.answer, it->second.second->references);
        sum += f;
        auto& acc = per_story[it->second.first->id];
        acc.first += f;
        ++acc.second;
    }
    ScoreReport r;
    r.task = Task::qa;
    r.of1 = sum / double(predictions.size());
    for (const auto& [id, acc] : per_story) r.per_story_f1[id] = acc.first / double(acc.second);
    r.n_scored = long(predictions.size());
    r.n_fallback = n_fallback;
    return r;
}

/// One row of a results table.
struct ReportRow {
    std::string experiment;
    std::string modality;
    bool output_processing = false;
    ScoreReport report;
};

/// Aligned plain-text table: ER rows carry WF1/Acc, QA rows OF1, all x100.
inline std::string render_table(const std::vector<ReportRow>& rows) {
    std::size_t name_w = 11;
    for (const auto& r : rows) name_w = std::max(name_w, r.experiment.size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(w, s.size()), ' ');
        return s;
    };
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%7.2f", v * 100.0);
        return std::string(buf);
    };
    std::string out;
    bool er_header = false, qa_header = false;
    for (const auto& r : rows) {
        const bool er = r.report.task == Task::er;
        if (er && !er_header) {
            out += pad("Experiments", name_w) + " | Modality   | Output Processing |  WF1(%) |  Acc(%)\n";
            er_header = true;
        } else if (!er && !qa_header) {
            if (er_header) out += "\n";
            out += pad("Experiments", name_w) + " | Modality   |  OF1(%)\n";
            qa_header = true;
        }
        out += pad(r.experiment, name_w) + " | " + pad(r.modality, 10) + " | ";
        if (er) {
            out += pad(r.output_processing ? "Yes" : "-", 17) + " | " + pct(r.report.wf1) + " | " + pct(r.report.accuracy) + "\n";
        } else {
            out += pct(r.report.of1) + "\n";
        }
    }
    return out;
}

}  // namespace mh
