#pragma once

// Instruction strings for every directive. Skeletons hold the placeholders
// {EMOTIONS}, {TEXT}, {QUESTION} and {HISTORY}; rendering substitutes each in
// a single pass, so placeholder-like text inside user input stays literal.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mh/datamodel.hpp"
#include "mh/errors.hpp"

namespace mh {

struct PromptTemplate {
    std::string key;
    std::string skeleton;
};

inline const std::vector<std::string>& placeholder_names() {
    static const std::vector<std::string> names = {"EMOTIONS", "TEXT", "QUESTION", "HISTORY"};
    return names;
}

/// Placeholders a template key must contain exactly once.
inline std::set<std::string> required_placeholders(const std::string& key) {
    if (key == "both" || key == "text" || key == "image" || key == "p1") return {"EMOTIONS", "TEXT"};
    if (key == "image_notext") return {"EMOTIONS"};
    if (key == "p2" || key == "p3") return {"TEXT"};
    if (key == "qa_image_notext") return {"HISTORY", "QUESTION"};
    if (key == "qa" || key == "qa_both" || key == "qa_text" || key == "qa_image") return {"TEXT", "HISTORY", "QUESTION"};
    throw UsageError("unknown prompt template key '" + key + "'");
}

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + needle.size())) ++n;
    return n;
}

inline void validate_template(const PromptTemplate& t) {
    const auto required = required_placeholders(t.key);
    for (const auto& name : placeholder_names()) {
        const auto n = count_occurrences(t.skeleton, "{" + name + "}");
        if (required.contains(name) && n != 1)
            throw UsageError("template '" + t.key + "': {" + name + "} must occur exactly once");
        if (!required.contains(name) && n != 0)
            throw UsageError("template '" + t.key + "': {" + name + "} is not allowed here");
    }
}

/// Single-pass substitution of {NAME} placeholders.
inline std::string render_template(std::string_view skeleton, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < skeleton.size()) {
        if (skeleton[i] == '{') {
            auto close = skeleton.find('}', i);
            if (close != std::string_view::npos) {
                auto it = values.find(std::string(skeleton.substr(i + 1, close - i - 1)));
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += skeleton[i++];
    }
    return out;
}

class PromptTemplates {
public:
    /// Default skeletons, with runs of spaces collapsed to one.
    static PromptTemplates defaults() {
        const std::string head = "BEGINNING OF CONVERSATION: USER: ";
        const std::string choose = " has? you answer should be one of following emotions: {EMOTIONS}";
        PromptTemplates t;
        t.set({"both", head + "what emotions do you think this pair of IMAGE and TEXT" + choose + " TEXT : {TEXT} Answer: "});
        t.set({"text", head + "what emotions do you think this TEXT" + choose + " TEXT : {TEXT} Answer: "});
        t.set({"image", head + "what emotions do you think this IMAGE" + choose + " TEXT : {TEXT} Answer: "});
        t.set({"image_notext", head + "what emotions do you think this IMAGE" + choose + " Answer: "});
        t.set({"p1", head + "This is a classification Task, choose one of emotions: {EMOTIONS} TEXT: {TEXT} Answer: "});
        t.set({"p2", head + "what emotions do you perceive in one sentence ? TEXT: {TEXT} Answer: "});
        t.set({"p3", "{TEXT}"});

        const std::string qa_tail = "\n{HISTORY}Q: {QUESTION}\nAnswer: ";
        t.set({"qa", head + "answer the question about the story in a few words.\nTEXT : {TEXT}" + qa_tail});
        t.set({"qa_both", head + "answer the question using this pair of IMAGE and TEXT in a few words.\nTEXT : {TEXT}" + qa_tail});
        t.set({"qa_text", head + "answer the question using this TEXT in a few words.\nTEXT : {TEXT}" + qa_tail});
        t.set({"qa_image", head + "answer the question using this IMAGE in a few words.\nTEXT : {TEXT}" + qa_tail});
        t.set({"qa_image_notext", head + "answer the question using this IMAGE in a few words." + qa_tail});
        return t;
    }

    /// Defaults overridden by a plain-text file of `key<TAB>skeleton` lines.
    /// Lines starting with '#' are comments; "\n" and "\t" escapes are expanded.
    static PromptTemplates load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open template file '" + path + "'");
        auto t = defaults();
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw UsageError(path + ":" + std::to_string(n) + ": expected '<key>\\t<skeleton>'");
            t.set({line.substr(0, tab), unescape(line.substr(tab + 1))});
        }
        return t;
    }

    void set(PromptTemplate t) {
        validate_template(t);
        skeletons_[t.key] = std::move(t.skeleton);
    }

    const std::string& skeleton(const std::string& key) const {
        auto it = skeletons_.find(key);
        if (it == skeletons_.end()) throw UsageError("no prompt template '" + key + "'");
        return it->second;
    }

private:
    static std::string unescape(std::string_view s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\' && i + 1 < s.size() && (s[i + 1] == 'n' || s[i + 1] == 't' || s[i + 1] == '\\')) {
                out += s[i + 1] == 'n' ? '\n' : s[i + 1] == 't' ? '\t' : '\\';
                ++i;
            } else {
                out += s[i];
            }
        }
        return out;
    }

    std::map<std::string, std::string> skeletons_;
};

/// Comma-joined labels, or the set's verbatim clause when it carries one.
inline std::string render_label_clause(const LabelSet& labels) {
    if (labels.clause()) return *labels.clause();
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += labels[i];
    }
    return out;
}

inline std::string build_er_prompt(const ExperimentSpec& spec, std::string_view text, const LabelSet& labels,
                                   const PromptTemplates& templates = PromptTemplates::defaults()) {
    std::string key;
    switch (spec.directive) {
        case Directive::both: key = "both"; break;
        case Directive::text: key = "text"; break;
        case Directive::image: key = spec.text_input == TextInput::none ? "image_notext" : "image"; break;
        case Directive::p1: key = "p1"; break;
        case Directive::p2: key = "p2"; break;
        case Directive::p3: key = "p3"; break;
        case Directive::qa: throw UsageError("directive 'qa' is not an emotion-recognition directive");
    }
    if (spec.text_input == TextInput::none && spec.directive != Directive::image)
        throw PreconditionError("build_er_prompt: only the image directive runs without text");
    return render_template(templates.skeleton(key), {{"EMOTIONS", render_label_clause(labels)}, {"TEXT", std::string(text)}});
}

/// One "Q: ... A: ..." line per prior turn, in order; empty answers are kept.
inline std::string render_history(const std::vector<std::pair<std::string, std::string>>& history) {
    std::string out;
    for (const auto& [q, a] : history) out += "Q: " + q + " A: " + a + "\n";
    return out;
}

/// `story` is nullopt when the spec feeds no text (image-only QA).
inline std::string build_qa_prompt(std::string_view question,
                                   const std::vector<std::pair<std::string, std::string>>& history, Directive mode,
                                   std::optional<std::string_view> story,
                                   const PromptTemplates& templates = PromptTemplates::defaults()) {
    if (!directive_supports_qa(mode))
        throw UsageError("directive '" + enum_name(mode) + "' is not supported for question answering");
    std::string key = mode == Directive::qa ? "qa" : "qa_" + enum_name(mode);
    if (!story) {
        if (mode != Directive::image) throw PreconditionError("build_qa_prompt: only the image directive runs without text");
        key = "qa_image_notext";
    }
    std::map<std::string, std::string> values{{"QUESTION", std::string(question)}, {"HISTORY", render_history(history)}};
    if (story) values["TEXT"] = std::string(*story);
    return render_template(templates.skeleton(key), values);
}

}  // namespace mh
