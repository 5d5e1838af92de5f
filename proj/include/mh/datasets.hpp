#pragma once

// Converters from the published dataset layouts into the normalized JSONL
// schemas, and the bundled synthetic mini-sets used for desk-scale runs.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mh/datamodel.hpp"
#include "mh/errors.hpp"
#include "mh/hashing.hpp"
#include "mh/imaging.hpp"
#include "mh/metrics.hpp"

namespace mh {

struct DatasetRef {
    std::string name;
    Task task = Task::er;
    std::string path;  // empty for bundled sets
    std::string content_hash;

    bool operator==(const DatasetRef&) const = default;
};

inline void to_json(json& j, const DatasetRef& d) {
    j = json{{"name", d.name}, {"task", d.task}, {"path", d.path}, {"content_hash", d.content_hash}};
}
inline void from_json(const json& j, DatasetRef& d) {
    d.name = j.at("name").get<std::string>();
    d.task = j.at("task").get<Task>();
    d.path = j.value("path", std::string{});
    d.content_hash = j.value("content_hash", std::string{});
}

struct ErDataset {
    DatasetRef ref;
    LabelSet labels;
    std::vector<Sample> samples;
};

struct QaDataset {
    DatasetRef ref;
    std::vector<Story> stories;
};

inline std::string serialize_samples(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) out += dump_line(sample_to_json(s));
    return out;
}

inline std::string serialize_stories(const std::vector<Story>& stories) {
    std::string out;
    for (const auto& s : stories) out += dump_line(story_to_json(s));
    return out;
}

// ---------------------------------------------------------------------------
// Bundled mini-sets (synthetic)

inline std::vector<Sample> mini_er_samples() {
    static const std::pair<const char*, const char*> rows[] = {
        {"I'm so sorry.", "Sadness"},
        {"[BREATHING] So what do you think?", "Unknown"},
        {"You've got a lot- oh, awesome", "Excitement"},
        {"Okay, that's fine with me.", "Neutral"},
        {"I just got the job, I can't believe it!", "Happiness"},
        {"We had the best day at the beach.", "Happiness"},
        {"He never called back after the funeral.", "Sadness"},
        {"Get out of my office right now!", "Anger"},
        {"How many times do I have to tell you?", "Anger"},
        {"I've been waiting in this line for three hours.", "Frustration"},
        {"The form got rejected again, for the fourth time.", "Frustration"},
        {"Did you hear that noise downstairs?", "Fear"},
        {"I don't want to go in there alone.", "Fear"},
        {"We're going to Paris tomorrow!", "Excitement"},
        {"That smell in the fridge is revolting.", "Disgust"},
        {"He chewed with his mouth open the whole dinner.", "Disgust"},
        {"Wait, you're getting married?", "Surprise"},
        {"I had no idea you could play the piano.", "Surprise"},
        {"The meeting is at ten on Tuesday.", "Neutral"},
        {"Please pass the salt.", "Neutral"},
        {"Mm-hmm.", "Unknown"},
        {"I miss how things used to be.", "Sadness"},
        {"This is the happiest I've been in years.", "Happiness"},
        {"Why does the printer never work when I need it?", "Frustration"},
    };
    std::vector<Sample> out;
    int i = 1;
    for (const auto& [text, label] : rows) {
        char id[32];
        std::snprintf(id, sizeof id, "mini-er-%02d", i++);
        out.push_back({id, text, std::string(label), "mini-er"});
    }
    return out;
}

inline std::vector<Story> mini_qa_stories() {
    auto story = [](std::string id, std::string text,
                    std::vector<std::pair<std::string, std::vector<std::string>>> qa) {
        Story s{std::move(id), std::move(text), {}};
        int i = 0;
        for (auto& [q, refs] : qa) s.turns.push_back({i++, std::move(q), std::move(refs)});
        return s;
    };
    return {
        story("mini-qa-1",
              "Cotton was a small white kitten who lived in a barn near the river. She had four sisters, and all of "
              "them were orange. Every morning Cotton chased the mice that hid under the hay. The farmer's daughter, "
              "Anna, brought her milk in a blue bowl. One day a storm knocked down the old oak tree by the barn. "
              "Cotton hid in the loft until the rain stopped. When the sun came out, Anna found her and carried her "
              "inside. After that night Cotton slept by the fireplace in the kitchen. Her sisters stayed in the barn, "
              "but they visited her every Sunday. Cotton was happy to have a warm home and a good friend.",
              {{"What color was Cotton?", {"white", "She was white"}},
               {"Where did she live?", {"in a barn near the river", "a barn"}},
               {"How many sisters did she have?", {"four", "4"}},
               {"Who brought her milk?", {"Anna", "the farmer's daughter"}},
               {"Where did she sleep after the storm?", {"by the fireplace in the kitchen", "the kitchen"}}}),
        story("mini-qa-2",
              "Marta kept the lighthouse on Gull Island for thirty years. Each evening she climbed one hundred and "
              "twelve steps to light the lamp. Her only company was a grey dog named Pepper. Supply boats came from "
              "the mainland once a month. In the winter of the big freeze, the boat did not arrive for six weeks. "
              "Marta rationed her flour and caught fish from the rocks. Pepper learned to carry driftwood up from the "
              "beach. When the boat finally came, the captain brought oranges and letters. Marta read the letters "
              "aloud to Pepper by the lamp. She said it was the best winter of her life.",
              {{"How long did Marta keep the lighthouse?", {"thirty years"}},
               {"What was her dog's name?", {"Pepper"}},
               {"How often did supply boats come?", {"once a month", "monthly"}},
               {"How late was the boat in the big freeze?", {"six weeks"}},
               {"What did the captain bring?", {"oranges and letters"}}}),
        story("mini-qa-3",
              "The science fair at Hillside School was held in the gym on a Friday. Leo built a volcano out of clay "
              "and painted it red. His friend Priya made a solar oven from a pizza box. The judges were three "
              "teachers and the town mayor. Leo's volcano erupted too early and covered the table in foam. Everyone "
              "laughed, including Leo. Priya's oven melted a piece of chocolate in ten minutes. She won the first "
              "prize, a telescope. Leo got a ribbon for the most exciting project. On Monday they set up the "
              "telescope on the school roof together.",
              {{"Where was the science fair held?", {"in the gym"}},
               {"What did Leo build?", {"a volcano"}},
               {"What did Priya make?", {"a solar oven", "a solar oven from a pizza box"}},
               {"What did she win?", {"a telescope", "first prize"}},
               {"Where did they set it up?", {"on the school roof", "the roof"}}}),
    };
}

inline ErDataset mini_er_dataset() {
    auto samples = mini_er_samples();
    return {{"mini-er", Task::er, "", sha256_hex(serialize_samples(samples))}, iemocap_labels(), std::move(samples)};
}

inline QaDataset mini_qa_dataset() {
    auto stories = mini_qa_stories();
    return {{"mini-qa", Task::qa, "", sha256_hex(serialize_stories(stories))}, std::move(stories)};
}

/// Named label set ("iemocap", "meld") or a JSON file holding a LabelSet.
inline LabelSet resolve_labels(const std::string& name_or_path) {
    if (name_or_path.empty() || name_or_path == "iemocap") return iemocap_labels();
    if (name_or_path == "meld") return meld_labels();
    std::ifstream in(name_or_path);
    if (!in) throw UsageError("unknown label set '" + name_or_path + "' (expected iemocap, meld or a JSON file)");
    auto j = json::parse(in);
    return j.is_array() ? LabelSet(j.get<std::vector<std::string>>()) : j.get<LabelSet>();
}

/// Task of a normalized file, from the keys of its first record.
inline Task detect_task(const std::string& path) {
    auto rows = read_jsonl(path);
    if (rows.empty()) throw DataIntegrityError("dataset '" + path + "' is empty");
    return rows.front().contains("story") ? Task::qa : Task::er;
}

inline ErDataset load_er_dataset(const std::string& name_or_path, const LabelSet& labels) {
    if (name_or_path == "mini-er") {
        auto d = mini_er_dataset();
        for (const auto& s : d.samples)
            if (s.gold_label && !labels.contains(*s.gold_label))
                throw UsageError("label set does not cover the mini-er labels");
        d.labels = labels;
        return d;
    }
    fs::path p(name_or_path);
    auto samples = load_er_samples(name_or_path, p.stem().string(), &labels);
    return {{p.stem().string(), Task::er, name_or_path, sha256_hex(read_file(p))}, labels, std::move(samples)};
}

inline QaDataset load_qa_dataset(const std::string& name_or_path) {
    if (name_or_path == "mini-qa") return mini_qa_dataset();
    fs::path p(name_or_path);
    return {{p.stem().string(), Task::qa, name_or_path, sha256_hex(read_file(p))}, load_stories(name_or_path)};
}

// ---------------------------------------------------------------------------
// CSV

struct CsvRow {
    std::size_t line = 0;  // 1-based line where the record starts
    std::vector<std::string> fields;
    std::optional<std::string> error;
    std::string raw;
};

/// RFC 4180 records: quoted fields may contain commas, doubled quotes and
/// newlines. A malformed record is returned with `error` set; parsing resumes
/// at the next line.
inline std::vector<CsvRow> parse_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    std::size_t i = 0, line = 1;
    if (text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    while (i < text.size()) {
        CsvRow row;
        row.line = line;
        const std::size_t start = i;
        std::string field;
        bool done = false;
        while (!done) {
            if (i < text.size() && text[i] == '"') {
                ++i;
                bool closed = false;
                while (i < text.size()) {
                    if (text[i] == '"') {
                        if (i + 1 < text.size() && text[i + 1] == '"') {
                            field += '"';
                            i += 2;
                            continue;
                        }
                        ++i;
                        closed = true;
                        break;
                    }
                    if (text[i] == '\n') ++line;
                    field += text[i++];
                }
                if (!closed) {
                    row.error = "unterminated quoted field";
                    break;
                }
                if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                    row.error = "unexpected character after closing quote";
                    break;
                }
            } else {
                while (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                    if (text[i] == '"') {
                        row.error = "quote inside unquoted field";
                        break;
                    }
                    field += text[i++];
                }
                if (row.error) break;
            }
            row.fields.push_back(std::move(field));
            field.clear();
            if (i < text.size() && text[i] == ',') {
                ++i;
            } else {
                if (i < text.size() && text[i] == '\r') ++i;
                if (i < text.size() && text[i] == '\n') ++i;
                ++line;
                done = true;
            }
        }
        if (row.error) {
            // skip to the end of the physical line the error occurred on
            while (i < text.size() && text[i] != '\n') ++i;
            if (i < text.size()) ++i;
            ++line;
            row.fields.clear();
        }
        row.raw = std::string(text.substr(start, i - start));
        if (!row.error && row.fields.size() == 1 && row.fields[0].empty()) continue;  // blank line
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Emotion-recognition converters

enum class ErFormat { meld_csv, iemocap_lines };

NLOHMANN_JSON_SERIALIZE_ENUM(ErFormat, {{ErFormat::meld_csv, "meld-csv"}, {ErFormat::iemocap_lines, "iemocap-lines"}})

struct Reject {
    std::size_t line = 0;
    std::string reason;
    std::string raw;
};

struct ErConversion {
    std::vector<Sample> samples;
    std::vector<Reject> rejects;
};

/// IEMOCAP evaluation codes to label names.
inline std::optional<std::string> iemocap_code(std::string_view code) {
    static const std::map<std::string, std::string> codes = {
        {"neu", "Neutral"},     {"hap", "Happiness"}, {"sad", "Sadness"},  {"ang", "Anger"},
        {"fru", "Frustration"}, {"fea", "Fear"},      {"exc", "Excitement"}, {"dis", "Disgust"},
        {"sur", "Surprise"},    {"xxx", "Unknown"},   {"oth", "Unknown"}};
    auto it = codes.find(fold_label(code));
    if (it == codes.end()) return std::nullopt;
    return it->second;
}

/// MELD CSV (columns Utterance, Emotion, Dialogue_ID, Utterance_ID) or
/// IEMOCAP lines (`id<TAB>label<TAB>text`, label as name or evaluation code).
inline ErConversion convert_er(std::string_view source, ErFormat format, const LabelSet& labels,
                               const std::string& dataset_name) {
    ErConversion out;
    std::set<std::string> ids;
    auto accept = [&](std::size_t line, std::string id, std::string text, std::string_view raw_label,
                      const std::string& raw) {
        auto label = canonicalize_label(raw_label, labels);
        if (!label && format == ErFormat::iemocap_lines)
            if (auto named = iemocap_code(raw_label)) label = canonicalize_label(*named, labels);
        if (!label) {
            out.rejects.push_back({line, "unknown label '" + std::string(raw_label) + "'", raw});
            return;
        }
        if (!ids.insert(id).second) {
            out.rejects.push_back({line, "duplicate id '" + id + "'", raw});
            return;
        }
        out.samples.push_back({std::move(id), std::move(text), *label, dataset_name});
    };

    if (format == ErFormat::meld_csv) {
        auto rows = parse_csv(source);
        if (rows.empty() || rows.front().error) throw FormatError("MELD CSV: missing or malformed header");
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < rows.front().fields.size(); ++i) col[trim(rows.front().fields[i])] = i;
        for (const char* need : {"Utterance", "Emotion", "Dialogue_ID", "Utterance_ID"})
            if (!col.contains(need)) throw FormatError(std::string("MELD CSV: missing column '") + need + "'");
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto& row = rows[r];
            if (row.error) {
                out.rejects.push_back({row.line, *row.error, row.raw});
                continue;
            }
            if (row.fields.size() != rows.front().fields.size()) {
                out.rejects.push_back({row.line, "expected " + std::to_string(rows.front().fields.size()) +
                                                     " fields, got " + std::to_string(row.fields.size()),
                                       row.raw});
                continue;
            }
            const auto& f = row.fields;
            accept(row.line, "dia" + trim(f[col["Dialogue_ID"]]) + "_utt" + trim(f[col["Utterance_ID"]]),
                   f[col["Utterance"]], f[col["Emotion"]], row.raw);
        }
    } else {
        std::size_t line = 0;
        std::istringstream in{std::string(source)};
        std::string raw;
        while (std::getline(in, raw)) {
            ++line;
            if (!raw.empty() && raw.back() == '\r') raw.pop_back();
            if (trim(raw).empty()) continue;
            auto t1 = raw.find('\t');
            auto t2 = t1 == std::string::npos ? t1 : raw.find('\t', t1 + 1);
            if (t2 == std::string::npos) {
                out.rejects.push_back({line, "expected id<TAB>label<TAB>text", raw});
                continue;
            }
            accept(line, trim(raw.substr(0, t1)), raw.substr(t2 + 1), raw.substr(t1 + 1, t2 - t1 - 1), raw);
        }
    }
    return out;
}

inline json reject_to_json(const Reject& r) { return {{"line", r.line}, {"reason", r.reason}, {"raw", r.raw}}; }

// ---------------------------------------------------------------------------
// CoQA

/// Stories from the CoQA JSON layout. References per turn are the primary
/// answer followed by any additional human answers for the same turn id.
inline std::vector<Story> convert_coqa(const json& source) {
    std::vector<Story> out;
    for (const auto& item : source.at("data")) {
        const auto id = item.at("id").get<std::string>();
        const auto& questions = item.at("questions");
        const auto& answers = item.at("answers");
        if (questions.size() != answers.size())
            throw DataIntegrityError("CoQA story '" + id + "': " + std::to_string(questions.size()) + " questions but " +
                                     std::to_string(answers.size()) + " answers");
        Story s{id, item.at("story").get<std::string>(), {}};
        std::map<int, std::vector<std::string>> extra;
        if (item.contains("additional_answers")) {
            for (const auto& [key, list] : item.at("additional_answers").items())
                for (const auto& a : list) extra[a.at("turn_id").get<int>()].push_back(a.at("input_text").get<std::string>());
        }
        for (std::size_t i = 0; i < questions.size(); ++i) {
            const int turn_id = questions[i].value("turn_id", int(i) + 1);
            if (answers[i].value("turn_id", turn_id) != turn_id)
                throw DataIntegrityError("CoQA story '" + id + "': answer " + std::to_string(i) + " has a different turn id");
            QATurn t{int(i), questions[i].at("input_text").get<std::string>(),
                     {answers[i].at("input_text").get<std::string>()}};
            for (auto& a : extra[turn_id]) t.references.push_back(a);
            s.turns.push_back(std::move(t));
        }
        validate_story(s);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mh
