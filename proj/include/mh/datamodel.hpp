#pragma once

// Normalized value types shared by every pipeline stage, their JSON forms,
// and the named experiment configurations.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mh/errors.hpp"

namespace mh {

using nlohmann::json;

inline std::string trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Case-folded, trimmed comparison key for labels.
inline std::string fold_label(std::string_view s) { return ascii_lower(trim(s)); }

// ---------------------------------------------------------------------------
// LabelSet

/// Ordered, non-empty set of class labels. Order drives tie-breaking.
///
/// `clause` optionally carries a verbatim rendering of the list for prompts;
/// the shipped IEMOCAP set uses it to reproduce the irregular spacing of the
/// original instructions.
class LabelSet {
public:
    LabelSet() = default;

    explicit LabelSet(std::vector<std::string> labels, std::optional<std::string> clause = std::nullopt,
                      bool fold_case = true)
        : labels_(std::move(labels)), clause_(std::move(clause)), fold_case_(fold_case) {
        if (labels_.empty()) throw PreconditionError("LabelSet: must contain at least one label");
        std::set<std::string> seen;
        for (const auto& l : labels_) {
            if (trim(l).empty()) throw PreconditionError("LabelSet: empty label");
            if (!seen.insert(key(l)).second) throw PreconditionError("LabelSet: duplicate label '" + l + "'");
        }
    }

    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::optional<std::string>& clause() const noexcept { return clause_; }
    bool fold_case() const noexcept { return fold_case_; }
    std::size_t size() const noexcept { return labels_.size(); }
    const std::string& operator[](std::size_t i) const { return labels_[i]; }

    std::optional<std::size_t> index_of(std::string_view label) const {
        const auto k = key(label);
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (key(labels_[i]) == k) return i;
        return std::nullopt;
    }

    bool contains(std::string_view label) const { return index_of(label).has_value(); }

    bool operator==(const LabelSet&) const = default;

private:
    std::string key(std::string_view s) const { return fold_case_ ? fold_label(s) : trim(s); }

    std::vector<std::string> labels_;
    std::optional<std::string> clause_;
    bool fold_case_ = true;
};

/// IEMOCAP labels as listed in the original instruction prompts, with their
/// verbatim rendering ("Disgust Surprise ,Unknown" included).
inline LabelSet iemocap_labels() {
    return LabelSet({"Neutral", "Happiness", "Sadness", "Anger", "Frustration", "Fear", "Excitement", "Disgust",
                     "Surprise", "Unknown"},
                    "Neutral, Happiness, Sadness, Anger, Frustration, Fear, Excitement, Disgust Surprise ,Unknown");
}

/// MELD's seven emotion classes in the order of the dataset documentation.
/// Not taken from the instruction prompts, which only cover IEMOCAP.
inline LabelSet meld_labels() {
    return LabelSet({"Neutral", "Surprise", "Fear", "Sadness", "Joy", "Disgust", "Anger"});
}

/// Exact-match fast path: the label whose folded form equals `raw`'s.
inline std::optional<std::string> canonicalize_label(std::string_view raw, const LabelSet& labels) {
    if (auto i = labels.index_of(raw)) return labels[*i];
    return std::nullopt;
}

inline void to_json(json& j, const LabelSet& l) {
    j = json{{"labels", l.labels()}, {"fold_case", l.fold_case()}};
    if (l.clause()) j["clause"] = *l.clause();
}

inline void from_json(const json& j, LabelSet& l) {
    std::optional<std::string> clause;
    if (j.contains("clause") && !j.at("clause").is_null()) clause = j.at("clause").get<std::string>();
    l = LabelSet(j.at("labels").get<std::vector<std::string>>(), clause, j.value("fold_case", true));
}

// ---------------------------------------------------------------------------
// Dataset items

struct Sample {
    std::string id;
    std::string text;
    std::optional<std::string> gold_label;
    std::string dataset;

    bool operator==(const Sample&) const = default;
};

struct QATurn {
    int index = 0;
    std::string question;
    std::vector<std::string> references;

    bool operator==(const QATurn&) const = default;
};

struct Story {
    std::string id;
    std::string text;
    std::vector<QATurn> turns;

    bool operator==(const Story&) const = default;
};

inline void validate_story(const Story& s) {
    if (s.turns.empty()) throw DataIntegrityError("story '" + s.id + "' has no turns");
    for (std::size_t i = 0; i < s.turns.size(); ++i) {
        if (s.turns[i].index != int(i))
            throw DataIntegrityError("story '" + s.id + "': turn indices must be contiguous from 0");
        if (s.turns[i].references.empty())
            throw DataIntegrityError("story '" + s.id + "': turn " + std::to_string(i) + " has no references");
    }
}

// Normalized ER line: {"id","text","label"}
inline json sample_to_json(const Sample& s) {
    json j{{"id", s.id}, {"text", s.text}};
    j["label"] = s.gold_label ? json(*s.gold_label) : json(nullptr);
    return j;
}

inline Sample sample_from_json(const json& j, std::string dataset = {}) {
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) s.gold_label = j.at("label").get<std::string>();
    s.dataset = std::move(dataset);
    return s;
}

// Normalized QA line: {"id","story","turns":[{"q","answers":[...]}]}
inline json story_to_json(const Story& s) {
    json turns = json::array();
    for (const auto& t : s.turns) turns.push_back({{"q", t.question}, {"answers", t.references}});
    return {{"id", s.id}, {"story", s.text}, {"turns", turns}};
}

inline Story story_from_json(const json& j) {
    Story s;
    s.id = j.at("id").get<std::string>();
    s.text = j.at("story").get<std::string>();
    int i = 0;
    for (const auto& t : j.at("turns"))
        s.turns.push_back({i++, t.at("q").get<std::string>(), t.at("answers").get<std::vector<std::string>>()});
    validate_story(s);
    return s;
}

/// Reads a JSON-lines file, skipping blank lines.
inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

inline std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n"; }

inline std::vector<Sample> load_er_samples(const std::string& path, const std::string& dataset,
                                           const LabelSet* labels = nullptr) {
    std::vector<Sample> out;
    std::set<std::string> ids;
    for (const auto& j : read_jsonl(path)) {
        auto s = sample_from_json(j, dataset);
        if (!ids.insert(s.id).second) throw DataIntegrityError("duplicate sample id '" + s.id + "' in " + path);
        if (labels && s.gold_label && !labels->contains(*s.gold_label))
            throw DataIntegrityError("sample '" + s.id + "' has label '" + *s.gold_label + "' outside the label set");
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<Story> load_stories(const std::string& path) {
    std::vector<Story> out;
    std::set<std::string> ids;
    for (const auto& j : read_jsonl(path)) {
        auto s = story_from_json(j);
        if (!ids.insert(s.id).second) throw DataIntegrityError("duplicate story id '" + s.id + "' in " + path);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ExperimentSpec

enum class Modality { multimodal, unimodal };
enum class ImageSource { generated, demo, none };
enum class TextInput { input, none };
enum class Directive { both, text, image, p1, p2, p3, qa };
enum class BackendRole { t2i, mllm, llm, embed, segment };

NLOHMANN_JSON_SERIALIZE_ENUM(Modality, {{Modality::multimodal, "multimodal"}, {Modality::unimodal, "unimodal"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ImageSource,
                             {{ImageSource::generated, "generated"}, {ImageSource::demo, "demo"}, {ImageSource::none, "none"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TextInput, {{TextInput::input, "input"}, {TextInput::none, "none"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Directive, {{Directive::both, "both"},
                                         {Directive::text, "text"},
                                         {Directive::image, "image"},
                                         {Directive::p1, "p1"},
                                         {Directive::p2, "p2"},
                                         {Directive::p3, "p3"},
                                         {Directive::qa, "qa"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BackendRole, {{BackendRole::t2i, "t2i"},
                                           {BackendRole::mllm, "mllm"},
                                           {BackendRole::llm, "llm"},
                                           {BackendRole::embed, "embed"},
                                           {BackendRole::segment, "segment"}})

template <class Enum>
std::string enum_name(Enum e) {
    return json(e).template get<std::string>();
}

template <class Enum>
Enum enum_from_name(const std::string& s) {
    // nlohmann maps unknown strings to the first enumerator; reject them instead.
    Enum e = json(s).template get<Enum>();
    if (enum_name(e) != s) throw UsageError("unknown value '" + s + "'");
    return e;
}

struct SeedPolicy {
    enum class Kind { per_item_deterministic, fixed, random };
    Kind kind = Kind::per_item_deterministic;
    std::uint64_t value = 0;  // run-scoped seed, or the fixed seed

    bool operator==(const SeedPolicy&) const = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(SeedPolicy::Kind, {{SeedPolicy::Kind::per_item_deterministic, "per-item-deterministic"},
                                                {SeedPolicy::Kind::fixed, "fixed"},
                                                {SeedPolicy::Kind::random, "random"}})

inline void to_json(json& j, const SeedPolicy& p) { j = json{{"kind", p.kind}, {"value", p.value}}; }
inline void from_json(const json& j, SeedPolicy& p) {
    p.kind = enum_from_name<SeedPolicy::Kind>(j.at("kind").get<std::string>());
    p.value = j.value("value", std::uint64_t{0});
}

struct DecodeParams {
    /// Unset means the task default (64 for ER, 32 for QA answers).
    std::optional<int> max_new_tokens;
    double temperature = 0.0;

    int max_new_tokens_or(int task_default) const { return max_new_tokens.value_or(task_default); }

    bool operator==(const DecodeParams&) const = default;
};

inline constexpr int kErMaxNewTokens = 64;
inline constexpr int kQaMaxNewTokens = 32;

inline void to_json(json& j, const DecodeParams& d) {
    j = json{{"max_new_tokens", d.max_new_tokens ? json(*d.max_new_tokens) : json(nullptr)},
             {"temperature", d.temperature}};
}
inline void from_json(const json& j, DecodeParams& d) {
    d.max_new_tokens.reset();
    if (j.contains("max_new_tokens") && !j.at("max_new_tokens").is_null())
        d.max_new_tokens = j.at("max_new_tokens").get<int>();
    d.temperature = j.value("temperature", 0.0);
}

/// One row of the experiment matrix.
struct ExperimentSpec {
    std::string name;
    Modality modality = Modality::multimodal;
    ImageSource image_source = ImageSource::generated;
    TextInput text_input = TextInput::input;
    Directive directive = Directive::both;
    bool output_processing = false;
    SeedPolicy seed_policy;
    std::map<std::string, std::string> backend_ids;  // role name -> descriptor id
    DecodeParams decode;

    bool operator==(const ExperimentSpec&) const = default;
};

inline void to_json(json& j, const ExperimentSpec& s) {
    j = json{{"name", s.name},
             {"modality", s.modality},
             {"image_source", s.image_source},
             {"text_input", s.text_input},
             {"directive", s.directive},
             {"output_processing", s.output_processing},
             {"seed_policy", s.seed_policy},
             {"backend_ids", s.backend_ids},
             {"decode", s.decode}};
}

inline void from_json(const json& j, ExperimentSpec& s) {
    s.name = j.at("name").get<std::string>();
    s.modality = enum_from_name<Modality>(j.at("modality").get<std::string>());
    s.image_source = enum_from_name<ImageSource>(j.at("image_source").get<std::string>());
    s.text_input = enum_from_name<TextInput>(j.at("text_input").get<std::string>());
    s.directive = enum_from_name<Directive>(j.at("directive").get<std::string>());
    s.output_processing = j.value("output_processing", false);
    s.seed_policy = j.contains("seed_policy") ? j.at("seed_policy").get<SeedPolicy>() : SeedPolicy{};
    s.backend_ids = j.value("backend_ids", std::map<std::string, std::string>{});
    s.decode = j.contains("decode") ? j.at("decode").get<DecodeParams>() : DecodeParams{};
}

/// Every violated invariant, as human-readable strings. Empty means valid.
inline std::vector<std::string> validate_spec(const ExperimentSpec& s) {
    std::vector<std::string> v;
    if (s.name.empty()) v.emplace_back("name must not be empty");
    if (s.modality == Modality::multimodal && s.image_source == ImageSource::none)
        v.emplace_back("multimodal requires an image source");
    if (s.modality == Modality::unimodal && s.image_source != ImageSource::none)
        v.emplace_back("unimodal forbids images");
    if (s.image_source == ImageSource::none && s.directive == Directive::image)
        v.emplace_back("image directive requires images");
    if (s.text_input == TextInput::none && s.directive != Directive::image)
        v.emplace_back("no-text input requires the image directive");
    if (s.decode.max_new_tokens && *s.decode.max_new_tokens <= 0) v.emplace_back("max_new_tokens must be positive");
    if (s.decode.temperature < 0) v.emplace_back("temperature must be non-negative");
    for (const auto& [role, id] : s.backend_ids) {
        try {
            enum_from_name<BackendRole>(role);
        } catch (const UsageError&) {
            v.push_back("unknown backend role '" + role + "'");
        }
    }
    return v;
}

inline std::map<std::string, std::string> default_backend_ids(Modality m) {
    if (m == Modality::unimodal) return {{"llm", "llm"}, {"embed", "embed"}, {"segment", "segment"}};
    return {{"t2i", "t2i"}, {"mllm", "mllm"}, {"embed", "embed"}, {"segment", "segment"}};
}

inline ExperimentSpec make_spec(std::string name, Modality m, ImageSource img, TextInput txt, Directive d,
                                bool output_processing) {
    ExperimentSpec s;
    s.name = std::move(name);
    s.modality = m;
    s.image_source = img;
    s.text_input = txt;
    s.directive = d;
    s.output_processing = output_processing;
    s.backend_ids = default_backend_ids(m);
    return s;
}

/// The eight multimodal experiments.
inline std::vector<ExperimentSpec> multimodal_specs() {
    using enum Directive;
    const auto M = Modality::multimodal;
    const auto G = ImageSource::generated;
    const auto In = TextInput::input;
    return {
        make_spec("Gen_Image_Inp_Text_Both", M, G, In, both, false),
        make_spec("Gen_Image_Inp_Text_Txt", M, G, In, text, false),
        make_spec("Gen_Image_Inp_Text_Img", M, G, In, image, false),
        make_spec("Gen_Image_No_Text_Img", M, G, TextInput::none, image, false),
        make_spec("Gen_Image_Inp_Text_P1", M, G, In, p1, false),
        make_spec("Gen_Image_Inp_Text_P2", M, G, In, p2, false),
        make_spec("Gen_Image_Inp_Text_P3", M, G, In, p3, false),
        make_spec("Dem_Image_Inp_Text_Both", M, ImageSource::demo, In, both, false),
    };
}

/// Text-only baselines, with and without output-processing.
inline std::vector<ExperimentSpec> baseline_specs() {
    return {
        make_spec("LLM_Inp_Text_OP", Modality::unimodal, ImageSource::none, TextInput::input, Directive::text, true),
        make_spec("LLM_Inp_Text", Modality::unimodal, ImageSource::none, TextInput::input, Directive::text, false),
    };
}

/// Directives the QA prompt builder accepts.
inline bool directive_supports_qa(Directive d) {
    return d == Directive::both || d == Directive::text || d == Directive::image || d == Directive::qa;
}

inline std::vector<std::string> named_spec_names() {
    std::vector<std::string> out;
    for (const auto& s : multimodal_specs()) out.push_back(s.name);
    for (const auto& s : baseline_specs()) out.push_back(s.name);
    return out;
}

inline std::optional<ExperimentSpec> find_named_spec(std::string_view name) {
    for (auto&& s : multimodal_specs())
        if (s.name == name) return s;
    for (auto&& s : baseline_specs())
        if (s.name == name) return s;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// PredictionRecord

enum class RecordFlag { empty_extraction_fallback, retried, cache_hit, over_cap, failed };

NLOHMANN_JSON_SERIALIZE_ENUM(RecordFlag, {{RecordFlag::empty_extraction_fallback, "empty-extraction-fallback"},
                                          {RecordFlag::retried, "retried"},
                                          {RecordFlag::cache_hit, "cache-hit"},
                                          {RecordFlag::over_cap, "over-cap"},
                                          {RecordFlag::failed, "failed"}})

struct PredictionRecord {
    std::string sample_id;
    std::string raw_output;
    std::string extracted;
    std::string prediction;
    std::map<std::string, double> scores;  // ER only
    std::vector<std::string> image_keys;
    std::int64_t latency_ms = 0;
    std::set<RecordFlag> flags;

    bool has(RecordFlag f) const { return flags.contains(f); }
    bool operator==(const PredictionRecord&) const = default;
};

inline void to_json(json& j, const PredictionRecord& r) {
    json flags = json::array();
    for (auto f : r.flags) flags.push_back(f);
    j = json{{"id", r.sample_id},          {"raw_output", r.raw_output}, {"extracted", r.extracted},
             {"prediction", r.prediction}, {"scores", r.scores},         {"image_keys", r.image_keys},
             {"latency_ms", r.latency_ms}, {"flags", flags}};
}

inline void from_json(const json& j, PredictionRecord& r) {
    r.sample_id = j.at("id").get<std::string>();
    r.raw_output = j.at("raw_output").get<std::string>();
    r.extracted = j.at("extracted").get<std::string>();
    r.prediction = j.at("prediction").get<std::string>();
    r.scores = j.value("scores", std::map<std::string, double>{});
    r.image_keys = j.value("image_keys", std::vector<std::string>{});
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    r.flags.clear();
    for (const auto& f : j.value("flags", json::array()))
        r.flags.insert(enum_from_name<RecordFlag>(f.get<std::string>()));
}

inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
    std::vector<PredictionRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(j.get<PredictionRecord>());
    return out;
}

}  // namespace mh
