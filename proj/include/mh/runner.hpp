#pragma once

// Staged pipeline for one experiment spec over one dataset: images, inference,
// output-processing and label mapping, scoring. Records are appended to a
// partial file as they complete so an interrupted run can resume; the final
// predictions file is written in dataset order once every item is done.
//
// Run directory layout (<out_dir>/<run_id>/):
//   run.json                   manifest
//   predictions.partial.jsonl  completion-order journal
//   predictions.jsonl          final, dataset order
//   report.json, table.txt     scores
//   errors.log                 one line per failed item

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mh/backends.hpp"
#include "mh/datamodel.hpp"
#include "mh/datasets.hpp"
#include "mh/errors.hpp"
#include "mh/hashing.hpp"
#include "mh/imaging.hpp"
#include "mh/mapping.hpp"
#include "mh/metrics.hpp"
#include "mh/prompting.hpp"
#include "mh/segmentation.hpp"

namespace mh {

struct RunOptions {
    fs::path out_dir = "runs";
    fs::path cache_dir = "cache";
    std::string run_id;  // default <spec>__<dataset>
    int parallelism = 4;
    std::uint32_t image_width = 64;
    std::uint32_t image_height = 64;
    std::optional<fs::path> demo_image;  // builtin gradient when unset
    bool demo_fivefold = false;          // QA: hstack the demo image five times
    double echo_threshold = kEchoPrefixThreshold;
    std::optional<std::string> fallback_label;
    bool gold_history = false;
    bool record_latency = true;
    double failure_budget = 0.10;
    bool resume = false;
    std::optional<std::size_t> stop_after;  // stop claiming work after this many new records
    PromptTemplates templates = PromptTemplates::defaults();
    int token_cap = kTextEncoderTokenCap;
};

/// The options that change outputs; part of the manifest hash.
inline json options_fingerprint(const RunOptions& o, const std::optional<LabelSet>& labels) {
    json j{{"image_width", o.image_width},
           {"image_height", o.image_height},
           {"demo_image", o.demo_image ? sha256_hex(read_file(*o.demo_image)) : std::string("builtin")},
           {"demo_fivefold", o.demo_fivefold},
           {"echo_threshold", o.echo_threshold},
           {"fallback_label", o.fallback_label ? json(*o.fallback_label) : json(nullptr)},
           {"gold_history", o.gold_history},
           {"token_cap", o.token_cap}};
    if (labels) j["labels"] = *labels;
    return j;
}

struct Counters {
    long samples = 0, cache_hits = 0, retries = 0, fallbacks = 0, truncations = 0, failures = 0;
    bool operator==(const Counters&) const = default;
};

inline Counters derive_counters(const std::vector<PredictionRecord>& records) {
    Counters c;
    for (const auto& r : records) {
        ++c.samples;
        c.cache_hits += r.has(RecordFlag::cache_hit);
        c.retries += r.has(RecordFlag::retried);
        c.fallbacks += r.has(RecordFlag::empty_extraction_fallback);
        c.truncations += r.has(RecordFlag::over_cap);
        c.failures += r.has(RecordFlag::failed);
    }
    return c;
}

inline void to_json(json& j, const Counters& c) {
    j = json{{"samples", c.samples},         {"cache_hits", c.cache_hits}, {"retries", c.retries},
             {"fallbacks", c.fallbacks},     {"truncations", c.truncations}, {"failures", c.failures}};
}
inline void from_json(const json& j, Counters& c) {
    c.samples = j.value("samples", 0L);
    c.cache_hits = j.value("cache_hits", 0L);
    c.retries = j.value("retries", 0L);
    c.fallbacks = j.value("fallbacks", 0L);
    c.truncations = j.value("truncations", 0L);
    c.failures = j.value("failures", 0L);
}

enum class RunStatus { running, finished, aborted };

NLOHMANN_JSON_SERIALIZE_ENUM(RunStatus,
                             {{RunStatus::running, "running"}, {RunStatus::finished, "finished"}, {RunStatus::aborted, "aborted"}})

struct RunManifest {
    std::string run_id;
    ExperimentSpec spec;
    std::string spec_hash;
    DatasetRef dataset;
    std::vector<BackendDescriptor> backends;
    std::map<std::string, std::string> model_ids;
    std::string started, finished;
    Counters counters;
    std::map<std::string, std::string> stages;  // image, inference, mapping, scoring
    RunStatus status = RunStatus::running;
    json options;
};

inline void to_json(json& j, const RunManifest& m) {
    j = json{{"run_id", m.run_id},     {"spec", m.spec},           {"spec_hash", m.spec_hash},
             {"dataset", m.dataset},   {"backends", m.backends},   {"model_ids", m.model_ids},
             {"started", m.started},   {"finished", m.finished},   {"counters", m.counters},
             {"stages", m.stages},     {"status", m.status},       {"options", m.options}};
}

inline void from_json(const json& j, RunManifest& m) {
    m.run_id = j.at("run_id").get<std::string>();
    m.spec = j.at("spec").get<ExperimentSpec>();
    m.spec_hash = j.at("spec_hash").get<std::string>();
    m.dataset = j.at("dataset").get<DatasetRef>();
    m.backends = j.value("backends", std::vector<BackendDescriptor>{});
    m.model_ids = j.value("model_ids", std::map<std::string, std::string>{});
    m.started = j.value("started", std::string{});
    m.finished = j.value("finished", std::string{});
    m.counters = j.value("counters", Counters{});
    m.stages = j.value("stages", std::map<std::string, std::string>{});
    m.status = j.at("status").get<RunStatus>();
    m.options = j.value("options", json::object());
}

inline RunManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("no manifest at '" + path.string() + "'");
    return json::parse(in).get<RunManifest>();
}

inline std::string spec_hash(const ExperimentSpec& spec, const DatasetRef& dataset, const json& options) {
    return sha256_hex(json(spec).dump() + "\n" + dataset.content_hash + "\n" + options.dump());
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Per-item seed under the spec's policy. `item_id` names the thing imaged
/// (sample id, or story#segN), not the spec, so every spec shares images.
inline std::uint64_t item_seed(const SeedPolicy& policy, std::string_view item_id) {
    switch (policy.kind) {
        case SeedPolicy::Kind::fixed: return policy.value;
        case SeedPolicy::Kind::random: {
            std::random_device rd;
            return (std::uint64_t(rd()) << 32) | rd();
        }
        case SeedPolicy::Kind::per_item_deterministic: break;
    }
    return fnv1a64(std::to_string(policy.value) + "\n" + std::string(item_id));
}

inline std::string segment_item_id(std::string_view story_id, std::size_t k) {
    return std::string(story_id) + "#seg" + std::to_string(k);
}

/// Backends the spec needs, resolved against the descriptor list.
inline BackendSet bind_backends(const ExperimentSpec& spec, const std::vector<BackendDescriptor>& descriptors) {
    auto ids = spec.backend_ids.empty() ? default_backend_ids(spec.modality) : spec.backend_ids;
    return make_backends(descriptors, ids);
}

struct RunResult {
    RunManifest manifest;
    fs::path dir;
    std::vector<PredictionRecord> records;  // dataset order; complete only when finished
    std::optional<ScoreReport> report;
};

// ---------------------------------------------------------------------------
// Segmentation store shared by `imagine` and QA runs

inline fs::path segmentation_path(const fs::path& cache_dir, const Story& story, const std::string& proposer_id,
                                  int token_cap) {
    const auto key = sha256_hex(story.id + "\n" + story.text + "\n" + proposer_id + "\n" +
                                std::to_string(kStorySegments) + "\n" + std::to_string(token_cap));
    return cache_dir / "segments" / (key + ".json");
}

/// Segmentation rebuilt from its persisted boundaries.
inline Segmentation segmentation_from_json(const json& j, const Story& story, int token_cap,
                                           const Tokenizer& tokenizer = whitespace_punct_tokenize) {
    Segmentation s{story.id, {}, j.at("method").get<SegmentMethod>()};
    auto cuts = j.at("boundaries").get<std::vector<std::size_t>>();
    cuts.push_back(story.text.size());
    std::size_t prev = 0;
    for (auto end : cuts) {
        if (end < prev || end > story.text.size()) throw DataIntegrityError("stored segmentation does not fit story '" + story.id + "'");
        Segment seg{prev, end, story.text.substr(prev, end - prev), 0, false};
        seg.token_count = count_tokens(seg.text, tokenizer).size();
        seg.over_cap = seg.token_count > std::size_t(token_cap);
        s.segments.push_back(std::move(seg));
        prev = end;
    }
    return s;
}

/// Stored segmentation for the story, computing and persisting it first if needed.
inline Segmentation load_or_segment(const fs::path& cache_dir, const Story& story, SegmentProposer& proposer,
                                    int token_cap) {
    const auto path = segmentation_path(cache_dir, story, proposer.model_id(), token_cap);
    std::error_code ec;
    if (fs::exists(path, ec)) {
        try {
            return segmentation_from_json(json::parse(read_file(path)), story, token_cap);
        } catch (const std::exception&) {
            // unreadable: recompute
        }
    }
    auto s = segment_story(story, proposer, kStorySegments, token_cap);
    write_file_atomic(path, segmentation_to_json(s).dump() + "\n");
    return s;
}

namespace runner_detail {

/// Runs `work(i)` for i in [0, n) on up to `parallelism` threads until
/// `stop()` turns true.
inline void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& work,
                         const std::function<bool()>& stop) {
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto loop = [&] {
        for (;;) {
            if (stop()) return;
            const auto i = next++;
            if (i >= n) return;
            try {
                work(i);
            } catch (...) {
                std::lock_guard g(err_mu);
                if (!first_error) first_error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    const int threads = std::max(1, std::min<int>(parallelism, int(std::max<std::size_t>(n, 1))));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(loop);
    loop();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Records in the partial journal; a torn last line (crash mid-write) is dropped.
inline std::map<std::string, PredictionRecord> load_journal(const fs::path& path) {
    std::map<std::string, PredictionRecord> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto r = json::parse(line).get<PredictionRecord>();
            out[r.sample_id] = std::move(r);
        } catch (const std::exception&) {
            break;
        }
    }
    return out;
}

/// Cache status each story saw when its images were first staged; torn lines are skipped.
inline std::map<std::string, bool> load_image_stage(const fs::path& path) {
    std::map<std::string, bool> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab + 2 != line.size()) continue;
        out.emplace(line.substr(0, tab), line[tab + 1] == '1');
    }
    return out;
}

/// Serialized appender for the journal and the error log.
class Journal {
public:
    Journal(const fs::path& dir, const std::map<std::string, PredictionRecord>& kept) {
        // rewrite so a torn tail from an earlier crash is gone
        std::string body;
        for (const auto& [id, r] : kept) body += dump_line(r);
        write_file_atomic(dir / "predictions.partial.jsonl", body);
        out_.open(dir / "predictions.partial.jsonl", std::ios::app | std::ios::binary);
        errors_.open(dir / "errors.log", std::ios::app);
        stage_path_ = dir / "image_stage.tsv";
    }

    void append(const PredictionRecord& r) {
        std::lock_guard g(mu_);
        out_ << dump_line(r);
        out_.flush();
        ++appended_;
    }

    void error(const std::string& id, const std::string& what) {
        std::lock_guard g(mu_);
        errors_ << id << '\t' << what << '\n';
        errors_.flush();
    }

    void staged(const std::string& id, bool hit) {
        std::lock_guard g(mu_);
        if (!stage_.is_open()) stage_.open(stage_path_, std::ios::app);
        stage_ << id << '\t' << (hit ? '1' : '0') << '\n';
        stage_.flush();
    }

    std::size_t appended() const {
        std::lock_guard g(mu_);
        return appended_;
    }

private:
    mutable std::mutex mu_;
    std::ofstream out_, errors_, stage_;
    fs::path stage_path_;
    std::size_t appended_ = 0;
};

struct Prepared {
    RunManifest manifest;
    fs::path dir;
    std::map<std::string, PredictionRecord> done;
    bool finished = false;
};

inline Prepared prepare(const ExperimentSpec& spec, const DatasetRef& dataset, const BackendSet& backends,
                        const RunOptions& opt, const json& fingerprint) {
    if (auto v = validate_spec(spec); !v.empty()) {
        std::string msg = "invalid spec '" + spec.name + "':";
        for (const auto& s : v) msg += " " + s + ";";
        throw UsageError(msg);
    }
    Prepared p;
    const auto run_id = opt.run_id.empty() ? spec.name + "__" + dataset.name : opt.run_id;
    p.dir = opt.out_dir / run_id;
    const auto hash = spec_hash(spec, dataset, fingerprint);
    const auto manifest_path = p.dir / "run.json";

    if (opt.resume) {
        auto m = load_manifest(manifest_path);
        if (m.spec_hash != hash)
            throw UsageError("refusing to resume '" + run_id + "': spec, dataset or options differ from the manifest");
        if (m.status == RunStatus::finished) {
            p.manifest = std::move(m);
            p.finished = true;
            return p;
        }
        p.manifest = std::move(m);
        p.done = load_journal(p.dir / "predictions.partial.jsonl");
    } else {
        std::error_code ec;
        fs::remove_all(p.dir, ec);
        fs::create_directories(p.dir);
        p.manifest.run_id = run_id;
        p.manifest.spec = spec;
        p.manifest.spec_hash = hash;
        p.manifest.dataset = dataset;
        p.manifest.started = utc_timestamp();
        p.manifest.options = fingerprint;
    }
    p.manifest.backends = backends.descriptors;
    p.manifest.status = RunStatus::running;
    p.manifest.finished.clear();
    return p;
}

inline void write_manifest(const fs::path& dir, const RunManifest& m) {
    write_file_atomic(dir / "run.json", json(m).dump(2) + "\n");
}

inline RunResult load_finished(const Prepared& p) {
    RunResult r{p.manifest, p.dir, load_predictions((p.dir / "predictions.jsonl").string()), std::nullopt};
    if (fs::exists(p.dir / "report.json")) r.report = json::parse(read_file(p.dir / "report.json")).get<ScoreReport>();
    return r;
}

inline std::int64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
}

inline ImageArtifact demo_artifact(const RunOptions& opt) {
    return opt.demo_image ? load_demo_image(*opt.demo_image) : builtin_demo_image(opt.image_width, opt.image_height);
}

inline ReportRow report_row(const ExperimentSpec& spec, const ScoreReport& report) {
    return {spec.name, enum_name(spec.modality), spec.output_processing, report};
}

/// Writes predictions/report/table and marks the manifest finished.
inline RunResult finish(Prepared& p, std::vector<PredictionRecord> records, ScoreReport report,
                        BackendSet& backends) {
    std::string body;
    for (const auto& r : records) body += dump_line(r);
    write_file_atomic(p.dir / "predictions.jsonl", body);
    write_file_atomic(p.dir / "report.json", json(report).dump(2) + "\n");
    write_file_atomic(p.dir / "table.txt", render_table({report_row(p.manifest.spec, report)}));
    p.manifest.counters = derive_counters(records);
    p.manifest.model_ids = backends.model_ids();
    p.manifest.stages["scoring"] = "done";
    p.manifest.status = RunStatus::finished;
    p.manifest.finished = utc_timestamp();
    write_manifest(p.dir, p.manifest);
    return {p.manifest, p.dir, std::move(records), std::move(report)};
}

inline RunResult stop_early(Prepared& p, const std::map<std::string, PredictionRecord>& done, RunStatus status,
                            BackendSet& backends) {
    std::vector<PredictionRecord> partial;
    for (const auto& [id, r] : done) partial.push_back(r);
    p.manifest.counters = derive_counters(partial);
    p.manifest.model_ids = backends.model_ids();
    p.manifest.status = status;
    for (auto& [stage, state] : p.manifest.stages)
        if (state == "running") state = status == RunStatus::aborted ? "aborted" : "partial";
    write_manifest(p.dir, p.manifest);
    return {p.manifest, p.dir, std::move(partial), std::nullopt};
}

}  // namespace runner_detail

// ---------------------------------------------------------------------------
// Emotion recognition

inline RunResult run_er(const ExperimentSpec& spec, const ErDataset& dataset, BackendSet& backends,
                        const RunOptions& opt = {}) {
    using namespace runner_detail;
    if (spec.directive == Directive::qa) throw UsageError("directive 'qa' cannot run an emotion-recognition dataset");
    auto p = prepare(spec, dataset.ref, backends, opt, options_fingerprint(opt, dataset.labels));
    if (p.finished) return load_finished(p);

    const bool multimodal = spec.modality == Modality::multimodal;
    if (multimodal && !backends.mllm) throw UsageError("spec '" + spec.name + "' needs an mllm backend");
    if (!multimodal && !backends.llm) throw UsageError("spec '" + spec.name + "' needs an llm backend");
    if (spec.image_source == ImageSource::generated && !backends.t2i)
        throw UsageError("spec '" + spec.name + "' needs a t2i backend");
    if (!backends.embed) throw UsageError("spec '" + spec.name + "' needs an embed backend");

    std::optional<ImageCache> cache;
    if (spec.image_source == ImageSource::generated) cache.emplace(opt.cache_dir / "images");
    std::optional<ImageArtifact> demo;
    if (spec.image_source == ImageSource::demo) demo = demo_artifact(opt);

    p.manifest.stages = {{"image", spec.image_source == ImageSource::none ? "skipped" : "running"},
                         {"inference", "running"},
                         {"mapping", "running"},
                         {"scoring", "pending"}};
    write_manifest(p.dir, p.manifest);

    Journal journal(p.dir, p.done);
    std::mutex done_mu;
    auto done = p.done;
    std::atomic<long> failures{0};
    for (const auto& [id, r] : done) failures += r.has(RecordFlag::failed);
    const double budget = opt.failure_budget * double(dataset.samples.size());
    std::atomic<bool> aborted{false};

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        if (!done.contains(dataset.samples[i].id)) pending.push_back(i);

    const int max_tokens = spec.decode.max_new_tokens_or(kErMaxNewTokens);
    auto work = [&](std::size_t k) {
        const Sample& sample = dataset.samples[pending[k]];
        const auto t0 = std::chrono::steady_clock::now();
        retry_counter() = 0;
        PredictionRecord rec;
        rec.sample_id = sample.id;
        try {
            std::vector<ImageArtifact> images;
            if (cache) {
                auto fetched = cache->fetch_or_generate(
                    {sample.text, item_seed(spec.seed_policy, sample.id), opt.image_width, opt.image_height}, *backends.t2i);
                if (fetched.cache_hit) rec.flags.insert(RecordFlag::cache_hit);
                images.push_back(std::move(fetched.image));
            } else if (demo) {
                images.push_back(*demo);
            }
            for (const auto& img : images) rec.image_keys.push_back(img.cache_key);

            const auto prompt = build_er_prompt(spec, sample.text, dataset.labels, opt.templates);
            rec.raw_output = multimodal ? backends.mllm->generate(prompt, images, max_tokens, spec.decode.temperature)
                                        : backends.llm->generate(prompt, max_tokens, spec.decode.temperature);
            rec.extracted = spec.output_processing ? output_process(rec.raw_output, prompt, opt.echo_threshold)
                                                   : rec.raw_output;
            auto mapped = map_to_label(rec.extracted, dataset.labels, *backends.embed, opt.fallback_label);
            rec.prediction = mapped.label;
            rec.scores = std::move(mapped.scores);
            if (mapped.via == MappingVia::fallback) rec.flags.insert(RecordFlag::empty_extraction_fallback);
        } catch (const Error& e) {
            rec.raw_output.clear();
            rec.extracted.clear();
            rec.scores.clear();
            rec.prediction = opt.fallback_label ? canonicalize_label(*opt.fallback_label, dataset.labels)
                                                      .value_or(default_fallback_label(dataset.labels))
                                                : default_fallback_label(dataset.labels);
            rec.flags.insert(RecordFlag::failed);
            journal.error(sample.id, e.what());
            if (double(++failures) > budget) aborted = true;
        }
        if (retry_counter() > 0) rec.flags.insert(RecordFlag::retried);
        rec.latency_ms = opt.record_latency ? elapsed_ms(t0) : 0;
        journal.append(rec);
        std::lock_guard g(done_mu);
        done[rec.sample_id] = std::move(rec);
    };
    auto stop = [&] { return aborted.load() || (opt.stop_after && journal.appended() >= *opt.stop_after); };
    parallel_for(pending.size(), opt.parallelism, work, stop);

    if (aborted) return stop_early(p, done, RunStatus::aborted, backends);
    if (done.size() < dataset.samples.size()) return stop_early(p, done, RunStatus::running, backends);

    std::vector<PredictionRecord> records;
    std::vector<std::pair<std::string, std::string>> pairs;
    long n_fallback = 0;
    for (const auto& s : dataset.samples) {
        auto& r = done.at(s.id);
        if (s.gold_label) pairs.emplace_back(*s.gold_label, r.prediction);
        n_fallback += r.has(RecordFlag::empty_extraction_fallback) || r.has(RecordFlag::failed);
        records.push_back(std::move(r));
    }
    for (const char* stage : {"image", "inference", "mapping"})
        if (p.manifest.stages[stage] == "running") p.manifest.stages[stage] = "done";
    if (pairs.empty()) throw DataIntegrityError("dataset '" + dataset.ref.name + "' has no gold labels to score");
    return finish(p, std::move(records), score_er(dataset.labels, pairs, n_fallback), backends);
}

// ---------------------------------------------------------------------------
// Conversational QA

/// Composite image for a story (hstack of the five segment images, or the
/// demo policy) plus the flags it contributes to every turn.
struct StoryImages {
    std::optional<ImageArtifact> composite;
    std::vector<std::string> keys;
    bool all_hits = false;
    bool over_cap = false;
};

inline StoryImages stage_story_images(const ExperimentSpec& spec, const Story& story, BackendSet& backends,
                                      ImageCache* cache, const RunOptions& opt) {
    StoryImages out;
    if (spec.image_source == ImageSource::none) return out;
    if (spec.image_source == ImageSource::demo) {
        const auto demo = runner_detail::demo_artifact(opt);
        if (opt.demo_fivefold) {
            const std::vector<ImageArtifact> five(kStorySegments, demo);
            out.composite = hstack(five);
        } else {
            out.composite = demo;
        }
        out.keys.push_back(demo.cache_key);
        return out;
    }
    if (!backends.segment) throw UsageError("spec '" + spec.name + "' needs a segment backend");
    const auto seg = load_or_segment(opt.cache_dir, story, *backends.segment, opt.token_cap);
    out.over_cap = seg.over_cap_count() > 0;
    out.all_hits = true;
    std::vector<ImageArtifact> parts;
    for (std::size_t k = 0; k < seg.segments.size(); ++k) {
        auto fetched = cache->fetch_or_generate({trim(seg.segments[k].text), item_seed(spec.seed_policy, segment_item_id(story.id, k)),
                                                 opt.image_width, opt.image_height},
                                                *backends.t2i);
        out.all_hits = out.all_hits && fetched.cache_hit;
        out.keys.push_back(fetched.image.cache_key);
        parts.push_back(std::move(fetched.image));
    }
    out.composite = hstack(parts);
    return out;
}

inline RunResult run_qa(const ExperimentSpec& spec, const QaDataset& dataset, BackendSet& backends,
                        const RunOptions& opt = {}) {
    using namespace runner_detail;
    if (!directive_supports_qa(spec.directive))
        throw UsageError("directive '" + enum_name(spec.directive) + "' is not supported for question answering");
    auto p = prepare(spec, dataset.ref, backends, opt, options_fingerprint(opt, std::nullopt));
    if (p.finished) return load_finished(p);

    const bool multimodal = spec.modality == Modality::multimodal;
    if (multimodal && !backends.mllm) throw UsageError("spec '" + spec.name + "' needs an mllm backend");
    if (!multimodal && !backends.llm) throw UsageError("spec '" + spec.name + "' needs an llm backend");
    if (spec.image_source == ImageSource::generated && !backends.t2i)
        throw UsageError("spec '" + spec.name + "' needs a t2i backend");

    std::optional<ImageCache> cache;
    if (spec.image_source == ImageSource::generated) cache.emplace(opt.cache_dir / "images");

    p.manifest.stages = {{"image", spec.image_source == ImageSource::none ? "skipped" : "running"},
                         {"inference", "running"},
                         {"mapping", "skipped"},
                         {"scoring", "pending"}};
    write_manifest(p.dir, p.manifest);

    const auto first_stage = load_image_stage(p.dir / "image_stage.tsv");
    Journal journal(p.dir, p.done);
    std::mutex done_mu;
    auto done = p.done;
    std::size_t total_turns = 0;
    for (const auto& s : dataset.stories) total_turns += s.turns.size();
    std::atomic<long> failures{0};
    for (const auto& [id, r] : done) failures += r.has(RecordFlag::failed);
    const double budget = opt.failure_budget * double(total_turns);
    std::atomic<bool> aborted{false};
    auto stop = [&] { return aborted.load() || (opt.stop_after && journal.appended() >= *opt.stop_after); };

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < dataset.stories.size(); ++i) {
        const auto& s = dataset.stories[i];
        for (const auto& t : s.turns)
            if (!done.contains(qa_record_id(s.id, t.index))) {
                pending.push_back(i);
                break;
            }
    }

    const int max_tokens = spec.decode.max_new_tokens_or(kQaMaxNewTokens);
    auto work = [&](std::size_t k) {
        const Story& story = dataset.stories[pending[k]];
        retry_counter() = 0;
        StoryImages images;
        std::optional<std::string> image_error;
        try {
            images = stage_story_images(spec, story, backends, cache ? &*cache : nullptr, opt);
        } catch (const Error& e) {
            image_error = e.what();
        }
        bool image_retried = retry_counter() > 0;
        bool story_hit = images.all_hits;
        if (cache && !image_error) {
            if (auto it = first_stage.find(story.id); it != first_stage.end()) story_hit = it->second;
            else journal.staged(story.id, images.all_hits);
        }

        std::vector<std::pair<std::string, std::string>> history;
        for (const auto& turn : story.turns) {
            const auto id = qa_record_id(story.id, turn.index);
            {
                std::lock_guard g(done_mu);
                if (auto it = done.find(id); it != done.end()) {
                    history.emplace_back(turn.question,
                                         opt.gold_history ? turn.references.front() : it->second.prediction);
                    continue;
                }
            }
            if (stop()) return;
            const auto t0 = std::chrono::steady_clock::now();
            retry_counter() = 0;
            PredictionRecord rec;
            rec.sample_id = id;
            rec.image_keys = images.keys;
            if (story_hit) rec.flags.insert(RecordFlag::cache_hit);
            if (images.over_cap) rec.flags.insert(RecordFlag::over_cap);
            try {
                if (image_error) throw BackendError(*image_error, false);
                const auto story_text = spec.text_input == TextInput::input ? std::optional<std::string_view>(story.text)
                                                                            : std::nullopt;
                const auto prompt = build_qa_prompt(turn.question, history, spec.directive, story_text, opt.templates);
                if (multimodal) {
                    std::vector<ImageArtifact> imgs;
                    if (images.composite) imgs.push_back(*images.composite);
                    rec.raw_output = backends.mllm->generate(prompt, imgs, max_tokens, spec.decode.temperature);
                } else {
                    rec.raw_output = backends.llm->generate(prompt, max_tokens, spec.decode.temperature);
                }
                rec.extracted = spec.output_processing ? output_process(rec.raw_output, prompt, opt.echo_threshold)
                                                       : rec.raw_output;
                rec.prediction = trim(rec.extracted);
            } catch (const Error& e) {
                rec.raw_output.clear();
                rec.extracted.clear();
                rec.prediction.clear();
                rec.flags.insert(RecordFlag::failed);
                journal.error(id, e.what());
                if (double(++failures) > budget) aborted = true;
            }
            if (retry_counter() > 0 || image_retried) rec.flags.insert(RecordFlag::retried);
            image_retried = false;
            rec.latency_ms = opt.record_latency ? elapsed_ms(t0) : 0;
            history.emplace_back(turn.question, opt.gold_history ? turn.references.front() : rec.prediction);
            journal.append(rec);
            std::lock_guard g(done_mu);
            done[id] = std::move(rec);
        }
    };
    parallel_for(pending.size(), opt.parallelism, work, stop);

    if (aborted) return stop_early(p, done, RunStatus::aborted, backends);
    if (done.size() < total_turns) return stop_early(p, done, RunStatus::running, backends);

    std::vector<PredictionRecord> records;
    std::vector<QAPrediction> preds;
    long n_failed = 0;
    for (const auto& s : dataset.stories)
        for (const auto& t : s.turns) {
            auto& r = done.at(qa_record_id(s.id, t.index));
            preds.push_back({r.sample_id, r.prediction});
            n_failed += r.has(RecordFlag::failed);
            records.push_back(std::move(r));
        }
    for (const char* stage : {"image", "inference"})
        if (p.manifest.stages[stage] == "running") p.manifest.stages[stage] = "done";
    return finish(p, std::move(records), coqa_overall_f1(preds, dataset.stories, n_failed), backends);
}

// ---------------------------------------------------------------------------
// Image staging ahead of runs

struct StagingCounts {
    long generated = 0, cache_hits = 0;
};

/// Fills the image cache with every image the generated-image specs will
/// request for this dataset under `seed_policy`.
inline StagingCounts stage_er_images(const ErDataset& dataset, TextToImage& t2i, const SeedPolicy& seed_policy,
                                     const RunOptions& opt) {
    ImageCache cache(opt.cache_dir / "images");
    std::atomic<long> generated{0}, hits{0};
    runner_detail::parallel_for(
        dataset.samples.size(), opt.parallelism,
        [&](std::size_t i) {
            const auto& s = dataset.samples[i];
            auto r = cache.fetch_or_generate({s.text, item_seed(seed_policy, s.id), opt.image_width, opt.image_height}, t2i);
            ++(r.cache_hit ? hits : generated);
        },
        [] { return false; });
    return {generated.load(), hits.load()};
}

inline StagingCounts stage_qa_images(const QaDataset& dataset, BackendSet& backends, const SeedPolicy& seed_policy,
                                     const RunOptions& opt) {
    if (!backends.t2i || !backends.segment) throw UsageError("imagine for QA needs t2i and segment backends");
    ImageCache cache(opt.cache_dir / "images");
    std::atomic<long> generated{0}, hits{0};
    runner_detail::parallel_for(
        dataset.stories.size(), opt.parallelism,
        [&](std::size_t i) {
            const auto& story = dataset.stories[i];
            const auto seg = load_or_segment(opt.cache_dir, story, *backends.segment, opt.token_cap);
            for (std::size_t k = 0; k < seg.segments.size(); ++k) {
                auto r = cache.fetch_or_generate({trim(seg.segments[k].text),
                                                  item_seed(seed_policy, segment_item_id(story.id, k)),
                                                  opt.image_width, opt.image_height},
                                                 *backends.t2i);
                ++(r.cache_hit ? hits : generated);
            }
        },
        [] { return false; });
    return {generated.load(), hits.load()};
}

// ---------------------------------------------------------------------------
// Matrix

/// Whether a spec has a QA counterpart (the p1-p3 directives do not).
inline bool spec_runs_qa(const ExperimentSpec& spec) { return directive_supports_qa(spec.directive); }

struct MatrixResult {
    std::vector<RunResult> runs;
    std::vector<ReportRow> rows;
    bool all_finished = true;
};

/// Every spec over the ER dataset, and the QA-capable specs over the QA
/// dataset; one run directory each plus a combined table under out_dir.
inline MatrixResult run_matrix(const std::vector<ExperimentSpec>& specs, const std::optional<ErDataset>& er,
                               const std::optional<QaDataset>& qa, const std::vector<BackendDescriptor>& descriptors,
                               const RunOptions& opt) {
    MatrixResult out;
    auto per_run = opt;
    per_run.run_id.clear();
    auto add = [&](const ExperimentSpec& spec, RunResult r) {
        if (r.manifest.status != RunStatus::finished || !r.report) out.all_finished = false;
        else out.rows.push_back(runner_detail::report_row(spec, *r.report));
        out.runs.push_back(std::move(r));
    };
    if (er)
        for (const auto& spec : specs) {
            auto backends = bind_backends(spec, descriptors);
            add(spec, run_er(spec, *er, backends, per_run));
        }
    if (qa)
        for (const auto& spec : specs) {
            if (!spec_runs_qa(spec)) continue;
            auto backends = bind_backends(spec, descriptors);
            add(spec, run_qa(spec, *qa, backends, per_run));
        }
    json rows = json::array();
    for (const auto& r : out.rows)
        rows.push_back({{"experiment", r.experiment}, {"modality", r.modality},
                        {"output_processing", r.output_processing}, {"report", r.report}});
    fs::create_directories(opt.out_dir);
    write_file_atomic(opt.out_dir / "matrix.json", rows.dump(2) + "\n");
    write_file_atomic(opt.out_dir / "table.txt", render_table(out.rows));
    return out;
}

}  // namespace mh
