// Command-line front end: convert, imagine, run, score, report, mock-serve.
// Exit codes: 0 success, 1 run-level failure, 2 usage error.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mh/backends.hpp"
#include "mh/datamodel.hpp"
#include "mh/datasets.hpp"
#include "mh/errors.hpp"
#include "mh/metrics.hpp"
#include "mh/mock_server.hpp"
#include "mh/runner.hpp"

namespace {

using namespace mh;

struct CommonArgs {
    std::string config;
    std::string dataset;
    std::string qa_dataset;
    std::string backends;
    std::string fixture;
    std::string labels;
    std::string cache_dir;
    std::string out_dir;
    std::string demo_image;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallelism;
    std::optional<std::uint32_t> width, height;
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config '" + path + "': " + e.what());
    }
}

// Flag value when given, else the config field, else the default.
std::string pick(const std::string& flag, const json& cfg, const char* key, std::string fallback = {}) {
    if (!flag.empty()) return flag;
    if (cfg.contains(key) && cfg[key].is_string()) return cfg[key].get<std::string>();
    return fallback;
}

std::vector<BackendDescriptor> resolve_descriptors(const CommonArgs& a, const json& cfg) {
    if (!a.backends.empty()) return load_backends_file(a.backends);
    if (cfg.contains("backends")) {
        if (cfg["backends"].is_string()) return load_backends_file(cfg["backends"].get<std::string>());
        return parse_backends(cfg["backends"]);
    }
    return mock_descriptors(pick(a.fixture, cfg, "fixture"));
}

RunOptions resolve_options(const CommonArgs& a, const json& cfg) {
    RunOptions o;
    o.cache_dir = pick(a.cache_dir, cfg, "cache_dir", "cache");
    o.out_dir = pick(a.out_dir, cfg, "out_dir", "runs");
    o.parallelism = a.parallelism.value_or(cfg.value("parallelism", 4));
    if (o.parallelism < 1) throw UsageError("--parallelism must be >= 1");
    o.image_width = a.width.value_or(cfg.value("image_width", 64u));
    o.image_height = a.height.value_or(cfg.value("image_height", 64u));
    if (auto d = pick(a.demo_image, cfg, "demo_image"); !d.empty()) o.demo_image = d;
    o.demo_fivefold = cfg.value("demo_fivefold", false);
    o.gold_history = cfg.value("gold_history", false);
    if (cfg.contains("fallback_label")) o.fallback_label = cfg["fallback_label"].get<std::string>();
    if (cfg.contains("templates")) o.templates = PromptTemplates::load(cfg["templates"].get<std::string>());
    return o;
}

SeedPolicy resolve_seed(const CommonArgs& a, const json& cfg, SeedPolicy base) {
    if (cfg.contains("seed_policy")) base = cfg["seed_policy"].get<SeedPolicy>();
    if (cfg.contains("seed")) base.value = cfg["seed"].get<std::uint64_t>();
    if (a.seed) base.value = *a.seed;
    return base;
}

std::string spec_names_list() {
    std::string out;
    for (const auto& s : multimodal_specs()) out += "\n  " + s.name;
    out += "\nbaselines:";
    for (const auto& s : baseline_specs()) out += "\n  " + s.name;
    return out;
}

ExperimentSpec resolve_spec(const std::string& name_or_file, const json& cfg) {
    json j;
    if (!name_or_file.empty()) {
        if (auto s = find_named_spec(name_or_file)) return *s;
        std::ifstream in(name_or_file);
        if (!in) throw UsageError("unknown spec '" + name_or_file + "'; known specs:" + spec_names_list());
        j = json::parse(in);
    } else if (cfg.contains("spec")) {
        if (cfg["spec"].is_string()) return resolve_spec(cfg["spec"].get<std::string>(), json::object());
        j = cfg["spec"];
    } else {
        throw UsageError("no spec given (use --spec or --matrix); known specs:" + spec_names_list());
    }
    try {
        auto s = j.get<ExperimentSpec>();
        if (s.backend_ids.empty()) s.backend_ids = default_backend_ids(s.modality);
        return s;
    } catch (const json::exception& e) {
        throw UsageError(std::string("spec file: ") + e.what());
    }
}

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "Run configuration JSON");
    cmd->add_option("--dataset", a.dataset, "Dataset file or bundled set (mini-er, mini-qa)");
    cmd->add_option("--backends", a.backends, "Backend descriptors JSON");
    cmd->add_option("--fixture", a.fixture, "Mock fixture when no --backends is given");
    cmd->add_option("--labels", a.labels, "Label set: iemocap, meld or a JSON file");
    cmd->add_option("--cache-dir", a.cache_dir, "Image cache directory");
    cmd->add_option("--seed", a.seed, "Run-scoped seed");
    cmd->add_option("--parallelism", a.parallelism, "In-flight items");
    cmd->add_option("--width", a.width, "Generated image width");
    cmd->add_option("--height", a.height, "Generated image height");
}

int print_result(const RunResult& r) {
    const auto& m = r.manifest;
    std::cout << m.run_id << ": " << enum_name(m.status) << " (" << m.counters.samples << " records, "
              << m.counters.failures << " failed, " << m.counters.cache_hits << " cache hits) -> " << r.dir.string()
              << "\n";
    return m.status == RunStatus::finished ? 0 : 1;
}

int cmd_convert(const std::string& format, const std::string& input, const std::string& output,
                const std::string& labels_name, std::string rejects_path) {
    if (!fs::exists(input)) throw UsageError("cannot open '" + input + "'");
    if (format == "coqa") {
        std::ifstream in(input);
        const auto stories = convert_coqa(json::parse(in));
        write_file_atomic(output, serialize_stories(stories));
        std::cout << stories.size() << " stories -> " << output << "\n";
        return 0;
    }
    const auto fmt = enum_from_name<ErFormat>(format);
    const auto labels = resolve_labels(labels_name.empty() ? (fmt == ErFormat::meld_csv ? "meld" : "iemocap") : labels_name);
    const auto conv = convert_er(read_file(input), fmt, labels, fs::path(output).stem().string());
    write_file_atomic(output, serialize_samples(conv.samples));
    if (rejects_path.empty()) rejects_path = output + ".rejects.jsonl";
    std::string rejects;
    for (const auto& r : conv.rejects) rejects += dump_line(reject_to_json(r));
    write_file_atomic(rejects_path, rejects);
    std::cout << conv.samples.size() << " records -> " << output << ", " << conv.rejects.size() << " rejected -> "
              << rejects_path << "\n";
    return 0;
}

int cmd_imagine(const CommonArgs& a) {
    const auto cfg = load_config(a.config);
    const auto descriptors = resolve_descriptors(a, cfg);
    const auto opt = resolve_options(a, cfg);
    const auto seed = resolve_seed(a, cfg, SeedPolicy{});
    const auto name = pick(a.dataset, cfg, "dataset", "mini-er");
    const bool qa = name == "mini-qa" || (name != "mini-er" && detect_task(name) == Task::qa);
    auto backends = make_backends(descriptors, {{"t2i", "t2i"}, {"segment", "segment"}});
    StagingCounts c;
    if (qa) {
        c = stage_qa_images(load_qa_dataset(name), backends, seed, opt);
    } else {
        c = stage_er_images(load_er_dataset(name, resolve_labels(pick(a.labels, cfg, "labels"))), *backends.t2i, seed, opt);
    }
    std::cout << "generated " << c.generated << ", already cached " << c.cache_hits << " -> "
              << (opt.cache_dir / "images").string() << "\n";
    return 0;
}

int cmd_run(const CommonArgs& a, const std::string& spec_arg, bool matrix, const std::string& resume_id,
            bool no_latency, const std::string& run_id) {
    const auto cfg = load_config(a.config);
    const auto descriptors = resolve_descriptors(a, cfg);
    auto opt = resolve_options(a, cfg);
    opt.record_latency = !no_latency && cfg.value("record_latency", true);
    opt.run_id = run_id;
    const auto labels = resolve_labels(pick(a.labels, cfg, "labels"));

    if (matrix || cfg.value("matrix", false)) {
        std::vector<ExperimentSpec> specs = multimodal_specs();
        for (auto& s : specs) s.seed_policy = resolve_seed(a, cfg, s.seed_policy);
        std::optional<ErDataset> er;
        std::optional<QaDataset> qa;
        const auto er_name = pick(a.dataset, cfg, "dataset", "mini-er");
        const auto qa_name = pick(a.qa_dataset, cfg, "qa_dataset", "mini-qa");
        if (er_name != "none") er = load_er_dataset(er_name, labels);
        if (qa_name != "none") qa = load_qa_dataset(qa_name);
        opt.resume = !resume_id.empty();
        const auto result = run_matrix(specs, er, qa, descriptors, opt);
        int rc = 0;
        for (const auto& r : result.runs) rc = std::max(rc, print_result(r));
        std::cout << "\n" << render_table(result.rows);
        return rc;
    }

    ExperimentSpec spec;
    std::string dataset_name = pick(a.dataset, cfg, "dataset");
    if (!resume_id.empty()) {
        opt.run_id = resume_id;
        opt.resume = true;
        const auto m = load_manifest(opt.out_dir / resume_id / "run.json");
        spec = spec_arg.empty() && !cfg.contains("spec") ? m.spec : resolve_spec(spec_arg, cfg);
        if (dataset_name.empty()) dataset_name = m.dataset.path.empty() ? m.dataset.name : m.dataset.path;
    } else {
        spec = resolve_spec(spec_arg, cfg);
    }
    spec.seed_policy = resolve_seed(a, cfg, spec.seed_policy);
    if (dataset_name.empty()) dataset_name = "mini-er";
    auto backends = bind_backends(spec, descriptors);
    const bool qa = dataset_name == "mini-qa" || (dataset_name != "mini-er" && detect_task(dataset_name) == Task::qa);
    const auto result = qa ? run_qa(spec, load_qa_dataset(dataset_name), backends, opt)
                           : run_er(spec, load_er_dataset(dataset_name, labels), backends, opt);
    const int rc = print_result(result);
    if (result.report) std::cout << read_file(result.dir / "table.txt");
    return rc;
}

int cmd_score(const std::string& predictions, const std::string& task_name, const std::string& dataset,
              const std::string& labels_name, const std::string& out) {
    const auto task = enum_from_name<Task>(task_name);
    const auto records = load_predictions(predictions);
    ScoreReport report;
    if (task == Task::qa) {
        const auto stories = load_qa_dataset(dataset.empty() ? "mini-qa" : dataset).stories;
        std::vector<QAPrediction> preds;
        long failed = 0;
        for (const auto& r : records) {
            preds.push_back({r.sample_id, r.prediction});
            failed += r.has(RecordFlag::failed);
        }
        report = coqa_overall_f1(preds, stories, failed);
    } else {
        const auto labels = resolve_labels(labels_name);
        const auto ds = load_er_dataset(dataset.empty() ? "mini-er" : dataset, labels);
        std::map<std::string, const Sample*> gold;
        for (const auto& s : ds.samples) gold[s.id] = &s;
        std::vector<std::pair<std::string, std::string>> pairs;
        long fallback = 0;
        for (const auto& r : records) {
            auto it = gold.find(r.sample_id);
            if (it == gold.end()) throw DataIntegrityError("prediction '" + r.sample_id + "' matches no sample");
            if (!it->second->gold_label) continue;
            pairs.emplace_back(*it->second->gold_label, r.prediction);
            fallback += r.has(RecordFlag::empty_extraction_fallback) || r.has(RecordFlag::failed);
        }
        report = score_er(labels, pairs, fallback);
    }
    const auto text = json(report).dump(2) + "\n";
    if (out.empty()) std::cout << text;
    else write_file_atomic(out, text);
    return 0;
}

int cmd_report(const std::string& runs_dir) {
    std::vector<ReportRow> er_rows, qa_rows;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(runs_dir))
        if (e.is_directory() && fs::exists(e.path() / "run.json") && fs::exists(e.path() / "report.json"))
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
        const auto m = load_manifest(d / "run.json");
        const auto report = json::parse(read_file(d / "report.json")).get<ScoreReport>();
        ReportRow row{m.spec.name, enum_name(m.spec.modality), m.spec.output_processing, report};
        (report.task == Task::er ? er_rows : qa_rows).push_back(row);
    }
    if (er_rows.empty() && qa_rows.empty()) throw UsageError("no finished runs under '" + runs_dir + "'");
    er_rows.insert(er_rows.end(), qa_rows.begin(), qa_rows.end());
    std::cout << render_table(er_rows);
    return 0;
}

MockServer* g_server = nullptr;

int cmd_mock_serve(const std::string& fixture, const std::string& host, int port) {
    MockServer server(load_mock_fixture(fixture));
    g_server = &server;
    std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
    std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
    std::cout << "mock backends on http://" << host << ":" << port << std::endl;
    server.serve_blocking(host, port);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot multimodal evaluation harness"};
    app.require_subcommand(1);

    auto* convert = app.add_subcommand("convert", "Convert a raw dataset into normalized JSONL");
    std::string format, input, output, conv_labels, rejects;
    convert->add_option("--format", format, "meld-csv, iemocap-lines or coqa")->required();
    convert->add_option("--input", input, "Source file")->required();
    convert->add_option("--output", output, "Normalized JSONL output")->required();
    convert->add_option("--labels", conv_labels, "Label set for ER formats");
    convert->add_option("--rejects", rejects, "Rejects file (default <output>.rejects.jsonl)");

    CommonArgs imagine_args;
    auto* imagine = app.add_subcommand("imagine", "Pre-fill the image cache for a dataset");
    add_common(imagine, imagine_args);

    CommonArgs run_args;
    std::string spec_arg, resume_id, run_id;
    bool matrix = false, no_latency = false;
    auto* run = app.add_subcommand("run", "Run one spec or the whole matrix");
    add_common(run, run_args);
    run->add_option("--spec", spec_arg, "Named spec or spec JSON file");
    run->add_flag("--matrix", matrix, "Run all eight multimodal specs over the ER and QA sets");
    run->add_option("--qa-dataset", run_args.qa_dataset, "QA dataset for --matrix (default mini-qa, or none)");
    run->add_option("--out-dir", run_args.out_dir, "Run output directory");
    run->add_option("--demo-image", run_args.demo_image, "PNG used by demo-image specs");
    run->add_option("--resume", resume_id, "Resume the given run id");
    run->add_option("--run-id", run_id, "Run directory name (default <spec>__<dataset>)");
    run->add_flag("--no-latency", no_latency, "Write latency_ms as 0 for byte-comparable outputs");

    std::string predictions, task = "er", score_dataset, score_labels, score_out;
    auto* score = app.add_subcommand("score", "Re-score a predictions file");
    score->add_option("--predictions", predictions, "predictions.jsonl")->required();
    score->add_option("--task", task, "er or qa");
    score->add_option("--dataset", score_dataset, "Dataset holding the references");
    score->add_option("--labels", score_labels, "Label set for ER");
    score->add_option("--out", score_out, "Write the report here instead of stdout");

    std::string runs_dir = "runs";
    auto* report = app.add_subcommand("report", "Render the results table of finished runs");
    report->add_option("--out-dir", runs_dir, "Directory holding run directories");

    std::string fixture, host = "127.0.0.1";
    int port = 8765;
    auto* serve = app.add_subcommand("mock-serve", "Serve fixture-driven mock backends over HTTP");
    serve->add_option("--fixture", fixture, "Mock fixture JSON");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*convert) return cmd_convert(format, input, output, conv_labels, rejects);
        if (*imagine) return cmd_imagine(imagine_args);
        if (*run) return cmd_run(run_args, spec_arg, matrix, resume_id, no_latency, run_id);
        if (*score) return cmd_score(predictions, task, score_dataset, score_labels, score_out);
        if (*report) return cmd_report(runs_dir);
        if (*serve) return cmd_mock_serve(fixture, host, port);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
