#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "forensic/align.hpp"
#include "forensic/corpus_p1.hpp"
#include "forensic/detect_bench.hpp"
#include "forensic/dialectic_p2.hpp"
#include "forensic/error.hpp"
#include "forensic/explain_bench.hpp"
#include "forensic/hash.hpp"
#include "forensic/jsonl.hpp"
#include "forensic/train_manifest.hpp"

namespace fs = std::filesystem;

namespace forensic::cli {

namespace {

struct GlobalConfig {
    std::map<std::string, EndpointConfig> endpoints;
    std::optional<fs::path> cache_dir;
    std::string log_level = "info";
    std::uint64_t seed = 0;
    std::size_t workers = 4;
};

Json read_json_file(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError("no such file: " + path.string());
    }
    try {
        return Json::parse(read_file_bytes(path));
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

GlobalConfig load_config(const std::string& path) {
    GlobalConfig g;
    if (path.empty()) {
        return g;
    }
    const Json j = read_json_file(path);
    try {
        if (j.contains("endpoints")) {
            for (const auto& [name, cfg] : j["endpoints"].items()) {
                g.endpoints[name] = cfg.get<EndpointConfig>();
            }
        }
        if (j.contains("cache_dir") && !j["cache_dir"].is_null()) {
            g.cache_dir = fs::path(path).parent_path() / j["cache_dir"].get<std::string>();
        }
        g.log_level = j.value("log_level", g.log_level);
        g.seed = j.value("seed", g.seed);
        g.workers = j.value("workers", g.workers);
    } catch (const ConfigError&) {
        throw;
    } catch (const Json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (g.workers == 0) {
        throw ConfigError("workers must be positive");
    }
    return g;
}

struct Context {
    GlobalConfig config;
    const Env* env = nullptr;
    bool dry_run = false;
    std::ostream& out() const { return *env->out; }

    // Endpoint by configured name, or a JSON file holding one EndpointConfig.
    EndpointConfig endpoint(const std::string& ref) const {
        if (const auto it = config.endpoints.find(ref); it != config.endpoints.end()) {
            return it->second;
        }
        if (fs::exists(ref)) {
            try {
                return read_json_file(ref).get<EndpointConfig>();
            } catch (const Json::exception& e) {
                throw ConfigError(ref + ": " + e.what());
            }
        }
        throw ConfigError("endpoint '" + ref + "' is neither a configured name nor a file");
    }

    std::unique_ptr<ChatClient> client(const std::string& ref) const {
        EndpointConfig cfg = endpoint(ref);
        validate(cfg);
        std::shared_ptr<const ResponseCache> cache;
        if (config.cache_dir) {
            cache = std::make_shared<ResponseCache>(*config.cache_dir);
        }
        return std::make_unique<ChatClient>(cfg, env->make_transport(cfg.base_url, cfg.timeout_s), cache);
    }

    TaskPool pool() const { return TaskPool(config.workers); }
};

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(trim(item)));
        } catch (const std::exception&) {
            throw ConfigError("bad integer list '" + text + "'");
        }
    }
    return out;
}

void log_stats(const char* name, const ChatClient& client) {
    const ClientStats s = client.stats();
    spdlog::info("{}: {} requests, {} cache hits, {} network calls, {} retries", name, s.requests, s.cache_hits,
                 s.network_calls, s.retries);
}

// --------------------------------------------------------------------------

struct BuildP1Args {
    std::string reals;
    std::string out;
    std::string source_tag = "mscoco";
    std::string backend = "stub";
    std::string sidecar;
};

int build_p1(const Context& ctx, const BuildP1Args& a) {
    const auto indexed = p1::index_images(a.reals, a.source_tag);
    if (ctx.dry_run) {
        ctx.out() << "build-p1 plan: " << indexed.records.size() << " real images from " << a.reals << ", backend "
                  << a.backend << ", " << 2 * indexed.records.size() << " samples to " << a.out << "\n";
        return kExitOk;
    }
    std::unique_ptr<p1::Reconstructor> recon;
    if (a.backend == "stub") {
        recon = std::make_unique<p1::StubReconstructor>();
    } else if (a.backend == "sidecar") {
        if (a.sidecar.empty()) {
            throw ConfigError("--backend sidecar needs --sidecar URL");
        }
        recon = std::make_unique<p1::SidecarReconstructor>(ctx.env->make_transport(a.sidecar, 300.0), RetryPolicy{},
                                                           ctx.config.seed);
    } else {
        throw ConfigError("unknown backend '" + a.backend + "'");
    }
    p1::CorpusOptions opts{a.reals, a.source_tag, a.out, ctx.config.seed};
    const auto result = p1::build_corpus(opts, *recon, ctx.pool());
    ctx.out() << "p1: " << result.samples.size() << " samples from " << result.pairs.pairs.size() << " pairs ("
              << result.pairs.failures.size() << " failed) -> " << (fs::path(a.out) / "p1.jsonl").string() << "\n";
    return kExitOk;
}

struct BuildP2Args {
    std::string pools;
    std::string quotas;
    std::string generator;
    std::string out;
};

int build_p2(const Context& ctx, const BuildP2Args& a) {
    const auto pools = p2::pools_from_json(read_json_file(a.pools), fs::path(a.pools).parent_path());
    const p2::Quotas quotas = a.quotas.empty() ? p2::default_quotas() : p2::quotas_from_json(read_json_file(a.quotas));
    const auto targets = p2::plan_p2(pools, quotas, ctx.config.seed);
    if (ctx.dry_run) {
        ctx.out() << "build-p2 plan: " << targets.size() << " images, at least " << 3 * targets.size()
                  << " generator calls (V1, V2, V3 each)\n";
        for (const auto& [source, n] : quotas) {
            ctx.out() << "  " << source << ": " << n << "\n";
        }
        return kExitOk;
    }
    if (a.generator.empty()) {
        throw ConfigError("--generator is required");
    }
    auto client = ctx.client(a.generator);
    p2::P2Options opts;
    opts.seed = ctx.config.seed;
    const auto result = p2::build_p2(targets, *client, ctx.pool(), opts);
    p2::write_p2(result, a.out, ctx.config.seed);
    log_stats("generator", *client);
    ctx.out() << "p2: " << result.samples.size() << " of " << targets.size() << " images ("
              << result.failures.size() << " failed) -> " << (fs::path(a.out) / "p2.jsonl").string() << "\n";
    return result.samples.empty() ? kExitFailure : kExitOk;
}

struct DetectArgs {
    std::string bench;
    std::string model;
    std::string mode = "balanced";
    long long budget = 1024LL * 1024;
    std::string sweep;
    std::string template_id = "real-or-fake";
    std::string out;
};

int run_detect(const Context& ctx, const DetectArgs& a) {
    const detect::BenchMode mode = detect::parse_bench_mode(a.mode);
    detect::DetectOptions opts;
    bool found = false;
    for (const auto& t : p1::default_templates()) {
        if (t.id == a.template_id) {
            opts.instruction = t.instruction;
            const std::string yes = "yes";
            opts.polarity = to_lower(t.answer_fake) == yes   ? detect::Polarity::YesMeansFake
                            : to_lower(t.answer_real) == yes ? detect::Polarity::YesMeansReal
                                                             : detect::Polarity::None;
            found = true;
        }
    }
    if (!found) {
        throw ConfigError("unknown template '" + a.template_id + "'");
    }
    opts.budget = a.budget;
    const auto bench = detect::load_bench(read_json_file(a.bench), fs::path(a.bench).parent_path(), opts.instruction);
    std::vector<long long> budgets;
    if (a.sweep == "default") {
        budgets = detect::default_sweep_budgets();
    } else if (!a.sweep.empty()) {
        for (int side : parse_int_list(a.sweep)) {
            if (side <= 0) {
                throw ConfigError("sweep sides must be positive");
            }
            budgets.push_back(static_cast<long long>(side) * side);
        }
    }
    if (ctx.dry_run) {
        const std::size_t passes = budgets.empty() ? 1 : budgets.size();
        ctx.out() << "run-detect plan: " << bench.items.size() << " images x " << passes << " budget(s) = "
                  << bench.items.size() * passes << " requests, mode " << detect::to_string(mode) << ", rule "
                  << detect::kVerdictRule << "\n";
        return kExitOk;
    }
    auto client = ctx.client(a.model);
    const fs::path out(a.out);
    if (!budgets.empty()) {
        const auto points = detect::resolution_sweep(bench, budgets, *client, ctx.pool(), mode, opts);
        write_file_atomic(out / "sweep.csv", detect::sweep_csv(points));
        write_file_atomic(out / "sweep.md", detect::sweep_markdown(points));
        ctx.out() << detect::sweep_markdown(points);
    } else {
        const auto preds = detect::run_detection(bench, *client, ctx.pool(), opts);
        const auto report = detect::evaluate(bench.items, detect::verdict_map(preds), mode);
        write_file_atomic(out / "predictions.jsonl", dump_jsonl(preds));
        write_file_atomic(out / "report.md", detect::to_markdown(report));
        write_file_atomic(out / "report.csv", detect::to_csv(report));
        ctx.out() << detect::to_markdown(report);
    }
    log_stats("model", *client);
    return kExitOk;
}

struct JudgeBenchArgs {
    std::string pool_a;
    std::string pool_b;
    std::size_t n_per = 400;
    std::string out;
};

int build_judge_bench(const Context& ctx, const JudgeBenchArgs& a) {
    const auto pa = p1::index_images(a.pool_a, fs::path(a.pool_a).filename().string()).records;
    const auto pb = p1::index_images(a.pool_b, fs::path(a.pool_b).filename().string()).records;
    const auto cases = explain::build_bench(pa, pb, a.n_per, ctx.config.seed);
    if (ctx.dry_run) {
        ctx.out() << "build-judge-bench plan: " << cases.size() << " cases\n";
        return kExitOk;
    }
    write_file_atomic(a.out, dump_jsonl(cases));
    ctx.out() << cases.size() << " cases -> " << a.out << "\n";
    return kExitOk;
}

struct JudgeArgs {
    std::string bench;
    std::string subject;
    std::string judge;
    std::string out;
};

int run_judge(const Context& ctx, const JudgeArgs& a) {
    const auto cases = read_jsonl_file<explain::JudgeCase>(a.bench).items;
    if (cases.empty()) {
        throw ConfigError("no cases in " + a.bench);
    }
    if (ctx.dry_run) {
        ctx.out() << "run-judge plan: " << cases.size() << " subject calls + " << cases.size() << " judge calls\n";
        return kExitOk;
    }
    auto subject = ctx.client(a.subject);
    auto judge = ctx.client(a.judge);
    const auto results = explain::run_explainbench(cases, *subject, *judge, ctx.pool());
    const fs::path out(a.out);
    write_file_atomic(out / "judge_results.jsonl", dump_jsonl(results));
    const auto agg = explain::aggregate(results);
    const std::string report = explain::report_markdown(agg, subject->config().model_id);
    write_file_atomic(out / "explain_report.md", report);
    log_stats("subject", *subject);
    log_stats("judge", *judge);
    ctx.out() << report;
    return kExitOk;
}

struct AlignArgs {
    std::string annotations;
    std::string formats = "1,2,4";
    std::string scorer;
    std::string generator;
    std::string images;
    std::string out;
};

int run_align(const Context& ctx, const AlignArgs& a) {
    const std::vector<int> formats = parse_int_list(a.formats);
    for (int f : formats) {
        if (f < p2::kMinRounds || f > p2::kMaxRounds) {
            throw ConfigError("formats must be round counts in [1, 4]");
        }
    }
    ImageIndex index;
    if (!a.images.empty()) {
        for (auto& rec : read_jsonl_file<ImageRecord>(a.images).items) {
            index.add(std::move(rec));
        }
    }
    const ImageResolver resolver = index_resolver(index);
    const ImageResolver* resolve = a.images.empty() ? nullptr : &resolver;

    // The annotation file holds either tagged dialogue samples or seed annotations.
    const std::string bytes = read_file_bytes(a.annotations);
    std::vector<Sample> samples;
    std::vector<p2::SeedAnnotation> seeds;
    const auto as_samples = from_jsonl(bytes, ParseMode::Lenient);
    if (as_samples.errors.empty() && !as_samples.items.empty()) {
        samples = as_samples.items;
    } else {
        seeds = parse_jsonl<p2::SeedAnnotation>(bytes, ParseMode::Strict).items;
    }
    if (ctx.dry_run) {
        if (!seeds.empty()) {
            ctx.out() << "run-align plan: " << seeds.size() << " annotations x " << formats.size()
                      << " formats to synthesize, then score\n";
        } else {
            ctx.out() << "run-align plan: score " << samples.size() << " samples\n";
        }
        return kExitOk;
    }
    const fs::path out(a.out);
    if (!seeds.empty()) {
        if (a.generator.empty()) {
            throw ConfigError("seed annotations need --generator to synthesize the formats");
        }
        auto scorer = ctx.client(a.scorer);
        probe_scoring(*scorer);
        auto generator = ctx.client(a.generator);
        samples = align::synthesize_formats(seeds, formats, *generator, ctx.pool(), ctx.config.seed, resolve);
        write_file_atomic(out / "align_samples.jsonl", to_jsonl(samples));
        log_stats("generator", *generator);
    }
    auto scorer = ctx.client(a.scorer);
    const auto rows = align::compare_formats(samples, formats, *scorer, ctx.pool(), resolve);
    write_file_atomic(out / "align.csv", align::align_csv(rows));
    write_file_atomic(out / "align.md", align::align_markdown(rows));
    log_stats("scorer", *scorer);
    ctx.out() << align::align_markdown(rows);
    return kExitOk;
}

struct TrainArgs {
    std::string stage;
    std::string out;
};

int emit_train_config(const Context& ctx, const TrainArgs& a) {
    const Json doc = train::to_json(train::emit_stage_config(train::parse_stage(a.stage)));
    const ValidationReport report = train::validate_config(doc);
    if (!report.ok()) {
        throw Error("emitted config fails validation: " + report.summary());
    }
    if (ctx.dry_run) {
        ctx.out() << doc.dump(2) << "\n";
        return kExitOk;
    }
    write_file_atomic(a.out, doc.dump(2) + "\n");
    ctx.out() << "wrote " << a.out << "\n";
    return kExitOk;
}

void setup_logging(const std::string& level) {
    static auto logger = [] {
        auto l = spdlog::stderr_color_mt("forensic");
        spdlog::set_default_logger(l);
        return l;
    }();
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && level != "off") {
        throw ConfigError("unknown log level '" + level + "'");
    }
    logger->set_level(lvl);
}

}  // namespace

int dispatch(int argc, const char* const* argv, const Env& env_in) {
    Env env = env_in;
    if (!env.out) env.out = &std::cout;
    if (!env.err) env.err = &std::cerr;

    CLI::App app{"Forensic dataset construction and evaluation toolkit", "forensic"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string log_level;
    std::string cache_dir;
    bool dry_run = false;
    app.add_option("--config", config_path, "JSON config: endpoints, cache_dir, log_level, seed, workers");
    app.add_option("--seed", seed, "Seed for every stochastic step (overrides the config)");
    app.add_option("--workers", workers, "Concurrent pipelines");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
    app.add_option("--cache", cache_dir, "Response cache directory (overrides the config)");
    app.add_flag("--dry-run", dry_run, "Print the request plan without network calls");

    BuildP1Args p1a;
    auto* p1c = app.add_subcommand("build-p1", "Build the pseudo-fake QA corpus");
    p1c->add_option("--reals", p1a.reals, "Directory of real images")->required();
    p1c->add_option("--out", p1a.out, "Output directory")->required();
    p1c->add_option("--source-tag", p1a.source_tag, "Source tag for image ids");
    p1c->add_option("--backend", p1a.backend, "stub or sidecar")->check(CLI::IsMember({"stub", "sidecar"}));
    p1c->add_option("--sidecar", p1a.sidecar, "Reconstruction sidecar base URL");

    BuildP2Args p2a;
    auto* p2c = app.add_subcommand("build-p2", "Build the multi-turn dialogue corpus");
    p2c->add_option("--pools", p2a.pools, "JSON array of {source, label, dir}")->required();
    p2c->add_option("--quotas", p2a.quotas, "JSON map source -> count (default: full recipe)");
    p2c->add_option("--generator", p2a.generator, "Generator endpoint (name or file)");
    p2c->add_option("--out", p2a.out, "Output directory")->required();

    DetectArgs da;
    auto* dc = app.add_subcommand("run-detect", "Detection benchmark");
    dc->add_option("--bench", da.bench, "Bench manifest {subsets: [{tag, dir, label}]}")->required();
    dc->add_option("--model", da.model, "Model endpoint (name or file)")->required();
    dc->add_option("--mode", da.mode, "balanced or fake-only")->check(CLI::IsMember({"balanced", "fake-only"}));
    dc->add_option("--budget", da.budget, "Total pixel budget per image");
    dc->add_option("--sweep", da.sweep, "Comma list of square sides, or 'default'");
    dc->add_option("--template", da.template_id, "Question template id");
    dc->add_option("--out", da.out, "Output directory")->required();

    JudgeBenchArgs jba;
    auto* jbc = app.add_subcommand("build-judge-bench", "Sample judge cases from two fake pools");
    jbc->add_option("--pool-a", jba.pool_a, "First fake image directory")->required();
    jbc->add_option("--pool-b", jba.pool_b, "Second fake image directory")->required();
    jbc->add_option("--n-per", jba.n_per, "Cases per pool");
    jbc->add_option("--out", jba.out, "Output case list (JSONL)")->required();

    JudgeArgs ja;
    auto* jc = app.add_subcommand("run-judge", "Explanation quality with an LLM judge");
    jc->add_option("--bench", ja.bench, "Case list (JSONL)")->required();
    jc->add_option("--subject", ja.subject, "Subject endpoint (name or file)")->required();
    jc->add_option("--judge", ja.judge, "Judge endpoint (name or file)")->required();
    jc->add_option("--out", ja.out, "Output directory")->required();

    AlignArgs aa;
    auto* ac = app.add_subcommand("run-align", "NLL and perplexity per dialogue format");
    ac->add_option("--annotations", aa.annotations, "Tagged samples or seed annotations (JSONL)")->required();
    ac->add_option("--formats", aa.formats, "Comma list of round counts");
    ac->add_option("--scorer", aa.scorer, "Scoring endpoint (name or file)")->required();
    ac->add_option("--generator", aa.generator, "Generator endpoint for seed annotations");
    ac->add_option("--images", aa.images, "images.jsonl resolving image ids");
    ac->add_option("--out", aa.out, "Output directory")->required();

    TrainArgs ta;
    auto* tc = app.add_subcommand("emit-train-config", "Write a training stage manifest");
    tc->add_option("--stage", ta.stage, "ve or dft")->required();
    tc->add_option("--out", ta.out, "Output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, *env.out, *env.err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        Context ctx;
        ctx.env = &env;
        ctx.dry_run = dry_run;
        ctx.config = load_config(config_path);
        if (seed) ctx.config.seed = *seed;
        if (workers) ctx.config.workers = std::max<std::size_t>(*workers, 1);
        if (!log_level.empty()) ctx.config.log_level = log_level;
        if (!cache_dir.empty()) ctx.config.cache_dir = cache_dir;
        setup_logging(ctx.config.log_level);

        if (p1c->parsed()) return build_p1(ctx, p1a);
        if (p2c->parsed()) return build_p2(ctx, p2a);
        if (dc->parsed()) return run_detect(ctx, da);
        if (jbc->parsed()) return build_judge_bench(ctx, jba);
        if (jc->parsed()) return run_judge(ctx, ja);
        if (ac->parsed()) return run_align(ctx, aa);
        if (tc->parsed()) return emit_train_config(ctx, ta);
        return kExitUsage;
    } catch (const ConfigError& e) {
        *env.err << "forensic: configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UnsupportedCapability& e) {
        *env.err << "forensic: unsupported: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        *env.err << "forensic: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace forensic::cli
