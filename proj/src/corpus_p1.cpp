#include "forensic/corpus_p1.hpp"

#include <algorithm>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "forensic/image.hpp"
#include "forensic/jsonl.hpp"
#include "forensic/prompt.hpp"
#include "forensic/rng.hpp"

namespace fs = std::filesystem;

namespace forensic::p1 {

void to_json(Json& j, const PairRecord& p) {
    j = Json{{"real", p.real}, {"fake", p.fake}, {"backend", p.backend}};
}

void from_json(const Json& j, PairRecord& p) {
    p.real = j.at("real").get<ImageRecord>();
    p.fake = j.at("fake").get<ImageRecord>();
    p.backend = j.at("backend").get<std::string>();
}

void to_json(Json& j, const QATemplate& t) {
    j = Json{{"id", t.id},
             {"instruction", t.instruction},
             {"answers", {{"real", t.answer_real}, {"fake", t.answer_fake}}}};
}

void from_json(const Json& j, QATemplate& t) {
    t.id = j.at("id").get<std::string>();
    t.instruction = j.at("instruction").get<std::string>();
    const Json& answers = j.at("answers");
    t.answer_real = answers.at("real").get<std::string>();
    t.answer_fake = answers.at("fake").get<std::string>();
    if (t.instruction.empty() || t.answer_real.empty() || t.answer_fake.empty()) {
        throw DataError("template " + t.id + ": empty instruction or answer");
    }
    if (to_lower(t.answer_real) == to_lower(t.answer_fake)) {
        throw DataError("template " + t.id + ": answers do not distinguish the labels");
    }
}

std::vector<QATemplate> default_templates() {
    return prompts::p1_templates().at("templates").get<std::vector<QATemplate>>();
}

namespace {

bool has_image_extension(const fs::path& p) {
    const std::string ext = to_lower(p.extension().string());
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".webp";
}

}  // namespace

IndexResult index_images(const fs::path& dir, const std::string& source_tag) {
    if (!fs::is_directory(dir)) {
        throw ConfigError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && has_image_extension(entry.path())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
        return a.lexically_relative(dir).generic_string() < b.lexically_relative(dir).generic_string();
    });

    IndexResult out;
    std::set<std::string> seen;
    for (const auto& file : files) {
        const std::string rel = file.lexically_relative(dir).generic_string();
        const std::string bytes = read_file_bytes(file);
        const auto dims = probe_image(bytes);
        if (!dims) {
            out.warnings.push_back("skipped undecodable image " + rel);
            continue;
        }
        std::string sha = sha256_hex(bytes);
        if (!seen.insert(sha).second) {
            out.warnings.push_back("skipped duplicate image " + rel);
            continue;
        }
        out.records.push_back(ImageRecord{source_tag + "/" + rel, fs::absolute(file).lexically_normal().string(),
                                          std::move(sha), dims->width, dims->height, source_tag});
    }
    for (const auto& w : out.warnings) {
        spdlog::warn("{}", w);
    }
    return out;
}

std::string StubReconstructor::reconstruct(std::string_view image_bytes) {
    return resample_roundtrip_png(image_bytes);
}

SidecarReconstructor::SidecarReconstructor(std::shared_ptr<Transport> transport, RetryPolicy retry,
                                           std::optional<std::uint64_t> seed)
    : transport_(std::move(transport)), retry_(retry), seed_(seed),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (!transport_) {
        throw ConfigError("sidecar transport is null");
    }
    if (retry_.max_attempts < 1) {
        throw ConfigError("retry.max_attempts must be >= 1");
    }
}

void SidecarReconstructor::check_ready() {
    const HttpReply reply = transport_->get("/health");
    if (reply.status != 200) {
        throw ConfigError("reconstruction sidecar not ready: " +
                          (reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status)));
    }
}

std::string SidecarReconstructor::reconstruct(std::string_view image_bytes) {
    const std::string body(image_bytes);
    std::string mime = sniff_mime(image_bytes);
    if (mime.empty()) {
        mime = "application/octet-stream";
    }
    HttpHeaders headers;
    if (seed_) {
        headers.emplace_back("X-Seed", std::to_string(*seed_));
    }
    Rng jitter(derive_seed(seed_.value_or(0), sha256_hex(image_bytes)));
    HttpReply reply;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        if (attempt > 1) {
            sleeper_(backoff_delay(retry_, attempt - 1, jitter.unit()));
        }
        reply = transport_->post("/reconstruct", body, mime, headers);
        if (reply.status == 200) {
            if (!probe_image(reply.body)) {
                throw ProtocolError("sidecar returned an undecodable image", reply.status);
            }
            return reply.body;
        }
        if (!is_retryable_status(reply.status)) {
            throw PermanentRequestError("sidecar rejected image: HTTP " + std::to_string(reply.status),
                                        reply.status);
        }
    }
    throw TransientExhaustedError(
        "sidecar unavailable after " + std::to_string(retry_.max_attempts) + " attempts: " +
            (reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status)),
        reply.status);
}

namespace {

std::string store_bytes(const fs::path& store_root, const std::string& sha, const std::string& ext,
                        std::string_view bytes) {
    const std::string rel = "images/" + sha + "." + ext;
    const fs::path target = store_root / rel;
    if (!fs::exists(target)) {
        write_file_atomic(target, bytes);
    }
    return rel;
}

PairRecord make_pair(const ImageRecord& real, Reconstructor& reconstructor, const fs::path& store_root) {
    const std::string bytes = read_file_bytes(real.path);
    if (sha256_hex(bytes) != real.sha256) {
        throw DataError("image changed since indexing");
    }
    const Dims dims{real.width_px, real.height_px};
    std::string ext = extension_for_mime(sniff_mime(bytes));
    if (ext.empty()) {
        throw DataError("unrecognized image format");
    }

    const std::string raw = reconstructor.reconstruct(bytes);
    const auto got = probe_image(raw);
    if (!got) {
        throw DataError("reconstruction does not decode");
    }
    std::string fake = *got == dims ? reencode_png(raw) : resize_to_png(raw, dims);
    std::string fake_sha = sha256_hex(fake);
    if (fake_sha == real.sha256 || same_pixels(bytes, fake)) {
        throw DataError("reconstruction is pixel-identical to the source");
    }

    PairRecord pair;
    pair.backend = reconstructor.tag();
    pair.real = real;
    pair.real.path = store_bytes(store_root, real.sha256, ext, bytes);
    pair.fake = ImageRecord{real.id + "#recon", store_bytes(store_root, fake_sha, "png", fake), fake_sha,
                            dims.width, dims.height, pair.backend};
    return pair;
}

}  // namespace

PairBuildReport build_pairs(const std::vector<ImageRecord>& reals, Reconstructor& reconstructor,
                            const fs::path& store_root, const TaskPool& pool) {
    reconstructor.check_ready();
    fs::create_directories(store_root / "images");

    std::vector<std::optional<PairRecord>> slots(reals.size());
    std::vector<std::string> errors(reals.size());
    pool.run(reals.size(), [&](std::size_t i) {
        try {
            slots[i] = make_pair(reals[i], reconstructor, store_root);
        } catch (const IoError&) {
            throw;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    PairBuildReport report;
    for (std::size_t i = 0; i < reals.size(); ++i) {
        if (slots[i]) {
            report.pairs.push_back(std::move(*slots[i]));
        } else {
            spdlog::warn("pair {} failed: {}", reals[i].id, errors[i]);
            report.failures.push_back({reals[i].id, errors[i]});
        }
    }
    if (report.pairs.empty()) {
        throw Error("no reconstruction succeeded (" + std::to_string(reals.size()) + " inputs)");
    }
    std::sort(report.pairs.begin(), report.pairs.end(),
              [](const PairRecord& a, const PairRecord& b) { return a.real.id < b.real.id; });
    std::sort(report.failures.begin(), report.failures.end(),
              [](const PairFailure& a, const PairFailure& b) { return a.real_id < b.real_id; });
    return report;
}

namespace {

Sample qa_sample(const PairRecord& pair, Label label, const QATemplate& tpl) {
    const ImageRecord& image = label == Label::Real ? pair.real : pair.fake;
    Sample s;
    s.id = pair.real.id + (label == Label::Real ? "#real" : "#fake");
    s.images = {image.id};
    s.label = label;
    s.generator = label == Label::Real ? pair.real.source : pair.backend;
    s.source = pair.real.source;
    s.messages.push_back(Message{Role::User, {ImageRef{image.id}, TextPart{tpl.instruction}}});
    s.messages.push_back(Message::text_only(Role::Assistant, tpl.answer(label)));
    s.meta = {{"template", tpl.id}, {"pair", pair.real.id}};
    return s;
}

}  // namespace

std::vector<Sample> emit_p1(const std::vector<PairRecord>& pairs, const std::vector<QATemplate>& templates,
                            std::uint64_t seed) {
    if (templates.empty()) {
        throw PreconditionError("template pool is empty");
    }
    std::vector<const PairRecord*> order;
    for (const auto& p : pairs) {
        order.push_back(&p);
    }
    std::sort(order.begin(), order.end(),
              [](const PairRecord* a, const PairRecord* b) { return a->real.id < b->real.id; });

    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(pairs.size() * 2);
    for (const PairRecord* p : order) {
        for (Label label : {Label::Real, Label::Fake}) {
            out.push_back(qa_sample(*p, label, templates[rng.below(templates.size())]));
        }
    }
    return out;
}

ImageIndex pair_index(const std::vector<PairRecord>& pairs, const fs::path& store_root) {
    ImageIndex index(store_root);
    for (const auto& p : pairs) {
        index.add(p.real);
        index.add(p.fake);
    }
    return index;
}

CorpusResult build_corpus(const CorpusOptions& options, Reconstructor& reconstructor, const TaskPool& pool) {
    CorpusResult result;
    IndexResult indexed = index_images(options.reals_dir, options.source_tag);
    result.indexed = indexed.records.size();
    result.pairs = build_pairs(indexed.records, reconstructor, options.out_dir, pool);
    result.samples = emit_p1(result.pairs.pairs, default_templates(), options.seed);

    const ImageIndex index = pair_index(result.pairs.pairs, options.out_dir);
    for (const auto& s : result.samples) {
        const ValidationReport report = validate_sample(s, index);
        if (!report.ok()) {
            throw DataError("sample " + s.id + ": " + report.summary());
        }
    }

    write_file_atomic(options.out_dir / "pairs.jsonl", dump_jsonl(result.pairs.pairs));
    write_file_atomic(options.out_dir / "p1.jsonl", to_jsonl(result.samples));
    Json failures = Json::array();
    for (const auto& f : result.pairs.failures) {
        failures.push_back({{"id", f.real_id}, {"error", f.error}});
    }
    const Json report{{"indexed", result.indexed},
                      {"pairs", result.pairs.pairs.size()},
                      {"samples", result.samples.size()},
                      {"backend", reconstructor.tag()},
                      {"prompts", prompts::kVersion},
                      {"seed", options.seed},
                      {"warnings", indexed.warnings},
                      {"failures", failures}};
    write_file_atomic(options.out_dir / "build_report.json", report.dump(2) + "\n");
    return result;
}

}  // namespace forensic::p1
