#include "forensic/dialectic_p2.hpp"

#include <algorithm>
#include <array>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "forensic/corpus_p1.hpp"
#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "forensic/prompt.hpp"

namespace fs = std::filesystem;

namespace forensic::p2 {

void to_json(Json& j, const EvidenceEntry& e) {
    j = Json{{"text", e.text}, {"bbox2d", e.bbox2d}};
}

void from_json(const Json& j, EvidenceEntry& e) {
    e.text = j.at("text").get<std::string>();
    e.bbox2d = j.at("bbox2d").get<std::vector<int>>();
}

ValidationReport validate_entry(const EvidenceEntry& entry) {
    ValidationReport report;
    if (trim(entry.text).empty()) {
        report.add("empty text");
    }
    const auto& b = entry.bbox2d;
    if (b.empty()) {
        return report;
    }
    if (b.size() != 4) {
        report.add("bbox2d arity", std::to_string(b.size()) + " values");
        return report;
    }
    for (int v : b) {
        if (v < 0 || v > 1000) {
            report.add("bbox2d out of range", std::to_string(v));
            return report;
        }
    }
    if (b[0] > b[2]) {
        report.add("y_min > y_max");
    }
    if (b[1] > b[3]) {
        report.add("x_min > x_max");
    }
    return report;
}

namespace {

constexpr std::array kTextKeys = {"text", "analysis", "description", "content", "finding"};

// Element -> entry, or the reason it is rejected.
std::variant<EvidenceEntry, std::string> parse_entry(const Json& el) {
    if (!el.is_object()) {
        return std::string("element is not an object");
    }
    EvidenceEntry entry;
    bool found = false;
    for (const char* key : kTextKeys) {
        if (auto it = el.find(key); it != el.end() && it->is_string()) {
            entry.text = it->get<std::string>();
            found = true;
            break;
        }
    }
    if (!found) {
        return std::string("missing text");
    }
    const auto bbox = el.find("bbox2d");
    if (bbox == el.end()) {
        return std::string("missing bbox2d");
    }
    if (!bbox->is_array()) {
        return std::string("bbox2d is not a list");
    }
    for (const Json& v : *bbox) {
        if (v.is_number_integer()) {
            entry.bbox2d.push_back(v.get<int>());
        } else if (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>()))) {
            entry.bbox2d.push_back(static_cast<int>(v.get<double>()));
        } else {
            return std::string("bbox2d holds a non-integer value");
        }
    }
    const ValidationReport report = validate_entry(entry);
    if (!report.ok()) {
        return report.summary();
    }
    return entry;
}

}  // namespace

EvidenceParse parse_evidence(std::string_view text, ParseMode mode) {
    const auto array = extract_first_json_array(text);
    if (!array) {
        throw EvidenceParseError("no JSON array in response");
    }
    EvidenceParse out;
    std::size_t i = 0;
    for (const Json& el : *array) {
        auto parsed = parse_entry(el);
        if (auto* entry = std::get_if<EvidenceEntry>(&parsed)) {
            out.entries.push_back(std::move(*entry));
        } else {
            std::string diag = "entry " + std::to_string(i) + ": " + std::get<std::string>(parsed);
            if (mode == ParseMode::Strict) {
                throw EvidenceParseError(diag);
            }
            out.diagnostics.push_back(std::move(diag));
        }
        ++i;
    }
    return out;
}

std::string serialize_evidence(const std::vector<EvidenceEntry>& entries) {
    return canonical_dump(Json(entries));
}

void to_json(Json& j, const SeedAnnotation& s) {
    j = Json{{"image_id", s.image_id},
             {"label", to_string(s.label)},
             {"evidence", s.evidence},
             {"counterpart", s.counterpart}};
}

void from_json(const Json& j, SeedAnnotation& s) {
    s.image_id = j.at("image_id").get<std::string>();
    s.label = parse_label(j.at("label").get<std::string>());
    s.evidence = j.at("evidence").get<std::vector<EvidenceEntry>>();
    s.counterpart = j.at("counterpart").get<std::string>();
}

ValidationReport validate_seed(const SeedAnnotation& seed) {
    ValidationReport report;
    if (seed.image_id.empty()) {
        report.add("empty image id");
    }
    if (seed.evidence.empty()) {
        report.add("no evidence");
    }
    for (const auto& e : seed.evidence) {
        report.merge(validate_entry(e));
    }
    if (trim(seed.counterpart).empty()) {
        report.add("empty counterpart");
    }
    return report;
}

std::string serialize_seed(const SeedAnnotation& seed) {
    std::string out = "authenticity: ";
    out += to_string(seed.label);
    out += "\n\nvisual evidence:\n";
    std::size_t n = 1;
    for (const auto& e : seed.evidence) {
        out += std::to_string(n++) + ". ";
        if (e.bbox2d.empty()) {
            out += "[whole image] ";
        } else {
            out += "[bbox2d " + std::to_string(e.bbox2d[0]) + ", " + std::to_string(e.bbox2d[1]) + ", " +
                   std::to_string(e.bbox2d[2]) + ", " + std::to_string(e.bbox2d[3]) + "] ";
        }
        out += trim(e.text);
        out += '\n';
    }
    out += "\ncommonsense counterpart:\n";
    out += trim(seed.counterpart);
    return out;
}

void from_json(const Json& j, Scenario& s) {
    s.id = j.at("id").get<std::string>();
    s.description = j.at("description").get<std::string>();
    if (trim(s.description).empty()) {
        throw DataError("scenario " + s.id + " has an empty description");
    }
}

std::vector<Scenario> default_scenarios() {
    return prompts::scenarios().at("scenarios").get<std::vector<Scenario>>();
}

namespace {

ChatMessage user_turn(std::string text, const ImagePayload* image) {
    ChatMessage m;
    m.role = Role::User;
    if (image) {
        m.content.emplace_back(*image);
    }
    m.content.emplace_back(std::move(text));
    return m;
}

void require_image(const ImagePayload& image) {
    if (!image.bytes || image.bytes->empty()) {
        throw RenderError("image attachment is missing");
    }
}

Json dialogue_schema() {
    const Json turn{{"type", "object"},
                    {"properties",
                     {{"role", {{"type", "string"}, {"enum", {"user", "assistant"}}}},
                      {"content", {{"type", "string"}}}}},
                    {"required", {"role", "content"}},
                    {"additionalProperties", false}};
    return Json{{"type", "object"},
                {"properties", {{"dialogue", {{"type", "array"}, {"items", turn}}}}},
                {"required", {"dialogue"}},
                {"additionalProperties", false}};
}

}  // namespace

ChatRequest render_v1(Label label, const ImagePayload& image) {
    require_image(image);
    ChatRequest req;
    req.messages.push_back(ChatMessage::text_only(Role::System, std::string(prompts::forensic_system())));
    req.messages.push_back(user_turn(prompts::v1().render({{"LABEL", std::string(to_string(label))}}), &image));
    return req;
}

ChatRequest render_v2(Label label, std::string_view description, const std::optional<ImagePayload>& image) {
    if (image) {
        require_image(*image);
    }
    ChatRequest req;
    req.messages.push_back(ChatMessage::text_only(Role::System, std::string(prompts::forensic_system())));
    const std::string body =
        prompts::v2().render({{"LABEL", std::string(to_string(label))}, {"DESCRIPTION", trim(description)}});
    req.messages.push_back(user_turn(body, image ? &*image : nullptr));
    return req;
}

ChatRequest render_v3(const SeedAnnotation& seed, const Scenario& scenario, int rounds,
                      const std::optional<ImagePayload>& image, bool structured) {
    if (rounds < kMinRounds || rounds > kMaxRounds) {
        throw PreconditionError("rounds must be in [1, 4], got " + std::to_string(rounds));
    }
    const ValidationReport report = validate_seed(seed);
    if (!report.ok()) {
        throw PreconditionError("invalid seed annotation: " + report.summary());
    }
    if (image) {
        require_image(*image);
    }
    std::string body = prompts::v3().render({{"SCENARIO", trim(scenario.description)},
                                             {"SEED ANNOTATION", serialize_seed(seed)}});
    body += "\n\n";
    body += prompts::v3_format().render(
        {{"ROUNDS", std::to_string(rounds)}, {"TURNS", std::to_string(2 * rounds)}});

    ChatRequest req;
    req.messages.push_back(ChatMessage::text_only(Role::System, std::string(prompts::v3_system())));
    req.messages.push_back(user_turn(std::move(body), image ? &*image : nullptr));
    if (structured) {
        req.response_schema = dialogue_schema();
    }
    return req;
}

int Dialogue::rounds() const {
    return static_cast<int>(std::count_if(messages.begin(), messages.end(),
                                          [](const Message& m) { return m.role == Role::Assistant; }));
}

Dialogue parse_dialogue(std::string_view text) {
    std::optional<Json> turns;
    const std::string t = trim(text);
    if (!t.empty() && t.front() == '{') {
        if (auto obj = extract_first_json_object(t); obj && obj->contains("dialogue")) {
            turns = obj->at("dialogue");
        }
    }
    if (!turns) {
        turns = extract_first_json_array(text);
    }
    if (!turns || !turns->is_array()) {
        throw DataError("no dialogue array in response");
    }
    Dialogue d;
    std::size_t i = 0;
    for (const Json& el : *turns) {
        if (!el.is_object() || !el.contains("role") || !el.contains("content") || !el["role"].is_string() ||
            !el["content"].is_string()) {
            throw DataError("turn " + std::to_string(i) + " is not a {role, content} object");
        }
        Role role;
        try {
            role = parse_role(el["role"].get<std::string>());
        } catch (const std::exception&) {
            throw DataError("turn " + std::to_string(i) + " has unknown role " + el["role"].get<std::string>());
        }
        d.messages.push_back(Message::text_only(role, el["content"].get<std::string>()));
        ++i;
    }
    return d;
}

namespace {

const std::string kTerms =
    R"((fake|real|authentic|genuine|ai[- ]?generated|synthetic|computer[- ]generated|generated|forged|manipulated|doctored|photoshopped))";
const std::string kNouns = R"((image|photo|photograph|picture|pic|shot|snapshot))";

const std::regex& attributive_definite() {
    static const std::regex re(R"(\b(this|the|that|these|those|my|our)\s+)" + kTerms + R"(\s+)" + kNouns + R"(\b)",
                               std::regex::icase);
    return re;
}

const std::regex& attributive_bare() {
    static const std::regex re(R"(\b)" + kTerms + R"(\s+)" + kNouns + R"(\b)", std::regex::icase);
    return re;
}

const std::regex& declarative() {
    static const std::regex re(
        R"(\b()" + kNouns.substr(1, kNouns.size() - 2) +
            R"(|it|this|that)\s+(is|was|looks|seems|appears)\s+(to\s+be\s+)?((definitely|clearly|obviously|actually|really|certainly)\s+)?((a|an)\s+)?)" +
            kTerms + R"(\b)",
        std::regex::icase);
    return re;
}

const std::regex& hedge() {
    static const std::regex re(R"(\b(whether|if)\b)", std::regex::icase);
    return re;
}

std::vector<std::string> sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        cur += c;
        if (c == '.' || c == '!' || c == '?' || c == '\n') {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!trim(cur).empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

}  // namespace

bool asserts_authenticity(std::string_view text) {
    for (const std::string& s : sentences(text)) {
        if (std::regex_search(s, attributive_definite())) {
            return true;
        }
        const std::string t = trim(s);
        const bool open = (!t.empty() && t.back() == '?') || std::regex_search(s, hedge());
        if (!open && (std::regex_search(s, attributive_bare()) || std::regex_search(s, declarative()))) {
            return true;
        }
    }
    return false;
}

ValidationReport validate_dialogue(const Dialogue& dialogue, std::optional<int> expected_rounds) {
    ValidationReport report;
    const auto& ms = dialogue.messages;
    if (ms.empty()) {
        report.add("empty dialogue");
        return report;
    }
    for (std::size_t i = 0; i < ms.size(); ++i) {
        if (ms[i].role == Role::System) {
            report.add("system turn", "turn " + std::to_string(i));
        }
        if (trim(ms[i].text()).empty()) {
            report.add("empty turn", "turn " + std::to_string(i));
        }
        if (i > 0 && !ms[i].image_ids().empty()) {
            report.add("image outside first user turn", "turn " + std::to_string(i));
        }
    }
    if (ms.front().role != Role::User) {
        report.add("first turn not user");
    }
    for (std::size_t i = 1; i < ms.size(); ++i) {
        if (ms[i].role == ms[i - 1].role) {
            report.add("non-alternating roles", "turn " + std::to_string(i));
            break;
        }
    }
    if (ms.back().role != Role::Assistant) {
        report.add("last turn not assistant");
    }
    const int rounds = dialogue.rounds();
    if (rounds < kMinRounds || rounds > kMaxRounds) {
        report.add("round count out of range", std::to_string(rounds));
    }
    if (expected_rounds && rounds != *expected_rounds) {
        report.add("round count mismatch",
                   "expected " + std::to_string(*expected_rounds) + ", got " + std::to_string(rounds));
    }
    if (ms.front().role == Role::User) {
        if (ms.front().image_ids().empty()) {
            report.add("image missing on first user turn");
        }
        if (asserts_authenticity(ms.front().text())) {
            report.add("label leak in first user turn");
        }
    }
    return report;
}

Dialogue synthesize_dialogue(const SeedAnnotation& seed, const Scenario& scenario, ChatClient& client, Rng& rng,
                             const std::optional<ImagePayload>& image, const SynthesisOptions& options) {
    const int rounds = options.forced_rounds ? *options.forced_rounds
                                             : kMinRounds + static_cast<int>(rng.below(kMaxRounds - kMinRounds + 1));
    ChatRequest req = render_v3(seed, scenario, rounds, image, client.config().structured_output);
    const std::uint64_t seed_base = rng.next();

    std::vector<std::string> transcripts;
    std::string last_error;
    for (int attempt = 0; attempt <= std::max(0, options.max_retries); ++attempt) {
        req.sampling.seed = seed_base + static_cast<std::uint64_t>(attempt);
        const ChatResponse resp = client.send(req);
        transcripts.push_back(resp.text);
        try {
            Dialogue d = parse_dialogue(resp.text);
            if (!d.messages.empty() && d.messages.front().role == Role::User) {
                auto& parts = d.messages.front().parts;
                parts.insert(parts.begin(), ImageRef{seed.image_id});
            }
            const ValidationReport report = validate_dialogue(d, rounds);
            if (report.ok()) {
                return d;
            }
            last_error = report.summary();
        } catch (const DataError& e) {
            last_error = e.what();
        }
        spdlog::debug("dialogue for {} rejected (attempt {}): {}", seed.image_id, attempt + 1, last_error);
    }
    throw SynthesisError("dialogue rejected after " + std::to_string(transcripts.size()) + " attempts: " + last_error,
                         std::move(transcripts));
}

// ---------------------------------------------------------------------------

std::vector<PoolSpec> pools_from_json(const Json& j, const fs::path& base) {
    if (!j.is_array()) {
        throw ConfigError("pools must be a JSON array");
    }
    std::vector<PoolSpec> out;
    std::set<std::string> seen;
    try {
        for (const Json& el : j) {
            PoolSpec p;
            p.source = el.at("source").get<std::string>();
            p.label = parse_label(el.at("label").get<std::string>());
            p.dir = el.at("dir").get<std::string>();
            if (p.dir.is_relative()) {
                p.dir = base / p.dir;
            }
            if (p.source.empty() || !seen.insert(p.source).second) {
                throw ConfigError("empty or duplicate pool source '" + p.source + "'");
            }
            out.push_back(std::move(p));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad pools file: ") + e.what());
    }
    return out;
}

Quotas quotas_from_json(const Json& j) {
    if (!j.is_object()) {
        throw ConfigError("quotas must be a JSON object");
    }
    Quotas out;
    for (const auto& [source, n] : j.items()) {
        if (!n.is_number_unsigned() && !(n.is_number_integer() && n.get<long long>() >= 0)) {
            throw ConfigError("quota for " + source + " must be a non-negative integer");
        }
        out[source] = n.get<std::size_t>();
    }
    return out;
}

Quotas default_quotas() {
    return {{"genimage-sdv1.4", 5000}, {"synthscars", 5000}, {"echo-4o", 250}, {"flux", 6750}, {"real", 17000}};
}

std::vector<Target> plan_p2(const std::vector<PoolSpec>& pools, const Quotas& quotas, std::uint64_t seed) {
    std::map<std::string, const PoolSpec*> by_source;
    for (const auto& p : pools) {
        by_source[p.source] = &p;
    }
    for (const auto& [source, n] : quotas) {
        if (n > 0 && !by_source.contains(source)) {
            throw ConfigError("quota names unknown source '" + source + "'");
        }
    }

    std::vector<std::pair<const PoolSpec*, std::vector<ImageRecord>>> indexed;
    for (const auto& [source, n] : quotas) {
        if (n == 0) {
            continue;
        }
        const PoolSpec* pool = by_source.at(source);
        auto records = p1::index_images(pool->dir, source).records;
        if (records.size() < n) {
            throw ConfigError("quota for '" + source + "' is " + std::to_string(n) + " but the pool holds " +
                              std::to_string(records.size()) + " images");
        }
        indexed.emplace_back(pool, std::move(records));
    }

    std::vector<Target> out;
    for (auto& [pool, records] : indexed) {
        Rng rng(derive_seed(seed, "select/" + pool->source));
        std::vector<std::size_t> picks = rng.sample_indices(records.size(), quotas.at(pool->source));
        std::sort(picks.begin(), picks.end());
        for (std::size_t i : picks) {
            out.push_back({records[i], pool->label});
        }
    }
    std::sort(out.begin(), out.end(), [](const Target& a, const Target& b) { return a.image.id < b.image.id; });
    return out;
}

void to_json(Json& j, const P2Failure& f) {
    j = Json{{"id", f.id}, {"stage", f.stage}, {"error", f.error}, {"transcripts", f.transcripts}};
}

namespace {

struct Outcome {
    std::optional<Sample> sample;
    std::optional<SeedAnnotation> seed;
    std::optional<P2Failure> failure;
};

Outcome run_target(const Target& t, ChatClient& client, const P2Options& options) {
    Outcome out;
    std::string stage = "v1";
    std::vector<std::string> transcripts;
    try {
        Rng rng(derive_seed(options.seed, t.image.id));
        const ImagePayload image = ImagePayload::from_file(t.image.path);

        const ChatResponse v1 = client.send(render_v1(t.label, image));
        transcripts.push_back(v1.text);
        EvidenceParse evidence = parse_evidence(v1.text, ParseMode::Lenient);
        for (const auto& d : evidence.diagnostics) {
            spdlog::debug("{}: dropped evidence {}", t.image.id, d);
        }
        if (evidence.entries.empty()) {
            throw DataError("no valid evidence entries");
        }

        stage = "v2";
        std::string description;
        for (const auto& e : evidence.entries) {
            if (!description.empty()) {
                description += '\n';
            }
            description += trim(e.text);
        }
        const ChatResponse v2 = client.send(render_v2(t.label, description, image));
        transcripts.push_back(v2.text);
        SeedAnnotation seed{t.image.id, t.label, std::move(evidence.entries), trim(v2.text)};
        const ValidationReport seed_report = validate_seed(seed);
        if (!seed_report.ok()) {
            throw DataError(seed_report.summary());
        }

        stage = "v3";
        if (options.scenarios.empty()) {
            throw PreconditionError("scenario pool is empty");
        }
        const Scenario& scenario = options.scenarios[rng.below(options.scenarios.size())];
        Dialogue d = synthesize_dialogue(seed, scenario, client, rng, image, options.synthesis);

        const int rounds = d.rounds();
        Sample s;
        s.id = t.image.id;
        s.images = {t.image.id};
        s.label = t.label;
        s.generator = t.image.source;
        s.source = t.image.source;
        s.messages = std::move(d.messages);
        s.meta = {{"scenario", scenario.id},
                  {"rounds", std::to_string(rounds)},
                  {"prompts", std::string(prompts::kVersion)}};
        out.sample = std::move(s);
        out.seed = std::move(seed);
    } catch (const SynthesisError& e) {
        transcripts.insert(transcripts.end(), e.transcripts().begin(), e.transcripts().end());
        out.failure = P2Failure{t.image.id, stage, e.what(), std::move(transcripts)};
    } catch (const IoError&) {
        throw;
    } catch (const UnsupportedCapability&) {
        throw;
    } catch (const Error& e) {
        out.failure = P2Failure{t.image.id, stage, e.what(), std::move(transcripts)};
    } catch (const Json::exception& e) {
        out.failure = P2Failure{t.image.id, stage, e.what(), std::move(transcripts)};
    }
    return out;
}

}  // namespace

P2Result build_p2(const std::vector<Target>& targets, ChatClient& client, const TaskPool& pool,
                  const P2Options& options) {
    std::vector<Outcome> outcomes(targets.size());
    pool.run(targets.size(), [&](std::size_t i) { outcomes[i] = run_target(targets[i], client, options); });

    P2Result result;
    ImageIndex index;
    for (const auto& t : targets) {
        index.add(t.image);
        result.images.push_back(t.image);
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Outcome& o = outcomes[i];
        if (o.sample) {
            const ValidationReport report = validate_sample(*o.sample, index);
            if (!report.ok()) {
                result.failures.push_back({targets[i].image.id, "sample", report.summary(), {}});
                continue;
            }
            result.samples.push_back(std::move(*o.sample));
            result.seeds.push_back(std::move(*o.seed));
        } else if (o.failure) {
            spdlog::warn("{} failed at {}: {}", o.failure->id, o.failure->stage, o.failure->error);
            result.failures.push_back(std::move(*o.failure));
        }
    }
    std::sort(result.samples.begin(), result.samples.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
    std::sort(result.seeds.begin(), result.seeds.end(),
              [](const SeedAnnotation& a, const SeedAnnotation& b) { return a.image_id < b.image_id; });
    std::sort(result.failures.begin(), result.failures.end(),
              [](const P2Failure& a, const P2Failure& b) { return a.id < b.id; });
    return result;
}

void write_p2(const P2Result& result, const fs::path& out_dir, std::uint64_t seed) {
    write_file_atomic(out_dir / "p2.jsonl", to_jsonl(result.samples));
    write_file_atomic(out_dir / "seeds.jsonl", dump_jsonl(result.seeds));
    write_file_atomic(out_dir / "failures.jsonl", dump_jsonl(result.failures));
    write_file_atomic(out_dir / "images.jsonl", dump_jsonl(result.images));

    std::map<std::string, std::pair<std::size_t, std::size_t>> yield;  // source -> (targets, samples)
    for (const auto& img : result.images) {
        ++yield[img.source].first;
    }
    for (const auto& s : result.samples) {
        ++yield[s.source].second;
    }
    Json per_source = Json::object();
    for (const auto& [source, counts] : yield) {
        per_source[source] = {{"targets", counts.first}, {"samples", counts.second}};
    }
    std::map<std::string, std::size_t> by_rounds;
    for (const auto& s : result.samples) {
        ++by_rounds[s.meta.at("rounds")];
    }
    const Json report{{"targets", result.images.size()},
                      {"samples", result.samples.size()},
                      {"failures", result.failures.size()},
                      {"per_source", per_source},
                      {"rounds", by_rounds},
                      {"prompts", prompts::kVersion},
                      {"seed", seed}};
    write_file_atomic(out_dir / "build_report.json", report.dump(2) + "\n");
}

}  // namespace forensic::p2
