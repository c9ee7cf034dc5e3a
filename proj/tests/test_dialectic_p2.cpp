#include <gtest/gtest.h>

#include <filesystem>

#include "forensic/dialectic_p2.hpp"
#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "support.hpp"

using namespace forensic;
using namespace forensic::p2;
using testing_support::MockServer;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

ImagePayload tiny_png() {
    static const std::string bytes = [] {
        TempDir dir;
        testing_support::write_desk_image(dir / "x.png", 24, 16, 3);
        return read_file_bytes(dir / "x.png");
    }();
    return ImagePayload::from_bytes(bytes);
}

SeedAnnotation sample_seed() {
    return {"synth/a.png", Label::Fake,
            {{"The hand has six fingers.", {620, 80, 900, 310}}, {"Lighting is even.", {}}},
            "A normal human hand has five fingers."};
}

Dialogue dialogue_of(const Json& turns, bool with_image = true) {
    Dialogue d = parse_dialogue(turns.dump());
    if (with_image && !d.messages.empty()) {
        d.messages.front().parts.insert(d.messages.front().parts.begin(), ImageRef{"img"});
    }
    return d;
}

std::unique_ptr<ChatClient> client_for(const MockServer& server) {
    auto c = std::make_unique<ChatClient>(testing_support::mock_endpoint(server.base_url()),
                                          make_http_transport(server.base_url(), 10));
    c->set_sleeper([](std::chrono::milliseconds) {});
    return c;
}

}  // namespace

TEST(Evidence, ValidEntriesAndRules) {
    EXPECT_TRUE(validate_entry({"six fingers", {620, 80, 900, 310}}).ok());
    EXPECT_TRUE(validate_entry({"whole scene", {}}).ok());
    EXPECT_TRUE(validate_entry({"x", {300, 200, 100, 400}}).has("y_min > y_max"));
    EXPECT_TRUE(validate_entry({"x", {0, 500, 10, 400}}).has("x_min > x_max"));
    EXPECT_TRUE(validate_entry({"x", {0, 0, 10, 1001}}).has("bbox2d out of range"));
    EXPECT_TRUE(validate_entry({"x", {0, 0, 10}}).has("bbox2d arity"));
    EXPECT_TRUE(validate_entry({"  ", {}}).has("empty text"));
}

TEST(Evidence, ParseModes) {
    const auto ok = parse_evidence(R"([{"text":"six fingers","bbox2d":[620,80,900,310]}])");
    ASSERT_EQ(ok.entries.size(), 1u);
    EXPECT_EQ(ok.entries[0].bbox2d, (std::vector<int>{620, 80, 900, 310}));

    EXPECT_TRUE(parse_evidence("[]").entries.empty());

    const std::string mixed = "Here you go:\n```json\n[{\"text\":\"a\",\"bbox2d\":[300,200,100,400]},"
                              "{\"analysis\":\"b\",\"bbox2d\":[]}]\n```";
    const auto lenient = parse_evidence(mixed);
    ASSERT_EQ(lenient.entries.size(), 1u);
    EXPECT_EQ(lenient.entries[0].text, "b");
    ASSERT_EQ(lenient.diagnostics.size(), 1u);
    EXPECT_NE(lenient.diagnostics[0].find("y_min > y_max"), std::string::npos);
    EXPECT_THROW(parse_evidence(mixed, ParseMode::Strict), EvidenceParseError);

    EXPECT_THROW(parse_evidence("no array here"), EvidenceParseError);
    EXPECT_EQ(parse_evidence(R"([{"text":"no box"}])").entries.size(), 0u);
}

TEST(Evidence, SerializeRoundTrip) {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<EvidenceEntry> entries;
        const std::size_t n = rng.below(5);
        for (std::size_t i = 0; i < n; ++i) {
            EvidenceEntry e;
            e.text = "finding " + std::to_string(rng.below(1000)) + " \"quoted\" {braces}";
            if (rng.below(2) == 1) {
                const int y0 = static_cast<int>(rng.below(1001)), x0 = static_cast<int>(rng.below(1001));
                const int y1 = y0 + static_cast<int>(rng.below(1001 - y0));
                const int x1 = x0 + static_cast<int>(rng.below(1001 - x0));
                e.bbox2d = {y0, x0, y1, x1};
            }
            entries.push_back(e);
        }
        EXPECT_EQ(parse_evidence(serialize_evidence(entries), ParseMode::Strict).entries, entries);
    }
}

TEST(Seed, SerializationLayout) {
    const std::string text = serialize_seed(sample_seed());
    EXPECT_EQ(text,
              "authenticity: fake\n\nvisual evidence:\n"
              "1. [bbox2d 620, 80, 900, 310] The hand has six fingers.\n"
              "2. [whole image] Lighting is even.\n\n"
              "commonsense counterpart:\nA normal human hand has five fingers.");
    SeedAnnotation bad = sample_seed();
    bad.evidence.clear();
    EXPECT_TRUE(validate_seed(bad).has("no evidence"));
}

TEST(Render, V1StatesLabelAndCarriesImage) {
    const ChatRequest fake = render_v1(Label::Fake, tiny_png());
    ASSERT_EQ(fake.messages.size(), 2u);
    EXPECT_EQ(fake.messages[0].role, Role::System);
    EXPECT_EQ(fake.messages[1].text().rfind("This is a fake image.", 0), 0u);
    EXPECT_NE(fake.messages[1].text().find("return **only** a JSON array"), std::string::npos);
    EXPECT_TRUE(std::holds_alternative<ImagePayload>(fake.messages[1].content[0]));
    EXPECT_EQ(render_v1(Label::Real, tiny_png()).messages[1].text().rfind("This is a real image.", 0), 0u);
    EXPECT_THROW(render_v1(Label::Real, ImagePayload{}), RenderError);
}

TEST(Render, V2AndV3Bindings) {
    const ChatRequest v2 = render_v2(Label::Fake, "six fingers on the left hand");
    EXPECT_NE(v2.messages.back().text().find("This is a description to a fake image."), std::string::npos);
    EXPECT_NE(v2.messages.back().text().find("six fingers on the left hand"), std::string::npos);

    const Scenario sc{"museum", "A visitor in a museum asks about a painting."};
    const ChatRequest v3 = render_v3(sample_seed(), sc, 3);
    const std::string body = v3.messages.back().text();
    EXPECT_NE(body.find(sc.description), std::string::npos);
    EXPECT_NE(body.find(serialize_seed(sample_seed())), std::string::npos);
    EXPECT_NE(body.find("exactly 3 round(s)"), std::string::npos);
    EXPECT_NE(body.find("exactly 6 objects"), std::string::npos);
    ASSERT_TRUE(v3.response_schema.has_value());
    EXPECT_EQ((*v3.response_schema)["properties"]["dialogue"]["type"], "array");
    EXPECT_FALSE(render_v3(sample_seed(), sc, 2, std::nullopt, false).response_schema.has_value());
    EXPECT_THROW(render_v3(sample_seed(), sc, 0), PreconditionError);
    EXPECT_THROW(render_v3(sample_seed(), sc, 5), PreconditionError);
}

TEST(Dialogue, ParseForms) {
    const Json turns = testing_support::mock_dialogue(2);
    EXPECT_EQ(parse_dialogue(turns.dump()).rounds(), 2);
    EXPECT_EQ(parse_dialogue(Json{{"dialogue", turns}}.dump()).rounds(), 2);
    EXPECT_EQ(parse_dialogue("```json\n" + turns.dump() + "\n```").rounds(), 2);
    EXPECT_THROW(parse_dialogue("nothing"), DataError);
    EXPECT_THROW(parse_dialogue(R"([{"role":"robot","content":"x"}])"), DataError);
}

TEST(Dialogue, ValidationRules) {
    for (int r = 1; r <= 4; ++r) {
        const auto rep = validate_dialogue(dialogue_of(testing_support::mock_dialogue(r)), r);
        EXPECT_TRUE(rep.ok()) << rep.summary();
    }
    EXPECT_TRUE(validate_dialogue(dialogue_of(testing_support::mock_dialogue(5))).has("round count out of range"));
    EXPECT_TRUE(validate_dialogue(dialogue_of(testing_support::mock_dialogue(2)), 3).has("round count mismatch"));

    Json assistant_first = testing_support::mock_dialogue(2);
    assistant_first.erase(assistant_first.begin());
    const auto rep = validate_dialogue(dialogue_of(assistant_first));
    EXPECT_TRUE(rep.has("first turn not user"));
    EXPECT_TRUE(rep.has("last turn not assistant") || rep.has("non-alternating roles") ||
                rep.has("first turn not user"));

    Json doubled = testing_support::mock_dialogue(2);
    doubled.insert(doubled.begin() + 1, Json{{"role", "user"}, {"content", "again?"}});
    EXPECT_TRUE(validate_dialogue(dialogue_of(doubled)).has("non-alternating roles"));

    Json trailing_user = testing_support::mock_dialogue(1);
    trailing_user.push_back({{"role", "user"}, {"content", "thanks"}});
    EXPECT_TRUE(validate_dialogue(dialogue_of(trailing_user)).has("last turn not assistant"));

    EXPECT_TRUE(validate_dialogue(dialogue_of(testing_support::mock_dialogue(1), false))
                    .has("image missing on first user turn"));
    EXPECT_TRUE(validate_dialogue(Dialogue{}).has("empty dialogue"));

    Json leaky = testing_support::mock_dialogue(1);
    leaky[0]["content"] = "Why is this fake image so convincing?";
    EXPECT_TRUE(validate_dialogue(dialogue_of(leaky)).has("label leak in first user turn"));
}

TEST(Dialogue, BlindUserLexicon) {
    EXPECT_TRUE(asserts_authenticity("Look at this fake image."));
    EXPECT_TRUE(asserts_authenticity("The photo is real."));
    EXPECT_TRUE(asserts_authenticity("It looks AI-generated to me."));
    EXPECT_TRUE(asserts_authenticity("Tell me why the generated picture has odd hands?"));
    EXPECT_FALSE(asserts_authenticity("Is this photo real?"));
    EXPECT_FALSE(asserts_authenticity("Can you tell whether the image is fake?"));
    EXPECT_FALSE(asserts_authenticity("What can you tell me about this picture?"));
    EXPECT_FALSE(asserts_authenticity("Does the lighting look natural?"));
}

TEST(Synthesis, RetriesThenSucceedsOrFails) {
    testing_support::P2MockOptions opts;
    opts.v3_override = [](const std::string& normal, int rounds, int attempt) {
        if (attempt == 0) {
            return testing_support::mock_dialogue(rounds + 1 > 4 ? 1 : rounds + 1).dump();
        }
        return normal;
    };
    MockServer server(testing_support::p2_generator(opts));
    auto client = client_for(server);
    Rng rng(4);
    const Scenario sc{"s", "A student asks a teacher about a photo."};
    const Dialogue d = synthesize_dialogue(sample_seed(), sc, *client, rng);
    EXPECT_TRUE(validate_dialogue(d, d.rounds()).ok());
    EXPECT_EQ(d.messages.front().image_ids(), std::vector<std::string>{"synth/a.png"});
    EXPECT_EQ(server.count(), 2u);

    MockServer broken(testing_support::p2_generator(
        {[](const std::string&, int, int) { return testing_support::mock_dialogue(5).dump(); }, true}));
    auto bad_client = client_for(broken);
    Rng rng2(4);
    try {
        synthesize_dialogue(sample_seed(), sc, *bad_client, rng2, std::nullopt, {2, 2});
        FAIL() << "expected SynthesisError";
    } catch (const SynthesisError& e) {
        EXPECT_EQ(e.transcripts().size(), 3u);
    }
    EXPECT_EQ(broken.count(), 3u);
}

TEST(Synthesis, RoundsAreUniformOverOneToFour) {
    MockServer server(testing_support::p2_generator());
    auto client = client_for(server);
    Rng rng(12);
    std::map<int, int> hist;
    for (int i = 0; i < 40; ++i) {
        ++hist[synthesize_dialogue(sample_seed(), {"s", "scenario " + std::to_string(i)}, *client, rng).rounds()];
    }
    EXPECT_EQ(hist.size(), 4u);
    for (const auto& [r, n] : hist) {
        EXPECT_GE(r, 1);
        EXPECT_LE(r, 4);
    }
}

TEST(Plan, QuotasAndInfeasibility) {
    TempDir dir;
    testing_support::write_desk_dir(dir / "real", 5, 1);
    testing_support::write_desk_dir(dir / "flux", 4, 2);
    const std::vector<PoolSpec> pools{{"real", Label::Real, dir / "real"}, {"flux", Label::Fake, dir / "flux"}};
    const auto plan = plan_p2(pools, {{"real", 3}, {"flux", 2}}, 7);
    EXPECT_EQ(plan.size(), 5u);
    EXPECT_EQ(plan_p2(pools, {{"real", 3}, {"flux", 2}}, 7).size(), 5u);
    for (std::size_t i = 1; i < plan.size(); ++i) {
        EXPECT_LT(plan[i - 1].image.id, plan[i].image.id);
    }
    EXPECT_THROW(plan_p2(pools, {{"real", 6}}, 7), ConfigError);
    EXPECT_THROW(plan_p2(pools, {{"sdxl", 1}}, 7), ConfigError);

    std::size_t total = 0, fake = 0;
    for (const auto& [src, n] : default_quotas()) {
        total += n;
        if (src != "real") fake += n;
    }
    EXPECT_EQ(total, 34000u);
    EXPECT_EQ(fake, 17000u);
}

TEST(Plan, InfeasibleQuotaMakesNoNetworkCall) {
    MockServer server(testing_support::p2_generator());
    TempDir dir;
    testing_support::write_desk_dir(dir / "real", 2, 1);
    EXPECT_THROW(plan_p2({{"real", Label::Real, dir / "real"}}, {{"real", 3}}, 1), ConfigError);
    EXPECT_EQ(server.count(), 0u);
}

TEST(BuildP2, EndToEndReproducible) {
    TempDir dir;
    testing_support::write_desk_dir(dir / "real", 4, 1);
    testing_support::write_desk_dir(dir / "fake", 4, 2);
    const std::vector<PoolSpec> pools{{"coco", Label::Real, dir / "real"}, {"flux", Label::Fake, dir / "fake"}};
    const auto targets = plan_p2(pools, {{"coco", 3}, {"flux", 3}}, 21);

    MockServer server(testing_support::p2_generator());
    auto client = client_for(server);
    P2Options opts;
    opts.seed = 21;
    const auto a = build_p2(targets, *client, TaskPool(4), opts);
    ASSERT_EQ(a.samples.size(), 6u);
    EXPECT_TRUE(a.failures.empty());
    ImageIndex index;
    for (const auto& rec : a.images) index.add(rec);
    for (const auto& s : a.samples) {
        EXPECT_TRUE(validate_sample(s, index).ok());
        Dialogue d{s.messages};
        const auto rep = validate_dialogue(d, std::stoi(s.meta.at("rounds")));
        EXPECT_TRUE(rep.ok()) << rep.summary();
    }
    for (const auto& seed : a.seeds) {
        EXPECT_EQ(seed.evidence.size(), 2u);  // the malformed entry is dropped
    }
    write_p2(a, dir / "out_a", 21);

    MockServer server2(testing_support::p2_generator());
    auto client2 = client_for(server2);
    const auto b = build_p2(targets, *client2, TaskPool(1), opts);
    write_p2(b, dir / "out_b", 21);
    for (const char* f : {"p2.jsonl", "seeds.jsonl", "images.jsonl"}) {
        EXPECT_EQ(read_file_bytes(dir / "out_a" / f), read_file_bytes(dir / "out_b" / f)) << f;
    }
}

TEST(BuildP2, FailuresAreRecordedNotFatal) {
    TempDir dir;
    testing_support::write_desk_dir(dir / "fake", 2, 2);
    const auto targets = plan_p2({{"flux", Label::Fake, dir / "fake"}}, {{"flux", 2}}, 3);
    MockServer server([](const testing_support::MockRequest& req) {
        const std::string text = testing_support::request_text(req.json);
        if (text.find("return **only** a JSON array") != std::string::npos) {
            return testing_support::MockReply{200, testing_support::chat_body("I cannot find anything.")};
        }
        return testing_support::MockReply{400, "{}"};
    });
    auto client = client_for(server);
    const auto r = build_p2(targets, *client, TaskPool(2), P2Options{});
    EXPECT_TRUE(r.samples.empty());
    ASSERT_EQ(r.failures.size(), 2u);
    EXPECT_EQ(r.failures[0].stage, "v1");
}
