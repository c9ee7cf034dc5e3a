#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "forensic/error.hpp"
#include "forensic/hash.hpp"
#include "forensic/json_util.hpp"
#include "forensic/jsonl.hpp"
#include "forensic/rng.hpp"
#include "forensic/schema.hpp"
#include "support.hpp"

using namespace forensic;

TEST(Hash, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hash, Base64KnownVectors) {
    EXPECT_EQ(base64_encode(""), "");
    EXPECT_EQ(base64_encode("f"), "Zg==");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
}

TEST(Hash, DeriveSeedIsStableAndLabelSensitive) {
    EXPECT_EQ(derive_seed(7, "a"), derive_seed(7, "a"));
    EXPECT_NE(derive_seed(7, "a"), derive_seed(7, "b"));
    EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
    const std::string hex = sha256_hex("7:a").substr(0, 16);
    EXPECT_EQ(derive_seed(7, "a"), std::stoull(hex, nullptr, 16));
}

TEST(Hash, AtomicWriteRoundTrip) {
    testing_support::TempDir dir;
    write_file_atomic(dir / "a/b/c.bin", std::string("x\0y", 3));
    EXPECT_EQ(read_file_bytes(dir / "a/b/c.bin"), std::string("x\0y", 3));
    EXPECT_FALSE(std::filesystem::exists(dir / "a/b/c.bin.tmp"));
    EXPECT_THROW(read_file_bytes(dir / "missing"), IoError);
}

TEST(Rng, EngineMatchesStandardMandatedValue) {
    // The standard fixes the 10000th output of a default-seeded mt19937_64.
    Rng rng(5489u);
    std::uint64_t v = 0;
    for (int i = 0; i < 10000; ++i) v = rng.next();
    EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
    Rng rng(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = rng.below(7);
        ASSERT_LT(v, 7u);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, BelowIsRoughlyUniform) {
    Rng rng(42);
    std::vector<int> counts(4);
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(4)];
    for (int c : counts) EXPECT_NEAR(c, n / 4, 600);
}

TEST(Rng, SampleIndicesAreDistinctAndDeterministic) {
    Rng a(9), b(9);
    const auto x = a.sample_indices(100, 30);
    EXPECT_EQ(x, b.sample_indices(100, 30));
    EXPECT_EQ(std::set<std::size_t>(x.begin(), x.end()).size(), 30u);
    for (auto i : x) EXPECT_LT(i, 100u);
    Rng c(1);
    EXPECT_EQ(c.sample_indices(5, 5).size(), 5u);
}

TEST(Rng, UnitInHalfOpenInterval) {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.unit();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Json, CanonicalDumpSortsKeysAndRejectsNonFinite) {
    Json j = Json::parse(R"({"b":1,"a":{"d":2,"c":3}})");
    EXPECT_EQ(canonical_dump(j), R"({"a":{"c":3,"d":2},"b":1})");
    EXPECT_THROW(canonical_dump(Json(std::numeric_limits<double>::quiet_NaN())), DataError);
    EXPECT_THROW(canonical_dump(Json{{"x", std::numeric_limits<double>::infinity()}}), DataError);
    EXPECT_THROW(canonical_dump(Json(std::string("\xff\xfe"))), DataError);
}

TEST(Json, ExtractFirstArrayToleratesProseAndFences) {
    auto a = extract_first_json_array("Here you go:\n```json\n[{\"text\": \"a ] b\"}]\n```\nDone.");
    ASSERT_TRUE(a);
    EXPECT_EQ((*a)[0]["text"], "a ] b");
    EXPECT_FALSE(extract_first_json_array("no array here"));
    auto b = extract_first_json_array("see [1] and then ```json\n[{\"x\": 2}]\n```");
    ASSERT_TRUE(b);
    EXPECT_EQ((*b)[0]["x"], 2);
    auto c = extract_first_json_array("broken [1, and valid [2, 3]");
    ASSERT_TRUE(c);
    EXPECT_EQ(*c, Json::parse("[2,3]"));
}

TEST(Json, ExtractFirstObject) {
    auto o = extract_first_json_object("reply: {\"dialogue\": []} trailing");
    ASSERT_TRUE(o);
    EXPECT_TRUE(o->contains("dialogue"));
}

namespace {

Sample two_turn_sample() {
    Sample s;
    s.id = "s1";
    s.images = {"img/1"};
    s.label = Label::Fake;
    s.generator = "flux";
    s.source = "flux";
    s.messages.push_back(Message{Role::User, {ImageRef{"img/1"}, TextPart{"Is this real?"}}});
    s.messages.push_back(Message::text_only(Role::Assistant, "fake"));
    s.meta = {{"k", "v"}};
    return s;
}

ImageIndex index_with(const std::string& id) {
    ImageIndex idx;
    idx.add(ImageRecord{id, "/x.png", std::string(64, 'a'), 4, 4, "src"});
    return idx;
}

}  // namespace

TEST(Schema, LabelAndVerdictConversions) {
    EXPECT_EQ(parse_label("Real"), Label::Real);
    EXPECT_EQ(parse_label("fake"), Label::Fake);
    EXPECT_THROW(parse_label("maybe"), Error);
    EXPECT_EQ(to_string(Label::Fake), "fake");
    EXPECT_FALSE(as_label(Verdict::Unparsed));
    EXPECT_EQ(as_label(Verdict::Real), Label::Real);
}

TEST(Schema, SampleJsonRoundTrip) {
    const Sample s = two_turn_sample();
    const Json j = s;
    EXPECT_EQ(j.get<Sample>(), s);
    EXPECT_EQ(j["messages"][0]["parts"][0]["type"], "image");
    EXPECT_EQ(j["messages"][0]["parts"][1]["type"], "text");
}

TEST(Schema, ValidSampleHasNoViolations) {
    const auto report = validate_sample(two_turn_sample(), index_with("img/1"));
    EXPECT_TRUE(report.ok()) << report.summary();
}

TEST(Schema, ValidationRules) {
    const auto idx = index_with("img/1");
    Sample s = two_turn_sample();
    s.images = {"img/2"};
    auto r = validate_sample(s, idx);
    EXPECT_TRUE(r.has("unresolved image"));
    EXPECT_TRUE(r.has("image not listed"));

    s = two_turn_sample();
    std::swap(s.messages[0], s.messages[1]);
    r = validate_sample(s, idx);
    EXPECT_TRUE(r.has("first message not user"));

    s = two_turn_sample();
    s.messages.pop_back();
    EXPECT_TRUE(validate_sample(s, idx).has("last message not assistant"));
    EXPECT_TRUE(validate_sample(s, idx, SampleKind::Prompt).ok());

    s = two_turn_sample();
    s.messages.push_back(Message::text_only(Role::Assistant, "again"));
    EXPECT_TRUE(validate_sample(s, idx).has("non-alternating roles"));

    s = two_turn_sample();
    s.messages[1].parts.push_back(ImageRef{"img/1"});
    EXPECT_TRUE(validate_sample(s, idx).has("image in assistant message"));

    s = two_turn_sample();
    s.messages[1] = Message::text_only(Role::Assistant, "");
    EXPECT_TRUE(validate_sample(s, idx).has("empty text part"));

    s = two_turn_sample();
    s.id.clear();
    EXPECT_TRUE(validate_sample(s, idx).has("empty id"));

    s = two_turn_sample();
    s.messages.clear();
    EXPECT_TRUE(validate_sample(s, idx).has("no messages"));

    s = two_turn_sample();
    s.messages.insert(s.messages.begin() + 1, Message::text_only(Role::System, "sys"));
    EXPECT_TRUE(validate_sample(s, idx).has("misplaced system message"));
}

TEST(Schema, ImageRecordRejectsNonPositiveDims) {
    Json j = ImageRecord{"a", "p", "h", 1, 1, "s"};
    j["width_px"] = 0;
    EXPECT_ANY_THROW(j.get<ImageRecord>());
}

TEST(Schema, RunManifestRoundTrip) {
    RunManifest m{"run", "eh", "model", "ih", utc_timestamp_now(), RunStatus::Complete};
    EXPECT_EQ(Json(m).get<RunManifest>(), m);
    EXPECT_EQ(m.created_at.back(), 'Z');
}

TEST(Jsonl, RoundTripIsByteStable) {
    std::vector<Sample> v{two_turn_sample(), two_turn_sample()};
    v[1].id = "s2";
    const std::string bytes = to_jsonl(v);
    const auto parsed = from_jsonl(bytes);
    EXPECT_EQ(parsed.items, v);
    EXPECT_EQ(to_jsonl(parsed.items), bytes);
    EXPECT_EQ(std::count(bytes.begin(), bytes.end(), '\n'), 2);
}

TEST(Jsonl, StrictThrowsWithLineLenientCollects) {
    const std::string good = to_jsonl({two_turn_sample()});
    const std::string bytes = good + "\n{not json}\n" + good;
    try {
        (void)from_jsonl(bytes, ParseMode::Strict);
        FAIL();
    } catch (const JsonlError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    const auto lenient = from_jsonl(bytes, ParseMode::Lenient);
    EXPECT_EQ(lenient.items.size(), 2u);
    ASSERT_EQ(lenient.errors.size(), 1u);
    EXPECT_EQ(lenient.errors[0].line, 3u);
}

TEST(Jsonl, InputHashIgnoresOrder) {
    std::vector<Sample> v{two_turn_sample(), two_turn_sample(), two_turn_sample()};
    v[1].id = "b";
    v[2].id = "c";
    const std::string h = input_hash(v);
    std::mt19937 g(1);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(v.begin(), v.end(), g);
        EXPECT_EQ(input_hash(v), h);
    }
    v[0].generator = "other";
    EXPECT_NE(input_hash(v), h);
}
