#include <gtest/gtest.h>

#include "mh/datamodel.hpp"
#include "test_util.hpp"

using namespace mh;

TEST(LabelSet, RejectsEmptyAndDuplicates) {
    EXPECT_THROW(LabelSet(std::vector<std::string>{}), PreconditionError);
    EXPECT_THROW(LabelSet({"A", " "}), PreconditionError);
    EXPECT_THROW(LabelSet({"Joy", "joy "}), PreconditionError);
    EXPECT_NO_THROW(LabelSet({"Joy", "joy"}, std::nullopt, false));
}

TEST(LabelSet, CanonicalizeFoldsCaseAndWhitespace) {
    const auto l = iemocap_labels();
    EXPECT_EQ(canonicalize_label("  sadness ", l), "Sadness");
    EXPECT_EQ(canonicalize_label("UNKNOWN", l), "Unknown");
    EXPECT_FALSE(canonicalize_label("sad", l));
}

TEST(LabelSet, IemocapClauseIsVerbatim) {
    const auto l = iemocap_labels();
    EXPECT_EQ(l.size(), 10u);
    EXPECT_EQ(*l.clause(), "Neutral, Happiness, Sadness, Anger, Frustration, Fear, Excitement, Disgust Surprise ,Unknown");
}

TEST(LabelSet, JsonRoundTrip) {
    for (const auto& l : {iemocap_labels(), meld_labels()}) EXPECT_EQ(json(l).get<LabelSet>(), l);
}

TEST(Story, ValidationRejectsGapsAndMissingReferences) {
    Story s{"s", "t", {{0, "q", {"a"}}, {2, "q", {"a"}}}};
    EXPECT_THROW(validate_story(s), DataIntegrityError);
    s.turns[1].index = 1;
    EXPECT_NO_THROW(validate_story(s));
    s.turns[1].references.clear();
    EXPECT_THROW(validate_story(s), DataIntegrityError);
    EXPECT_THROW(validate_story(Story{"e", "t", {}}), DataIntegrityError);
}

TEST(Jsonl, SampleAndStoryRoundTrip) {
    Sample a{"x1", "I'm \"so\" sorry.\n", std::string("Sadness"), ""};
    EXPECT_EQ(sample_from_json(json::parse(dump_line(sample_to_json(a)))), a);
    Sample unlabeled{"x2", "hm", std::nullopt, ""};
    EXPECT_EQ(sample_from_json(sample_to_json(unlabeled)), unlabeled);
    Story s{"st", "One. Two.", {{0, "q1", {"a", "b"}}, {1, "q2", {"c"}}}};
    EXPECT_EQ(story_from_json(json::parse(dump_line(story_to_json(s)))), s);
}

TEST(Jsonl, LoaderReportsLineAndDuplicates) {
    test::TempDir dir;
    {
        std::ofstream f(dir / "bad.jsonl");
        f << R"({"id":"a","text":"t","label":"Fear"})" << "\n\n{broken\n";
    }
    try {
        read_jsonl((dir / "bad.jsonl").string());
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
    }
    {
        std::ofstream f(dir / "dup.jsonl");
        f << R"({"id":"a","text":"t","label":"Fear"})" << "\n" << R"({"id":"a","text":"u","label":"Fear"})" << "\n";
    }
    EXPECT_THROW(load_er_samples((dir / "dup.jsonl").string(), "d"), DataIntegrityError);
    {
        std::ofstream f(dir / "oov.jsonl");
        f << R"({"id":"a","text":"t","label":"Bored"})" << "\n";
    }
    const auto labels = iemocap_labels();
    EXPECT_THROW(load_er_samples((dir / "oov.jsonl").string(), "d", &labels), DataIntegrityError);
}

TEST(ExperimentSpec, NamedMatrixIsValidAndRoundTrips) {
    auto specs = multimodal_specs();
    ASSERT_EQ(specs.size(), 8u);
    for (const auto& b : baseline_specs()) specs.push_back(b);
    for (const auto& s : specs) {
        EXPECT_TRUE(validate_spec(s).empty()) << s.name;
        EXPECT_EQ(json(s).get<ExperimentSpec>(), s);
        EXPECT_EQ(find_named_spec(s.name), s);
    }
    EXPECT_FALSE(find_named_spec("Gen_Image_Inp_Text_Everything"));
}

TEST(ExperimentSpec, ValidationCatchesEveryInvariant) {
    auto s = make_spec("x", Modality::multimodal, ImageSource::none, TextInput::input, Directive::both, false);
    EXPECT_EQ(validate_spec(s), std::vector<std::string>{"multimodal requires an image source"});
    s = make_spec("x", Modality::unimodal, ImageSource::generated, TextInput::input, Directive::text, false);
    EXPECT_EQ(validate_spec(s), std::vector<std::string>{"unimodal forbids images"});
    s = make_spec("x", Modality::unimodal, ImageSource::none, TextInput::input, Directive::image, false);
    EXPECT_EQ(validate_spec(s), std::vector<std::string>{"image directive requires images"});
    s = make_spec("x", Modality::multimodal, ImageSource::generated, TextInput::none, Directive::both, false);
    EXPECT_EQ(validate_spec(s), std::vector<std::string>{"no-text input requires the image directive"});
    s = make_spec("", Modality::multimodal, ImageSource::generated, TextInput::input, Directive::both, false);
    s.decode.max_new_tokens = 0;
    s.decode.temperature = -1;
    s.backend_ids["painter"] = "p";
    EXPECT_EQ(validate_spec(s).size(), 4u);
}

TEST(ExperimentSpec, UnknownEnumValuesAreRejected) {
    auto j = json(multimodal_specs().front());
    j["directive"] = "p4";
    EXPECT_THROW(j.get<ExperimentSpec>(), UsageError);
}

TEST(DecodeParams, TaskDefaults) {
    DecodeParams d;
    EXPECT_EQ(d.max_new_tokens_or(kErMaxNewTokens), 64);
    EXPECT_EQ(d.max_new_tokens_or(kQaMaxNewTokens), 32);
    EXPECT_EQ(d.temperature, 0.0);
    d.max_new_tokens = 10;
    EXPECT_EQ(json(d).get<DecodeParams>(), d);
}

TEST(PredictionRecord, JsonRoundTripWithFlags) {
    PredictionRecord r{"id", "raw", "ext", "Fear", {{"Fear", 0.5}}, {"k"}, 12,
                       {RecordFlag::cache_hit, RecordFlag::empty_extraction_fallback}};
    const auto j = json(r);
    EXPECT_EQ(j.at("flags"), json::parse(R"(["empty-extraction-fallback","cache-hit"])"));
    EXPECT_EQ(j.get<PredictionRecord>(), r);
    for (const char* key : {"id", "raw_output", "extracted", "prediction", "scores", "image_keys", "latency_ms", "flags"})
        EXPECT_TRUE(j.contains(key)) << key;
}
