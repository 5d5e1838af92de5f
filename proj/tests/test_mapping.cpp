#include <gtest/gtest.h>

#include <random>

#include "mh/mapping.hpp"
#include "test_util.hpp"

using namespace mh;

namespace {

// Baseline prompt shape with its original spacing.
const std::string kEchoPrompt =
    "BEGINNING OF CONVERSATION:              USER : what emotion do you think this TEXT has?              you answer "
    "should be one of following emotions: Neutral, Happiness, Sadness, Anger, Frustration, Fear, "
    "Excitement,Disgust,Surprise,Unknown             TEXT :  You've got a lot- oh, awesome.             Answer:   ";

/// Multiplies each returned vector by its own positive factor.
class ScalingEmbedder final : public Embedder {
public:
    explicit ScalingEmbedder(std::uint64_t seed) : rng_(seed) {}
    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
        auto out = inner_.embed(texts);
        std::uniform_real_distribution<double> scale(1e-3, 1e3);
        for (auto& v : out) {
            const double s = scale(rng_);
            for (auto& x : v.values) x *= s;
        }
        return out;
    }
    std::string model_id() const override { return "scaled"; }

private:
    MockEmbedder inner_;
    std::mt19937_64 rng_;
};

/// Every text maps to the same vector, so all labels tie.
class ConstantEmbedder final : public Embedder {
public:
    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
        return std::vector<EmbeddingVector>(texts.size(), EmbeddingVector{{1.0, 2.0}});
    }
    std::string model_id() const override { return "constant"; }
};

}  // namespace

TEST(Cosine, KnownValueAndErrors) {
    EXPECT_DOUBLE_EQ(cosine({{1, 2, 3}}, {{4, 5, 6}}), 0.9746318461970762);
    EXPECT_DOUBLE_EQ(cosine({{1, 0}}, {{-2, 0}}), -1.0);
    EXPECT_THROW(cosine({{1, 2}}, {{1, 2, 3}}), DomainError);
    EXPECT_THROW(cosine({{0, 0}}, {{1, 2}}), DomainError);
}

TEST(OutputProcess, EchoThenAnswer) {
    EXPECT_EQ(output_process(kEchoPrompt + "Surprised", kEchoPrompt), "Surprised");
    // the echoed marker line may differ in spacing from the prompt
    const auto echoed = kEchoPrompt.substr(0, kEchoPrompt.size() - 2) + "Surprised";
    EXPECT_EQ(output_process(echoed, kEchoPrompt), "Surprised");
}

TEST(OutputProcess, EchoWithBlankAnswer) {
    EXPECT_EQ(output_process(kEchoPrompt, kEchoPrompt), "");
    EXPECT_EQ(output_process(kEchoPrompt + "   \n", kEchoPrompt), "");
}

TEST(OutputProcess, WithoutEchoKeepsTextAfterLastMarker) {
    EXPECT_EQ(output_process("  Sadness  ", kEchoPrompt), "Sadness");
    EXPECT_EQ(output_process("Answer: no Answer: Fear", "unrelated"), "Fear");
    EXPECT_EQ(output_process("['Sadness']", kEchoPrompt), "['Sadness']");
}

TEST(OutputProcess, PartialEchoBelowThresholdIsKept) {
    const std::string prompt = "what emotions do you think this TEXT has?";
    EXPECT_EQ(output_process("what emotions? Joy", prompt), "what emotions? Joy");
}

TEST(OutputProcess, IdempotentOnRandomInputs) {
    std::mt19937_64 rng(11);
    const std::vector<std::string> pieces = {"Answer:", " ", "Answer: ", "Fear", kEchoPrompt, "\n", "x", "Answer"};
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), len(0, 6);
    for (int i = 0; i < 500; ++i) {
        std::string raw;
        for (auto n = len(rng); n > 0; --n) raw += pieces[pick(rng)];
        const auto once = output_process(raw, kEchoPrompt);
        EXPECT_EQ(output_process(once, kEchoPrompt), once) << raw;
    }
}

TEST(Mapping, ExactLabelIsIdentityWithoutEmbedding) {
    MockEmbedder emb;
    for (const auto& labels : {iemocap_labels(), meld_labels()})
        for (const auto& l : labels.labels()) {
            for (const auto& variant : {l, ascii_lower(l), "  " + l + "\t"}) {
                const auto r = map_to_label(variant, labels, emb);
                EXPECT_EQ(r.label, l);
                EXPECT_EQ(r.via, MappingVia::exact_match);
            }
        }
    EXPECT_EQ(emb.calls(), 0);
}

TEST(Mapping, EmptyExtractionRoutesToFallback) {
    MockEmbedder emb;
    for (const auto& blank : {"", "   ", "\n\t"}) {
        auto r = map_to_label(blank, iemocap_labels(), emb);
        EXPECT_EQ(r.label, "Unknown");
        EXPECT_EQ(r.via, MappingVia::fallback);
        EXPECT_TRUE(r.scores.empty());
        r = map_to_label(blank, iemocap_labels(), emb, std::string("neutral"));
        EXPECT_EQ(r.label, "Neutral");
        EXPECT_EQ(r.via, MappingVia::fallback);
        r = map_to_label(blank, meld_labels(), emb);
        EXPECT_EQ(r.label, "Neutral");  // no Unknown class: first label
    }
    EXPECT_EQ(emb.calls(), 0);
}

TEST(Mapping, TrigramScoresMatchReference) {
    MockEmbedder emb;
    const auto r = map_to_label("Sadness!", iemocap_labels(), emb);
    EXPECT_EQ(r.label, "Sadness");
    EXPECT_EQ(r.via, MappingVia::embedding);
    EXPECT_NEAR(r.scores.at("Happiness"), 0.31980107453341566, 1e-12);
    EXPECT_NEAR(r.scores.at("Sadness"), 0.80178372573727319, 1e-12);
    EXPECT_NEAR(r.scores.at("Neutral"), 0.0, 1e-12);
    EXPECT_EQ(emb.calls(), 1);

    const std::vector<std::pair<std::string, std::string>> expected = {
        {"['Sadness']", "Sadness"},
        {"Surprised", "Surprise"},
        {"Disgusted", "Disgust"},
        {"I think it's a positive emotion", "Frustration"},
        {"positive", "Neutral"}};
    for (const auto& [text, label] : expected) EXPECT_EQ(map_to_label(text, iemocap_labels(), emb).label, label) << text;
    EXPECT_NEAR(map_to_label("Surprised", iemocap_labels(), emb).scores.at("Surprise"), 0.82495791138430541, 1e-12);
}

TEST(Mapping, ArgmaxInvariantUnderPositiveScaling) {
    MockEmbedder plain;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        std::string text = test::random_word(rng, 3, 12);
        if (i % 3 == 0) text += " " + iemocap_labels()[std::size_t(i) % 10].substr(0, 4);
        ScalingEmbedder scaled{static_cast<std::uint64_t>(i)};
        const auto a = map_to_label(text, iemocap_labels(), plain);
        const auto b = map_to_label(text, iemocap_labels(), scaled);
        EXPECT_EQ(a.label, b.label) << text;
        for (const auto& [label, score] : a.scores) EXPECT_NEAR(b.scores.at(label), score, 1e-9);
    }
}

TEST(Mapping, TiesGoToTheEarliestLabel) {
    ConstantEmbedder emb;
    EXPECT_EQ(map_to_label("whatever", iemocap_labels(), emb).label, "Neutral");
    EXPECT_EQ(map_to_label("whatever", meld_labels(), emb).label, "Neutral");
    EXPECT_EQ(map_to_label("whatever", LabelSet({"B", "A"}), emb).label, "B");
}
