#include <gtest/gtest.h>

#include <fstream>

#include "mh/datasets.hpp"
#include "mh/segmentation.hpp"
#include "test_util.hpp"

using namespace mh;

namespace {

const char* kMeldHeader = "Sr No.,Utterance,Speaker,Emotion,Sentiment,Dialogue_ID,Utterance_ID\n";

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace

TEST(Csv, QuotedFieldsWithCommasQuotesAndNewlines) {
    const auto rows = parse_csv("a,b,c\r\n\"x, y\",\"say \"\"hi\"\"\",\"two\nlines\"\nlast,,\n");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1].fields, (std::vector<std::string>{"x, y", "say \"hi\"", "two\nlines"}));
    EXPECT_EQ(rows[1].line, 2u);
    EXPECT_EQ(rows[2].line, 4u);
    EXPECT_EQ(rows[2].fields, (std::vector<std::string>{"last", "", ""}));
}

TEST(Csv, MalformedRowsCarryLineNumbers) {
    const auto rows = parse_csv("h1,h2\nok,1\nbad\"quote,2\n\"closed\"junk,3\nfine,4\n");
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_FALSE(rows[1].error);
    ASSERT_TRUE(rows[2].error);
    EXPECT_EQ(rows[2].line, 3u);
    ASSERT_TRUE(rows[3].error);
    EXPECT_EQ(rows[3].line, 4u);
    EXPECT_EQ(rows[4].fields, (std::vector<std::string>{"fine", "4"}));
    EXPECT_EQ(rows[4].line, 5u);

    const auto open = parse_csv("h\n\"never closed\n");
    ASSERT_EQ(open.size(), 2u);
    EXPECT_TRUE(open[1].error);
}

TEST(ConvertEr, MeldRowsAndRejects) {
    const std::string src = std::string(kMeldHeader) +
                            "1,\"Oh, really?\",Ross,surprise,positive,0,0\n"
                            "2,I'm fine.,Rachel,Joy,positive,0,1\n"
                            "3,\"broken \"quote,Joey,anger,negative,0,2\n"
                            "4,Who cares,Joey,boredom,negative,0,3\n"
                            "5,Again,Ross,neutral,neutral,0,1\n"
                            "6,short,row\n";
    const auto out = convert_er(src, ErFormat::meld_csv, meld_labels(), "meld-test");
    ASSERT_EQ(out.samples.size(), 2u);
    EXPECT_EQ(out.samples[0], (Sample{"dia0_utt0", "Oh, really?", "Surprise", "meld-test"}));
    EXPECT_EQ(out.samples[1].gold_label, "Joy");
    ASSERT_EQ(out.rejects.size(), 4u);
    EXPECT_EQ(out.rejects[0].line, 4u);
    EXPECT_EQ(out.rejects[1].line, 5u);
    EXPECT_NE(out.rejects[1].reason.find("boredom"), std::string::npos);
    EXPECT_NE(out.rejects[2].reason.find("duplicate"), std::string::npos);
    EXPECT_EQ(out.rejects[3].line, 7u);
    EXPECT_EQ(reject_to_json(out.rejects[1]).at("raw"), "4,Who cares,Joey,boredom,negative,0,3\n");
    EXPECT_THROW(convert_er("Utterance,Emotion\nx,joy\n", ErFormat::meld_csv, meld_labels(), "m"), FormatError);
}

TEST(ConvertEr, IemocapLinesAndCodes) {
    const std::string src =
        "Ses01F_impro01_F000\tSadness\tI'm so sorry.\n"
        "Ses01F_impro01_F001\txxx\t[BREATHING] So what do you think?\r\n"
        "\n"
        "Ses01F_impro01_F002\texc\tYou've got a lot- oh, awesome\n"
        "no tabs here\n"
        "Ses01F_impro01_F003\tjoy\tnot an IEMOCAP label\n";
    const auto out = convert_er(src, ErFormat::iemocap_lines, iemocap_labels(), "iemocap");
    ASSERT_EQ(out.samples.size(), 3u);
    EXPECT_EQ(out.samples[0], (Sample{"Ses01F_impro01_F000", "I'm so sorry.", "Sadness", "iemocap"}));
    EXPECT_EQ(out.samples[1].gold_label, "Unknown");
    EXPECT_EQ(out.samples[1].text, "[BREATHING] So what do you think?");
    EXPECT_EQ(out.samples[2].gold_label, "Excitement");
    ASSERT_EQ(out.rejects.size(), 2u);
    EXPECT_EQ(out.rejects[0].line, 5u);
    EXPECT_EQ(out.rejects[1].line, 6u);

    for (const auto& [code, name] : std::vector<std::pair<std::string, std::string>>{
             {"neu", "Neutral"}, {"hap", "Happiness"}, {"sad", "Sadness"}, {"ang", "Anger"}, {"fru", "Frustration"},
             {"fea", "Fear"}, {"exc", "Excitement"}, {"dis", "Disgust"}, {"sur", "Surprise"}, {"xxx", "Unknown"}})
        EXPECT_EQ(iemocap_code(code), name);
    EXPECT_FALSE(iemocap_code("zzz"));
}

TEST(ConvertEr, ReverseProjectionReproducesSourceFields) {
    std::mt19937_64 rng(17);
    const auto labels = meld_labels();
    for (int trial = 0; trial < 50; ++trial) {
        struct Row {
            int dia, utt;
            std::string text, emotion;
        };
        std::vector<Row> rows;
        std::string src = kMeldHeader;
        const int n = 1 + int(rng() % 20);
        for (int i = 0; i < n; ++i) {
            std::string text = test::random_word(rng);
            for (int w = int(rng() % 6); w > 0; --w) {
                static const char* seps[] = {" ", ", ", "\"", "\n", "'"};
                text += seps[rng() % 5] + test::random_word(rng);
            }
            std::string emotion = labels[rng() % labels.size()];
            if (rng() % 2) emotion = ascii_lower(emotion);
            rows.push_back({trial, i, text, emotion});
            src += std::to_string(i) + "," + csv_quote(text) + ",Speaker," + emotion + ",neutral," +
                   std::to_string(trial) + "," + std::to_string(i) + "\n";
        }
        const auto out = convert_er(src, ErFormat::meld_csv, labels, "meld");
        ASSERT_TRUE(out.rejects.empty());
        ASSERT_EQ(out.samples.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& s = out.samples[i];
            EXPECT_EQ(s.id, "dia" + std::to_string(rows[i].dia) + "_utt" + std::to_string(rows[i].utt));
            EXPECT_EQ(s.text, rows[i].text);
            EXPECT_EQ(ascii_lower(*s.gold_label), ascii_lower(rows[i].emotion));
        }
    }
}

TEST(ConvertEr, IdempotentBytes) {
    const std::string src = std::string(kMeldHeader) + "1,\"a, b\",S,joy,p,3,4\n2,c,S,fear,n,3,5\n";
    const auto a = serialize_samples(convert_er(src, ErFormat::meld_csv, meld_labels(), "m").samples);
    const auto b = serialize_samples(convert_er(src, ErFormat::meld_csv, meld_labels(), "m").samples);
    EXPECT_EQ(a, b);
    EXPECT_EQ(sha256_hex(a), sha256_hex(b));
}

TEST(ConvertCoqa, TurnsAndAdditionalAnswers) {
    const json src = json::parse(R"({"data": [{
        "id": "story-a",
        "story": "Ann had a red ball. She lost it. Bob found it. He gave it back. They played.",
        "questions": [{"turn_id": 1, "input_text": "What color?"}, {"turn_id": 2, "input_text": "Who found it?"},
                      {"turn_id": 3, "input_text": "Did he keep it?"}, {"turn_id": 4, "input_text": "What then?"},
                      {"turn_id": 5, "input_text": "Who lost it?"}],
        "answers": [{"turn_id": 1, "input_text": "red"}, {"turn_id": 2, "input_text": "Bob"},
                    {"turn_id": 3, "input_text": "no"}, {"turn_id": 4, "input_text": "they played"},
                    {"turn_id": 5, "input_text": "Ann"}],
        "additional_answers": {
            "0": [{"turn_id": 2, "input_text": "Bob found it"}, {"turn_id": 1, "input_text": "a red one"}],
            "1": [{"turn_id": 1, "input_text": "Red"}]}
    }]})");
    const auto stories = convert_coqa(src);
    ASSERT_EQ(stories.size(), 1u);
    const auto& s = stories[0];
    ASSERT_EQ(s.turns.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(s.turns[std::size_t(i)].index, i);
    EXPECT_EQ(s.turns[0].references, (std::vector<std::string>{"red", "a red one", "Red"}));
    EXPECT_EQ(s.turns[1].references, (std::vector<std::string>{"Bob", "Bob found it"}));
    EXPECT_EQ(s.turns[2].references.size(), 1u);
    EXPECT_EQ(serialize_stories(convert_coqa(src)), serialize_stories(stories));

    MockSegmentProposer even;
    const auto seg = segment_story(s, even);
    EXPECT_EQ(seg.segments.front().text, "Ann had a red ball.");
    EXPECT_EQ(seg.segments.back().text, " They played.");
}

TEST(ConvertCoqa, CountMismatchNamesTheStory) {
    const json src = json::parse(R"({"data": [{"id": "story-b", "story": "x. y. z.",
        "questions": [{"turn_id": 1, "input_text": "q1"}, {"turn_id": 2, "input_text": "q2"}],
        "answers": [{"turn_id": 1, "input_text": "a1"}]}]})");
    try {
        convert_coqa(src);
        FAIL() << "expected DataIntegrityError";
    } catch (const DataIntegrityError& e) {
        EXPECT_NE(std::string(e.what()).find("story-b"), std::string::npos);
    }
}

TEST(MiniSets, CoverLabelsAndShapes) {
    const auto er = mini_er_dataset();
    EXPECT_EQ(er.samples.size(), 24u);
    std::set<std::string> seen;
    for (const auto& s : er.samples) seen.insert(*s.gold_label);
    EXPECT_EQ(seen.size(), iemocap_labels().size());
    EXPECT_EQ(er.samples[0].text, "I'm so sorry.");
    EXPECT_EQ(er.samples[0].gold_label, "Sadness");
    EXPECT_EQ(er.ref.content_hash, sha256_hex(serialize_samples(er.samples)));

    const auto qa = mini_qa_dataset();
    ASSERT_EQ(qa.stories.size(), 3u);
    MockSegmentProposer even;
    for (const auto& s : qa.stories) {
        EXPECT_EQ(s.turns.size(), 5u);
        const auto seg = segment_story(s, even);
        EXPECT_EQ(seg.segments.size(), 5u);
        for (const auto& part : seg.segments) EXPECT_EQ(trim(part.text).back(), '.');
    }
}

TEST(Loading, FileDatasetsHashTheirBytes) {
    test::TempDir dir;
    const auto path = (dir / "tiny.jsonl").string();
    {
        std::ofstream out(path);
        out << serialize_samples(mini_er_samples());
    }
    const auto d = load_er_dataset(path, iemocap_labels());
    EXPECT_EQ(d.ref.name, "tiny");
    EXPECT_EQ(d.ref.content_hash, sha256_hex(read_file(path)));
    EXPECT_EQ(d.samples.size(), 24u);
    EXPECT_EQ(detect_task(path), Task::er);
    EXPECT_THROW(load_er_dataset("mini-er", meld_labels()), UsageError);
    EXPECT_THROW(resolve_labels("nonexistent-set"), UsageError);
    EXPECT_EQ(resolve_labels("meld").size(), 7u);
}
