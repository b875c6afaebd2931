#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "arcade/core.hpp"
#include "arcade/dataset.hpp"

namespace arcade {
namespace {

TEST(Category, CodesAndNames) {
    for (int c = 0; c < kCategoryCount; ++c) {
        auto cat = category_from_code(c);
        ASSERT_TRUE(cat.has_value());
        EXPECT_EQ(code_of(*cat), c);
        EXPECT_EQ(category_from_name(category_name(*cat)), cat);
    }
    EXPECT_EQ(category_from_code(6), std::nullopt);
    EXPECT_EQ(category_from_code(-1), std::nullopt);
    EXPECT_EQ(category_from_name("religious hate"), HateCategory::ReligiousHate);
    EXPECT_EQ(category_from_name("not_hate"), HateCategory::NotHate);
    EXPECT_EQ(category_from_name("unknown"), std::nullopt);
}

TEST(Category, Binarize) {
    EXPECT_FALSE(binarize(HateCategory::NotHate));
    for (int c = 1; c < kCategoryCount; ++c) EXPECT_TRUE(binarize(*category_from_code(c)));
}

TEST(Pattern, IndexRoundTrip) {
    for (int i = 0; i < 8; ++i) {
        const auto p = InteractionPattern::from_index(i);
        EXPECT_EQ(p.index(), i);
        EXPECT_EQ(InteractionPattern::parse(p.to_string()), p);
    }
    EXPECT_EQ(InteractionPattern::parse("101")->index(), 5);
    EXPECT_EQ(InteractionPattern::parse("10"), std::nullopt);
    EXPECT_EQ(InteractionPattern::parse("102"), std::nullopt);
    EXPECT_EQ(InteractionPattern::parse("1010"), std::nullopt);
}

TEST(Pattern, FromAnnotation) {
    MiaAnnotation a{HateCategory::Sexist, "t", HateCategory::NotHate, "i", HateCategory::OtherHate};
    EXPECT_EQ(pattern_of(a).to_string(), "101");
    a.y_combined = HateCategory::NotHate;
    EXPECT_EQ(pattern_of(a).to_string(), "100");
}

TEST(Difficulty, TableRows) {
    const std::map<std::string, Difficulty> table = {
        {"000", Difficulty::Easy},   {"011", Difficulty::Easy},   {"101", Difficulty::Easy},
        {"111", Difficulty::Easy},   {"010", Difficulty::Normal}, {"100", Difficulty::Normal},
        {"001", Difficulty::Hard},   {"110", Difficulty::Hard},
    };
    ASSERT_EQ(table.size(), 8u);
    for (const auto& [bits, d] : table) EXPECT_EQ(difficulty_of(*InteractionPattern::parse(bits)), d) << bits;
}

TEST(Difficulty, PartitionSizes) {
    std::map<Difficulty, int> sizes;
    for (int i = 0; i < 8; ++i) sizes[difficulty_of(InteractionPattern::from_index(i))] += 1;
    EXPECT_EQ(sizes[Difficulty::Easy], 4);
    EXPECT_EQ(sizes[Difficulty::Normal], 2);
    EXPECT_EQ(sizes[Difficulty::Hard], 2);
}

TEST(Difficulty, TableOrderIsGrouped) {
    std::vector<Difficulty> order;
    for (const auto& p : kPatternTableOrder) order.push_back(difficulty_of(p));
    EXPECT_TRUE(std::is_sorted(order.begin(), order.end()));
    std::set<int> seen;
    for (const auto& p : kPatternTableOrder) seen.insert(p.index());
    EXPECT_EQ(seen.size(), 8u);
    EXPECT_EQ(difficulty_from_name("hard"), Difficulty::Hard);
}

// ---------------------------------------------------------------------------

const char* kLine =
    R"({"id":"s1","text":"hi","image":"a.png","source":"synthetic","split":"dev",)"
    R"("mia":{"y_text":1,"e_text":"x","y_image":0,"e_image":"y","y_combined":1},"machine_label":1,)"
    R"("annotators":[{"id":"a","label":1},{"id":"b","label":0,"not_sure":true,)"
    R"("adjudication":{"expert":"e","label":1}},{"id":"c","low_quality":true}],)"
    R"("target_group":"women","consensus":{"level":"weak","label":1}})";

TEST(Dataset, ParsesFullRecord) {
    const Sample s = parse_sample_line(kLine);
    EXPECT_EQ(s.id, "s1");
    EXPECT_EQ(s.source, SampleSource::Synthetic);
    EXPECT_EQ(s.split, Split::Dev);
    ASSERT_TRUE(s.gold);
    EXPECT_EQ(s.gold->y_text, HateCategory::Racist);
    EXPECT_EQ(s.machine_label, HateCategory::Racist);
    ASSERT_EQ(s.annotators.size(), 3u);
    ASSERT_TRUE(s.annotators[1].adjudication);
    EXPECT_EQ(s.annotators[1].adjudication->expert_id, "e");
    EXPECT_TRUE(s.annotators[2].low_quality);
    EXPECT_EQ(s.target_group, "women");
    ASSERT_TRUE(s.consensus);
    EXPECT_EQ(s.consensus->label, HateCategory::Racist);
}

TEST(Dataset, WriteReadRoundTrip) {
    std::vector<Sample> in = {parse_sample_line(kLine)};
    Sample bare;
    bare.id = "s2";
    bare.image_ref = "https://example.org/x.png";
    in.push_back(bare);
    std::stringstream buf;
    write_dataset(buf, in);
    EXPECT_EQ(read_dataset(buf), in);
}

TEST(Dataset, Errors) {
    EXPECT_THROW(parse_sample_line("{not json"), DataError);
    EXPECT_THROW(parse_sample_line(R"({"id":"x","text":"","image":"","source":"real","split":"test"})"), DataError);
    EXPECT_THROW(parse_sample_line(R"({"id":"x","text":"","image":"a","source":"web","split":"test"})"), DataError);
    EXPECT_THROW(parse_sample_line(R"({"id":"x","text":"","image":"a","source":"real","split":"test",)"
                                   R"("mia":{"y_text":9,"y_image":0,"y_combined":0}})"),
                 DataError);
    EXPECT_THROW(parse_sample_line(R"({"text":"","image":"a","source":"real","split":"test"})"), DataError);
}

TEST(Dataset, DuplicateIdNamesLine) {
    std::stringstream in;
    in << R"({"id":"d","text":"a","image":"a","source":"real","split":"test"})" << "\n\n"
       << R"({"id":"d","text":"b","image":"b","source":"real","split":"test"})" << "\n";
    try {
        read_dataset(in, "mem");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("mem:3: duplicate id 'd'"), std::string::npos) << e.what();
    }
}

TEST(Dataset, EmptyTextIsDegenerateButKept) {
    std::stringstream in;
    in << R"({"id":"d","text":"","image":"a","source":"real","split":"test"})" << "\n";
    const auto s = read_dataset(in);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_TRUE(s[0].degenerate());
}

TEST(Dataset, FixtureCoversEveryPattern) {
    const auto samples = load_dataset(std::filesystem::path(ARCADE_FIXTURE_DIR) / "ds24.jsonl");
    ASSERT_EQ(samples.size(), 24u);
    std::map<int, int> per_pattern;
    for (const auto& s : samples) per_pattern[pattern_of(*s.gold).index()] += 1;
    ASSERT_EQ(per_pattern.size(), 8u);
    for (const auto& [_, n] : per_pattern) EXPECT_EQ(n, 3);
}

TEST(Images, Resolution) {
    EXPECT_EQ(resolve_image("img/a.png", "/data"), "/data/img/a.png");
    EXPECT_EQ(resolve_image("/abs/a.png", "/data"), "/abs/a.png");
    EXPECT_EQ(resolve_image("https://x/y.png", "/data"), "https://x/y.png");
    EXPECT_EQ(resolve_image("img/a.png", ""), "img/a.png");
    EXPECT_TRUE(is_url("data:image/png;base64,AAAA"));
}

}  // namespace
}  // namespace arcade
