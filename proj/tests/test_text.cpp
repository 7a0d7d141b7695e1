#include <gtest/gtest.h>

#include "ctq/corpus.hpp"
#include "ctq/text.hpp"
#include "support.hpp"

using namespace ctq;

TEST(Text, Utf8RoundTrip)
{
    const std::string s = "Grüße, Ελλάδα и Москва 東京";
    EXPECT_EQ(utf8_encode(utf8_decode(s)), s);
    EXPECT_EQ(utf8_decode("é").size(), 1u);
}

TEST(Text, InvalidBytesBecomeReplacementChars)
{
    const auto cps = utf8_decode(std::string("a\xC3", 2));
    ASSERT_EQ(cps.size(), 2u);
    EXPECT_EQ(cps[1], U'�');
}

TEST(Text, NormalizeWhitespace)
{
    EXPECT_EQ(normalize_whitespace("  a \t\n b  "), "a b");
    EXPECT_EQ(normalize_whitespace(""), "");
    EXPECT_EQ(trim("\t x y \n"), "x y");
}

TEST(Text, RetrievalTokensAreLowercasedAndStripped)
{
    const auto t = tokenize_for_retrieval("The CAT, (sat) on \"Ärger\"!");
    const std::vector<std::string> want{"the", "cat", "sat", "on", "ärger"};
    EXPECT_EQ(t, want);
    EXPECT_TRUE(tokenize_for_retrieval("... !!").empty());
}

TEST(Text, TokenCount)
{
    EXPECT_EQ(token_count("a  b\tc\n"), 3u);
    EXPECT_EQ(token_count("   "), 0u);
}

TEST(Text, HashIsFnv1a)
{
    // FNV-1a 64 of the empty string is the offset basis.
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hash_hex("a"), "af63dc4c8601ec8c");
}

TEST(Text, DoubleFormattingRoundTrips)
{
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 0.0})
        EXPECT_EQ(parse_double(format_double(v)), v);
    EXPECT_THROW(parse_double("abc"), std::invalid_argument);
    EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
}

TEST(Corpus, DedupDropsExactDuplicates)
{
    const auto db = parse_parallel("A\tB\nA\tB\nC\tD\n", ParallelFormat::tsv);
    ASSERT_EQ(db.size(), 2u);
    EXPECT_EQ(db[0].id, 0u);
    EXPECT_EQ(db[1].id, 1u);
    EXPECT_EQ(db[1].source, "C");
}

TEST(Corpus, SameSourceDifferentTargetIsKept)
{
    ExampleDatabase db;
    db.pairs = {{0, "A", "B"}, {1, "A", "E"}};
    EXPECT_EQ(dedup(db).size(), 2u);
    EXPECT_TRUE(dedup(ExampleDatabase{}).empty());
}

TEST(Corpus, DedupIsIdempotentAndTrims)
{
    const auto db = parse_parallel(" A \tB\nA\t B\nC\tD\nC\tD\n", ParallelFormat::tsv);
    ASSERT_EQ(db.size(), 2u);
    const auto again = dedup(db);
    ASSERT_EQ(again.size(), db.size());
    for (std::size_t i = 0; i < db.size(); ++i)
        EXPECT_EQ(again[i].source + again[i].target, db[i].source + db[i].target);
}

TEST(Corpus, MalformedLineNamesLineNumber)
{
    try {
        parse_parallel("only one column\n", ParallelFormat::tsv);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 1: expected 2 fields"), std::string::npos);
    }
    EXPECT_THROW(parse_parallel("", ParallelFormat::tsv), std::runtime_error);
    EXPECT_THROW(parse_parallel("a\t \n", ParallelFormat::tsv), std::runtime_error);
}

TEST(Corpus, JsonlKeepsInputOrder)
{
    std::string content;
    for (int i = 0; i < 5; ++i)
        content += R"({"source": "s)" + std::to_string(i) + R"(", "target": "t)" + std::to_string(i) + "\"}\n";
    const auto db = parse_parallel(content, ParallelFormat::jsonl);
    ASSERT_EQ(db.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_EQ(db[i].source, "s" + std::to_string(i));
}

TEST(Corpus, SerializeRoundTripsTexts)
{
    ExampleDatabase db;
    db.pairs = {{0, "tab\tinside? no: quote \" and ü", "ziel"}, {1, "b", "c"}};
    db.src_lang = "German";
    db.tgt_lang = "English";
    db.provenance = "unit";
    const auto back = parse_parallel(serialize_database(db), ParallelFormat::jsonl);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].source, db[0].source);
    EXPECT_EQ(back.src_lang, "German");
    EXPECT_EQ(back.tgt_lang, "English");
    EXPECT_EQ(back.provenance, "unit");
}

TEST(Corpus, HeldOutIsDisjointFromDatabase)
{
    ExampleDatabase db, pairs;
    db.pairs = {{0, "a", "b"}, {1, "c", "d"}};
    pairs.pairs = {{0, "a", "b"}, {1, "x", "y"}, {2, "c", "z"}};
    const auto held = make_heldout(pairs, db);
    ASSERT_EQ(held.pairs.size(), 2u);
    EXPECT_EQ(held.pairs[0].source, "x");
    EXPECT_EQ(held.pairs[1].target, "z");
}

TEST(Corpus, LoadFromFileInfersFormat)
{
    const auto dir = test::temp_dir("corpus");
    write_file(dir / "a.tsv", "x\ty\nx\ty\n");
    EXPECT_EQ(load_parallel(dir / "a.tsv").size(), 1u);
    EXPECT_LE(load_parallel(dir / "a.tsv").size(), 2u);
    EXPECT_THROW(load_parallel(dir / "missing.tsv"), std::runtime_error);
}
