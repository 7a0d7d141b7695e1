#include <gtest/gtest.h>

#include "ctq/prompt.hpp"
#include "ctq/rng.hpp"
#include "ctq/text.hpp"
#include "support.hpp"

using namespace ctq;

namespace {

std::string words(std::size_t n, const std::string& stem)
{
    std::string out;
    for (std::size_t i = 0; i < n; ++i)
        out += (i ? " " : "") + stem + std::to_string(i);
    return out;
}

// An example whose rendered block is exactly `tokens` whitespace tokens: the
// two labels contribute four and the delimiter line one.
SentencePair sized_example(std::size_t id, std::size_t tokens)
{
    const std::size_t body = tokens - 5;
    return {id, words(body / 2, "s" + std::to_string(id) + "_"), words(body - body / 2, "t" + std::to_string(id) + "_")};
}

// Survivors are the longest prefix whose cumulative size fits.
std::size_t prefix_oracle(const std::vector<std::size_t>& sizes, std::size_t query, std::size_t budget)
{
    std::size_t total = query;
    std::size_t kept = 0;
    for (auto s : sizes) {
        if (total + s > budget)
            break;
        total += s;
        ++kept;
    }
    return kept;
}

}  // namespace

TEST(Prompt, ZeroShot)
{
    PromptSpec spec{"Hindi", "English", "###", 1000};
    EXPECT_EQ(build_prompt({}, "I", spec), "Hindi sentence: I\nEnglish sentence:");
}

TEST(Prompt, GoldenTwoShot)
{
    PromptSpec spec{"German", "English", "###", 1000};
    const std::vector<SentencePair> ex{{0, "Guten Morgen.", "Good morning."}, {1, "Wie geht es dir?", "How are you?"}};
    EXPECT_EQ(build_prompt(ex, "Danke schön.", spec), read_file(test::fixture("prompt_k2.txt")));
}

TEST(Prompt, OneDelimiterLinePerExample)
{
    PromptSpec spec;
    for (std::size_t k = 0; k < 6; ++k) {
        std::vector<SentencePair> ex;
        for (std::size_t i = 0; i < k; ++i)
            ex.push_back({i, "a" + std::to_string(i), "b" + std::to_string(i)});
        const auto lines = test::split_lines(build_prompt(ex, "q", spec));
        EXPECT_EQ(static_cast<std::size_t>(std::count(lines.begin(), lines.end(), "###")), k);
        EXPECT_EQ(lines.size(), 3 * k + 2);
    }
}

TEST(Prompt, SpecValidation)
{
    EXPECT_THROW((PromptSpec{"A", "B", "", 10}.validate()), std::invalid_argument);
    EXPECT_THROW((PromptSpec{"A###", "B", "###", 10}.validate()), std::invalid_argument);
    EXPECT_NO_THROW(PromptSpec{}.validate());
}

TEST(Postprocess, CraftedCompletions)
{
    PromptSpec spec{"Hindi", "French", "###", 1000};
    const std::vector<std::pair<std::string, std::string>> cases{
        {"bonjour\n###\nHindi sentence: ...", "bonjour"},
        {"  bonjour le monde  ", "bonjour le monde"},
        {"###", ""},
        {"### merci", ""},
        {"French sentence: salut\n###", "salut"},
        {" French sentence:   oui ### non", "oui"},
        {"French sentence: French sentence: x", "French sentence: x"},
        {"a#b##c###d###e", "a#b##c"},
        {"\n\n  ligne\nsuite\n###\n", "ligne\nsuite"},
        {"", ""},
    };
    for (const auto& [in, want] : cases)
        EXPECT_EQ(postprocess(in, spec), want) << in;
    EXPECT_TRUE(postprocess_detailed("###x", spec).empty_output);
    EXPECT_FALSE(postprocess_detailed(" ###x", spec).empty_output);
}

TEST(Postprocess, RoundTripWithWellBehavedEcho)
{
    PromptSpec spec;
    const std::vector<SentencePair> ex{{0, "x y", "u v"}};
    const auto prompt = build_prompt(ex, "hello", spec);
    const std::string intended = "bonjour tout le monde";
    const auto completion = " " + intended + "\n" + spec.delimiter + "\nSource sentence: next";
    EXPECT_EQ(postprocess(completion, spec), intended);
    EXPECT_EQ(prompt.back(), ':');
}

TEST(Budget, CraftedLengthsMatchCumulativeOracle)
{
    PromptSpec spec;
    const std::vector<std::size_t> sizes{400, 300, 200, 150, 100};
    std::vector<SentencePair> ranked;
    for (std::size_t i = 0; i < sizes.size(); ++i)
        ranked.push_back(sized_example(i, sizes[i]));
    const std::string query = words(56, "q");
    ASSERT_EQ(token_count(build_prompt({}, query, spec)), 60u);
    ASSERT_EQ(token_count(build_prompt({ranked[0]}, query, spec)), 460u);

    const auto kept = enforce_budget(ranked, query, spec);
    const auto want = prefix_oracle(sizes, 60, 1000);
    EXPECT_EQ(want, 3u);
    ASSERT_EQ(kept.size(), want);
    for (std::size_t i = 0; i < kept.size(); ++i)
        EXPECT_EQ(kept[i].id, i);
}

TEST(Budget, OversizedExampleDropped)
{
    PromptSpec spec;
    std::vector<SentencePair> ranked{sized_example(0, 20), sized_example(1, 30), sized_example(2, 25),
                                     sized_example(3, 2000)};
    const auto kept = enforce_budget(ranked, "hello", spec);
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_EQ(kept.back().id, 2u);
    ranked.pop_back();
    EXPECT_EQ(enforce_budget(ranked, "hello", spec), ranked);
}

TEST(Budget, DuplicatesAndQueryOverflow)
{
    PromptSpec spec;
    spec.token_budget = 12;
    const std::vector<SentencePair> ranked{{0, "a", "b"}, {1, "a", "b"}, {2, "a", "c"}};
    const auto kept = enforce_budget(ranked, "q", spec);
    ASSERT_EQ(kept.size(), 1u);
    spec.token_budget = 100;
    const auto all = enforce_budget(ranked, "q", spec);
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[1].id, 2u);
    spec.token_budget = 4;
    EXPECT_THROW(enforce_budget(ranked, "q q", spec), BudgetError);
}

TEST(Budget, RandomListsMatchOracleAndAreMonotone)
{
    Rng rng(21);
    PromptSpec spec;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> sizes;
        std::vector<SentencePair> ranked;
        const auto k = 1 + uniform_index(rng, 8);
        for (std::size_t i = 0; i < k; ++i) {
            sizes.push_back(6 + uniform_index(rng, 300));
            ranked.push_back(sized_example(i, sizes.back()));
        }
        const auto qlen = 1 + uniform_index(rng, 50);
        const auto query = words(qlen, "q");
        std::size_t previous = 0;
        for (std::size_t budget = qlen + 4; budget < 2000; budget += 37) {
            spec.token_budget = budget;
            const auto kept = enforce_budget(ranked, query, spec);
            ASSERT_EQ(kept.size(), prefix_oracle(sizes, qlen + 4, budget));
            ASSERT_GE(kept.size(), previous);
            previous = kept.size();
        }
    }
}

TEST(Budget, PluggableTokenizer)
{
    PromptSpec spec;
    spec.token_budget = 119;
    const std::vector<SentencePair> ranked{{0, "a", "b"}, {1, "c", "d"}};
    const TokenCounter chars = [](std::string_view s) { return s.size(); };
    EXPECT_EQ(enforce_budget(ranked, "q", spec, chars).size(), 2u);
    spec.token_budget = 118;
    EXPECT_EQ(enforce_budget(ranked, "q", spec, chars).size(), 1u);
    spec.token_budget = 50;
    EXPECT_EQ(enforce_budget(ranked, "q", spec, chars).size(), 0u);
}
