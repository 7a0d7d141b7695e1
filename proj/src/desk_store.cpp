#include "ctq/desk_store.hpp"

#include <cmath>
#include <map>

#include "ctq/text.hpp"

namespace ctq {

std::vector<float> lexical_embedding(std::string_view text, std::size_t dim)
{
    std::u32string cps = U"  ";
    for (char32_t c : utf8_decode(normalize_whitespace(text)))
        cps.push_back(to_lower(c));
    cps += U"  ";
    std::vector<double> acc(dim, 0.0);
    for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
        const auto h = fnv1a64(utf8_encode(cps.substr(i, 3)));
        const double sign = (h >> 63) ? -1.0 : 1.0;
        acc[h % dim] += sign;
    }
    double norm = 0.0;
    for (double v : acc)
        norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim, 0.0f);
    if (norm == 0.0) {
        out[0] = 1.0f;
        return out;
    }
    for (std::size_t i = 0; i < dim; ++i)
        out[i] = static_cast<float>(acc[i] / norm);
    return out;
}

double lexical_pair_score(std::string_view a, std::string_view b)
{
    const auto ea = lexical_embedding(a);
    const auto eb = lexical_embedding(b);
    using Vec = Eigen::Map<const Eigen::VectorXf>;
    return cosine(Vec(ea.data(), static_cast<Eigen::Index>(ea.size())), Vec(eb.data(), static_cast<Eigen::Index>(eb.size())));
}

double lexical_perplexity(std::string_view text)
{
    const auto tokens = tokenize_for_retrieval(text);
    if (tokens.empty())
        return 100.0;
    std::map<std::string, int> counts;
    for (const auto& t : tokens)
        ++counts[t];
    const double distinct = static_cast<double>(counts.size()) / static_cast<double>(tokens.size());
    return 1.0 + 99.0 * distinct / (1.0 + 0.05 * static_cast<double>(tokens.size()));
}

void populate_lexical_store(ScoreStore& store, const ExampleDatabase& db, const std::vector<std::string>& queries,
                            const std::vector<std::vector<std::size_t>>& shortlists)
{
    auto ensure_embedding = [&](const std::string& text) {
        if (!store.embedding(text))
            store.put_embedding(text, lexical_embedding(text));
    };
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& input = queries[q];
        ensure_embedding(input);
        for (auto id : shortlists.at(q)) {
            const auto& cand = db[id];
            for (const auto& key : required_keys(cand, input, store.ids())) {
                if (store.contains(key))
                    continue;
                switch (key.kind) {
                case StoreKind::embedding:
                    ensure_embedding(key.texts[0]);
                    break;
                case StoreKind::pair_score:
                    store.put_pair_score(key.texts[0], key.texts[1], lexical_pair_score(key.texts[0], key.texts[1]));
                    break;
                case StoreKind::perplexity:
                    store.put_perplexity(key.texts[0], lexical_perplexity(key.texts[0]));
                    break;
                }
            }
        }
    }
}

}  // namespace ctq
