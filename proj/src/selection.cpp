#include "ctq/selection.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "ctq/rng.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace {

/// Sorts (id, score) descending by score, ties by ascending id, and keeps k.
SelectionResult rank_and_take(std::string method, const CandidateList& cands, std::vector<ScoredCandidate> scored,
                              std::size_t k)
{
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score)
            return a.score > b.score;
        return a.pair_id < b.pair_id;
    });
    SelectionResult r;
    r.method = std::move(method);
    r.input_id = cands.input_id;
    for (std::size_t i = 0; i < scored.size() && r.chosen.size() < k; ++i)
        r.chosen.push_back({scored[i].pair_id, scored[i].score, false});
    r.diagnostics = std::move(scored);
    return r;
}

std::string join_ngram(const std::vector<std::string>& tokens, std::size_t start, std::size_t n)
{
    std::string g;
    for (std::size_t i = 0; i < n; ++i) {
        if (i)
            g.push_back('\x1f');
        g += tokens[start + i];
    }
    return g;
}

std::set<std::string> ngram_set(const std::vector<std::string>& tokens)
{
    std::set<std::string> out;
    for (std::size_t n = 1; n <= 4; ++n)
        for (std::size_t i = 0; i + n <= tokens.size(); ++i)
            out.insert(join_ngram(tokens, i, n));
    return out;
}

}  // namespace

std::string Method::tag() const
{
    switch (kind) {
    case MethodKind::ctq:
        return "ctq";
    case MethodKind::bm25:
        return "bm25";
    case MethodKind::rbm25:
        return "rbm25";
    case MethodKind::random:
        return "random";
    case MethodKind::feature:
        return "feat:" + std::string(feature_name(features.at(0)));
    case MethodKind::scavg: {
        std::string t = "scavg:";
        for (std::size_t i = 0; i < features.size(); ++i)
            t += (i ? "," : "") + std::string(feature_name(features[i]));
        return t;
    }
    }
    return "?";
}

Method Method::parse(std::string_view text)
{
    Method m;
    if (text == "ctq") {
        m.kind = MethodKind::ctq;
    } else if (text == "bm25") {
        m.kind = MethodKind::bm25;
    } else if (text == "rbm25") {
        m.kind = MethodKind::rbm25;
    } else if (text == "random") {
        m.kind = MethodKind::random;
    } else if (text.rfind("feat:", 0) == 0) {
        m.kind = MethodKind::feature;
        const auto name = text.substr(5);
        const auto f = feature_from_name(name);
        if (!f)
            throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
        if (!is_rankable(*f))
            throw std::invalid_argument("feature '" + std::string(name) + "' cannot be used for ranking");
        m.features = {*f};
    } else if (text.rfind("scavg:", 0) == 0) {
        m.kind = MethodKind::scavg;
        std::string_view rest = text.substr(6);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto name = rest.substr(0, comma);
            const auto f = feature_from_name(name);
            if (!f)
                throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
            m.features.push_back(*f);
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (m.features.empty())
            throw std::invalid_argument("scavg needs at least one feature");
    } else {
        throw std::invalid_argument("unknown selection method '" + std::string(text) + "'");
    }
    return m;
}

nlohmann::json SelectionResult::to_json() const
{
    nlohmann::json j;
    j["method"] = method;
    j["input_id"] = input_id;
    j["chosen"] = nlohmann::json::array();
    for (const auto& c : chosen)
        j["chosen"].push_back({{"id", c.pair_id}, {"score", c.score}, {"fill", c.fill}});
    j["candidates"] = nlohmann::json::array();
    for (const auto& d : diagnostics)
        j["candidates"].push_back({{"id", d.pair_id}, {"score", d.score}});
    if (!warnings.empty())
        j["warnings"] = warnings;
    return j;
}

std::vector<FeatureVector> candidate_features(const CandidateList& cands, std::string_view input,
                                              const ExampleDatabase& db, const ScoreStore& store,
                                              MissingPolicy policy, const std::array<double, kFeatureCount>* defaults)
{
    std::vector<FeatureVector> out;
    out.reserve(cands.size());
    for (const auto& e : cands.entries)
        out.push_back(extract_features(db[e.pair_id], input, store, policy, defaults));
    return out;
}

SelectionResult bm25_select(const CandidateList& cands, std::size_t k)
{
    return rank_and_take("bm25", cands, cands.entries, k);
}

SelectionResult ctq_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                           const CtqModel& model, const ScoreStore& store, std::size_t k, MissingPolicy policy)
{
    const auto features = candidate_features(cands, input, db, store, policy, &model.normalization.mean);
    const auto predicted = model.predict(features);
    std::vector<ScoredCandidate> scored;
    scored.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i)
        scored.push_back({cands.entries[i].pair_id, predicted[i]});
    return rank_and_take("ctq", cands, std::move(scored), k);
}

SelectionResult single_feature_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                                      Feature feature, const ScoreStore& store, std::size_t k, MissingPolicy policy,
                                      const std::array<double, kFeatureCount>* defaults)
{
    if (!is_rankable(feature))
        throw std::invalid_argument("feature '" + std::string(feature_name(feature)) + "' cannot be used for ranking");
    const auto features = candidate_features(cands, input, db, store, policy, defaults);
    std::vector<ScoredCandidate> scored;
    for (std::size_t i = 0; i < cands.size(); ++i)
        scored.push_back({cands.entries[i].pair_id, features[i][feature]});
    if (lower_is_better(feature)) {
        std::stable_sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
            if (a.score != b.score)
                return a.score < b.score;
            return a.pair_id < b.pair_id;
        });
        SelectionResult r;
        r.method = Method{MethodKind::feature, {feature}}.tag();
        r.input_id = cands.input_id;
        for (std::size_t i = 0; i < scored.size() && r.chosen.size() < k; ++i)
            r.chosen.push_back({scored[i].pair_id, scored[i].score, false});
        r.diagnostics = std::move(scored);
        return r;
    }
    return rank_and_take(Method{MethodKind::feature, {feature}}.tag(), cands, std::move(scored), k);
}

SelectionResult score_avg_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                                 const std::vector<Feature>& feature_set, const ScoreStore& store, std::size_t k,
                                 MissingPolicy policy, const std::array<double, kFeatureCount>* defaults)
{
    if (feature_set.empty())
        throw std::invalid_argument("scavg needs at least one feature");
    const std::string tag = Method{MethodKind::scavg, feature_set}.tag();
    const auto features = candidate_features(cands, input, db, store, policy, defaults);
    std::vector<double> total(cands.size(), 0.0);
    bool any_spread = false;
    for (auto f : feature_set) {
        std::vector<double> v(cands.size());
        for (std::size_t i = 0; i < cands.size(); ++i)
            v[i] = lower_is_better(f) ? -features[i][f] : features[i][f];
        if (v.empty())
            break;
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double min = *lo;
        const double span = *hi - *lo;
        if (span > 0.0) {
            any_spread = true;
            for (std::size_t i = 0; i < v.size(); ++i)
                total[i] += (v[i] - min) / span;
        }
    }
    if (!any_spread && cands.size() > 1) {
        auto r = rank_and_take(tag, cands, cands.entries, k);
        r.warnings.push_back("all candidates identical on every feature; using BM25 order");
        return r;
    }
    std::vector<ScoredCandidate> scored;
    for (std::size_t i = 0; i < cands.size(); ++i)
        scored.push_back({cands.entries[i].pair_id, total[i] / static_cast<double>(feature_set.size())});
    return rank_and_take(tag, cands, std::move(scored), k);
}

SelectionResult rbm25_rerank(const CandidateList& cands, std::string_view input, const ExampleDatabase& db,
                             std::size_t k)
{
    const auto query_tokens = tokenize_for_retrieval(input);
    // Uncovered query n-gram -> accumulated weight (n times its multiplicity).
    std::map<std::string, double> uncovered;
    for (std::size_t n = 1; n <= 4; ++n)
        for (std::size_t i = 0; i + n <= query_tokens.size(); ++i)
            uncovered[join_ngram(query_tokens, i, n)] += static_cast<double>(n);

    std::vector<std::set<std::string>> cand_grams;
    cand_grams.reserve(cands.size());
    for (const auto& e : cands.entries)
        cand_grams.push_back(ngram_set(tokenize_for_retrieval(db[e.pair_id].source)));

    SelectionResult r;
    r.method = "rbm25";
    r.input_id = cands.input_id;
    r.diagnostics = cands.entries;
    std::vector<bool> taken(cands.size(), false);
    while (r.chosen.size() < k) {
        std::size_t best = cands.size();
        double best_gain = 0.0;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (taken[i])
                continue;
            double gain = 0.0;
            for (const auto& [gram, weight] : uncovered)
                if (cand_grams[i].count(gram))
                    gain += weight;
            if (gain > best_gain) {
                best_gain = gain;
                best = i;
            }
        }
        if (best == cands.size())
            break;
        taken[best] = true;
        r.chosen.push_back({cands.entries[best].pair_id, best_gain, false});
        for (auto it = uncovered.begin(); it != uncovered.end();) {
            if (cand_grams[best].count(it->first))
                it = uncovered.erase(it);
            else
                ++it;
        }
    }

    // Nothing new to cover: BM25 order, distinct sources first.
    std::set<std::string_view> sources;
    for (const auto& c : r.chosen)
        sources.insert(db[c.pair_id].source);
    for (int pass = 0; pass < 2 && r.chosen.size() < k; ++pass) {
        for (std::size_t i = 0; i < cands.size() && r.chosen.size() < k; ++i) {
            if (taken[i])
                continue;
            const auto& src = db[cands.entries[i].pair_id].source;
            if (pass == 0 && sources.count(src))
                continue;
            taken[i] = true;
            sources.insert(src);
            r.chosen.push_back({cands.entries[i].pair_id, 0.0, false});
        }
    }
    return r;
}

SelectionResult random_select(const ExampleDatabase& db, std::size_t k, std::uint64_t seed, std::size_t input_id)
{
    if (db.size() < k)
        throw std::invalid_argument("random selection: database has fewer than k pairs");
    Rng rng(seed);
    SelectionResult r;
    r.method = "random";
    r.input_id = input_id;
    if (k * 4 < db.size()) {
        std::set<std::size_t> seen;
        while (r.chosen.size() < k) {
            const auto id = static_cast<std::size_t>(uniform_index(rng, db.size()));
            if (seen.insert(id).second)
                r.chosen.push_back({id, 0.0, false});
        }
    } else {
        std::vector<std::size_t> ids(db.size());
        for (std::size_t i = 0; i < ids.size(); ++i)
            ids[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_index(rng, ids.size() - i));
            std::swap(ids[i], ids[j]);
            r.chosen.push_back({ids[i], 0.0, false});
        }
    }
    return r;
}

void fill_random(SelectionResult& result, const ExampleDatabase& db, std::size_t k, std::uint64_t seed)
{
    if (result.chosen.size() >= k)
        return;
    std::set<std::size_t> used;
    for (const auto& c : result.chosen)
        used.insert(c.pair_id);
    const std::size_t available = db.size() - used.size();
    const std::size_t need = std::min(k - result.chosen.size(), available);
    Rng rng(seed);
    std::size_t added = 0;
    while (added < need) {
        const auto id = static_cast<std::size_t>(uniform_index(rng, db.size()));
        if (!used.insert(id).second)
            continue;
        result.chosen.push_back({id, 0.0, true});
        ++added;
    }
}

std::optional<ExampleOrder> example_order_from_name(std::string_view name)
{
    if (name == "best-last")
        return ExampleOrder::best_last;
    if (name == "best-first")
        return ExampleOrder::best_first;
    return std::nullopt;
}

std::vector<SentencePair> arrange_for_prompt(const std::vector<SentencePair>& best_first, ExampleOrder order)
{
    std::vector<SentencePair> out = best_first;
    if (order == ExampleOrder::best_last)
        std::reverse(out.begin(), out.end());
    return out;
}

}  // namespace ctq
