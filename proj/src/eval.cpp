#include "ctq/eval.hpp"

#include <cstdio>
#include <stdexcept>

#include "ctq/chrf.hpp"
#include "ctq/corpus.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace {

void check_lengths(std::size_t hyps, std::size_t refs)
{
    if (hyps != refs)
        throw std::invalid_argument("corpus_score: " + std::to_string(hyps) + " hypotheses but " +
                                    std::to_string(refs) + " references");
    if (hyps == 0)
        throw std::invalid_argument("corpus_score: no sentences");
}

double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

CorpusScore corpus_score_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs)
{
    check_lengths(hyps.size(), refs.size());
    CorpusScore out;
    out.sentences.reserve(hyps.size());
    for (std::size_t i = 0; i < hyps.size(); ++i)
        out.sentences.push_back(chrf(hyps[i], refs[i]));
    out.corpus = mean(out.sentences);
    return out;
}

CorpusScore corpus_score_external(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                  const std::vector<std::string>& score_lines)
{
    check_lengths(hyps.size(), refs.size());
    CorpusScore out;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        if (i >= score_lines.size() || trim(score_lines[i]).empty())
            throw std::runtime_error("score file: missing line " + std::to_string(i + 1));
        try {
            out.sentences.push_back(parse_double(trim(score_lines[i])));
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("score file line " + std::to_string(i + 1) + ": not a number");
        }
    }
    out.corpus = mean(out.sentences);
    return out;
}

CorpusScore corpus_score_external(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                  const std::filesystem::path& score_file)
{
    return corpus_score_external(hyps, refs, read_lines(score_file));
}

CorpusScore average_runs(const std::vector<CorpusScore>& runs)
{
    if (runs.empty())
        throw std::invalid_argument("average_runs: no runs");
    CorpusScore out;
    out.sentences.assign(runs.front().sentences.size(), 0.0);
    for (const auto& r : runs) {
        if (r.sentences.size() != out.sentences.size())
            throw std::invalid_argument("average_runs: runs scored on different test sets");
        for (std::size_t i = 0; i < r.sentences.size(); ++i)
            out.sentences[i] += r.sentences[i];
    }
    for (auto& s : out.sentences)
        s /= static_cast<double>(runs.size());
    double total = 0.0;
    for (const auto& r : runs)
        total += r.corpus;
    out.corpus = total / static_cast<double>(runs.size());
    return out;
}

double win_rate(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("win_rate: length mismatch");
    if (a.empty())
        return 0.5;
    double wins = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        wins += a[i] > b[i] ? 1.0 : (a[i] == b[i] ? 0.5 : 0.0);
    return wins / static_cast<double>(a.size());
}

Report compare_methods(const std::vector<MethodRun>& runs, const std::string& baseline)
{
    Report report;
    report.baseline = baseline;
    const CorpusScore* base = nullptr;
    std::vector<CorpusScore> averaged;
    averaged.reserve(runs.size());
    for (const auto& m : runs)
        averaged.push_back(average_runs(m.runs));
    for (std::size_t i = 0; i < runs.size(); ++i)
        if (runs[i].method == baseline)
            base = &averaged[i];
    if (base == nullptr)
        throw std::invalid_argument("compare_methods: no runs for baseline '" + baseline + "'");
    for (std::size_t i = 0; i < runs.size(); ++i) {
        ReportRow row;
        row.method = runs[i].method;
        row.run_count = runs[i].runs.size();
        row.score = averaged[i].corpus;
        row.delta = row.score - base->corpus;
        row.win_rate = win_rate(averaged[i].sentences, base->sentences);
        report.rows.push_back(row);
    }
    return report;
}

std::string Report::to_text() const
{
    std::size_t width = 6;
    for (const auto& r : rows)
        width = std::max(width, r.method.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s %5s %10s %10s %8s\n", static_cast<int>(width), "method", "runs", "score",
                  "delta", "win");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s %5zu %10.4f %+10.4f %8.4f\n", static_cast<int>(width), r.method.c_str(),
                      r.run_count, r.score, r.delta, r.win_rate);
        out += buf;
    }
    out += "baseline: " + baseline + "\n";
    return out;
}

nlohmann::json Report::to_json() const
{
    nlohmann::json j;
    j["baseline"] = baseline;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["rows"].push_back({{"method", r.method},
                             {"runs", r.run_count},
                             {"score", r.score},
                             {"delta", r.delta},
                             {"win_rate", r.win_rate}});
    return j;
}

}  // namespace ctq
