#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctq {

struct CorpusScore {
    double corpus = 0.0;
    std::vector<double> sentences;
};

/// Mean sentence chrF over aligned hypothesis/reference lists.
CorpusScore corpus_score_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

/// Mean of externally computed sentence scores, joined to the hypotheses by
/// line index. `scores` holds one decimal per line.
CorpusScore corpus_score_external(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                  const std::vector<std::string>& score_lines);
CorpusScore corpus_score_external(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                  const std::filesystem::path& score_file);

struct MethodRun {
    std::string method;
    /// Several runs of the same method (random seeds) are averaged per sentence.
    std::vector<CorpusScore> runs;
};

/// Per-sentence mean over the runs of one method.
CorpusScore average_runs(const std::vector<CorpusScore>& runs);

struct ReportRow {
    std::string method;
    std::size_t run_count = 0;
    double score = 0.0;
    double delta = 0.0;
    /// Fraction of sentences where this method beats the baseline, ties count 0.5.
    double win_rate = 0.0;
};

struct Report {
    std::string baseline;
    std::vector<ReportRow> rows;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

/// Fraction of positions where a beats b, counting ties as half.
double win_rate(const std::vector<double>& a, const std::vector<double>& b);

Report compare_methods(const std::vector<MethodRun>& runs, const std::string& baseline);

}  // namespace ctq
