#include "ctq/datagen.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ctq/chrf.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace {

constexpr std::string_view kTrainMagic = "#ctq-train v1";
constexpr std::string_view kSkipTag = "!skip";

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t'))
        out.push_back(field);
    if (!line.empty() && line.back() == '\t')
        out.emplace_back();
    return out;
}

std::string format_tombstone(const Tombstone& t)
{
    std::string reason = t.reason;
    for (auto& c : reason)
        if (c == '\t' || c == '\n' || c == '\r')
            c = ' ';
    return std::string(kSkipTag) + "\t" + std::to_string(t.query_id) + "\t" + std::to_string(t.candidate_id) + "\t" +
           reason;
}

}  // namespace

std::optional<MetricKind> metric_from_name(std::string_view name)
{
    if (name == "chrf")
        return MetricKind::chrf;
    if (name == "external")
        return MetricKind::external;
    return std::nullopt;
}

std::string ExternalScores::key(std::string_view src, std::string_view hyp, std::string_view ref)
{
    return hash_hex(src) + ":" + hash_hex(hyp) + ":" + hash_hex(ref);
}

ExternalScores ExternalScores::load(const std::filesystem::path& path)
{
    ExternalScores scores;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": expected key<TAB>score");
        scores.scores_[line.substr(0, tab)] = parse_double(std::string_view(line).substr(tab + 1));
    }
    return scores;
}

void ExternalScores::put(std::string_view src, std::string_view hyp, std::string_view ref, double score)
{
    scores_[key(src, hyp, ref)] = score;
}

std::optional<double> ExternalScores::find(std::string_view src, std::string_view hyp, std::string_view ref) const
{
    const auto it = scores_.find(key(src, hyp, ref));
    if (it == scores_.end())
        return std::nullopt;
    return it->second;
}

double XlateScorer::operator()(std::string_view src, std::string_view hyp, std::string_view ref) const
{
    if (trim(ref).empty())
        throw std::invalid_argument("xlate_score: empty reference");
    if (kind_ == MetricKind::chrf)
        return chrf(hyp, ref);
    if (external_ == nullptr)
        throw std::logic_error("xlate_score: external metric without a score table");
    if (auto v = external_->find(src, hyp, ref))
        return *v;
    throw std::runtime_error("xlate_score: no external score for key " + ExternalScores::key(src, hyp, ref));
}

std::string training_header()
{
    std::string h(kTrainMagic);
    h += "\tquery_id\tcandidate_id";
    for (auto f : all_features())
        h += "\t" + std::string(feature_name(f));
    return h + "\tctq";
}

std::string format_training_row(const TrainingInstance& row)
{
    std::string line = std::to_string(row.query_id) + "\t" + std::to_string(row.candidate_id);
    for (double v : row.features.values)
        line += "\t" + format_double(v);
    return line + "\t" + format_double(row.ctq);
}

DatagenOutput parse_training_data(const std::string& content)
{
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || line != training_header())
        throw std::runtime_error("training data: bad or missing header");
    DatagenOutput out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto f = split_tabs(line);
        const auto where = "training data line " + std::to_string(line_no);
        try {
            if (f[0] == kSkipTag) {
                if (f.size() < 3)
                    throw std::runtime_error(where + ": malformed tombstone");
                out.tombstones.push_back({std::stoull(f[1]), std::stoull(f[2]), f.size() > 3 ? f[3] : ""});
                continue;
            }
            if (f.size() != kFeatureCount + 3)
                throw std::runtime_error(where + ": expected " + std::to_string(kFeatureCount + 3) + " fields");
            TrainingInstance row;
            row.query_id = std::stoull(f[0]);
            row.candidate_id = std::stoull(f[1]);
            for (std::size_t i = 0; i < kFeatureCount; ++i)
                row.features.values[i] = parse_double(f[i + 2]);
            row.ctq = parse_double(f.back());
            out.rows.push_back(row);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    return out;
}

DatagenOutput load_training_data(const std::filesystem::path& path)
{
    return parse_training_data(read_file(path));
}

void save_training_data(const DatagenOutput& data, const std::filesystem::path& path)
{
    std::string out = training_header() + "\n";
    for (const auto& r : data.rows)
        out += format_training_row(r) + "\n";
    for (const auto& t : data.tombstones)
        out += format_tombstone(t) + "\n";
    write_file(path, out);
}

DatagenOutput generate_training_data(const HeldOutSet& heldout, const ExampleDatabase& db, const Bm25Index& index,
                                     GenerationClient& llm, const ScoreStore& store, const XlateScorer& metric,
                                     const DatagenConfig& config, const std::optional<std::filesystem::path>& output)
{
    if (config.shortlist_k == 0)
        throw std::invalid_argument("datagen: K must be >= 1");
    if (index.doc_count() != db.size())
        throw std::invalid_argument("datagen: index was not built over this database");
    config.prompt.validate();

    DatagenOutput result;
    std::set<std::pair<std::size_t, std::size_t>> done;
    std::ofstream sink;
    if (output) {
        if (std::filesystem::exists(*output)) {
            result = load_training_data(*output);
            for (const auto& r : result.rows)
                done.emplace(r.query_id, r.candidate_id);
            for (const auto& t : result.tombstones)
                done.emplace(t.query_id, t.candidate_id);
            sink.open(*output, std::ios::app | std::ios::binary);
        } else {
            if (output->has_parent_path())
                std::filesystem::create_directories(output->parent_path());
            sink.open(*output, std::ios::trunc | std::ios::binary);
            sink << training_header() << "\n";
        }
        if (!sink)
            throw std::runtime_error("datagen: cannot write " + output->string());
    }

    const auto* defaults = config.defaults ? &*config.defaults : nullptr;
    for (const auto& query : heldout.pairs) {
        const auto shortlist = index.shortlist(query.source, config.shortlist_k, query.id);

        std::vector<std::size_t> todo;
        std::vector<FeatureVector> features;
        std::vector<GenerationRequest> requests;
        for (const auto& entry : shortlist.entries) {
            if (done.count({query.id, entry.pair_id}))
                continue;
            const auto& cand = db[entry.pair_id];
            features.push_back(extract_features(cand, query.source, store, config.policy, defaults));
            GenerationRequest req;
            req.prompt = build_prompt({cand}, query.source, config.prompt);
            req.max_new_tokens = config.max_new_tokens;
            req.stop = config.prompt.delimiter;
            requests.push_back(std::move(req));
            todo.push_back(entry.pair_id);
        }
        if (todo.empty())
            continue;

        auto slots = batch_generate(llm, requests, config.max_in_flight);
        for (int attempt = 0; attempt < config.generation_retries; ++attempt) {
            std::vector<std::size_t> failed;
            for (std::size_t i = 0; i < slots.size(); ++i)
                if (!slots[i].ok())
                    failed.push_back(i);
            if (failed.empty())
                break;
            std::vector<GenerationRequest> again;
            for (auto i : failed)
                again.push_back(requests[i]);
            auto retried = batch_generate(llm, again, config.max_in_flight);
            for (std::size_t j = 0; j < failed.size(); ++j)
                slots[failed[j]] = std::move(retried[j]);
        }

        for (std::size_t i = 0; i < todo.size(); ++i) {
            if (!slots[i].ok()) {
                Tombstone t{query.id, todo[i], slots[i].error ? slots[i].error->what() : "unknown failure"};
                if (sink.is_open())
                    sink << format_tombstone(t) << "\n";
                result.tombstones.push_back(std::move(t));
                continue;
            }
            const auto hyp = postprocess(slots[i].response->completion, config.prompt);
            TrainingInstance row;
            row.query_id = query.id;
            row.candidate_id = todo[i];
            row.features = features[i];
            row.ctq = metric(query.source, hyp, query.target);
            if (sink.is_open())
                sink << format_training_row(row) << "\n";
            result.rows.push_back(row);
        }
        if (sink.is_open())
            sink.flush();
    }

    const std::size_t total = result.rows.size() + result.tombstones.size();
    if (total > 0 && static_cast<double>(result.tombstones.size()) > config.max_tombstone_rate * static_cast<double>(total))
        throw DatagenError("datagen: " + std::to_string(result.tombstones.size()) + " of " + std::to_string(total) +
                           " generations failed, above the allowed rate");
    return result;
}

}  // namespace ctq
