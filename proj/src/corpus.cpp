#include "ctq/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "ctq/text.hpp"

namespace ctq {

namespace {

std::string line_error(std::size_t line_no, const std::string& what)
{
    return "line " + std::to_string(line_no) + ": " + what;
}

std::vector<std::string_view> split_lines(const std::string& content)
{
    std::vector<std::string_view> lines;
    std::string_view rest(content);
    while (!rest.empty()) {
        const auto nl = rest.find('\n');
        std::string_view line = rest.substr(0, nl);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos)
            break;
        rest.remove_prefix(nl + 1);
    }
    return lines;
}

}  // namespace

ParallelFormat format_from_path(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".json")
        return ParallelFormat::jsonl;
    return ParallelFormat::tsv;
}

ExampleDatabase parse_parallel(const std::string& content, ParallelFormat format)
{
    const auto lines = split_lines(content);
    if (lines.empty())
        throw std::runtime_error("empty file");

    ExampleDatabase db;
    std::size_t line_no = 0;
    for (const auto line : lines) {
        ++line_no;
        std::string source;
        std::string target;
        if (format == ParallelFormat::tsv) {
            std::vector<std::string_view> fields;
            std::string_view rest = line;
            for (;;) {
                const auto tab = rest.find('\t');
                fields.push_back(rest.substr(0, tab));
                if (tab == std::string_view::npos)
                    break;
                rest.remove_prefix(tab + 1);
            }
            if (fields.size() != 2)
                throw std::runtime_error(line_error(line_no, "expected 2 fields"));
            source = fields[0];
            target = fields[1];
        } else {
            nlohmann::json record;
            try {
                record = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                throw std::runtime_error(line_error(line_no, "invalid JSON"));
            }
            if (!record.is_object())
                throw std::runtime_error(line_error(line_no, "expected a JSON object"));
            if (record.contains("ctq_corpus")) {
                db.src_lang = record.value("src_lang", db.src_lang);
                db.tgt_lang = record.value("tgt_lang", db.tgt_lang);
                db.provenance = record.value("provenance", db.provenance);
                continue;
            }
            for (const char* field : {"source", "target"}) {
                if (!record.contains(field) || !record[field].is_string())
                    throw std::runtime_error(line_error(line_no, std::string("missing string field '") + field + "'"));
            }
            source = record["source"].get<std::string>();
            target = record["target"].get<std::string>();
        }
        source = trim(source);
        target = trim(target);
        if (source.empty() || target.empty())
            throw std::runtime_error(line_error(line_no, "empty source or target"));
        db.pairs.push_back({db.pairs.size(), std::move(source), std::move(target)});
    }
    if (db.pairs.empty())
        throw std::runtime_error("empty file");
    return dedup(std::move(db));
}

ExampleDatabase load_parallel(const std::filesystem::path& path, ParallelFormat format)
{
    if (!std::filesystem::exists(path))
        throw std::runtime_error("no such file: " + path.string());
    auto db = parse_parallel(read_file(path), format);
    if (db.provenance.empty())
        db.provenance = path.filename().string();
    return db;
}

ExampleDatabase load_parallel(const std::filesystem::path& path)
{
    return load_parallel(path, format_from_path(path));
}

ExampleDatabase dedup(ExampleDatabase db)
{
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<SentencePair> kept;
    kept.reserve(db.pairs.size());
    for (auto& pair : db.pairs) {
        if (!seen.emplace(pair.source, pair.target).second)
            continue;
        pair.id = kept.size();
        kept.push_back(std::move(pair));
    }
    db.pairs = std::move(kept);
    return db;
}

HeldOutSet make_heldout(const ExampleDatabase& pairs, const ExampleDatabase& db)
{
    std::set<std::pair<std::string_view, std::string_view>> pool;
    for (const auto& p : db.pairs)
        pool.emplace(p.source, p.target);
    HeldOutSet out;
    for (const auto& p : pairs.pairs) {
        if (pool.count({p.source, p.target}))
            continue;
        out.pairs.push_back({out.pairs.size(), p.source, p.target});
    }
    return out;
}

std::string serialize_database(const ExampleDatabase& db)
{
    std::string out;
    nlohmann::json header = {{"ctq_corpus", 1},
                             {"src_lang", db.src_lang},
                             {"tgt_lang", db.tgt_lang},
                             {"provenance", db.provenance}};
    out += header.dump() + "\n";
    for (const auto& p : db.pairs) {
        nlohmann::json rec = {{"id", p.id}, {"source", p.source}, {"target", p.target}};
        out += rec.dump() + "\n";
    }
    return out;
}

void save_database(const ExampleDatabase& db, const std::filesystem::path& path)
{
    write_file(path, serialize_database(db));
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << content;
}

std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    const std::string content = read_file(path);
    std::vector<std::string> lines;
    for (auto line : split_lines(content))
        lines.emplace_back(line);
    return lines;
}

}  // namespace ctq
