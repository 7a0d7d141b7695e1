#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace ctq {

struct SentencePair {
    std::size_t id = 0;
    std::string source;
    std::string target;

    friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

/// The pool prompt examples are drawn from. Ids are dense 0..size-1 and no
/// (source, target) pair occurs twice.
struct ExampleDatabase {
    std::vector<SentencePair> pairs;
    std::string src_lang = "Source";
    std::string tgt_lang = "Target";
    std::string provenance;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
    const SentencePair& operator[](std::size_t id) const { return pairs.at(id); }
};

struct HeldOutSet {
    std::vector<SentencePair> pairs;
};

enum class ParallelFormat { tsv, jsonl };

ParallelFormat format_from_path(const std::filesystem::path& path);

/// Reads `source<TAB>target` lines or JSONL objects with `source`/`target`,
/// trims both sides, drops exact duplicates and assigns dense ids in file order.
ExampleDatabase load_parallel(const std::filesystem::path& path, ParallelFormat format);
ExampleDatabase load_parallel(const std::filesystem::path& path);

ExampleDatabase parse_parallel(const std::string& content, ParallelFormat format);

/// Keeps the first occurrence of every (source, target); ids are reassigned.
ExampleDatabase dedup(ExampleDatabase db);

/// Drops pairs that also occur in `db` so the two sets are disjoint.
HeldOutSet make_heldout(const ExampleDatabase& pairs, const ExampleDatabase& db);

/// JSONL with a header record carrying the language names and provenance.
void save_database(const ExampleDatabase& db, const std::filesystem::path& path);
std::string serialize_database(const ExampleDatabase& db);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace ctq
