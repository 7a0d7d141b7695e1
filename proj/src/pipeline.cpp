#include "ctq/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>

#include "ctq/datagen.hpp"
#include "ctq/desk_store.hpp"
#include "ctq/mock_llm.hpp"
#include "ctq/text.hpp"

namespace ctq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

fs::path resolve(const fs::path& base, const std::string& p)
{
    if (p.empty())
        return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get(const json& section, const char* key, T fallback)
{
    if (!section.contains(key))
        return fallback;
    try {
        return section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& section, const std::string& name, std::initializer_list<const char*> known)
{
    if (!section.is_object())
        throw ConfigError("config section '" + name + "' must be an object");
    for (const auto& [key, value] : section.items()) {
        bool ok = false;
        for (const char* k : known)
            ok = ok || key == k;
        if (!ok)
            throw ConfigError("unknown config key '" + name + "." + key + "'");
    }
}

std::string method_file_stem(const std::string& tag)
{
    std::string s = tag;
    for (auto& c : s)
        if (c == ':')
            c = '_';
        else if (c == ',')
            c = '+';
    return s;
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string join_lines(const std::vector<std::string>& lines)
{
    std::string out;
    for (const auto& l : lines)
        out += l + "\n";
    return out;
}

std::vector<std::string> split_lines_keep_empty(const std::string& content)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < content.size()) {
        auto nl = content.find('\n', start);
        if (nl == std::string::npos)
            nl = content.size();
        out.push_back(content.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

ExampleDatabase as_database(const HeldOutSet& set, const ExampleDatabase& like)
{
    ExampleDatabase db;
    db.pairs = set.pairs;
    db.src_lang = like.src_lang;
    db.tgt_lang = like.tgt_lang;
    return db;
}

}  // namespace

Config Config::from_json(const json& j, const fs::path& base)
{
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    reject_unknown(j, "config",
                   {"seed", "corpus", "index", "features", "llm", "prompt", "datagen", "train", "translate", "evaluate"});
    Config c;
    const json empty = json::object();
    auto section = [&](const char* name) -> const json& { return j.contains(name) ? j.at(name) : empty; };

    c.seed = get<std::uint64_t>(j, "seed", c.seed);

    const auto& corpus = section("corpus");
    reject_unknown(corpus, "corpus", {"db", "heldout", "test", "src_lang", "tgt_lang"});
    c.db_path = resolve(base, get<std::string>(corpus, "db", ""));
    c.heldout_path = resolve(base, get<std::string>(corpus, "heldout", ""));
    c.test_path = resolve(base, get<std::string>(corpus, "test", ""));
    c.src_lang = get(corpus, "src_lang", c.src_lang);
    c.tgt_lang = get(corpus, "tgt_lang", c.tgt_lang);

    const auto& index = section("index");
    reject_unknown(index, "index", {"k1", "b", "shortlist_n"});
    c.bm25.k1 = get(index, "k1", c.bm25.k1);
    c.bm25.b = get(index, "b", c.bm25.b);
    c.shortlist_n = get(index, "shortlist_n", c.shortlist_n);

    const auto& features = section("features");
    reject_unknown(features, "features", {"store", "ppl_from_llm", "missing"});
    c.store = get(features, "store", c.store);
    if (c.store != "lexical")
        c.store = resolve(base, c.store).string();
    c.ppl_from_llm = get(features, "ppl_from_llm", c.ppl_from_llm);
    const auto missing = get<std::string>(features, "missing", "strict");
    const auto policy = missing_policy_from_name(missing);
    if (!policy)
        throw ConfigError("features.missing must be strict or fill_default, got '" + missing + "'");
    c.missing = *policy;

    const auto& llm = section("llm");
    reject_unknown(llm, "llm", {"endpoint", "timeout_s", "max_retries", "max_in_flight", "max_new_tokens"});
    c.endpoint = get(llm, "endpoint", c.endpoint);
    if (c.endpoint.rfind("mock:table:", 0) == 0)
        c.endpoint = "mock:table:" + resolve(base, c.endpoint.substr(11)).string();
    c.timeout_s = get(llm, "timeout_s", c.timeout_s);
    c.max_retries = get(llm, "max_retries", c.max_retries);
    c.max_in_flight = get(llm, "max_in_flight", c.max_in_flight);
    c.max_new_tokens = get(llm, "max_new_tokens", c.max_new_tokens);

    const auto& prompt = section("prompt");
    reject_unknown(prompt, "prompt", {"delimiter", "token_budget"});
    c.delimiter = get(prompt, "delimiter", c.delimiter);
    c.token_budget = get(prompt, "token_budget", c.token_budget);

    const auto& datagen = section("datagen");
    reject_unknown(datagen, "datagen", {"k", "metric", "scores", "retries", "max_tombstone_rate"});
    c.datagen_k = get(datagen, "k", c.datagen_k);
    c.datagen_metric = get(datagen, "metric", c.datagen_metric);
    c.datagen_scores = resolve(base, get<std::string>(datagen, "scores", ""));
    c.generation_retries = get(datagen, "retries", c.generation_retries);
    c.max_tombstone_rate = get(datagen, "max_tombstone_rate", c.max_tombstone_rate);

    const auto& train = section("train");
    reject_unknown(train, "train",
                   {"hidden_layers", "hidden_width", "activation", "optimizer", "learning_rate", "batch_size", "epochs",
                    "weight_decay", "grid", "threads"});
    c.mlp.hidden_layers = get(train, "hidden_layers", c.mlp.hidden_layers);
    c.mlp.hidden_width = get(train, "hidden_width", c.mlp.hidden_width);
    try {
        c.mlp.activation = activation_from_name(get<std::string>(train, "activation", "relu"));
        c.train.optimizer = optimizer_from_name(get<std::string>(train, "optimizer", "adam"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.train.learning_rate = get(train, "learning_rate", c.train.learning_rate);
    c.train.batch_size = get(train, "batch_size", c.train.batch_size);
    c.train.epochs = get(train, "epochs", c.train.epochs);
    c.train.weight_decay = get(train, "weight_decay", c.train.weight_decay);
    c.tune_grid = get<std::string>(train, "grid", "");
    if (!c.tune_grid.empty() && c.tune_grid != "full")
        c.tune_grid = resolve(base, c.tune_grid).string();
    c.tune_threads = get(train, "threads", c.tune_threads);

    const auto& translate = section("translate");
    reject_unknown(translate, "translate", {"methods", "k", "example_order", "random_fill", "random_seeds"});
    c.methods = get(translate, "methods", c.methods);
    c.k = get(translate, "k", c.k);
    const auto order_name = get<std::string>(translate, "example_order", "best-last");
    const auto order = example_order_from_name(order_name);
    if (!order)
        throw ConfigError("translate.example_order must be best-last or best-first, got '" + order_name + "'");
    c.example_order = *order;
    c.random_fill = get(translate, "random_fill", c.random_fill);
    c.random_seeds = get(translate, "random_seeds", c.random_seeds);

    const auto& evaluate = section("evaluate");
    reject_unknown(evaluate, "evaluate", {"metric", "scores_dir", "baseline"});
    c.eval_metric = get(evaluate, "metric", c.eval_metric);
    c.eval_scores_dir = resolve(base, get<std::string>(evaluate, "scores_dir", ""));
    c.baseline = get(evaluate, "baseline", c.baseline);
    return c;
}

Config Config::load(const fs::path& path)
{
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return from_json(j, path.parent_path());
}

json Config::to_json() const
{
    json j;
    j["seed"] = seed;
    j["corpus"] = {{"db", db_path.string()},
                   {"heldout", heldout_path.string()},
                   {"test", test_path.string()},
                   {"src_lang", src_lang},
                   {"tgt_lang", tgt_lang}};
    j["index"] = {{"k1", bm25.k1}, {"b", bm25.b}, {"shortlist_n", shortlist_n}};
    j["features"] = {{"store", store},
                     {"ppl_from_llm", ppl_from_llm},
                     {"missing", missing == MissingPolicy::strict ? "strict" : "fill_default"}};
    j["llm"] = {{"endpoint", endpoint},
                {"timeout_s", timeout_s},
                {"max_retries", max_retries},
                {"max_in_flight", max_in_flight},
                {"max_new_tokens", max_new_tokens}};
    j["prompt"] = {{"delimiter", delimiter}, {"token_budget", token_budget}};
    j["datagen"] = {{"k", datagen_k},
                    {"metric", datagen_metric},
                    {"scores", datagen_scores.string()},
                    {"retries", generation_retries},
                    {"max_tombstone_rate", max_tombstone_rate}};
    j["train"] = {{"hidden_layers", mlp.hidden_layers},
                  {"hidden_width", mlp.hidden_width},
                  {"activation", std::string(activation_name(mlp.activation))},
                  {"optimizer", std::string(optimizer_name(train.optimizer))},
                  {"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"epochs", train.epochs},
                  {"weight_decay", train.weight_decay},
                  {"grid", tune_grid},
                  {"threads", tune_threads}};
    j["translate"] = {{"methods", methods},
                      {"k", k},
                      {"example_order", example_order == ExampleOrder::best_last ? "best-last" : "best-first"},
                      {"random_fill", random_fill},
                      {"random_seeds", random_seeds}};
    j["evaluate"] = {{"metric", eval_metric}, {"scores_dir", eval_scores_dir.string()}, {"baseline", baseline}};
    return j;
}

void Config::validate() const
{
    auto require_file = [](const fs::path& p, const char* what) {
        if (p.empty())
            throw ConfigError(std::string(what) + " is not set");
        if (!fs::is_regular_file(p))
            throw ConfigError(std::string(what) + ": no such file " + p.string());
    };
    require_file(db_path, "corpus.db");
    require_file(heldout_path, "corpus.heldout");
    require_file(test_path, "corpus.test");
    if (bm25.k1 < 0.0 || bm25.b < 0.0 || bm25.b > 1.0)
        throw ConfigError("index: k1 must be >= 0 and b in [0, 1]");
    if (shortlist_n == 0 || datagen_k == 0 || k == 0)
        throw ConfigError("shortlist sizes and k must be >= 1");
    if (store != "lexical")
        require_file(store, "features.store");
    if (endpoint.empty())
        throw ConfigError("llm.endpoint is not set");
    if (endpoint.rfind("mock:", 0) == 0) {
        if (endpoint != "mock:echo" && endpoint != "mock:lexical" && endpoint.rfind("mock:table:", 0) != 0)
            throw ConfigError("unknown mock endpoint '" + endpoint + "'");
    } else if (endpoint.rfind("http://", 0) != 0) {
        throw ConfigError("llm.endpoint must be an http:// URL or a mock, got '" + endpoint + "'");
    }
    if (max_in_flight == 0)
        throw ConfigError("llm.max_in_flight must be >= 1");
    try {
        prompt_spec().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("prompt: ") + e.what());
    }
    const auto metric = metric_from_name(datagen_metric);
    if (!metric)
        throw ConfigError("datagen.metric must be chrf or external, got '" + datagen_metric + "'");
    if (*metric == MetricKind::external)
        require_file(datagen_scores, "datagen.scores");
    if (mlp.hidden_layers == 0 || mlp.hidden_width == 0 || train.batch_size == 0 || train.epochs == 0 ||
        !(train.learning_rate > 0.0) || train.weight_decay < 0.0)
        throw ConfigError("train: layers, width, batch size, epochs and learning rate must be positive");
    if (!tune_grid.empty() && tune_grid != "full")
        require_file(tune_grid, "train.grid");
    if (methods.empty())
        throw ConfigError("translate.methods is empty");
    std::set<std::string> tags;
    for (const auto& m : methods) {
        try {
            tags.insert(Method::parse(m).tag());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("translate.methods: ") + e.what());
        }
    }
    if (tags.size() != methods.size())
        throw ConfigError("translate.methods lists a method twice");
    if (tags.count("random") && random_seeds.empty())
        throw ConfigError("translate.random_seeds is empty");
    if (!tags.count(baseline))
        throw ConfigError("evaluate.baseline '" + baseline + "' is not among translate.methods");
    if (eval_metric != "chrf" && eval_metric != "external")
        throw ConfigError("evaluate.metric must be chrf or external, got '" + eval_metric + "'");
    if (eval_metric == "external" && !fs::is_directory(eval_scores_dir))
        throw ConfigError("evaluate.scores_dir: no such directory " + eval_scores_dir.string());
}

PromptSpec Config::prompt_spec() const
{
    PromptSpec spec;
    spec.src_lang = src_lang;
    spec.tgt_lang = tgt_lang;
    spec.delimiter = delimiter;
    spec.token_budget = token_budget;
    return spec;
}

std::unique_ptr<GenerationClient> make_client(const std::string& endpoint,
                                              const std::map<std::string, std::string>& references, double timeout_s,
                                              int max_retries)
{
    if (endpoint == "mock:echo")
        return std::make_unique<EchoMock>(references);
    if (endpoint == "mock:lexical")
        return std::make_unique<OverlapMock>(references);
    if (endpoint.rfind("mock:table:", 0) == 0) {
        // JSONL records {"prompt": ..., "completion": ...}
        std::map<std::string, std::string> table;
        std::size_t line_no = 0;
        for (const auto& line : read_lines(endpoint.substr(11))) {
            ++line_no;
            if (trim(line).empty())
                continue;
            try {
                const auto rec = json::parse(line);
                table[rec.at("prompt").get<std::string>()] = rec.at("completion").get<std::string>();
            } catch (const json::exception& e) {
                throw ConfigError("mock table line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return std::make_unique<TableMock>(std::move(table));
    }
    if (endpoint.rfind("http://", 0) == 0)
        return std::make_unique<HttpClient>(HttpEndpoint{endpoint, timeout_s, max_retries});
    throw ConfigError("unknown endpoint '" + endpoint + "'");
}

void populate_perplexity(ScoreStore& store, GenerationClient& client, const ExampleDatabase& db,
                         const std::vector<std::string>& queries, const std::vector<CandidateList>& shortlists,
                         std::size_t max_in_flight)
{
    std::set<std::string> wanted;
    for (std::size_t q = 0; q < shortlists.size(); ++q) {
        for (const auto& e : shortlists[q].entries) {
            wanted.insert(ppl_text_example(db[e.pair_id]));
            wanted.insert(ppl_text_example_input(db[e.pair_id], queries.at(q)));
        }
    }
    std::vector<std::string> texts;
    for (auto& t : wanted)
        if (!store.perplexity(t))
            texts.push_back(t);

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            const auto i = next++;
            if (i >= texts.size())
                return;
            try {
                store.put_perplexity(texts[i], client.score_nll(texts[i]).perplexity());
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = texts.size();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(max_in_flight, texts.size()));
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

SelectionResult select_examples(const SentencePair& input, const ExampleDatabase& db, const Bm25Index& index,
                                const ScoreStore* store, const CtqModel* model, const TranslateOptions& options)
{
    const auto& m = options.method;
    if (m.kind == MethodKind::random)
        return random_select(db, options.k, mix_seed(options.seed, input.id), input.id);
    if (m.needs_store() && store == nullptr)
        throw std::invalid_argument("method " + m.tag() + " needs a score store");
    if (m.needs_model() && model == nullptr)
        throw std::invalid_argument("method ctq needs a trained model");

    const auto cands = index.shortlist(input.source, options.shortlist_n, input.id);
    const std::array<double, kFeatureCount>* defaults = model ? &model->normalization.mean : nullptr;
    switch (m.kind) {
    case MethodKind::ctq:
        return ctq_rerank(cands, input.source, db, *model, *store, options.k, options.missing);
    case MethodKind::bm25:
        return bm25_select(cands, options.k);
    case MethodKind::rbm25:
        return rbm25_rerank(cands, input.source, db, options.k);
    case MethodKind::feature:
        return single_feature_rerank(cands, input.source, db, m.features.front(), *store, options.k, options.missing,
                                     defaults);
    case MethodKind::scavg:
        return score_avg_rerank(cands, input.source, db, m.features, *store, options.k, options.missing, defaults);
    case MethodKind::random:
        break;
    }
    throw std::logic_error("unhandled selection method");
}

TranslateOutput translate(const std::vector<SentencePair>& inputs, const ExampleDatabase& db, const Bm25Index& index,
                          GenerationClient& llm, const ScoreStore* store, const CtqModel* model,
                          const TranslateOptions& options)
{
    TranslateOutput out;
    out.translations.assign(inputs.size(), "");
    out.provenance.resize(inputs.size());

    std::vector<GenerationRequest> requests;
    std::vector<std::size_t> request_input;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& input = inputs[i];
        auto sel = select_examples(input, db, index, store, model, options);
        if (options.random_fill && sel.chosen.size() < options.k)
            fill_random(sel, db, options.k, mix_seed(options.seed ^ 0x5eedf111ULL, input.id));

        std::vector<SentencePair> ranked;
        for (const auto& c : sel.chosen)
            ranked.push_back(db[c.pair_id]);
        auto& prov = out.provenance[i];
        prov = sel.to_json();
        prov["input_id"] = input.id;
        try {
            const auto kept = enforce_budget(ranked, input.source, options.prompt);
            std::vector<std::size_t> kept_ids;
            for (const auto& p : kept)
                kept_ids.push_back(p.id);
            prov["prompt_ids"] = kept_ids;
            GenerationRequest req;
            req.prompt = build_prompt(arrange_for_prompt(kept, options.order), input.source, options.prompt);
            req.max_new_tokens = options.max_new_tokens;
            req.stop = options.prompt.delimiter;
            requests.push_back(std::move(req));
            request_input.push_back(i);
        } catch (const BudgetError& e) {
            prov["error"] = e.what();
        }
    }

    const auto slots = batch_generate(llm, requests, options.max_in_flight);
    for (std::size_t r = 0; r < slots.size(); ++r) {
        const auto i = request_input[r];
        if (!slots[r].ok()) {
            out.provenance[i]["error"] = slots[r].error ? slots[r].error->what() : "generation failed";
            continue;
        }
        const auto done = postprocess_detailed(slots[r].response->completion, options.prompt);
        out.translations[i] = done.text;
        for (auto& c : out.translations[i])
            if (c == '\n' || c == '\r')
                c = ' ';
        if (done.empty_output)
            out.provenance[i]["warning"] = "empty completion";
    }
    return out;
}

std::string file_checksum(const fs::path& path)
{
    return hash_hex(read_file(path));
}

namespace {

/// Stage bookkeeping over manifest.json.
class Runner {
public:
    Runner(const Config& config, fs::path run_dir, const RunOptions& options)
        : config_(config), dir_(std::move(run_dir)), options_(options)
    {
        fs::create_directories(dir_);
        const auto manifest = dir_ / "manifest.json";
        if (fs::exists(manifest)) {
            try {
                manifest_ = json::parse(read_file(manifest));
            } catch (const json::exception&) {
                manifest_ = json::object();
            }
        }
        if (!manifest_.is_object() || !manifest_.contains("stages"))
            manifest_ = {{"stages", json::object()}};
        write_file(dir_ / "config.json", config_.to_json().dump(2) + "\n");
        if (!options_.resume_from.empty()) {
            const auto& names = stage_names();
            auto from = options_.resume_from;
            if (from.rfind("resume:", 0) == 0)
                from = from.substr(7);
            const auto it = std::find(names.begin(), names.end(), from);
            if (it == names.end())
                throw ConfigError("unknown stage '" + from + "' to resume from");
            for (auto s = it; s != names.end(); ++s)
                forced_.insert(*s);
        }
    }

    /// Runs `body` unless the stage is complete for the same inputs. `body`
    /// returns the output files, relative to the run directory.
    template <typename Body>
    void stage(const std::string& name, const json& inputs, Body&& body)
    {
        json key = inputs;
        key["upstream"] = upstream_;
        const auto input_sum = hash_hex(key.dump());
        auto& entry = manifest_["stages"][name];
        if (!forced_.count(name) && entry.is_object() && entry.value("status", "") == "done" &&
            entry.value("inputs", "") == input_sum && outputs_intact(entry)) {
            log("skip " + name + " (up to date)");
            report_.stages_skipped.push_back(name);
            upstream_[name] = entry["outputs"];
            return;
        }
        log("run " + name);
        const bool resuming_partial = entry.is_object() && entry.value("status", "") == "started" &&
                                      entry.value("inputs", "") == input_sum;
        entry = {{"status", "started"}, {"inputs", input_sum}, {"started_at", utc_timestamp()}};
        save_manifest();
        std::vector<fs::path> outputs;
        try {
            outputs = body(resuming_partial);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        json sums = json::object();
        for (const auto& rel : outputs)
            sums[rel.generic_string()] = file_checksum(dir_ / rel);
        entry["status"] = "done";
        entry["outputs"] = sums;
        entry["finished_at"] = utc_timestamp();
        save_manifest();
        upstream_[name] = sums;
        report_.stages_run.push_back(name);
    }

    fs::path path(const fs::path& rel) const { return dir_ / rel; }

    /// Writes `content` and echoes the effective config next to it.
    void emit(const fs::path& rel, const std::string& content) const
    {
        const auto full = dir_ / rel;
        fs::create_directories(full.parent_path());
        write_file(full, content);
        write_file(full.parent_path() / "config.json", config_.to_json().dump(2) + "\n");
    }

    void log(const std::string& msg) const
    {
        if (options_.log)
            options_.log(msg);
    }

    RunReport& report() { return report_; }

private:
    bool outputs_intact(const json& entry) const
    {
        if (!entry.contains("outputs"))
            return false;
        for (const auto& [rel, sum] : entry["outputs"].items()) {
            const auto full = dir_ / rel;
            if (!fs::is_regular_file(full) || file_checksum(full) != sum.get<std::string>())
                return false;
        }
        return true;
    }

    void save_manifest() const { write_file(dir_ / "manifest.json", manifest_.dump(2) + "\n"); }

    const Config& config_;
    fs::path dir_;
    const RunOptions& options_;
    json manifest_;
    json upstream_ = json::object();
    std::set<std::string> forced_;
    RunReport report_;
};

std::map<std::string, std::string> reference_map(const ExampleDatabase& a, const ExampleDatabase& b)
{
    std::map<std::string, std::string> refs;
    for (const auto* set : {&a, &b})
        for (const auto& p : set->pairs)
            refs.emplace(p.source, p.target);
    return refs;
}

}  // namespace

RunReport run_all(const Config& config, const fs::path& run_dir, const RunOptions& options)
{
    config.validate();
    const auto cfg = config.to_json();
    Runner run(config, run_dir, options);

    const fs::path db_file = "corpus/db.jsonl";
    const fs::path heldout_file = "corpus/heldout.jsonl";
    const fs::path test_file = "corpus/test.jsonl";
    const fs::path index_file = "index/bm25.txt";
    const fs::path store_file = "features/store.txt";
    const fs::path train_file = "datagen/train.tsv";
    const fs::path model_file = "train/model.ctq";

    run.stage("corpus",
              {{"corpus", cfg["corpus"]},
               {"db", file_checksum(config.db_path)},
               {"heldout", file_checksum(config.heldout_path)},
               {"test", file_checksum(config.test_path)}},
              [&](bool) {
                  auto db = load_parallel(config.db_path);
                  db.src_lang = config.src_lang;
                  db.tgt_lang = config.tgt_lang;
                  const auto heldout = make_heldout(load_parallel(config.heldout_path), db);
                  const auto test = make_heldout(load_parallel(config.test_path), db);
                  if (heldout.pairs.empty() || test.pairs.empty())
                      throw std::runtime_error("held-out or test set is empty after removing database pairs");
                  run.emit(db_file, serialize_database(db));
                  run.emit(heldout_file, serialize_database(as_database(heldout, db)));
                  run.emit(test_file, serialize_database(as_database(test, db)));
                  run.log("corpus: " + std::to_string(db.size()) + " pairs, " + std::to_string(heldout.pairs.size()) +
                          " held-out, " + std::to_string(test.pairs.size()) + " test");
                  return std::vector<fs::path>{db_file, heldout_file, test_file};
              });

    const auto db = load_parallel(run.path(db_file));
    const auto heldout = load_parallel(run.path(heldout_file));
    const auto test = load_parallel(run.path(test_file));

    run.stage("index", {{"index", cfg["index"]}}, [&](bool) {
        const auto index = Bm25Index::build(db, config.bm25);
        run.emit(index_file, index.serialize());
        return std::vector<fs::path>{index_file};
    });
    const auto index = Bm25Index::load(run.path(index_file));

    std::unique_ptr<GenerationClient> owned_client;
    auto client = [&]() -> GenerationClient& {
        if (options.client)
            return *options.client;
        if (!owned_client)
            owned_client = make_client(config.endpoint, reference_map(heldout, test), config.timeout_s,
                                       config.max_retries);
        return *owned_client;
    };

    json features_inputs = {{"features", cfg["features"]},
                            {"shortlist_n", config.shortlist_n},
                            {"datagen_k", config.datagen_k}};
    if (config.store != "lexical")
        features_inputs["store_file"] = file_checksum(config.store);
    if (config.ppl_from_llm)
        features_inputs["llm"] = cfg["llm"];
    run.stage("features", features_inputs, [&](bool) {
        std::vector<std::string> queries;
        std::vector<CandidateList> lists;
        for (const auto* set : {&heldout, &test}) {
            const auto n = set == &heldout ? config.datagen_k : config.shortlist_n;
            for (const auto& p : set->pairs) {
                queries.push_back(p.source);
                lists.push_back(index.shortlist(p.source, n, p.id));
            }
        }
        ScoreStore store;
        if (config.store == "lexical") {
            std::vector<std::vector<std::size_t>> ids;
            for (const auto& l : lists) {
                ids.emplace_back();
                for (const auto& e : l.entries)
                    ids.back().push_back(e.pair_id);
            }
            populate_lexical_store(store, db, queries, ids);
        } else {
            store = ScoreStore::load(config.store);
        }
        if (config.ppl_from_llm)
            populate_perplexity(store, client(), db, queries, lists, config.max_in_flight);
        run.emit(store_file, store.serialize());
        return std::vector<fs::path>{store_file};
    });
    const auto store = ScoreStore::load(run.path(store_file));

    run.stage("datagen", {{"datagen", cfg["datagen"]}, {"llm", cfg["llm"]}, {"prompt", cfg["prompt"]},
                          {"missing", cfg["features"]["missing"]}},
              [&](bool resuming) {
                  DatagenConfig dc;
                  dc.shortlist_k = config.datagen_k;
                  dc.prompt = config.prompt_spec();
                  dc.max_new_tokens = config.max_new_tokens;
                  dc.max_in_flight = config.max_in_flight;
                  dc.generation_retries = config.generation_retries;
                  dc.policy = config.missing;
                  dc.max_tombstone_rate = config.max_tombstone_rate;
                  std::optional<ExternalScores> external;
                  XlateScorer metric;
                  if (*metric_from_name(config.datagen_metric) == MetricKind::external) {
                      external = ExternalScores::load(config.datagen_scores);
                      metric = XlateScorer(&*external);
                  }
                  const auto out = run.path(train_file);
                  if (!resuming && fs::exists(out))
                      fs::remove(out);
                  fs::create_directories(out.parent_path());
                  write_file(out.parent_path() / "config.json", cfg.dump(2) + "\n");
                  HeldOutSet held;
                  held.pairs = heldout.pairs;
                  const auto data = generate_training_data(held, db, index, client(), store, metric, dc, out);
                  run.log("datagen: " + std::to_string(data.rows.size()) + " rows, " +
                          std::to_string(data.tombstones.size()) + " skipped");
                  return std::vector<fs::path>{train_file};
              });

    run.stage("train", {{"train", cfg["train"]}, {"seed", config.seed}}, [&](bool) {
        const auto data = load_training_data(run.path(train_file));
        const auto split = split_811(data.rows, config.seed);
        MlpConfig mlp = config.mlp;
        TrainConfig tc = config.train;
        tc.seed = config.seed;
        std::vector<fs::path> outputs{model_file, "train/history.tsv", "train/summary.json"};
        if (!config.tune_grid.empty()) {
            const auto grid = config.tune_grid == "full" ? HyperGrid::full()
                                                          : HyperGrid::from_json(read_file(config.tune_grid));
            const auto result = grid_search(split.train, split.val, grid, config.seed, config.tune_threads);
            mlp = result.best().mlp;
            tc = result.best().train;
            run.emit("train/grid.tsv", result.to_tsv());
            outputs.push_back("train/grid.tsv");
        }
        const auto fit = train(split.train, split.val, mlp, tc);
        fit.model.save(run.path(model_file));
        std::string history = "epoch\ttrain_mse\tval_mse\n";
        for (const auto& h : fit.history)
            history += std::to_string(h.epoch) + "\t" + format_double(h.train_mse) + "\t" + format_double(h.val_mse) +
                       "\n";
        run.emit("train/history.tsv", history);
        json summary = {{"rows", data.rows.size()},
                        {"train", split.train.size()},
                        {"val", split.val.size()},
                        {"test", split.test.size()},
                        {"config", config_key(mlp, tc)},
                        {"best_epoch", fit.model.best_epoch},
                        {"val_mse", fit.model.best_val_mse},
                        {"test_mse", split.test.empty() ? 0.0 : mean_squared_error(fit.model, split.test)}};
        run.emit("train/summary.json", summary.dump(2) + "\n");
        return outputs;
    });
    const auto model = CtqModel::load(run.path(model_file));

    // (method tag, file stem) for every translation run, random once per seed.
    std::vector<std::pair<std::string, std::string>> runs;
    for (const auto& name : config.methods) {
        const auto tag = Method::parse(name).tag();
        if (tag == "random")
            for (auto s : config.random_seeds)
                runs.emplace_back(tag, "random.s" + std::to_string(s));
        else
            runs.emplace_back(tag, method_file_stem(tag));
    }

    run.stage("translate",
              {{"translate", cfg["translate"]}, {"llm", cfg["llm"]}, {"prompt", cfg["prompt"]},
               {"index", cfg["index"]}, {"missing", cfg["features"]["missing"]}, {"seed", config.seed}},
              [&](bool) {
                  std::vector<fs::path> outputs;
                  for (std::size_t r = 0; r < runs.size(); ++r) {
                      const auto& [tag, stem] = runs[r];
                      TranslateOptions topt;
                      topt.method = Method::parse(tag);
                      topt.shortlist_n = config.shortlist_n;
                      topt.k = config.k;
                      topt.prompt = config.prompt_spec();
                      topt.order = config.example_order;
                      topt.random_fill = config.random_fill;
                      topt.seed = config.seed;
                      if (stem.rfind("random.s", 0) == 0)
                          topt.seed = std::stoull(stem.substr(8));
                      topt.max_new_tokens = config.max_new_tokens;
                      topt.max_in_flight = config.max_in_flight;
                      topt.missing = config.missing;
                      const auto out = translate(test.pairs, db, index, client(), &store, &model, topt);
                      std::string prov;
                      std::size_t failures = 0;
                      for (const auto& p : out.provenance) {
                          prov += p.dump() + "\n";
                          failures += p.contains("error") ? 1 : 0;
                      }
                      const fs::path txt = "translate/" + stem + ".txt";
                      const fs::path jsonl = "translate/" + stem + ".provenance.jsonl";
                      run.emit(txt, join_lines(out.translations));
                      run.emit(jsonl, prov);
                      outputs.push_back(txt);
                      outputs.push_back(jsonl);
                      run.log("translate " + stem + ": " + std::to_string(out.translations.size()) + " lines, " +
                              std::to_string(failures) + " failed");
                  }
                  return outputs;
              });

    std::vector<std::string> refs;
    for (const auto& p : test.pairs)
        refs.push_back(p.target);
    Report report;
    run.stage("evaluate", {{"evaluate", cfg["evaluate"]}}, [&](bool) {
        std::vector<MethodRun> method_runs;
        for (const auto& [tag, stem] : runs) {
            const auto content = read_file(run.path("translate/" + stem + ".txt"));
            auto hyps = split_lines_keep_empty(content);
            hyps.resize(refs.size());
            CorpusScore score = config.eval_metric == "chrf"
                                    ? corpus_score_chrf(hyps, refs)
                                    : corpus_score_external(hyps, refs, config.eval_scores_dir / (stem + ".scores"));
            if (method_runs.empty() || method_runs.back().method != tag)
                method_runs.push_back({tag, {}});
            method_runs.back().runs.push_back(std::move(score));
        }
        report = compare_methods(method_runs, config.baseline);
        run.emit("evaluate/report.txt", report.to_text());
        run.emit("evaluate/report.json", report.to_json().dump(2) + "\n");
        return std::vector<fs::path>{"evaluate/report.txt", "evaluate/report.json"};
    });
    if (report.rows.empty()) {
        const auto j = json::parse(read_file(run.path("evaluate/report.json")));
        report.baseline = j.at("baseline").get<std::string>();
        for (const auto& r : j.at("rows"))
            report.rows.push_back({r.at("method").get<std::string>(), r.at("runs").get<std::size_t>(),
                                   r.at("score").get<double>(), r.at("delta").get<double>(),
                                   r.at("win_rate").get<double>()});
    }
    auto result = std::move(run.report());
    result.report = std::move(report);
    return result;
}

}  // namespace ctq
