// ctqsel: example selection for few-shot LLM translation.

#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "ctq/bm25.hpp"
#include "ctq/corpus.hpp"
#include "ctq/datagen.hpp"
#include "ctq/desk_store.hpp"
#include "ctq/eval.hpp"
#include "ctq/features.hpp"
#include "ctq/pipeline.hpp"
#include "ctq/regressor.hpp"
#include "ctq/rng.hpp"
#include "ctq/selection.hpp"
#include "ctq/text.hpp"

namespace fs = std::filesystem;
using namespace ctq;

namespace {

constexpr const char* kDefaults =
    "Defaults follow the reference setup: shortlist n=100, k=4 examples, prompt budget 1000 tokens, "
    "8 generation requests in flight, datagen K=100, delimiter ###, BM25 k1=1.2 b=0.75.";

struct Inputs {
    std::vector<SentencePair> pairs;
    bool has_targets = false;
};

/// Parallel file (.tsv/.jsonl) or plain text, one source per line.
Inputs load_inputs(const fs::path& path)
{
    Inputs in;
    const auto ext = path.extension().string();
    if (ext == ".tsv" || ext == ".jsonl" || ext == ".json") {
        in.pairs = load_parallel(path).pairs;
        in.has_targets = true;
        return in;
    }
    std::size_t id = 0;
    for (const auto& line : read_lines(path))
        in.pairs.push_back({id++, std::string(trim(line)), ""});
    return in;
}

std::map<std::string, std::string> references_of(const std::vector<SentencePair>& pairs)
{
    std::map<std::string, std::string> refs;
    for (const auto& p : pairs)
        if (!p.target.empty())
            refs.emplace(p.source, p.target);
    return refs;
}

Bm25Index index_for(const ExampleDatabase& db, const std::string& index_path, const Bm25Params& params)
{
    if (!index_path.empty()) {
        auto index = Bm25Index::load(index_path);
        if (index.doc_count() != db.size())
            throw ConfigError("index " + index_path + " was built over a different database");
        return index;
    }
    return Bm25Index::build(db, params);
}

/// `lexical` builds the desk-scale store for the given shortlists; anything else is a store file.
ScoreStore store_for(const std::string& spec, const ExampleDatabase& db, const std::vector<SentencePair>& queries,
                     const std::vector<CandidateList>& lists)
{
    if (spec != "lexical")
        return ScoreStore::load(spec);
    ScoreStore store;
    std::vector<std::string> texts;
    std::vector<std::vector<std::size_t>> ids;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        texts.push_back(queries[i].source);
        ids.emplace_back();
        for (const auto& e : lists[i].entries)
            ids.back().push_back(e.pair_id);
    }
    populate_lexical_store(store, db, texts, ids);
    return store;
}

MissingPolicy policy_from(const std::string& name)
{
    auto p = missing_policy_from_name(name);
    if (!p)
        throw ConfigError("--policy must be strict or fill_default");
    return *p;
}

void write_or_print(const std::string& path, const std::string& content)
{
    if (path.empty() || path == "-")
        std::cout << content;
    else
        write_file(path, content);
}

struct PromptFlags {
    std::string src_lang = "Source";
    std::string tgt_lang = "Target";
    std::string delimiter = "###";
    std::size_t budget = 1000;

    void add(CLI::App* app)
    {
        app->add_option("--src-lang", src_lang, "Source language name used in the prompt")->capture_default_str();
        app->add_option("--tgt-lang", tgt_lang, "Target language name used in the prompt")->capture_default_str();
        app->add_option("--delimiter", delimiter, "Line separating prompt examples")->capture_default_str();
        app->add_option("--budget", budget, "Prompt token budget (whitespace tokens)")->capture_default_str();
    }
    PromptSpec spec() const { return {src_lang, tgt_lang, delimiter, budget}; }
};

struct EndpointFlags {
    std::string endpoint;
    double timeout_s = 60.0;
    int retries = 3;
    std::size_t max_in_flight = 8;

    void add(CLI::App* app)
    {
        app->add_option("--endpoint", endpoint,
                        "http:// URL, mock:echo, mock:lexical or mock:table:<file> (default: $CTQ_ENDPOINT)");
        app->add_option("--timeout-s", timeout_s, "Per-request timeout in seconds")->capture_default_str();
        app->add_option("--retries", retries, "Retries for timeouts and server errors")->capture_default_str();
        app->add_option("--max-in-flight", max_in_flight, "Concurrent generation requests")->capture_default_str();
    }
    std::unique_ptr<GenerationClient> client(const std::map<std::string, std::string>& refs) const
    {
        auto url = endpoint;
        if (url.empty())
            url = endpoint_from_env().value_or("");
        if (url.empty())
            throw ConfigError("no endpoint: pass --endpoint or set CTQ_ENDPOINT");
        return make_client(url, refs, timeout_s, retries);
    }
};

struct Bm25Flags {
    double k1 = 1.2;
    double b = 0.75;
    void add(CLI::App* app)
    {
        app->add_option("--bm25-k1", k1, "BM25 term-frequency saturation")->capture_default_str();
        app->add_option("--bm25-b", b, "BM25 length normalization")->capture_default_str();
    }
    Bm25Params params() const { return {k1, b}; }
};

int run_cli(int argc, char** argv)
{
    CLI::App app{"Selects in-context examples for few-shot LLM translation with a learned quality scorer."};
    app.footer(kDefaults);
    app.require_subcommand(1);
    std::function<void()> action;

    // corpus
    auto* corpus = app.add_subcommand("corpus", "Load, trim and deduplicate a parallel corpus");
    corpus->footer(kDefaults);
    std::string corpus_in, corpus_out, corpus_exclude;
    corpus->add_option("--input", corpus_in, "TSV or JSONL parallel file")->required()->check(CLI::ExistingFile);
    corpus->add_option("--out", corpus_out, "Output JSONL database")->required();
    corpus->add_option("--exclude", corpus_exclude, "Drop pairs present in this database (held-out sets)")
        ->check(CLI::ExistingFile);
    corpus->callback([&] {
        action = [&] {
            auto db = load_parallel(corpus_in);
            if (!corpus_exclude.empty()) {
                const auto held = make_heldout(db, load_parallel(corpus_exclude));
                db.pairs = held.pairs;
            }
            save_database(db, corpus_out);
            std::cerr << db.size() << " pairs\n";
        };
    });

    // index
    auto* index = app.add_subcommand("index", "Build a BM25 index over database sources, or query one");
    index->footer(kDefaults);
    std::string index_db, index_out, index_path, index_query;
    std::size_t index_n = 100;
    Bm25Flags index_bm25;
    index->add_option("--db", index_db, "Example database")->required()->check(CLI::ExistingFile);
    index->add_option("--out", index_out, "Write the index here");
    index->add_option("--index", index_path, "Existing index to query")->check(CLI::ExistingFile);
    index->add_option("--query", index_query, "Print the shortlist for this text");
    index->add_option("--shortlist-n", index_n, "Shortlist size")->capture_default_str();
    index_bm25.add(index);
    index->callback([&] {
        action = [&] {
            const auto db = load_parallel(index_db);
            const auto idx = index_for(db, index_path, index_bm25.params());
            if (!index_out.empty())
                idx.save(index_out);
            if (!index_query.empty())
                for (const auto& e : idx.shortlist(index_query, index_n).entries)
                    std::cout << e.pair_id << "\t" << format_double(e.score) << "\t" << db[e.pair_id].source << "\n";
        };
    });

    // features
    auto* features = app.add_subcommand("features", "Feature extraction and score-store utilities");
    features->footer(kDefaults);
    features->require_subcommand(1);
    struct FeatureArgs {
        std::string db, queries, index, store = "lexical", policy = "strict", out;
        std::size_t n = 100;
    } fa;
    Bm25Flags features_bm25;
    auto common = [&](CLI::App* sub) {
        sub->footer(kDefaults);
        sub->add_option("--db", fa.db, "Example database")->required()->check(CLI::ExistingFile);
        sub->add_option("--queries", fa.queries, "Query sentences: plain text lines, TSV or JSONL")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--index", fa.index, "Prebuilt BM25 index")->check(CLI::ExistingFile);
        sub->add_option("--shortlist-n", fa.n, "Candidates per query")->capture_default_str();
        sub->add_option("--out", fa.out, "Output file (default stdout)");
        features_bm25.add(sub);
    };
    auto shortlists = [&](const Bm25Index& idx, const std::vector<SentencePair>& qs) {
        std::vector<CandidateList> lists;
        for (const auto& q : qs)
            lists.push_back(idx.shortlist(q.source, fa.n, q.id));
        return lists;
    };

    auto* extract = features->add_subcommand("extract", "Write the 12-feature vector of every (candidate, query)");
    common(extract);
    extract->add_option("--store", fa.store, "Score store file, or 'lexical' for the built-in stand-in")
        ->capture_default_str();
    extract->add_option("--policy", fa.policy, "Missing store entries: strict or fill_default")->capture_default_str();
    extract->callback([&] {
        action = [&] {
            const auto db = load_parallel(fa.db);
            const auto qs = load_inputs(fa.queries).pairs;
            const auto idx = index_for(db, fa.index, features_bm25.params());
            const auto lists = shortlists(idx, qs);
            const auto store = store_for(fa.store, db, qs, lists);
            const auto policy = policy_from(fa.policy);
            std::string out = "query_id\tcandidate_id";
            for (auto f : all_features())
                out += "\t" + std::string(feature_name(f));
            out += "\n";
            for (std::size_t i = 0; i < qs.size(); ++i) {
                const auto fvs = candidate_features(lists[i], qs[i].source, db, store, policy);
                for (std::size_t c = 0; c < fvs.size(); ++c) {
                    out += std::to_string(qs[i].id) + "\t" + std::to_string(lists[i].entries[c].pair_id);
                    for (double v : fvs[c].values)
                        out += "\t" + format_double(v);
                    out += "\n";
                }
            }
            write_or_print(fa.out, out);
        };
    });

    bool keys_missing_only = false;
    auto* keys = features->add_subcommand("keys", "List every store key strict-mode extraction needs");
    common(keys);
    keys->add_option("--store", fa.store, "Only list keys missing from this store file");
    keys->add_flag("--missing-only", keys_missing_only, "With --store, list only absent keys");
    keys->callback([&] {
        action = [&] {
            const auto db = load_parallel(fa.db);
            const auto qs = load_inputs(fa.queries).pairs;
            const auto idx = index_for(db, fa.index, features_bm25.params());
            const auto lists = shortlists(idx, qs);
            std::optional<ScoreStore> store;
            if (keys_missing_only && fa.store != "lexical")
                store = ScoreStore::load(fa.store);
            std::map<std::string, std::string> unique;
            for (std::size_t i = 0; i < qs.size(); ++i)
                for (const auto& e : lists[i].entries)
                    for (const auto& key : required_keys(db[e.pair_id], qs[i].source, StoreIds{}))
                        if (!store || !store->contains(key))
                            unique.emplace(key.hashed(), key.describe());
            std::string out;
            for (const auto& [hashed, what] : unique)
                out += hashed + "\t" + what + "\n";
            write_or_print(fa.out, out);
        };
    });

    auto* lexical = features->add_subcommand("lexical-store", "Write a store filled by the built-in lexical stand-ins");
    common(lexical);
    lexical->callback([&] {
        action = [&] {
            const auto db = load_parallel(fa.db);
            const auto qs = load_inputs(fa.queries).pairs;
            const auto idx = index_for(db, fa.index, features_bm25.params());
            const auto store = store_for("lexical", db, qs, shortlists(idx, qs));
            write_or_print(fa.out, store.serialize());
        };
    });

    EndpointFlags ppl_endpoint;
    auto* ppl = features->add_subcommand("ppl", "Add perplexity entries scored by the endpoint's /score_nll");
    common(ppl);
    ppl->add_option("--store", fa.store, "Store file to extend")->required()->check(CLI::ExistingFile);
    ppl_endpoint.add(ppl);
    ppl->callback([&] {
        action = [&] {
            const auto db = load_parallel(fa.db);
            const auto qs = load_inputs(fa.queries).pairs;
            const auto idx = index_for(db, fa.index, features_bm25.params());
            auto store = ScoreStore::load(fa.store);
            auto client = ppl_endpoint.client({});
            std::vector<std::string> texts;
            for (const auto& q : qs)
                texts.push_back(q.source);
            populate_perplexity(store, *client, db, texts, shortlists(idx, qs), ppl_endpoint.max_in_flight);
            write_or_print(fa.out.empty() ? fa.store : fa.out, store.serialize());
        };
    });

    // datagen
    auto* datagen = app.add_subcommand("datagen", "Create scorer training data by 1-shot prompting each candidate");
    datagen->footer(kDefaults);
    struct DatagenArgs {
        std::string heldout, db, index, store = "lexical", metric = "chrf", scores, out, policy = "strict";
        std::size_t k = 100, max_new_tokens = 256;
        int gen_retries = 2;
        double max_skip = 0.01;
    } da;
    PromptFlags datagen_prompt;
    EndpointFlags datagen_endpoint;
    Bm25Flags datagen_bm25;
    datagen->add_option("--heldout", da.heldout, "Held-out parallel set")->required()->check(CLI::ExistingFile);
    datagen->add_option("--db", da.db, "Example database")->required()->check(CLI::ExistingFile);
    datagen->add_option("--index", da.index, "Prebuilt BM25 index")->check(CLI::ExistingFile);
    datagen->add_option("--store", da.store, "Score store file, or 'lexical'")->capture_default_str();
    datagen->add_option("--policy", da.policy, "Missing store entries: strict or fill_default")->capture_default_str();
    datagen->add_option("--k", da.k, "Candidates per held-out sentence")->capture_default_str();
    datagen->add_option("--metric", da.metric, "chrf or external")->capture_default_str();
    datagen->add_option("--scores", da.scores, "Score file for --metric external (key<TAB>score)");
    datagen->add_option("--out", da.out, "Training data file; an existing file is resumed")->required();
    datagen->add_option("--max-new-tokens", da.max_new_tokens, "Generation length cap")->capture_default_str();
    datagen->add_option("--generation-retries", da.gen_retries, "Attempts before a row is skipped")
        ->capture_default_str();
    datagen->add_option("--max-skip-rate", da.max_skip, "Fail when more rows than this are skipped")
        ->capture_default_str();
    datagen_prompt.add(datagen);
    datagen_endpoint.add(datagen);
    datagen_bm25.add(datagen);
    datagen->callback([&] {
        action = [&] {
            const auto db = load_parallel(da.db);
            const auto held = make_heldout(load_parallel(da.heldout), db);
            const auto idx = index_for(db, da.index, datagen_bm25.params());
            std::vector<CandidateList> lists;
            for (const auto& q : held.pairs)
                lists.push_back(idx.shortlist(q.source, da.k, q.id));
            const auto store = store_for(da.store, db, held.pairs, lists);
            const auto metric_kind = metric_from_name(da.metric);
            if (!metric_kind)
                throw ConfigError("--metric must be chrf or external");
            std::optional<ExternalScores> external;
            XlateScorer metric;
            if (*metric_kind == MetricKind::external) {
                if (da.scores.empty())
                    throw ConfigError("--metric external needs --scores");
                external = ExternalScores::load(da.scores);
                metric = XlateScorer(&*external);
            }
            DatagenConfig dc;
            dc.shortlist_k = da.k;
            dc.prompt = datagen_prompt.spec();
            dc.max_new_tokens = da.max_new_tokens;
            dc.max_in_flight = datagen_endpoint.max_in_flight;
            dc.generation_retries = da.gen_retries;
            dc.policy = policy_from(da.policy);
            dc.max_tombstone_rate = da.max_skip;
            auto client = datagen_endpoint.client(references_of(held.pairs));
            const auto data = generate_training_data(held, db, idx, *client, store, metric, dc, fs::path(da.out));
            std::cerr << data.rows.size() << " rows, " << data.tombstones.size() << " skipped\n";
        };
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "Fit the quality scorer on datagen output (8:1:1 split)");
    train_cmd->footer(kDefaults);
    struct TrainArgs {
        std::string data, out, activation = "relu", optimizer = "adam", history;
        std::size_t layers = 3, width = 128, batch = 32, epochs = 30;
        double lr = 0.001, wd = 0.0;
        std::uint64_t seed = 0;
    } ta;
    train_cmd->add_option("--data", ta.data, "Training data file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", ta.out, "Model file")->required();
    train_cmd->add_option("--layers", ta.layers, "Hidden layers")->capture_default_str();
    train_cmd->add_option("--width", ta.width, "Hidden width")->capture_default_str();
    train_cmd->add_option("--activation", ta.activation, "relu, tanh or sigmoid")->capture_default_str();
    train_cmd->add_option("--optimizer", ta.optimizer, "adam, rmsprop or sgd")->capture_default_str();
    train_cmd->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--batch", ta.batch, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--epochs", ta.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--weight-decay", ta.wd, "L2 weight decay")->capture_default_str();
    train_cmd->add_option("--seed", ta.seed, "Split, init and shuffle seed")->capture_default_str();
    train_cmd->add_option("--history", ta.history, "Write per-epoch MSE here");
    train_cmd->callback([&] {
        action = [&] {
            const auto data = load_training_data(ta.data);
            const auto split = split_811(data.rows, ta.seed);
            MlpConfig mlp;
            mlp.hidden_layers = ta.layers;
            mlp.hidden_width = ta.width;
            mlp.activation = activation_from_name(ta.activation);
            TrainConfig tc;
            tc.optimizer = optimizer_from_name(ta.optimizer);
            tc.learning_rate = ta.lr;
            tc.batch_size = ta.batch;
            tc.epochs = ta.epochs;
            tc.weight_decay = ta.wd;
            tc.seed = ta.seed;
            const auto fit = train(split.train, split.val, mlp, tc);
            fit.model.save(ta.out);
            if (!ta.history.empty()) {
                std::string h = "epoch\ttrain_mse\tval_mse\n";
                for (const auto& e : fit.history)
                    h += std::to_string(e.epoch) + "\t" + format_double(e.train_mse) + "\t" +
                         format_double(e.val_mse) + "\n";
                write_file(ta.history, h);
            }
            std::cout << "split " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
                      << "\nbest epoch " << fit.model.best_epoch << " val_mse " << format_double(fit.model.best_val_mse)
                      << "\ntest_mse " << format_double(split.test.empty() ? 0.0 : mean_squared_error(fit.model, split.test))
                      << "\n";
        };
    });

    // tune
    auto* tune = app.add_subcommand("tune", "Grid search over scorer hyperparameters");
    tune->footer(kDefaults);
    std::string tune_data, tune_grid = "full", tune_out, tune_model;
    std::size_t tune_threads = 1;
    std::uint64_t tune_seed = 0;
    tune->add_option("--data", tune_data, "Training data file")->required()->check(CLI::ExistingFile);
    tune->add_option("--grid", tune_grid, "Grid JSON file, or 'full' for the full reference grid")
        ->capture_default_str();
    tune->add_option("--out", tune_out, "Leaderboard TSV (default stdout)");
    tune->add_option("--model", tune_model, "Save the best configuration's model here");
    tune->add_option("--threads", tune_threads, "Parallel fits")->capture_default_str();
    tune->add_option("--seed", tune_seed, "Seed")->capture_default_str();
    tune->callback([&] {
        action = [&] {
            const auto data = load_training_data(tune_data);
            const auto split = split_811(data.rows, tune_seed);
            const auto grid = tune_grid == "full" ? HyperGrid::full() : HyperGrid::from_json(read_file(tune_grid));
            std::cerr << grid.cardinality() << " configurations\n";
            const auto result = grid_search(split.train, split.val, grid, tune_seed, tune_threads);
            write_or_print(tune_out, result.to_tsv());
            if (!tune_model.empty())
                train(split.train, split.val, result.best().mlp, result.best().train).model.save(tune_model);
        };
    });

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare backprop gradients with central differences");
    gradcheck->footer(kDefaults);
    std::string gc_activation = "relu", gc_optimizer = "adam";
    std::size_t gc_layers = 3, gc_width = 64, gc_rows = 16;
    std::uint64_t gc_seed = 0;
    std::size_t gc_warmup = 5;
    double gc_wd = 0.0;
    gradcheck->add_option("--activation", gc_activation, "relu, tanh or sigmoid")->capture_default_str();
    gradcheck->add_option("--optimizer", gc_optimizer, "Optimizer used for warm-up steps before checking")
        ->capture_default_str();
    gradcheck->add_option("--layers", gc_layers, "Hidden layers")->capture_default_str();
    gradcheck->add_option("--width", gc_width, "Hidden width")->capture_default_str();
    gradcheck->add_option("--rows", gc_rows, "Batch rows")->capture_default_str();
    gradcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();
    gradcheck->add_option("--warmup-steps", gc_warmup, "Optimizer steps taken before checking")->capture_default_str();
    gradcheck->add_option("--weight-decay", gc_wd, "L2 weight decay in the checked loss")->capture_default_str();
    gradcheck->callback([&] {
        action = [&] {
            MlpConfig mlp;
            mlp.hidden_layers = gc_layers;
            mlp.hidden_width = gc_width;
            mlp.activation = activation_from_name(gc_activation);
            Rng rng(gc_seed);
            Eigen::MatrixXd x(mlp.input_dim, gc_rows);
            Eigen::RowVectorXd y(gc_rows);
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                for (Eigen::Index r = 0; r < x.rows(); ++r)
                    x(r, c) = uniform_real(rng, -1.0, 1.0);
                y(c) = uniform_real(rng, -1.0, 1.0);
            }
            const auto res = grad_check(mlp, x, y, gc_wd, gc_seed, optimizer_from_name(gc_optimizer), gc_warmup);
            std::cout << "max_relative_error " << format_double(res.max_relative_error) << "\nparameters "
                      << res.parameters_checked << "\n";
        };
    });

    // select / translate share most flags
    struct SelectArgs {
        std::string db, index, store = "lexical", model, input, method = "ctq", out, order = "best-last",
                                                                           policy = "strict";
        std::size_t k = 4, n = 100, max_new_tokens = 256;
        std::uint64_t seed = 0;
        bool no_fill = false;
    } sa;
    Bm25Flags select_bm25;
    auto selection_flags = [&](CLI::App* sub) {
        sub->footer(kDefaults);
        sub->add_option("--db", sa.db, "Example database")->required()->check(CLI::ExistingFile);
        sub->add_option("--index", sa.index, "Prebuilt BM25 index")->check(CLI::ExistingFile);
        sub->add_option("--store", sa.store, "Score store file, or 'lexical'")->capture_default_str();
        sub->add_option("--policy", sa.policy, "Missing store entries: strict or fill_default")
            ->capture_default_str();
        sub->add_option("--model", sa.model, "Trained scorer (method ctq)")->check(CLI::ExistingFile);
        sub->add_option("--input", sa.input, "Inputs: plain text lines, TSV or JSONL")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--method", sa.method, "ctq, bm25, rbm25, random, feat:<name> or scavg:<f1,f2,...>")
            ->capture_default_str();
        sub->add_option("--k", sa.k, "Examples per prompt")->capture_default_str();
        sub->add_option("--shortlist-n", sa.n, "BM25 candidates reranked per input")->capture_default_str();
        sub->add_option("--seed", sa.seed, "Seed for random selection and fill")->capture_default_str();
        sub->add_option("--out", sa.out, "Output file (default stdout)");
        select_bm25.add(sub);
    };
    auto make_options = [&] {
        TranslateOptions o;
        try {
            o.method = Method::parse(sa.method);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        o.shortlist_n = sa.n;
        o.k = sa.k;
        o.seed = sa.seed;
        o.random_fill = !sa.no_fill;
        o.missing = policy_from(sa.policy);
        o.max_new_tokens = sa.max_new_tokens;
        const auto order = example_order_from_name(sa.order);
        if (!order)
            throw ConfigError("--example-order must be best-last or best-first");
        o.order = *order;
        return o;
    };
    struct Loaded {
        ExampleDatabase db;
        Inputs inputs;
        Bm25Index index;
        std::optional<ScoreStore> store;
        std::optional<CtqModel> model;
    };
    auto load_world = [&](const TranslateOptions& o) {
        Loaded w;
        w.db = load_parallel(sa.db);
        w.inputs = load_inputs(sa.input);
        w.index = index_for(w.db, sa.index, select_bm25.params());
        if (o.method.needs_model()) {
            if (sa.model.empty())
                throw ConfigError("--method ctq needs --model");
            w.model = CtqModel::load(sa.model);
        }
        if (o.method.needs_store()) {
            std::vector<CandidateList> lists;
            for (const auto& q : w.inputs.pairs)
                lists.push_back(w.index.shortlist(q.source, o.shortlist_n, q.id));
            w.store = store_for(sa.store, w.db, w.inputs.pairs, lists);
        }
        return w;
    };

    auto* select = app.add_subcommand("select", "Pick prompt examples for each input and print them as JSON lines");
    selection_flags(select);
    select->add_flag("--no-fill", sa.no_fill, "Do not pad short shortlists with random examples");
    select->callback([&] {
        action = [&] {
            const auto o = make_options();
            const auto w = load_world(o);
            std::string out;
            for (const auto& q : w.inputs.pairs) {
                auto sel = select_examples(q, w.db, w.index, w.store ? &*w.store : nullptr,
                                           w.model ? &*w.model : nullptr, o);
                if (o.random_fill && sel.chosen.size() < o.k)
                    fill_random(sel, w.db, o.k, o.seed + q.id);
                out += sel.to_json().dump() + "\n";
            }
            write_or_print(sa.out, out);
        };
    });

    PromptFlags translate_prompt;
    EndpointFlags translate_endpoint;
    std::string translate_provenance;
    auto* translate_cmd = app.add_subcommand("translate", "Select examples, prompt the LLM and write translations");
    selection_flags(translate_cmd);
    translate_cmd->add_flag("--no-fill", sa.no_fill, "Do not pad short shortlists with random examples");
    translate_cmd->add_option("--example-order", sa.order, "best-last puts the best example next to the input")
        ->capture_default_str();
    translate_cmd->add_option("--max-new-tokens", sa.max_new_tokens, "Generation length cap")->capture_default_str();
    translate_cmd->add_option("--provenance", translate_provenance,
                              "Provenance JSONL (default <out>.provenance.jsonl)");
    translate_prompt.add(translate_cmd);
    translate_endpoint.add(translate_cmd);
    translate_cmd->callback([&] {
        action = [&] {
            auto o = make_options();
            o.prompt = translate_prompt.spec();
            o.max_in_flight = translate_endpoint.max_in_flight;
            const auto w = load_world(o);
            auto client = translate_endpoint.client(references_of(w.inputs.pairs));
            const auto result = translate(w.inputs.pairs, w.db, w.index, *client, w.store ? &*w.store : nullptr,
                                          w.model ? &*w.model : nullptr, o);
            std::string text, prov;
            for (const auto& t : result.translations)
                text += t + "\n";
            for (const auto& p : result.provenance)
                prov += p.dump() + "\n";
            write_or_print(sa.out, text);
            auto prov_path = translate_provenance;
            if (prov_path.empty() && !sa.out.empty() && sa.out != "-")
                prov_path = sa.out + ".provenance.jsonl";
            if (!prov_path.empty())
                write_file(prov_path, prov);
        };
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score translations and compare selection methods");
    evaluate->footer(kDefaults);
    std::vector<std::string> eval_runs;
    std::string eval_refs, eval_metric = "chrf", eval_baseline, eval_json;
    evaluate->add_option("--refs", eval_refs, "Reference translations, one per line")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--run", eval_runs,
                         "METHOD=HYPS[,HYPS...] (several files are averaged, e.g. three random seeds). "
                         "With --metric external each HYPS file needs a HYPS.scores file")
        ->required();
    evaluate->add_option("--metric", eval_metric, "chrf or external")->capture_default_str();
    evaluate->add_option("--baseline", eval_baseline, "Method the deltas are relative to (default: first run)");
    evaluate->add_option("--json", eval_json, "Also write the report as JSON here");
    evaluate->callback([&] {
        action = [&] {
            if (eval_metric != "chrf" && eval_metric != "external")
                throw ConfigError("--metric must be chrf or external");
            const auto refs = read_lines(eval_refs);
            std::vector<MethodRun> runs;
            for (const auto& spec : eval_runs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw ConfigError("--run expects METHOD=FILE[,FILE...], got '" + spec + "'");
                MethodRun run{spec.substr(0, eq), {}};
                std::string files = spec.substr(eq + 1);
                std::size_t start = 0;
                while (start <= files.size()) {
                    auto comma = files.find(',', start);
                    if (comma == std::string::npos)
                        comma = files.size();
                    const auto file = files.substr(start, comma - start);
                    auto hyps = read_lines(file);
                    if (eval_metric == "chrf")
                        run.runs.push_back(corpus_score_chrf(hyps, refs));
                    else
                        run.runs.push_back(corpus_score_external(hyps, refs, fs::path(file + ".scores")));
                    start = comma + 1;
                }
                runs.push_back(std::move(run));
            }
            const auto report = compare_methods(runs, eval_baseline.empty() ? runs.front().method : eval_baseline);
            std::cout << report.to_text();
            if (!eval_json.empty())
                write_file(eval_json, report.to_json().dump(2) + "\n");
        };
    });

    // run
    auto* run = app.add_subcommand("run", "Run every stage from a config file into a run directory");
    run->footer(kDefaults);
    std::string run_config, run_dir, run_resume, run_endpoint;
    run->add_option("--config", run_config, "JSON config")->required()->check(CLI::ExistingFile);
    run->add_option("--run-dir", run_dir, "Output directory")->required();
    run->add_option("--resume-from", run_resume, "Rerun from this stage (or a resume token) onward");
    run->add_option("--endpoint", run_endpoint, "Override llm.endpoint");
    run->callback([&] {
        action = [&] {
            auto config = Config::load(run_config);
            if (!run_endpoint.empty())
                config.endpoint = run_endpoint;
            RunOptions opt;
            opt.resume_from = run_resume;
            opt.log = [](const std::string& m) { std::cerr << m << "\n"; };
            const auto result = run_all(config, run_dir, opt);
            std::cout << result.report.to_text();
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        action();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\nresume with --resume-from " << e.resume_token() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    return run_cli(argc, argv);
}
