#include "ctq/regressor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ctq/corpus.hpp"
#include "ctq/rng.hpp"
#include "ctq/text.hpp"

namespace ctq {

using Eigen::Index;

std::string_view activation_name(Activation a)
{
    switch (a) {
    case Activation::sigmoid:
        return "sigmoid";
    case Activation::tanh:
        return "tanh";
    case Activation::relu:
        return "relu";
    }
    return "?";
}

Activation activation_from_name(std::string_view name)
{
    if (name == "sigmoid")
        return Activation::sigmoid;
    if (name == "tanh")
        return Activation::tanh;
    if (name == "relu")
        return Activation::relu;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view optimizer_name(Optimizer o)
{
    switch (o) {
    case Optimizer::sgd:
        return "sgd";
    case Optimizer::adam:
        return "adam";
    case Optimizer::rmsprop:
        return "rmsprop";
    }
    return "?";
}

Optimizer optimizer_from_name(std::string_view name)
{
    if (name == "sgd" || name == "SGD")
        return Optimizer::sgd;
    if (name == "adam" || name == "Adam")
        return Optimizer::adam;
    if (name == "rmsprop" || name == "RMSprop" || name == "RMSProp")
        return Optimizer::rmsprop;
    throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Normalization

Eigen::Matrix<double, kFeatureCount, 1> Normalization::apply(const FeatureVector& fv) const
{
    Eigen::Matrix<double, kFeatureCount, 1> out;
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        out[static_cast<Index>(i)] = (fv.values[i] - mean[i]) / std[i];
    return out;
}

Eigen::Matrix<double, kFeatureCount, 1> normalize_apply(const Normalization& stats, const FeatureVector& fv)
{
    return stats.apply(fv);
}

Normalization normalize_fit(std::span<const FeatureVector> rows)
{
    if (rows.empty())
        throw std::invalid_argument("normalize_fit: empty training set");
    Normalization stats;
    const double n = static_cast<double>(rows.size());
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
        double sum = 0.0;
        for (const auto& r : rows)
            sum += r.values[f];
        const double mean = sum / n;
        double sq = 0.0;
        for (const auto& r : rows)
            sq += (r.values[f] - mean) * (r.values[f] - mean);
        const double sd = std::sqrt(sq / n);
        stats.mean[f] = mean;
        stats.zero_variance[f] = !(sd > 0.0);
        stats.std[f] = stats.zero_variance[f] ? 1.0 : sd;
    }
    return stats;
}

Normalization normalize_fit(std::span<const TrainingInstance> rows)
{
    std::vector<FeatureVector> features;
    features.reserve(rows.size());
    for (const auto& r : rows)
        features.push_back(r.features);
    return normalize_fit(features);
}

// ---------------------------------------------------------------------------
// Model

double CtqModel::predict(const FeatureVector& fv) const
{
    Eigen::MatrixXd x = normalization.apply(fv);
    return net.forward(x)(0, 0);
}

std::vector<double> CtqModel::predict(std::span<const FeatureVector> rows) const
{
    std::vector<double> out;
    if (rows.empty())
        return out;
    Eigen::MatrixXd x(static_cast<Index>(kFeatureCount), static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        x.col(static_cast<Index>(i)) = normalization.apply(rows[i]);
    const Eigen::MatrixXd y = net.forward(x);
    out.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out[i] = y(0, static_cast<Index>(i));
    return out;
}

namespace {

constexpr std::string_view kModelMagic = "CTQMODEL v1";

void put_f64(std::string& out, double v)
{
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xFF));
        bits >>= 8;
    }
}

double get_f64(std::string_view in, std::size_t& pos)
{
    if (pos + 8 > in.size())
        throw std::runtime_error("model file: truncated weight block");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i)
        bits = (bits << 8) | static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]);
    pos += 8;
    return std::bit_cast<double>(bits);
}

nlohmann::json mlp_to_json(const MlpConfig& m)
{
    return {{"hidden_layers", m.hidden_layers}, {"hidden_width", m.hidden_width},
            {"activation", activation_name(m.activation)}, {"input_dim", m.input_dim},
            {"output_dim", m.output_dim}, {"zero_init_output", m.zero_init_output}};
}

nlohmann::json train_to_json(const TrainConfig& t)
{
    return {{"optimizer", optimizer_name(t.optimizer)}, {"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size}, {"epochs", t.epochs}, {"weight_decay", t.weight_decay},
            {"seed", t.seed}, {"shuffle", t.shuffle}};
}

}  // namespace

std::string CtqModel::serialize() const
{
    const auto& mlp = net.config();
    nlohmann::json header;
    header["format"] = "ctq-model";
    header["version"] = 1;
    header["mlp"] = mlp_to_json(mlp);
    header["train"] = train_to_json(train_config);
    header["best_epoch"] = best_epoch;
    header["best_val_mse"] = format_double(best_val_mse);
    header["features"] = nlohmann::json::array();
    for (auto f : all_features())
        header["features"].push_back(feature_name(f));
    header["zero_variance"] = normalization.zero_variance;
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& l : net.layers())
        shapes.push_back({l.weight.rows(), l.weight.cols()});
    header["layers"] = shapes;
    header["payload"] = "f64le: mean[12] std[12] then per layer weight (row-major) and bias";

    std::string out(kModelMagic);
    out += "\n" + header.dump() + "\n";
    for (double v : normalization.mean)
        put_f64(out, v);
    for (double v : normalization.std)
        put_f64(out, v);
    for (const auto& l : net.layers()) {
        for (Index r = 0; r < l.weight.rows(); ++r)
            for (Index c = 0; c < l.weight.cols(); ++c)
                put_f64(out, l.weight(r, c));
        for (Index r = 0; r < l.bias.size(); ++r)
            put_f64(out, l.bias[r]);
    }
    return out;
}

CtqModel CtqModel::deserialize(const std::string& bytes)
{
    const std::string_view in(bytes);
    const auto nl1 = in.find('\n');
    if (nl1 == std::string_view::npos || in.substr(0, nl1) != kModelMagic)
        throw std::runtime_error("model file: bad or missing version header");
    const auto nl2 = in.find('\n', nl1 + 1);
    if (nl2 == std::string_view::npos)
        throw std::runtime_error("model file: missing header record");
    const auto header = nlohmann::json::parse(in.substr(nl1 + 1, nl2 - nl1 - 1));

    MlpConfig mlp;
    const auto& m = header.at("mlp");
    mlp.hidden_layers = m.at("hidden_layers").get<std::size_t>();
    mlp.hidden_width = m.at("hidden_width").get<std::size_t>();
    mlp.activation = activation_from_name(m.at("activation").get<std::string>());
    mlp.input_dim = m.at("input_dim").get<std::size_t>();
    mlp.output_dim = m.at("output_dim").get<std::size_t>();
    mlp.zero_init_output = m.value("zero_init_output", false);
    if (mlp.input_dim != kFeatureCount)
        throw std::runtime_error("model file: input_dim must be " + std::to_string(kFeatureCount));

    CtqModel model;
    const auto& t = header.at("train");
    model.train_config.optimizer = optimizer_from_name(t.at("optimizer").get<std::string>());
    model.train_config.learning_rate = t.at("learning_rate").get<double>();
    model.train_config.batch_size = t.at("batch_size").get<std::size_t>();
    model.train_config.epochs = t.at("epochs").get<std::size_t>();
    model.train_config.weight_decay = t.at("weight_decay").get<double>();
    model.train_config.seed = t.at("seed").get<std::uint64_t>();
    model.train_config.shuffle = t.at("shuffle").get<bool>();
    model.best_epoch = header.at("best_epoch").get<std::size_t>();
    model.best_val_mse = parse_double(header.at("best_val_mse").get<std::string>());
    model.normalization.zero_variance = header.at("zero_variance").get<std::array<bool, kFeatureCount>>();

    std::size_t pos = nl2 + 1;
    for (auto& v : model.normalization.mean)
        v = get_f64(in, pos);
    for (auto& v : model.normalization.std) {
        v = get_f64(in, pos);
        if (!(v > 0.0))
            throw std::runtime_error("model file: normalization std must be > 0");
    }
    std::vector<DenseLayer<double>> layers;
    for (const auto& shape : header.at("layers")) {
        const auto rows = shape.at(0).get<Index>();
        const auto cols = shape.at(1).get<Index>();
        DenseLayer<double> layer;
        layer.weight.resize(rows, cols);
        layer.bias.resize(rows);
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < cols; ++c)
                layer.weight(r, c) = get_f64(in, pos);
        for (Index r = 0; r < rows; ++r)
            layer.bias[r] = get_f64(in, pos);
        layers.push_back(std::move(layer));
    }
    if (pos != in.size())
        throw std::runtime_error("model file: trailing bytes after weight block");
    model.net = Mlp<double>(mlp, std::move(layers));
    return model;
}

void CtqModel::save(const std::filesystem::path& path) const
{
    write_file(path, serialize());
}

CtqModel CtqModel::load(const std::filesystem::path& path)
{
    return deserialize(read_file(path));
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct DesignMatrix {
    Eigen::MatrixXd x;     // features x rows, normalized
    Eigen::RowVectorXd y;  // targets
};

DesignMatrix design(const Normalization& norm, std::span<const TrainingInstance> rows)
{
    DesignMatrix d;
    d.x.resize(static_cast<Index>(kFeatureCount), static_cast<Index>(rows.size()));
    d.y.resize(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        d.x.col(static_cast<Index>(i)) = norm.apply(rows[i].features);
        d.y[static_cast<Index>(i)] = rows[i].ctq;
    }
    return d;
}

double mse_of(const Mlp<double>& net, const DesignMatrix& d)
{
    return net.loss(d.x, d.y, 0.0);
}

void check_finite(std::span<const TrainingInstance> rows)
{
    for (const auto& r : rows) {
        if (!std::isfinite(r.ctq))
            throw std::invalid_argument("training instance with non-finite target");
        for (double v : r.features.values)
            if (!std::isfinite(v))
                throw std::invalid_argument("training instance with non-finite feature");
    }
}

}  // namespace

double mean_squared_error(const CtqModel& model, std::span<const TrainingInstance> rows)
{
    if (rows.empty())
        throw std::invalid_argument("mean_squared_error: no rows");
    return mse_of(model.net, design(model.normalization, rows));
}

TrainResult train(std::span<const TrainingInstance> train_set, std::span<const TrainingInstance> val_set,
                  const MlpConfig& mlp, const TrainConfig& tc)
{
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: train and validation sets must be non-empty");
    if (!(tc.learning_rate > 0.0))
        throw std::invalid_argument("train: learning_rate must be > 0");
    if (tc.batch_size == 0)
        throw std::invalid_argument("train: batch_size must be >= 1");
    if (tc.weight_decay < 0.0)
        throw std::invalid_argument("train: weight_decay must be >= 0");
    if (mlp.input_dim != kFeatureCount || mlp.output_dim != 1)
        throw std::invalid_argument("train: CTQ scorer maps 12 features to 1 output");
    check_finite(train_set);
    check_finite(val_set);

    Rng rng(tc.seed);
    TrainResult result;
    result.model.normalization = normalize_fit(train_set);
    result.model.train_config = tc;
    result.model.net = Mlp<double>(mlp, rng);

    const auto train_data = design(result.model.normalization, train_set);
    const auto val_data = design(result.model.normalization, val_set);

    Mlp<double> net = result.model.net;
    OptimizerState<double> optimizer(tc.optimizer, tc.learning_rate, net);
    Mlp<double>::Gradients grads;

    auto record = [&](std::size_t epoch) {
        const double tr = mse_of(net, train_data);
        const double va = mse_of(net, val_data);
        if (!std::isfinite(tr) || !std::isfinite(va))
            throw DivergedError(epoch);
        result.history.push_back({epoch, tr, va});
        if (epoch == 0 || va < result.model.best_val_mse) {
            result.model.best_val_mse = va;
            result.model.best_epoch = epoch;
            result.model.net = net;
        }
    };
    record(0);

    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    Eigen::MatrixXd xb;
    Eigen::RowVectorXd yb;
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        if (tc.shuffle)
            shuffle(order, rng);
        for (std::size_t start = 0; start < n; start += tc.batch_size) {
            const std::size_t len = std::min(tc.batch_size, n - start);
            xb.resize(static_cast<Index>(kFeatureCount), static_cast<Index>(len));
            yb.resize(static_cast<Index>(len));
            for (std::size_t j = 0; j < len; ++j) {
                xb.col(static_cast<Index>(j)) = train_data.x.col(static_cast<Index>(order[start + j]));
                yb[static_cast<Index>(j)] = train_data.y[static_cast<Index>(order[start + j])];
            }
            const double loss = net.loss_and_gradients(xb, yb, tc.weight_decay, grads);
            if (!std::isfinite(loss))
                throw DivergedError(epoch);
            optimizer.step(net, grads);
        }
        record(epoch);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const Mlp<double>& net, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                           double weight_decay, double h, double floor)
{
    Mlp<double>::Gradients grads;
    net.loss_and_gradients(inputs, targets, weight_decay, grads);

    GradCheckResult result;
    Mlp<double> probe = net;
    auto check_entry = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = probe.loss(inputs, targets, weight_decay);
        param = saved - h;
        const double down = probe.loss(inputs, targets, weight_decay);
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / scale);
        result.max_abs_gradient = std::max(result.max_abs_gradient, std::abs(analytic));
        ++result.parameters_checked;
    };
    for (std::size_t l = 0; l < probe.layers().size(); ++l) {
        auto& layer = probe.layers()[l];
        for (Index r = 0; r < layer.weight.rows(); ++r)
            for (Index c = 0; c < layer.weight.cols(); ++c)
                check_entry(layer.weight(r, c), grads.weight[l](r, c));
        for (Index r = 0; r < layer.bias.size(); ++r)
            check_entry(layer.bias[r], grads.bias[l][r]);
    }
    return result;
}

GradCheckResult grad_check(const MlpConfig& mlp, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                           double weight_decay, std::uint64_t seed, Optimizer optimizer, std::size_t warmup_steps,
                           double learning_rate, double h, double floor)
{
    Rng rng(seed);
    Mlp<double> net(mlp, rng);
    if (warmup_steps > 0) {
        OptimizerState<double> state(optimizer, learning_rate, net);
        Mlp<double>::Gradients grads;
        for (std::size_t s = 0; s < warmup_steps; ++s) {
            net.loss_and_gradients(inputs, targets, weight_decay, grads);
            state.step(net, grads);
        }
    }
    return grad_check(net, inputs, targets, weight_decay, h, floor);
}

// ---------------------------------------------------------------------------
// Split

Split split_811(std::span<const TrainingInstance> rows, std::uint64_t seed)
{
    if (rows.size() < 10)
        throw std::invalid_argument("split_811: need at least 10 instances");

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i)
        groups[rows[i].query_id].push_back(i);
    std::vector<std::size_t> keys;
    keys.reserve(groups.size());
    for (const auto& [q, _] : groups)
        keys.push_back(q);
    Rng rng(seed);
    shuffle(keys, rng);

    // Group boundaries in the concatenated order.
    std::vector<std::size_t> boundaries{0};
    for (auto q : keys)
        boundaries.push_back(boundaries.back() + groups[q].size());
    const std::size_t n = rows.size();
    auto snap = [&](std::size_t cut) {
        const auto it = std::lower_bound(boundaries.begin(), boundaries.end(), cut);
        if (it == boundaries.begin())
            return *it;
        const std::size_t above = *it;
        const std::size_t below = *(it - 1);
        return (cut - below <= above - cut) ? below : above;
    };
    const std::size_t cut_train = snap(n * 8 / 10);
    const std::size_t cut_val = std::max(cut_train, snap(n * 9 / 10));

    Split split;
    std::size_t position = 0;
    for (auto q : keys) {
        auto& target = position < cut_train ? split.train : (position < cut_val ? split.val : split.test);
        for (auto idx : groups[q])
            target.push_back(rows[idx]);
        position += groups[q].size();
    }
    return split;
}

// ---------------------------------------------------------------------------
// Grid search

std::size_t HyperGrid::cardinality() const
{
    return hidden_layers.size() * hidden_width.size() * activation.size() * batch_size.size() *
           learning_rate.size() * epochs.size() * optimizer.size() * weight_decay.size();
}

std::vector<std::pair<MlpConfig, TrainConfig>> HyperGrid::enumerate(std::uint64_t seed) const
{
    std::vector<std::pair<MlpConfig, TrainConfig>> out;
    out.reserve(cardinality());
    for (auto layers : hidden_layers)
        for (auto width : hidden_width)
            for (auto act : activation)
                for (auto bs : batch_size)
                    for (auto lr : learning_rate)
                        for (auto ep : epochs)
                            for (auto opt : optimizer)
                                for (auto wd : weight_decay) {
                                    MlpConfig m;
                                    m.hidden_layers = layers;
                                    m.hidden_width = width;
                                    m.activation = act;
                                    TrainConfig t;
                                    t.batch_size = bs;
                                    t.learning_rate = lr;
                                    t.epochs = ep;
                                    t.optimizer = opt;
                                    t.weight_decay = wd;
                                    t.seed = seed;
                                    out.emplace_back(m, t);
                                }
    return out;
}

HyperGrid HyperGrid::full()
{
    HyperGrid g;
    g.hidden_layers = {3, 4, 5};
    g.hidden_width = {64, 128, 256, 512};
    g.activation = {Activation::sigmoid, Activation::tanh, Activation::relu};
    g.batch_size = {16, 32, 64};
    g.learning_rate = {0.005, 0.001, 0.01};
    g.epochs = {20, 30, 40};
    g.optimizer = {Optimizer::adam, Optimizer::rmsprop, Optimizer::sgd};
    g.weight_decay = {0.0, 0.005, 0.001, 0.01};
    return g;
}

HyperGrid HyperGrid::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    HyperGrid g = full();
    auto read = [&](const char* name, auto& field) {
        if (j.contains(name))
            field = j.at(name).get<std::decay_t<decltype(field)>>();
    };
    read("hidden_layers", g.hidden_layers);
    read("hidden_width", g.hidden_width);
    read("batch_size", g.batch_size);
    read("learning_rate", g.learning_rate);
    read("epochs", g.epochs);
    read("weight_decay", g.weight_decay);
    if (j.contains("activation")) {
        g.activation.clear();
        for (const auto& a : j.at("activation"))
            g.activation.push_back(activation_from_name(a.get<std::string>()));
    }
    if (j.contains("optimizer")) {
        g.optimizer.clear();
        for (const auto& o : j.at("optimizer"))
            g.optimizer.push_back(optimizer_from_name(o.get<std::string>()));
    }
    if (g.cardinality() == 0)
        throw std::invalid_argument("grid: every hyperparameter needs at least one value");
    return g;
}

std::string config_key(const MlpConfig& mlp, const TrainConfig& tc)
{
    std::ostringstream key;
    key << "layers=" << mlp.hidden_layers << ",width=" << mlp.hidden_width << ",act=" << activation_name(mlp.activation)
        << ",batch=" << tc.batch_size << ",lr=" << format_double(tc.learning_rate) << ",epochs=" << tc.epochs
        << ",opt=" << optimizer_name(tc.optimizer) << ",wd=" << format_double(tc.weight_decay);
    return key.str();
}

const GridEntry& GridResult::best() const
{
    if (leaderboard.empty() || !leaderboard.front().val_mse)
        throw std::runtime_error("grid search: no configuration finished");
    return leaderboard.front();
}

std::string GridResult::to_tsv() const
{
    std::string out = "rank\tval_mse\tparameters\tconfig\tstatus\n";
    for (std::size_t i = 0; i < leaderboard.size(); ++i) {
        const auto& e = leaderboard[i];
        out += std::to_string(i + 1) + "\t" + (e.val_mse ? format_double(*e.val_mse) : "nan") + "\t" +
               std::to_string(e.parameters) + "\t" + e.key + "\t" + (e.error.empty() ? "ok" : e.error) + "\n";
    }
    return out;
}

GridResult grid_search(std::span<const TrainingInstance> train_set, std::span<const TrainingInstance> val_set,
                       const HyperGrid& grid, std::uint64_t seed, std::size_t threads)
{
    const auto configs = grid.enumerate(seed);
    if (configs.empty())
        throw std::invalid_argument("grid search: empty grid");

    std::vector<GridEntry> entries(configs.size());
    auto run_one = [&](std::size_t i) {
        auto& e = entries[i];
        e.mlp = configs[i].first;
        e.train = configs[i].second;
        e.key = config_key(e.mlp, e.train);
        Rng dummy(0);
        e.parameters = Mlp<double>(e.mlp, dummy).parameter_count();
        try {
            const auto result = train(train_set, val_set, e.mlp, e.train);
            e.val_mse = result.model.best_val_mse;
        } catch (const std::exception& ex) {
            e.error = ex.what();
        }
    };

    threads = std::max<std::size_t>(1, threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < configs.size(); ++i)
            run_one(i);
    } else {
        std::mutex mu;
        std::size_t next = 0;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard lock(mu);
                        if (next >= configs.size())
                            return;
                        i = next++;
                    }
                    run_one(i);
                }
            });
        }
        for (auto& th : pool)
            th.join();
    }

    std::sort(entries.begin(), entries.end(), [](const GridEntry& a, const GridEntry& b) {
        if (a.val_mse.has_value() != b.val_mse.has_value())
            return a.val_mse.has_value();
        if (a.val_mse && *a.val_mse != *b.val_mse)
            return *a.val_mse < *b.val_mse;
        if (a.val_mse && a.parameters != b.parameters)
            return a.parameters < b.parameters;
        return a.key < b.key;
    });
    GridResult result;
    result.leaderboard = std::move(entries);
    return result;
}

}  // namespace ctq
