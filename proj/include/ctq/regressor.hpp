#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctq/features.hpp"
#include "ctq/mlp.hpp"

namespace ctq {

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double learning_rate = 0.001;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    bool shuffle = true;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainingInstance {
    std::size_t query_id = 0;
    std::size_t candidate_id = 0;
    FeatureVector features;
    double ctq = 0.0;
};

/// Per-feature z-score statistics. Zero-variance features keep std 1.
struct Normalization {
    std::array<double, kFeatureCount> mean{};
    std::array<double, kFeatureCount> std{};
    std::array<bool, kFeatureCount> zero_variance{};

    Eigen::Matrix<double, kFeatureCount, 1> apply(const FeatureVector& fv) const;

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

Normalization normalize_fit(std::span<const FeatureVector> rows);
Normalization normalize_fit(std::span<const TrainingInstance> rows);
Eigen::Matrix<double, kFeatureCount, 1> normalize_apply(const Normalization& stats, const FeatureVector& fv);

class DivergedError : public std::runtime_error {
public:
    explicit DivergedError(std::size_t epoch)
        : std::runtime_error("diverged at epoch " + std::to_string(epoch)), epoch_(epoch)
    {
    }
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

/// A trained CTQ scorer: normalization followed by the regression network.
struct CtqModel {
    Mlp<double> net;
    Normalization normalization;
    TrainConfig train_config;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;

    double predict(const FeatureVector& fv) const;
    std::vector<double> predict(std::span<const FeatureVector> rows) const;

    std::string serialize() const;
    static CtqModel deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static CtqModel load(const std::filesystem::path& path);
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainResult {
    CtqModel model;
    /// Entry 0 is the untrained network; entry e is after e epochs.
    std::vector<EpochStats> history;
};

/// Mini-batch training on MSE. Returns the parameters of the epoch with the
/// lowest validation MSE. Throws DivergedError on a non-finite loss.
TrainResult train(std::span<const TrainingInstance> train_set, std::span<const TrainingInstance> val_set,
                  const MlpConfig& mlp, const TrainConfig& tc);

double mean_squared_error(const CtqModel& model, std::span<const TrainingInstance> rows);

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t parameters_checked = 0;
    /// Absolute values of the largest analytic gradient entry, for context.
    double max_abs_gradient = 0.0;
};

/// Compares backprop gradients against central differences (step `h`) for
/// every parameter. The relative error of one entry is
/// |a - n| / max(|a|, |n|, floor). Below the floor the difference quotient is
/// dominated by rounding (about eps * loss / h), so tiny entries are compared
/// absolutely. With `warmup_steps` > 0 the network first
/// takes that many optimizer steps on the batch so the check runs at a point
/// on that optimizer's trajectory.
GradCheckResult grad_check(const MlpConfig& mlp, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                           double weight_decay = 0.0, std::uint64_t seed = 0, Optimizer optimizer = Optimizer::sgd,
                           std::size_t warmup_steps = 0, double learning_rate = 0.001, double h = 1e-5,
                           double floor = 1e-4);

GradCheckResult grad_check(const Mlp<double>& net, const Eigen::MatrixXd& inputs, const Eigen::RowVectorXd& targets,
                           double weight_decay = 0.0, double h = 1e-5, double floor = 1e-4);

struct Split {
    std::vector<TrainingInstance> train;
    std::vector<TrainingInstance> val;
    std::vector<TrainingInstance> test;
};

/// Seeded 8:1:1 split that keeps all rows of a query in one part. Query
/// groups are shuffled, laid out back to back, and each cut at floor(0.8n)
/// and floor(0.9n) is moved to the nearest group boundary.
Split split_811(std::span<const TrainingInstance> rows, std::uint64_t seed);

struct HyperGrid {
    std::vector<std::size_t> hidden_layers;
    std::vector<std::size_t> hidden_width;
    std::vector<Activation> activation;
    std::vector<std::size_t> batch_size;
    std::vector<double> learning_rate;
    std::vector<std::size_t> epochs;
    std::vector<Optimizer> optimizer;
    std::vector<double> weight_decay;

    std::size_t cardinality() const;
    std::vector<std::pair<MlpConfig, TrainConfig>> enumerate(std::uint64_t seed) const;

    static HyperGrid full();
    static HyperGrid from_json(const std::string& text);
};

std::string config_key(const MlpConfig& mlp, const TrainConfig& tc);

struct GridEntry {
    MlpConfig mlp;
    TrainConfig train;
    std::string key;
    std::size_t parameters = 0;
    std::optional<double> val_mse;
    std::string error;
};

struct GridResult {
    /// Sorted: finite val MSE ascending, then fewer parameters, then key.
    /// Failed runs follow in key order.
    std::vector<GridEntry> leaderboard;

    const GridEntry& best() const;
    std::string to_tsv() const;
};

GridResult grid_search(std::span<const TrainingInstance> train_set, std::span<const TrainingInstance> val_set,
                       const HyperGrid& grid, std::uint64_t seed = 0, std::size_t threads = 1);

}  // namespace ctq
