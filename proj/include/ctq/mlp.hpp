#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ctq/rng.hpp"

namespace ctq {

enum class Activation { sigmoid, tanh, relu };
enum class Optimizer { sgd, adam, rmsprop };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);
std::string_view optimizer_name(Optimizer o);
Optimizer optimizer_from_name(std::string_view name);

struct MlpConfig {
    std::size_t hidden_layers = 3;
    std::size_t hidden_width = 128;
    Activation activation = Activation::relu;
    std::size_t input_dim = 12;
    std::size_t output_dim = 1;
    /// Start the output layer at zero instead of the random init.
    bool zero_init_output = false;

    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

class NumericOverflow : public std::runtime_error {
public:
    NumericOverflow(std::size_t layer)
        : std::runtime_error("numeric overflow in layer " + std::to_string(layer)), layer_(layer)
    {
    }
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

template <typename Scalar>
struct DenseLayer {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix weight;  // out x in
    Vector bias;    // out
};

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation a)
{
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    switch (a) {
    case Activation::sigmoid:
        return Plain(z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); }));
    case Activation::tanh:
        return Plain(z.array().tanh().matrix());
    case Activation::relu:
        break;
    }
    return Plain(z.cwiseMax(Scalar(0)));
}

/// Derivative of the activation expressed through its output `h` and
/// pre-activation `z`.
template <typename DerivedH, typename DerivedZ>
auto activation_slope(const Eigen::MatrixBase<DerivedH>& h, const Eigen::MatrixBase<DerivedZ>& z, Activation a)
{
    using Scalar = typename DerivedH::Scalar;
    using Plain = typename DerivedH::PlainObject;
    switch (a) {
    case Activation::sigmoid:
        return Plain(h.array() * (Scalar(1) - h.array()));
    case Activation::tanh:
        return Plain(Scalar(1) - h.array().square());
    case Activation::relu:
        break;
    }
    return Plain((z.array() > Scalar(0)).template cast<Scalar>());
}

/// Feed-forward regression network: affine + activation per hidden layer and a
/// final affine output with no activation. Inputs are column-major batches
/// (features x batch).
template <typename Scalar>
class Mlp {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
    using Layer = DenseLayer<Scalar>;

    struct Gradients {
        std::vector<Matrix> weight;
        std::vector<Vector> bias;
    };

    Mlp() = default;

    Mlp(const MlpConfig& config, Rng& rng) : config_(config)
    {
        if (config.hidden_layers == 0 || config.hidden_width == 0 || config.input_dim == 0 || config.output_dim == 0)
            throw std::invalid_argument("mlp: layer sizes must be >= 1");
        std::size_t fan_in = config.input_dim;
        for (std::size_t l = 0; l <= config.hidden_layers; ++l) {
            const bool output = l == config.hidden_layers;
            const std::size_t fan_out = output ? config.output_dim : config.hidden_width;
            const double limit = config.activation == Activation::relu
                                     ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                     : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Layer layer;
            layer.weight.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
            layer.bias = Vector::Zero(static_cast<Eigen::Index>(fan_out));
            // Fill row-major so the draw order matches the on-disk layout.
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
                    layer.weight(r, c) = static_cast<Scalar>(uniform_real(rng, -limit, limit));
            if (output && config.zero_init_output)
                layer.weight.setZero();
            layers_.push_back(std::move(layer));
            fan_in = fan_out;
        }
    }

    Mlp(const MlpConfig& config, std::vector<Layer> layers) : config_(config), layers_(std::move(layers))
    {
        check_shapes();
    }

    const MlpConfig& config() const { return config_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& l : layers_)
            n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    void check_shapes() const
    {
        if (layers_.size() != config_.hidden_layers + 1)
            throw std::invalid_argument("mlp: layer count does not match config");
        Eigen::Index fan_in = static_cast<Eigen::Index>(config_.input_dim);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            const bool output = l + 1 == layers_.size();
            const auto fan_out = static_cast<Eigen::Index>(output ? config_.output_dim : config_.hidden_width);
            if (layer.weight.cols() != fan_in || layer.weight.rows() != fan_out || layer.bias.size() != fan_out)
                throw std::invalid_argument("mlp: layer " + std::to_string(l) + " has inconsistent shape");
            fan_in = fan_out;
        }
    }

    /// Output for a batch; throws NumericOverflow naming the first layer that
    /// produced a non-finite value.
    Matrix forward(const Matrix& inputs) const
    {
        Matrix h = inputs;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Matrix z = (layers_[l].weight * h).colwise() + layers_[l].bias;
            h = l + 1 == layers_.size() ? z : activate(z, config_.activation);
            if (!h.allFinite())
                throw NumericOverflow(l);
        }
        return h;
    }

    /// Mean squared error of the first output against `targets`, plus
    /// weight_decay * sum(W^2) / 2 over weight matrices (biases excluded).
    Scalar loss(const Matrix& inputs, const RowVector& targets, Scalar weight_decay = Scalar(0)) const
    {
        Matrix out;
        try {
            out = forward(inputs);
        } catch (const NumericOverflow&) {
            return std::numeric_limits<Scalar>::quiet_NaN();
        }
        const RowVector diff = out.row(0) - targets;
        Scalar value = diff.squaredNorm() / static_cast<Scalar>(targets.size());
        if (weight_decay != Scalar(0))
            value += weight_decay * decay_norm() / Scalar(2);
        return value;
    }

    Scalar decay_norm() const
    {
        Scalar total(0);
        for (const auto& l : layers_)
            total += l.weight.squaredNorm();
        return total;
    }

    /// Backpropagates the loss above; returns the loss value. Non-finite
    /// activations yield a NaN loss and leave `grads` unspecified.
    Scalar loss_and_gradients(const Matrix& inputs, const RowVector& targets, Scalar weight_decay,
                              Gradients& grads) const
    {
        const std::size_t depth = layers_.size();
        std::vector<Matrix> pre(depth);
        std::vector<Matrix> post(depth + 1);
        post[0] = inputs;
        for (std::size_t l = 0; l < depth; ++l) {
            pre[l] = (layers_[l].weight * post[l]).colwise() + layers_[l].bias;
            post[l + 1] = l + 1 == depth ? pre[l] : activate(pre[l], config_.activation);
        }
        if (!post[depth].allFinite())
            return std::numeric_limits<Scalar>::quiet_NaN();

        const auto batch = static_cast<Scalar>(targets.size());
        Matrix delta = Matrix::Zero(post[depth].rows(), post[depth].cols());
        const RowVector diff = post[depth].row(0) - targets;
        delta.row(0) = Scalar(2) * diff / batch;
        Scalar value = diff.squaredNorm() / batch;
        if (weight_decay != Scalar(0))
            value += weight_decay * decay_norm() / Scalar(2);

        grads.weight.resize(depth);
        grads.bias.resize(depth);
        for (std::size_t l = depth; l-- > 0;) {
            if (l + 1 != depth)
                delta = delta.cwiseProduct(activation_slope(post[l + 1], pre[l], config_.activation));
            grads.weight[l] = delta * post[l].transpose();
            if (weight_decay != Scalar(0))
                grads.weight[l] += weight_decay * layers_[l].weight;
            grads.bias[l] = delta.rowwise().sum();
            if (l > 0)
                delta = layers_[l].weight.transpose() * delta;
        }
        return value;
    }

private:
    MlpConfig config_;
    std::vector<Layer> layers_;
};

/// Per-parameter optimizer state. Adam uses beta1 0.9, beta2 0.999, eps 1e-8
/// with bias correction; RMSProp uses rho 0.9, eps 1e-8.
template <typename Scalar>
class OptimizerState {
public:
    using Net = Mlp<Scalar>;

    OptimizerState(Optimizer kind, Scalar learning_rate, const Net& net) : kind_(kind), lr_(learning_rate)
    {
        for (const auto& l : net.layers()) {
            first_w_.push_back(Net::Matrix::Zero(l.weight.rows(), l.weight.cols()));
            first_b_.push_back(Net::Vector::Zero(l.bias.size()));
        }
        second_w_ = first_w_;
        second_b_ = first_b_;
    }

    void step(Net& net, const typename Net::Gradients& grads)
    {
        ++t_;
        auto& layers = net.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            update(layers[l].weight, grads.weight[l], first_w_[l], second_w_[l]);
            update(layers[l].bias, grads.bias[l], first_b_[l], second_b_[l]);
        }
    }

private:
    template <typename Param, typename Grad, typename State>
    void update(Param& param, const Grad& grad, State& m, State& v)
    {
        constexpr Scalar eps = Scalar(1e-8);
        switch (kind_) {
        case Optimizer::sgd:
            param -= lr_ * grad;
            return;
        case Optimizer::adam: {
            constexpr Scalar beta1 = Scalar(0.9);
            constexpr Scalar beta2 = Scalar(0.999);
            m = beta1 * m + (Scalar(1) - beta1) * grad;
            v = beta2 * v + (Scalar(1) - beta2) * grad.cwiseAbs2();
            const Scalar c1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t_));
            const Scalar c2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t_));
            param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
            return;
        }
        case Optimizer::rmsprop: {
            constexpr Scalar rho = Scalar(0.9);
            v = rho * v + (Scalar(1) - rho) * grad.cwiseAbs2();
            param.array() -= lr_ * grad.array() / (v.array().sqrt() + eps);
            return;
        }
        }
    }

    Optimizer kind_;
    Scalar lr_;
    long t_ = 0;
    std::vector<typename Net::Matrix> first_w_, second_w_;
    std::vector<typename Net::Vector> first_b_, second_b_;
};

}  // namespace ctq
