#pragma once

/// @file nn.hpp Fully-connected network: tanh/sigmoid feature layers topped by a
/// softmax discrimination layer, with gradient injection at the last hidden
/// layer and at the softmax output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtn/error.hpp"

namespace dtn {

using Rng = std::mt19937_64;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-sample label; empty for unlabeled samples.
using MaybeLabel = std::optional<int>;

enum class Activation { Tanh, Sigmoid, SoftmaxOutput };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::SoftmaxOutput: return "softmax";
    }
    return "unknown";
}

inline Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "softmax") return Activation::SoftmaxOutput;
    throw ArgumentError("unknown activation '" + name + "'");
}

struct LayerSpec {
    Index input_dim = 0;
    Index output_dim = 0;
    Activation activation = Activation::Tanh;

    bool operator==(const LayerSpec&) const = default;
};

using Architecture = std::vector<LayerSpec>;

/// Check the chaining and activation rules of a layer list.
inline void validate(const Architecture& specs) {
    if (specs.empty()) throw ArgumentError("architecture has no layers");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        if (s.input_dim <= 0 || s.output_dim <= 0)
            throw ShapeError("layer " + std::to_string(i) + " has a non-positive dimension");
        bool last = i + 1 == specs.size();
        if (last != (s.activation == Activation::SoftmaxOutput))
            throw ArgumentError("layer " + std::to_string(i) +
                                (last ? " must be the softmax output layer"
                                      : " is a hidden layer and cannot use softmax"));
        if (!last && specs[i + 1].input_dim != s.output_dim)
            throw ShapeError("layer " + std::to_string(i + 1) + " expects input dim " +
                             std::to_string(specs[i + 1].input_dim) + " but layer " +
                             std::to_string(i) + " produces " + std::to_string(s.output_dim));
    }
}

/// input -> hidden[0] -> ... -> hidden[k-1] -> softmax(classes)
inline Architecture make_mlp(Index input_dim, std::span<const Index> hidden, Index classes,
                             Activation hidden_activation = Activation::Tanh) {
    Architecture specs;
    Index prev = input_dim;
    for (Index h : hidden) {
        specs.push_back({prev, h, hidden_activation});
        prev = h;
    }
    specs.push_back({prev, classes, Activation::SoftmaxOutput});
    validate(specs);
    return specs;
}

inline Index num_classes(const Architecture& specs) { return specs.back().output_dim; }

/// Dimension of h(l-1), the input of the softmax layer.
inline Index feature_dim(const Architecture& specs) { return specs.back().input_dim; }

/// Weights are (output_dim x input_dim), one bias vector per layer.
struct NetworkParams {
    std::vector<MatrixXd> weights;
    std::vector<VectorXd> biases;

    std::size_t num_layers() const { return weights.size(); }

    Index num_parameters() const {
        Index n = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
        return n;
    }

    bool all_finite() const {
        for (std::size_t k = 0; k < weights.size(); ++k)
            if (!weights[k].allFinite() || !biases[k].allFinite()) return false;
        return true;
    }

    bool operator==(const NetworkParams& o) const {
        if (weights.size() != o.weights.size()) return false;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            if (weights[k].rows() != o.weights[k].rows() || weights[k].cols() != o.weights[k].cols() ||
                biases[k].size() != o.biases[k].size())
                return false;
            if (weights[k] != o.weights[k] || biases[k] != o.biases[k]) return false;
        }
        return true;
    }
};

/// Same layout as NetworkParams; holds dJ/dW and dJ/db.
struct GradientSet {
    std::vector<MatrixXd> weights;
    std::vector<VectorXd> biases;

    static GradientSet zeros_like(const NetworkParams& p) {
        GradientSet g;
        for (std::size_t k = 0; k < p.weights.size(); ++k) {
            g.weights.push_back(MatrixXd::Zero(p.weights[k].rows(), p.weights[k].cols()));
            g.biases.push_back(VectorXd::Zero(p.biases[k].size()));
        }
        return g;
    }
};

inline void check_params(const NetworkParams& params, const Architecture& specs) {
    if (params.weights.size() != specs.size() || params.biases.size() != specs.size())
        throw ShapeError("parameter list has " + std::to_string(params.weights.size()) +
                         " layers, architecture has " + std::to_string(specs.size()));
    for (std::size_t k = 0; k < specs.size(); ++k) {
        if (params.weights[k].rows() != specs[k].output_dim ||
            params.weights[k].cols() != specs[k].input_dim ||
            params.biases[k].size() != specs[k].output_dim)
            throw ShapeError("layer " + std::to_string(k) + " parameters do not match its spec");
    }
}

/// Glorot-uniform weights, zero biases.
inline NetworkParams init_params(const Architecture& specs, Rng& rng) {
    validate(specs);
    NetworkParams p;
    for (const auto& s : specs) {
        double limit = std::sqrt(6.0 / static_cast<double>(s.input_dim + s.output_dim));
        std::uniform_real_distribution<double> dist(-limit, limit);
        MatrixXd w(s.output_dim, s.input_dim);
        // column-major fill order is part of the reproducibility contract
        for (Index j = 0; j < w.cols(); ++j)
            for (Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
        p.weights.push_back(std::move(w));
        p.biases.push_back(VectorXd::Zero(s.output_dim));
    }
    return p;
}

inline VectorXd softmax(const VectorXd& z) {
    if (z.size() == 0) throw ArgumentError("softmax of an empty vector");
    VectorXd e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

/// Column-wise softmax.
inline MatrixXd softmax_columns(const MatrixXd& z) {
    if (z.rows() == 0) throw ArgumentError("softmax of an empty vector");
    MatrixXd out(z.rows(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) {
        auto e = (z.col(j).array() - z.col(j).maxCoeff()).exp();
        out.col(j) = e / e.sum();
    }
    return out;
}

namespace detail {

inline void apply_activation(Activation a, MatrixXd& m) {
    switch (a) {
        case Activation::Tanh: m = m.array().tanh(); break;
        case Activation::Sigmoid: m = (1.0 + (-m.array()).exp()).inverse(); break;
        case Activation::SoftmaxOutput: m = softmax_columns(m); break;
    }
}

// f'(a) expressed through the output h = f(a)
inline MatrixXd activation_derivative(Activation a, const MatrixXd& h) {
    switch (a) {
        case Activation::Tanh: return (1.0 - h.array().square()).matrix();
        case Activation::Sigmoid: return (h.array() * (1.0 - h.array())).matrix();
        case Activation::SoftmaxOutput: break;
    }
    throw ArgumentError("softmax has no elementwise derivative");
}

}  // namespace detail

/// Single-sample forward pass.
struct ForwardTrace {
    VectorXd input;
    std::vector<VectorXd> hidden;  ///< h(1) ... h(l-1)
    VectorXd probs;                ///< p, length C

    /// h(l-1); the raw input when the net has no hidden layer.
    const VectorXd& features() const { return hidden.empty() ? input : hidden.back(); }
};

/// Forward pass over a batch stored column-per-sample.
struct BatchTrace {
    std::vector<MatrixXd> activations;  ///< [0] is the input, [k] is h(k)
    MatrixXd probs;                     ///< C x B

    const MatrixXd& features() const { return activations.back(); }
    Index batch_size() const { return probs.cols(); }
};

inline BatchTrace forward_batch(const NetworkParams& params, const Architecture& specs,
                                const MatrixXd& inputs) {
    check_params(params, specs);
    if (inputs.rows() != specs.front().input_dim)
        throw ShapeError("layer 0 expects input dim " + std::to_string(specs.front().input_dim) +
                         ", got " + std::to_string(inputs.rows()));
    BatchTrace t;
    t.activations.reserve(specs.size());
    t.activations.push_back(inputs);
    for (std::size_t k = 0; k < specs.size(); ++k) {
        MatrixXd z = params.weights[k] * t.activations.back();
        z.colwise() += params.biases[k];
        detail::apply_activation(specs[k].activation, z);
        if (k + 1 == specs.size())
            t.probs = std::move(z);
        else
            t.activations.push_back(std::move(z));
    }
    return t;
}

inline ForwardTrace forward(const NetworkParams& params, const Architecture& specs, const VectorXd& x) {
    BatchTrace bt = forward_batch(params, specs, x);
    ForwardTrace t;
    t.input = x;
    for (std::size_t k = 1; k < bt.activations.size(); ++k) t.hidden.push_back(bt.activations[k].col(0));
    t.probs = bt.probs.col(0);
    return t;
}

/// Floor applied to probabilities inside the log.
inline constexpr double kLogFloor = 1e-12;

/// Summed negative log-likelihood over the labeled columns of `probs`.
inline double nll(const MatrixXd& probs, std::span<const MaybeLabel> labels) {
    if (static_cast<Index>(labels.size()) != probs.cols())
        throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.cols()) + " samples");
    double total = 0.0;
    for (Index j = 0; j < probs.cols(); ++j) {
        const auto& y = labels[static_cast<std::size_t>(j)];
        if (!y) continue;
        if (*y < 0 || *y >= probs.rows())
            throw ArgumentError("nll: label " + std::to_string(*y) + " of sample " + std::to_string(j) +
                                " outside [0, " + std::to_string(probs.rows()) + ")");
        total -= std::log(std::max(probs(*y, j), kLogFloor));
    }
    return total;
}

inline double nll(std::span<const ForwardTrace> traces, std::span<const int> labels) {
    if (traces.size() != labels.size()) throw ShapeError("nll: traces and labels differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& p = traces[i].probs;
        if (labels[i] < 0 || labels[i] >= p.size())
            throw ArgumentError("nll: label " + std::to_string(labels[i]) + " of sample " +
                                std::to_string(i) + " outside [0, " + std::to_string(p.size()) + ")");
        total -= std::log(std::max(p(labels[i]), kLogFloor));
    }
    return total;
}

/**
 * Gradient of  NLL(labeled samples) + lambda * <extra_grad_h, h(l-1)> + mu * <extra_grad_p, p>
 * with the two extra terms treated as externally supplied derivatives at h(l-1) and p.
 *
 * `extra_grad_h` is (feature_dim x B) and `extra_grad_p` is (C x B); either may be
 * empty (0 columns) to skip that term. When the net has no hidden layer h(l-1) is
 * the input and the marginal term does not reach any parameter.
 */
inline GradientSet backprop(const NetworkParams& params, const Architecture& specs, const BatchTrace& trace,
                            std::span<const MaybeLabel> labels, const MatrixXd& extra_grad_h,
                            const MatrixXd& extra_grad_p, double lambda, double mu) {
    check_params(params, specs);
    const Index batch = trace.batch_size();
    const Index classes = num_classes(specs);
    if (static_cast<Index>(labels.size()) != batch)
        throw ShapeError("backprop: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " samples");
    const bool has_h = extra_grad_h.cols() > 0;
    const bool has_p = extra_grad_p.cols() > 0;
    if (has_h && (extra_grad_h.rows() != feature_dim(specs) || extra_grad_h.cols() != batch))
        throw ShapeError("backprop: extra gradient at h(l-1) has the wrong shape");
    if (has_p && (extra_grad_p.rows() != classes || extra_grad_p.cols() != batch))
        throw ShapeError("backprop: extra gradient at p has the wrong shape");

    const MatrixXd& p = trace.probs;
    MatrixXd delta = MatrixXd::Zero(classes, batch);
    if (has_p && mu != 0.0) {
        // softmax Jacobian-vector product: p * (g - <p, g>)
        for (Index j = 0; j < batch; ++j) {
            double dot = p.col(j).dot(extra_grad_p.col(j));
            delta.col(j) = mu * (p.col(j).array() * (extra_grad_p.col(j).array() - dot)).matrix();
        }
    }
    for (Index j = 0; j < batch; ++j) {
        const auto& y = labels[static_cast<std::size_t>(j)];
        if (!y) continue;
        if (*y < 0 || *y >= classes)
            throw ArgumentError("backprop: label " + std::to_string(*y) + " outside [0, " +
                                std::to_string(classes) + ")");
        delta.col(j) += p.col(j);
        delta(*y, j) -= 1.0;
    }

    GradientSet g;
    const std::size_t layers = specs.size();
    g.weights.resize(layers);
    g.biases.resize(layers);
    for (std::size_t k = layers; k-- > 0;) {
        if (!delta.allFinite())
            throw NumericalError("backprop: non-finite gradient at layer " + std::to_string(k));
        g.weights[k] = delta * trace.activations[k].transpose();
        g.biases[k] = delta.rowwise().sum();
        if (k == 0) break;
        MatrixXd grad_h = params.weights[k].transpose() * delta;
        if (k + 1 == layers && has_h && lambda != 0.0) grad_h += lambda * extra_grad_h;
        delta = grad_h.cwiseProduct(detail::activation_derivative(specs[k - 1].activation, trace.activations[k]));
    }
    return g;
}

inline GradientSet backprop(const NetworkParams& params, const Architecture& specs, const MatrixXd& inputs,
                            std::span<const MaybeLabel> labels, const MatrixXd& extra_grad_h,
                            const MatrixXd& extra_grad_p, double lambda, double mu) {
    return backprop(params, specs, forward_batch(params, specs, inputs), labels, extra_grad_h, extra_grad_p,
                    lambda, mu);
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(const Eigen::Ref<const VectorXd>& v) {
    int best = 0;
    for (Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = static_cast<int>(i);
    return best;
}

}  // namespace dtn
