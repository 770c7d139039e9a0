#pragma once

/// @file trainer.hpp Transfer training: the combined objective
///   J = NLL + lambda * MMD_mar(h(l-1)) + mu * MMD_con(p)
/// evaluated per paired batch, plain SGD on it, and the outer loop that
/// alternates training with re-labelling the target set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtn/batching.hpp"
#include "dtn/dataset.hpp"
#include "dtn/error.hpp"
#include "dtn/mmd.hpp"
#include "dtn/nn.hpp"

namespace dtn {

struct TrainConfig {
    double lambda = 10.0;            ///< marginal MMD weight
    double mu = 10.0;                ///< conditional MMD weight
    Index batch_size = 200;          ///< S, half source and half target
    int label_iters = 10;            ///< T, cap on pseudo-label refinements
    double learning_rate = 0.01;
    int epochs_per_iter = 10;
    int baseline_epochs = 10;        ///< epochs of the source-only network giving the first pseudo labels
    std::uint64_t seed = 0;
    bool target_nll = true;          ///< pseudo-labelled targets enter the likelihood term
    bool reshuffle_each_epoch = true;

    void validate() const {
        if (!(lambda >= 0.0) || !(mu >= 0.0)) throw ArgumentError("lambda and mu must be nonnegative");
        if (batch_size < 2 || batch_size % 2 != 0) throw ArgumentError("batch size must be even and >= 2");
        if (label_iters < 0) throw ArgumentError("label_iters must be nonnegative");
        if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
        if (epochs_per_iter < 0 || baseline_epochs < 0) throw ArgumentError("epoch counts must be nonnegative");
    }
};

/// Samples of one paired batch, one column per sample.
struct Batch {
    MatrixXd source_x;
    std::vector<int> source_y;
    MatrixXd target_x;
    std::vector<MaybeLabel> target_y;  ///< pseudo labels; empty entries are left out of the NLL
};

/// Features are column-per-sample (d x n).
inline Batch gather_batch(const MatrixXd& source_cols, std::span<const int> source_labels, const MatrixXd& target_cols,
                          std::span<const int> pseudo_labels, const PairedBatch& pb) {
    Batch b;
    b.source_x.resize(source_cols.rows(), static_cast<Index>(pb.source_indices.size()));
    b.target_x.resize(target_cols.rows(), static_cast<Index>(pb.target_indices.size()));
    for (std::size_t j = 0; j < pb.source_indices.size(); ++j) {
        b.source_x.col(static_cast<Index>(j)) = source_cols.col(pb.source_indices[j]);
        b.source_y.push_back(source_labels[static_cast<std::size_t>(pb.source_indices[j])]);
    }
    for (std::size_t j = 0; j < pb.target_indices.size(); ++j) {
        b.target_x.col(static_cast<Index>(j)) = target_cols.col(pb.target_indices[j]);
        if (pseudo_labels.empty())
            b.target_y.emplace_back();
        else
            b.target_y.emplace_back(pseudo_labels[static_cast<std::size_t>(pb.target_indices[j])]);
    }
    return b;
}

struct ObjectiveValue {
    double neg_log_likelihood = 0.0;  ///< -L
    double marginal_term = 0.0;       ///< lambda * MMD_mar
    double conditional_term = 0.0;    ///< mu * MMD_con
    double mmd_mar = 0.0;
    double mmd_con = 0.0;

    double total() const { return neg_log_likelihood + marginal_term + conditional_term; }

    ObjectiveValue& operator+=(const ObjectiveValue& o) {
        neg_log_likelihood += o.neg_log_likelihood;
        marginal_term += o.marginal_term;
        conditional_term += o.conditional_term;
        mmd_mar += o.mmd_mar;
        mmd_con += o.mmd_con;
        return *this;
    }
};

namespace detail {

struct BatchEvaluation {
    BatchTrace trace;  // source columns first, then target
    std::vector<MaybeLabel> labels;
    MmdTerms mmd;
    ObjectiveValue value;
};

inline BatchEvaluation evaluate_batch(const NetworkParams& params, const Architecture& specs, const Batch& batch,
                                      double lambda, double mu, bool target_nll) {
    const Index ns = batch.source_x.cols();
    const Index nt = batch.target_x.cols();
    if (ns < 1 || nt < 1) throw ArgumentError("batch needs at least one source and one target sample");
    if (batch.source_x.rows() != batch.target_x.rows()) throw ShapeError("source and target feature dims differ");
    if (static_cast<Index>(batch.source_y.size()) != ns || static_cast<Index>(batch.target_y.size()) != nt)
        throw ShapeError("batch label count does not match its sample count");

    MatrixXd inputs(batch.source_x.rows(), ns + nt);
    inputs << batch.source_x, batch.target_x;

    BatchEvaluation ev;
    ev.trace = forward_batch(params, specs, inputs);
    ev.labels.reserve(static_cast<std::size_t>(ns + nt));
    for (int y : batch.source_y) ev.labels.emplace_back(y);
    for (const auto& y : batch.target_y) ev.labels.push_back(target_nll ? y : std::nullopt);

    const MatrixXd& h = ev.trace.features();
    const MatrixXd& p = ev.trace.probs;
    ev.mmd = compute_mmd_terms(h.leftCols(ns), h.rightCols(nt), p.leftCols(ns), p.rightCols(nt));
    ev.value.neg_log_likelihood = nll(p, ev.labels);
    ev.value.mmd_mar = ev.mmd.mmd_mar;
    ev.value.mmd_con = ev.mmd.mmd_con;
    ev.value.marginal_term = lambda * ev.mmd.mmd_mar;
    ev.value.conditional_term = mu * ev.mmd.mmd_con;
    return ev;
}

inline GradientSet gradient_of(const NetworkParams& params, const Architecture& specs, const BatchEvaluation& ev,
                               double lambda, double mu) {
    MatrixXd grad_h(ev.mmd.grad_h.source.rows(), ev.trace.batch_size());
    grad_h << ev.mmd.grad_h.source, ev.mmd.grad_h.target;
    MatrixXd grad_p(ev.mmd.grad_p.source.rows(), ev.trace.batch_size());
    grad_p << ev.mmd.grad_p.source, ev.mmd.grad_p.target;
    return backprop(params, specs, ev.trace, ev.labels, grad_h, grad_p, lambda, mu);
}

}  // namespace detail

/// J over one batch, split into its three terms.
inline ObjectiveValue batch_objective(const NetworkParams& params, const Architecture& specs, const Batch& batch,
                                      const TrainConfig& config) {
    return detail::evaluate_batch(params, specs, batch, config.lambda, config.mu, config.target_nll).value;
}

/// dJ/dW over one batch with the MMD gradients injected at h(l-1) and p.
inline GradientSet objective_gradient(const NetworkParams& params, const Architecture& specs, const Batch& batch,
                                      const TrainConfig& config) {
    auto ev = detail::evaluate_batch(params, specs, batch, config.lambda, config.mu, config.target_nll);
    return detail::gradient_of(params, specs, ev, config.lambda, config.mu);
}

inline NetworkParams apply_update(const NetworkParams& params, const GradientSet& grad, double learning_rate) {
    NetworkParams next = params;
    for (std::size_t k = 0; k < next.weights.size(); ++k) {
        next.weights[k] -= learning_rate * grad.weights[k];
        next.biases[k] -= learning_rate * grad.biases[k];
    }
    return next;
}

/// One SGD step. Returns the objective at the parameters before the update.
/// On a non-finite result `params` is left untouched and NumericalError is thrown.
inline ObjectiveValue sgd_step(NetworkParams& params, const Architecture& specs, const Batch& batch,
                               const TrainConfig& config) {
    auto ev = detail::evaluate_batch(params, specs, batch, config.lambda, config.mu, config.target_nll);
    if (!std::isfinite(ev.value.total())) throw NumericalError("sgd_step: objective is not finite");
    GradientSet grad = detail::gradient_of(params, specs, ev, config.lambda, config.mu);
    NetworkParams next = apply_update(params, grad, config.learning_rate);
    if (!next.all_finite()) throw NumericalError("sgd_step: update produced non-finite parameters");
    params = std::move(next);
    return ev.value;
}

/// argmax of the softmax output per row of `features`; ties go to the lowest class.
inline std::vector<int> predict(const NetworkParams& params, const Architecture& specs, const MatrixXd& features) {
    if (features.cols() != specs.front().input_dim)
        throw ShapeError("predict: features have dim " + std::to_string(features.cols()) + ", network expects " +
                         std::to_string(specs.front().input_dim));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(features.rows()));
    constexpr Index chunk = 4096;
    for (Index start = 0; start < features.rows(); start += chunk) {
        Index len = std::min(chunk, features.rows() - start);
        BatchTrace t = forward_batch(params, specs, features.middleRows(start, len).transpose());
        for (Index j = 0; j < len; ++j) out.push_back(argmax(t.probs.col(j)));
    }
    return out;
}

inline std::vector<int> predict(const NetworkParams& params, const Architecture& specs, const DomainDataset& d) {
    return predict(params, specs, d.features);
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
    if (predicted.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline Index hamming(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ShapeError("hamming: length mismatch");
    Index n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

struct EpochRecord {
    int iteration = 0;  ///< 0 is the source-only baseline
    int epoch = 0;
    ObjectiveValue objective;  ///< summed over the epoch's batches, before each step
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<int> baseline_labels;     ///< pseudo labels from the source-only network
    std::vector<Index> label_changes;     ///< Hamming distance to the previous labels, per refinement
    std::vector<double> target_accuracy;  ///< per label iteration, baseline first; only with evaluation labels
    std::vector<EpochRecord> epochs;
    std::vector<int> final_labels;
    int iterations = 0;  ///< refinements executed, excluding the baseline
    std::optional<std::string> failure;
};

struct FitResult {
    NetworkParams params;
    TrainReport report;
};

namespace detail {

inline void check_fit_inputs(const DomainDataset& source, const DomainDataset& target, const Architecture& specs) {
    validate(specs);
    if (source.size() == 0 || target.size() == 0) throw ArgumentError("fit: empty dataset");
    if (!source.labels) throw ArgumentError("fit: the source dataset must be labeled");
    source.validate();
    target.validate();
    if (source.dim() != specs.front().input_dim || target.dim() != specs.front().input_dim)
        throw ShapeError("fit: dataset dims (" + std::to_string(source.dim()) + ", " + std::to_string(target.dim()) +
                         ") do not match network input dim " + std::to_string(specs.front().input_dim));
    if (label_count(source) > num_classes(specs))
        throw ArgumentError("fit: source labels exceed the " + std::to_string(num_classes(specs)) + " output classes");
}

template <class Clock = std::chrono::steady_clock>
inline double seconds_since(typename Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Source-only SGD on NLL; shuffled passes in chunks of S/2.
inline void train_source_epochs(NetworkParams& params, const Architecture& specs, const MatrixXd& source_cols,
                                std::span<const int> labels, const TrainConfig& config, Rng& rng, int epochs,
                                std::vector<EpochRecord>* log) {
    TrainConfig plain = config;
    plain.lambda = 0.0;
    plain.mu = 0.0;
    const Index n = source_cols.cols();
    const Index half = config.batch_size / 2;
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int e = 0; e < epochs; ++e) {
        auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        ObjectiveValue sum;
        for (Index lo = 0; lo < n; lo += half) {
            Index hi = std::min(lo + half, n);
            const Index m = hi - lo;
            MatrixXd x(source_cols.rows(), m);
            std::vector<MaybeLabel> y;
            for (Index j = 0; j < m; ++j) {
                Index idx = order[static_cast<std::size_t>(lo + j)];
                x.col(j) = source_cols.col(idx);
                y.emplace_back(labels[static_cast<std::size_t>(idx)]);
            }
            BatchTrace t = forward_batch(params, specs, x);
            double loss = nll(t.probs, y);
            if (!std::isfinite(loss)) throw NumericalError("baseline: objective is not finite");
            GradientSet g = backprop(params, specs, t, y, MatrixXd(), MatrixXd(), 0.0, 0.0);
            NetworkParams next = apply_update(params, g, plain.learning_rate);
            if (!next.all_finite()) throw NumericalError("baseline: update produced non-finite parameters");
            params = std::move(next);
            sum.neg_log_likelihood += loss;
        }
        if (log) log->push_back({0, e, sum, seconds_since(start)});
    }
}

}  // namespace detail

/// Non-transfer reference: a plain MLP trained on the labeled source set only.
/// This is also the network fit() uses to produce the first pseudo labels.
inline NetworkParams train_source_only(const DomainDataset& source, const Architecture& specs,
                                       const TrainConfig& config) {
    validate(specs);
    config.validate();
    if (!source.labels || source.size() == 0) throw ArgumentError("train_source_only: need a labeled source set");
    Rng rng(config.seed);
    NetworkParams params = init_params(specs, rng);
    MatrixXd cols = source.features.transpose();
    detail::train_source_epochs(params, specs, cols, *source.labels, config, rng, config.baseline_epochs, nullptr);
    return params;
}

/**
 * Full adaptation run.
 *
 * 1. Train the source-only baseline and label the target set with it.
 * 2. Up to `label_iters` times: build paired batches, run `epochs_per_iter`
 *    epochs of SGD on J using the current pseudo labels, then relabel the
 *    target set. Stop early once the labels no longer change.
 *
 * Weights carry over between refinements. Target labels, if present, are
 * only used to fill `target_accuracy`. A numerical failure ends the run and
 * is recorded in `report.failure`; the parameters from the last good step are
 * returned.
 */
inline FitResult fit(const DomainDataset& source, const DomainDataset& target, const Architecture& specs,
                     const TrainConfig& config) {
    config.validate();
    detail::check_fit_inputs(source, target, specs);

    FitResult result;
    TrainReport& report = result.report;
    Rng rng(config.seed);
    result.params = init_params(specs, rng);
    const MatrixXd source_cols = source.features.transpose();
    const MatrixXd target_cols = target.features.transpose();
    const std::vector<int>& source_labels = *source.labels;
    const bool evaluate = target.labels.has_value();
    auto record_accuracy = [&](const std::vector<int>& predicted) {
        if (evaluate) report.target_accuracy.push_back(accuracy(predicted, *target.labels));
    };

    try {
        detail::train_source_epochs(result.params, specs, source_cols, source_labels, config, rng,
                                    config.baseline_epochs, &report.epochs);
    } catch (const NumericalError& e) {
        report.failure = e.what();
        return result;
    }
    report.baseline_labels = predict(result.params, specs, target.features);
    record_accuracy(report.baseline_labels);
    std::vector<int> labels = report.baseline_labels;

    for (int it = 1; it <= config.label_iters; ++it) {
        BatchPlan plan;
        try {
            for (int e = 0; e < config.epochs_per_iter; ++e) {
                auto start = std::chrono::steady_clock::now();
                if (e == 0 || config.reshuffle_each_epoch) plan = build_plan(source.size(), target.size(), config.batch_size, rng());
                ObjectiveValue sum;
                for (const auto& pb : plan.batches) {
                    Batch b = gather_batch(source_cols, source_labels, target_cols, labels, pb);
                    sum += sgd_step(result.params, specs, b, config);
                }
                report.epochs.push_back({it, e, sum, detail::seconds_since(start)});
            }
        } catch (const NumericalError& e) {
            report.failure = e.what();
            break;
        }
        std::vector<int> next = predict(result.params, specs, target.features);
        report.label_changes.push_back(hamming(next, labels));
        record_accuracy(next);
        report.iterations = it;
        bool fixed_point = next == labels;
        labels = std::move(next);
        if (fixed_point) break;
    }
    report.final_labels = std::move(labels);
    return result;
}

}  // namespace dtn
