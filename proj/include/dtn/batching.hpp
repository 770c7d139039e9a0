#pragma once

/// @file batching.hpp Paired source/target mini-batches.
///
/// The smaller domain is brought up to the size of the larger one by copying
/// randomly chosen samples, both domains are padded to a multiple of S/2 the
/// same way, and each shuffled domain is cut into N chunks of S/2. Batch k
/// pairs chunk k of the source with chunk k of the target. Copies are index
/// references only.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtn/error.hpp"
#include "dtn/nn.hpp"

namespace dtn {

struct PairedBatch {
    std::vector<Index> source_indices;
    std::vector<Index> target_indices;

    bool operator==(const PairedBatch&) const = default;
};

struct BatchPlan {
    std::vector<PairedBatch> batches;
    std::uint64_t seed = 0;
    Index batch_size = 0;  ///< S; every batch holds S/2 + S/2 samples

    Index num_batches() const { return static_cast<Index>(batches.size()); }
    bool operator==(const BatchPlan&) const = default;
};

/// All of 0..n_small-1 followed by n_large - n_small uniform draws with replacement.
inline std::vector<Index> balance(Index n_small, Index n_large, Rng& rng) {
    if (n_small < 1) throw ArgumentError("balance: the smaller dataset is empty");
    if (n_large < n_small)
        throw ArgumentError("balance: target size " + std::to_string(n_large) + " is below " +
                            std::to_string(n_small));
    std::vector<Index> out(static_cast<std::size_t>(n_large));
    for (Index i = 0; i < n_small; ++i) out[static_cast<std::size_t>(i)] = i;
    std::uniform_int_distribution<Index> pick(0, n_small - 1);
    for (Index i = n_small; i < n_large; ++i) out[static_cast<std::size_t>(i)] = pick(rng);
    return out;
}

inline BatchPlan build_plan(Index n_s, Index n_t, Index batch_size, std::uint64_t seed) {
    if (n_s < 1 || n_t < 1) throw ArgumentError("build_plan: empty dataset");
    if (batch_size < 2 || batch_size % 2 != 0)
        throw ArgumentError("build_plan: batch size must be even and >= 2, got " + std::to_string(batch_size));
    const Index n = std::max(n_s, n_t);
    if (batch_size > 2 * n)
        throw ArgumentError("build_plan: batch size " + std::to_string(batch_size) + " exceeds twice the " +
                            "larger dataset (" + std::to_string(n) + " samples)");
    const Index half = batch_size / 2;
    const Index padded = (n + half - 1) / half * half;

    Rng rng(seed);
    auto domain = [&](Index original) {
        std::vector<Index> idx = balance(original, padded, rng);
        std::shuffle(idx.begin(), idx.end(), rng);
        return idx;
    };
    std::vector<Index> src = domain(n_s);
    std::vector<Index> tgt = domain(n_t);

    BatchPlan plan;
    plan.seed = seed;
    plan.batch_size = batch_size;
    const Index count = padded / half;
    plan.batches.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        auto lo = static_cast<std::ptrdiff_t>(k * half);
        auto hi = static_cast<std::ptrdiff_t>((k + 1) * half);
        plan.batches.push_back({{src.begin() + lo, src.begin() + hi}, {tgt.begin() + lo, tgt.begin() + hi}});
    }
    return plan;
}

struct BoundCheck {
    double lhs = 0.0;  ///< MMD over everything the plan covers
    double rhs = 0.0;  ///< N^2 * sum of per-batch MMDs
    bool holds = false;
};

/**
 * Compare the MMD over the whole (balanced) datasets with N^2 times the sum of
 * per-batch MMDs. Features are row-per-sample. The left side is taken over the
 * multisets the plan actually covers, so copies introduced by balancing count.
 */
inline BoundCheck verify_bound(const MatrixXd& x_s, const MatrixXd& x_t, const BatchPlan& plan) {
    if (x_s.cols() != x_t.cols())
        throw ShapeError("verify_bound: source has " + std::to_string(x_s.cols()) + " features, target has " +
                         std::to_string(x_t.cols()));
    if (plan.batches.empty()) throw ArgumentError("verify_bound: empty plan");
    const Index d = x_s.cols();
    VectorXd total_s = VectorXd::Zero(d), total_t = VectorXd::Zero(d);
    Index count_s = 0, count_t = 0;
    double per_batch = 0.0;
    for (const auto& b : plan.batches) {
        VectorXd bs = VectorXd::Zero(d), bt = VectorXd::Zero(d);
        for (Index i : b.source_indices) {
            if (i < 0 || i >= x_s.rows()) throw ShapeError("verify_bound: source index out of range");
            bs += x_s.row(i).transpose();
        }
        for (Index i : b.target_indices) {
            if (i < 0 || i >= x_t.rows()) throw ShapeError("verify_bound: target index out of range");
            bt += x_t.row(i).transpose();
        }
        total_s += bs;
        total_t += bt;
        count_s += static_cast<Index>(b.source_indices.size());
        count_t += static_cast<Index>(b.target_indices.size());
        per_batch += (bs / static_cast<double>(b.source_indices.size()) -
                      bt / static_cast<double>(b.target_indices.size()))
                         .squaredNorm();
    }
    BoundCheck r;
    r.lhs = (total_s / static_cast<double>(count_s) - total_t / static_cast<double>(count_t)).squaredNorm();
    const double n_batches = static_cast<double>(plan.batches.size());
    r.rhs = n_batches * n_batches * per_batch;
    r.holds = r.lhs <= r.rhs + 1e-10;
    return r;
}

}  // namespace dtn
