#ifndef DRIFTFORGE_SVMCONF_HPP
#define DRIFTFORGE_SVMCONF_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/dataset.hpp"
#include "driftforge/rng.hpp"

namespace driftforge::svmconf {

struct LinearSvm {
    Eigen::VectorXd w;
    double b = 0.0;
    double c = 1.0;            // hinge trade-off
    bool degenerate = false;   // trained on a single-class pool

    double decision(const dataset::Sample& s) const {
        double acc = b;
        for (int f : s.features) acc += w(f);
        return acc;
    }

    double decision(const Eigen::VectorXd& x) const { return w.dot(x) + b; }
};

// (1/2)||w||^2 + C * sum hinge(y_s * decision) with y_s in {-1, +1}.
inline double hinge_objective(const LinearSvm& svm, const dataset::LabeledPool& pool) {
    double loss = 0.5 * svm.w.squaredNorm();
    for (const auto& s : pool.samples) {
        const double ys = s.y == 1 ? 1.0 : -1.0;
        loss += svm.c * std::max(0.0, 1.0 - ys * svm.decision(s));
    }
    return loss;
}

namespace detail {

// Exact minimizer over b of sum_i hinge(y_i * (d_i + b)) for fixed weights.
// The sum is piecewise linear and convex in b with slope increasing by one at
// every breakpoint (1 - d_i for positives, -(1 + d_i) for negatives); the
// slope starts at -P, so the minimum sits at the P-th smallest breakpoint.
inline double refit_bias(const LinearSvm& svm, const dataset::LabeledPool& pool) {
    std::vector<double> breakpoints;
    breakpoints.reserve(pool.size());
    long positives = 0;
    for (const auto& s : pool.samples) {
        const double d = svm.decision(s) - svm.b;
        if (s.y == 1) {
            ++positives;
            breakpoints.push_back(1.0 - d);
        } else {
            breakpoints.push_back(-(1.0 + d));
        }
    }
    std::sort(breakpoints.begin(), breakpoints.end());
    const std::size_t idx = positives > 0 ? static_cast<std::size_t>(positives) - 1 : 0;
    return breakpoints[std::min(idx, breakpoints.size() - 1)];
}

}  // namespace detail

// Seeded stochastic subgradient descent on the weights (Pegasos step sizes
// 1/(lambda*(t+n)), lambda = 1/(nC); the one-epoch offset tames the first
// steps) with an exact bias refit after every epoch; the returned weights are
// the average over the last quarter of the steps. objective_trace, when
// given, records the hinge objective after every epoch.
inline LinearSvm train_svm(const dataset::LabeledPool& pool, double c, std::uint64_t seed,
                           int epochs = 60, std::vector<double>* objective_trace = nullptr) {
    if (pool.empty()) throw UsageError("train_svm: empty pool");
    if (c <= 0.0) throw ConfigError("train_svm: C must be positive");
    const std::size_t n = pool.size();
    LinearSvm svm;
    svm.w = Eigen::VectorXd::Zero(pool.dim);
    svm.c = c;

    bool has_pos = false, has_neg = false;
    for (const auto& s : pool.samples) (s.y == 1 ? has_pos : has_neg) = true;
    svm.degenerate = !(has_pos && has_neg);

    const double lambda = 1.0 / (static_cast<double>(n) * c);
    Rng rng(derive_seed(seed, 0x5F4));
    Eigen::VectorXd w_sum = Eigen::VectorXd::Zero(pool.dim);
    long avg_count = 0;
    const long total_steps = static_cast<long>(epochs) * static_cast<long>(n);
    const long avg_start = total_steps - total_steps / 4;

    long t = 0;
    const long t0 = static_cast<long>(n);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t step = 0; step < n; ++step) {
            ++t;
            const dataset::Sample& s = pool.samples[rng.index(n)];
            const double ys = s.y == 1 ? 1.0 : -1.0;
            const double eta = 1.0 / (lambda * static_cast<double>(t + t0));
            const bool violated = ys * svm.decision(s) < 1.0;
            svm.w *= 1.0 - 1.0 / static_cast<double>(t + t0);  // (1 - eta*lambda)
            if (violated) {
                for (int f : s.features) svm.w(f) += eta * ys;
            }
            if (t > avg_start) {
                w_sum += svm.w;
                ++avg_count;
            }
        }
        svm.b = detail::refit_bias(svm, pool);
        if (objective_trace) objective_trace->push_back(hinge_objective(svm, pool));
    }
    if (avg_count > 0) {
        svm.w = w_sum / static_cast<double>(avg_count);
        svm.b = detail::refit_bias(svm, pool);
    }
    return svm;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// 0.5 - |sigmoid(decision) - 0.5|: 0.5 at the boundary, 0 for confident
// samples; selection takes the top.
inline double svm_uncertainty(const LinearSvm& svm, const dataset::Sample& s) {
    const double p = sigmoid(svm.decision(s));
    return 0.5 - std::abs(p - 0.5);
}

// Signed-margin nonconformity: larger = conforms less to `label`.
inline double nonconformity(const LinearSvm& svm, const dataset::Sample& s, int label) {
    const double ys = label == 1 ? 1.0 : -1.0;
    return -ys * svm.decision(s);
}

struct CalibEntry {
    double score;
    int y;
};

// Cross-conformal evaluator: 10 stratified folds, one SVM per fold trained on
// the other nine, nonconformity of the held-out fold recorded with true labels.
struct ConformalEvaluator {
    static constexpr int kFolds = 10;
    std::vector<LinearSvm> fold_svms;
    std::vector<std::vector<CalibEntry>> calibration;
    std::uint64_t seed = 0;
};

inline ConformalEvaluator cce_fit(const dataset::LabeledPool& pool, double c, std::uint64_t seed,
                                  int epochs = 60) {
    std::vector<int> pos, neg;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        (pool.samples[i].y == 1 ? pos : neg).push_back(static_cast<int>(i));
    }
    if (static_cast<int>(pos.size()) < ConformalEvaluator::kFolds ||
        static_cast<int>(neg.size()) < ConformalEvaluator::kFolds) {
        throw DataError("cce_fit: need at least 10 samples per class");
    }
    Rng rng(derive_seed(seed, 0xCCE));
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<int> fold_of(pool.size());
    for (std::size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = static_cast<int>(i % 10);
    for (std::size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = static_cast<int>(i % 10);

    ConformalEvaluator cce;
    cce.seed = seed;
    cce.calibration.resize(ConformalEvaluator::kFolds);
    for (int fold = 0; fold < ConformalEvaluator::kFolds; ++fold) {
        dataset::LabeledPool train;
        train.dim = pool.dim;
        std::vector<int> held_out;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (fold_of[i] == fold) {
                held_out.push_back(static_cast<int>(i));
            } else {
                train.add(pool.samples[i], pool.provenance[i]);
            }
        }
        LinearSvm svm = train_svm(train, c, derive_seed(seed, 0xF01D, fold), epochs);
        for (int i : held_out) {
            cce.calibration[fold].push_back(
                {nonconformity(svm, pool.samples[i], pool.samples[i].y), pool.samples[i].y});
        }
        cce.fold_svms.push_back(std::move(svm));
    }
    return cce;
}

// Per fold: fraction of same-label calibration scores >= the test score (ties
// counted); the returned value is the median over the 10 folds. A fold with no
// calibration samples of `label` contributes 0 and raises *starved.
inline double credibility(const ConformalEvaluator& cce, const dataset::Sample& s, int label,
                          bool* starved = nullptr) {
    if (label != 0 && label != 1) throw UsageError("credibility: label must be 0 or 1");
    std::vector<double> per_fold;
    per_fold.reserve(cce.fold_svms.size());
    for (std::size_t fold = 0; fold < cce.fold_svms.size(); ++fold) {
        const double test_score = nonconformity(cce.fold_svms[fold], s, label);
        long same = 0, higher = 0;
        for (const CalibEntry& e : cce.calibration[fold]) {
            if (e.y != label) continue;
            ++same;
            if (e.score >= test_score) ++higher;
        }
        if (same == 0) {
            if (starved) *starved = true;
            per_fold.push_back(0.0);
        } else {
            per_fold.push_back(static_cast<double>(higher) / static_cast<double>(same));
        }
    }
    std::sort(per_fold.begin(), per_fold.end());
    const std::size_t n = per_fold.size();
    return n % 2 == 1 ? per_fold[n / 2] : 0.5 * (per_fold[n / 2 - 1] + per_fold[n / 2]);
}

// One minus the credibility of the opposite label.
inline double confidence(const ConformalEvaluator& cce, const dataset::Sample& s, int label,
                         bool* starved = nullptr) {
    return 1.0 - credibility(cce, s, 1 - label, starved);
}

enum class TranscendentVariant { kCred, kCredTimesConf };

// Scores the predicted label of `svm`; LOWER values mark likelier drift, so
// selection prioritizes the lowest scores (the harness negates to keep its
// higher-is-more-uncertain convention).
inline double transcendent_score(const ConformalEvaluator& cce, const LinearSvm& svm,
                                 const dataset::Sample& s, TranscendentVariant variant) {
    const int predicted = sigmoid(svm.decision(s)) >= 0.5 ? 1 : 0;
    const double cred = credibility(cce, s, predicted);
    if (variant == TranscendentVariant::kCred) return cred;
    return cred * confidence(cce, s, predicted);
}

}  // namespace driftforge::svmconf

#endif  // DRIFTFORGE_SVMCONF_HPP
