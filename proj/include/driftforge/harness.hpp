#ifndef DRIFTFORGE_HARNESS_HPP
#define DRIFTFORGE_HARNESS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/dataset.hpp"
#include "driftforge/hcc.hpp"
#include "driftforge/ndcore.hpp"
#include "driftforge/rng.hpp"
#include "driftforge/selectors.hpp"
#include "driftforge/svmconf.hpp"

namespace driftforge::harness {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;

    long total() const { return tp + fp + tn + fn; }
};

struct MonthMetrics {
    double fnr = 0.0, fpr = 0.0, f1 = 0.0;
};

// FNR = FN/(FN+TP), FPR = FP/(FP+TN), F1 = 2TP/(2TP+FP+FN); a zero
// denominator yields 0.
inline MonthMetrics compute_metrics(const Confusion& c) {
    MonthMetrics m;
    if (c.fn + c.tp > 0) m.fnr = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
    if (c.fp + c.tn > 0) m.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    if (2 * c.tp + c.fp + c.fn > 0) {
        m.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
    }
    return m;
}

struct MetricsReport {
    std::vector<int> months;  // absolute month indices
    std::vector<Confusion> confusion;
    std::vector<MonthMetrics> per_month;
    MonthMetrics average;  // unweighted mean over months
};

inline void finalize_averages(MetricsReport& report) {
    MonthMetrics avg;
    if (report.per_month.empty()) {
        report.average = avg;
        return;
    }
    for (const MonthMetrics& m : report.per_month) {
        avg.fnr += m.fnr;
        avg.fpr += m.fpr;
        avg.f1 += m.f1;
    }
    const double n = static_cast<double>(report.per_month.size());
    report.average = {avg.fnr / n, avg.fpr / n, avg.f1 / n};
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

struct PoolSnapshot {
    std::size_t size = 0;
    int max_month = -1;
    std::uint64_t hash = 0;
};

inline PoolSnapshot snapshot_pool(const dataset::LabeledPool& pool) {
    PoolSnapshot snap;
    snap.size = pool.size();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : pool.samples) {
        h = fnv1a64(s.id.data(), s.id.size(), h);
        h = fnv1a64("\x1f", 1, h);
        snap.max_month = std::max(snap.max_month, s.month);
    }
    snap.hash = h;
    return snap;
}

struct AnalystLabel {
    std::string id;
    int y = 0;
    int family = 0;
};

struct MonthLog {
    int month = 0;  // absolute
    std::vector<std::pair<std::string, int>> predictions;
    Confusion confusion;
    std::vector<std::pair<std::string, double>> selected;  // id, selector score
    std::vector<AnalystLabel> analyst_labels;
    PoolSnapshot pool_before;  // state used for this month's predictions
    PoolSnapshot pool_after;   // state after analyst labels were added
};

struct ALRunLog {
    int initial_train_months = 0;
    int budget_per_month = 0;
    std::set<int> initial_families;  // malicious families in the initial pool
    PoolSnapshot initial_pool;
    std::vector<MonthLog> months;
};

// Exact no-leakage check: the pool that produced month-t predictions contains
// no sample from month t or later, selections stay within budget and within
// the month's test set.
inline void validate_run_log(const ALRunLog& log, const dataset::MonthlyStream& stream) {
    for (const MonthLog& m : log.months) {
        if (m.pool_before.max_month >= m.month) {
            throw UsageError("temporal leakage: pool for month " + std::to_string(m.month) +
                             " contains month " + std::to_string(m.pool_before.max_month));
        }
        if (static_cast<int>(m.selected.size()) > log.budget_per_month) {
            throw UsageError("budget exceeded in month " + std::to_string(m.month));
        }
        std::unordered_set<std::string> month_ids;
        for (const auto& s : stream.months[m.month - stream.first_month]) month_ids.insert(s.id);
        if (m.confusion.total() != static_cast<long>(month_ids.size())) {
            throw UsageError("confusion counts do not sum to month size at month " +
                             std::to_string(m.month));
        }
        for (const auto& [id, score] : m.selected) {
            if (!month_ids.contains(id)) {
                throw UsageError("selected id " + id + " not in month " + std::to_string(m.month));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Simulated analyst
// ---------------------------------------------------------------------------

// Serves stored ground-truth labels; each unique id is charged against the
// monthly budget once.
class AnalystOracle {
  public:
    explicit AnalystOracle(const dataset::MonthlyStream& stream) {
        for (const auto& month : stream.months) {
            for (const auto& s : month) by_id_.emplace(s.id, &s);
        }
    }

    void begin_month() { charged_.clear(); }

    const dataset::Sample& label(const std::string& id) {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw DataError("analyst oracle: unknown id " + id);
        charged_.insert(id);
        return *it->second;
    }

    int charges_used() const { return static_cast<int>(charged_.size()); }

  private:
    std::unordered_map<std::string, const dataset::Sample*> by_id_;
    std::unordered_set<std::string> charged_;
};

// ---------------------------------------------------------------------------
// Method configuration
// ---------------------------------------------------------------------------

enum class Method {
    kHccPseudoLoss,
    kMlpUncertainty,
    kSvmUncertainty,
    kTranscendentCred,
    kTranscendentCredConf,
    kCadeOodSvm,
    kCadeOodMlp,
    kRandom,
};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::kHccPseudoLoss: return "hcc_pseudo_loss";
        case Method::kMlpUncertainty: return "mlp_uncertainty";
        case Method::kSvmUncertainty: return "svm_uncertainty";
        case Method::kTranscendentCred: return "transcendent_cred";
        case Method::kTranscendentCredConf: return "transcendent_credconf";
        case Method::kCadeOodSvm: return "cade_ood_svm";
        case Method::kCadeOodMlp: return "cade_ood_mlp";
        case Method::kRandom: return "random";
    }
    throw UsageError("bad method");
}

inline Method method_from_name(const std::string& name) {
    for (Method m : {Method::kHccPseudoLoss, Method::kMlpUncertainty, Method::kSvmUncertainty,
                     Method::kTranscendentCred, Method::kTranscendentCredConf, Method::kCadeOodSvm,
                     Method::kCadeOodMlp, Method::kRandom}) {
        if (name == method_name(m)) return m;
    }
    throw ConfigError("unknown method: " + name);
}

struct MlpConfig {
    std::vector<int> hidden{100, 100};
    int batch = 32;
    ndcore::OptKind optimizer = ndcore::OptKind::kAdam;
    double learning_rate = 0.001;
    int epochs = 25;
    double warm_lr = 1e-4;
    int warm_epochs = 10;
};

struct ALConfig {
    Method method = Method::kHccPseudoLoss;
    int budget_per_month = 50;
    hcc::StartMode start_mode = hcc::StartMode::kCold;
    std::uint64_t seed = 0;

    hcc::HccArch hcc_arch;
    hcc::TrainConfig hcc_train;
    int selector_n_half = 512;  // N for the pseudo-loss kNN batch

    MlpConfig mlp;
    double svm_c = 0.1;
    int svm_epochs = 60;

    selectors::CadeArch cade_arch;
    selectors::CadeTrainConfig cade_train;
};

inline bool method_is_neural(Method m) {
    return m == Method::kHccPseudoLoss || m == Method::kMlpUncertainty ||
           m == Method::kCadeOodMlp || m == Method::kRandom;
}

inline void validate_config(const ALConfig& cfg) {
    if (cfg.budget_per_month < 0) throw ConfigError("budget_per_month must be >= 0");
    if (cfg.start_mode == hcc::StartMode::kWarm && !method_is_neural(cfg.method)) {
        throw ConfigError(std::string("warm start is not valid for method ") +
                          method_name(cfg.method));
    }
    if (cfg.selector_n_half <= 0) throw ConfigError("selector_n_half must be positive");
}

// ---------------------------------------------------------------------------
// Method engines (internal)
// ---------------------------------------------------------------------------

namespace detail {

// Mean-reduced cross-entropy minibatch training for a softmax2 net.
inline void train_mlp_epochs(ndcore::DenseNet& net, const dataset::LabeledPool& pool,
                             const MlpConfig& cfg, double lr, int epochs, Rng& rng) {
    ndcore::OptimizerState opt = ndcore::make_optimizer(cfg.optimizer, lr, net);
    const std::size_t n = pool.size();
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t end = std::min(n, start + cfg.batch);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            const Eigen::MatrixXd x = dataset::to_dense_batch(pool, batch);
            std::vector<int> y;
            y.reserve(batch.size());
            for (int i : batch) y.push_back(pool.samples[i].y);
            const auto trace = ndcore::forward_batch(net, x);
            const Eigen::VectorXd probs = trace.output().row(1).transpose();
            const hcc::CeResult ce = hcc::ce_loss(probs, y);
            Eigen::MatrixXd dout = Eigen::MatrixXd::Zero(2, x.cols());
            dout.row(1) = ce.dprob.transpose() / static_cast<double>(batch.size());
            ndcore::NetGrad grad = ndcore::NetGrad::zeros_like(net);
            ndcore::backward_batch(net, trace, dout, grad);
            ndcore::optimizer_step(opt, net, grad);
        }
    }
}

inline ndcore::DenseNet make_mlp(int input_dim, const MlpConfig& cfg, Rng& rng) {
    std::vector<int> dims;
    dims.push_back(input_dim);
    for (int h : cfg.hidden) dims.push_back(h);
    dims.push_back(2);
    return ndcore::make_dense_net(dims, ndcore::OutputHead::kSoftmax2, rng);
}

class MethodEngine {
  public:
    virtual ~MethodEngine() = default;
    // Train on the initial pool.
    virtual void train_initial(const dataset::LabeledPool& pool) = 0;
    // Retrain/update after analyst labels were appended for `month`.
    virtual void update(const dataset::LabeledPool& pool, int month) = 0;
    // Predicted binary labels for a month of samples.
    virtual std::vector<int> predict(const std::vector<dataset::Sample>& samples) = 0;
    // Selector scores (higher = more worth labeling).
    virtual std::vector<double> score(const std::vector<dataset::Sample>& samples,
                                      const dataset::LabeledPool& pool, int month) = 0;
    // The trained encoder-classifier, when the method has one.
    virtual const hcc::EncoderClassifier* encoder_classifier() const { return nullptr; }
};

class HccEngine : public MethodEngine {
  public:
    explicit HccEngine(const ALConfig& cfg, bool random_selector)
        : cfg_(cfg), random_selector_(random_selector) {}

    void train_initial(const dataset::LabeledPool& pool) override {
        hcc::TrainConfig tc = cfg_.hcc_train;
        tc.seed = derive_seed(cfg_.seed, 0x111);
        model_ = hcc::train_cold(pool, cfg_.hcc_arch, tc);
        lambda_ = model_->lambda;  // frozen for the rest of the run
    }

    void update(const dataset::LabeledPool& pool, int month) override {
        hcc::TrainConfig tc = cfg_.hcc_train;
        if (cfg_.start_mode == hcc::StartMode::kWarm) {
            tc.mode = hcc::StartMode::kWarm;
            tc.seed = derive_seed(cfg_.seed, 0x222, static_cast<std::uint64_t>(month));
            hcc::train_warm(*model_, pool, tc);
        } else {
            tc.lambda_mode = hcc::LambdaMode::kFixed;
            tc.lambda_value = lambda_;
            tc.seed = derive_seed(cfg_.seed, 0x333, static_cast<std::uint64_t>(month));
            model_ = hcc::train_cold(pool, cfg_.hcc_arch, tc);
            model_->lambda = lambda_;
        }
    }

    std::vector<int> predict(const std::vector<dataset::Sample>& samples) override {
        std::vector<int> out(samples.size());
        if (samples.empty()) return out;
        const Eigen::VectorXd probs = hcc::malicious_prob_batch(
            *model_, dataset::to_dense_batch(samples, model_->input_dim()));
        for (std::size_t i = 0; i < samples.size(); ++i) out[i] = hcc::predict_label(probs(i));
        return out;
    }

    std::vector<double> score(const std::vector<dataset::Sample>& samples,
                              const dataset::LabeledPool& pool, int month) override {
        std::vector<double> out(samples.size());
        if (random_selector_) {
            Rng rng(derive_seed(cfg_.seed, 0x444, static_cast<std::uint64_t>(month)));
            for (double& v : out) v = rng.uniform();
            return out;
        }
        const selectors::EmbeddingIndex index = selectors::build_index(*model_, pool);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out[i] = selectors::pseudo_loss_total(*model_, samples[i], index, cfg_.selector_n_half);
        }
        return out;
    }

    const hcc::EncoderClassifier* encoder_classifier() const override {
        return model_.has_value() ? &*model_ : nullptr;
    }

  private:
    ALConfig cfg_;
    bool random_selector_;
    std::optional<hcc::EncoderClassifier> model_;
    double lambda_ = 1.0;
};

class MlpEngine : public MethodEngine {
  public:
    explicit MlpEngine(const ALConfig& cfg) : cfg_(cfg) {}

    void train_initial(const dataset::LabeledPool& pool) override {
        Rng rng(derive_seed(cfg_.seed, 0x515));
        net_ = detail::make_mlp(pool.dim, cfg_.mlp, rng);
        Rng train_rng(derive_seed(cfg_.seed, 0x616));
        train_mlp_epochs(*net_, pool, cfg_.mlp, cfg_.mlp.learning_rate, cfg_.mlp.epochs, train_rng);
    }

    void update(const dataset::LabeledPool& pool, int month) override {
        if (cfg_.start_mode == hcc::StartMode::kWarm) {
            Rng rng(derive_seed(cfg_.seed, 0x717, static_cast<std::uint64_t>(month)));
            train_mlp_epochs(*net_, pool, cfg_.mlp, cfg_.mlp.warm_lr, cfg_.mlp.warm_epochs, rng);
        } else {
            Rng init(derive_seed(cfg_.seed, 0x515, static_cast<std::uint64_t>(month)));
            net_ = detail::make_mlp(pool.dim, cfg_.mlp, init);
            Rng rng(derive_seed(cfg_.seed, 0x616, static_cast<std::uint64_t>(month)));
            train_mlp_epochs(*net_, pool, cfg_.mlp, cfg_.mlp.learning_rate, cfg_.mlp.epochs, rng);
        }
    }

    std::vector<int> predict(const std::vector<dataset::Sample>& samples) override {
        std::vector<int> out(samples.size());
        if (samples.empty()) return out;
        const Eigen::MatrixXd probs =
            ndcore::forward_batch(*net_, dataset::to_dense_batch(samples, net_->input_dim()))
                .output();
        for (std::size_t i = 0; i < samples.size(); ++i) out[i] = probs(1, i) >= 0.5 ? 1 : 0;
        return out;
    }

    std::vector<double> score(const std::vector<dataset::Sample>& samples,
                              const dataset::LabeledPool&, int) override {
        std::vector<double> out(samples.size());
        if (samples.empty()) return out;
        const Eigen::MatrixXd probs =
            ndcore::forward_batch(*net_, dataset::to_dense_batch(samples, net_->input_dim()))
                .output();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out[i] = selectors::max_softmax_uncertainty(probs(1, i));
        }
        return out;
    }

  private:
    ALConfig cfg_;
    std::optional<ndcore::DenseNet> net_;
};

class SvmEngine : public MethodEngine {
  public:
    explicit SvmEngine(const ALConfig& cfg, bool transcendent, svmconf::TranscendentVariant variant)
        : cfg_(cfg), transcendent_(transcendent), variant_(variant) {}

    void train_initial(const dataset::LabeledPool& pool) override { fit(pool, 0x919); }

    void update(const dataset::LabeledPool& pool, int month) override {
        fit(pool, derive_seed(0xA1A, static_cast<std::uint64_t>(month)));
    }

    std::vector<int> predict(const std::vector<dataset::Sample>& samples) override {
        std::vector<int> out(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out[i] = svmconf::sigmoid(svm_->decision(samples[i])) >= 0.5 ? 1 : 0;
        }
        return out;
    }

    std::vector<double> score(const std::vector<dataset::Sample>& samples,
                              const dataset::LabeledPool&, int) override {
        std::vector<double> out(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (transcendent_) {
                // lowest transcendent scores are prioritized; negate for the
                // harness's higher-is-selected convention
                out[i] = -svmconf::transcendent_score(*cce_, *svm_, samples[i], variant_);
            } else {
                out[i] = svmconf::svm_uncertainty(*svm_, samples[i]);
            }
        }
        return out;
    }

  private:
    void fit(const dataset::LabeledPool& pool, std::uint64_t salt) {
        const std::uint64_t seed = derive_seed(cfg_.seed, salt);
        svm_ = svmconf::train_svm(pool, cfg_.svm_c, seed, cfg_.svm_epochs);
        if (transcendent_) cce_ = svmconf::cce_fit(pool, cfg_.svm_c, seed, cfg_.svm_epochs);
    }

    ALConfig cfg_;
    bool transcendent_;
    svmconf::TranscendentVariant variant_;
    std::optional<svmconf::LinearSvm> svm_;
    std::optional<svmconf::ConformalEvaluator> cce_;
};

class CadeEngine : public MethodEngine {
  public:
    // classifier_on_embeddings: MLP over CADE embeddings (the improved
    // variant); otherwise a linear SVM over raw features (the original).
    CadeEngine(const ALConfig& cfg, bool classifier_on_embeddings)
        : cfg_(cfg), on_embeddings_(classifier_on_embeddings) {}

    void train_initial(const dataset::LabeledPool& pool) override {
        selectors::CadeTrainConfig cc = cfg_.cade_train;
        cc.seed = derive_seed(cfg_.seed, 0xB1B);
        cade_ = selectors::train_cade(pool, cfg_.cade_arch, cc);
        train_classifier(pool, 0);
    }

    void update(const dataset::LabeledPool& pool, int month) override {
        selectors::CadeTrainConfig cc = cfg_.cade_train;
        if (on_embeddings_ && cfg_.start_mode == hcc::StartMode::kWarm) {
            cc.seed = derive_seed(cfg_.seed, 0xC1C, static_cast<std::uint64_t>(month));
            selectors::train_cade_warm(*cade_, pool, cc);
        } else {
            cc.seed = derive_seed(cfg_.seed, 0xB1B, static_cast<std::uint64_t>(month));
            cade_ = selectors::train_cade(pool, cfg_.cade_arch, cc);
        }
        train_classifier(pool, month);
    }

    std::vector<int> predict(const std::vector<dataset::Sample>& samples) override {
        std::vector<int> out(samples.size());
        if (samples.empty()) return out;
        if (on_embeddings_) {
            const Eigen::MatrixXd emb = selectors::cade_encode(
                *cade_, dataset::to_dense_batch(samples, cade_->input_dim()));
            const Eigen::MatrixXd probs = ndcore::forward_batch(*mlp_, emb).output();
            for (std::size_t i = 0; i < samples.size(); ++i) out[i] = probs(1, i) >= 0.5 ? 1 : 0;
        } else {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                out[i] = svmconf::sigmoid(svm_->decision(samples[i])) >= 0.5 ? 1 : 0;
            }
        }
        return out;
    }

    std::vector<double> score(const std::vector<dataset::Sample>& samples,
                              const dataset::LabeledPool&, int) override {
        std::vector<double> out(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            out[i] = selectors::cade_ood(*cade_, samples[i]);
        }
        return out;
    }

  private:
    // The embedding-input classifier is retrained from scratch whenever the
    // encoder moved (its input space changed); warm MLP epochs continue from
    // the previous weights only in warm mode, matching the warm CADE variant.
    void train_classifier(const dataset::LabeledPool& pool, int month) {
        if (on_embeddings_) {
            emb_x_ = selectors::cade_encode(*cade_,
                                            dataset::to_dense_batch(pool.samples, pool.dim));
            labels_.clear();
            for (const auto& s : pool.samples) labels_.push_back(s.y);
            const bool warm = cfg_.start_mode == hcc::StartMode::kWarm && mlp_.has_value();
            if (!warm) {
                Rng init(derive_seed(cfg_.seed, 0xD1D, static_cast<std::uint64_t>(month)));
                mlp_ = detail::make_mlp(cfg_.cade_arch.embedding_dim, cfg_.mlp, init);
            }
            Rng rng(derive_seed(cfg_.seed, 0xE1E, static_cast<std::uint64_t>(month)));
            const double lr = warm ? cfg_.mlp.warm_lr : cfg_.mlp.learning_rate;
            const int epochs = warm ? cfg_.mlp.warm_epochs : cfg_.mlp.epochs;
            train_mlp_on_matrix(rng, lr, epochs);
        } else {
            svm_ = svmconf::train_svm(pool, cfg_.svm_c,
                                      derive_seed(cfg_.seed, 0xF1F, static_cast<std::uint64_t>(month)),
                                      cfg_.svm_epochs);
        }
    }

    void train_mlp_on_matrix(Rng& rng, double lr, int epochs) {
        ndcore::OptimizerState opt = ndcore::make_optimizer(cfg_.mlp.optimizer, lr, *mlp_);
        const std::size_t n = labels_.size();
        std::vector<int> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
        for (int epoch = 0; epoch < epochs; ++epoch) {
            rng.shuffle(order);
            for (std::size_t start = 0; start < n; start += cfg_.mlp.batch) {
                const std::size_t end = std::min(n, start + cfg_.mlp.batch);
                Eigen::MatrixXd x(emb_x_.rows(), end - start);
                std::vector<int> y;
                for (std::size_t k = start; k < end; ++k) {
                    x.col(static_cast<Eigen::Index>(k - start)) = emb_x_.col(order[k]);
                    y.push_back(labels_[order[k]]);
                }
                const auto trace = ndcore::forward_batch(*mlp_, x);
                const Eigen::VectorXd probs = trace.output().row(1).transpose();
                const hcc::CeResult ce = hcc::ce_loss(probs, y);
                Eigen::MatrixXd dout = Eigen::MatrixXd::Zero(2, x.cols());
                dout.row(1) = ce.dprob.transpose() / static_cast<double>(y.size());
                ndcore::NetGrad grad = ndcore::NetGrad::zeros_like(*mlp_);
                ndcore::backward_batch(*mlp_, trace, dout, grad);
                ndcore::optimizer_step(opt, *mlp_, grad);
            }
        }
    }

    ALConfig cfg_;
    bool on_embeddings_;
    std::optional<selectors::CadeModel> cade_;
    std::optional<ndcore::DenseNet> mlp_;
    std::optional<svmconf::LinearSvm> svm_;
    Eigen::MatrixXd emb_x_;
    std::vector<int> labels_;
};

inline std::unique_ptr<MethodEngine> make_engine(const ALConfig& cfg) {
    switch (cfg.method) {
        case Method::kHccPseudoLoss:
            return std::make_unique<HccEngine>(cfg, false);
        case Method::kRandom:
            return std::make_unique<HccEngine>(cfg, true);
        case Method::kMlpUncertainty:
            return std::make_unique<MlpEngine>(cfg);
        case Method::kSvmUncertainty:
            return std::make_unique<SvmEngine>(cfg, false, svmconf::TranscendentVariant::kCred);
        case Method::kTranscendentCred:
            return std::make_unique<SvmEngine>(cfg, true, svmconf::TranscendentVariant::kCred);
        case Method::kTranscendentCredConf:
            return std::make_unique<SvmEngine>(cfg, true,
                                               svmconf::TranscendentVariant::kCredTimesConf);
        case Method::kCadeOodSvm:
            return std::make_unique<CadeEngine>(cfg, false);
        case Method::kCadeOodMlp:
            return std::make_unique<CadeEngine>(cfg, true);
    }
    throw UsageError("bad method");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The monthly active-learning loop
// ---------------------------------------------------------------------------

struct ALResult {
    MetricsReport metrics;
    ALRunLog log;
    // final model, for methods built on the encoder-classifier
    std::optional<hcc::EncoderClassifier> final_model;
};

// Trains on the initial months, then for each later month: predict, score,
// select up to the budget, oracle-label, extend the pool, retrain. Metrics for
// a month are always computed before that month's labels are used. Months
// with no new labels skip retraining, so a zero budget evaluates a fixed
// classifier.
inline ALResult run_active_learning(const dataset::MonthlyStream& stream, int initial_train_months,
                                    const ALConfig& cfg) {
    validate_config(cfg);
    if (initial_train_months <= 0) throw ConfigError("initial_train_months must be positive");
    if (stream.month_count() < initial_train_months + 1) {
        throw ConfigError("stream needs at least initial_train_months + 1 months");
    }

    dataset::LabeledPool pool;
    pool.dim = stream.dim;
    for (int m = 0; m < initial_train_months; ++m) {
        for (const auto& s : stream.months[m]) pool.add(s, dataset::LabeledPool::kInitial);
    }
    if (pool.empty()) throw ConfigError("initial training pool is empty");

    ALResult result;
    result.log.initial_train_months = initial_train_months;
    result.log.budget_per_month = cfg.budget_per_month;
    result.log.initial_pool = snapshot_pool(pool);
    for (const auto& s : pool.samples) {
        if (s.y == 1) result.log.initial_families.insert(s.family);
    }

    auto engine = detail::make_engine(cfg);
    engine->train_initial(pool);
    AnalystOracle oracle(stream);

    for (int pos = initial_train_months; pos < stream.month_count(); ++pos) {
        const int month = stream.first_month + pos;
        const auto& samples = stream.months[pos];
        MonthLog mlog;
        mlog.month = month;
        mlog.pool_before = snapshot_pool(pool);

        // 1) predict and record confusion against ground truth
        const std::vector<int> preds = engine->predict(samples);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            mlog.predictions.emplace_back(samples[i].id, preds[i]);
            if (samples[i].y == 1) {
                preds[i] == 1 ? ++mlog.confusion.tp : ++mlog.confusion.fn;
            } else {
                preds[i] == 1 ? ++mlog.confusion.fp : ++mlog.confusion.tn;
            }
        }

        // 2) score with the configured selector
        const std::vector<double> scores = engine->score(samples, pool, month);

        // 3) pick the budget highest
        std::vector<std::pair<std::string, double>> id_scores;
        std::map<std::string, double> score_of;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            id_scores.emplace_back(samples[i].id, scores[i]);
            score_of[samples[i].id] = scores[i];
        }
        const std::vector<std::string> chosen =
            selectors::select_top(id_scores, cfg.budget_per_month);

        // 4) analyst labels join the pool with provenance analyst(month)
        oracle.begin_month();
        for (const std::string& id : chosen) {
            const dataset::Sample& truth = oracle.label(id);
            mlog.selected.emplace_back(id, score_of.at(id));
            mlog.analyst_labels.push_back({id, truth.y, truth.family});
            pool.add(truth, month);
        }

        // 5) retrain (cold) or continue training (warm) when anything was added
        if (!chosen.empty()) engine->update(pool, month);

        mlog.pool_after = snapshot_pool(pool);
        result.metrics.months.push_back(month);
        result.metrics.confusion.push_back(mlog.confusion);
        result.metrics.per_month.push_back(compute_metrics(mlog.confusion));
        result.log.months.push_back(std::move(mlog));
    }
    finalize_averages(result.metrics);
    if (const hcc::EncoderClassifier* model = engine->encoder_classifier()) {
        result.final_model = *model;
    }
    validate_run_log(result.log, stream);
    return result;
}

// ---------------------------------------------------------------------------
// Family lead-time analytics
// ---------------------------------------------------------------------------

struct FamilyLead {
    int family = 0;
    bool labeled = false;
    int first_labeled_month = -1;
    bool popular = false;
    int popularity_month = -1;
    // popularity_month - first_labeled_month; meaningful when both are set
    int lead = 0;
};

struct LeadTimeSummary {
    std::vector<FamilyLead> families;
    int n_popular = 0;
    int n_labeled_in_advance = 0;            // popular, labeled, lead > 0
    double fraction_labeled_in_advance = 0;  // over popular families
    double mean_lead = 0;                    // over popular families labeled at all
};

// For every malicious family absent from the initial pool: the popularity
// month is the first month it is the most frequent initially-unseen family
// (ties to the smaller family id); the lead is how many months before that
// the selector first labeled it.
inline LeadTimeSummary family_lead_time(const ALRunLog& log, const dataset::MonthlyStream& stream) {
    std::map<int, FamilyLead> families;
    std::map<int, int> popularity;  // family -> month

    for (const MonthLog& m : log.months) {
        const auto& samples = stream.months[m.month - stream.first_month];
        std::map<int, int> counts;
        for (const auto& s : samples) {
            if (s.y == 1 && !log.initial_families.contains(s.family)) {
                counts[s.family] += 1;
                families.try_emplace(s.family).first->second.family = s.family;
            }
        }
        int best_family = -1, best_count = 0;
        for (const auto& [fam, count] : counts) {  // std::map order breaks ties low
            if (count > best_count) {
                best_family = fam;
                best_count = count;
            }
        }
        if (best_family >= 0 && !popularity.contains(best_family)) {
            popularity[best_family] = m.month;
        }
        for (const AnalystLabel& lab : m.analyst_labels) {
            if (lab.y == 1 && !log.initial_families.contains(lab.family)) {
                auto& entry = families.try_emplace(lab.family).first->second;
                entry.family = lab.family;
                if (!entry.labeled) {
                    entry.labeled = true;
                    entry.first_labeled_month = m.month;
                }
            }
        }
    }

    LeadTimeSummary summary;
    double lead_sum = 0.0;
    int lead_count = 0;
    for (auto& [fam, entry] : families) {
        if (auto it = popularity.find(fam); it != popularity.end()) {
            entry.popular = true;
            entry.popularity_month = it->second;
            ++summary.n_popular;
            if (entry.labeled) {
                entry.lead = entry.popularity_month - entry.first_labeled_month;
                lead_sum += entry.lead;
                ++lead_count;
                if (entry.lead > 0) ++summary.n_labeled_in_advance;
            }
        }
        summary.families.push_back(entry);
    }
    if (summary.n_popular > 0) {
        summary.fraction_labeled_in_advance =
            static_cast<double>(summary.n_labeled_in_advance) / summary.n_popular;
    }
    if (lead_count > 0) summary.mean_lead = lead_sum / lead_count;
    return summary;
}

// ---------------------------------------------------------------------------
// Two-round hyperparameter tuning
// ---------------------------------------------------------------------------

struct Round1Entry {
    int config_index = 0;
    double mean_f1 = 0.0;
};

namespace detail {

inline double f1_on_pool(MethodEngine& engine, const dataset::LabeledPool& valid) {
    const std::vector<int> preds = engine.predict(valid.samples);
    Confusion c;
    for (std::size_t i = 0; i < valid.samples.size(); ++i) {
        if (valid.samples[i].y == 1) {
            preds[i] == 1 ? ++c.tp : ++c.fn;
        } else {
            preds[i] == 1 ? ++c.fp : ++c.tn;
        }
    }
    return compute_metrics(c).f1;
}

template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::atomic<int> next{0};
    const int workers = std::min(jobs, n);
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace detail

// Round 1: randomized splits of the initial pool; per candidate, the mean
// validation F1 over the splits. Returns the best `keep` candidates (all of
// them when the grid is smaller), ties broken by lower config index.
inline std::vector<Round1Entry> tune_round1(const dataset::LabeledPool& pool,
                                            const std::vector<ALConfig>& candidates,
                                            int n_splits = 5, double valid_fraction = 0.2,
                                            std::uint64_t seed = 0, int keep = 10, int jobs = 1) {
    if (candidates.empty()) throw ConfigError("tune_round1: empty candidate grid");
    const auto splits = dataset::random_splits(pool, n_splits, valid_fraction, seed);
    std::vector<Round1Entry> entries(candidates.size());
    detail::parallel_for(static_cast<int>(candidates.size()), jobs, [&](int c) {
        double f1_sum = 0.0;
        for (std::size_t s = 0; s < splits.size(); ++s) {
            ALConfig cfg = candidates[c];
            cfg.seed = derive_seed(cfg.seed, 0x701, s);
            auto engine = detail::make_engine(cfg);
            engine->train_initial(splits[s].first);
            f1_sum += detail::f1_on_pool(*engine, splits[s].second);
        }
        entries[c] = {c, f1_sum / static_cast<double>(splits.size())};
    });
    std::stable_sort(entries.begin(), entries.end(), [](const Round1Entry& a, const Round1Entry& b) {
        if (a.mean_f1 != b.mean_f1) return a.mean_f1 > b.mean_f1;
        return a.config_index < b.config_index;
    });
    if (static_cast<int>(entries.size()) > keep) entries.resize(keep);
    return entries;
}

struct Round2Entry {
    int config_index = 0;  // index into the round-2 candidate list
    double mean_f1 = 0.0;
};

// Round 2: full active-learning runs over the validation months at the given
// budget; the config with the best mean monthly F1 wins, ties broken by
// lower index.
inline std::vector<Round2Entry> tune_round2(const dataset::MonthlyStream& stream,
                                            const std::vector<ALConfig>& candidates,
                                            int initial_train_months, int validation_months,
                                            int budget = 50, int jobs = 1) {
    if (candidates.empty()) throw ConfigError("tune_round2: empty candidate list");
    if (stream.month_count() < initial_train_months + validation_months) {
        throw ConfigError("tune_round2: stream too short for the requested validation window");
    }
    dataset::MonthlyStream truncated;
    truncated.dim = stream.dim;
    truncated.first_month = stream.first_month;
    truncated.months.assign(stream.months.begin(),
                            stream.months.begin() + initial_train_months + validation_months);

    std::vector<Round2Entry> entries(candidates.size());
    detail::parallel_for(static_cast<int>(candidates.size()), jobs, [&](int c) {
        ALConfig cfg = candidates[c];
        cfg.budget_per_month = budget;
        const ALResult result = run_active_learning(truncated, initial_train_months, cfg);
        entries[c] = {c, result.metrics.average.f1};
    });
    std::stable_sort(entries.begin(), entries.end(), [](const Round2Entry& a, const Round2Entry& b) {
        if (a.mean_f1 != b.mean_f1) return a.mean_f1 > b.mean_f1;
        return a.config_index < b.config_index;
    });
    return entries;
}

}  // namespace driftforge::harness

#endif  // DRIFTFORGE_HARNESS_HPP
