#ifndef DRIFTFORGE_SELECTORS_HPP
#define DRIFTFORGE_SELECTORS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/dataset.hpp"
#include "driftforge/hcc.hpp"
#include "driftforge/ndcore.hpp"
#include "driftforge/rng.hpp"

namespace driftforge::selectors {

// ---------------------------------------------------------------------------
// Classifier-confidence scores
// ---------------------------------------------------------------------------

// 1 - max(f, 1-f); 0.5 at the decision boundary, 0 for confident predictions.
inline double max_softmax_uncertainty(double f) { return 1.0 - std::max(f, 1.0 - f); }

inline double max_softmax_uncertainty(const hcc::EncoderClassifier& model,
                                      const dataset::Sample& s) {
    return max_softmax_uncertainty(hcc::malicious_prob(model, s));
}

// Cross entropy against the predicted label: -max(log f, log(1-f)), with the
// usual probability clamp. Ranks identically to max_softmax_uncertainty.
inline double pseudo_ce(double f) {
    const double fc = std::clamp(f, hcc::kProbClamp, 1.0 - hcc::kProbClamp);
    return -std::max(std::log(fc), std::log(1.0 - fc));
}

inline double pseudo_ce(const hcc::EncoderClassifier& model, const dataset::Sample& s) {
    return pseudo_ce(hcc::malicious_prob(model, s));
}

// ---------------------------------------------------------------------------
// Embedding index + exact kNN
// ---------------------------------------------------------------------------

// Unit-normalized embeddings of the whole training pool. Tied to the model
// version that produced it; a stale index is rejected by the scorers.
struct EmbeddingIndex {
    Eigen::MatrixXd vectors;  // (embed_dim, n), unit columns
    std::vector<int> y;
    std::vector<int> family;
    std::uint64_t model_version = 0;

    int size() const { return static_cast<int>(vectors.cols()); }
};

inline Eigen::VectorXd normalize_unit(Eigen::VectorXd v) {
    const double n = v.norm();
    if (n > 1e-15) v /= n;
    return v;
}

inline EmbeddingIndex build_index(const hcc::EncoderClassifier& model,
                                  const dataset::LabeledPool& pool) {
    if (pool.empty()) throw UsageError("build_index: empty pool");
    EmbeddingIndex index;
    index.vectors = hcc::encode(model, dataset::to_dense_batch(pool.samples, pool.dim));
    for (Eigen::Index c = 0; c < index.vectors.cols(); ++c) {
        const double n = index.vectors.col(c).norm();
        if (n > 1e-15) index.vectors.col(c) /= n;
    }
    index.y.reserve(pool.size());
    index.family.reserve(pool.size());
    for (const auto& s : pool.samples) {
        index.y.push_back(s.y);
        index.family.push_back(s.family);
    }
    index.model_version = model.version;
    return index;
}

struct Neighbor {
    int pos;      // position in the index / pool
    double dist;  // Euclidean distance in the normalized space
};

// Exact k nearest; ties broken by smaller pool position.
inline std::vector<Neighbor> knn(const EmbeddingIndex& index, const Eigen::VectorXd& query, int k) {
    if (k <= 0) throw UsageError("knn: k must be positive");
    if (k > index.size()) throw UsageError("knn: k exceeds index size");
    std::vector<Neighbor> all(index.size());
    for (int i = 0; i < index.size(); ++i) {
        all[i] = {i, (index.vectors.col(i) - query).norm()};
    }
    auto cmp = [](const Neighbor& a, const Neighbor& b) {
        return a.dist < b.dist || (a.dist == b.dist && a.pos < b.pos);
    };
    std::partial_sort(all.begin(), all.begin() + k, all.end(), cmp);
    all.resize(k);
    return all;
}

// ---------------------------------------------------------------------------
// Pseudo hierarchical contrastive loss (the core sample-selection score)
// ---------------------------------------------------------------------------

struct PseudoHcResult {
    double value = 0.0;
    int neighbors_used = 0;
    bool truncated = false;  // index smaller than 2N-1
};

// Batch = the test sample plus its 2N-1 nearest training neighbors in the
// normalized embedding space, with the predicted label standing in for ground
// truth: mean over same-label neighbors of max(0, d - m) plus mean over
// opposite-label neighbors of max(0, 2m - d). Empty sets contribute 0.
inline PseudoHcResult pseudo_hc_loss(const hcc::EncoderClassifier& model,
                                     const dataset::Sample& s, const EmbeddingIndex& index,
                                     int n_half, double margin) {
    if (index.model_version != model.version) {
        throw UsageError("pseudo_hc_loss: stale embedding index");
    }
    if (n_half <= 0) throw UsageError("pseudo_hc_loss: N must be positive");
    const Eigen::VectorXd x = dataset::to_dense(s, model.input_dim());
    const Eigen::VectorXd emb = normalize_unit(hcc::encode(model, x).col(0));
    const double f = hcc::malicious_prob(model, s);
    const int predicted = hcc::predict_label(f);

    PseudoHcResult res;
    const int want = 2 * n_half - 1;
    const int k = std::min(want, index.size());
    res.truncated = k < want;
    res.neighbors_used = k;
    const std::vector<Neighbor> neighbors = knn(index, emb, k);

    double same_sum = 0.0, opp_sum = 0.0;
    int same_n = 0, opp_n = 0;
    for (const Neighbor& nb : neighbors) {
        if (index.y[nb.pos] == predicted) {
            same_sum += std::max(0.0, nb.dist - margin);
            ++same_n;
        } else {
            opp_sum += std::max(0.0, 2.0 * margin - nb.dist);
            ++opp_n;
        }
    }
    if (same_n > 0) res.value += same_sum / same_n;
    if (opp_n > 0) res.value += opp_sum / opp_n;
    return res;
}

// Total pseudo loss: pseudo_hc + lambda * pseudo_ce with the model's frozen
// lambda and margin.
inline double pseudo_loss_total(const hcc::EncoderClassifier& model, const dataset::Sample& s,
                                const EmbeddingIndex& index, int n_half) {
    return pseudo_hc_loss(model, s, index, n_half, model.margin).value +
           model.lambda * pseudo_ce(model, s);
}

// ---------------------------------------------------------------------------
// CADE: contrastive autoencoder OOD scorer
// ---------------------------------------------------------------------------

struct CadeArch {
    std::vector<int> encoder_hidden{512, 384, 256};
    int embedding_dim = 128;
};

struct CadeClassStats {
    int label = 0;  // family id, benign = 0
    Eigen::VectorXd centroid;
    double median_dist = 0.0;
    double mad = 0.0;
};

struct CadeModel {
    ndcore::DenseNet encoder;  // D -> hidden -> embedding
    ndcore::DenseNet decoder;  // embedding -> mirrored hidden -> D
    double margin = 10.0;
    double contrastive_weight = 0.1;
    std::vector<CadeClassStats> stats;
    std::uint64_t version = 0;

    int input_dim() const { return encoder.input_dim(); }
};

struct CadeTrainConfig {
    ndcore::OptKind optimizer = ndcore::OptKind::kAdam;
    ndcore::LrSchedule schedule = ndcore::step_decay_lr(0.005, 0.95, 10);
    int epochs = 50;
    int batch = 1024;
    double margin = 10.0;
    double contrastive_weight = 0.1;
    std::uint64_t seed = 0;
    // warm-start fields
    ndcore::OptKind warm_optimizer = ndcore::OptKind::kAdam;
    double warm_lr = 5e-4;
    int warm_epochs = 25;
};

inline CadeModel make_cade_model(int input_dim, const CadeArch& arch, const CadeTrainConfig& cfg,
                                 Rng& rng) {
    std::vector<int> enc_dims;
    enc_dims.push_back(input_dim);
    for (int h : arch.encoder_hidden) enc_dims.push_back(h);
    enc_dims.push_back(arch.embedding_dim);
    std::vector<int> dec_dims(enc_dims.rbegin(), enc_dims.rend());
    CadeModel model;
    model.encoder = ndcore::make_dense_net(enc_dims, ndcore::OutputHead::kLinear, rng);
    model.decoder = ndcore::make_dense_net(dec_dims, ndcore::OutputHead::kLinear, rng);
    model.margin = cfg.margin;
    model.contrastive_weight = cfg.contrastive_weight;
    return model;
}

struct CadeLossResult {
    double loss = 0.0;
    double reconstruction = 0.0;  // mean over batch of ||x - dec(enc(x))||^2
    double contrastive = 0.0;     // mean over pairs
    ndcore::NetGrad encoder_grad;
    ndcore::NetGrad decoder_grad;
};

// Reconstruction + pairwise contrastive loss over explicit pairs: same-class
// pairs contribute d^2, different-class pairs max(0, m - d)^2, distances in
// the raw embedding space.
inline CadeLossResult cade_loss(const CadeModel& model, const Eigen::MatrixXd& x,
                                const std::vector<int>& class_labels,
                                const std::vector<std::pair<int, int>>& pairs) {
    const int b = static_cast<int>(x.cols());
    if (static_cast<int>(class_labels.size()) != b) throw UsageError("cade_loss: label mismatch");
    CadeLossResult res;
    res.encoder_grad = ndcore::NetGrad::zeros_like(model.encoder);
    res.decoder_grad = ndcore::NetGrad::zeros_like(model.decoder);

    const auto enc_trace = ndcore::forward_batch(model.encoder, x);
    const Eigen::MatrixXd& emb = enc_trace.output();
    const auto dec_trace = ndcore::forward_batch(model.decoder, emb);
    const Eigen::MatrixXd residual = dec_trace.output() - x;

    res.reconstruction = residual.squaredNorm() / b;

    Eigen::MatrixXd demb = Eigen::MatrixXd::Zero(emb.rows(), b);
    if (!pairs.empty()) {
        const double pair_scale = model.contrastive_weight / static_cast<double>(pairs.size());
        for (const auto& [i, j] : pairs) {
            const Eigen::VectorXd diff = emb.col(i) - emb.col(j);
            const double d = diff.norm();
            if (class_labels[i] == class_labels[j]) {
                res.contrastive += d * d / static_cast<double>(pairs.size());
                demb.col(i) += pair_scale * 2.0 * diff;
                demb.col(j) -= pair_scale * 2.0 * diff;
            } else if (d < model.margin) {
                const double gap = model.margin - d;
                res.contrastive += gap * gap / static_cast<double>(pairs.size());
                if (d > 0.0) {
                    const Eigen::VectorXd dir = (-2.0 * gap / d) * diff;
                    demb.col(i) += pair_scale * dir;
                    demb.col(j) -= pair_scale * dir;
                }
            }
        }
    }
    res.loss = res.reconstruction + model.contrastive_weight * res.contrastive;

    const Eigen::MatrixXd drecon = (2.0 / b) * residual;
    Eigen::MatrixXd demb_from_decoder =
        ndcore::backward_batch(model.decoder, dec_trace, drecon, res.decoder_grad);
    demb += demb_from_decoder;
    ndcore::backward_batch(model.encoder, enc_trace, demb, res.encoder_grad);
    return res;
}

namespace detail {

inline void cade_stats(CadeModel& model, const dataset::LabeledPool& pool) {
    const Eigen::MatrixXd emb =
        ndcore::forward_batch(model.encoder, dataset::to_dense_batch(pool.samples, pool.dim))
            .output();
    std::map<int, std::vector<int>> members;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        members[pool.samples[i].family].push_back(static_cast<int>(i));
    }
    model.stats.clear();
    for (const auto& [label, idx] : members) {
        CadeClassStats st;
        st.label = label;
        st.centroid = Eigen::VectorXd::Zero(emb.rows());
        for (int i : idx) st.centroid += emb.col(i);
        st.centroid /= static_cast<double>(idx.size());
        std::vector<double> dists;
        dists.reserve(idx.size());
        for (int i : idx) dists.push_back((emb.col(i) - st.centroid).norm());
        std::sort(dists.begin(), dists.end());
        const std::size_t n = dists.size();
        st.median_dist = n % 2 == 1 ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
        std::vector<double> dev;
        dev.reserve(n);
        for (double d : dists) dev.push_back(std::abs(d - st.median_dist));
        std::sort(dev.begin(), dev.end());
        st.mad = n % 2 == 1 ? dev[n / 2] : 0.5 * (dev[n / 2 - 1] + dev[n / 2]);
        model.stats.push_back(std::move(st));
    }
}

inline void cade_train_epochs(CadeModel& model, const dataset::LabeledPool& pool,
                              ndcore::OptKind opt_kind, const ndcore::LrSchedule& schedule,
                              int epochs, int batch_size, Rng& rng) {
    ndcore::OptimizerState opt_enc =
        ndcore::make_optimizer(opt_kind, schedule.base_lr, model.encoder);
    ndcore::OptimizerState opt_dec =
        ndcore::make_optimizer(opt_kind, schedule.base_lr, model.decoder);
    const std::size_t n = pool.size();
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double lr = ndcore::lr_at(schedule, epoch);
        opt_enc.learning_rate = lr;
        opt_dec.learning_rate = lr;
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(n, start + batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            const Eigen::MatrixXd x = dataset::to_dense_batch(pool, batch);
            std::vector<int> labels;
            labels.reserve(batch.size());
            for (int i : batch) labels.push_back(pool.samples[i].family);
            // adjacent pairing over the shuffled batch; an odd tail sample
            // only contributes reconstruction loss
            std::vector<std::pair<int, int>> pairs;
            for (std::size_t k = 0; k + 1 < batch.size(); k += 2) {
                pairs.emplace_back(static_cast<int>(k), static_cast<int>(k + 1));
            }
            CadeLossResult res = cade_loss(model, x, labels, pairs);
            ndcore::optimizer_step(opt_enc, model.encoder, res.encoder_grad);
            ndcore::optimizer_step(opt_dec, model.decoder, res.decoder_grad);
        }
    }
    ++model.version;
}

}  // namespace detail

inline CadeModel train_cade(const dataset::LabeledPool& pool, const CadeArch& arch,
                            const CadeTrainConfig& cfg) {
    if (pool.empty()) throw UsageError("train_cade: empty pool");
    Rng rng(derive_seed(cfg.seed, 0xCADE));
    CadeModel model = make_cade_model(pool.dim, arch, cfg, rng);
    detail::cade_train_epochs(model, pool, cfg.optimizer, cfg.schedule, cfg.epochs, cfg.batch, rng);
    detail::cade_stats(model, pool);
    return model;
}

inline void train_cade_warm(CadeModel& model, const dataset::LabeledPool& pool,
                            const CadeTrainConfig& cfg) {
    if (pool.empty()) throw UsageError("train_cade_warm: empty pool");
    if (pool.dim != model.input_dim()) throw UsageError("train_cade_warm: dimension mismatch");
    Rng rng(derive_seed(cfg.seed, 0xADE2));
    detail::cade_train_epochs(model, pool, cfg.warm_optimizer, ndcore::constant_lr(cfg.warm_lr),
                              cfg.warm_epochs, cfg.batch, rng);
    detail::cade_stats(model, pool);
}

// Min over classes of |d(enc(x), centroid_c) - median_c| / (MAD_c + 1e-12);
// higher = more out-of-distribution.
inline double cade_ood(const CadeModel& model, const dataset::Sample& s) {
    if (model.stats.empty()) throw UsageError("cade_ood: model has no class statistics");
    const Eigen::VectorXd emb =
        ndcore::forward_batch(model.encoder, dataset::to_dense(s, model.input_dim())).output().col(0);
    double best = std::numeric_limits<double>::infinity();
    for (const CadeClassStats& st : model.stats) {
        const double d = (emb - st.centroid).norm();
        best = std::min(best, std::abs(d - st.median_dist) / (st.mad + 1e-12));
    }
    return best;
}

// CADE embedding of a batch, used by the embedding-input classifier variant.
inline Eigen::MatrixXd cade_encode(const CadeModel& model, const Eigen::MatrixXd& x) {
    return ndcore::forward_batch(model.encoder, x).output();
}

// ---------------------------------------------------------------------------
// Top-budget selection
// ---------------------------------------------------------------------------

// The `budget` ids with the highest scores; ties broken by lexicographic id.
inline std::vector<std::string> select_top(const std::vector<std::pair<std::string, double>>& scores,
                                           int budget) {
    if (budget < 0) throw UsageError("select_top: negative budget");
    std::vector<std::pair<std::string, double>> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return a.second > b.second || (a.second == b.second && a.first < b.first);
    });
    std::vector<std::string> out;
    const int take = std::min<int>(budget, static_cast<int>(sorted.size()));
    out.reserve(take);
    for (int i = 0; i < take; ++i) out.push_back(sorted[i].first);
    return out;
}

// ---------------------------------------------------------------------------
// Embedding export (replaces the paper-style projection plots)
// ---------------------------------------------------------------------------

struct EmbeddingRow {
    std::string id;
    int y;
    int family;
    Eigen::VectorXd raw;
    Eigen::VectorXd unit;
};

template <typename SampleRange>
std::vector<EmbeddingRow> export_embeddings(const hcc::EncoderClassifier& model,
                                            const SampleRange& samples) {
    std::vector<EmbeddingRow> rows;
    for (const dataset::Sample& s : samples) {
        EmbeddingRow row;
        row.id = s.id;
        row.y = s.y;
        row.family = s.family;
        row.raw = hcc::encode(model, dataset::to_dense(s, model.input_dim())).col(0);
        row.unit = normalize_unit(row.raw);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace driftforge::selectors

#endif  // DRIFTFORGE_SELECTORS_HPP
