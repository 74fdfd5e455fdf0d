#ifndef DRIFTFORGE_HCC_HPP
#define DRIFTFORGE_HCC_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/dataset.hpp"
#include "driftforge/ndcore.hpp"
#include "driftforge/rng.hpp"

namespace driftforge::hcc {

inline constexpr double kProbClamp = 1e-12;

struct HccArch {
    std::vector<int> encoder_hidden{512, 384, 256};
    int embedding_dim = 128;
    std::vector<int> classifier_hidden{100, 100};
};

// Encoder + classifier trained end-to-end with the combined loss. f(x) is the
// malicious softmax output; the predicted label is 1 iff f(x) >= 0.5.
struct EncoderClassifier {
    ndcore::DenseNet encoder;     // linear output = embedding
    ndcore::DenseNet classifier;  // softmax2 over the embedding
    double margin = 10.0;
    double lambda = 1.0;
    bool lambda_degenerate = false;
    int trained_epochs = 0;
    std::uint64_t version = 0;  // bumped by every training call

    int input_dim() const { return encoder.input_dim(); }
    int embedding_dim() const { return encoder.output_dim(); }
};

inline EncoderClassifier make_encoder_classifier(int input_dim, const HccArch& arch, double margin,
                                                 Rng& rng) {
    if (margin <= 0.0) throw ConfigError("hcc: margin must be positive");
    std::vector<int> enc_dims;
    enc_dims.push_back(input_dim);
    for (int h : arch.encoder_hidden) enc_dims.push_back(h);
    enc_dims.push_back(arch.embedding_dim);
    std::vector<int> clf_dims;
    clf_dims.push_back(arch.embedding_dim);
    for (int h : arch.classifier_hidden) clf_dims.push_back(h);
    clf_dims.push_back(2);

    EncoderClassifier model;
    model.encoder = ndcore::make_dense_net(enc_dims, ndcore::OutputHead::kLinear, rng);
    model.classifier = ndcore::make_dense_net(clf_dims, ndcore::OutputHead::kSoftmax2, rng);
    model.margin = margin;
    return model;
}

inline Eigen::MatrixXd encode(const EncoderClassifier& model, const Eigen::MatrixXd& x) {
    return ndcore::forward_batch(model.encoder, x).output();
}

// f(x) for each column of x.
inline Eigen::VectorXd malicious_prob_batch(const EncoderClassifier& model,
                                            const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd emb = encode(model, x);
    const Eigen::MatrixXd probs = ndcore::forward_batch(model.classifier, emb).output();
    return probs.row(1).transpose();
}

inline double malicious_prob(const EncoderClassifier& model, const dataset::Sample& s) {
    return malicious_prob_batch(model, dataset::to_dense(s, model.input_dim()))(0);
}

inline int predict_label(double f) { return f >= 0.5 ? 1 : 0; }

// ---------------------------------------------------------------------------
// Mirrored batches: 2N samples where sample k+N replicates the (y, family)
// labels of sample k.
// ---------------------------------------------------------------------------

struct MirroredBatch {
    std::vector<int> indices;  // into pool.samples, size 2N
    int half = 0;              // N
};

inline void check_mirrored(const MirroredBatch& batch, const dataset::LabeledPool& pool) {
    if (batch.indices.size() != 2 * static_cast<std::size_t>(batch.half)) {
        throw UsageError("mirrored batch: wrong size");
    }
    for (int k = 0; k < batch.half; ++k) {
        const auto& a = pool.samples[batch.indices[k]];
        const auto& b = pool.samples[batch.indices[k + batch.half]];
        if (a.y != b.y || a.family != b.family) {
            throw UsageError("mirrored batch: label mirroring violated at position " +
                             std::to_string(k));
        }
    }
}

// First half: uniform draws without replacement (with replacement when the
// pool is smaller than N). Second half: per position, a uniform draw from the
// pool members sharing (y, family), excluding the mirrored sample itself when
// that group has at least two members.
inline MirroredBatch sample_mirrored_batch(const dataset::LabeledPool& pool, int n_half, Rng& rng) {
    if (pool.empty()) throw UsageError("sample_mirrored_batch: empty pool");
    if (n_half <= 0) throw UsageError("sample_mirrored_batch: N must be positive");

    std::map<std::pair<int, int>, std::vector<int>> groups;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        groups[{pool.samples[i].y, pool.samples[i].family}].push_back(static_cast<int>(i));
    }

    MirroredBatch batch;
    batch.half = n_half;
    batch.indices = rng.sample_indices(pool.size(), static_cast<std::size_t>(n_half));
    for (int k = 0; k < n_half; ++k) {
        const int first = batch.indices[k];
        const auto& s = pool.samples[first];
        const auto& group = groups.at({s.y, s.family});
        if (group.size() < 2) {
            batch.indices.push_back(first);
            continue;
        }
        int pick;
        do {
            pick = group[rng.index(group.size())];
        } while (pick == first);
        batch.indices.push_back(pick);
    }
    return batch;
}

inline std::vector<int> batch_labels(const dataset::LabeledPool& pool, const MirroredBatch& batch) {
    std::vector<int> y;
    y.reserve(batch.indices.size());
    for (int i : batch.indices) y.push_back(pool.samples[i].y);
    return y;
}

inline std::vector<int> batch_families(const dataset::LabeledPool& pool,
                                       const MirroredBatch& batch) {
    std::vector<int> fam;
    fam.reserve(batch.indices.size());
    for (int i : batch.indices) fam.push_back(pool.samples[i].family);
    return fam;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct CeResult {
    double loss = 0.0;
    Eigen::VectorXd dprob;  // dLoss / d f(x_i)
};

// Unnormalized sum of per-sample binary cross entropies. Probabilities are
// clamped to [1e-12, 1-1e-12] before the logs.
inline CeResult ce_loss(const Eigen::VectorXd& probs, const std::vector<int>& y) {
    if (probs.size() != static_cast<Eigen::Index>(y.size())) {
        throw UsageError("ce_loss: probs/labels size mismatch");
    }
    CeResult res;
    res.dprob = Eigen::VectorXd::Zero(probs.size());
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double f = std::clamp(probs(i), kProbClamp, 1.0 - kProbClamp);
        if (y[i] == 1) {
            res.loss -= std::log(f);
            res.dprob(i) = -1.0 / f;
        } else {
            res.loss -= std::log(1.0 - f);
            res.dprob(i) = 1.0 / (1.0 - f);
        }
    }
    return res;
}

// Pair sets for batch position i:
//   P     same binary label, and (for malicious anchors) a different family
//   P_z   malicious pairs from the same family
//   N     opposite binary labels
struct PairSets {
    std::vector<int> p, p_z, n;
};

inline PairSets hc_pair_sets(const std::vector<int>& y, const std::vector<int>& family, int i) {
    if (y.size() != family.size()) throw UsageError("hc_pair_sets: label arrays mismatch");
    if (i < 0 || i >= static_cast<int>(y.size())) throw UsageError("hc_pair_sets: index out of range");
    PairSets sets;
    for (int j = 0; j < static_cast<int>(y.size()); ++j) {
        if (y[j] != y[i]) {
            sets.n.push_back(j);
            continue;
        }
        if (j == i) continue;
        if (y[i] == 1 && family[j] == family[i]) {
            sets.p_z.push_back(j);
        } else {
            sets.p.push_back(j);
        }
    }
    return sets;
}

struct HcResult {
    double loss = 0.0;
    Eigen::MatrixXd dembed;  // (embed_dim, batch)
};

// Three-term hierarchical contrastive loss over raw (unnormalized) embeddings:
// per anchor i, mean over P of max(0, d - m) + mean over P_z of d +
// mean over N of max(0, 2m - d); an empty set contributes 0.
inline HcResult hc_loss(const Eigen::MatrixXd& emb, const std::vector<int>& y,
                        const std::vector<int>& family, double margin) {
    const int b = static_cast<int>(emb.cols());
    if (static_cast<int>(y.size()) != b || static_cast<int>(family.size()) != b) {
        throw UsageError("hc_loss: label arrays do not match batch");
    }
    HcResult res;
    res.dembed = Eigen::MatrixXd::Zero(emb.rows(), b);
    if (b == 0) return res;

    Eigen::MatrixXd dist(b, b);
    for (int i = 0; i < b; ++i) {
        dist(i, i) = 0.0;
        for (int j = i + 1; j < b; ++j) {
            const double d = (emb.col(i) - emb.col(j)).norm();
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }

    // Per-anchor set sizes from class tallies.
    int n_benign = 0, n_mal = 0;
    std::map<int, int> fam_count;
    for (int j = 0; j < b; ++j) {
        if (y[j] == 0) {
            ++n_benign;
        } else {
            ++n_mal;
            fam_count[family[j]] += 1;
        }
    }

    // coeff(i,j) = dLoss/dd_ij; symmetrized below into the embedding gradient.
    Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(b, b);
    for (int i = 0; i < b; ++i) {
        const bool mal = y[i] == 1;
        const int p_size = mal ? n_mal - fam_count[family[i]] : n_benign - 1;
        const int pz_size = mal ? fam_count[family[i]] - 1 : 0;
        const int n_size = mal ? n_benign : n_mal;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            const double d = dist(i, j);
            if (y[j] != y[i]) {
                if (d < 2.0 * margin) {
                    res.loss += (2.0 * margin - d) / n_size;
                    coeff(i, j) -= 1.0 / n_size;
                }
            } else if (mal && family[j] == family[i]) {
                res.loss += d / pz_size;
                coeff(i, j) += 1.0 / pz_size;
            } else if (p_size > 0) {
                if (d > margin) {
                    res.loss += (d - margin) / p_size;
                    coeff(i, j) += 1.0 / p_size;
                }
            }
        }
    }

    // dLoss/de_i = sum_j (coeff(i,j) + coeff(j,i)) * (e_i - e_j) / d_ij,
    // assembled as a graph-Laplacian product. Zero-distance pairs use the
    // zero subgradient.
    Eigen::MatrixXd w(b, b);
    for (int i = 0; i < b; ++i) {
        w(i, i) = 0.0;
        for (int j = i + 1; j < b; ++j) {
            const double c = coeff(i, j) + coeff(j, i);
            const double v = (c != 0.0 && dist(i, j) > 0.0) ? c / dist(i, j) : 0.0;
            w(i, j) = v;
            w(j, i) = v;
        }
    }
    Eigen::VectorXd row_sum = w.rowwise().sum();
    Eigen::MatrixXd lap = -w;
    lap.diagonal() += row_sum;
    res.dembed = emb * lap;
    return res;
}

struct CombinedResult {
    double loss = 0.0;
    double hc = 0.0;
    double ce = 0.0;
    ndcore::NetGrad encoder_grad;
    ndcore::NetGrad classifier_grad;
};

// L = L_hc + lambda * L_ce; gradients flow into the encoder from both terms
// and into the classifier from the cross entropy.
inline CombinedResult combined_loss(const EncoderClassifier& model, const Eigen::MatrixXd& x,
                                    const std::vector<int>& y, const std::vector<int>& family) {
    CombinedResult res;
    res.encoder_grad = ndcore::NetGrad::zeros_like(model.encoder);
    res.classifier_grad = ndcore::NetGrad::zeros_like(model.classifier);

    const auto enc_trace = ndcore::forward_batch(model.encoder, x);
    const Eigen::MatrixXd& emb = enc_trace.output();
    const auto clf_trace = ndcore::forward_batch(model.classifier, emb);
    const Eigen::VectorXd probs = clf_trace.output().row(1).transpose();

    const CeResult ce = ce_loss(probs, y);
    const HcResult hc = hc_loss(emb, y, family, model.margin);
    res.ce = ce.loss;
    res.hc = hc.loss;
    res.loss = hc.loss + model.lambda * ce.loss;

    Eigen::MatrixXd dprobs = Eigen::MatrixXd::Zero(2, x.cols());
    dprobs.row(1) = model.lambda * ce.dprob.transpose();
    Eigen::MatrixXd dembed =
        ndcore::backward_batch(model.classifier, clf_trace, dprobs, res.classifier_grad);
    dembed += hc.dembed;
    ndcore::backward_batch(model.encoder, enc_trace, dembed, res.encoder_grad);
    return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class LambdaMode { kAuto, kFixed };
enum class StartMode { kCold, kWarm };

struct TrainConfig {
    ndcore::OptKind optimizer = ndcore::OptKind::kSgd;
    ndcore::LrSchedule schedule = ndcore::step_decay_lr(0.005, 0.95, 10);
    int epochs = 100;
    int batch_half = 512;  // N; batches hold 2N samples
    double margin = 10.0;
    LambdaMode lambda_mode = LambdaMode::kAuto;
    double lambda_value = 1.0;
    std::uint64_t seed = 0;
    StartMode mode = StartMode::kCold;
    // warm-start fields, meaningful when mode == kWarm
    ndcore::OptKind warm_optimizer = ndcore::OptKind::kAdam;
    double warm_lr = 5e-5;
    int warm_epochs = 50;
};

struct AutoLambdaResult {
    double lambda = 1.0;
    bool degenerate = false;
};

// lambda = mean(L_hc) / mean(L_ce) over 10 probe batches with the untrained
// model, clamped to [1e-3, 1e3]. A single-class pool cannot be probed
// meaningfully and yields 1.0 with the degenerate flag set.
inline AutoLambdaResult auto_lambda(const EncoderClassifier& model,
                                    const dataset::LabeledPool& pool, int n_half, Rng& rng) {
    bool has_benign = false, has_malicious = false;
    for (const auto& s : pool.samples) {
        (s.y == 0 ? has_benign : has_malicious) = true;
    }
    if (!has_benign || !has_malicious) return {1.0, true};

    double hc_sum = 0.0, ce_sum = 0.0;
    for (int probe = 0; probe < 10; ++probe) {
        MirroredBatch batch = sample_mirrored_batch(pool, n_half, rng);
        const Eigen::MatrixXd x = dataset::to_dense_batch(pool, batch.indices);
        const std::vector<int> y = batch_labels(pool, batch);
        const std::vector<int> fam = batch_families(pool, batch);
        const Eigen::MatrixXd emb = encode(model, x);
        const Eigen::VectorXd probs =
            ndcore::forward_batch(model.classifier, emb).output().row(1).transpose();
        hc_sum += hc_loss(emb, y, fam, model.margin).loss;
        ce_sum += ce_loss(probs, y).loss;
    }
    const double mean_hc = hc_sum / 10.0;
    const double mean_ce = ce_sum / 10.0;
    double ratio;
    if (mean_ce <= 0.0) {
        ratio = 1e3;
    } else {
        ratio = std::clamp(mean_hc / mean_ce, 1e-3, 1e3);
    }
    return {ratio, false};
}

namespace detail {

inline void train_epochs(EncoderClassifier& model, const dataset::LabeledPool& pool,
                         ndcore::OptKind opt_kind, const ndcore::LrSchedule& schedule, int epochs,
                         int n_half, Rng& rng) {
    ndcore::OptimizerState opt_enc = ndcore::make_optimizer(opt_kind, schedule.base_lr, model.encoder);
    ndcore::OptimizerState opt_clf =
        ndcore::make_optimizer(opt_kind, schedule.base_lr, model.classifier);
    const int batches_per_epoch = static_cast<int>(
        (pool.size() + 2 * static_cast<std::size_t>(n_half) - 1) / (2 * static_cast<std::size_t>(n_half)));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double lr = ndcore::lr_at(schedule, epoch);
        opt_enc.learning_rate = lr;
        opt_clf.learning_rate = lr;
        for (int b = 0; b < batches_per_epoch; ++b) {
            MirroredBatch batch = sample_mirrored_batch(pool, n_half, rng);
            const Eigen::MatrixXd x = dataset::to_dense_batch(pool, batch.indices);
            CombinedResult res =
                combined_loss(model, x, batch_labels(pool, batch), batch_families(pool, batch));
            ndcore::optimizer_step(opt_enc, model.encoder, res.encoder_grad);
            ndcore::optimizer_step(opt_clf, model.classifier, res.classifier_grad);
        }
    }
    model.trained_epochs += epochs;
    ++model.version;
}

}  // namespace detail

// Fresh initialization, auto or fixed lambda, then cfg.epochs passes of
// ceil(|pool| / 2N) mirrored batches.
inline EncoderClassifier train_cold(const dataset::LabeledPool& pool, const HccArch& arch,
                                    const TrainConfig& cfg) {
    if (pool.empty()) throw UsageError("train_cold: empty pool");
    Rng rng(derive_seed(cfg.seed, 0xC01D));
    EncoderClassifier model = make_encoder_classifier(pool.dim, arch, cfg.margin, rng);
    if (cfg.lambda_mode == LambdaMode::kAuto) {
        const AutoLambdaResult al = auto_lambda(model, pool, cfg.batch_half, rng);
        model.lambda = al.lambda;
        model.lambda_degenerate = al.degenerate;
    } else {
        model.lambda = cfg.lambda_value;
    }
    detail::train_epochs(model, pool, cfg.optimizer, cfg.schedule, cfg.epochs, cfg.batch_half, rng);
    return model;
}

// Continues from the existing weights with the warm optimizer at a constant
// warm learning rate over the full pool. Lambda is left untouched.
inline void train_warm(EncoderClassifier& model, const dataset::LabeledPool& pool,
                       const TrainConfig& cfg) {
    if (cfg.mode != StartMode::kWarm) throw UsageError("train_warm: config mode is not warm");
    if (pool.empty()) throw UsageError("train_warm: empty pool");
    if (pool.dim != model.input_dim()) throw UsageError("train_warm: pool dimension mismatch");
    Rng rng(derive_seed(cfg.seed, 0x3A12));
    detail::train_epochs(model, pool, cfg.warm_optimizer, ndcore::constant_lr(cfg.warm_lr),
                         cfg.warm_epochs, cfg.batch_half, rng);
}

// Checkpoint: the encoder and classifier nets back to back in the ndcore
// container format. Margin, lambda and epoch counts travel in a JSON sidecar
// written by the CLI.
inline void save_model_nets(const EncoderClassifier& model, std::ostream& os) {
    ndcore::save_net(model.encoder, ndcore::OptKind::kSgd, os);
    ndcore::save_net(model.classifier, ndcore::OptKind::kSgd, os);
}

inline EncoderClassifier load_model_nets(std::istream& is) {
    EncoderClassifier model;
    model.encoder = ndcore::load_net(is).first;
    model.classifier = ndcore::load_net(is).first;
    if (model.encoder.output_dim() != model.classifier.input_dim()) {
        throw DataError("model checkpoint: encoder/classifier dimensions do not match");
    }
    return model;
}

}  // namespace driftforge::hcc

#endif  // DRIFTFORGE_HCC_HPP
