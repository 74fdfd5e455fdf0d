#ifndef DRIFTFORGE_NDCORE_HPP
#define DRIFTFORGE_NDCORE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/rng.hpp"

namespace driftforge::ndcore {

enum class OutputHead : std::uint8_t { kLinear = 0, kSoftmax2 = 1 };
enum class OptKind : std::uint8_t { kSgd = 0, kAdam = 1 };

// Fully connected net: ReLU on hidden layers, linear or 2-way softmax output.
// weights[l] has shape (layer_dims[l+1], layer_dims[l]).
struct DenseNet {
    std::vector<int> layer_dims;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    OutputHead head = OutputHead::kLinear;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    std::size_t num_layers() const { return weights.size(); }
};

// He-uniform initialization, zero biases.
inline DenseNet make_dense_net(std::vector<int> layer_dims, OutputHead head, Rng& rng) {
    if (layer_dims.size() < 2) throw UsageError("dense net needs at least input and output dims");
    for (int d : layer_dims) {
        if (d <= 0) throw UsageError("layer dims must be positive");
    }
    if (head == OutputHead::kSoftmax2 && layer_dims.back() != 2) {
        throw UsageError("softmax2 head requires output dim 2");
    }
    DenseNet net;
    net.layer_dims = std::move(layer_dims);
    net.head = head;
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        const int fan_in = net.layer_dims[l];
        const int fan_out = net.layer_dims[l + 1];
        const double limit = std::sqrt(6.0 / fan_in);
        Eigen::MatrixXd w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-limit, limit);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return net;
}

// Cached activations from a forward pass; required by backward_batch.
struct ForwardTrace {
    Eigen::MatrixXd input;             // (in_dim, batch)
    std::vector<Eigen::MatrixXd> pre;  // affine outputs per layer
    std::vector<Eigen::MatrixXd> act;  // post ReLU / post head per layer

    const Eigen::MatrixXd& output() const { return act.back(); }
};

namespace detail {

inline void softmax2_inplace(Eigen::MatrixXd& z) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double mx = std::max(z(0, c), z(1, c));
        const double e0 = std::exp(z(0, c) - mx);
        const double e1 = std::exp(z(1, c) - mx);
        const double s = e0 + e1;
        z(0, c) = e0 / s;
        z(1, c) = e1 / s;
    }
}

}  // namespace detail

// Columns are samples. All hidden activations are retained for backprop.
inline ForwardTrace forward_batch(const DenseNet& net, const Eigen::MatrixXd& x) {
    if (x.rows() != net.input_dim()) {
        throw UsageError("forward: input has " + std::to_string(x.rows()) +
                         " rows, net expects " + std::to_string(net.input_dim()));
    }
    ForwardTrace t;
    t.input = x;
    const std::size_t n_layers = net.num_layers();
    t.pre.reserve(n_layers);
    t.act.reserve(n_layers);
    const Eigen::MatrixXd* cur = &t.input;
    for (std::size_t l = 0; l < n_layers; ++l) {
        Eigen::MatrixXd z = net.weights[l] * (*cur);
        z.colwise() += net.biases[l];
        t.pre.push_back(z);
        if (l + 1 < n_layers) {
            t.act.push_back(t.pre.back().cwiseMax(0.0));
        } else if (net.head == OutputHead::kSoftmax2) {
            Eigen::MatrixXd out = t.pre.back();
            detail::softmax2_inplace(out);
            t.act.push_back(std::move(out));
        } else {
            t.act.push_back(t.pre.back());
        }
        cur = &t.act.back();
    }
    return t;
}

// Single-sample forward: (hidden activations, output).
inline std::pair<std::vector<Eigen::VectorXd>, Eigen::VectorXd> forward(const DenseNet& net,
                                                                        const Eigen::VectorXd& x) {
    const ForwardTrace t = forward_batch(net, x);
    std::vector<Eigen::VectorXd> hidden;
    for (std::size_t l = 0; l + 1 < t.act.size(); ++l) hidden.emplace_back(t.act[l].col(0));
    return {std::move(hidden), Eigen::VectorXd(t.output().col(0))};
}

struct NetGrad {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;

    static NetGrad zeros_like(const DenseNet& net) {
        NetGrad g;
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            g.dw.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
            g.db.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
        }
        return g;
    }

    void add_scaled(const NetGrad& other, double s) {
        for (std::size_t l = 0; l < dw.size(); ++l) {
            dw[l] += s * other.dw[l];
            db[l] += s * other.db[l];
        }
    }
};

// Reverse pass over a cached trace. `dout` is dLoss/d(output); gradients are
// accumulated into `grad` and the gradient w.r.t. the input batch is returned.
// ReLU uses subgradient 0 at exactly 0.
inline Eigen::MatrixXd backward_batch(const DenseNet& net, const ForwardTrace& trace,
                                      const Eigen::MatrixXd& dout, NetGrad& grad) {
    const std::size_t n_layers = net.num_layers();
    if (trace.pre.size() != n_layers || trace.act.size() != n_layers) {
        throw UsageError("backward: trace does not match net (missing forward state?)");
    }
    if (dout.rows() != net.output_dim() || dout.cols() != trace.input.cols()) {
        throw UsageError("backward: output gradient shape mismatch");
    }
    if (grad.dw.size() != n_layers) throw UsageError("backward: gradient accumulator shape mismatch");

    Eigen::MatrixXd dz;
    if (net.head == OutputHead::kSoftmax2) {
        const Eigen::MatrixXd& p = trace.act.back();
        dz.resize(dout.rows(), dout.cols());
        for (Eigen::Index c = 0; c < dout.cols(); ++c) {
            const double dot = p(0, c) * dout(0, c) + p(1, c) * dout(1, c);
            dz(0, c) = p(0, c) * (dout(0, c) - dot);
            dz(1, c) = p(1, c) * (dout(1, c) - dot);
        }
    } else {
        dz = dout;
    }

    for (std::size_t l = n_layers; l-- > 0;) {
        const Eigen::MatrixXd& below = (l == 0) ? trace.input : trace.act[l - 1];
        grad.dw[l].noalias() += dz * below.transpose();
        grad.db[l] += dz.rowwise().sum();
        if (l == 0) return net.weights[0].transpose() * dz;
        Eigen::MatrixXd da = net.weights[l].transpose() * dz;
        dz = (trace.pre[l - 1].array() > 0.0).cast<double>() * da.array();
    }
    return {};  // unreachable
}

// SGD or Adam with the fixed hyperparameters beta1=0.9, beta2=0.999, eps=1e-8.
struct OptimizerState {
    OptKind kind = OptKind::kSgd;
    double learning_rate = 0.01;
    long step_count = 0;
    std::vector<Eigen::MatrixXd> m_w, v_w;
    std::vector<Eigen::VectorXd> m_b, v_b;

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
};

inline OptimizerState make_optimizer(OptKind kind, double learning_rate, const DenseNet& net) {
    if (learning_rate <= 0.0) throw UsageError("learning rate must be positive");
    OptimizerState st;
    st.kind = kind;
    st.learning_rate = learning_rate;
    if (kind == OptKind::kAdam) {
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            st.m_w.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
            st.v_w.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
            st.m_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
            st.v_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
        }
    }
    return st;
}

namespace detail {

template <typename T>
void adam_update(T& param, const T& g, T& m, T& v, double lr, double bias1, double bias2) {
    m = OptimizerState::kBeta1 * m + (1.0 - OptimizerState::kBeta1) * g;
    v = OptimizerState::kBeta2 * v.array() + (1.0 - OptimizerState::kBeta2) * g.array().square();
    param.array() -=
        lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + OptimizerState::kEps);
}

}  // namespace detail

inline void optimizer_step(OptimizerState& st, DenseNet& net, const NetGrad& grad) {
    if (grad.dw.size() != net.num_layers()) throw UsageError("optimizer_step: shape mismatch");
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        if (grad.dw[l].rows() != net.weights[l].rows() || grad.dw[l].cols() != net.weights[l].cols() ||
            grad.db[l].size() != net.biases[l].size()) {
            throw UsageError("optimizer_step: gradient shape mismatch at layer " + std::to_string(l));
        }
    }
    if (st.kind == OptKind::kSgd) {
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            net.weights[l] -= st.learning_rate * grad.dw[l];
            net.biases[l] -= st.learning_rate * grad.db[l];
        }
        return;
    }
    if (st.m_w.size() != net.num_layers()) throw UsageError("optimizer_step: adam state mismatch");
    ++st.step_count;
    const double bias1 = 1.0 - std::pow(OptimizerState::kBeta1, static_cast<double>(st.step_count));
    const double bias2 = 1.0 - std::pow(OptimizerState::kBeta2, static_cast<double>(st.step_count));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        detail::adam_update(net.weights[l], grad.dw[l], st.m_w[l], st.v_w[l], st.learning_rate,
                            bias1, bias2);
        detail::adam_update(net.biases[l], grad.db[l], st.m_b[l], st.v_b[l], st.learning_rate,
                            bias1, bias2);
    }
}

struct LrSchedule {
    enum class Kind { kConstant, kStepDecay, kCosine };
    Kind kind = Kind::kConstant;
    double base_lr = 0.01;
    double decay_factor = 1.0;  // step_decay, in (0, 1]
    int decay_every = 1;        // step_decay, epochs
    int total_epochs = 0;       // cosine
};

inline LrSchedule constant_lr(double base) { return {LrSchedule::Kind::kConstant, base, 1.0, 1, 0}; }

inline LrSchedule step_decay_lr(double base, double factor, int every) {
    return {LrSchedule::Kind::kStepDecay, base, factor, every, 0};
}

inline LrSchedule cosine_lr(double base, int total_epochs) {
    return {LrSchedule::Kind::kCosine, base, 1.0, 1, total_epochs};
}

inline double lr_at(const LrSchedule& s, int epoch) {
    if (epoch < 0) throw UsageError("lr_at: negative epoch");
    switch (s.kind) {
        case LrSchedule::Kind::kConstant:
            return s.base_lr;
        case LrSchedule::Kind::kStepDecay:
            return s.base_lr * std::pow(s.decay_factor, static_cast<double>(epoch / s.decay_every));
        case LrSchedule::Kind::kCosine:
            if (epoch >= s.total_epochs) throw UsageError("lr_at: epoch beyond cosine horizon");
            return s.base_lr * 0.5 *
                   (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                   static_cast<double>(s.total_epochs)));
    }
    throw UsageError("lr_at: bad schedule kind");
}

// ---------------------------------------------------------------------------
// Checkpoint container. Binary, host-endian (little-endian on all supported
// targets), bit-exact on round trip:
//   bytes 0..7   magic "DFNETV1\n"
//   u8           output head (0 linear, 1 softmax2)
//   u8           optimizer kind (0 sgd, 1 adam)
//   u32          number of dims
//   i64 * n      layer dims
//   per layer:   f64 * (out*in) weights row-major, then f64 * out biases
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kNetMagic[8] = {'D', 'F', 'N', 'E', 'T', 'V', '1', '\n'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated stream");
    return v;
}

}  // namespace detail

inline void save_net(const DenseNet& net, OptKind opt, std::ostream& os) {
    os.write(detail::kNetMagic, sizeof(detail::kNetMagic));
    detail::write_pod(os, static_cast<std::uint8_t>(net.head));
    detail::write_pod(os, static_cast<std::uint8_t>(opt));
    detail::write_pod(os, static_cast<std::uint32_t>(net.layer_dims.size()));
    for (int d : net.layer_dims) detail::write_pod(os, static_cast<std::int64_t>(d));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const Eigen::MatrixXd& w = net.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) detail::write_pod(os, w(r, c));
        }
        const Eigen::VectorXd& b = net.biases[l];
        for (Eigen::Index i = 0; i < b.size(); ++i) detail::write_pod(os, b(i));
    }
}

inline std::pair<DenseNet, OptKind> load_net(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kNetMagic, sizeof(magic)) != 0) {
        throw DataError("checkpoint: bad magic");
    }
    const auto head = detail::read_pod<std::uint8_t>(is);
    const auto opt = detail::read_pod<std::uint8_t>(is);
    if (head > 1 || opt > 1) throw DataError("checkpoint: bad head/optimizer byte");
    const auto n_dims = detail::read_pod<std::uint32_t>(is);
    if (n_dims < 2 || n_dims > 64) throw DataError("checkpoint: implausible layer count");
    DenseNet net;
    net.head = static_cast<OutputHead>(head);
    for (std::uint32_t i = 0; i < n_dims; ++i) {
        const auto d = detail::read_pod<std::int64_t>(is);
        if (d <= 0) throw DataError("checkpoint: non-positive layer dim");
        net.layer_dims.push_back(static_cast<int>(d));
    }
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        Eigen::MatrixXd w(net.layer_dims[l + 1], net.layer_dims[l]);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = detail::read_pod<double>(is);
        }
        Eigen::VectorXd b(net.layer_dims[l + 1]);
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = detail::read_pod<double>(is);
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    return {std::move(net), static_cast<OptKind>(opt)};
}

inline void save_net_file(const DenseNet& net, OptKind opt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    save_net(net, opt, os);
}

inline std::pair<DenseNet, OptKind> load_net_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    return load_net(is);
}

}  // namespace driftforge::ndcore

#endif  // DRIFTFORGE_NDCORE_HPP
