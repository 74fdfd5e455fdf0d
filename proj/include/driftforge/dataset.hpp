#ifndef DRIFTFORGE_DATASET_HPP
#define DRIFTFORGE_DATASET_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "driftforge/common.hpp"
#include "driftforge/rng.hpp"

namespace driftforge::dataset {

// One sparse binary feature vector. family = 0 iff y = 0 (benign class);
// family > 0 names a malware family. Feature indices are strictly ascending.
struct Sample {
    std::string id;
    std::vector<int> features;
    int y = 0;
    int family = 0;
    int month = 0;
};

inline void validate_sample(const Sample& s, int dim) {
    if (s.id.empty()) throw DataError("sample with empty id");
    if (s.y != 0 && s.y != 1) throw DataError("sample " + s.id + ": y must be 0 or 1");
    if ((s.y == 0) != (s.family == 0)) {
        throw DataError("sample " + s.id + ": family must be 0 exactly when benign");
    }
    if (s.family < 0) throw DataError("sample " + s.id + ": negative family");
    if (s.month < 0) throw DataError("sample " + s.id + ": negative month");
    int prev = -1;
    for (int f : s.features) {
        if (f < 0 || f >= dim) {
            throw DataError("sample " + s.id + ": feature index " + std::to_string(f) +
                            " out of range [0," + std::to_string(dim) + ")");
        }
        if (f <= prev) throw DataError("sample " + s.id + ": feature indices not strictly ascending");
        prev = f;
    }
}

// Time-ordered months of samples. months[i] holds samples whose month field is
// first_month + i. Streams built by load/synthesize have first_month = 0;
// temporal_split sub-streams keep the absolute month numbers of their source.
struct MonthlyStream {
    int dim = 0;
    int first_month = 0;
    std::vector<std::vector<Sample>> months;

    int month_count() const { return static_cast<int>(months.size()); }
    int last_month() const { return first_month + month_count() - 1; }
    std::size_t total_samples() const {
        std::size_t n = 0;
        for (const auto& m : months) n += m.size();
        return n;
    }
};

inline void validate_stream(const MonthlyStream& st) {
    if (st.dim <= 0) throw DataError("stream: dimension must be positive");
    std::unordered_set<std::string> ids;
    for (int i = 0; i < st.month_count(); ++i) {
        for (const Sample& s : st.months[i]) {
            validate_sample(s, st.dim);
            if (s.month != st.first_month + i) {
                throw DataError("sample " + s.id + ": month " + std::to_string(s.month) +
                                " stored under month " + std::to_string(st.first_month + i));
            }
            if (!ids.insert(s.id).second) throw DataError("duplicate sample id " + s.id);
        }
    }
}

// Samples available for training. provenance[i] is -1 for the initial pool and
// the labeling month for analyst-provided samples.
struct LabeledPool {
    int dim = 0;
    std::vector<Sample> samples;
    std::vector<int> provenance;

    static constexpr int kInitial = -1;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    void add(Sample s, int provenance_month) {
        samples.push_back(std::move(s));
        provenance.push_back(provenance_month);
    }
};

inline void validate_pool(const LabeledPool& pool) {
    if (pool.samples.size() != pool.provenance.size()) {
        throw UsageError("pool: provenance size mismatch");
    }
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        validate_sample(pool.samples[i], pool.dim);
        if (!ids.insert(pool.samples[i].id).second) {
            throw DataError("pool: duplicate sample id " + pool.samples[i].id);
        }
    }
}

inline Eigen::VectorXd to_dense(const Sample& s, int dim) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    for (int f : s.features) v(f) = 1.0;
    return v;
}

template <typename SampleRange>
Eigen::MatrixXd to_dense_batch(const SampleRange& samples, int dim) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(samples.size()));
    Eigen::Index col = 0;
    for (const Sample& s : samples) {
        for (int f : s.features) m(f, col) = 1.0;
        ++col;
    }
    return m;
}

inline Eigen::MatrixXd to_dense_batch(const LabeledPool& pool, const std::vector<int>& indices) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(pool.dim, static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        for (int f : pool.samples[indices[k]].features) m(f, static_cast<Eigen::Index>(k)) = 1.0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Stream interchange format (bit-exact contract for the CLI):
//   #dim D
//   id<TAB>month<TAB>y<TAB>family<TAB>idx1,idx2,...
// UTF-8, LF endings, indices strictly ascending, no spaces.
// ---------------------------------------------------------------------------

inline MonthlyStream load_stream(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open stream file: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int dim = 0;
    if (std::sscanf(line.c_str(), "#dim %d", &dim) != 1 || dim <= 0) {
        throw DataError(path.string() + ":1: expected header '#dim D'");
    }
    MonthlyStream stream;
    stream.dim = dim;
    long line_no = 1;
    std::vector<Sample> parsed;
    int max_month = -1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 5) {
            throw DataError(where + ": expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
        }
        Sample s;
        s.id = fields[0];
        try {
            s.month = std::stoi(fields[1]);
            s.y = std::stoi(fields[2]);
            s.family = std::stoi(fields[3]);
        } catch (const std::exception&) {
            throw DataError(where + ": non-numeric month/y/family");
        }
        if (!fields[4].empty()) {
            std::size_t pos = 0;
            while (pos <= fields[4].size()) {
                std::size_t comma = fields[4].find(',', pos);
                if (comma == std::string::npos) comma = fields[4].size();
                try {
                    s.features.push_back(std::stoi(fields[4].substr(pos, comma - pos)));
                } catch (const std::exception&) {
                    throw DataError(where + ": bad feature index list");
                }
                pos = comma + 1;
                if (comma == fields[4].size()) break;
            }
        }
        try {
            validate_sample(s, dim);
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        max_month = std::max(max_month, s.month);
        parsed.push_back(std::move(s));
    }
    if (parsed.empty()) throw DataError(path.string() + ": no samples");
    stream.months.resize(static_cast<std::size_t>(max_month) + 1);
    for (Sample& s : parsed) stream.months[s.month].push_back(std::move(s));
    validate_stream(stream);
    return stream;
}

inline void save_stream(const MonthlyStream& stream, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << "#dim " << stream.dim << "\n";
    for (const auto& month : stream.months) {
        for (const Sample& s : month) {
            os << s.id << '\t' << s.month << '\t' << s.y << '\t' << s.family << '\t';
            for (std::size_t i = 0; i < s.features.size(); ++i) {
                if (i) os << ',';
                os << s.features[i];
            }
            os << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic drift stream. Every class (benign = family 0, malware families
// 1..n) owns a binary prototype: "signature" features fire with high
// probability, the rest with low background probability. All malware
// prototypes share a common core block, so unseen families still look more
// malicious than benign. From the month after its birth on, a prototype
// drifts by flipping each feature's role with drift_flip_prob per month.
// ---------------------------------------------------------------------------

struct SynthConfig {
    int dim = 200;
    int n_families = 3;
    double benign_fraction = 0.9;
    int months = 12;
    int samples_per_month = 500;
    std::vector<int> family_birth_month;  // size n_families, families 1..n
    double drift_flip_prob = 0.0;
    std::uint64_t seed = 0;
};

inline void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.dim <= 0) throw ConfigError("synth: dim must be positive");
    if (cfg.n_families < 0) throw ConfigError("synth: n_families must be >= 0");
    if (cfg.months <= 0) throw ConfigError("synth: months must be positive");
    if (cfg.samples_per_month <= 0) throw ConfigError("synth: samples_per_month must be positive");
    if (cfg.benign_fraction <= 0.0 || cfg.benign_fraction >= 1.0) {
        throw ConfigError("synth: benign_fraction must be in (0,1)");
    }
    if (cfg.benign_fraction * cfg.samples_per_month < 1.0) {
        throw ConfigError("synth: benign_fraction * samples_per_month must be >= 1");
    }
    if (static_cast<int>(cfg.family_birth_month.size()) != cfg.n_families) {
        throw ConfigError("synth: family_birth_month must have n_families entries");
    }
    for (int b : cfg.family_birth_month) {
        if (b < 0 || b >= cfg.months) throw ConfigError("synth: birth months must lie in [0, months)");
    }
    if (cfg.drift_flip_prob < 0.0 || cfg.drift_flip_prob > 1.0) {
        throw ConfigError("synth: drift_flip_prob must be in [0,1]");
    }
}

inline MonthlyStream synthesize_stream(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    constexpr double kSignatureDensity = 0.12;
    constexpr double kCoreDensity = 0.08;
    constexpr double kHighProb = 0.80;
    constexpr double kLowProb = 0.02;

    Rng proto_rng(derive_seed(cfg.seed, 0xA1));
    std::vector<std::uint8_t> core(cfg.dim, 0);
    for (int d = 0; d < cfg.dim; ++d) core[d] = proto_rng.bernoulli(kCoreDensity) ? 1 : 0;

    // prototypes[f] for f in 0..n_families (0 = benign)
    std::vector<std::vector<std::uint8_t>> prototypes(cfg.n_families + 1,
                                                      std::vector<std::uint8_t>(cfg.dim, 0));
    for (int f = 0; f <= cfg.n_families; ++f) {
        for (int d = 0; d < cfg.dim; ++d) {
            bool sig = proto_rng.bernoulli(kSignatureDensity);
            if (f > 0 && core[d]) sig = true;
            prototypes[f][d] = sig ? 1 : 0;
        }
    }
    std::vector<int> birth(cfg.n_families + 1, 0);
    for (int f = 1; f <= cfg.n_families; ++f) birth[f] = cfg.family_birth_month[f - 1];

    MonthlyStream stream;
    stream.dim = cfg.dim;
    stream.months.resize(cfg.months);
    const int n_benign = static_cast<int>(cfg.benign_fraction * cfg.samples_per_month + 0.5);
    const int n_malicious = cfg.samples_per_month - n_benign;

    Rng drift_rng(derive_seed(cfg.seed, 0xD2));
    Rng draw_rng(derive_seed(cfg.seed, 0xE3));

    for (int t = 0; t < cfg.months; ++t) {
        for (int f = 0; f <= cfg.n_families; ++f) {
            if (t > birth[f] && cfg.drift_flip_prob > 0.0) {
                for (int d = 0; d < cfg.dim; ++d) {
                    if (drift_rng.bernoulli(cfg.drift_flip_prob)) prototypes[f][d] ^= 1;
                }
            }
        }
        std::vector<int> alive;
        for (int f = 1; f <= cfg.n_families; ++f) {
            if (birth[f] <= t) alive.push_back(f);
        }
        auto draw_sample = [&](int family, int k) {
            Sample s;
            s.id = "m" + std::to_string(t) + "_s" + std::to_string(k);
            s.month = t;
            s.family = family;
            s.y = family == 0 ? 0 : 1;
            for (int d = 0; d < cfg.dim; ++d) {
                const double p = prototypes[family][d] ? kHighProb : kLowProb;
                if (draw_rng.bernoulli(p)) s.features.push_back(d);
            }
            return s;
        };
        int k = 0;
        for (int i = 0; i < n_benign; ++i) stream.months[t].push_back(draw_sample(0, k++));
        for (int i = 0; i < n_malicious; ++i) {
            // Months before the first birth fall back to benign.
            const int fam = alive.empty() ? 0 : alive[draw_rng.index(alive.size())];
            stream.months[t].push_back(draw_sample(fam, k++));
        }
    }
    validate_stream(stream);
    return stream;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Stratified random train/validation splits: per class (family id, benign = 0)
// validation take is round(valid_fraction * class size).
inline std::vector<std::pair<LabeledPool, LabeledPool>> random_splits(const LabeledPool& pool,
                                                                      int n_splits,
                                                                      double valid_fraction,
                                                                      std::uint64_t seed) {
    if (valid_fraction <= 0.0 || valid_fraction >= 1.0) {
        throw ConfigError("random_splits: valid_fraction must be in (0,1)");
    }
    if (n_splits <= 0) throw ConfigError("random_splits: n_splits must be positive");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        by_class[pool.samples[i].family].push_back(static_cast<int>(i));
    }
    std::vector<std::pair<LabeledPool, LabeledPool>> out;
    for (int s = 0; s < n_splits; ++s) {
        Rng rng(derive_seed(seed, 0x5b115, static_cast<std::uint64_t>(s)));
        std::vector<char> in_valid(pool.samples.size(), 0);
        for (auto& [cls, members] : by_class) {
            std::vector<int> shuffled = members;
            rng.shuffle(shuffled);
            const int n_valid =
                static_cast<int>(valid_fraction * static_cast<double>(members.size()) + 0.5);
            for (int i = 0; i < n_valid; ++i) in_valid[shuffled[i]] = 1;
        }
        LabeledPool train, valid;
        train.dim = valid.dim = pool.dim;
        for (std::size_t i = 0; i < pool.samples.size(); ++i) {
            (in_valid[i] ? valid : train).add(pool.samples[i], pool.provenance[i]);
        }
        out.emplace_back(std::move(train), std::move(valid));
    }
    return out;
}

// Inclusive month range; first > last denotes an empty range.
struct MonthRange {
    int first = 0;
    int last = -1;

    bool empty() const { return first > last; }
    bool contains(int m) const { return m >= first && m <= last; }
};

struct TemporalSplit {
    LabeledPool train;
    MonthlyStream valid;
    MonthlyStream test;
};

inline TemporalSplit temporal_split(const MonthlyStream& stream, MonthRange train_months,
                                    MonthRange valid_months, MonthRange test_months) {
    if (train_months.empty()) throw ConfigError("temporal_split: train range is empty");
    auto in_bounds = [&](const MonthRange& r) {
        return r.empty() || (r.first >= stream.first_month && r.last <= stream.last_month());
    };
    if (!in_bounds(train_months) || !in_bounds(valid_months) || !in_bounds(test_months)) {
        throw ConfigError("temporal_split: range outside the stream");
    }
    auto ordered = [](const MonthRange& a, const MonthRange& b) {
        return a.empty() || b.empty() || a.last < b.first;
    };
    if (!ordered(train_months, valid_months) || !ordered(valid_months, test_months) ||
        !ordered(train_months, test_months)) {
        throw ConfigError("temporal_split: ranges must be disjoint and ordered train < valid < test");
    }

    TemporalSplit split;
    split.train.dim = stream.dim;
    for (int m = train_months.first; m <= train_months.last; ++m) {
        for (const Sample& s : stream.months[m - stream.first_month]) {
            split.train.add(s, LabeledPool::kInitial);
        }
    }
    auto slice = [&](const MonthRange& r) {
        MonthlyStream sub;
        sub.dim = stream.dim;
        sub.first_month = r.empty() ? 0 : r.first;
        for (int m = r.first; m <= r.last; ++m) {
            sub.months.push_back(stream.months[m - stream.first_month]);
        }
        return sub;
    };
    split.valid = slice(valid_months);
    split.test = slice(test_months);
    return split;
}

}  // namespace driftforge::dataset

#endif  // DRIFTFORGE_DATASET_HPP
