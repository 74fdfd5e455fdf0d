#ifndef DRIFTFORGE_ACCEPTANCE_SUPPORT_HPP
#define DRIFTFORGE_ACCEPTANCE_SUPPORT_HPP

// Staged synthetic geometry for the embedding-structure and selector
// acceptance checks: benign is a loose ecosystem (shared base + subtype
// extras), trained malware families are tight (shared core + unique block +
// a small benign slice), and the held-out "new" family is gray — part core,
// part benign base, plus a block of features the training pool never saw.
// Presence features only; drift flips prototype bits month over month.

#include <algorithm>
#include <string>
#include <vector>

#include "driftforge/dataset.hpp"
#include "driftforge/rng.hpp"

namespace accsup {

using driftforge::Rng;
using driftforge::dataset::LabeledPool;
using driftforge::dataset::Sample;

struct StagedDriftPool {
    LabeledPool pool;                    // training pool (families 1..3 + benign)
    std::vector<Sample> heldout_new;     // unseen gray family 4, one month later
    std::vector<Sample> heldout_known;   // drifted known-family malware
    std::vector<Sample> heldout_benign;  // fresh benign from the same ecosystem
};

inline StagedDriftPool make_staged_pool(int dim, int n_train, std::uint64_t seed,
                                        double drift_flip = 0.02) {
    Rng rng(driftforge::derive_seed(seed, 0x57A6ED));
    auto pick = [&](int count) {
        std::vector<int> all(dim);
        for (int d = 0; d < dim; ++d) all[d] = d;
        rng.shuffle(all);
        std::vector<int> out(all.begin(), all.begin() + count);
        std::sort(out.begin(), out.end());
        return out;
    };
    auto slice = [&](const std::vector<int>& v, double frac) {
        std::vector<int> out;
        for (int f : v) {
            if (rng.uniform() < frac) out.push_back(f);
        }
        return out;
    };
    auto merge = [](std::vector<int> a, const std::vector<int>& b) {
        a.insert(a.end(), b.begin(), b.end());
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
        return a;
    };

    const std::vector<int> base = pick(24);  // benign base
    const std::vector<int> core = pick(20);  // malicious core
    constexpr int kSubtypes = 10;
    std::vector<std::vector<int>> subtype(kSubtypes);
    for (auto& st : subtype) st = merge(base, pick(14));

    std::vector<std::vector<int>> family(5);
    for (int f = 1; f <= 3; ++f) family[f] = merge(merge(core, pick(20)), slice(base, 0.15));
    // unseen family: the full core plus a block of features the pool never
    // fires, displacing it off the trained clusters
    family[4] = merge(merge(core, pick(30)), slice(base, 0.15));

    auto draw = [&](const std::vector<int>& proto, double fire, std::string id, int y, int fam,
                    int month) {
        Sample s;
        s.id = std::move(id);
        s.y = y;
        s.family = fam;
        s.month = month;
        for (int f : proto) {
            if (rng.uniform() < fire) s.features.push_back(f);
        }
        return s;
    };

    StagedDriftPool out;
    out.pool.dim = dim;
    const int n_mal = n_train / 10;
    const int n_ben = n_train - n_mal;
    for (int i = 0; i < n_ben; ++i) {
        out.pool.add(draw(subtype[rng.index(kSubtypes)], 0.7, "b" + std::to_string(i), 0, 0, 0),
                     LabeledPool::kInitial);
    }
    for (int i = 0; i < n_mal; ++i) {
        const int f = 1 + rng.index(3);
        out.pool.add(draw(family[f], 0.95, "m" + std::to_string(i), 1, f, 0),
                     LabeledPool::kInitial);
    }

    // Gradual drift swaps features within the vocabulary the pool has seen;
    // only genuinely new families bring never-seen features.
    std::vector<int> vocabulary = base;
    vocabulary = merge(vocabulary, core);
    for (int f = 1; f <= 3; ++f) vocabulary = merge(vocabulary, family[f]);
    for (const auto& st : subtype) vocabulary = merge(vocabulary, st);
    auto drifted = [&](const std::vector<int>& proto) {
        std::vector<int> next = proto;
        for (int d : vocabulary) {
            if (rng.uniform() >= drift_flip) continue;
            auto it = std::lower_bound(next.begin(), next.end(), d);
            if (it != next.end() && *it == d) {
                next.erase(it);
            } else {
                next.insert(it, d);
            }
        }
        return next;
    };
    std::vector<std::vector<int>> family_d(5);
    std::vector<std::vector<int>> subtype_d(kSubtypes);
    for (int f = 1; f <= 4; ++f) family_d[f] = drifted(family[f]);
    for (int k = 0; k < kSubtypes; ++k) subtype_d[k] = drifted(subtype[k]);

    for (int i = 0; i < 60; ++i) {
        out.heldout_new.push_back(draw(family_d[4], 0.95, "n" + std::to_string(i), 1, 4, 1));
    }
    for (int i = 0; i < 200; ++i) {
        const int f = 1 + rng.index(3);
        out.heldout_known.push_back(draw(family_d[f], 0.95, "k" + std::to_string(i), 1, f, 1));
    }
    for (int i = 0; i < 1800; ++i) {
        out.heldout_benign.push_back(
            draw(subtype_d[rng.index(kSubtypes)], 0.7, "hb" + std::to_string(i), 0, 0, 1));
    }
    return out;
}

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(q * (v.size() - 1))];
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

}  // namespace accsup

#endif  // DRIFTFORGE_ACCEPTANCE_SUPPORT_HPP
