#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "driftforge/dataset.hpp"

using namespace driftforge;
using namespace driftforge::dataset;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("driftforge_test_" + name);
    std::filesystem::remove(p);
    return p;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    os << content;
}

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.dim = 60;
    cfg.n_families = 3;
    cfg.benign_fraction = 0.9;
    cfg.months = 6;
    cfg.samples_per_month = 60;
    cfg.family_birth_month = {0, 0, 2};
    cfg.drift_flip_prob = 0.02;
    cfg.seed = 9;
    return cfg;
}

}  // namespace

TEST_CASE("load_stream: two lines in month 0 give one month of two samples") {
    auto p = temp_file("two_lines.tsv");
    write_file(p, "#dim 10\na\t0\t0\t0\t1,3\nb\t0\t1\t2\t0,5,9\n");
    MonthlyStream st = load_stream(p);
    CHECK(st.dim == 10);
    CHECK(st.month_count() == 1);
    CHECK(st.months[0].size() == 2);
    CHECK(st.months[0][1].family == 2);
}

TEST_CASE("load_stream: benign sample with nonzero family is rejected by id") {
    auto p = temp_file("bad_family.tsv");
    write_file(p, "#dim 10\nok\t0\t1\t1\t1\nbad_one\t0\t0\t3\t2\n");
    CHECK_THROWS_WITH_AS(load_stream(p), doctest::Contains("bad_one"), DataError);
}

TEST_CASE("load_stream: malformed inputs carry line numbers") {
    auto p = temp_file("bad_lines.tsv");
    write_file(p, "#dim 10\na\t0\t0\t0\t1\nb\t0\t1\n");
    CHECK_THROWS_WITH_AS(load_stream(p), doctest::Contains(":3"), DataError);

    write_file(p, "nodim\n");
    CHECK_THROWS_AS(load_stream(p), DataError);

    write_file(p, "#dim 10\na\t0\t1\t1\t5,2\n");  // not ascending
    CHECK_THROWS_AS(load_stream(p), DataError);

    write_file(p, "#dim 4\na\t0\t1\t1\t9\n");  // out of range
    CHECK_THROWS_AS(load_stream(p), DataError);

    write_file(p, "#dim 4\na\t0\t1\t1\t1\na\t0\t0\t0\t2\n");  // duplicate id
    CHECK_THROWS_AS(load_stream(p), DataError);
}

TEST_CASE("load_stream: empty feature list allowed") {
    auto p = temp_file("empty_features.tsv");
    write_file(p, "#dim 10\na\t0\t0\t0\t\n");
    MonthlyStream st = load_stream(p);
    CHECK(st.months[0][0].features.empty());
}

TEST_CASE("stream round trip is identity") {
    MonthlyStream st = synthesize_stream(small_config());
    auto p = temp_file("roundtrip.tsv");
    save_stream(st, p);
    MonthlyStream back = load_stream(p);
    REQUIRE(back.month_count() == st.month_count());
    CHECK(back.dim == st.dim);
    for (int m = 0; m < st.month_count(); ++m) {
        REQUIRE(back.months[m].size() == st.months[m].size());
        for (std::size_t i = 0; i < st.months[m].size(); ++i) {
            const Sample& a = st.months[m][i];
            const Sample& b = back.months[m][i];
            CHECK(a.id == b.id);
            CHECK(a.y == b.y);
            CHECK(a.family == b.family);
            CHECK(a.month == b.month);
            CHECK(a.features == b.features);
        }
    }
    // and the write->write cycle is byte identical
    auto p2 = temp_file("roundtrip2.tsv");
    save_stream(back, p2);
    std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("synthesize_stream: no drift means stable prototypes") {
    SynthConfig cfg = small_config();
    cfg.drift_flip_prob = 0.0;
    cfg.months = 8;
    MonthlyStream st = synthesize_stream(cfg);
    // With no drift the per-family active-feature frequencies stay aligned:
    // count feature occurrences of family 1 early vs late and require heavy
    // overlap of the top features.
    auto top_features = [&](int month_lo, int month_hi) {
        std::vector<int> counts(cfg.dim, 0);
        int n = 0;
        for (int m = month_lo; m <= month_hi; ++m) {
            for (const Sample& s : st.months[m]) {
                if (s.family != 1) continue;
                ++n;
                for (int f : s.features) ++counts[f];
            }
        }
        std::vector<int> top;
        for (int d = 0; d < cfg.dim; ++d) {
            if (n > 0 && counts[d] > n / 2) top.push_back(d);
        }
        return top;
    };
    CHECK(top_features(0, 3) == top_features(4, 7));
}

TEST_CASE("synthesize_stream: families absent before birth month") {
    SynthConfig cfg = small_config();
    cfg.n_families = 2;
    cfg.family_birth_month = {0, 5};
    cfg.months = 8;
    MonthlyStream st = synthesize_stream(cfg);
    for (int m = 0; m < 5; ++m) {
        for (const Sample& s : st.months[m]) CHECK(s.family != 2);
    }
    bool seen_after = false;
    for (int m = 5; m < 8; ++m) {
        for (const Sample& s : st.months[m]) seen_after |= s.family == 2;
    }
    CHECK(seen_after);
}

TEST_CASE("synthesize_stream: identical seeds give identical streams") {
    MonthlyStream a = synthesize_stream(small_config());
    MonthlyStream b = synthesize_stream(small_config());
    REQUIRE(a.total_samples() == b.total_samples());
    for (int m = 0; m < a.month_count(); ++m) {
        for (std::size_t i = 0; i < a.months[m].size(); ++i) {
            CHECK(a.months[m][i].id == b.months[m][i].id);
            CHECK(a.months[m][i].features == b.months[m][i].features);
            CHECK(a.months[m][i].family == b.months[m][i].family);
        }
    }
}

TEST_CASE("synthesize_stream: malicious fraction near 10 percent") {
    SynthConfig cfg = small_config();
    cfg.samples_per_month = 600;
    cfg.months = 4;
    MonthlyStream st = synthesize_stream(cfg);
    for (const auto& month : st.months) {
        int mal = 0;
        for (const Sample& s : month) mal += s.y;
        const double frac = static_cast<double>(mal) / static_cast<double>(month.size());
        CHECK(frac == doctest::Approx(0.1).epsilon(0.1));  // 10% +- 1% absolute
        CHECK(std::abs(frac - 0.1) <= 0.01);
    }
}

TEST_CASE("synthesize_stream: invalid configs rejected") {
    SynthConfig cfg = small_config();
    cfg.benign_fraction = 1.5;
    CHECK_THROWS_AS(synthesize_stream(cfg), ConfigError);
    cfg = small_config();
    cfg.family_birth_month = {0};
    CHECK_THROWS_AS(synthesize_stream(cfg), ConfigError);
    cfg = small_config();
    cfg.family_birth_month = {0, 0, 99};
    CHECK_THROWS_AS(synthesize_stream(cfg), ConfigError);
}

TEST_CASE("validators catch single-field corruptions") {
    MonthlyStream st = synthesize_stream(small_config());
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        MonthlyStream bad = st;
        const int m = rng.index(bad.months.size());
        if (bad.months[m].empty()) continue;
        Sample& victim = bad.months[m][rng.index(bad.months[m].size())];
        switch (rng.index(5)) {
            case 0:
                victim.family = victim.y == 0 ? 3 : 0;  // benign<->family inconsistency
                break;
            case 1:
                victim.features.push_back(st.dim + 5);  // out of range
                break;
            case 2:
                if (victim.features.size() < 2) victim.features = {4, 2};
                std::swap(victim.features.front(), victim.features.back());
                if (victim.features.front() < victim.features.back()) continue;
                break;
            case 3:
                victim.month += 1;  // month field vs position
                break;
            case 4: {  // duplicate id
                const Sample copy = victim;
                bad.months[m].push_back(copy);
                break;
            }
        }
        CHECK_THROWS_AS(validate_stream(bad), DataError);
    }
}

TEST_CASE("random_splits: sizes, partition, stratification") {
    LabeledPool pool;
    pool.dim = 10;
    for (int i = 0; i < 10; ++i) {
        Sample s;
        s.id = "s" + std::to_string(i);
        s.y = i < 8 ? 0 : 1;
        s.family = i < 8 ? 0 : 1;
        s.features = {i % 10};
        pool.add(s, LabeledPool::kInitial);
    }
    auto splits = random_splits(pool, 5, 0.2, 123);
    REQUIRE(splits.size() == 5);
    for (const auto& [train, valid] : splits) {
        CHECK(train.size() == 8);
        CHECK(valid.size() == 2);
        // union = pool
        std::set<std::string> ids;
        for (const auto& s : train.samples) ids.insert(s.id);
        for (const auto& s : valid.samples) ids.insert(s.id);
        CHECK(ids.size() == 10);
        // stratified: benign 8 -> round(1.6)=2 in valid; family1 2 -> round(0.4)=0
        int valid_benign = 0;
        for (const auto& s : valid.samples) valid_benign += s.y == 0 ? 1 : 0;
        CHECK(valid_benign == 2);
    }
}

TEST_CASE("random_splits: stratification counts match exhaustive tally") {
    MonthlyStream st = synthesize_stream(small_config());
    LabeledPool pool;
    pool.dim = st.dim;
    for (const auto& month : st.months) {
        for (const Sample& s : month) pool.add(s, LabeledPool::kInitial);
    }
    std::map<int, int> class_count;
    for (const auto& s : pool.samples) class_count[s.family] += 1;
    auto splits = random_splits(pool, 3, 0.25, 5);
    for (const auto& [train, valid] : splits) {
        std::map<int, int> valid_count;
        for (const auto& s : valid.samples) valid_count[s.family] += 1;
        for (const auto& [cls, total] : class_count) {
            const int expect = static_cast<int>(0.25 * total + 0.5);
            CHECK(valid_count[cls] == expect);
        }
    }
}

TEST_CASE("random_splits: bad fraction rejected") {
    LabeledPool pool;
    pool.dim = 4;
    Sample s;
    s.id = "a";
    pool.add(s, LabeledPool::kInitial);
    CHECK_THROWS_AS(random_splits(pool, 5, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(random_splits(pool, 5, 1.0, 1), ConfigError);
}

TEST_CASE("temporal_split: whole stream as train leaves empty valid/test") {
    SynthConfig cfg = small_config();
    cfg.months = 12;
    MonthlyStream st = synthesize_stream(cfg);
    TemporalSplit split = temporal_split(st, {0, 11}, {}, {});
    CHECK(split.train.size() == st.total_samples());
    CHECK(split.valid.month_count() == 0);
    CHECK(split.test.month_count() == 0);
    for (int p : split.train.provenance) CHECK(p == LabeledPool::kInitial);
}

TEST_CASE("temporal_split: overlapping ranges rejected") {
    MonthlyStream st = synthesize_stream(small_config());
    CHECK_THROWS_AS(temporal_split(st, {0, 3}, {3, 4}, {5, 5}), ConfigError);
    CHECK_THROWS_AS(temporal_split(st, {2, 3}, {0, 1}, {4, 5}), ConfigError);
    CHECK_THROWS_AS(temporal_split(st, {0, 99}, {}, {}), ConfigError);
}

TEST_CASE("temporal_split: partition counts match per-month sums") {
    SynthConfig cfg = small_config();
    cfg.months = 9;
    MonthlyStream st = synthesize_stream(cfg);
    TemporalSplit split = temporal_split(st, {0, 2}, {3, 5}, {6, 8});
    std::size_t train_expect = 0, valid_expect = 0, test_expect = 0;
    for (int m = 0; m <= 2; ++m) train_expect += st.months[m].size();
    for (int m = 3; m <= 5; ++m) valid_expect += st.months[m].size();
    for (int m = 6; m <= 8; ++m) test_expect += st.months[m].size();
    CHECK(split.train.size() == train_expect);
    CHECK(split.valid.total_samples() == valid_expect);
    CHECK(split.test.total_samples() == test_expect);
    CHECK(split.valid.first_month == 3);
    CHECK(split.test.first_month == 6);
    CHECK_NOTHROW(validate_stream(split.valid));
    CHECK_NOTHROW(validate_stream(split.test));
}
