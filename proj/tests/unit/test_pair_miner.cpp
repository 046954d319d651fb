#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "classkit/pair_miner.hpp"
#include "test_util.hpp"

using namespace classkit;
using classkit::testing::read_file;
using classkit::testing::scratch_dir;

namespace {

// One single-step 1-D window per value, each from its own demo.
std::vector<ActionWindow> scalar_windows(const std::vector<double>& values) {
    std::vector<ActionWindow> out;
    for (std::size_t k = 0; k < values.size(); ++k) out.push_back({{k, 0}, {Vec{values[k]}}});
    return out;
}

std::vector<ActionWindow> random_windows(std::mt19937_64& rng, std::size_t n, std::size_t demos, std::size_t horizon) {
    std::normal_distribution<double> g;
    std::vector<ActionWindow> out;
    for (std::size_t k = 0; k < n; ++k) {
        ActionWindow w{{k % demos, k / demos}, {}};
        for (std::size_t s = 0; s < horizon; ++s) w.actions.push_back({g(rng), g(rng)});
        out.push_back(std::move(w));
    }
    return out;
}

MiningOptions with_k(double k) {
    MiningOptions o;
    o.k_quantile = k;
    return o;
}

}  // namespace

TEST_CASE("six distances at K = 0.5 keep the three smallest") {
    // Marks {0,1,4,6} give pairwise gaps {1,...,6}.
    const auto t = mine_pairs(scalar_windows({0, 1, 4, 6}), with_k(0.5));
    CHECK(t.threshold == 3.0);
    CHECK(t.eligible_count == 6);
    REQUIRE(t.pairs.size() == 3);
    CHECK(t.pairs[0] == PairRecord{0, 1, 1.0});
    CHECK(t.pairs[1] == PairRecord{1, 2, 3.0});
    CHECK(t.pairs[2] == PairRecord{2, 3, 2.0});
}

TEST_CASE("K = 1 keeps every pair; identical windows always survive") {
    const auto all = mine_pairs(scalar_windows({0, 1, 4, 6}), with_k(1.0));
    CHECK(all.pairs.size() == 6);
    for (double k : {0.001, 0.1, 0.5}) {
        const auto t = mine_pairs(scalar_windows({2.5, 2.5, 9.0, -3.0}), with_k(k));
        REQUIRE(!t.pairs.empty());
        CHECK(t.pairs.front() == PairRecord{0, 1, 0.0});
    }
}

TEST_CASE("mining input errors") {
    CHECK_THROWS_AS(mine_pairs(scalar_windows({1.0}), with_k(0.5)), ValidationError);
    CHECK_THROWS_AS(mine_pairs(scalar_windows({1.0, 2.0}), with_k(0.0)), ValidationError);
    CHECK_THROWS_AS(mine_pairs(scalar_windows({1.0, 2.0}), with_k(1.5)), ValidationError);
    // Only one eligible pair.
    CHECK_THROWS_AS(mine_pairs(scalar_windows({1.0, 2.0}), with_k(0.5)), ValidationError);

    // All windows in one demo within the margin leave nothing eligible.
    std::vector<ActionWindow> same;
    for (std::size_t t = 0; t < 4; ++t) same.push_back({{0, t}, {Vec{static_cast<double>(t)}}});
    MiningOptions o = with_k(0.5);
    o.exclusion_margin = 3;
    CHECK_THROWS_AS(mine_pairs(same, o), ValidationError);
    o.exclusion_margin = 1;
    const auto t = mine_pairs(same, o);
    CHECK(t.eligible_count == 3);
    for (const auto& p : t.pairs) CHECK(p.j - p.i >= 2);
}

TEST_CASE("retained fraction tracks K and all kept distances respect the threshold") {
    std::mt19937_64 rng(99);
    for (double k : {0.005, 0.01, 0.025, 0.05, 0.1, 0.37}) {
        const auto windows = random_windows(rng, 90, 6, 4);
        MiningOptions o = with_k(k);
        o.threads = 3;
        const auto t = mine_pairs(windows, o);
        const double n = static_cast<double>(t.eligible_count);
        const double frac = static_cast<double>(t.pairs.size()) / n;
        CHECK(frac >= k - 2.0 / n);
        CHECK(frac <= k + 2.0 / n);
        for (const auto& p : t.pairs) {
            CHECK(p.dist <= t.threshold);
            CHECK(p.i < p.j);
        }
        CHECK(std::is_sorted(t.pairs.begin(), t.pairs.end(),
                             [](const PairRecord& a, const PairRecord& b) { return std::pair(a.i, a.j) < std::pair(b.i, b.j); }));
    }
}

TEST_CASE("block-parallel mining matches a brute-force reference") {
    std::mt19937_64 rng(4);
    const auto windows = random_windows(rng, 70, 5, 3);
    std::vector<PairRecord> all;
    for (std::size_t i = 0; i < windows.size(); ++i)
        for (std::size_t j = i + 1; j < windows.size(); ++j)
            all.push_back({i, j, dtw_distance(windows[i].actions, windows[j].actions, {})});
    std::vector<double> d;
    for (const auto& p : all) d.push_back(p.dist);
    const double thr = nearest_rank_quantile(d, 0.05);
    std::vector<PairRecord> expected;
    for (const auto& p : all)
        if (p.dist <= thr) expected.push_back(p);

    for (std::size_t threads : {1, 2, 4}) {
        MiningOptions o = with_k(0.05);
        o.threads = threads;
        const auto t = mine_pairs(windows, o);
        CHECK(t.threshold == thr);
        CHECK(t.pairs == expected);
    }
}

TEST_CASE("mining is invariant to window order up to relabelling") {
    std::mt19937_64 rng(8);
    auto windows = random_windows(rng, 40, 4, 3);
    const auto a = mine_pairs(windows, with_k(0.1));
    std::reverse(windows.begin(), windows.end());
    const auto b = mine_pairs(windows, with_k(0.1));
    CHECK(a.threshold == b.threshold);
    auto dists = [](const PairTable& t) {
        std::vector<double> v;
        for (const auto& p : t.pairs) v.push_back(p.dist);
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(dists(a) == dists(b));
}

TEST_CASE("nearest-rank quantile") {
    CHECK(nearest_rank_quantile({6, 5, 4, 3, 2, 1}, 0.5) == 3.0);
    CHECK(nearest_rank_quantile({6, 5, 4, 3, 2, 1}, 0.51) == 4.0);
    CHECK(nearest_rank_quantile({6, 5, 4, 3, 2, 1}, 1.0) == 6.0);
    CHECK(nearest_rank_quantile({6, 5, 4, 3, 2, 1}, 1e-9) == 1.0);
}

TEST_CASE("fit_cdf sorts and soft_weight uses mid-rank ties") {
    PairTable t;
    t.window_count = 4;
    t.pairs = {{0, 1, 3.0}, {0, 2, 1.0}, {1, 3, 2.0}};
    t.threshold = 3.0;
    CHECK(fit_cdf(t).sorted_dists == Vec{1.0, 2.0, 3.0});
    CHECK_THROWS_AS(fit_cdf(PairTable{}), ValidationError);

    const CdfModel c{{1, 2, 3, 4}};
    CHECK(soft_weight(1.0, c) == 0.875);
    CHECK(soft_weight(4.0, c) == 0.125);
    CHECK(soft_weight(2.5, c) == 0.5);
    CHECK(soft_weight(0.5, c) == 1.0);
    CHECK(soft_weight(10.0, c) == 0.0);

    const CdfModel flat{{2, 2, 2}};
    CHECK(soft_weight(2.0, flat) == 0.5);
}

TEST_CASE("soft weights are symmetric, nonincreasing in distance, zero off-table") {
    std::mt19937_64 rng(12);
    const auto t = mine_pairs(random_windows(rng, 60, 5, 4), with_k(0.05));
    const auto cdf = fit_cdf(t);
    const auto w = build_soft_weights(t, cdf);
    auto sorted = t.pairs;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.dist < b.dist; });
    for (std::size_t k = 1; k < sorted.size(); ++k)
        CHECK(w.weight(sorted[k].i, sorted[k].j) <= w.weight(sorted[k - 1].i, sorted[k - 1].j));
    for (const auto& p : t.pairs) {
        CHECK(w.weight(p.i, p.j) == w.weight(p.j, p.i));
        CHECK(w.weight(p.i, p.j) > 0.0);
        CHECK(w.weight(p.i, p.j) < 1.0);
    }
    std::size_t zeros = 0;
    for (std::uint64_t i = 0; i < 60; ++i)
        for (std::uint64_t j = 0; j < 60; ++j)
            if (i != j && w.weight(i, j) == 0.0) ++zeros;
    CHECK(zeros == 60 * 59 - 2 * t.pairs.size());

    std::mt19937_64 q(3);
    std::uniform_real_distribution<double> u(-1.0, 5.0);
    for (int k = 0; k < 500; ++k) {
        double a = u(q), b = u(q);
        if (a > b) std::swap(a, b);
        CHECK(soft_weight(a, cdf) >= soft_weight(b, cdf));
    }

    const auto hard = w.hardened();
    for (const auto& p : t.pairs) CHECK(hard.weight(p.i, p.j) == 1.0);
}

TEST_CASE("pair table binary round trip and corruption") {
    const auto dir = scratch_dir("pairs");
    std::mt19937_64 rng(21);
    const auto t = mine_pairs(random_windows(rng, 50, 5, 3), with_k(0.05));
    const auto w = build_soft_weights(t, fit_cdf(t));
    save_pair_table(t, w, dir / "p.bin");
    const auto bytes = read_file(dir / "p.bin");
    CHECK(bytes.substr(0, 8) == "CLSPAIRS");
    CHECK(bytes.size() == 8 + 4 + 8 + 8 + 8 + 32 * t.pairs.size());

    const auto back = load_pair_table(dir / "p.bin");
    CHECK(back.table.window_count == t.window_count);
    CHECK(back.table.pairs == t.pairs);
    CHECK(std::memcmp(&back.table.threshold, &t.threshold, sizeof(double)) == 0);
    for (const auto& p : t.pairs) CHECK(back.weights.weight(p.i, p.j) == w.weight(p.i, p.j));

    save_pair_table(back.table, back.weights, dir / "p2.bin");
    CHECK(read_file(dir / "p2.bin") == bytes);

    {
        std::ofstream f(dir / "trunc.bin", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    }
    CHECK_THROWS_AS(load_pair_table(dir / "trunc.bin"), CorruptFileError);
    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream f(dir / "magic.bin", std::ios::binary);
        f << bad;
    }
    CHECK_THROWS_AS(load_pair_table(dir / "magic.bin"), CorruptFileError);
    CHECK_THROWS_AS(load_pair_table(dir / "missing.bin"), IoError);

    PairTable empty;
    empty.window_count = 3;
    CHECK_THROWS_AS(save_pair_table(empty, SoftWeights(3), dir / "e.bin"), ValidationError);
}
