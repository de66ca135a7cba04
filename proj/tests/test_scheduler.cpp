#include <cmath>

#include "doctest.h"
#include "oats/scheduler.hpp"
#include "stats_util.hpp"

using namespace oats;
using namespace oats::scheduler;

namespace {

corpus::TrainingCorpus toy_corpus(const std::vector<long>& sizes) {
    corpus::TrainingCorpus c;
    c.num_subsets = static_cast<int>(sizes.size());
    c.subset_sizes = sizes;
    c.by_subset.resize(sizes.size());
    for (size_t l = 0; l < sizes.size(); ++l) {
        for (long i = 0; i < sizes[l]; ++i) {
            corpus::SeriesWindow w;
            w.values = Vec(8, 0.0);
            w.subset_id = static_cast<int>(l);
            w.source_index = corpus::make_source_index(static_cast<int>(i), 0);
            c.by_subset[l].push_back(static_cast<int>(c.windows.size()));
            c.windows.push_back(std::move(w));
        }
    }
    return c;
}

}  // namespace

TEST_CASE("cache initializes to subset proportions") {
    SubsetCache cache = SubsetCache::init({1000, 4000}, 0.01, 0.5);
    CHECK(cache.phi[0] == doctest::Approx(0.2));
    CHECK(cache.phi[1] == doctest::Approx(0.8));
    CHECK(cache.total_size() == 5000);
}

TEST_CASE("decide_step boundaries and frequency") {
    RandomStream rng(51);
    SubsetCache cache = SubsetCache::init({10, 10}, 0.01, 1.0);
    for (int i = 0; i < 1000; ++i) CHECK(decide_step(cache, rng) == StepMode::Explore);

    cache.epsilon = 0.0;
    for (int i = 0; i < 1000; ++i) CHECK(decide_step(cache, rng) == StepMode::Exploit);

    cache.epsilon = 0.3;
    long explores = 0;
    const long n = 100000;
    for (long i = 0; i < n; ++i)
        if (decide_step(cache, rng) == StepMode::Explore) explores += 1;
    const double frac = static_cast<double>(explores) / n;
    CHECK(frac > 0.29);
    CHECK(frac < 0.31);
}

TEST_CASE("decide_step stream is reproducible") {
    SubsetCache cache = SubsetCache::init({10, 10}, 0.01, 0.42);
    RandomStream a(99), b(99);
    for (int i = 0; i < 500; ++i) CHECK(decide_step(cache, a) == decide_step(cache, b));
}

TEST_CASE("phi EMA updates") {
    SUBCASE("beta 0 leaves the cache untouched") {
        SubsetCache cache = SubsetCache::init({10, 10}, 0.0, 1.0);
        const Vec before = cache.phi;
        update_phi(cache, {{0, 123.0}, {1, -5.0}});
        CHECK(cache.phi == before);
    }
    SUBCASE("beta 1 replaces phi with the batch mean") {
        SubsetCache cache = SubsetCache::init({10, 10}, 1.0, 1.0);
        update_phi(cache, {{0, 2.0}, {0, 4.0}});
        CHECK(cache.phi[0] == 3.0);
        CHECK(cache.phi[1] == 0.5);  // untouched subset keeps its value
    }
    SUBCASE("beta 0.01 one-line oracle") {
        SubsetCache cache = SubsetCache::init({10, 10}, 0.01, 1.0);
        cache.phi[0] = 0.5;
        update_phi(cache, {{0, 1.5}});
        // same expression as the recurrence, evaluated independently
        const double expected = (1.0 - 0.01) * 0.5 + 0.01 * 1.5;
        CHECK(cache.phi[0] == expected);
        CHECK(cache.phi[0] == doctest::Approx(0.51).epsilon(1e-12));
    }
    SUBCASE("absent subsets are unchanged") {
        SubsetCache cache = SubsetCache::init({10, 10, 10}, 0.5, 1.0);
        const double before2 = cache.phi[2];
        update_phi(cache, {{0, 9.0}});
        CHECK(cache.phi[2] == before2);
    }
}

TEST_CASE("phi trajectory is bounded by initial value and batch-mean range") {
    RandomStream rng(52);
    SubsetCache cache = SubsetCache::init({100, 300}, 0.05, 1.0);
    const double lo = -2.0, hi = 3.0;
    const Vec phi0 = cache.phi;
    for (int step = 0; step < 2000; ++step) {
        std::vector<std::pair<int, double>> scores;
        const int k = 1 + static_cast<int>(rng.uniform_int(0, 5));
        for (int i = 0; i < k; ++i)
            scores.emplace_back(static_cast<int>(rng.uniform_int(0, 1)), rng.uniform(lo, hi));
        update_phi(cache, scores);
        for (size_t l = 0; l < cache.phi.size(); ++l) {
            CHECK(cache.phi[l] >= std::min(phi0[l], lo) - 1e-12);
            CHECK(cache.phi[l] <= std::max(phi0[l], hi) + 1e-12);
        }
    }
}

TEST_CASE("explore sampler: exhaustion, determinism, uniformity") {
    auto c = toy_corpus({3, 5});
    RandomStream rng(53);
    auto idx = sample_explore(c, 8, rng);
    CHECK(idx.size() == 8);
    std::vector<int> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 8; ++i) CHECK(sorted[i] == i);  // whole corpus, no repeats

    RandomStream r1(7), r2(7);
    for (int rep = 0; rep < 10; ++rep) CHECK(sample_explore(c, 4, r1) == sample_explore(c, 4, r2));

    // subset-frequency Monte Carlo at b = 1
    auto big = toy_corpus({1000, 4000});
    RandomStream rng2(54);
    long hits0 = 0;
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
        auto one = sample_explore(big, 1, rng2);
        if (big.windows[one[0]].subset_id == 0) hits0 += 1;
    }
    const double frac = static_cast<double>(hits0) / n;
    CHECK(frac > 0.19);
    CHECK(frac < 0.21);
}

TEST_CASE("explore batches have no duplicates") {
    auto c = toy_corpus({40, 60});
    RandomStream rng(55);
    for (int rep = 0; rep < 200; ++rep) {
        auto idx = sample_explore(c, 32, rng);
        std::sort(idx.begin(), idx.end());
        CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    }
}

TEST_CASE("exploit sampler follows size-times-clamped-phi weights") {
    auto c = toy_corpus({1000, 4000});

    SUBCASE("zero-clamped subset is never drawn") {
        SubsetCache cache = SubsetCache::init({1000, 4000}, 0.01, 0.0);
        cache.phi = {1.0, 0.0};
        RandomStream rng(56);
        for (int i = 0; i < 2000; ++i) {
            auto idx = sample_exploit(c, cache, 1, rng);
            CHECK(c.windows[idx[0]].subset_id == 0);
        }
    }

    SUBCASE("analytic weights, 2/3 vs 1/3") {
        SubsetCache cache = SubsetCache::init({1000, 4000}, 0.01, 0.0);
        cache.phi = {0.8, 0.1};
        const Vec probs = exploit_probabilities(cache);
        CHECK(probs[0] == doctest::Approx(800.0 / 1200.0));
        CHECK(probs[1] == doctest::Approx(400.0 / 1200.0));
        RandomStream rng(57);
        long hits0 = 0;
        const long n = 100000;
        for (long i = 0; i < n; ++i) {
            auto idx = sample_exploit(c, cache, 1, rng);
            if (c.windows[idx[0]].subset_id == 0) hits0 += 1;
        }
        const double frac = static_cast<double>(hits0) / n;
        CHECK(frac > 2.0 / 3.0 - 0.01);
        CHECK(frac < 2.0 / 3.0 + 0.01);
    }

    SUBCASE("all-nonpositive phi falls back to size-uniform") {
        SubsetCache cache = SubsetCache::init({1000, 4000}, 0.01, 0.0);
        cache.phi = {-0.3, 0.0};
        const Vec probs = exploit_probabilities(cache);
        CHECK(probs[0] == doctest::Approx(0.2));
        CHECK(probs[1] == doctest::Approx(0.8));
        RandomStream rng(58);
        std::vector<long> counts(2, 0);
        const long n = 100000;
        for (long i = 0; i < n; ++i) {
            auto idx = sample_exploit(c, cache, 1, rng);
            counts[c.windows[idx[0]].subset_id] += 1;
        }
        CHECK(test_stats::chi2_gof_pvalue(counts, {0.2, 0.8}, n) > 0.01);
    }
}

TEST_CASE("sampler frequencies pass chi-square against analytic probabilities") {
    auto c = toy_corpus({500, 1500, 3000});
    const long n = 100000;

    SUBCASE("pi_r at b = 1") {
        RandomStream rng(59);
        std::vector<long> counts(3, 0);
        for (long i = 0; i < n; ++i)
            counts[c.windows[sample_explore(c, 1, rng)[0]].subset_id] += 1;
        CHECK(test_stats::chi2_gof_pvalue(counts, {0.1, 0.3, 0.6}, n) > 0.01);
    }

    SUBCASE("pi_o with a clamped negative subset") {
        SubsetCache cache = SubsetCache::init({500, 1500, 3000}, 0.01, 0.0);
        cache.phi = {0.9, -2.0, 0.2};  // weights 450 : 0 : 600
        const Vec probs = exploit_probabilities(cache);
        CHECK(probs[0] == doctest::Approx(450.0 / 1050.0));
        CHECK(probs[1] == 0.0);
        CHECK(probs[2] == doctest::Approx(600.0 / 1050.0));
        RandomStream rng(60);
        std::vector<long> counts(3, 0);
        for (long i = 0; i < n; ++i)
            counts[c.windows[sample_exploit(c, cache, 1, rng)[0]].subset_id] += 1;
        CHECK(counts[1] == 0);
        CHECK(test_stats::chi2_gof_pvalue(counts, {probs[0], probs[1], probs[2]}, n) > 0.01);
    }

    SUBCASE("pi_o probabilities sum to one") {
        RandomStream rng(61);
        for (int trial = 0; trial < 50; ++trial) {
            SubsetCache cache = SubsetCache::init({500, 1500, 3000}, 0.01, 0.0);
            for (auto& v : cache.phi) v = rng.gauss();
            const Vec probs = exploit_probabilities(cache);
            double total = 0.0;
            for (double v : probs) total += v;
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}
