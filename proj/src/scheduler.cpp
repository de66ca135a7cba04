#include "oats/scheduler.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace oats::scheduler {

SubsetCache SubsetCache::init(const std::vector<long>& sizes, double beta, double epsilon) {
    if (sizes.empty()) fail("EmptySubset", "subset cache needs at least one subset");
    if (beta < 0.0 || beta > 1.0 || epsilon < 0.0 || epsilon > 1.0)
        fail("ConfigInvalid", "beta and epsilon must lie in [0, 1]");
    SubsetCache c;
    c.subset_sizes = sizes;
    c.beta = beta;
    c.epsilon = epsilon;
    long total = 0;
    for (long s : sizes) total += s;
    if (total <= 0) fail("EmptySubset", "subset sizes sum to zero");
    c.phi.resize(sizes.size());
    for (size_t i = 0; i < sizes.size(); ++i)
        c.phi[i] = static_cast<double>(sizes[i]) / static_cast<double>(total);
    return c;
}

long SubsetCache::total_size() const {
    long total = 0;
    for (long s : subset_sizes) total += s;
    return total;
}

StepMode decide_step(const SubsetCache& cache, RandomStream& rng) {
    return rng.uniform() < cache.epsilon ? StepMode::Explore : StepMode::Exploit;
}

void update_phi(SubsetCache& cache, const std::vector<std::pair<int, double>>& batch_scores) {
    std::unordered_map<int, std::pair<double, long>> sums;  // subset -> (sum, count)
    for (const auto& [subset, influence] : batch_scores) {
        if (subset < 0 || subset >= static_cast<int>(cache.phi.size()))
            fail("ShapeMismatch", "subset id out of range in phi update");
        auto& acc = sums[subset];
        acc.first += influence;
        acc.second += 1;
    }
    for (const auto& [subset, acc] : sums) {
        const double mean = acc.first / static_cast<double>(acc.second);
        cache.phi[subset] = (1.0 - cache.beta) * cache.phi[subset] + cache.beta * mean;
    }
}

std::vector<int> sample_explore(const corpus::TrainingCorpus& corpus, int b, RandomStream& rng) {
    const long n = corpus.total_windows();
    if (b < 0 || b > n)
        fail("ConfigInvalid", "batch size exceeds corpus size");
    // Floyd's sampling: b distinct indices in O(b) expected work, then a
    // shuffle so ordering carries no bias.
    std::unordered_set<long> chosen;
    std::vector<int> out;
    out.reserve(b);
    for (long j = n - b; j < n; ++j) {
        const long t = rng.uniform_int(0, j);
        if (chosen.insert(t).second)
            out.push_back(static_cast<int>(t));
        else {
            chosen.insert(j);
            out.push_back(static_cast<int>(j));
        }
    }
    for (int i = static_cast<int>(out.size()) - 1; i > 0; --i)
        std::swap(out[i], out[rng.uniform_int(0, i)]);
    return out;
}

Vec exploit_probabilities(const SubsetCache& cache) {
    const size_t L = cache.phi.size();
    Vec w(L, 0.0);
    double total = 0.0;
    for (size_t l = 0; l < L; ++l) {
        w[l] = static_cast<double>(cache.subset_sizes[l]) * std::max(0.0, cache.phi[l]);
        total += w[l];
    }
    if (total <= 0.0) {
        // pi_o is 0/0 here; fall back to size-uniform sampling.
        const double n = static_cast<double>(cache.total_size());
        for (size_t l = 0; l < L; ++l) w[l] = static_cast<double>(cache.subset_sizes[l]) / n;
        return w;
    }
    for (auto& v : w) v /= total;
    return w;
}

std::vector<int> sample_exploit(const corpus::TrainingCorpus& corpus, const SubsetCache& cache,
                                int m, RandomStream& rng) {
    if (static_cast<int>(cache.phi.size()) != corpus.num_subsets)
        fail("ShapeMismatch", "cache subset count disagrees with corpus");
    const Vec probs = exploit_probabilities(cache);
    std::vector<int> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        int subset = static_cast<int>(probs.size()) - 1;
        for (size_t l = 0; l < probs.size(); ++l) {
            acc += probs[l];
            if (u < acc) {
                subset = static_cast<int>(l);
                break;
            }
        }
        const auto& pool = corpus.by_subset[subset];
        if (pool.empty()) fail("EmptySubset", "exploit drew an empty subset");
        out.push_back(pool[rng.uniform_int(0, static_cast<long>(pool.size()) - 1)]);
    }
    return out;
}

}  // namespace oats::scheduler
