#pragma once

#include <utility>
#include <vector>

#include "oats/corpus.hpp"

namespace oats::scheduler {

enum class StepMode { Explore, Exploit };

// Per-subset EMA of influence scores. phi starts at the subset proportions
// and is refreshed only on explore steps.
struct SubsetCache {
    Vec phi;
    std::vector<long> subset_sizes;
    double beta = 0.01;
    double epsilon = 1.0;

    static SubsetCache init(const std::vector<long>& sizes, double beta, double epsilon);
    long total_size() const;
};

// Explore with probability epsilon.
StepMode decide_step(const SubsetCache& cache, RandomStream& rng);

// One EMA update per subset present in the batch; scores are (subset_id,
// ungated influence) pairs.
void update_phi(SubsetCache& cache, const std::vector<std::pair<int, double>>& batch_scores);

// Uniform without replacement over the whole corpus. Returns window indices.
std::vector<int> sample_explore(const corpus::TrainingCorpus& corpus, int b, RandomStream& rng);

// Quality-weighted: subset l with probability |D_l| * max(0, phi_l) /
// sum_k |D_k| * max(0, phi_k), then a uniform window inside it. Falls back to
// size-uniform draws when every weight is zero.
std::vector<int> sample_exploit(const corpus::TrainingCorpus& corpus, const SubsetCache& cache,
                                int m, RandomStream& rng);

// Analytic per-subset probabilities of one exploit draw (after the clamp and
// the uniform fallback); used by tests and the fallback detection.
Vec exploit_probabilities(const SubsetCache& cache);

}  // namespace oats::scheduler
