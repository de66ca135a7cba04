#pragma once

#include <string>
#include <vector>

#include "oats/corpus.hpp"
#include "oats/generator.hpp"

namespace oats::baselines {

enum class Method { Oats, OatsSelOnly, TsMixup, Jitter, Dd, None };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct AugmentConfig {
    Method method = Method::Oats;
    int tsmixup_k = 2;
    double tsmixup_lambda_low = 0.1;
    double tsmixup_lambda_high = 0.9;
    double jitter_sigma = 0.03;
    // generator-backed methods
    double guidance_scale = 1.0;
    int ddim_steps = 20;
    int dd_pool_size = 512;

    void validate() const;
};

// Weighted sum of k equal-length windows, re-standardized; subset id comes
// from the largest-weight source. Weights must sum to 1.
corpus::SeriesWindow tsmixup(const std::vector<corpus::SeriesWindow>& windows,
                             const Vec& lambdas);

// k = 2: lambda_0 ~ U(low, high), lambda_1 = 1 - lambda_0; larger k draws
// uniforms and normalizes.
Vec draw_mixup_lambdas(int k, double low, double high, RandomStream& rng);

// Adds iid N(0, sigma^2) noise; no re-standardization.
corpus::SeriesWindow jitter(const corpus::SeriesWindow& window, double sigma, RandomStream& rng);

// Null-condition DDIM samples for the offline diffusion baseline; the pool is
// produced once before training and cycled through in fixed order.
std::vector<corpus::SeriesWindow> dd_generate(const generator::TrainedGenerator& gen, int m,
                                              int out_length, int ddim_steps, RandomStream& rng);

}  // namespace oats::baselines
