#include "oats/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace oats::baselines {

Method parse_method(const std::string& name) {
    if (name == "oats") return Method::Oats;
    if (name == "oats_sel_only") return Method::OatsSelOnly;
    if (name == "tsmixup") return Method::TsMixup;
    if (name == "jitter") return Method::Jitter;
    if (name == "dd") return Method::Dd;
    if (name == "none") return Method::None;
    fail_validation("ConfigInvalid", "unknown augment method: " + name);
}

std::string method_name(Method m) {
    switch (m) {
        case Method::Oats: return "oats";
        case Method::OatsSelOnly: return "oats_sel_only";
        case Method::TsMixup: return "tsmixup";
        case Method::Jitter: return "jitter";
        case Method::Dd: return "dd";
        case Method::None: return "none";
    }
    return "none";
}

void AugmentConfig::validate() const {
    if (!(0.0 < tsmixup_lambda_low && tsmixup_lambda_low < tsmixup_lambda_high &&
          tsmixup_lambda_high < 1.0))
        fail_validation("ConfigInvalid", "need 0 < lambda_low < lambda_high < 1");
    if (jitter_sigma < 0.0) fail_validation("ConfigInvalid", "jitter sigma must be >= 0");
    if (tsmixup_k < 2) fail_validation("ConfigInvalid", "tsmixup needs k >= 2");
    if (ddim_steps < 1 || dd_pool_size < 1)
        fail_validation("ConfigInvalid", "ddim_steps and dd_pool_size must be positive");
}

corpus::SeriesWindow tsmixup(const std::vector<corpus::SeriesWindow>& windows,
                             const Vec& lambdas) {
    if (windows.empty() || windows.size() != lambdas.size())
        fail("LengthMismatch", "tsmixup needs one weight per window");
    double total = 0.0;
    for (double l : lambdas) total += l;
    if (std::abs(total - 1.0) > 1e-9) fail("LengthMismatch", "tsmixup weights must sum to 1");
    const size_t n = windows[0].values.size();
    Vec mixed(n, 0.0);
    size_t argmax = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].values.size() != n)
            fail("LengthMismatch", "tsmixup windows have unequal lengths");
        for (size_t j = 0; j < n; ++j) mixed[j] += lambdas[i] * windows[i].values[j];
        if (lambdas[i] > lambdas[argmax]) argmax = i;
    }
    corpus::SeriesWindow out;
    out.values = corpus::standardize(mixed);
    out.subset_id = windows[argmax].subset_id;
    out.source_index = corpus::kSyntheticSource;
    return out;
}

Vec draw_mixup_lambdas(int k, double low, double high, RandomStream& rng) {
    Vec l(static_cast<size_t>(k));
    if (k == 2) {
        l[0] = rng.uniform(low, high);
        l[1] = 1.0 - l[0];
        return l;
    }
    double total = 0.0;
    for (auto& v : l) {
        v = rng.uniform(low, high);
        total += v;
    }
    for (auto& v : l) v /= total;
    return l;
}

corpus::SeriesWindow jitter(const corpus::SeriesWindow& window, double sigma, RandomStream& rng) {
    if (sigma < 0.0) fail("ConfigInvalid", "jitter sigma must be >= 0");
    corpus::SeriesWindow out;
    out.values.resize(window.values.size());
    for (size_t i = 0; i < window.values.size(); ++i)
        out.values[i] = window.values[i] + (sigma > 0.0 ? sigma * rng.gauss() : 0.0);
    out.subset_id = window.subset_id;
    out.source_index = corpus::kSyntheticSource;
    return out;
}

std::vector<corpus::SeriesWindow> dd_generate(const generator::TrainedGenerator& gen, int m,
                                              int out_length, int ddim_steps, RandomStream& rng) {
    std::vector<corpus::SeriesWindow> out;
    if (m == 0) return out;
    const auto& cfg = gen.denoiser.cfg;
    const int n = cfg.series_length;
    if (out_length > n) fail("ConfigInvalid", "output window longer than the generated series");

    generator::ConditionBatch cond;
    cond.prototype_bias = Mat(m, cfg.n_prototypes);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cfg.n_prototypes; ++j)
            cond.prototype_bias(i, j) = gen.denoiser.null_prototype_bias[j];
    cond.class_ids.assign(static_cast<size_t>(m), cfg.num_classes);

    Mat x_init(m, n);
    std::vector<int> offsets(static_cast<size_t>(m), 0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) x_init(i, j) = rng.gauss();
        if (out_length < n) offsets[i] = static_cast<int>(rng.uniform_int(0, n - out_length));
    }
    Mat raw = generator::ddim_sample_batch(gen.denoiser, cond, gen.schedule, ddim_steps,
                                           /*guidance*/ 0.0, x_init);
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
        Vec crop(static_cast<size_t>(out_length));
        for (int j = 0; j < out_length; ++j) crop[j] = raw(i, offsets[i] + j);
        corpus::SeriesWindow w;
        w.values = corpus::standardize(crop);
        w.subset_id = 0;
        w.source_index = corpus::kSyntheticSource;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace oats::baselines
