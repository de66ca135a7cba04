#include "oats/model.hpp"

#include <atomic>
#include <cmath>

namespace oats::model {

namespace {

std::atomic<long> g_backward_calls{0};

void init_linear(LinearLayer& l, double w_std, RandomStream& rng) {
    for (auto& v : l.w.d) v = w_std * rng.gauss();
    std::fill(l.b.begin(), l.b.end(), 0.0);
}

// out = in * W + b
Mat linear_forward(const LinearLayer& l, const Mat& in) {
    Mat out = matmul(in, l.w);
    for (int i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (int j = 0; j < out.cols; ++j) r[j] += l.b[j];
    }
    return out;
}

void accumulate_linear_grads(const Mat& in, const Mat& grad_out, LinearLayer& grad,
                             double scale) {
    Mat gw = matmul_atb(in, grad_out);
    for (size_t i = 0; i < gw.d.size(); ++i) grad.w.d[i] += scale * gw.d[i];
    for (int i = 0; i < grad_out.rows; ++i) {
        const double* r = grad_out.row(i);
        for (int j = 0; j < grad_out.cols; ++j) grad.b[j] += scale * r[j];
    }
}

Mat gelu_mat(const Mat& x) {
    Mat y(x.rows, x.cols);
    for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = gelu(x.d[i]);
    return y;
}

}  // namespace

void ForecasterConfig::validate() const {
    if (context_length <= 0 || horizon <= 0 || patch_size <= 0 || d_model <= 0 ||
        hidden_width <= 0)
        fail("ConfigInvalid", "forecaster dimensions must be positive");
    if (context_length % patch_size != 0)
        fail("ShapeMismatch", "context_length must be divisible by patch_size");
}

ForecasterParams ForecasterParams::zeros(const ForecasterConfig& cfg) {
    cfg.validate();
    ForecasterParams p;
    p.cfg = cfg;
    p.patch_embed.assign(cfg.num_patches(), LinearLayer(cfg.patch_size, cfg.d_model));
    p.hidden1 = LinearLayer(cfg.embed_width(), cfg.hidden_width);
    p.hidden2 = LinearLayer(cfg.hidden_width, cfg.hidden_width);
    p.head_mean = LinearLayer(cfg.hidden_width, cfg.horizon);
    p.head_logstd = LinearLayer(cfg.hidden_width, cfg.horizon);
    return p;
}

ForecasterParams ForecasterParams::init(const ForecasterConfig& cfg, RandomStream& rng) {
    ForecasterParams p = zeros(cfg);
    for (auto& pe : p.patch_embed) init_linear(pe, 1.0 / std::sqrt(cfg.patch_size), rng);
    init_linear(p.hidden1, 1.0 / std::sqrt(cfg.embed_width()), rng);
    init_linear(p.hidden2, 1.0 / std::sqrt(cfg.hidden_width), rng);
    // Small head init keeps the initial forecast near N(0, 1) on standardized
    // targets while leaving every layer's gradient path live from step one.
    init_linear(p.head_mean, 0.01, rng);
    init_linear(p.head_logstd, 0.01, rng);
    return p;
}

std::vector<TensorRef> ForecasterParams::tensors() {
    std::vector<TensorRef> out;
    auto add = [&out](const std::string& name, LinearLayer& l) {
        out.push_back({name + ".w", {l.w.rows, l.w.cols}, &l.w.d});
        out.push_back({name + ".b", {static_cast<int>(l.b.size())}, &l.b});
    };
    for (size_t i = 0; i < patch_embed.size(); ++i)
        add("patch_embed." + std::to_string(i), patch_embed[i]);
    add("hidden1", hidden1);
    add("hidden2", hidden2);
    add("head_mean", head_mean);
    add("head_logstd", head_logstd);
    return out;
}

std::vector<ConstTensorRef> ForecasterParams::tensors() const {
    auto mut = const_cast<ForecasterParams*>(this)->tensors();
    return to_const_refs(mut);
}

GaussianForecast forward(const ForecasterParams& p, const Mat& contexts, ForwardCache* cache) {
    const auto& cfg = p.cfg;
    cfg.validate();
    if (contexts.cols != cfg.context_length)
        fail("ShapeMismatch", "context width " + std::to_string(contexts.cols) + " != " +
                                  std::to_string(cfg.context_length));
    const int b = contexts.rows;
    const int np = cfg.num_patches();

    Mat embed(b, cfg.embed_width());
    for (int pi = 0; pi < np; ++pi) {
        Mat patch(b, cfg.patch_size);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < cfg.patch_size; ++j)
                patch(i, j) = contexts(i, pi * cfg.patch_size + j);
        Mat out = linear_forward(p.patch_embed[pi], patch);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < cfg.d_model; ++j) embed(i, pi * cfg.d_model + j) = out(i, j);
    }

    Mat h1_pre = linear_forward(p.hidden1, embed);
    Mat h1_act = gelu_mat(h1_pre);
    Mat h2_pre = linear_forward(p.hidden2, h1_act);
    Mat h2_act = gelu_mat(h2_pre);

    GaussianForecast f;
    f.mean = linear_forward(p.head_mean, h2_act);
    Mat logstd_pre = linear_forward(p.head_logstd, h2_act);
    f.log_std = Mat(b, cfg.horizon);
    for (size_t i = 0; i < logstd_pre.d.size(); ++i)
        f.log_std.d[i] = std::clamp(logstd_pre.d[i], kLogStdMin, kLogStdMax);

    if (cache) {
        cache->contexts = contexts;
        cache->embed_out = std::move(embed);
        cache->h1_pre = std::move(h1_pre);
        cache->h1_act = std::move(h1_act);
        cache->h2_pre = std::move(h2_pre);
        cache->h2_act = std::move(h2_act);
        cache->logstd_pre = std::move(logstd_pre);
        cache->out = f;
    }
    return f;
}

Vec nll_loss(const GaussianForecast& f, const Mat& targets) {
    if (f.mean.rows != targets.rows || f.mean.cols != targets.cols)
        fail("ShapeMismatch", "forecast/target shapes disagree");
    constexpr double half_log_2pi = 0.91893853320467274;
    const int b = targets.rows, h = targets.cols;
    Vec out(static_cast<size_t>(b), 0.0);
    for (int i = 0; i < b; ++i) {
        double acc = 0.0;
        for (int j = 0; j < h; ++j) {
            const double ls = f.log_std(i, j);
            const double z = (targets(i, j) - f.mean(i, j)) * std::exp(-ls);
            acc += 0.5 * z * z + ls + half_log_2pi;
        }
        out[i] = acc / h;
    }
    return out;
}

BackwardResult backward(const ForecasterParams& p, const Mat& contexts, const Mat& targets) {
    g_backward_calls.fetch_add(1, std::memory_order_relaxed);
    const auto& cfg = p.cfg;
    ForwardCache c;
    GaussianForecast f = forward(p, contexts, &c);

    const int b = contexts.rows;
    const int h = cfg.horizon;
    if (targets.rows != b || targets.cols != h)
        fail("ShapeMismatch", "target shape disagrees with config horizon");

    BackwardResult res;
    res.forecast = f;
    res.per_sample_nll = nll_loss(f, targets);
    res.grads = ForecasterParams::zeros(cfg);

    // Per-sample gradients of each sample's own loss w.r.t. pre-activations;
    // the 1/batch factor enters only when parameter gradients are formed.
    Mat g_mean(b, h), g_logstd(b, h);
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < h; ++j) {
            const double ls = f.log_std(i, j);
            const double inv_var = std::exp(-2.0 * ls);
            const double resid = f.mean(i, j) - targets(i, j);
            g_mean(i, j) = resid * inv_var / h;
            const double pre = c.logstd_pre(i, j);
            const bool live = pre > kLogStdMin && pre < kLogStdMax;
            g_logstd(i, j) = live ? (1.0 - resid * resid * inv_var) / h : 0.0;
        }
    }

    const double scale = 1.0 / b;
    accumulate_linear_grads(c.h2_act, g_mean, res.grads.head_mean, scale);
    accumulate_linear_grads(c.h2_act, g_logstd, res.grads.head_logstd, scale);

    Mat g_h2act = matmul_abt(g_mean, p.head_mean.w);
    {
        Mat g2 = matmul_abt(g_logstd, p.head_logstd.w);
        for (size_t i = 0; i < g_h2act.d.size(); ++i) g_h2act.d[i] += g2.d[i];
    }
    Mat g_h2pre(b, cfg.hidden_width);
    for (size_t i = 0; i < g_h2pre.d.size(); ++i)
        g_h2pre.d[i] = g_h2act.d[i] * gelu_grad(c.h2_pre.d[i]);
    accumulate_linear_grads(c.h1_act, g_h2pre, res.grads.hidden2, scale);

    Mat g_h1act = matmul_abt(g_h2pre, p.hidden2.w);
    Mat g_h1pre(b, cfg.hidden_width);
    for (size_t i = 0; i < g_h1pre.d.size(); ++i)
        g_h1pre.d[i] = g_h1act.d[i] * gelu_grad(c.h1_pre.d[i]);
    accumulate_linear_grads(c.embed_out, g_h1pre, res.grads.hidden1, scale);

    Mat g_embed = matmul_abt(g_h1pre, p.hidden1.w);
    const int np = cfg.num_patches();
    for (int pi = 0; pi < np; ++pi) {
        Mat patch_in(b, cfg.patch_size), patch_g(b, cfg.d_model);
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < cfg.patch_size; ++j)
                patch_in(i, j) = contexts(i, pi * cfg.patch_size + j);
            for (int j = 0; j < cfg.d_model; ++j)
                patch_g(i, j) = g_embed(i, pi * cfg.d_model + j);
        }
        accumulate_linear_grads(patch_in, patch_g, res.grads.patch_embed[pi], scale);
        res.taps.push_back({"patch_embed." + std::to_string(pi), std::move(patch_in),
                            std::move(patch_g)});
    }
    res.taps.push_back({"hidden1", c.embed_out, std::move(g_h1pre)});
    res.taps.push_back({"hidden2", c.h1_act, std::move(g_h2pre)});
    res.taps.push_back({"head_mean", c.h2_act, std::move(g_mean)});
    res.taps.push_back({"head_logstd", c.h2_act, std::move(g_logstd)});
    return res;
}

long backward_call_count() { return g_backward_calls.load(std::memory_order_relaxed); }
void reset_backward_call_count() { g_backward_calls.store(0, std::memory_order_relaxed); }

void optimizer_step(const std::vector<TensorRef>& params,
                    const std::vector<ConstTensorRef>& grads, OptimizerState& state, double lr) {
    if (params.size() != grads.size())
        fail("ShapeMismatch", "optimizer parameter/gradient lists disagree");
    if (state.mode == OptMode::Sgd) {
        for (size_t i = 0; i < params.size(); ++i) {
            Vec& p = *params[i].data;
            const Vec& g = *grads[i].data;
            if (p.size() != g.size()) fail("ShapeMismatch", "gradient size mismatch");
            for (size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
        }
        return;
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].data->size(), 0.0);
            state.v[i].assign(params[i].data->size(), 0.0);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Vec& p = *params[i].data;
        const Vec& g = *grads[i].data;
        Vec& m = state.m[i];
        Vec& v = state.v[i];
        if (p.size() != g.size()) fail("ShapeMismatch", "gradient size mismatch");
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            p[j] -= lr * (mh / (std::sqrt(vh) + state.eps) + state.weight_decay * p[j]);
        }
    }
}

double LrSchedule::at(long step) const {
    if (step < 1) step = 1;
    if (warmup_steps > 0 && step <= warmup_steps)
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return peak;
    const double frac =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
}

}  // namespace oats::model
