#pragma once

#include <string>
#include <vector>

#include "oats/common.hpp"

namespace oats::model {

// ---------------------------------------------------------------------------
// Probabilistic patch-MLP forecaster. Contexts are cut into patches, each
// patch goes through its own position-specific embedding (keeping every
// linear layer's input a plain batch-by-features matrix), the embeddings are
// concatenated and fed through two GELU hidden layers into Gaussian
// mean / log-std heads over the horizon.
// ---------------------------------------------------------------------------

struct LinearLayer {
    Mat w;  // (in x out)
    Vec b;  // (out)

    LinearLayer() = default;
    LinearLayer(int in, int out) : w(in, out), b(static_cast<size_t>(out), 0.0) {}
    int in_features() const { return w.rows; }
    int out_features() const { return w.cols; }
};

struct ForecasterConfig {
    int context_length = 96;
    int horizon = 32;
    int patch_size = 16;
    int d_model = 64;
    int hidden_width = 128;

    int num_patches() const { return context_length / patch_size; }
    int embed_width() const { return num_patches() * d_model; }
    void validate() const;
};

struct ForecasterParams {
    ForecasterConfig cfg;
    std::vector<LinearLayer> patch_embed;  // one layer per patch position
    LinearLayer hidden1, hidden2, head_mean, head_logstd;

    static ForecasterParams init(const ForecasterConfig& cfg, RandomStream& rng);
    static ForecasterParams zeros(const ForecasterConfig& cfg);

    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;
};

constexpr double kLogStdMin = -7.0;
constexpr double kLogStdMax = 4.0;

struct GaussianForecast {
    Mat mean;     // batch x horizon
    Mat log_std;  // batch x horizon, clamped to [kLogStdMin, kLogStdMax]
};

struct ForwardCache {
    Mat contexts;
    Mat embed_out;   // batch x embed_width
    Mat h1_pre, h1_act;
    Mat h2_pre, h2_act;
    Mat logstd_pre;  // before clamping
    GaussianForecast out;
};

GaussianForecast forward(const ForecasterParams& p, const Mat& contexts,
                         ForwardCache* cache = nullptr);

// Per-sample mean over the horizon of 0.5*((y-mu)/sigma)^2 + log sigma
// + 0.5*log(2*pi).
Vec nll_loss(const GaussianForecast& f, const Mat& targets);

// Per-linear-layer capture of input activations and pre-activation output
// gradients. output_grads rows are gradients of each sample's own loss, not
// batch-mean scaled.
struct LayerTap {
    std::string layer_id;
    Mat input_activations;  // batch x in_features
    Mat output_grads;       // batch x out_features
};

struct BackwardResult {
    ForecasterParams grads;        // gradient of the batch-mean NLL
    std::vector<LayerTap> taps;    // ascending layer_id order
    Vec per_sample_nll;
    GaussianForecast forecast;
};

BackwardResult backward(const ForecasterParams& p, const Mat& contexts, const Mat& targets);

long backward_call_count();
void reset_backward_call_count();

// ---------------------------------------------------------------------------
// Optimizer: plain SGD or Adam with decoupled weight decay, plus the
// warmup/cosine learning-rate schedule.
// ---------------------------------------------------------------------------

enum class OptMode { Sgd, Adam };

struct OptimizerState {
    OptMode mode = OptMode::Adam;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    long t = 0;
    std::vector<Vec> m, v;  // lazily sized to match the parameter list
};

void optimizer_step(const std::vector<TensorRef>& params,
                    const std::vector<ConstTensorRef>& grads, OptimizerState& state, double lr);

struct LrSchedule {
    double peak = 1e-3;
    long warmup_steps = 300;
    long total_steps = 3000;

    // 1-based step index: linear warm-up to peak, then cosine decay to 0.
    double at(long step) const;
};

}  // namespace oats::model
