#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "oats/corpus.hpp"
#include "oats/model.hpp"

namespace oats::generator {

// ---------------------------------------------------------------------------
// Diffusion schedule
// ---------------------------------------------------------------------------
struct NoiseSchedule {
    int steps = 200;
    Vec betas;            // beta_t, t = 1..steps (index t-1)
    Vec alphas_cumprod;   // prod_{s<=t} (1 - beta_s)
};

NoiseSchedule build_schedule(int steps = 200, double beta_start = 0.0005, double beta_end = 0.1);

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise, t in [1, steps].
Vec q_sample(const Vec& x0, int t, const Vec& noise, const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Conditional denoiser: a 1-D U-Net of four down and four up blocks. Each
// block is a residual conv pair with a time-embedding injection, followed by
// cross-attention whose keys/values come from a learnable prototype bank and
// whose logits take an additive per-prototype bias from the prompt encoder.
// The attention output is concatenated with a class embedding and passed
// through a feed-forward map back onto the residual stream.
// ---------------------------------------------------------------------------

struct Conv1dLayer {
    int cin = 0, cout = 0, k = 3, stride = 1;
    Vec w;  // cout * cin * k
    Vec b;  // cout

    Conv1dLayer() = default;
    Conv1dLayer(int cin_, int cout_, int k_, int stride_)
        : cin(cin_), cout(cout_), k(k_), stride(stride_),
          w(static_cast<size_t>(cout_) * cin_ * k_, 0.0), b(static_cast<size_t>(cout_), 0.0) {}
};

struct DenoiserConfig {
    int series_length = 128;   // must be divisible by 8
    int base_channels = 32;
    std::array<int, 4> channel_mult{1, 2, 2, 4};
    int n_heads = 8;
    int head_dim = 64;
    int n_prototypes = 16;
    int proto_dim = 64;
    int class_embed_dim = 64;
    int num_classes = 2;       // L; embedding row L is the null class
    int time_sin_dim = 32;
    int temb_dim = 64;

    int channels(int level) const { return base_channels * channel_mult[level]; }
    int attn_dim() const { return n_heads * head_dim; }
    void validate() const;
};

struct DenoiserBlock {
    Conv1dLayer conv_a, conv_b;
    model::LinearLayer temb_proj;
    Mat wq, wk, wv;                // (C x A), (proto_dim x A), (proto_dim x A)
    model::LinearLayer ff1, ff2;   // (A + d_c -> C), (C -> C)
};

struct DenoiserParams {
    DenoiserConfig cfg;
    model::LinearLayer time_mlp1, time_mlp2;
    Conv1dLayer stem;
    std::array<DenoiserBlock, 8> blocks;   // 0..3 down, 4..7 up
    std::array<Conv1dLayer, 3> down;       // stride-2, after blocks 0..2
    std::array<Conv1dLayer, 3> up;         // stride-1, after nearest upsample
    Mat prototypes;          // N_p x proto_dim
    Mat class_embeddings;    // (L + 1) x d_c
    Vec null_prototype_bias; // N_p, used when the condition is dropped
    model::LinearLayer head1, head2;  // per-position C1 -> C1 -> 1

    static DenoiserParams init(const DenoiserConfig& cfg, RandomStream& rng);
    static DenoiserParams zeros(const DenoiserConfig& cfg);
    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;
};

struct Condition {
    Vec prototype_bias;  // N_p logit biases
    int class_id = 0;    // in [0, L]; L = null class
};

struct ConditionBatch {
    Mat prototype_bias;          // B x N_p
    std::vector<int> class_ids;  // B entries in [0, L]
};

struct DenoiserCache;  // opaque; defined in generator.cpp

// Predicted noise for a batch; t is per-sample. Pass a cache to enable
// denoise_backward.
Mat denoise_batch(const DenoiserParams& p, const Mat& x_t, const std::vector<int>& t,
                  const ConditionBatch& cond, std::shared_ptr<DenoiserCache>* cache = nullptr);

// Single-sample convenience wrapper.
Vec denoise_step(const DenoiserParams& p, const Vec& x_t, int t, const Condition& cond);

// Accumulates parameter gradients of sum(grad_eps . eps_hat) and returns the
// gradient w.r.t. the per-sample prototype bias so the prompt encoder can be
// trained jointly.
void denoise_backward(const DenoiserParams& p, const DenoiserCache& cache, const Mat& grad_eps,
                      DenoiserParams& grads, Mat* grad_bias);

// Test hook: raw multi-head cross-attention output (pre feed-forward).
Mat cross_attention_output(const Mat& hpos, const Mat& prototypes, const Mat& wq, const Mat& wk,
                           const Mat& wv, const Mat& bias_rows, const std::vector<int>& row_sample,
                           int n_heads);

// ---------------------------------------------------------------------------
// Prompt encoder: two strided convolutions, global average pooling and a
// linear head produce the per-prototype logit biases for one prompt.
// ---------------------------------------------------------------------------
struct PromptEncoderParams {
    Conv1dLayer conv1, conv2;
    model::LinearLayer out;

    static PromptEncoderParams init(const DenoiserConfig& cfg, RandomStream& rng);
    static PromptEncoderParams zeros(const DenoiserConfig& cfg);
    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;
};

Vec encode_prompt(const PromptEncoderParams& enc, const Vec& prompt);
Mat encode_prompt_batch(const PromptEncoderParams& enc, const Mat& prompts);

struct TrainedGenerator {
    DenoiserParams denoiser;
    PromptEncoderParams encoder;
    NoiseSchedule schedule;
};

void save_generator(const std::string& path, const TrainedGenerator& gen);
TrainedGenerator load_generator(const std::string& path);

// Parses the denoiser fields of a JSON object (text form); absent fields keep
// their defaults.
DenoiserConfig denoiser_config_from_json(const std::string& json_text);

// ---------------------------------------------------------------------------
// Training: L1 noise-prediction objective at uniform timesteps, self-prompted
// conditions with classifier-free dropout, Adam at a constant rate.
// ---------------------------------------------------------------------------
struct GeneratorTrainConfig {
    DenoiserConfig denoiser;
    int steps = 3000;
    int batch_size = 32;
    double lr = 1e-3;
    double cond_dropout = 0.5;
    int schedule_steps = 200;
    double beta_start = 0.0005;
    double beta_end = 0.1;
};

struct GeneratorTrainStats {
    Vec step_losses;
    long dropout_count = 0;
    long condition_draws = 0;
};

TrainedGenerator train_generator(const std::vector<corpus::SeriesWindow>& slice,
                                 const GeneratorTrainConfig& cfg, uint64_t seed,
                                 GeneratorTrainStats* stats = nullptr);

// Uniform sub-sample of the corpus used as the generator's training slice.
std::vector<corpus::SeriesWindow> sample_fraction(const std::vector<corpus::SeriesWindow>& all,
                                                  double fraction, RandomStream& rng);

// ---------------------------------------------------------------------------
// Sampling: deterministic DDIM (eta = 0) over an evenly strided sub-schedule
// with classifier-free guidance w. w = 1 evaluates the conditional path only.
// ---------------------------------------------------------------------------
Mat ddim_sample_batch(const DenoiserParams& p, const ConditionBatch& cond,
                      const NoiseSchedule& schedule, int n_steps, double guidance_scale,
                      const Mat& x_init);

// Draws the initial noise from rng and standardizes the output.
Vec ddim_sample(const DenoiserParams& p, const Condition& cond, const NoiseSchedule& schedule,
                int n_steps, double guidance_scale, RandomStream& rng);

// One synthetic window per guiding sample: the guide's own prototype bias and
// subset class form the condition; the generated series is cropped at a
// uniform random offset to out_length and standardized. Each prompt owns a
// private RNG stream derived from (run_seed, step_index, prompt index).
std::vector<corpus::SeriesWindow> generate_for_step(const TrainedGenerator& gen,
                                                    const std::vector<corpus::SeriesWindow>& guidance,
                                                    int m, int out_length, int ddim_steps,
                                                    double guidance_scale, uint64_t run_seed,
                                                    long step_index);

long generator_invocation_count();
void reset_generator_invocation_count();

}  // namespace oats::generator
