#pragma once

#include <vector>

#include "oats/corpus.hpp"
#include "oats/model.hpp"

namespace oats::attribution {

// Influence of a training sample on the reference loss: dot product of its
// gradient with the mean reference gradient, computed layer-by-layer from
// taps so per-sample gradients are never materialized. Samples whose SNR
// falls below the threshold are gated to the most-negative finite value.
struct TsisScore {
    int sample_ref = 0;
    double influence = 0.0;
    bool gated = false;
    double effective = 0.0;
};

constexpr double kGatedSentinel = -std::numeric_limits<double>::max();

// One backward pass over the reference set; per-sample taps come back so the
// mean gradient stays implicit (dot products are averaged instead).
std::vector<model::LayerTap> reference_gradient_taps(const model::ForecasterParams& params,
                                                     const corpus::ReferenceSet& reference);

// entry (i, v) = sum over layers of (a_i . a_v + 1) * (g_i . g_v); the +1 is
// the bias column. Equals the full per-pair gradient dot product over every
// linear layer's weights and biases. Layers reduce in ascending layer_id
// order. per_layer, when given, receives one matrix per layer in that order.
Mat ghost_dot(const std::vector<model::LayerTap>& train_taps,
              const std::vector<model::LayerTap>& ref_taps,
              std::vector<Mat>* per_layer = nullptr);

std::vector<TsisScore> tsis_batch(const model::ForecasterParams& params,
                                  const std::vector<corpus::SeriesWindow>& batch,
                                  const corpus::ReferenceSet& reference, double snr_threshold_db,
                                  int snr_smooth_window = 5);

// Indices of the floor(b/2) largest effective scores, ties broken by lower
// batch index. Throws AllGated when every sample is below the SNR threshold;
// callers then fall back to select_top_k_by_influence.
std::vector<int> select_top_half(const std::vector<TsisScore>& scores, int b);
std::vector<int> select_top_k_by_influence(const std::vector<TsisScore>& scores, int k);

long tsis_call_count();
void reset_tsis_call_count();

}  // namespace oats::attribution
