#include "oats/attribution.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>

namespace oats::attribution {

namespace {
std::atomic<long> g_tsis_calls{0};
}

std::vector<model::LayerTap> reference_gradient_taps(const model::ForecasterParams& params,
                                                     const corpus::ReferenceSet& reference) {
    if (reference.windows.empty()) fail("EmptySubset", "reference set is empty");
    auto [contexts, targets] = corpus::windows_to_matrices(
        reference.windows, params.cfg.context_length, params.cfg.horizon);
    return model::backward(params, contexts, targets).taps;
}

Mat ghost_dot(const std::vector<model::LayerTap>& train_taps,
              const std::vector<model::LayerTap>& ref_taps, std::vector<Mat>* per_layer) {
    if (train_taps.empty() || train_taps.size() != ref_taps.size())
        fail("LayerSetMismatch", "tap lists have different layer counts");

    std::vector<int> train_order(train_taps.size()), ref_order(ref_taps.size());
    std::iota(train_order.begin(), train_order.end(), 0);
    std::iota(ref_order.begin(), ref_order.end(), 0);
    auto by_id = [](const std::vector<model::LayerTap>& taps) {
        return [&taps](int a, int b) { return taps[a].layer_id < taps[b].layer_id; };
    };
    std::sort(train_order.begin(), train_order.end(), by_id(train_taps));
    std::sort(ref_order.begin(), ref_order.end(), by_id(ref_taps));

    const int b = train_taps[0].input_activations.rows;
    const int r = ref_taps[0].input_activations.rows;
    Mat total(b, r);
    if (per_layer) per_layer->clear();
    for (size_t li = 0; li < train_order.size(); ++li) {
        const auto& tr = train_taps[train_order[li]];
        const auto& rf = ref_taps[ref_order[li]];
        if (tr.layer_id != rf.layer_id)
            fail("LayerSetMismatch", "layer sets differ at " + tr.layer_id);
        if (tr.input_activations.cols != rf.input_activations.cols ||
            tr.output_grads.cols != rf.output_grads.cols)
            fail("LayerSetMismatch", "layer " + tr.layer_id + " has mismatched widths");
        Mat sa = matmul_abt(tr.input_activations, rf.input_activations);
        Mat sg = matmul_abt(tr.output_grads, rf.output_grads);
        Mat contrib(b, r);
        for (size_t i = 0; i < sa.d.size(); ++i) contrib.d[i] = (sa.d[i] + 1.0) * sg.d[i];
        for (size_t i = 0; i < total.d.size(); ++i) total.d[i] += contrib.d[i];
        if (per_layer) per_layer->push_back(std::move(contrib));
    }
    return total;
}

std::vector<TsisScore> tsis_batch(const model::ForecasterParams& params,
                                  const std::vector<corpus::SeriesWindow>& batch,
                                  const corpus::ReferenceSet& reference, double snr_threshold_db,
                                  int snr_smooth_window) {
    if (batch.empty()) fail("EmptySubset", "tsis batch is empty");
    g_tsis_calls.fetch_add(1, std::memory_order_relaxed);

    auto [contexts, targets] =
        corpus::windows_to_matrices(batch, params.cfg.context_length, params.cfg.horizon);
    auto train_taps = model::backward(params, contexts, targets).taps;
    auto ref_taps = reference_gradient_taps(params, reference);

    Mat dots = ghost_dot(train_taps, ref_taps);
    const int b = dots.rows, r = dots.cols;
    std::vector<TsisScore> scores(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        double s = 0.0;
        for (int v = 0; v < r; ++v) s += dots(i, v);
        TsisScore& sc = scores[i];
        sc.sample_ref = i;
        sc.influence = s / r;
        sc.gated = corpus::compute_snr_db(batch[i], snr_smooth_window) < snr_threshold_db;
        sc.effective = sc.gated ? kGatedSentinel : sc.influence;
    }
    return scores;
}

namespace {
std::vector<int> top_k(const std::vector<TsisScore>& scores, int k,
                       double (*key)(const TsisScore&)) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return key(scores[a]) > key(scores[b]); });
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(k)));
    std::sort(order.begin(), order.end());
    return order;
}
}  // namespace

std::vector<int> select_top_half(const std::vector<TsisScore>& scores, int b) {
    if (static_cast<int>(scores.size()) != b)
        fail("ShapeMismatch", "score count does not match batch size");
    const bool all_gated =
        std::all_of(scores.begin(), scores.end(), [](const TsisScore& s) { return s.gated; });
    if (all_gated) fail("AllGated", "every sample fell below the SNR threshold");
    return top_k(scores, b / 2, [](const TsisScore& s) { return s.effective; });
}

std::vector<int> select_top_k_by_influence(const std::vector<TsisScore>& scores, int k) {
    return top_k(scores, k, [](const TsisScore& s) { return s.influence; });
}

long tsis_call_count() { return g_tsis_calls.load(std::memory_order_relaxed); }
void reset_tsis_call_count() { g_tsis_calls.store(0, std::memory_order_relaxed); }

}  // namespace oats::attribution
