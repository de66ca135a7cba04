#pragma once

#include <string>
#include <utility>
#include <vector>

#include "oats/common.hpp"

namespace oats::corpus {

// ---------------------------------------------------------------------------
// Manifest: names the training subsets, their class ids and window geometry.
// Stored as JSON: {"subsets":[{"name","path","class_id"}],
//                  "context_length","horizon"}
// ---------------------------------------------------------------------------
struct SubsetEntry {
    std::string name;
    std::string path;
    int class_id = 0;
};

struct Manifest {
    std::vector<SubsetEntry> subsets;
    int context_length = 96;
    int horizon = 32;

    int num_subsets() const { return static_cast<int>(subsets.size()); }
    int window_length() const { return context_length + horizon; }
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);
// Shared invariant checks (class ids exactly {0..L-1}, subsets non-empty).
void validate_manifest(const Manifest& m);

// ---------------------------------------------------------------------------
// SeriesWindow: the unit of training, scoring and prompting. Values are
// z-scored over the window. source_index packs (source row, offset) so a
// window can always be re-derived from its series file.
// ---------------------------------------------------------------------------
struct SeriesWindow {
    Vec values;
    int subset_id = 0;
    long long source_index = 0;
};

constexpr long long kSyntheticSource = -1;
constexpr int kReferenceSubset = -1;

long long make_source_index(int row, int offset);
int source_row(long long source_index);
int source_offset(long long source_index);

// z-score to mean 0 / sd 1; sd floored at 1e-8 so constant input maps to zeros.
Vec standardize(const Vec& x);

std::vector<SeriesWindow> window_subset(const std::vector<Vec>& series, int subset_id,
                                        int context_length, int horizon, int stride);

// Moving-average SNR in decibels: signal = centered moving mean, noise =
// residual. Returns +inf when the noise variance is below 1e-12.
double compute_snr_db(const SeriesWindow& window, int smooth_window = 5);

struct ReferenceSet {
    std::vector<SeriesWindow> windows;
    // Provenance: the reference file path; windows additionally carry the
    // reserved subset id so they can never enter a training batch unnoticed.
    std::string disjointness_token;
};

// ---------------------------------------------------------------------------
// Whole-corpus loading
// ---------------------------------------------------------------------------
struct TrainingCorpus {
    std::vector<SeriesWindow> windows;
    int num_subsets = 0;
    std::vector<long> subset_sizes;            // window counts per class id
    std::vector<std::vector<int>> by_subset;   // window indices per class id
    int context_length = 96;
    int horizon = 32;

    long total_windows() const { return static_cast<long>(windows.size()); }
};

// stride <= 0 means "use horizon".
TrainingCorpus load_training_corpus(const Manifest& m, int stride = 0);
ReferenceSet load_reference_set(const std::string& csv_path, int context_length, int horizon);
std::vector<SeriesWindow> load_eval_windows(const std::string& csv_path, int context_length,
                                            int horizon);

// One univariate series per line, comma-separated decimals, LF endings.
std::vector<Vec> load_series_csv(const std::string& path);
void save_series_csv(const std::string& path, const std::vector<Vec>& series);

// Split windows into (contexts, targets) matrices for the forecaster.
std::pair<Mat, Mat> windows_to_matrices(const std::vector<SeriesWindow>& windows,
                                        int context_length, int horizon);

// ---------------------------------------------------------------------------
// Synthetic corpus generation. Families:
//   "sine_low"    slow drifting-frequency sines (periods ~28..44)
//   "sine_high"   fast drifting-frequency sines (periods ~7..11)
//   "white_noise" iid N(0,1)
// Reference and test sets are drawn from the first aligned subset's family,
// from dedicated RNG streams, so they never coincide with training windows.
// ---------------------------------------------------------------------------
struct SyntheticSubsetSpec {
    std::string name;
    std::string family = "sine_low";
    bool aligned = false;
    int n_series = 1000;
    int series_length = 0;  // 0 -> context_length + horizon
    double noise_sigma = 0.1;
};

struct SyntheticCorpusSpec {
    std::vector<SyntheticSubsetSpec> subsets;
    int context_length = 96;
    int horizon = 32;
    int n_reference = 32;
    int n_test = 256;
    std::string out_dir;
};

SyntheticCorpusSpec parse_synthetic_spec(const std::string& json_path);

// Writes subset CSVs, reference.csv, test.csv and manifest.json under
// spec.out_dir; byte-identical for a fixed (spec, seed).
Manifest make_synthetic_corpus(const SyntheticCorpusSpec& spec, uint64_t seed);

}  // namespace oats::corpus
