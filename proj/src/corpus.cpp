#include "oats/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oats::corpus {

namespace {

constexpr int kOffsetBits = 20;  // packs offsets < 2^20 next to the row index

json read_json_file(const std::string& path, bool validation = true) {
    std::ifstream in(path);
    if (!in) {
        if (validation) fail_validation("MissingFile", "cannot open " + path);
        fail("MissingFile", "cannot open " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", path + ": " + e.what());
    }
    return j;
}

}  // namespace

long long make_source_index(int row, int offset) {
    return (static_cast<long long>(row) << kOffsetBits) | static_cast<long long>(offset);
}
int source_row(long long source_index) { return static_cast<int>(source_index >> kOffsetBits); }
int source_offset(long long source_index) {
    return static_cast<int>(source_index & ((1LL << kOffsetBits) - 1));
}

Manifest load_manifest(const std::string& path) {
    json j = read_json_file(path);
    Manifest m;
    try {
        m.context_length = j.value("context_length", 96);
        m.horizon = j.value("horizon", 32);
        for (const auto& s : j.at("subsets")) {
            SubsetEntry e;
            e.name = s.at("name").get<std::string>();
            e.path = s.at("path").get<std::string>();
            e.class_id = s.at("class_id").get<int>();
            m.subsets.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", path + ": " + e.what());
    }
    // Relative subset paths resolve against the manifest's directory.
    const fs::path base = fs::path(path).parent_path();
    for (auto& s : m.subsets) {
        if (!fs::path(s.path).is_absolute()) s.path = (base / s.path).string();
    }
    validate_manifest(m);
    for (const auto& s : m.subsets) {
        if (!fs::exists(s.path)) fail_validation("MissingFile", "subset file missing: " + s.path);
    }
    return m;
}

void validate_manifest(const Manifest& m) {
    if (m.subsets.empty()) fail_validation("EmptySubset", "manifest lists no subsets");
    if (m.context_length <= 0 || m.horizon <= 0)
        fail_validation("ConfigInvalid", "context_length and horizon must be positive");
    const int L = m.num_subsets();
    std::set<int> seen;
    for (const auto& s : m.subsets) {
        if (s.class_id < 0 || s.class_id >= L || !seen.insert(s.class_id).second)
            fail_validation("DuplicateClassId",
                            "class_id values must be exactly {0..L-1}; offending subset: " + s.name);
    }
}

void save_manifest(const Manifest& m, const std::string& path) {
    json j;
    j["context_length"] = m.context_length;
    j["horizon"] = m.horizon;
    j["subsets"] = json::array();
    for (const auto& s : m.subsets)
        j["subsets"].push_back({{"name", s.name}, {"path", s.path}, {"class_id", s.class_id}});
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("MissingFile", "cannot write " + path);
    out << j.dump(2) << "\n";
}

Vec standardize(const Vec& x) {
    const double mu = mean_of(x);
    const double sd = std::sqrt(variance_of(x));
    const double denom = std::max(sd, 1e-8);
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / denom;
    return out;
}

std::vector<SeriesWindow> window_subset(const std::vector<Vec>& series, int subset_id,
                                        int context_length, int horizon, int stride) {
    if (stride <= 0) fail("ConfigInvalid", "stride must be positive");
    const int wlen = context_length + horizon;
    std::vector<SeriesWindow> out;
    for (int row = 0; row < static_cast<int>(series.size()); ++row) {
        const auto& s = series[row];
        const int n = static_cast<int>(s.size());
        if (n < wlen)
            fail("SeriesTooShort", "series row " + std::to_string(row) + " has " +
                                       std::to_string(n) + " points, need " + std::to_string(wlen));
        for (int off = 0; off + wlen <= n; off += stride) {
            SeriesWindow w;
            w.values = standardize(Vec(s.begin() + off, s.begin() + off + wlen));
            w.subset_id = subset_id;
            w.source_index = make_source_index(row, off);
            for (double v : w.values)
                if (!std::isfinite(v)) fail("ConfigInvalid", "non-finite value in input series");
            out.push_back(std::move(w));
        }
    }
    return out;
}

double compute_snr_db(const SeriesWindow& window, int smooth_window) {
    const int n = static_cast<int>(window.values.size());
    if (smooth_window < 1 || smooth_window % 2 == 0 || smooth_window >= n)
        fail("ConfigInvalid", "smooth_window must be odd, positive and < window length");
    const int r = smooth_window / 2;
    Vec signal(n), noise(n);
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - r);
        const int hi = std::min(n - 1, i + r);
        double s = 0.0;
        for (int k = lo; k <= hi; ++k) s += window.values[k];
        signal[i] = s / (hi - lo + 1);
        noise[i] = window.values[i] - signal[i];
    }
    const double vn = variance_of(noise);
    if (vn < 1e-12) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(variance_of(signal) / vn);
}

std::vector<Vec> load_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_validation("MissingFile", "cannot open " + path);
    std::vector<Vec> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Vec row;
        size_t pos = 0;
        while (pos < line.size()) {
            size_t next = line.find(',', pos);
            if (next == std::string::npos) next = line.size();
            try {
                row.push_back(std::stod(line.substr(pos, next - pos)));
            } catch (const std::exception&) {
                fail_validation("ConfigInvalid", path + ": cannot parse series value");
            }
            pos = next + 1;
        }
        if (!row.empty()) out.push_back(std::move(row));
    }
    return out;
}

void save_series_csv(const std::string& path, const std::vector<Vec>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("MissingFile", "cannot write " + path);
    for (const auto& s : series) {
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out << ',';
            out << fmt_g17(s[i]);
        }
        out << '\n';
    }
}

TrainingCorpus load_training_corpus(const Manifest& m, int stride) {
    validate_manifest(m);
    if (stride <= 0) stride = m.horizon;
    TrainingCorpus c;
    c.num_subsets = m.num_subsets();
    c.context_length = m.context_length;
    c.horizon = m.horizon;
    c.subset_sizes.assign(c.num_subsets, 0);
    c.by_subset.assign(c.num_subsets, {});
    for (const auto& entry : m.subsets) {
        auto series = load_series_csv(entry.path);
        if (series.empty()) fail_validation("EmptySubset", "no series in " + entry.path);
        auto windows = window_subset(series, entry.class_id, m.context_length, m.horizon, stride);
        for (auto& w : windows) {
            c.by_subset[entry.class_id].push_back(static_cast<int>(c.windows.size()));
            c.windows.push_back(std::move(w));
        }
        c.subset_sizes[entry.class_id] = static_cast<long>(c.by_subset[entry.class_id].size());
    }
    return c;
}

namespace {
std::vector<SeriesWindow> csv_to_windows(const std::string& csv_path, int context_length,
                                         int horizon, int subset_id) {
    auto series = load_series_csv(csv_path);
    if (series.empty()) fail_validation("EmptySubset", "no series in " + csv_path);
    auto windows = window_subset(series, subset_id, context_length, horizon, horizon);
    return windows;
}
}  // namespace

ReferenceSet load_reference_set(const std::string& csv_path, int context_length, int horizon) {
    ReferenceSet ref;
    ref.windows = csv_to_windows(csv_path, context_length, horizon, kReferenceSubset);
    ref.disjointness_token = "file:" + csv_path;
    return ref;
}

std::vector<SeriesWindow> load_eval_windows(const std::string& csv_path, int context_length,
                                            int horizon) {
    return csv_to_windows(csv_path, context_length, horizon, kReferenceSubset);
}

std::pair<Mat, Mat> windows_to_matrices(const std::vector<SeriesWindow>& windows,
                                        int context_length, int horizon) {
    const int b = static_cast<int>(windows.size());
    Mat contexts(b, context_length), targets(b, horizon);
    for (int i = 0; i < b; ++i) {
        if (static_cast<int>(windows[i].values.size()) != context_length + horizon)
            fail("ShapeMismatch", "window length does not match context + horizon");
        for (int j = 0; j < context_length; ++j) contexts(i, j) = windows[i].values[j];
        for (int j = 0; j < horizon; ++j) targets(i, j) = windows[i].values[context_length + j];
    }
    return {std::move(contexts), std::move(targets)};
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

Vec gen_series(const std::string& family, int length, double noise_sigma, RandomStream& rng) {
    Vec x(static_cast<size_t>(length));
    if (family == "white_noise") {
        for (auto& v : x) v = rng.gauss();
        return x;
    }
    double period_lo = 28.0, period_hi = 44.0;
    if (family == "sine_high") {
        period_lo = 7.0;
        period_hi = 11.0;
    } else if (family == "sine_slow") {
        period_lo = 55.0;
        period_hi = 90.0;
    } else if (family != "sine_low") {
        fail_validation("ConfigInvalid", "unknown synthetic family: " + family);
    }
    const double period = rng.uniform(period_lo, period_hi);
    const double f0 = 1.0 / period;
    // Slow frequency drift, up to +-15% across the series.
    const double drift = rng.uniform(-0.15, 0.15) * f0 / length;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int t = 0; t < length; ++t) {
        const double ph = 2.0 * M_PI * (f0 * t + 0.5 * drift * t * t) + phase;
        x[t] = std::sin(ph) + noise_sigma * rng.gauss();
    }
    return x;
}

}  // namespace

SyntheticCorpusSpec parse_synthetic_spec(const std::string& json_path) {
    json j = read_json_file(json_path);
    SyntheticCorpusSpec spec;
    try {
        spec.context_length = j.value("context_length", 96);
        spec.horizon = j.value("horizon", 32);
        spec.n_reference = j.value("n_reference", 32);
        spec.n_test = j.value("n_test", 256);
        spec.out_dir = j.at("out_dir").get<std::string>();
        for (const auto& s : j.at("subsets")) {
            SyntheticSubsetSpec ss;
            ss.name = s.at("name").get<std::string>();
            ss.family = s.value("family", std::string("sine_low"));
            ss.aligned = s.value("aligned", false);
            ss.n_series = s.value("n_series", 1000);
            ss.series_length = s.value("series_length", 0);
            ss.noise_sigma = s.value("noise_sigma", 0.1);
            spec.subsets.push_back(std::move(ss));
        }
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", json_path + ": " + e.what());
    }
    return spec;
}

Manifest make_synthetic_corpus(const SyntheticCorpusSpec& spec, uint64_t seed) {
    if (spec.subsets.size() < 2)
        fail_validation("ConfigInvalid", "synthetic spec needs at least 2 subsets");
    const SyntheticSubsetSpec* aligned = nullptr;
    bool has_noise = false;
    for (const auto& s : spec.subsets) {
        if (s.aligned && !aligned) aligned = &s;
        if (s.family == "white_noise") has_noise = true;
    }
    if (!aligned)
        fail_validation("ConfigInvalid", "synthetic spec needs an aligned subset");
    if (!has_noise)
        fail_validation("ConfigInvalid", "synthetic spec needs a white_noise subset");

    fs::create_directories(spec.out_dir);
    RandomStream root(seed);

    Manifest m;
    m.context_length = spec.context_length;
    m.horizon = spec.horizon;
    const int default_len = spec.context_length + spec.horizon;
    for (size_t si = 0; si < spec.subsets.size(); ++si) {
        const auto& ss = spec.subsets[si];
        const int len = ss.series_length > 0 ? ss.series_length : default_len;
        RandomStream rng = root.derive(1, si);
        std::vector<Vec> series;
        series.reserve(ss.n_series);
        for (int i = 0; i < ss.n_series; ++i)
            series.push_back(gen_series(ss.family, len, ss.noise_sigma, rng));
        const std::string rel = ss.name + ".csv";
        save_series_csv((fs::path(spec.out_dir) / rel).string(), series);
        m.subsets.push_back({ss.name, rel, static_cast<int>(si)});
    }

    // Held-out reference/test pools share the aligned family but use their own
    // streams, so no training window can reappear in them.
    const int held_len = aligned->series_length > 0 ? aligned->series_length : default_len;
    auto gen_pool = [&](uint64_t tag, int count) {
        RandomStream rng = root.derive(2, tag);
        std::vector<Vec> pool;
        pool.reserve(count);
        for (int i = 0; i < count; ++i)
            pool.push_back(gen_series(aligned->family, held_len, aligned->noise_sigma, rng));
        return pool;
    };
    save_series_csv((fs::path(spec.out_dir) / "reference.csv").string(),
                    gen_pool(0, spec.n_reference));
    save_series_csv((fs::path(spec.out_dir) / "test.csv").string(), gen_pool(1, spec.n_test));

    const std::string manifest_path = (fs::path(spec.out_dir) / "manifest.json").string();
    save_manifest(m, manifest_path);
    return load_manifest(manifest_path);
}

}  // namespace oats::corpus
