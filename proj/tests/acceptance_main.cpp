// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Exit code 0 iff all pass.
//
//   acceptance [--only 1,2,5] [--work <dir>]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oats/attribution.hpp"
#include "oats/baselines.hpp"
#include "oats/cli.hpp"
#include "oats/corpus.hpp"
#include "oats/generator.hpp"
#include "oats/model.hpp"
#include "oats/scheduler.hpp"
#include "oats/trainer.hpp"
#include "stats_util.hpp"

using namespace oats;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_work;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

corpus::SeriesWindow make_sine_window(int len, double period_lo, double period_hi,
                                      double noise_sigma, int subset, RandomStream& rng) {
    Vec v(len);
    const double period = rng.uniform(period_lo, period_hi);
    const double f0 = 1.0 / period;
    const double drift = rng.uniform(-0.15, 0.15) * f0 / len;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int t = 0; t < len; ++t) {
        const double ph = 2.0 * M_PI * (f0 * t + 0.5 * drift * t * t) + phase;
        v[t] = std::sin(ph) + noise_sigma * rng.gauss();
    }
    return {corpus::standardize(v), subset, corpus::kSyntheticSource};
}

corpus::SeriesWindow family_window(int family, int len, RandomStream& rng) {
    return family == 0 ? make_sine_window(len, 28.0, 44.0, 0.05, 0, rng)
                       : make_sine_window(len, 7.0, 11.0, 0.05, 1, rng);
}

// L2 after circular phase alignment, the distance used for family assignment
double aligned_l2(const Vec& a, const Vec& b) {
    const int n = static_cast<int>(a.size());
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n; ++s) {
        double d = 0.0;
        for (int i = 0; i < n; ++i) {
            const double diff = a[i] - b[(i + s) % n];
            d += diff * diff;
        }
        best = std::min(best, d);
    }
    return best;
}

double cosine(const Vec& a, const Vec& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::max(std::sqrt(aa * bb), 1e-300);
}

generator::DenoiserConfig desk_denoiser(int num_classes, int base_channels) {
    generator::DenoiserConfig cfg;
    cfg.series_length = 128;
    cfg.base_channels = base_channels;
    cfg.channel_mult = {1, 2, 2, 4};
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.n_prototypes = 16;
    cfg.proto_dim = 16;
    cfg.class_embed_dim = 8;
    cfg.num_classes = num_classes;
    cfg.time_sin_dim = 16;
    cfg.temb_dim = 32;
    return cfg;
}

// aligned/noise corpus + reference/test pools + a generator checkpoint,
// shared by criteria 7, 8, 9 and 10
struct RunRig {
    std::string corpus_dir;
    std::string gen_ckpt;
    bool ready = false;
};
RunRig g_rig;

void ensure_rig() {
    if (g_rig.ready) return;
    const auto t0 = Clock::now();
    g_rig.corpus_dir = g_work + "/corpus";
    // A scarce noisy aligned family, an abundant off-distribution smooth
    // family the SNR gate cannot exclude, and white noise: selection has to
    // earn its keep and the NLL floor is set by process noise rather than by
    // how small sigma can be driven.
    corpus::SyntheticCorpusSpec spec;
    spec.out_dir = g_rig.corpus_dir;
    spec.n_reference = 32;
    spec.n_test = 256;
    spec.subsets.push_back({"aligned", "sine_low", true, 750, 0, 0.45});
    spec.subsets.push_back({"slow", "sine_slow", false, 2250, 0, 0.45});
    spec.subsets.push_back({"noise", "white_noise", false, 2000, 0, 0.0});
    corpus::Manifest manifest = corpus::make_synthetic_corpus(spec, 70);
    corpus::TrainingCorpus data = corpus::load_training_corpus(manifest);

    generator::GeneratorTrainConfig gc;
    gc.denoiser = desk_denoiser(3, 6);
    gc.steps = 6000;
    gc.batch_size = 32;
    RandomStream slice_rng(mix_seed(71, 0x51CE, 0));
    auto slice = generator::sample_fraction(data.windows, 0.5, slice_rng);
    generator::GeneratorTrainStats stats;
    generator::TrainedGenerator gen = generator::train_generator(slice, gc, 71, &stats);
    g_rig.gen_ckpt = g_work + "/gen.ckpt";
    generator::save_generator(g_rig.gen_ckpt, gen);
    std::fprintf(stderr, "[setup] corpus + generator ready in %.1fs (loss %.3f -> %.3f)\n",
                 seconds_since(t0), stats.step_losses.front(), stats.step_losses.back());
    g_rig.ready = true;
}

trainer::RunConfig rig_run_config(const std::string& method, uint64_t seed) {
    ensure_rig();
    trainer::RunConfig cfg;
    cfg.seed = seed;
    cfg.total_steps = 3000;
    cfg.batch_size = 32;
    cfg.epsilon = 1.0;
    cfg.beta = 0.01;
    cfg.snr_threshold_db = 3.0;
    cfg.eval_every = 500;
    cfg.log_tsis = false;
    cfg.lr.peak = 1e-3;
    cfg.lr.warmup_steps = 300;
    cfg.lr.total_steps = cfg.total_steps;
    cfg.augment.method = baselines::parse_method(method);
    cfg.augment.ddim_steps = 8;
    cfg.augment.dd_pool_size = 512;
    cfg.paths.manifest = g_rig.corpus_dir + "/manifest.json";
    cfg.paths.reference_csv = g_rig.corpus_dir + "/reference.csv";
    cfg.paths.test_csv = g_rig.corpus_dir + "/test.csv";
    if (method == "oats" || method == "dd") cfg.paths.generator_checkpoint = g_rig.gen_ckpt;
    return cfg;
}

// cached run results so criteria 7 and 8 share the heavy work
std::map<std::string, std::vector<double>> g_final_ref_nll;   // method -> per-seed
std::map<std::string, std::vector<std::string>> g_run_dirs;   // method -> out dirs
std::vector<Vec> g_oats_phi_final;                            // per-seed final phi

void ensure_method_runs(const std::string& method, int n_seeds) {
    auto& store = g_final_ref_nll[method];
    if (static_cast<int>(store.size()) >= n_seeds) return;
    for (int seed = static_cast<int>(store.size()) + 1; seed <= n_seeds; ++seed) {
        const auto t0 = Clock::now();
        trainer::RunConfig cfg = rig_run_config(method, static_cast<uint64_t>(seed));
        cfg.paths.out_dir = g_work + "/runs/" + method + "_s" + std::to_string(seed);
        trainer::TrainResult res = trainer::train_run(cfg);
        store.push_back(res.log.final_ref_nll);
        g_run_dirs[method].push_back(cfg.paths.out_dir);
        if (method == "oats") g_oats_phi_final.push_back(res.log.phi_history.back());
        std::fprintf(stderr, "[run] %s seed %d: ref_nll %.4f test_nll %.4f (%.0fs)\n",
                     method.c_str(), seed, res.log.final_ref_nll, res.log.final_test_nll,
                     seconds_since(t0));
    }
}

int count_wins(const std::vector<double>& oats, const std::vector<double>& other,
               bool or_equal = false) {
    int wins = 0;
    for (size_t i = 0; i < oats.size(); ++i)
        if (or_equal ? oats[i] <= other[i] : oats[i] < other[i]) wins += 1;
    return wins;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

bool crit1_ghost_oracle(std::string& detail) {
    const auto t0 = Clock::now();
    RandomStream rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        model::ForecasterConfig cfg;
        cfg.patch_size = 2 + static_cast<int>(rng.uniform_int(0, 6));
        cfg.context_length = cfg.patch_size * (1 + static_cast<int>(rng.uniform_int(0, 2)));
        cfg.horizon = 2 + static_cast<int>(rng.uniform_int(0, 6));
        cfg.d_model = 2 + static_cast<int>(rng.uniform_int(0, 62));
        cfg.hidden_width = 2 + static_cast<int>(rng.uniform_int(0, 62));
        model::ForecasterParams p = model::ForecasterParams::init(cfg, rng);
        const int b = 1 + static_cast<int>(rng.uniform_int(0, 7));
        const int r = 1 + static_cast<int>(rng.uniform_int(0, 7));
        const int wlen = cfg.context_length + cfg.horizon;
        std::vector<corpus::SeriesWindow> batch, ref;
        for (int i = 0; i < b; ++i) {
            Vec v(wlen);
            for (auto& x : v) x = rng.gauss();
            batch.push_back({corpus::standardize(v), 0, 0});
        }
        for (int i = 0; i < r; ++i) {
            Vec v(wlen);
            for (auto& x : v) x = rng.gauss();
            ref.push_back({corpus::standardize(v), 0, 0});
        }
        auto [bc, bt] = corpus::windows_to_matrices(batch, cfg.context_length, cfg.horizon);
        auto [rc, rt] = corpus::windows_to_matrices(ref, cfg.context_length, cfg.horizon);
        Mat ghost = attribution::ghost_dot(model::backward(p, bc, bt).taps,
                                           model::backward(p, rc, rt).taps);

        auto flat = [&](const corpus::SeriesWindow& w) {
            auto [c1, t1] = corpus::windows_to_matrices({w}, cfg.context_length, cfg.horizon);
            model::BackwardResult res = model::backward(p, c1, t1);
            Vec out;
            for (const auto& t : res.grads.tensors())
                out.insert(out.end(), t.data->begin(), t.data->end());
            return out;
        };
        std::vector<Vec> ref_flat;
        for (const auto& w : ref) ref_flat.push_back(flat(w));
        for (int i = 0; i < b; ++i) {
            Vec gi = flat(batch[i]);
            for (int v = 0; v < r; ++v) {
                double expected = 0.0;
                for (size_t k = 0; k < gi.size(); ++k) expected += gi[k] * ref_flat[v][k];
                const double rel = std::abs(ghost(i, v) - expected) /
                                   std::max({std::abs(expected), std::abs(ghost(i, v)), 1e-12});
                worst = std::max(worst, rel);
            }
        }
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << "worst rel err " << worst << " over 200 configs, " << elapsed << "s";
    detail = os.str();
    return worst < 1e-6 && elapsed < 60.0;
}

bool crit2_taylor_fidelity(std::string& detail) {
    const auto t0 = Clock::now();
    model::ForecasterConfig cfg;  // production-size surrogate
    RandomStream rng(102);
    double factor_acc = 0.0;
    const int trials = 20;
    const int halvings = 10;  // 1e-2 down to ~1e-5
    for (int trial = 0; trial < trials; ++trial) {
        model::ForecasterParams p = model::ForecasterParams::init(cfg, rng);
        Vec zv(128);
        for (auto& x : zv) x = rng.gauss();
        corpus::SeriesWindow z{corpus::standardize(zv), 0, 0};
        corpus::ReferenceSet ref;
        for (int i = 0; i < 8; ++i) {
            Vec v(128);
            for (auto& x : v) x = rng.gauss();
            ref.windows.push_back({corpus::standardize(v), -1, 0});
        }
        auto [rc, rt] = corpus::windows_to_matrices(ref.windows, cfg.context_length, cfg.horizon);
        auto [zc, zt] = corpus::windows_to_matrices({z}, cfg.context_length, cfg.horizon);
        const double tsis = attribution::tsis_batch(p, {z}, ref, -1e18)[0].influence;
        const double before = mean_of(model::nll_loss(model::forward(p, rc), rt));
        auto grads = model::backward(p, zc, zt).grads;
        auto residual = [&](double eta) {
            model::ForecasterParams stepped = p;
            model::OptimizerState opt;
            opt.mode = model::OptMode::Sgd;
            model::optimizer_step(stepped.tensors(), to_const_refs(grads.tensors()), opt, eta);
            const double after = mean_of(model::nll_loss(model::forward(stepped, rc), rt));
            return std::abs((before - after) - eta * tsis);
        };
        factor_acc +=
            std::pow(residual(1e-2) / residual(1e-2 / std::pow(2.0, halvings)), 1.0 / halvings);
    }
    const double factor = factor_acc / trials;
    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << "mean residual factor per halving " << factor << ", " << elapsed << "s";
    detail = os.str();
    return factor >= 3.0 && factor <= 5.0 && elapsed < 120.0;
}

bool crit3_samplers(std::string& detail) {
    const auto t0 = Clock::now();
    corpus::TrainingCorpus c;
    c.num_subsets = 3;
    c.subset_sizes = {500, 1500, 3000};
    c.by_subset.resize(3);
    for (int l = 0; l < 3; ++l)
        for (long i = 0; i < c.subset_sizes[l]; ++i) {
            corpus::SeriesWindow w;
            w.subset_id = l;
            c.by_subset[l].push_back(static_cast<int>(c.windows.size()));
            c.windows.push_back(std::move(w));
        }
    const long n = 100000;

    RandomStream r1(103);
    std::vector<long> counts_r(3, 0);
    for (long i = 0; i < n; ++i)
        counts_r[c.windows[scheduler::sample_explore(c, 1, r1)[0]].subset_id] += 1;
    const double p_r = test_stats::chi2_gof_pvalue(counts_r, {0.1, 0.3, 0.6}, n);

    scheduler::SubsetCache cache = scheduler::SubsetCache::init(c.subset_sizes, 0.01, 0.0);
    cache.phi = {0.9, -2.0, 0.2};  // clamp wipes the middle subset
    const Vec probs = scheduler::exploit_probabilities(cache);
    RandomStream r2(104);
    std::vector<long> counts_o(3, 0);
    for (long i = 0; i < n; ++i)
        counts_o[c.windows[scheduler::sample_exploit(c, cache, 1, r2)[0]].subset_id] += 1;
    const double p_o = test_stats::chi2_gof_pvalue(counts_o, {probs[0], probs[1], probs[2]}, n);

    cache.phi = {-1.0, 0.0, -0.5};  // all clamped: size-uniform fallback
    RandomStream r3(105);
    std::vector<long> counts_f(3, 0);
    for (long i = 0; i < n; ++i)
        counts_f[c.windows[scheduler::sample_exploit(c, cache, 1, r3)[0]].subset_id] += 1;
    const double p_f = test_stats::chi2_gof_pvalue(counts_f, {0.1, 0.3, 0.6}, n);

    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << "p-values: pi_r " << p_r << ", pi_o(clamp) " << p_o << ", fallback " << p_f << ", "
       << elapsed << "s";
    detail = os.str();
    return p_r > 0.01 && p_o > 0.01 && p_f > 0.01 && counts_o[1] == 0 && elapsed < 60.0;
}

bool crit4_ema_exact(std::string& detail) {
    RandomStream rng(106);
    bool ok = true;
    for (double beta : {0.0, 0.01, 1.0}) {
        scheduler::SubsetCache cache = scheduler::SubsetCache::init({1000, 4000}, beta, 1.0);
        Vec oracle = cache.phi;
        for (int step = 0; step < 50; ++step) {
            const double m0 = rng.gauss();
            const double m1 = rng.gauss();
            scheduler::update_phi(cache, {{0, m0}, {1, m1}});
            oracle[0] = (1.0 - beta) * oracle[0] + beta * m0;
            oracle[1] = (1.0 - beta) * oracle[1] + beta * m1;
            ok = ok && cache.phi[0] == oracle[0] && cache.phi[1] == oracle[1];
        }
    }
    // the worked one-step example
    scheduler::SubsetCache cache = scheduler::SubsetCache::init({1, 1}, 0.01, 1.0);
    cache.phi[0] = 0.5;
    scheduler::update_phi(cache, {{0, 1.5}});
    ok = ok && cache.phi[0] == (1.0 - 0.01) * 0.5 + 0.01 * 1.5;
    ok = ok && std::abs(cache.phi[0] - 0.51) < 1e-12;
    detail = ok ? "bit-identical over beta in {0, 0.01, 1}" : "mismatch against the recurrence";
    return ok;
}

bool crit5_forward_marginal(std::string& detail) {
    const auto t0 = Clock::now();
    generator::NoiseSchedule s = generator::build_schedule(200, 0.0005, 0.1);
    RandomStream rng(107);
    Vec pooled;
    for (int draw = 0; draw < 10000; ++draw) {
        corpus::SeriesWindow w = make_sine_window(128, 28.0, 44.0, 0.1, 0, rng);
        Vec noise(128);
        for (auto& v : noise) v = rng.gauss();
        Vec out = generator::q_sample(w.values, s.steps, noise, s);
        // one statistic per draw keeps the samples independent
        pooled.push_back(out[static_cast<size_t>(rng.uniform_int(0, 127))]);
    }
    const double m = mean_of(pooled);
    const double v = variance_of(pooled);
    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << "terminal mean " << m << ", var " << v << ", " << elapsed << "s";
    detail = os.str();
    return std::abs(m) < 0.05 && std::abs(v - 1.0) < 0.1 && elapsed < 60.0;
}

bool crit6_conditional_generation(std::string& detail) {
    const auto t0 = Clock::now();
    RandomStream data_rng(108);
    std::vector<corpus::SeriesWindow> corpus_windows;
    for (int i = 0; i < 1000; ++i) corpus_windows.push_back(family_window(0, 128, data_rng));
    for (int i = 0; i < 1000; ++i) corpus_windows.push_back(family_window(1, 128, data_rng));

    generator::GeneratorTrainConfig gc;
    gc.denoiser = desk_denoiser(2, 6);
    gc.steps = 3000;
    gc.batch_size = 32;
    RandomStream slice_rng(mix_seed(61, 0x51CE, 0));
    auto slice = generator::sample_fraction(corpus_windows, 0.5, slice_rng);
    generator::GeneratorTrainStats stats;
    generator::TrainedGenerator gen = generator::train_generator(slice, gc, 61, &stats);
    std::fprintf(stderr, "[c6] generator trained, loss %.3f -> %.3f (%.0fs)\n",
                 stats.step_losses.front(), stats.step_losses.back(), seconds_since(t0));

    // fresh prompts and exemplars
    RandomStream fresh(62);
    std::vector<corpus::SeriesWindow> prompts;
    for (int i = 0; i < 50; ++i) prompts.push_back(family_window(0, 128, fresh));
    for (int i = 0; i < 50; ++i) prompts.push_back(family_window(1, 128, fresh));
    std::vector<Vec> exemplars_a, exemplars_b;
    for (int i = 0; i < 16; ++i) exemplars_a.push_back(family_window(0, 128, fresh).values);
    for (int i = 0; i < 16; ++i) exemplars_b.push_back(family_window(1, 128, fresh).values);

    auto generated = generator::generate_for_step(gen, prompts, 100, 128, 20, 1.0, 63, 0);
    int correct = 0;
    for (int i = 0; i < 100; ++i) {
        double da = std::numeric_limits<double>::infinity();
        double db = std::numeric_limits<double>::infinity();
        for (const auto& e : exemplars_a) da = std::min(da, aligned_l2(generated[i].values, e));
        for (const auto& e : exemplars_b) db = std::min(db, aligned_l2(generated[i].values, e));
        const int assigned = da <= db ? 0 : 1;
        if (assigned == prompts[i].subset_id) correct += 1;
    }

    // prompt-encoder separation between families (auxiliary contract)
    Vec mean_cos;
    for (int i = 0; i < 50; ++i)
        for (int j = 50; j < 100; j += 7) {
            Vec ba = generator::encode_prompt(gen.encoder, prompts[i].values);
            Vec bb = generator::encode_prompt(gen.encoder, prompts[j].values);
            mean_cos.push_back(cosine(ba, bb));
        }
    const double cross_cos = mean_of(mean_cos);

    // class embedding path stays live: same bias, different class id
    generator::Condition ca{generator::encode_prompt(gen.encoder, prompts[0].values), 0};
    generator::Condition cb = ca;
    cb.class_id = 1;
    RandomStream xr(64);
    Vec xt(128);
    for (auto& v : xt) v = xr.gauss();
    Vec ea = generator::denoise_step(gen.denoiser, xt, 100, ca);
    Vec eb = generator::denoise_step(gen.denoiser, xt, 100, cb);
    const bool class_live = ea != eb;

    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << correct << "/100 draws assigned to the prompting family, cross-family bias cosine "
       << cross_cos << ", " << elapsed << "s";
    detail = os.str();
    return correct >= 80 && cross_cos < 0.9 && class_live && elapsed < 1800.0;
}

bool crit7_directional_ordering(std::string& detail) {
    const auto t0 = Clock::now();
    for (const std::string m : {"oats", "tsmixup", "jitter", "none", "dd"})
        ensure_method_runs(m, 5);
    const auto& oats = g_final_ref_nll["oats"];
    const int w_mix = count_wins(oats, g_final_ref_nll["tsmixup"]);
    const int w_jit = count_wins(oats, g_final_ref_nll["jitter"]);
    const int w_none = count_wins(oats, g_final_ref_nll["none"]);
    const double elapsed = seconds_since(t0);
    std::ostringstream os;
    os << "oats beats tsmixup " << w_mix << "/5, jitter " << w_jit << "/5, none " << w_none
       << "/5, " << elapsed << "s";
    detail = os.str();
    return w_mix >= 4 && w_jit >= 4 && w_none >= 4 && elapsed < 7200.0;
}

bool crit7_aux_dd(std::string& detail) {
    ensure_method_runs("oats", 5);
    ensure_method_runs("dd", 5);
    const int w_dd = count_wins(g_final_ref_nll["oats"], g_final_ref_nll["dd"]);
    std::ostringstream os;
    os << "oats beats offline dd " << w_dd << "/5";
    detail = os.str();
    return w_dd >= 4;
}

bool crit7_aux_report(std::string& detail) {
    // the report pipeline over the criterion-7 runs: aligned subset's phi
    // contribution at the end of training exceeds its size share (0.15)
    ensure_method_runs("oats", 5);
    int exceed = 0;
    for (const auto& phi : g_oats_phi_final) {
        double denom = 0.0;
        for (double v : phi) denom += std::max(0.0, v);
        const double frac = denom > 0.0 ? std::max(0.0, phi[0]) / denom : 0.0;
        if (frac > 0.15) exceed += 1;
    }

    std::string runs_json = "[";
    bool first = true;
    for (const auto& [method, dirs] : g_run_dirs)
        for (const auto& d : dirs) {
            runs_json += std::string(first ? "" : ",") + "\"" + d + "\"";
            first = false;
        }
    runs_json += "]";
    const std::string cfg_path = g_work + "/report.json";
    {
        std::ofstream out(cfg_path);
        out << "{\"runs\": " << runs_json << ", \"out_dir\": \"" << g_work << "/report\"}";
    }
    const int rc = cli::run_command({"report", "--config", cfg_path});
    const bool have_summary = fs::exists(g_work + "/report/summary.csv");
    std::ostringstream os;
    os << "aligned phi fraction exceeds size share in " << exceed << "/5 seeds, report rc "
       << rc;
    detail = os.str();
    return exceed >= 4 && rc == 0 && have_summary;
}

bool crit8_sel_only(std::string& detail) {
    const auto t0 = Clock::now();
    ensure_method_runs("oats", 5);
    ensure_method_runs("oats_sel_only", 5);
    const int wins =
        count_wins(g_final_ref_nll["oats"], g_final_ref_nll["oats_sel_only"], /*or_equal*/ true);
    std::ostringstream os;
    os << "oats <= sel-only in " << wins << "/5 seeds, " << seconds_since(t0) << "s";
    detail = os.str();
    return wins >= 4;
}

bool crit9_overhead(std::string& detail) {
    const auto t0 = Clock::now();
    ensure_rig();
    std::vector<double> eps_grid = {0.0, 0.3, 0.5, 0.7, 1.0};
    std::vector<double> mean_ms;
    bool exploit_clean = true;
    for (double eps : eps_grid) {
        trainer::RunConfig cfg = rig_run_config("oats", 90);
        cfg.total_steps = 400;
        cfg.lr.total_steps = 400;
        cfg.lr.warmup_steps = 40;
        cfg.epsilon = eps;
        cfg.eval_every = 400;
        cfg.augment.ddim_steps = 4;
        trainer::TrainResult res = trainer::train_run(cfg);
        mean_ms.push_back(res.log.mean_step_wall_ms());
        long explores = 0;
        for (const auto& s : res.log.steps)
            if (s.mode == "explore") explores += 1;
        if (res.log.tsis_calls != explores) exploit_clean = false;
        if (eps == 0.0 && res.log.tsis_calls != 0) exploit_clean = false;
        std::fprintf(stderr, "[c9] eps %.1f: %.2f ms/step, tsis calls %ld\n", eps,
                     mean_ms.back(), res.log.tsis_calls);
    }
    bool monotone = true;
    for (size_t i = 1; i < mean_ms.size(); ++i)
        if (mean_ms[i] <= mean_ms[i - 1]) monotone = false;
    std::ostringstream os;
    os << "mean ms/step over eps grid:";
    for (double v : mean_ms) os << " " << v;
    os << ", " << seconds_since(t0) << "s";
    detail = os.str();
    return monotone && exploit_clean;
}

bool crit10_reproducibility(std::string& detail) {
    ensure_rig();
    auto read_file = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    trainer::RunConfig cfg = rig_run_config("oats", 11);
    cfg.total_steps = 150;
    cfg.lr.total_steps = 150;
    cfg.lr.warmup_steps = 15;
    cfg.eval_every = 50;
    cfg.paths.out_dir = g_work + "/repro_a";
    trainer::train_run(cfg);
    cfg.paths.out_dir = g_work + "/repro_b";
    trainer::train_run(cfg);
    const std::string a = read_file(g_work + "/repro_a/eval.csv");
    const std::string b = read_file(g_work + "/repro_b/eval.csv");
    detail = a == b ? "eval.csv byte-identical across reruns"
                    : "eval.csv differs between reruns";
    return !a.empty() && a == b;
}

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::string&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    g_work = (fs::temp_directory_path() / "oats_acceptance").string();
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
        } else if (a == "--work" && i + 1 < argc) {
            g_work = argv[++i];
        }
    }
    fs::create_directories(g_work);

    std::vector<Criterion> criteria = {
        {1, "ghost inner-product oracle equivalence", crit1_ghost_oracle},
        {2, "first-order Taylor fidelity of influence scores", crit2_taylor_fidelity},
        {3, "sampler chi-square correctness", crit3_samplers},
        {4, "EMA cache exactness", crit4_ema_exact},
        {5, "diffusion forward terminal marginal", crit5_forward_marginal},
        {6, "conditional generation discriminability", crit6_conditional_generation},
        {7, "directional ordering vs static baselines", crit7_directional_ordering},
        {8, "selection-only ablation ordering", crit8_sel_only},
        {9, "explore-fraction wall-time monotonicity", crit9_overhead},
        {10, "bit-identical reruns", crit10_reproducibility},
    };
    // auxiliary contracts that share the criterion-7 rig
    std::vector<Criterion> aux = {
        {7, "offline-diffusion baseline ordering", crit7_aux_dd},
        {7, "report pipeline and phi contribution", crit7_aux_report},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", c.id, c.name.c_str(),
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) failures += 1;
    }
    for (const auto& c : aux) {
        if (!only.empty() && !only.count(c.id)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] aux (criterion %d rig): %s (%s)\n", ok ? "PASS" : "FAIL", c.id,
                    c.name.c_str(), detail.c_str());
        std::fflush(stdout);
        if (!ok) failures += 1;
    }
    if (failures == 0) std::printf("acceptance: all criteria passed\n");
    else std::printf("acceptance: %d check(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
