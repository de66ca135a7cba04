#include "oats/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "oats/attribution.hpp"
#include "oats/checkpoint.hpp"
#include "oats/generator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oats::trainer {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<corpus::SeriesWindow> gather(const corpus::TrainingCorpus& corpus,
                                         const std::vector<int>& idx) {
    std::vector<corpus::SeriesWindow> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(corpus.windows[i]);
    return out;
}

}  // namespace

void assert_no_reference_windows(const std::vector<corpus::SeriesWindow>& batch) {
    for (const auto& w : batch)
        if (w.subset_id == corpus::kReferenceSubset)
            fail("ConfigInvalid", "a reference window reached an update batch");
}

void RunConfig::validate() const {
    if (batch_size < 2) fail_validation("ConfigInvalid", "batch_size must be >= 2");
    if (total_steps < 1) fail_validation("ConfigInvalid", "total_steps must be >= 1");
    if (epsilon < 0.0 || epsilon > 1.0 || beta < 0.0 || beta > 1.0)
        fail_validation("ConfigInvalid", "epsilon and beta must lie in [0, 1]");
    if (eval_every < 1) fail_validation("ConfigInvalid", "eval_every must be >= 1");
    augment.validate();
    if (paths.manifest.empty() || paths.reference_csv.empty() || paths.test_csv.empty())
        fail_validation("ConfigInvalid", "manifest, reference and test paths are required");
    const bool needs_gen = augment.method == baselines::Method::Oats ||
                           augment.method == baselines::Method::Dd;
    if (needs_gen && paths.generator_checkpoint.empty())
        fail_validation("MissingGeneratorCheckpoint",
                        "method " + baselines::method_name(augment.method) +
                            " needs a generator checkpoint");
}

RunConfig parse_run_config(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) fail_validation("MissingFile", "cannot open config " + json_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", json_path + ": " + e.what());
    }
    RunConfig cfg;
    try {
        cfg.seed = j.value("seed", 1ULL);
        cfg.total_steps = j.value("total_steps", 3000L);
        cfg.batch_size = j.value("batch_size", 32);
        cfg.epsilon = j.value("epsilon", 1.0);
        cfg.beta = j.value("beta", 0.01);
        cfg.snr_threshold_db = j.value("snr_threshold_db", 3.0);
        cfg.snr_smooth_window = j.value("snr_smooth_window", 5);
        cfg.eval_every = j.value("eval_every", 100L);
        cfg.log_tsis = j.value("log_tsis", true);
        const std::string opt = j.value("optimizer", std::string("adam"));
        if (opt == "adam")
            cfg.optimizer = model::OptMode::Adam;
        else if (opt == "sgd")
            cfg.optimizer = model::OptMode::Sgd;
        else
            fail_validation("ConfigInvalid", "optimizer must be adam or sgd");
        cfg.weight_decay = j.value("weight_decay", 1e-4);
        if (j.contains("lr")) {
            const auto& l = j.at("lr");
            cfg.lr.peak = l.value("peak", 1e-3);
            cfg.lr.warmup_steps = l.value("warmup_steps", std::max(1L, cfg.total_steps / 10));
        } else {
            cfg.lr.warmup_steps = std::max(1L, cfg.total_steps / 10);
        }
        cfg.lr.total_steps = cfg.total_steps;
        if (j.contains("model")) {
            const auto& m = j.at("model");
            cfg.model.patch_size = m.value("patch_size", 16);
            cfg.model.d_model = m.value("d_model", 64);
            cfg.model.hidden_width = m.value("hidden_width", 128);
        }
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            cfg.augment.method = baselines::parse_method(a.value("method", std::string("oats")));
            cfg.augment.tsmixup_k = a.value("tsmixup_k", 2);
            cfg.augment.tsmixup_lambda_low = a.value("tsmixup_lambda_low", 0.1);
            cfg.augment.tsmixup_lambda_high = a.value("tsmixup_lambda_high", 0.9);
            cfg.augment.jitter_sigma = a.value("jitter_sigma", 0.03);
            cfg.augment.guidance_scale = a.value("guidance_scale", 1.0);
            cfg.augment.ddim_steps = a.value("ddim_steps", 20);
            cfg.augment.dd_pool_size = a.value("dd_pool_size", 512);
        }
        const auto& p = j.at("paths");
        cfg.paths.manifest = p.at("manifest").get<std::string>();
        cfg.paths.reference_csv = p.at("reference").get<std::string>();
        cfg.paths.test_csv = p.at("test").get<std::string>();
        cfg.paths.generator_checkpoint = p.value("generator_checkpoint", std::string());
        cfg.paths.out_dir = p.value("out_dir", std::string());
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", json_path + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["total_steps"] = cfg.total_steps;
    j["batch_size"] = cfg.batch_size;
    j["epsilon"] = cfg.epsilon;
    j["beta"] = cfg.beta;
    j["snr_threshold_db"] = cfg.snr_threshold_db;
    j["snr_smooth_window"] = cfg.snr_smooth_window;
    j["eval_every"] = cfg.eval_every;
    j["log_tsis"] = cfg.log_tsis;
    j["optimizer"] = cfg.optimizer == model::OptMode::Adam ? "adam" : "sgd";
    j["weight_decay"] = cfg.weight_decay;
    j["lr"] = {{"peak", cfg.lr.peak}, {"warmup_steps", cfg.lr.warmup_steps}};
    j["model"] = {{"patch_size", cfg.model.patch_size},
                  {"d_model", cfg.model.d_model},
                  {"hidden_width", cfg.model.hidden_width},
                  {"context_length", cfg.model.context_length},
                  {"horizon", cfg.model.horizon}};
    j["augment"] = {{"method", baselines::method_name(cfg.augment.method)},
                    {"tsmixup_k", cfg.augment.tsmixup_k},
                    {"tsmixup_lambda_low", cfg.augment.tsmixup_lambda_low},
                    {"tsmixup_lambda_high", cfg.augment.tsmixup_lambda_high},
                    {"jitter_sigma", cfg.augment.jitter_sigma},
                    {"guidance_scale", cfg.augment.guidance_scale},
                    {"ddim_steps", cfg.augment.ddim_steps},
                    {"dd_pool_size", cfg.augment.dd_pool_size}};
    j["paths"] = {{"manifest", cfg.paths.manifest},
                  {"reference", cfg.paths.reference_csv},
                  {"test", cfg.paths.test_csv},
                  {"generator_checkpoint", cfg.paths.generator_checkpoint},
                  {"out_dir", cfg.paths.out_dir}};
    return j.dump(2);
}

std::pair<double, double> eval_run(const model::ForecasterParams& params,
                                   const std::vector<corpus::SeriesWindow>& test_windows) {
    if (test_windows.empty()) fail("EmptySubset", "evaluation set is empty");
    auto [contexts, targets] = corpus::windows_to_matrices(
        test_windows, params.cfg.context_length, params.cfg.horizon);
    model::GaussianForecast f = model::forward(params, contexts);
    Vec nll = model::nll_loss(f, targets);
    double mape = 0.0;
    for (int i = 0; i < targets.rows; ++i)
        for (int j = 0; j < targets.cols; ++j)
            mape += std::abs(targets(i, j) - f.mean(i, j)) / (std::abs(targets(i, j)) + 1e-3);
    mape /= static_cast<double>(targets.rows) * targets.cols;
    return {mean_of(nll), mape};
}

double RunLog::mean_step_wall_ms() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : steps) s += r.wall_ms;
    return s / static_cast<double>(steps.size());
}

void RunLog::write(const std::string& out_dir, const RunConfig& cfg) const {
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "run.csv", std::ios::binary);
        out << "step,mode,wall_time_ms,sample_ms,tsis_ms,gen_ms,update_ms,train_loss,n_real,n_syn\n";
        for (const auto& r : steps)
            out << r.step << ',' << r.mode << ',' << fmt_g17(r.wall_ms) << ','
                << fmt_g17(r.sample_ms) << ',' << fmt_g17(r.tsis_ms) << ',' << fmt_g17(r.gen_ms)
                << ',' << fmt_g17(r.update_ms) << ',' << fmt_g17(r.train_loss) << ',' << r.n_real
                << ',' << r.n_syn << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "eval.csv", std::ios::binary);
        out << "step,test_nll,test_mape\n";
        for (const auto& r : evals)
            out << r.step << ',' << fmt_g17(r.nll) << ',' << fmt_g17(r.mape) << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "phi.csv", std::ios::binary);
        out << "step";
        const size_t L = phi_history.empty() ? 0 : phi_history[0].size();
        for (size_t l = 0; l < L; ++l) out << ",subset_" << l;
        out << '\n';
        for (size_t s = 0; s < phi_history.size(); ++s) {
            out << (s + 1);
            for (double v : phi_history[s]) out << ',' << fmt_g17(v);
            out << '\n';
        }
    }
    {
        std::ofstream out(fs::path(out_dir) / "tsis.csv", std::ios::binary);
        out << "step,sample_ref,subset_id,influence,gated,selected\n";
        for (const auto& r : tsis_rows)
            out << r.step << ',' << r.sample_ref << ',' << r.subset_id << ','
                << fmt_g17(r.influence) << ',' << (r.gated ? 1 : 0) << ','
                << (r.selected ? 1 : 0) << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "config.json", std::ios::binary);
        out << run_config_to_json(cfg) << "\n";
    }
    {
        json j;
        j["final_ref_nll"] = final_ref_nll;
        j["final_test_nll"] = final_test_nll;
        j["final_test_mape"] = final_test_mape;
        j["tsis_calls"] = tsis_calls;
        j["generator_invocations"] = generator_invocations;
        j["mean_step_wall_ms"] = mean_step_wall_ms();
        j["method"] = baselines::method_name(cfg.augment.method);
        j["seed"] = cfg.seed;
        std::ofstream out(fs::path(out_dir) / "summary.json", std::ios::binary);
        out << j.dump(2) << "\n";
    }
}

TrainResult train_run(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    using baselines::Method;
    const Method method = cfg.augment.method;

    corpus::Manifest manifest = corpus::load_manifest(cfg.paths.manifest);
    corpus::TrainingCorpus corpus_data = corpus::load_training_corpus(manifest);
    corpus::ReferenceSet reference = corpus::load_reference_set(
        cfg.paths.reference_csv, manifest.context_length, manifest.horizon);
    std::vector<corpus::SeriesWindow> test_windows =
        corpus::load_eval_windows(cfg.paths.test_csv, manifest.context_length, manifest.horizon);

    cfg.model.context_length = manifest.context_length;
    cfg.model.horizon = manifest.horizon;
    cfg.model.validate();
    const int wlen = manifest.window_length();
    const int b = cfg.batch_size;
    const int half = b / 2;
    if (b > corpus_data.total_windows())
        fail_validation("ConfigInvalid", "batch size exceeds corpus size");

    generator::TrainedGenerator gen;
    const bool needs_gen = method == Method::Oats || method == Method::Dd;
    if (needs_gen) {
        gen = generator::load_generator(cfg.paths.generator_checkpoint);
        if (gen.denoiser.cfg.num_classes != corpus_data.num_subsets)
            fail_validation("ConfigInvalid",
                            "generator was trained for a different subset count");
    }

    RandomStream model_rng(mix_seed(cfg.seed, 0x0DE1, 0));
    model::ForecasterParams params = model::ForecasterParams::init(cfg.model, model_rng);
    model::OptimizerState opt;
    opt.mode = cfg.optimizer;
    opt.weight_decay = cfg.weight_decay;
    std::vector<TensorRef> param_refs = params.tensors();

    scheduler::SubsetCache cache =
        scheduler::SubsetCache::init(corpus_data.subset_sizes, cfg.beta, cfg.epsilon);
    RandomStream train_rng(mix_seed(cfg.seed, 0x7A17, 0));

    // The offline baseline's pool is generated once and cycled in order.
    std::vector<corpus::SeriesWindow> dd_pool;
    size_t dd_cursor = 0;
    if (method == Method::Dd) {
        RandomStream dd_rng(mix_seed(cfg.seed, 0xDD00, 0));
        dd_pool = baselines::dd_generate(gen, cfg.augment.dd_pool_size, wlen,
                                         cfg.augment.ddim_steps, dd_rng);
    }

    const long tsis_calls_before = attribution::tsis_call_count();
    const long gen_calls_before = generator::generator_invocation_count();

    RunLog log;
    for (long step = 1; step <= cfg.total_steps; ++step) {
        const auto step_t0 = Clock::now();
        StepRecord rec;
        rec.step = step;

        std::vector<corpus::SeriesWindow> update_batch;
        if (method == Method::Oats || method == Method::OatsSelOnly) {
            const scheduler::StepMode mode = scheduler::decide_step(cache, train_rng);
            rec.mode = mode == scheduler::StepMode::Explore ? "explore" : "exploit";
            std::vector<corpus::SeriesWindow> guidance;
            if (mode == scheduler::StepMode::Explore) {
                auto t0 = Clock::now();
                auto idx = scheduler::sample_explore(corpus_data, b, train_rng);
                auto batch = gather(corpus_data, idx);
                rec.sample_ms = ms_since(t0);

                t0 = Clock::now();
                auto scores = attribution::tsis_batch(params, batch, reference,
                                                      cfg.snr_threshold_db,
                                                      cfg.snr_smooth_window);
                std::vector<std::pair<int, double>> phi_scores;
                phi_scores.reserve(scores.size());
                for (size_t i = 0; i < scores.size(); ++i)
                    phi_scores.emplace_back(batch[i].subset_id, scores[i].influence);
                scheduler::update_phi(cache, phi_scores);
                std::vector<int> sel;
                try {
                    sel = attribution::select_top_half(scores, b);
                } catch (const Error& e) {
                    if (e.kind != "AllGated") throw;
                    sel = attribution::select_top_k_by_influence(scores, half);
                }
                rec.tsis_ms = ms_since(t0);
                if (cfg.log_tsis) {
                    std::vector<bool> selected(scores.size(), false);
                    for (int i : sel) selected[i] = true;
                    for (size_t i = 0; i < scores.size(); ++i)
                        log.tsis_rows.push_back({step, scores[i].sample_ref, batch[i].subset_id,
                                                 scores[i].influence, scores[i].gated,
                                                 selected[i]});
                }
                for (int i : sel) guidance.push_back(batch[i]);
            } else {
                const auto t0 = Clock::now();
                auto idx = scheduler::sample_exploit(corpus_data, cache, half, train_rng);
                guidance = gather(corpus_data, idx);
                rec.sample_ms = ms_since(t0);
            }
            update_batch = guidance;
            rec.n_real = static_cast<int>(guidance.size());
            if (method == Method::Oats) {
                const auto t0 = Clock::now();
                auto synthetic = generator::generate_for_step(
                    gen, guidance, static_cast<int>(guidance.size()), wlen,
                    cfg.augment.ddim_steps, cfg.augment.guidance_scale, cfg.seed, step);
                rec.gen_ms = ms_since(t0);
                rec.n_syn = static_cast<int>(synthetic.size());
                for (auto& w : synthetic) update_batch.push_back(std::move(w));
            }
        } else if (method == Method::None) {
            rec.mode = "uniform";
            const auto t0 = Clock::now();
            auto idx = scheduler::sample_explore(corpus_data, b, train_rng);
            update_batch = gather(corpus_data, idx);
            rec.sample_ms = ms_since(t0);
            rec.n_real = b;
        } else {
            // static baselines share the half-real / half-augmented layout
            rec.mode = "uniform";
            auto t0 = Clock::now();
            auto idx = scheduler::sample_explore(corpus_data, half, train_rng);
            update_batch = gather(corpus_data, idx);
            rec.sample_ms = ms_since(t0);
            rec.n_real = half;

            t0 = Clock::now();
            const long n = corpus_data.total_windows();
            for (int i = 0; i < half; ++i) {
                if (method == Method::TsMixup) {
                    std::vector<corpus::SeriesWindow> parts;
                    for (int k = 0; k < cfg.augment.tsmixup_k; ++k)
                        parts.push_back(corpus_data.windows[train_rng.uniform_int(0, n - 1)]);
                    Vec lambdas = baselines::draw_mixup_lambdas(
                        cfg.augment.tsmixup_k, cfg.augment.tsmixup_lambda_low,
                        cfg.augment.tsmixup_lambda_high, train_rng);
                    update_batch.push_back(baselines::tsmixup(parts, lambdas));
                } else if (method == Method::Jitter) {
                    const auto& src = corpus_data.windows[train_rng.uniform_int(0, n - 1)];
                    update_batch.push_back(
                        baselines::jitter(src, cfg.augment.jitter_sigma, train_rng));
                } else {  // Dd
                    update_batch.push_back(dd_pool[dd_cursor % dd_pool.size()]);
                    dd_cursor += 1;
                }
            }
            rec.gen_ms = ms_since(t0);
            rec.n_syn = half;
        }

        assert_no_reference_windows(update_batch);

        const auto t0 = Clock::now();
        auto [contexts, targets] = corpus::windows_to_matrices(
            update_batch, cfg.model.context_length, cfg.model.horizon);
        auto back = model::backward(params, contexts, targets);
        model::optimizer_step(param_refs, to_const_refs(back.grads.tensors()), opt, cfg.lr.at(step));
        rec.update_ms = ms_since(t0);
        rec.train_loss = mean_of(back.per_sample_nll);

        log.phi_history.push_back(cache.phi);
        rec.wall_ms = ms_since(step_t0);
        log.steps.push_back(std::move(rec));

        if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
            auto [nll, mape] = eval_run(params, test_windows);
            log.evals.push_back({step, nll, mape});
        }
    }

    auto [test_nll, test_mape] = eval_run(params, test_windows);
    auto [ref_nll, ref_mape] = eval_run(params, reference.windows);
    (void)ref_mape;
    log.final_test_nll = test_nll;
    log.final_test_mape = test_mape;
    log.final_ref_nll = ref_nll;
    log.tsis_calls = attribution::tsis_call_count() - tsis_calls_before;
    log.generator_invocations = generator::generator_invocation_count() - gen_calls_before;

    if (!cfg.paths.out_dir.empty()) {
        log.write(cfg.paths.out_dir, cfg);
        checkpoint::save_checkpoint((fs::path(cfg.paths.out_dir) / "model.ckpt").string(),
                                    to_const_refs(params.tensors()));
    }
    return {std::move(params), std::move(log)};
}

}  // namespace oats::trainer
