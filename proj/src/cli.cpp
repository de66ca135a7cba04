#include "oats/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "json.hpp"
#include "oats/baselines.hpp"
#include "oats/checkpoint.hpp"
#include "oats/corpus.hpp"
#include "oats/generator.hpp"
#include "oats/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oats::cli {

namespace {

struct CliArgs {
    std::string command;
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
};

CliArgs parse_args(const std::vector<std::string>& args) {
    static const std::vector<std::string> commands = {"gen-data", "train-generator", "train",
                                                      "eval", "sample", "report"};
    if (args.empty()) fail_validation("ConfigInvalid", "usage: oats <command> --config <path>");
    CliArgs out;
    out.command = args[0];
    if (std::find(commands.begin(), commands.end(), out.command) == commands.end())
        fail_validation("ConfigInvalid", "unknown command: " + out.command);
    for (size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        auto next = [&]() -> const std::string& {
            if (i + 1 >= args.size()) fail_validation("ConfigInvalid", a + " needs a value");
            return args[++i];
        };
        if (a == "--config")
            out.config_path = next();
        else if (a == "--seed")
            out.seed = std::stoull(next());
        else if (a == "--out")
            out.out = next();
        else
            fail_validation("ConfigInvalid", "unknown flag: " + a);
    }
    if (out.config_path.empty()) fail_validation("ConfigInvalid", "--config is required");
    return out;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_validation("MissingFile", "cannot open config " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        fail_validation("ConfigInvalid", path + ": " + e.what());
    }
}

// ----------------------------- gen-data -----------------------------------

int cmd_gen_data(const CliArgs& args) {
    corpus::SyntheticCorpusSpec spec = corpus::parse_synthetic_spec(args.config_path);
    const json j = load_json(args.config_path);
    uint64_t seed = args.seed.value_or(j.value("seed", 7ULL));
    if (args.out) spec.out_dir = *args.out;
    corpus::Manifest m = corpus::make_synthetic_corpus(spec, seed);
    std::cout << "wrote corpus with " << m.num_subsets() << " subsets to " << spec.out_dir
              << "\n";
    return 0;
}

// ----------------------------- train-generator ----------------------------

int cmd_train_generator(const CliArgs& args) {
    const json j = load_json(args.config_path);
    const std::string manifest_path = j.at("manifest").get<std::string>();
    corpus::Manifest manifest = corpus::load_manifest(manifest_path);
    corpus::TrainingCorpus corpus_data = corpus::load_training_corpus(manifest);

    generator::GeneratorTrainConfig cfg;
    json dj = j.value("denoiser", json::object());
    if (!dj.contains("series_length")) dj["series_length"] = manifest.window_length();
    if (!dj.contains("num_classes")) dj["num_classes"] = manifest.num_subsets();
    cfg.denoiser = generator::denoiser_config_from_json(dj.dump());
    if (cfg.denoiser.num_classes != manifest.num_subsets())
        fail_validation("ConfigInvalid", "denoiser num_classes must equal the subset count");
    cfg.steps = j.value("steps", 3000);
    cfg.batch_size = j.value("batch_size", 32);
    cfg.lr = j.value("lr", 1e-3);
    cfg.cond_dropout = j.value("cond_dropout", 0.5);
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        cfg.schedule_steps = s.value("steps", 200);
        cfg.beta_start = s.value("beta_start", 0.0005);
        cfg.beta_end = s.value("beta_end", 0.1);
    }
    const double fraction = j.value("train_fraction", 0.05);
    const uint64_t seed = args.seed.value_or(j.value("seed", 1ULL));
    std::string out_path = args.out.value_or(j.value("out_checkpoint", std::string()));
    if (out_path.empty())
        fail_validation("ConfigInvalid", "out_checkpoint (or --out) is required");

    RandomStream slice_rng(mix_seed(seed, 0x51CE, 0));
    auto slice = generator::sample_fraction(corpus_data.windows, fraction, slice_rng);
    generator::GeneratorTrainStats stats;
    generator::TrainedGenerator gen = generator::train_generator(slice, cfg, seed, &stats);
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? "."
                               : fs::path(out_path).parent_path().string());
    generator::save_generator(out_path, gen);
    const double first = stats.step_losses.empty() ? 0.0 : stats.step_losses.front();
    const double last = stats.step_losses.empty() ? 0.0 : stats.step_losses.back();
    std::cout << "trained generator on " << slice.size() << " windows for " << cfg.steps
              << " steps (loss " << fmt_g17(first) << " -> " << fmt_g17(last) << "), wrote "
              << out_path << "\n";
    return 0;
}

// ----------------------------- train --------------------------------------

int cmd_train(const CliArgs& args) {
    trainer::RunConfig cfg = trainer::parse_run_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.out) cfg.paths.out_dir = *args.out;
    if (cfg.paths.out_dir.empty())
        fail_validation("ConfigInvalid", "paths.out_dir (or --out) is required");
    trainer::TrainResult res = trainer::train_run(cfg);
    std::cout << "final_test_nll=" << fmt_g17(res.log.final_test_nll)
              << " final_test_mape=" << fmt_g17(res.log.final_test_mape)
              << " final_ref_nll=" << fmt_g17(res.log.final_ref_nll) << "\n";
    return 0;
}

// ----------------------------- eval ---------------------------------------

int cmd_eval(const CliArgs& args) {
    const json j = load_json(args.config_path);
    model::ForecasterConfig mcfg;
    mcfg.context_length = j.value("context_length", 96);
    mcfg.horizon = j.value("horizon", 32);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        mcfg.patch_size = m.value("patch_size", 16);
        mcfg.d_model = m.value("d_model", 64);
        mcfg.hidden_width = m.value("hidden_width", 128);
    }
    model::ForecasterParams params = model::ForecasterParams::zeros(mcfg);
    auto named = checkpoint::load_checkpoint(j.at("checkpoint").get<std::string>());
    checkpoint::apply_checkpoint(params.tensors(), named);
    auto test = corpus::load_eval_windows(j.at("test_csv").get<std::string>(),
                                          mcfg.context_length, mcfg.horizon);
    auto [nll, mape] = trainer::eval_run(params, test);
    json out;
    out["nll"] = nll;
    out["mape"] = mape;
    out["n_windows"] = test.size();
    const std::string text = out.dump(2);
    std::cout << text << "\n";
    std::string out_path = args.out.value_or(j.value("out", std::string()));
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        f << text << "\n";
    }
    return 0;
}

// ----------------------------- sample --------------------------------------

int cmd_sample(const CliArgs& args) {
    const json j = load_json(args.config_path);
    generator::TrainedGenerator gen =
        generator::load_generator(j.at("checkpoint").get<std::string>());
    const int n = j.value("n", 16);
    const int ddim_steps = j.value("ddim_steps", 20);
    const double w = j.value("guidance_scale", 1.0);
    const uint64_t seed = args.seed.value_or(j.value("seed", 7ULL));
    const std::string out_csv = args.out.value_or(j.value("out_csv", std::string()));
    if (out_csv.empty()) fail_validation("ConfigInvalid", "out_csv (or --out) is required");

    const auto& cfg = gen.denoiser.cfg;
    generator::ConditionBatch cond;
    cond.prototype_bias = Mat(n, cfg.n_prototypes);
    cond.class_ids.assign(static_cast<size_t>(n), cfg.num_classes);
    if (j.contains("prompt_csv")) {
        auto prompts = corpus::load_series_csv(j.at("prompt_csv").get<std::string>());
        if (prompts.empty()) fail_validation("EmptySubset", "prompt file has no series");
        Mat pm(n, cfg.series_length);
        for (int i = 0; i < n; ++i) {
            Vec p = corpus::standardize(prompts[i % prompts.size()]);
            p = resample_linear(p, cfg.series_length);
            for (int k = 0; k < cfg.series_length; ++k) pm(i, k) = p[k];
        }
        cond.prototype_bias = generator::encode_prompt_batch(gen.encoder, pm);
        const int cls = j.value("class_id", 0);
        if (cls < 0 || cls > cfg.num_classes)
            fail_validation("ConfigInvalid", "class_id out of range");
        cond.class_ids.assign(static_cast<size_t>(n), cls);
    } else {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < cfg.n_prototypes; ++k)
                cond.prototype_bias(i, k) = gen.denoiser.null_prototype_bias[k];
    }

    Mat x_init(n, cfg.series_length);
    for (int i = 0; i < n; ++i) {
        RandomStream rs(mix_seed(seed, 0, static_cast<uint64_t>(i)));
        for (int k = 0; k < cfg.series_length; ++k) x_init(i, k) = rs.gauss();
    }
    Mat raw = generator::ddim_sample_batch(gen.denoiser, cond, gen.schedule, ddim_steps, w,
                                           x_init);
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i)
        out.push_back(corpus::standardize(Vec(raw.row(i), raw.row(i) + cfg.series_length)));
    corpus::save_series_csv(out_csv, out);
    std::cout << "wrote " << n << " series to " << out_csv << "\n";
    return 0;
}

// ----------------------------- report --------------------------------------

struct RunSummary {
    std::string method;
    uint64_t seed = 0;
    double ref_nll = 0, test_nll = 0, test_mape = 0;
    std::vector<std::pair<long, double>> eval_nll;  // (step, nll)
    std::vector<std::pair<long, Vec>> phi;          // (step, phi row)
    std::string dir;
};

RunSummary read_run(const std::string& dir) {
    RunSummary r;
    r.dir = dir;
    {
        std::ifstream in(fs::path(dir) / "summary.json");
        if (!in) fail_validation("EmptyInput", "missing summary.json in " + dir);
        json j;
        in >> j;
        r.method = j.value("method", std::string("unknown"));
        r.seed = j.value("seed", 0ULL);
        r.ref_nll = j.value("final_ref_nll", 0.0);
        r.test_nll = j.value("final_test_nll", 0.0);
        r.test_mape = j.value("final_test_mape", 0.0);
    }
    {
        std::ifstream in(fs::path(dir) / "eval.csv");
        if (!in) fail_validation("EmptyInput", "missing eval.csv in " + dir);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
            r.eval_nll.emplace_back(std::stol(line.substr(0, c1)),
                                    std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
        }
    }
    {
        std::ifstream in(fs::path(dir) / "phi.csv");
        if (in) {
            std::string line;
            std::getline(in, line);  // header
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                Vec row;
                size_t pos = line.find(',');
                const long step = std::stol(line.substr(0, pos));
                while (pos != std::string::npos) {
                    const size_t next = line.find(',', pos + 1);
                    row.push_back(std::stod(line.substr(
                        pos + 1, next == std::string::npos ? next : next - pos - 1)));
                    pos = next;
                }
                r.phi.emplace_back(step, std::move(row));
            }
        }
    }
    return r;
}

void write_phi_fractions(const RunSummary& r, const std::string& out_dir) {
    if (r.phi.empty()) return;
    const size_t L = r.phi[0].second.size();
    std::ofstream out(fs::path(out_dir) / ("phi_fractions_" + r.method + "_seed" +
                                           std::to_string(r.seed) + ".csv"),
                      std::ios::binary);
    out << "step";
    for (size_t l = 0; l < L; ++l) out << ",frac_" << l;
    out << '\n';
    for (const auto& [step, phi] : r.phi) {
        double denom = 0.0;
        for (double v : phi) denom += std::max(0.0, v);
        out << step;
        for (double v : phi) out << ',' << fmt_g17(denom > 0.0 ? std::max(0.0, v) / denom : 0.0);
        out << '\n';
    }
}

int cmd_report(const CliArgs& args) {
    const json j = load_json(args.config_path);
    std::vector<std::string> run_dirs;
    for (const auto& r : j.value("runs", json::array()))
        run_dirs.push_back(r.get<std::string>());
    if (run_dirs.empty()) fail_validation("EmptyInput", "report needs at least one run");
    const std::string out_dir = args.out.value_or(j.value("out_dir", std::string("report")));
    fs::create_directories(out_dir);

    std::vector<RunSummary> runs;
    for (const auto& d : run_dirs) runs.push_back(read_run(d));

    std::map<std::string, std::vector<const RunSummary*>> by_method;
    for (const auto& r : runs) by_method[r.method].push_back(&r);

    auto mean_sem = [](const std::vector<double>& xs) {
        const double m = mean_of(xs);
        if (xs.size() < 2) return std::make_pair(m, 0.0);
        double ss = 0.0;
        for (double x : xs) ss += (x - m) * (x - m);
        const double sd = std::sqrt(ss / (xs.size() - 1));
        return std::make_pair(m, sd / std::sqrt(static_cast<double>(xs.size())));
    };

    {
        std::ofstream out(fs::path(out_dir) / "summary.csv", std::ios::binary);
        out << "method,n_runs,ref_nll_mean,ref_nll_sem,test_nll_mean,test_nll_sem,"
               "test_mape_mean,test_mape_sem\n";
        for (const auto& [method, rs] : by_method) {
            std::vector<double> ref, tn, tm;
            for (const auto* r : rs) {
                ref.push_back(r->ref_nll);
                tn.push_back(r->test_nll);
                tm.push_back(r->test_mape);
            }
            const auto [rm, rsem] = mean_sem(ref);
            const auto [nm, nsem] = mean_sem(tn);
            const auto [mm, msem] = mean_sem(tm);
            out << method << ',' << rs.size() << ',' << fmt_g17(rm) << ',' << fmt_g17(rsem)
                << ',' << fmt_g17(nm) << ',' << fmt_g17(nsem) << ',' << fmt_g17(mm) << ','
                << fmt_g17(msem) << '\n';
        }
    }

    for (const auto& [method, rs] : by_method) {
        std::ofstream out(fs::path(out_dir) / ("loss_curve_" + method + ".csv"),
                          std::ios::binary);
        out << "step";
        for (const auto* r : rs) out << ",nll_seed" << r->seed;
        out << '\n';
        const size_t n_rows = rs[0]->eval_nll.size();
        for (size_t i = 0; i < n_rows; ++i) {
            out << rs[0]->eval_nll[i].first;
            for (const auto* r : rs)
                out << ',' << (i < r->eval_nll.size() ? fmt_g17(r->eval_nll[i].second) : "");
            out << '\n';
        }
    }

    for (const auto& r : runs) write_phi_fractions(r, out_dir);
    std::cout << "wrote report for " << runs.size() << " runs to " << out_dir << "\n";
    return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    try {
        const CliArgs parsed = parse_args(args);
        if (parsed.command == "gen-data") return cmd_gen_data(parsed);
        if (parsed.command == "train-generator") return cmd_train_generator(parsed);
        if (parsed.command == "train") return cmd_train(parsed);
        if (parsed.command == "eval") return cmd_eval(parsed);
        if (parsed.command == "sample") return cmd_sample(parsed);
        if (parsed.command == "report") return cmd_report(parsed);
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.validation ? 1 : 2;
    } catch (const json::exception& e) {
        std::cerr << "error: ConfigInvalid: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Runtime: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace oats::cli
