// biblab: train, decompose and verify bounded information-bottleneck
// autoencoders from plain-text experiment configs.
//
// Exit codes: 0 success, 1 usage/config error, 2 training divergence,
// 3 oracle property violation.

#include "biblab/run_config.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

int thread_cap() {
    if (const char* env = std::getenv("BIBLAB_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << content;
}

json loss_report_json(const biblab::LossReport& r) {
    return json{{"a", r.a},           {"b", r.b},           {"c", r.c},
                {"d", r.d},           {"total", r.total},   {"a_kind", r.a_kind},
                {"b_kind", r.b_kind}, {"c_kind", r.c_kind}, {"d_kind", r.d_kind}};
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    std::string format = "csv";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

biblab::RunConfig load_config(CommonArgs& args) {
    biblab::RunConfig cfg = biblab::parse_run_config(args.config_path);
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (args.seed_set) {
        cfg.train.seed = args.seed;
        cfg.dataset.seed = args.seed;
    }
    return cfg;
}

int cmd_train(CommonArgs& args) {
    biblab::RunConfig cfg = load_config(args);
    biblab::Dataset data = biblab::generate(cfg.dataset);
    biblab::Workbench wb =
        biblab::build_workbench(cfg.preset_cfg, cfg.model, cfg.train.seed);

    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);

    json manifest{{"version", kVersion},
                  {"seed", cfg.train.seed},
                  {"config", json::parse(biblab::run_config_to_json(cfg))}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");

    biblab::MetricLog log;
    try {
        log = biblab::train(wb, data, cfg.train);
    } catch (const biblab::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    wb.save((out / "checkpoint.bibl").string());
    write_file(out / "metrics.csv", log.to_csv());
    write_file(out / "metrics.json", log.to_json() + "\n");

    json doc{{"command", "train"},
             {"steps", cfg.train.steps},
             {"records", log.records.size()},
             {"outputs",
              {{"checkpoint", (out / "checkpoint.bibl").string()},
               {"metrics_csv", (out / "metrics.csv").string()},
               {"metrics_json", (out / "metrics.json").string()},
               {"manifest", (out / "manifest.json").string()}}}};
    if (!log.records.empty()) doc["final"] = loss_report_json(log.records.back().report);
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_decompose(CommonArgs& args, const std::string& term_b,
                  const std::string& term_c, const std::string& term_d,
                  biblab::Index n_eval, int disc_steps) {
    biblab::RunConfig cfg = load_config(args);
    if (!term_b.empty()) cfg.preset_cfg.bindings.b = biblab::term_b_binding_from_string(term_b);
    if (!term_c.empty()) cfg.preset_cfg.bindings.c = biblab::term_c_binding_from_string(term_c);
    if (!term_d.empty()) cfg.preset_cfg.bindings.d = biblab::term_d_binding_from_string(term_d);

    biblab::Dataset data = biblab::generate(cfg.dataset);
    biblab::Workbench wb =
        biblab::build_workbench(cfg.preset_cfg, cfg.model, cfg.train.seed);
    if (!args.checkpoint.empty()) wb.load(args.checkpoint);

    biblab::DecomposeOptions opt;
    opt.n_eval = n_eval;
    if (disc_steps >= 0) opt.disc_train_steps = disc_steps;
    opt.seed = cfg.train.seed;
    biblab::DecomposeReport rep = biblab::decompose(wb, data, opt);

    json doc = loss_report_json(rep.report);
    doc["command"] = "decompose";
    if (rep.mi_exact) {
        doc["mi_exact"] = *rep.mi_exact;
        doc["a_minus_b"] = rep.report.a - rep.report.b;
        doc["gap"] = rep.report.a - rep.report.b - *rep.mi_exact;
    }
    if (rep.term_a_exact) doc["term_a_exact"] = *rep.term_a_exact;
    if (rep.term_b_exact) doc["term_b_exact"] = *rep.term_b_exact;
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_rd_curve(CommonArgs& args) {
    biblab::RunConfig cfg = load_config(args);
    biblab::Dataset data = biblab::generate(cfg.dataset);

    struct SeedRun {
        std::uint64_t seed;
        std::vector<biblab::RdPoint> points;
    };
    std::vector<SeedRun> runs;
    if (cfg.rd_seeds <= 1) {
        runs.push_back({cfg.train.seed,
                        biblab::rd_curve(data, cfg.model, cfg.rd_codebook_sizes, cfg.train)});
    } else {
        // deterministic fan-out, merged in seed order
        const int cap = thread_cap();
        runs.resize(static_cast<std::size_t>(cfg.rd_seeds));
        for (int base = 0; base < cfg.rd_seeds; base += cap) {
            const int hi = std::min(cfg.rd_seeds, base + cap);
            std::vector<std::future<SeedRun>> futs;
            for (int s = base; s < hi; ++s) {
                futs.push_back(std::async(std::launch::async, [&, s]() {
                    biblab::TrainConfig tc = cfg.train;
                    tc.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
                    biblab::DatasetSpec dspec = cfg.dataset;
                    dspec.seed = cfg.dataset.seed + static_cast<std::uint64_t>(s);
                    biblab::Dataset d = biblab::generate(dspec);
                    return SeedRun{tc.seed,
                                   biblab::rd_curve(d, cfg.model, cfg.rd_codebook_sizes, tc)};
                }));
            }
            for (int s = base; s < hi; ++s) {
                runs[static_cast<std::size_t>(s)] = futs[static_cast<std::size_t>(s - base)].get();
            }
        }
    }

    std::ostringstream csv;
    csv.precision(17);
    const bool multi = runs.size() > 1;
    csv << (multi ? "seed,L,rate_nats,rate_bits,distortion\n"
                  : "L,rate_nats,rate_bits,distortion\n");
    json points = json::array();
    for (const SeedRun& run : runs) {
        for (const biblab::RdPoint& p : run.points) {
            if (multi) csv << run.seed << ',';
            csv << p.codebook_size << ',' << p.rate_nats << ',' << p.rate_bits << ','
                << p.distortion << "\n";
            json row{{"L", p.codebook_size},
                     {"rate_nats", p.rate_nats},
                     {"rate_bits", p.rate_bits},
                     {"distortion", p.distortion}};
            if (multi) row["seed"] = run.seed;
            points.push_back(std::move(row));
        }
    }
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);
    if (args.format == "json") {
        write_file(out / "rd.json", points.dump(2) + "\n");
    } else {
        write_file(out / "rd.csv", csv.str());
    }
    json doc{{"command", "rd-curve"}, {"points", points}};
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_novelty(CommonArgs& args) {
    biblab::RunConfig cfg = load_config(args);
    biblab::Dataset data = biblab::generate(cfg.dataset);
    biblab::Workbench wb =
        biblab::build_workbench(cfg.preset_cfg, cfg.model, cfg.train.seed);
    if (args.checkpoint.empty()) {
        std::cerr << "error: novelty requires --checkpoint with a trained model\n";
        return 1;
    }
    wb.load(args.checkpoint);

    biblab::Rng out_rng = biblab::derive_rng(cfg.dataset.seed, 81);
    biblab::Mat outliers = biblab::make_outliers(cfg.dataset, cfg.novelty_outliers,
                                                 cfg.novelty_outlier_sigma, out_rng);
    biblab::Rng score_rng = biblab::derive_rng(cfg.train.seed, 82);
    biblab::Vec in_scores =
        biblab::novelty_scores(wb, data.test, cfg.novelty_weight_disc,
                               cfg.novelty_weight_recon, score_rng);
    biblab::Vec out_scores =
        biblab::novelty_scores(wb, outliers, cfg.novelty_weight_disc,
                               cfg.novelty_weight_recon, score_rng);
    const double roc = biblab::auroc(in_scores, out_scores);

    std::ostringstream csv;
    csv.precision(17);
    csv << "id,score,label\n";
    json rows = json::array();
    for (biblab::Index i = 0; i < in_scores.size(); ++i) {
        csv << i << ',' << in_scores[i] << ",0\n";
        rows.push_back(json{{"id", i}, {"score", in_scores[i]}, {"label", 0}});
    }
    for (biblab::Index i = 0; i < out_scores.size(); ++i) {
        csv << (in_scores.size() + i) << ',' << out_scores[i] << ",1\n";
        rows.push_back(
            json{{"id", in_scores.size() + i}, {"score", out_scores[i]}, {"label", 1}});
    }
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);
    if (args.format == "json") {
        write_file(out / "novelty.json", rows.dump(2) + "\n");
    } else {
        write_file(out / "novelty.csv", csv.str());
    }
    json doc{{"command", "novelty"},
             {"auroc", roc},
             {"n_in", in_scores.size()},
             {"n_out", out_scores.size()}};
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int op_trials, int composite_trials) {
    biblab::GradcheckReport rep =
        biblab::run_gradcheck(seed, op_trials, composite_trials);
    const bool pass = rep.max_rel_err_ops < 1e-5 && rep.max_rel_err_composite < 1e-4;
    json doc{{"command", "gradcheck"},
             {"max_rel_err_ops", rep.max_rel_err_ops},
             {"max_rel_err_composite", rep.max_rel_err_composite},
             {"op_trials", rep.op_trials},
             {"composite_trials", rep.composite_trials},
             {"pass", pass}};
    std::cout << doc.dump(2) << "\n";
    return pass ? 0 : 3;
}

int cmd_oracle_suite(long count, std::uint64_t seed) {
    if (count < 1) {
        std::cerr << "error: --count must be >= 1\n";
        return 1;
    }
    biblab::Rng rng = biblab::derive_rng(seed, 91);
    std::uniform_int_distribution<biblab::Index> nx(2, 8), nz(2, 8), nc(2, 4);
    long checked = 0;
    for (long i = 0; i < count; ++i) {
        biblab::oracle::WorldGenOptions opt;
        opt.nx = nx(rng);
        opt.nz = nz(rng);
        opt.nc = nc(rng);
        opt.with_classifier = true;
        opt.deterministic_enc = i % 10 == 9;
        biblab::oracle::DiscreteWorld w = biblab::oracle::random_world(opt, rng);
        w.validate();
        auto fail = [&](const std::string& what) {
            std::cerr << "property violated (" << what << ") on world " << i << ":\n"
                      << biblab::oracle::world_to_string(w);
            json doc{{"command", "oracle-suite"}, {"pass", false},
                     {"violated", what},          {"world_index", i}};
            std::cout << doc.dump(2) << "\n";
            return 3;
        };

        // decomposition identity and the upper-bound direction
        biblab::oracle::FirstTermDecomposition dec =
            biblab::oracle::decompose_first_term(w);
        if (std::abs(dec.term_a - dec.term_b - dec.mi) > 1e-12) {
            return fail("termA - termB == I(X;Z)");
        }
        if (dec.term_a < dec.mi - 1e-12) return fail("termA >= I(X;Z)");
        if (dec.term_b < -1e-15) return fail("termB >= 0");

        // variational classification bound, plus equality at the truth
        biblab::oracle::SupervisedBound sb = biblab::oracle::supervised_bound(w);
        if (sb.bound > sb.exact_izc + 1e-12) return fail("bound <= I(Z;C)");
        biblab::oracle::DiscreteWorld tight = w;
        tight.classifier = biblab::oracle::true_classifier(w);
        biblab::oracle::SupervisedBound sbt = biblab::oracle::supervised_bound(tight);
        if (std::abs(sbt.bound - sbt.exact_izc) > 1e-12) {
            return fail("equality at the true conditional");
        }

        // deterministic encoders: I(X;Z) equals the latent entropy
        if (opt.deterministic_enc) {
            const double hz = biblab::oracle::entropy(w.latent_marginal());
            if (std::abs(dec.mi - hz) > 1e-12) return fail("I(X;Z) == H(Z)");
        }
        ++checked;
    }
    json doc{{"command", "oracle-suite"}, {"pass", true}, {"worlds_checked", checked}};
    std::cout << doc.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bounded information-bottleneck autoencoder laboratory"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand name

    CommonArgs args;
    app.add_option("--config", args.config_path, "experiment config file (INI)");
    app.add_option("--out", args.out_dir, "output directory override");
    app.add_option("--seed", args.seed, "seed override (dataset and training)")
        ->each([&](const std::string&) { args.seed_set = true; });
    app.add_option("--format", args.format, "plot-data file format")
        ->check(CLI::IsMember({"csv", "json"}));

    auto* train = app.add_subcommand("train", "run a training experiment");
    auto* decompose =
        app.add_subcommand("decompose", "estimate the four terms of a checkpoint");
    std::string term_b, term_c, term_d;
    biblab::Index n_eval = 4096;
    int disc_steps = -1;
    decompose->add_option("--checkpoint", args.checkpoint, "checkpoint to evaluate");
    decompose->add_option("--term-b", term_b, "term B binding override");
    decompose->add_option("--term-c", term_c, "term C binding override");
    decompose->add_option("--term-d", term_d, "term D binding override");
    decompose->add_option("--n-eval", n_eval, "held-out evaluation samples");
    decompose->add_option("--disc-steps", disc_steps, "estimator discriminator steps");
    auto* rd = app.add_subcommand("rd-curve", "rate-distortion sweep over codebook sizes");
    auto* novelty = app.add_subcommand("novelty", "score held-out points against outliers");
    novelty->add_option("--checkpoint", args.checkpoint, "trained checkpoint");

    std::uint64_t gc_seed = 1234;
    int op_trials = 120, composite_trials = 12;
    auto* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--seed", gc_seed, "suite seed");
    gradcheck->add_option("--op-trials", op_trials, "primitive op trials");
    gradcheck->add_option("--composite-trials", composite_trials, "composite loss trials");

    long count = 1000;
    std::uint64_t suite_seed = 2024;
    auto* oracle_suite =
        app.add_subcommand("oracle-suite", "randomized exact-oracle property suite");
    oracle_suite->add_option("--count", count, "number of random worlds");
    oracle_suite->add_option("--seed", suite_seed, "suite seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            if (args.config_path.empty()) {
                std::cerr << "error: train requires --config\n";
                return 1;
            }
            return cmd_train(args);
        }
        if (decompose->parsed()) {
            if (args.config_path.empty()) {
                std::cerr << "error: decompose requires --config\n";
                return 1;
            }
            return cmd_decompose(args, term_b, term_c, term_d, n_eval, disc_steps);
        }
        if (rd->parsed()) {
            if (args.config_path.empty()) {
                std::cerr << "error: rd-curve requires --config\n";
                return 1;
            }
            return cmd_rd_curve(args);
        }
        if (novelty->parsed()) {
            if (args.config_path.empty()) {
                std::cerr << "error: novelty requires --config\n";
                return 1;
            }
            return cmd_novelty(args);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, op_trials, composite_trials);
        if (oracle_suite->parsed()) return cmd_oracle_suite(count, suite_seed);
    } catch (const biblab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const biblab::BindingError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const biblab::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 1;
    } catch (const biblab::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
