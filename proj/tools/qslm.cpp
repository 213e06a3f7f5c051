#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qslm/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string grating;
    int dimension = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    std::string noise;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* c = cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    if (config_required) c->required();
    cmd->add_option("--grating", flags.grating, "override grating kind")
        ->check(CLI::IsMember({"binary", "blazed"}));
    cmd->add_option("--dimension", flags.dimension, "override qudit dimension D")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", flags.seed, "override master seed")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--out", flags.out_dir, "override output directory");
    cmd->add_option("--noise", flags.noise, "noise preset override")
        ->check(CLI::IsMember({"off", "pluto-like"}));
}

qslm::ExperimentConfig build_config(const CommonFlags& flags) {
    qslm::ExperimentConfig cfg = qslm::load_config(flags.config_path);
    if (!flags.grating.empty()) {
        cfg.grating = flags.grating == "binary" ? qslm::GratingSpec::binary()
                                                : qslm::GratingSpec::blazed();
    }
    if (flags.dimension > 0) {
        cfg.geometry.dimension = flags.dimension;
        if (cfg.sweep && cfg.sweep->kind == qslm::SweepSpec::Kind::qudit) {
            cfg.sweep->dimension = flags.dimension;
        }
        if (cfg.target && cfg.target->dimension() != flags.dimension) {
            throw qslm::config_error("--dimension conflicts with the configured target state");
        }
    }
    if (flags.seed_set) cfg.seed = flags.seed;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.noise == "off") {
        cfg.noise = qslm::NoiseModel::ideal();
    } else if (flags.noise == "pluto-like") {
        const bool shot = cfg.noise.shot_noise;
        const double counts = cfg.noise.total_counts;
        cfg.noise = qslm::NoiseModel::pluto_like();
        cfg.noise.shot_noise = shot;
        cfg.noise.total_counts = counts;
    }
    cfg.validate();
    for (const auto& warning : cfg.geometry.validate()) {
        std::cerr << "warning: " << warning << "\n";
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatial-qudit state preparation on a single phase-only SLM (simulator)"};
    app.require_subcommand(1);

    CommonFlags prepare_flags, tomo_flags, sweep_flags;
    double eta = 0.1;

    CLI::App* prepare = app.add_subcommand("prepare", "synthesize a mask and simulate the intensities");
    add_common(prepare, prepare_flags);
    CLI::App* tomo = app.add_subcommand("tomo", "prepare, measure and reconstruct one state");
    add_common(tomo, tomo_flags);
    CLI::App* sweep = app.add_subcommand("sweep", "fidelity sweep over many states, both gratings");
    add_common(sweep, sweep_flags);
    CLI::App* eff = app.add_subcommand("efficiency", "single-SLM vs two-SLM luminous efficiency");
    eff->add_option("--eta", eta, "two-SLM polarization attenuation factor")->capture_default_str();

    try {
        app.parse(argc, argv);

        if (prepare->parsed()) {
            const auto artifacts = qslm::run_prepare(build_config(prepare_flags));
            for (const auto& a : artifacts) std::cout << a << "\n";
        } else if (tomo->parsed()) {
            const auto report = qslm::run_tomography(build_config(tomo_flags));
            std::printf("mode=%s fidelity=%.6f converged=%s\n", report.mode.c_str(),
                        report.fidelity, report.converged ? "yes" : "no");
            if (!report.converged) {
                throw qslm::convergence_error("tomographic reconstruction did not converge");
            }
        } else if (sweep->parsed()) {
            const auto report = qslm::run_sweep(build_config(sweep_flags));
            bool all_converged = true;
            for (const auto& row : report.rows) {
                if (row.stop_reason == "not_converged") all_converged = false;
            }
            for (const auto& a : report.aggregates) {
                std::printf("%s D=%d n=%d mean=%.6f min=%.6f max=%.6f\n", a.grating.c_str(),
                            a.dimension, a.count, a.mean_fidelity, a.min_fidelity, a.max_fidelity);
            }
            if (!all_converged) {
                throw qslm::convergence_error("one or more sweep rows did not converge");
            }
        } else if (eff->parsed()) {
            std::printf("gain=%.10gx\n", qslm::efficiency_comparison(eta));
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const qslm::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const qslm::convergence_error& e) {
        std::cerr << "non-convergence: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
