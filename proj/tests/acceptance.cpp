// Acceptance suite: one criterion per run_criterion call, one PASS/FAIL line
// each, nonzero exit if any fails. Criterion 6 and 7 dominate the runtime
// (full Bloch and qudit fidelity sweeps on the default grid).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "qslm/pipeline.hpp"

using namespace qslm;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
int g_failures = 0;

void run_criterion(int index, const std::string& name, double budget_s,
                   const std::function<void()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string error;
    try {
        body();
    } catch (const std::exception& e) {
        error = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (error.empty() && elapsed > budget_s) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "runtime %.1f s exceeded the %.0f s budget", elapsed,
                      budget_s);
        error = buf;
    }
    if (error.empty()) {
        std::printf("[PASS] criterion %2d: %s (%.1f s)\n", index, name.c_str(), elapsed);
    } else {
        std::printf("[FAIL] criterion %2d: %s (%.1f s) -- %s\n", index, name.c_str(), elapsed,
                    error.c_str());
        ++g_failures;
    }
    std::fflush(stdout);
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

std::string fresh_dir(const std::string& tag) {
    const std::string dir = (fs::temp_directory_path() / ("qslm_accept_" + tag)).string();
    fs::remove_all(dir);
    return dir;
}

QuditState fig1_state() {
    return QuditState::normalize(
        std::vector<Complex>{Complex(0.67, 0.0), std::polar(1.0, 0.63 * kPi)});
}

// Amplitude-only aperture for the analytic far-field check.
ComplexField aperture_field(const QuditState& state, const SlitGeometry& geom,
                            const SimParams& params) {
    const SimGrid grid = make_grid(geom, params);
    ComplexField f(grid.nx(), grid.ny(), grid.sample_pitch_um(), grid.sample_pitch_um(),
                   Plane::mask, 647.0, 300.0);
    const int s = grid.subsampling;
    for (int l = 0; l < geom.dimension; ++l) {
        const int center = grid.panel_row0() + l * geom.slit_period_px + geom.slit_period_px / 2;
        const int r0 = (center - geom.slit_width_px / 2) * s;
        const int c0 = grid.panel_col0() * s;
        for (int r = r0; r < r0 + geom.slit_width_px * s; ++r) {
            for (int c = c0; c < c0 + geom.slit_length_px * s; ++c) {
                f.at(r, c) = state.amplitude(l);
            }
        }
    }
    return f;
}

void criterion_1_binary_formula() {
    const GratingSpec bin = GratingSpec::binary();
    for (int k = 0; k <= 4; ++k) {
        const double phi0 = kPi * k / 4.0;
        const double dft = order_efficiency(bin, phi0, 1, 64, 10);
        const double closed = 2.0 / (kPi * kPi) * (1.0 - std::cos(phi0));
        require(std::abs(dft - closed) < 1e-3,
                "binary efficiency off the closed form at phi0 = " + std::to_string(phi0));
    }
    const double peak = order_efficiency(bin, kPi, 1, 64, 10);
    require(std::abs(peak - 4.0 / (kPi * kPi)) < 1e-3, "peak binary efficiency is not 4/pi^2");
}

void criterion_2_blazed_quantized() {
    const double eff = order_efficiency(GratingSpec::blazed(10), 2.0 * kPi * 0.9, 1, 8, 10);
    require(std::abs(eff - 0.9675) < 0.005,
            "10-level blazed first-order efficiency = " + std::to_string(eff));
}

void criterion_3_completeness() {
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const GratingSpec spec = (trial % 2 == 0) ? GratingSpec::binary() : GratingSpec::blazed(10);
        const double phi0 = uni(rng) * spec.max_depth();
        double sum = 0.0;
        for (double v : order_spectrum(spec, phi0, 8, 10)) sum += v;
        require(std::abs(sum - 1.0) < 1e-9, "order spectrum sums to " + std::to_string(sum));
    }
}

void criterion_4_analytic_far_field() {
    std::mt19937_64 rng(404);
    SimParams params; // S = 4
    const int dims[10] = {2, 2, 2, 2, 3, 3, 3, 7, 7, 7};
    for (int c = 0; c < 10; ++c) {
        SlitGeometry geom;
        geom.dimension = dims[c];
        const QuditState state = haar_random_state(geom.dimension, rng);
        ComplexField f = aperture_field(state, geom, params);
        far_field(f);
        const auto curve = farfield_intensity_curve(f);

        const double lf = f.lambda_f_um2();
        const double slit_um = geom.slit_width_px * geom.pixel_pitch_um;
        const double d_um = geom.slit_period_um();
        double num = 0.0, den = 0.0, mm = 0.0, sm = 0.0;
        std::vector<double> sim, model;
        for (std::size_t i = 0; i < curve.position_um.size(); ++i) {
            const double y = curve.position_um[i];
            if (std::abs(y) > 3.0 * lf / slit_um) continue;
            const double u = slit_um * y / lf;
            const double sinc = (std::abs(u) < 1e-12) ? 1.0 : std::sin(kPi * u) / (kPi * u);
            Complex interf(0.0, 0.0);
            for (int l = 0; l < geom.dimension; ++l) {
                interf += state.amplitude(l) * std::polar(1.0, -2.0 * kPi * l * d_um * y / lf);
            }
            sim.push_back(curve.intensity[i]);
            model.push_back(sinc * sinc * std::norm(interf));
        }
        for (std::size_t i = 0; i < sim.size(); ++i) {
            mm += model[i] * model[i];
            sm += sim[i] * model[i];
        }
        const double alpha = sm / mm;
        for (std::size_t i = 0; i < sim.size(); ++i) {
            const double r = sim[i] - alpha * model[i];
            num += r * r;
            den += alpha * model[i] * alpha * model[i];
        }
        const double rel = std::sqrt(num / den);
        require(rel < 0.02, "relative L2 error " + std::to_string(rel) + " at D = " +
                                std::to_string(geom.dimension));
    }
}

void criterion_5_end_to_end_qubit() {
    ExperimentConfig cfg;
    cfg.out_dir = fresh_dir("c5");
    cfg.target = fig1_state();
    cfg.grating = GratingSpec::blazed(10);
    const TomographyReport rep = run_tomography(cfg);
    require(rep.fidelity >= 0.99, "fidelity " + std::to_string(rep.fidelity) + " < 0.99");
    require(std::abs(rep.fitted_phases.at(1) - 0.63 * kPi) < 0.02,
            "recovered phase " + std::to_string(rep.fitted_phases.at(1)) + " not within 0.02 of 0.63 pi");
    fs::remove_all(cfg.out_dir);
}

void criterion_6_bloch_sweep() {
    ExperimentConfig cfg;
    cfg.out_dir = fresh_dir("c6");
    SweepSpec spec;
    spec.kind = SweepSpec::Kind::bloch;
    spec.count = 561;
    cfg.sweep = spec;
    const SweepReport report = run_sweep(cfg);
    require(report.aggregates.size() == 2, "expected binary and blazed aggregates");
    for (const auto& a : report.aggregates) {
        require(a.count == 561, "state count per grating");
        require(a.mean_fidelity >= 0.995, std::string(a.grating) + " mean fidelity " +
                                              std::to_string(a.mean_fidelity) + " < 0.995");
        require(a.min_fidelity >= 0.98, std::string(a.grating) + " min fidelity " +
                                            std::to_string(a.min_fidelity) + " < 0.98");
    }
    fs::remove_all(cfg.out_dir);
}

void criterion_7_qudit_sweeps() {
    const int dims[4] = {3, 4, 5, 7};
    const int counts[4] = {24, 70, 25, 94};
    for (int k = 0; k < 4; ++k) {
        ExperimentConfig cfg;
        cfg.geometry.dimension = dims[k];
        SweepSpec spec;
        spec.kind = SweepSpec::Kind::qudit;
        spec.dimension = dims[k];
        spec.count = counts[k];
        cfg.sweep = spec;
        cfg.seed = 20240000 + static_cast<std::uint64_t>(dims[k]);

        cfg.out_dir = fresh_dir("c7_ideal_" + std::to_string(dims[k]));
        const SweepReport ideal = run_sweep(cfg);
        for (const auto& a : ideal.aggregates) {
            require(a.count == counts[k], "state count per grating");
            require(a.mean_fidelity >= 0.99,
                    "D=" + std::to_string(dims[k]) + " " + a.grating + " ideal mean " +
                        std::to_string(a.mean_fidelity) + " < 0.99");
        }
        fs::remove_all(cfg.out_dir);

        cfg.out_dir = fresh_dir("c7_noise_" + std::to_string(dims[k]));
        cfg.noise = NoiseModel::pluto_like();
        const SweepReport noisy = run_sweep(cfg);
        for (const auto& a : noisy.aggregates) {
            require(a.min_fidelity > 0.94, "D=" + std::to_string(dims[k]) + " " + a.grating +
                                               " noisy min " + std::to_string(a.min_fidelity) +
                                               " <= 0.94");
        }
        fs::remove_all(cfg.out_dir);
    }
}

void criterion_8_mle_statistics() {
    std::mt19937_64 rng(808);
    std::vector<double> fids;
    for (int trial = 0; trial < 100; ++trial) {
        const QuditState psi = haar_random_state(2, rng);
        const DensityMatrix truth = density_from_pure(psi);
        std::vector<Projector> projectors = near_projectors(2);
        for (auto& p : far_projectors(2, default_xi_set(2))) projectors.push_back(std::move(p));
        const MeasurementRecord rec =
            simulate_counts(truth, projectors, 1e6, 5000 + static_cast<std::uint64_t>(trial), true);
        const MleResult res = mle_reconstruct(rec);
        require(res.loglik_monotone, "log-likelihood decreased in trial " + std::to_string(trial));
        fids.push_back(fidelity(psi, res.rho));
    }
    std::sort(fids.begin(), fids.end());
    const double median = (fids[49] + fids[50]) / 2.0;
    require(median >= 0.999, "median fidelity " + std::to_string(median) + " < 0.999");
}

void criterion_9_conservation() {
    std::mt19937_64 rng(909);
    for (int trial = 0; trial < 20; ++trial) {
        SlitGeometry geom;
        geom.dimension = 2 + trial % 4;
        const GratingSpec spec =
            (trial % 2 == 0) ? GratingSpec::binary() : GratingSpec::blazed(10);
        SimParams params;
        params.subsampling = 2;
        const PhaseMask mask = synthesize_mask(haar_random_state(geom.dimension, rng), geom, spec);
        ComplexField f = illuminate(geom, params, NoiseModel::ideal(), {});
        const double p0 = f.total_power();
        apply_mask(f, mask, NoiseModel::ideal(), static_cast<std::uint64_t>(trial));
        require(std::abs(f.total_power() - p0) < 1e-12, "mask changed the power");
        far_field(f);
        require(std::abs(f.total_power() - p0) / p0 < 1e-9, "far field changed the power");
        near_field_image(f);
        require(std::abs(f.total_power() - p0) / p0 < 1e-9, "image transform changed the power");
    }
}

void criterion_10_efficiency() {
    require(std::abs(efficiency_comparison(0.1) - 10.0) < 1e-12,
            "efficiency_comparison(0.1) != 10");
}

} // namespace

int main() {
    std::printf("qslm acceptance suite\n");
    run_criterion(1, "binary grating matches the closed-form efficiency", 1.0,
                  criterion_1_binary_formula);
    run_criterion(2, "10-level blazed grating reaches sinc^2(1/10)", 1.0,
                  criterion_2_blazed_quantized);
    run_criterion(3, "order spectrum completeness on 50 random gratings", 5.0,
                  criterion_3_completeness);
    run_criterion(4, "simulated far fields match the analytic D-slit model", 60.0,
                  criterion_4_analytic_far_field);
    run_criterion(5, "ideal end-to-end qubit preparation and tomography", 30.0,
                  criterion_5_end_to_end_qubit);
    run_criterion(6, "ideal Bloch sweep, 561 states, both gratings", 900.0, criterion_6_bloch_sweep);
    run_criterion(7, "ideal and noise-preset qudit sweeps, D in {3,4,5,7}", 1800.0,
                  criterion_7_qudit_sweeps);
    run_criterion(8, "MLE statistics at 1e6 counts over 100 trials", 60.0, criterion_8_mle_statistics);
    run_criterion(9, "power conservation through mask and transforms", 10.0, criterion_9_conservation);
    run_criterion(10, "single-SLM vs two-SLM efficiency gain", 1.0, criterion_10_efficiency);

    if (g_failures == 0) {
        std::printf("all criteria passed\n");
    } else {
        std::printf("%d criterion(s) failed\n", g_failures);
    }
    return g_failures == 0 ? 0 : 1;
}
