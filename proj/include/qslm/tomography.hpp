#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "qslm/optics.hpp"
#include "qslm/qudit.hpp"

namespace qslm {

struct Projector {
    CMatrix op;        // Hermitian, idempotent, trace 1
    std::string label; // "near(l)" or "far(xi)"
    int group = 0;     // 0 = near-field arm, 1 = far-field arm

    void validate(double tol = 1e-10) const;
};

// Computational-basis projectors |l><l|, l = 0..D-1.
std::vector<Projector> near_projectors(int dimension);
// Projectors onto |chi_xi> = sum_l e^{i l xi} |l> / sqrt(D).
std::vector<Projector> far_projectors(int dimension, const std::vector<double>& xi_set);
// {2*pi*j / (2D)}, j = 0..2D-1; reduces to the qubit set {j*pi/2} at D = 2.
std::vector<double> default_xi_set(int dimension);

// Fraunhofer positions x_xi = xi * lambda*f / (2*pi*d). Throws config_error
// if a position falls outside [-max_abs_um, max_abs_um] (pass infinity to
// skip the check).
std::vector<double> xi_positions(const std::vector<double>& xi_set, const SlitGeometry& geom,
                                 const OpticsConstants& optics,
                                 double max_abs_um = std::numeric_limits<double>::infinity());

enum class RecordMode { intensity, counts };

struct MeasurementRecord {
    std::vector<Projector> projectors;
    std::vector<double> values; // intensities or counts, same length, >= 0
    RecordMode mode = RecordMode::intensity;
    double total_counts = 0.0; // counts mode only

    void validate() const;
};

std::string record_to_json(const MeasurementRecord& rec);
MeasurementRecord record_from_json(const std::string& text);

// Expected value N*tr(P rho) per projector (the near group then sums to N,
// far samples are independent exposures); Poisson-sampled when poisson is on.
MeasurementRecord simulate_counts(const DensityMatrix& rho, const std::vector<Projector>& projectors,
                                  double total_counts, std::uint64_t seed, bool poisson = true);

struct MleOptions {
    double tol = 1e-10;   // Frobenius norm of the update
    int max_iter = 10000;
};

struct MleResult {
    DensityMatrix rho;
    int iterations = 0;
    std::string stop_reason;  // "converged" | "max_iter" | "stalled"
    double final_loglik = 0.0;
    bool loglik_monotone = true;
    double final_update_norm = 0.0;
};

// Iterative extremal-equation estimator (R rho R), initialized at I/D, with a
// diluted step (R mixed toward the identity, halving) whenever a full step
// would lower the log-likelihood. Group values are normalized within their
// arm before entering the joint likelihood.
MleResult mle_reconstruct(const MeasurementRecord& record, const MleOptions& opts = {});

struct PhaseFitOptions {
    int random_starts = 24;
    std::uint64_t seed = 0x9e3779b97f4a7c15ull;
    double residual_ok = 5e-2; // normalized residual below which the fit counts as converged
    int max_iter_per_start = 400;
};

struct PhaseFitResult {
    std::vector<double> phases; // length D; phases[0] == 0
    double residual = 0.0;      // sum (z - a*model)^2 / sum z^2 over used samples
    bool converged = false;
    int starts_used = 0;
    int samples_used = 0;
};

// Least-squares fit of the D-slit interference model to an envelope-divided
// far-field curve; amplitudes are fixed (near-field square roots), slit-0
// phase pinned to 0. Multi-start Nelder-Mead; ties resolved by smallest
// residual then lexicographically smallest phase vector.
PhaseFitResult fit_phases(const std::vector<double>& amplitudes, const IntensityCurve& curve,
                          const SlitGeometry& geom, const SimGrid& grid,
                          const OpticsConstants& optics, const PhaseFitOptions& opts = {});

// Model curve |sum_l a_l e^{i theta_l} e^{-i l xi(y)}|^2 * envelope(y), the
// analytic prediction used by fit_phases and the prepare artifacts.
IntensityCurve predicted_farfield_curve(const QuditState& state, const SlitGeometry& geom,
                                        const SimGrid& grid, const OpticsConstants& optics,
                                        const std::vector<double>& positions_um);

QuditState pure_from_estimates(const std::vector<double>& amplitudes,
                               const std::vector<double>& phases);

} // namespace qslm
