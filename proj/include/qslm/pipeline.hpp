#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qslm/mask.hpp"
#include "qslm/optics.hpp"
#include "qslm/qudit.hpp"
#include "qslm/tomography.hpp"

namespace qslm {

enum class TomoMode { automatic, joint, sequential };

// Far-field samples below this envelope fraction are excluded everywhere.
inline constexpr double kEnvelopeCut = 0.05;

struct TomoOptions {
    TomoMode mode = TomoMode::automatic; // joint at D=2, sequential above
    MleOptions mle;
    PhaseFitOptions fit;
};

struct SweepSpec {
    enum class Kind { bloch, qudit } kind = Kind::bloch;
    int count = 561;
    int dimension = 2; // qudit sweeps
};

struct ExperimentConfig {
    std::optional<QuditState> target;
    std::optional<SweepSpec> sweep;
    SlitGeometry geometry;
    GratingSpec grating = GratingSpec::blazed();
    MaskOptions mask;
    NoiseModel noise;
    OpticsConstants optics;
    SimParams sim;
    TomoOptions tomo;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    void validate() const;
};

// Structured-text (JSON) config per docs/FORMATS.md. Unknown keys and type
// mismatches are reported with their JSON path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const std::string& text);

struct PipelineData {
    std::vector<double> near_powers;       // per slit, sum 1
    IntensityCurve far_curve;              // post-iris, vs y
    SimGrid grid;
    double iris_power_fraction = 0.0;
    // Curve samples beyond this |y| sit too close to the iris edge (the disc
    // starts eating the order lobe) and are excluded from tomography.
    double usable_y_max_um = 0.0;
};

// mask -> illuminate -> far field -> iris -> curve + near-field powers.
PipelineData run_optical_pipeline(const QuditState& state, const ExperimentConfig& cfg,
                                  const GratingSpec& grating, std::uint64_t seed);

// Near powers plus one far projector per usable curve sample, each built at
// the sample's exact xi(y); the joint-MLE input.
MeasurementRecord build_optical_record(const PipelineData& data, const ExperimentConfig& cfg);

struct TomographyReport {
    DensityMatrix rho;
    double fidelity = 0.0;
    double fidelity_raw = 0.0; // before the [0,1] clamp
    std::string mode;          // "joint" | "sequential"
    int mle_iterations = 0;
    std::string mle_stop_reason;
    double mle_final_loglik = 0.0;
    std::vector<double> fitted_phases; // sequential / diagnostics; empty if not run
    double fit_residual = 0.0;
    bool converged = true;
    std::vector<double> near_powers;
};

TomographyReport reconstruct_state(const QuditState& target, const PipelineData& data,
                                   const ExperimentConfig& cfg, std::uint64_t seed);

// prepare: mask.pgm + mask.json + near_field.csv + far_field.csv +
// far_field_prediction.csv + manifest.json under cfg.out_dir.
std::vector<std::string> run_prepare(const ExperimentConfig& cfg);

// tomo: full pipeline through reconstruction; writes report.json + rho.json.
TomographyReport run_tomography(const ExperimentConfig& cfg);

struct SweepRow {
    int state_id = 0;
    int dimension = 2;
    std::string grating;
    double theta = 0.0, phi = 0.0; // Bloch sweeps only
    std::string digest;
    std::uint64_t seed = 0;
    double fidelity = 0.0;
    std::string stop_reason;
    double fit_residual = 0.0;
};

struct SweepAggregate {
    std::string grating;
    int dimension = 2;
    int count = 0;
    double mean_fidelity = 0.0;
    double min_fidelity = 0.0;
    double max_fidelity = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::vector<SweepAggregate> aggregates; // recomputable from rows exactly
};

// Paired binary/blazed runs over a Bloch lattice or seeded Haar states, on a
// bounded worker pool; rows stream to rows.csv in state order so an
// interrupted sweep leaves only complete rows.
SweepReport run_sweep(const ExperimentConfig& cfg);

// Aggregates from rows, in the exact summation order used by run_sweep.
std::vector<SweepAggregate> aggregate_rows(const std::vector<SweepRow>& rows);

// Single-SLM vs two-SLM luminous-efficiency ratio, 1/eta. eta in (0, 1].
double efficiency_comparison(double eta);

std::uint64_t derive_seed(std::uint64_t master, int state_id, const std::string& grating);

} // namespace qslm
