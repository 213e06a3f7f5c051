#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

#include "qslm/pipeline.hpp"

using namespace qslm;
namespace fs = std::filesystem;

namespace {
constexpr double kPi = std::numbers::pi;

QuditState fig1_state() {
    return QuditState::normalize(
        std::vector<Complex>{Complex(0.67, 0.0), std::polar(1.0, 0.63 * kPi)});
}

ExperimentConfig base_config() {
    ExperimentConfig cfg;
    cfg.out_dir = (fs::temp_directory_path() / "qslm_pipeline_test").string();
    return cfg;
}

// Small geometry so pipeline tests stay fast. The slit period stays well
// above the grating period so the iris still admits > 2 fringe periods.
ExperimentConfig small_config(int d = 2) {
    ExperimentConfig cfg = base_config();
    cfg.geometry.dimension = d;
    cfg.geometry.slit_width_px = 12;
    cfg.geometry.slit_period_px = 48;
    cfg.geometry.slit_length_px = 96;
    cfg.sim.subsampling = 2;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}
} // namespace

TEST_CASE("config JSON: defaults, target parsing and overrides") {
    const std::string text = R"({
      "target": {"amplitudes": [[0.67, 0.0], [-0.3971478906347806, 0.9177546256839811]]},
      "grating": {"kind": "binary"},
      "seed": 42,
      "out_dir": "/tmp/qslm_cfg_test"
    })";
    const ExperimentConfig cfg = config_from_json(text);
    CHECK(cfg.grating.kind == GratingKind::binary);
    CHECK(cfg.seed == 42);
    CHECK(cfg.geometry.slit_period_px == 96);
    CHECK(cfg.sim.subsampling == 4);
    REQUIRE(cfg.target.has_value());
    CHECK(cfg.target->approx_equal_up_to_global_phase(fig1_state(), 1e-6));
}

TEST_CASE("config JSON: bloch target and sweep specs") {
    const ExperimentConfig cfg = config_from_json(R"({
      "target": {"bloch": {"theta": 1.5707963267948966, "phi": 1.5707963267948966}}
    })");
    REQUIRE(cfg.target.has_value());
    CHECK(std::abs(cfg.target->amplitude(1) - Complex(0.0, 1.0 / std::sqrt(2.0))) < 1e-12);

    const ExperimentConfig sweep = config_from_json(R"({
      "sweep": {"kind": "qudit", "count": 24, "dimension": 3},
      "geometry": {"dimension": 3}
    })");
    REQUIRE(sweep.sweep.has_value());
    CHECK(sweep.sweep->count == 24);
    CHECK(sweep.sweep->dimension == 3);
}

TEST_CASE("config JSON: malformed input raises config_error with context") {
    CHECK_THROWS_AS(config_from_json("{ not json"), config_error);
    CHECK_THROWS_AS(config_from_json(R"({"grating": {"kind": "holographic"}})"), config_error);
    CHECK_THROWS_AS(config_from_json(R"({"sweep": {"kind": "bloch"}, "geometry": {"dimension": 3}})"),
                    config_error);
    CHECK_THROWS_AS(config_from_json(R"({"noise": {"preset": "loud"}})"), config_error);
    try {
        config_from_json(R"({"target": {"amplitudes": [[0.0, 0.0], [0.0, 0.0]]}})");
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("normalize") != std::string::npos);
    }
}

TEST_CASE("optical pipeline: near-field powers for the worked example and symmetry cases") {
    ExperimentConfig cfg = base_config();
    const PipelineData fig = run_optical_pipeline(fig1_state(), cfg, GratingSpec::blazed(10), 1);
    CHECK(fig.near_powers[0] == doctest::Approx(0.31).epsilon(0.065)); // +-0.02 absolute
    CHECK(std::abs(fig.near_powers[0] - 0.3098) < 0.02);
    CHECK(std::abs(fig.near_powers[1] - 0.6902) < 0.02);

    const QuditState balanced = QuditState::normalize(std::vector<Complex>{1.0, 1.0});
    const PipelineData bal = run_optical_pipeline(balanced, cfg, GratingSpec::binary(), 1);
    CHECK(std::abs(bal.near_powers[0] - 0.5) < 0.02);
    CHECK(std::abs(bal.near_powers[1] - 0.5) < 0.02);

    ExperimentConfig cfg3 = base_config();
    cfg3.geometry.dimension = 3;
    const QuditState single = QuditState::normalize(std::vector<Complex>{1.0, 0.0, 0.0});
    const PipelineData sgl = run_optical_pipeline(single, cfg3, GratingSpec::blazed(10), 1);
    CHECK(std::abs(sgl.near_powers[0] - 1.0) < 0.02);
    CHECK(std::abs(sgl.near_powers[1]) < 0.02);
    CHECK(std::abs(sgl.near_powers[2]) < 0.02);
}

TEST_CASE("offset Gaussian beam unbalances slit powers per the overlap integrals") {
    ExperimentConfig cfg = base_config();
    cfg.noise.beam_waist_um = 1500.0;
    cfg.noise.beam_offset_y_um = cfg.geometry.slit_period_um() / 2.0;

    // Overlap oracle: integrate |illumination|^2 over each slit band directly.
    const SimGrid grid = make_grid(cfg.geometry, cfg.sim);
    const ComplexField beam = illuminate(cfg.geometry, cfg.sim, cfg.noise, cfg.optics);
    std::vector<double> overlap(2, 0.0);
    for (int l = 0; l < 2; ++l) {
        const int center =
            grid.panel_row0() + l * cfg.geometry.slit_period_px + cfg.geometry.slit_period_px / 2;
        const int r0 = (center - cfg.geometry.slit_width_px / 2) * grid.subsampling;
        const int r1 = r0 + cfg.geometry.slit_width_px * grid.subsampling;
        for (int r = r0; r < r1; ++r) {
            for (int c = grid.panel_col0() * grid.subsampling;
                 c < (grid.panel_col0() + cfg.geometry.slit_length_px) * grid.subsampling; ++c) {
                overlap[static_cast<std::size_t>(l)] += std::norm(beam.at(r, c));
            }
        }
    }
    const double expect0 = overlap[0] / (overlap[0] + overlap[1]);

    const QuditState balanced = QuditState::normalize(std::vector<Complex>{1.0, 1.0});
    const PipelineData data = run_optical_pipeline(balanced, cfg, GratingSpec::blazed(10), 1);
    CHECK(expect0 < 0.45); // the offset genuinely unbalances the arms
    CHECK(data.near_powers[0] == doctest::Approx(expect0).epsilon(0.04));
}

TEST_CASE("reconstruction: joint MLE on the worked qubit example") {
    ExperimentConfig cfg = base_config();
    const PipelineData data = run_optical_pipeline(fig1_state(), cfg, GratingSpec::blazed(10), 3);
    const TomographyReport rep = reconstruct_state(fig1_state(), data, cfg, 3);
    CHECK(rep.mode == "joint");
    CHECK(rep.fidelity >= 0.99);
    CHECK(rep.fitted_phases[1] == doctest::Approx(0.63 * kPi).epsilon(0.02));
    CHECK(std::arg(rep.rho.entries()(1, 0)) == doctest::Approx(0.63 * kPi).epsilon(0.02));
    CHECK(rep.converged);
    // Implied fringe visibility 2*sqrt(p0*p1) matches the analytic 0.9248.
    const double vis = 2.0 * std::sqrt(rep.near_powers[0] * rep.near_powers[1]);
    CHECK(vis == doctest::Approx(0.9248).epsilon(0.02));
}

TEST_CASE("reconstruction: sequential mode at D=3") {
    ExperimentConfig cfg = base_config();
    cfg.geometry.dimension = 3;
    std::mt19937_64 rng(7);
    const QuditState s = haar_random_state(3, rng);
    const PipelineData data = run_optical_pipeline(s, cfg, GratingSpec::blazed(10), 5);
    const TomographyReport rep = reconstruct_state(s, data, cfg, 5);
    CHECK(rep.mode == "sequential");
    CHECK(rep.fidelity >= 0.99);
    CHECK(rep.converged);
}

TEST_CASE("run_prepare writes the four artifacts plus manifest and sidecar") {
    ExperimentConfig cfg = small_config();
    cfg.out_dir = (fs::temp_directory_path() / "qslm_prepare_test").string();
    fs::remove_all(cfg.out_dir);
    cfg.target = fig1_state();

    const auto artifacts = run_prepare(cfg);
    REQUIRE(artifacts.size() == 6);
    for (const auto& a : artifacts) CHECK(fs::exists(a));

    CHECK(slurp(cfg.out_dir + "/mask.pgm").substr(0, 2) == "P5");
    const std::string near = slurp(cfg.out_dir + "/near_field.csv");
    CHECK(near.rfind("position_um,intensity\n", 0) == 0);
    const std::string manifest = slurp(cfg.out_dir + "/manifest.json");
    CHECK(manifest.find("\"command\": \"prepare\"") != std::string::npos);

    // Determinism: byte-identical artifacts on a rerun.
    const std::string far_first = slurp(cfg.out_dir + "/far_field.csv");
    run_prepare(cfg);
    CHECK(slurp(cfg.out_dir + "/far_field.csv") == far_first);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("golden CSV schemas for the small prepare run") {
    ExperimentConfig cfg = small_config();
    cfg.out_dir = (fs::temp_directory_path() / "qslm_golden_run").string();
    fs::remove_all(cfg.out_dir);
    cfg.target = fig1_state();
    run_prepare(cfg);

    for (const char* name : {"near_field.csv", "far_field.csv", "far_field_prediction.csv"}) {
        const std::string got = slurp(cfg.out_dir + "/" + name);
        const std::string want = slurp(std::string(QSLM_GOLDEN_DIR) + "/" + name);
        std::istringstream gs(got), ws(want);
        std::string gline, wline;
        std::getline(gs, gline);
        std::getline(ws, wline);
        CHECK(gline == wline); // header is exact
        int row = 0;
        while (std::getline(ws, wline)) {
            REQUIRE(std::getline(gs, gline));
            double gx, gy, wx, wy;
            REQUIRE(std::sscanf(gline.c_str(), "%lg,%lg", &gx, &gy) == 2);
            REQUIRE(std::sscanf(wline.c_str(), "%lg,%lg", &wx, &wy) == 2);
            CHECK(gx == doctest::Approx(wx).epsilon(1e-9));
            CHECK(gy == doctest::Approx(wy).epsilon(1e-9).scale(1.0));
            ++row;
        }
        CHECK(!std::getline(gs, gline)); // same row count
        CHECK(row >= 2);                 // near_field has D rows, curves many more
    }
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("run_tomography writes a report and reaches the experimental reference") {
    ExperimentConfig cfg = base_config();
    cfg.out_dir = (fs::temp_directory_path() / "qslm_tomo_test").string();
    fs::remove_all(cfg.out_dir);
    cfg.target = fig1_state();
    const TomographyReport rep = run_tomography(cfg);
    CHECK(rep.fidelity >= 0.99);
    CHECK(fs::exists(cfg.out_dir + "/report.json"));
    CHECK(fs::exists(cfg.out_dir + "/rho.json"));
    const DensityMatrix rho = density_from_json(slurp(cfg.out_dir + "/rho.json"));
    rho.validate();
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("run_tomography under the pluto-like preset stays above 0.9") {
    ExperimentConfig cfg = base_config();
    cfg.out_dir = (fs::temp_directory_path() / "qslm_tomo_noise_test").string();
    fs::remove_all(cfg.out_dir);
    cfg.target = fig1_state();
    cfg.noise = NoiseModel::pluto_like();
    const TomographyReport rep = run_tomography(cfg);
    CHECK(rep.fidelity > 0.9);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("run_sweep: tiny Bloch sweep, determinism and aggregate consistency") {
    ExperimentConfig cfg = small_config();
    cfg.out_dir = (fs::temp_directory_path() / "qslm_sweep_test").string();
    fs::remove_all(cfg.out_dir);
    SweepSpec spec;
    spec.kind = SweepSpec::Kind::bloch;
    spec.count = 6;
    cfg.sweep = spec;

    const SweepReport report = run_sweep(cfg);
    REQUIRE(report.rows.size() == 12);
    REQUIRE(report.aggregates.size() == 2);
    for (const auto& a : report.aggregates) {
        CHECK(a.count == 6);
        CHECK(a.mean_fidelity > 0.9);
    }

    // Aggregates recompute exactly from the CSV rows.
    std::ifstream rows_in(cfg.out_dir + "/rows.csv");
    std::string line;
    std::getline(rows_in, line);
    CHECK(line == "state_id,dimension,grating,theta,phi,digest,seed,fidelity,stop_reason,fit_residual");
    std::vector<SweepRow> parsed;
    while (std::getline(rows_in, line)) {
        SweepRow r;
        char grating[16], digest[64], stop[32];
        unsigned long long seed = 0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%d,%15[^,],%lg,%lg,%63[^,],%llu,%lg,%31[^,],%lg",
                            &r.state_id, &r.dimension, grating, &r.theta, &r.phi, digest, &seed,
                            &r.fidelity, stop, &r.fit_residual) == 10);
        r.grating = grating;
        r.seed = seed;
        parsed.push_back(r);
    }
    REQUIRE(parsed.size() == 12);
    const auto re_agg = aggregate_rows(parsed);
    REQUIRE(re_agg.size() == report.aggregates.size());
    for (std::size_t i = 0; i < re_agg.size(); ++i) {
        CHECK(re_agg[i].mean_fidelity == report.aggregates[i].mean_fidelity);
        CHECK(re_agg[i].min_fidelity == report.aggregates[i].min_fidelity);
        CHECK(re_agg[i].max_fidelity == report.aggregates[i].max_fidelity);
    }

    // Byte-identical rerun.
    const std::string rows_first = slurp(cfg.out_dir + "/rows.csv");
    run_sweep(cfg);
    CHECK(slurp(cfg.out_dir + "/rows.csv") == rows_first);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("run_sweep: seeded qudit states are reproducible and phase-complete") {
    ExperimentConfig cfg = small_config(3);
    cfg.out_dir = (fs::temp_directory_path() / "qslm_sweep_qudit_test").string();
    fs::remove_all(cfg.out_dir);
    SweepSpec spec;
    spec.kind = SweepSpec::Kind::qudit;
    spec.count = 2;
    spec.dimension = 3;
    cfg.sweep = spec;
    cfg.seed = 2024;

    const SweepReport a = run_sweep(cfg);
    const SweepReport b = run_sweep(cfg);
    REQUIRE(a.rows.size() == 4);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].digest == b.rows[i].digest);
        CHECK(a.rows[i].fidelity == b.rows[i].fidelity);
        CHECK(a.rows[i].seed == b.rows[i].seed);
    }
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("odd panel sizes and odd subsampling still run and stay accurate") {
    ExperimentConfig cfg = base_config();
    cfg.geometry.slit_width_px = 21;
    cfg.geometry.slit_period_px = 49;
    cfg.geometry.slit_length_px = 511; // partial grating period at the edge
    cfg.sim.subsampling = 3;
    cfg.target = QuditState::normalize(std::vector<Complex>{Complex(0.8, 0.0), Complex(0.0, 0.6)});
    const PipelineData data = run_optical_pipeline(*cfg.target, cfg, GratingSpec::binary(), 1);
    CHECK(data.near_powers[0] == doctest::Approx(0.64).epsilon(0.02));
    const TomographyReport rep = reconstruct_state(*cfg.target, data, cfg, 1);
    CHECK(rep.fidelity >= 0.99);
    CHECK(rep.fitted_phases[1] == doctest::Approx(std::numbers::pi / 2.0).epsilon(0.02));
}

TEST_CASE("geometry warnings flag short gratings") {
    SlitGeometry g;
    g.slit_width_px = 12;
    g.slit_length_px = 97; // aspect ratio fine, but only 9.7 grating periods
    CHECK(g.validate().size() == 1);
    g.slit_length_px = 512;
    CHECK(g.validate().empty());
}

TEST_CASE("a global state phase leaves the measured intensities unchanged") {
    // The slit phases all shift by the same constant while the dead-zone
    // background does not, so equality holds to the (small) level of the
    // background's spectral tail, not to machine precision.
    ExperimentConfig cfg = base_config();
    std::mt19937_64 rng(59);
    const QuditState s = haar_random_state(2, rng);
    const QuditState shifted =
        QuditState::normalize(CVector(std::polar(1.0, 2.1) * s.amplitudes()));
    const PipelineData a = run_optical_pipeline(s, cfg, GratingSpec::blazed(10), 9);
    const PipelineData b = run_optical_pipeline(shifted, cfg, GratingSpec::blazed(10), 9);
    for (int l = 0; l < 2; ++l) {
        CHECK(std::abs(a.near_powers[static_cast<std::size_t>(l)] -
                       b.near_powers[static_cast<std::size_t>(l)]) < 5e-3);
    }
    const TomographyReport ra = reconstruct_state(s, a, cfg, 9);
    const TomographyReport rb = reconstruct_state(shifted, b, cfg, 9);
    CHECK(std::abs(ra.fidelity - rb.fidelity) < 5e-4);
    CHECK(std::abs(ra.fitted_phases[1] - rb.fitted_phases[1]) < 0.01);
}

TEST_CASE("efficiency comparison") {
    CHECK(efficiency_comparison(0.1) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(efficiency_comparison(1.0) == doctest::Approx(1.0));
    CHECK(efficiency_comparison(0.5) == doctest::Approx(2.0));
    CHECK_THROWS_AS(efficiency_comparison(0.0), config_error);
    CHECK_THROWS_AS(efficiency_comparison(1.5), config_error);
    CHECK_THROWS_AS(efficiency_comparison(-0.2), config_error);
}

TEST_CASE("CLI binary: exit codes for success and config errors") {
#ifdef QSLM_CLI_BIN
    const std::string bin = QSLM_CLI_BIN;
    CHECK(std::system((bin + " efficiency --eta 0.1 > /dev/null").c_str()) == 0);

    const std::string cfg_path = (fs::temp_directory_path() / "qslm_cli_bad.json").string();
    {
        std::ofstream out(cfg_path);
        out << R"({"grating": {"kind": "nope"}})";
    }
    const int rc = std::system((bin + " tomo --config " + cfg_path + " 2> /dev/null").c_str());
    CHECK(WEXITSTATUS(rc) == 2);
    fs::remove(cfg_path);
#endif
}

TEST_CASE("derived seeds separate states and gratings") {
    const auto a = derive_seed(1, 0, "binary");
    const auto b = derive_seed(1, 0, "blazed");
    const auto c = derive_seed(1, 1, "binary");
    const auto d = derive_seed(2, 0, "binary");
    CHECK(a != b);
    CHECK(a != c);
    CHECK(a != d);
    CHECK(a == derive_seed(1, 0, "binary"));
}
