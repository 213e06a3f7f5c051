#include "qslm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace qslm {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw config_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw config_error("failed writing " + path);
}

} // namespace

void ExperimentConfig::validate() const {
    geometry.validate();
    grating.validate();
    if (sim.subsampling < 1) throw config_error("sim.subsampling must be >= 1");
    if (sim.iris_radius_fraction <= 0.0 || sim.iris_radius_fraction >= 1.0) {
        throw config_error("sim.iris_radius_fraction must be in (0, 1)");
    }
    if (optics.wavelength_nm <= 0.0 || optics.focal_mm <= 0.0) {
        throw config_error("optics constants must be positive");
    }
    if (target && target->dimension() != geometry.dimension) {
        throw config_error("target state dimension does not match geometry dimension");
    }
    if (sweep) {
        if (sweep->count < 1) throw config_error("sweep.count must be >= 1");
        if (sweep->kind == SweepSpec::Kind::bloch && geometry.dimension != 2) {
            throw config_error("Bloch sweeps require dimension 2");
        }
        if (sweep->kind == SweepSpec::Kind::qudit && sweep->dimension != geometry.dimension) {
            throw config_error("sweep.dimension does not match geometry dimension");
        }
    }
    if (noise.shot_noise && noise.total_counts < 1.0) {
        throw config_error("noise.shot_noise needs total counts >= 1");
    }
}

namespace {

SlitGeometry geometry_from_json(const json& j) {
    SlitGeometry g;
    g.dimension = j.value("dimension", g.dimension);
    g.slit_width_px = j.value("slit_width_px", g.slit_width_px);
    g.slit_period_px = j.value("slit_period_px", g.slit_period_px);
    g.slit_length_px = j.value("slit_length_px", g.slit_length_px);
    g.grating_period_px = j.value("grating_period_px", g.grating_period_px);
    g.pixel_pitch_um = j.value("pixel_pitch_um", g.pixel_pitch_um);
    return g;
}

GratingSpec grating_from_json(const json& j) {
    const std::string kind = j.value("kind", "blazed");
    if (kind == "binary") return GratingSpec::binary();
    if (kind == "blazed") return GratingSpec::blazed(j.value("levels", 10));
    throw config_error("grating.kind must be binary or blazed, got " + kind);
}

NoiseModel noise_from_json(const json& j) {
    NoiseModel n;
    const std::string preset = j.value("preset", "off");
    if (preset == "pluto-like") {
        n = NoiseModel::pluto_like();
    } else if (preset != "off") {
        throw config_error("noise.preset must be off or pluto-like, got " + preset);
    }
    if (j.contains("phase_jitter_sigma")) {
        const auto& arr = j.at("phase_jitter_sigma");
        if (arr.size() != 256) throw config_error("noise.phase_jitter_sigma must have 256 entries");
        for (std::size_t g = 0; g < 256; ++g) {
            n.phase_jitter_sigma[g] = arr[g].get<double>();
            if (n.phase_jitter_sigma[g] < 0.0) throw config_error("jitter sigma must be >= 0");
        }
    }
    if (j.contains("beam_waist_um")) {
        n.beam_waist_um = j.at("beam_waist_um").get<double>();
    }
    if (j.contains("beam_offset_um")) {
        n.beam_offset_x_um = j.at("beam_offset_um").at(0).get<double>();
        n.beam_offset_y_um = j.at("beam_offset_um").at(1).get<double>();
    }
    if (j.contains("shot_noise_counts")) {
        n.shot_noise = true;
        n.total_counts = j.at("shot_noise_counts").get<double>();
    }
    return n;
}

} // namespace

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }
    try {
        ExperimentConfig cfg;
        if (j.contains("geometry")) cfg.geometry = geometry_from_json(j.at("geometry"));
        if (j.contains("grating")) cfg.grating = grating_from_json(j.at("grating"));
        if (j.contains("mask")) cfg.mask.background_phase = j.at("mask").value("background_phase", 0.0);
        if (j.contains("noise")) cfg.noise = noise_from_json(j.at("noise"));
        if (j.contains("optics")) {
            cfg.optics.wavelength_nm = j.at("optics").value("wavelength_nm", cfg.optics.wavelength_nm);
            cfg.optics.focal_mm = j.at("optics").value("focal_mm", cfg.optics.focal_mm);
        }
        if (j.contains("sim")) {
            const auto& s = j.at("sim");
            cfg.sim.subsampling = s.value("subsampling", cfg.sim.subsampling);
            cfg.sim.guard_x = s.value("guard_x", cfg.sim.guard_x);
            cfg.sim.guard_y = s.value("guard_y", cfg.sim.guard_y);
            cfg.sim.iris_radius_fraction = s.value("iris_radius_fraction", cfg.sim.iris_radius_fraction);
        }
        if (j.contains("tomography")) {
            const auto& t = j.at("tomography");
            const std::string mode = t.value("mode", "auto");
            if (mode == "auto") cfg.tomo.mode = TomoMode::automatic;
            else if (mode == "joint") cfg.tomo.mode = TomoMode::joint;
            else if (mode == "sequential") cfg.tomo.mode = TomoMode::sequential;
            else throw config_error("tomography.mode must be auto, joint or sequential");
            cfg.tomo.mle.tol = t.value("tol", cfg.tomo.mle.tol);
            cfg.tomo.mle.max_iter = t.value("max_iter", cfg.tomo.mle.max_iter);
            cfg.tomo.fit.random_starts = t.value("random_starts", cfg.tomo.fit.random_starts);
        }
        if (j.contains("target")) {
            const auto& t = j.at("target");
            if (t.contains("bloch")) {
                BlochPoint p{t.at("bloch").at("theta").get<double>(),
                             t.at("bloch").at("phi").get<double>()};
                cfg.target = bloch_to_state(p);
            } else {
                const auto& amps = t.at("amplitudes");
                std::vector<Complex> raw;
                for (const auto& a : amps) raw.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
                cfg.target = QuditState::normalize(raw);
            }
        }
        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            SweepSpec spec;
            const std::string kind = s.value("kind", "bloch");
            if (kind == "bloch") spec.kind = SweepSpec::Kind::bloch;
            else if (kind == "qudit") spec.kind = SweepSpec::Kind::qudit;
            else throw config_error("sweep.kind must be bloch or qudit");
            spec.count = s.value("count", spec.count);
            spec.dimension = s.value("dimension", spec.dimension);
            if (spec.kind == SweepSpec::Kind::bloch) spec.dimension = 2;
            cfg.sweep = spec;
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        // e.what() carries the JSON pointer of the offending key.
        throw config_error(std::string("config error: ") + e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::uint64_t derive_seed(std::uint64_t master, int state_id, const std::string& grating) {
    std::uint64_t h = fnv1a64(&master, sizeof(master));
    h = fnv1a64(&state_id, sizeof(state_id), h);
    h = fnv1a64(grating.data(), grating.size(), h);
    return h;
}

PipelineData run_optical_pipeline(const QuditState& state, const ExperimentConfig& cfg,
                                  const GratingSpec& grating, std::uint64_t seed) {
    const PhaseMask mask = synthesize_mask(state, cfg.geometry, grating, cfg.mask);

    PipelineData data;
    data.grid = make_grid(cfg.geometry, cfg.sim);

    ComplexField field = illuminate(cfg.geometry, cfg.sim, cfg.noise, cfg.optics);
    apply_mask(field, mask, cfg.noise, derive_seed(seed, 0, "jitter"));
    far_field(field);
    const double power_in = field.total_power();
    const IrisSpec iris = IrisSpec::order_one(cfg.geometry, cfg.optics, cfg.sim.iris_radius_fraction);
    iris_filter(field, iris);
    data.iris_power_fraction = field.total_power() / power_in;
    data.usable_y_max_um = 0.8 * iris.radius_um;
    data.far_curve = farfield_intensity_curve(field);
    near_field_image(field);
    data.near_powers = slit_powers(field, cfg.geometry, data.grid);

    if (cfg.noise.shot_noise) {
        std::mt19937_64 rng(derive_seed(seed, 1, "shot"));
        data.near_powers = poissonize(data.near_powers, cfg.noise.total_counts, rng);
        double tot = 0.0;
        for (double v : data.near_powers) tot += v;
        if (!(tot > 0.0)) throw convergence_error("shot noise removed all near-field counts");
        for (double& v : data.near_powers) v /= tot;
        data.far_curve.intensity =
            poissonize(data.far_curve.intensity, cfg.noise.total_counts, rng);
    }
    return data;
}

MeasurementRecord build_optical_record(const PipelineData& data, const ExperimentConfig& cfg) {
    MeasurementRecord rec;
    rec.mode = RecordMode::intensity;
    const int d = cfg.geometry.dimension;
    const auto near = near_projectors(d);
    for (int l = 0; l < d; ++l) {
        rec.projectors.push_back(near[static_cast<std::size_t>(l)]);
        rec.values.push_back(data.near_powers[static_cast<std::size_t>(l)]);
    }
    const double lf = cfg.optics.wavelength_nm * 1e-3 * cfg.optics.focal_mm * 1e3;
    std::vector<double> xis;
    std::vector<double> vals;
    for (std::size_t i = 0; i < data.far_curve.position_um.size(); ++i) {
        const double y = data.far_curve.position_um[i];
        if (std::abs(y) > data.usable_y_max_um) continue;
        const double env = slit_envelope_intensity(cfg.geometry, data.grid, lf, y);
        if (env < kEnvelopeCut) continue;
        xis.push_back(kTwoPi * cfg.geometry.slit_period_um() * y / lf);
        vals.push_back(data.far_curve.intensity[i] / env);
    }
    const auto far = far_projectors(d, xis);
    for (std::size_t k = 0; k < far.size(); ++k) {
        rec.projectors.push_back(far[k]);
        rec.values.push_back(vals[k]);
    }
    return rec;
}

TomographyReport reconstruct_state(const QuditState& target, const PipelineData& data,
                                   const ExperimentConfig& cfg, std::uint64_t seed) {
    const int d = cfg.geometry.dimension;
    TomoMode mode = cfg.tomo.mode;
    if (mode == TomoMode::automatic) {
        mode = (d == 2) ? TomoMode::joint : TomoMode::sequential;
    }

    std::vector<double> amps(static_cast<std::size_t>(d));
    for (int l = 0; l < d; ++l) {
        amps[static_cast<std::size_t>(l)] = std::sqrt(data.near_powers[static_cast<std::size_t>(l)]);
    }

    PhaseFitOptions fit_opts = cfg.tomo.fit;
    fit_opts.seed = derive_seed(seed, 2, "fit");
    IntensityCurve usable;
    for (std::size_t i = 0; i < data.far_curve.position_um.size(); ++i) {
        if (std::abs(data.far_curve.position_um[i]) > data.usable_y_max_um) continue;
        usable.position_um.push_back(data.far_curve.position_um[i]);
        usable.intensity.push_back(data.far_curve.intensity[i]);
    }
    const PhaseFitResult fit =
        fit_phases(amps, usable, cfg.geometry, data.grid, cfg.optics, fit_opts);

    TomographyReport report{density_from_pure(pure_from_estimates(amps, fit.phases)),
                            0.0, 0.0, "", 0, "", 0.0, fit.phases, fit.residual, true,
                            data.near_powers};

    if (mode == TomoMode::joint) {
        const MeasurementRecord rec = build_optical_record(data, cfg);
        const MleResult mle = mle_reconstruct(rec, cfg.tomo.mle);
        report.rho = mle.rho;
        report.mode = "joint";
        report.mle_iterations = mle.iterations;
        report.mle_stop_reason = mle.stop_reason;
        report.mle_final_loglik = mle.final_loglik;
        // Near-pure optima make the R rho R tail crawl; a max_iter stop with
        // the update already far below 1e3*tol is convergence in practice.
        const bool mle_ok = mle.stop_reason == "converged" ||
                            (mle.stop_reason == "max_iter" &&
                             mle.final_update_norm < 1e3 * cfg.tomo.mle.tol);
        report.converged = mle_ok && fit.converged;
    } else {
        report.mode = "sequential";
        report.converged = fit.converged;
    }
    report.fidelity_raw = fidelity_unclamped(target, report.rho);
    report.fidelity = fidelity(target, report.rho);
    return report;
}

std::vector<std::string> run_prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!cfg.target) throw config_error("prepare needs a target state in the config");
    ensure_dir(cfg.out_dir);
    const QuditState& state = *cfg.target;

    std::vector<std::string> artifacts;
    const PhaseMask mask = synthesize_mask(state, cfg.geometry, cfg.grating, cfg.mask);

    json manifest;
    manifest["command"] = "prepare";
    manifest["grating"] = cfg.grating.name();
    manifest["state_digest"] = state.digest();
    manifest["state"] = json::parse(state_to_json(state));
    manifest["seed"] = cfg.seed;
    const std::string manifest_path = cfg.out_dir + "/manifest.json";
    write_text(manifest_path, manifest.dump(2));
    artifacts.push_back(manifest_path);

    const std::string pgm_path = cfg.out_dir + "/mask.pgm";
    write_pgm(render_mask_gray(mask), pgm_path);
    artifacts.push_back(pgm_path);
    const std::string meta_path = cfg.out_dir + "/mask.json";
    write_text(meta_path, mask_metadata_json(mask));
    artifacts.push_back(meta_path);

    const PipelineData data = run_optical_pipeline(state, cfg, cfg.grating, cfg.seed);

    IntensityCurve near_curve; // slit powers as a labeled curve: slit index vs power
    for (std::size_t l = 0; l < data.near_powers.size(); ++l) {
        near_curve.position_um.push_back(
            (static_cast<double>(l) - (cfg.geometry.dimension - 1) / 2.0) *
            cfg.geometry.slit_period_um());
        near_curve.intensity.push_back(data.near_powers[l]);
    }
    const std::string near_path = cfg.out_dir + "/near_field.csv";
    write_curve_csv(near_curve, near_path);
    artifacts.push_back(near_path);

    const std::string far_path = cfg.out_dir + "/far_field.csv";
    write_curve_csv(data.far_curve, far_path);
    artifacts.push_back(far_path);

    const IntensityCurve prediction = predicted_farfield_curve(
        state, cfg.geometry, data.grid, cfg.optics, data.far_curve.position_um);
    const std::string pred_path = cfg.out_dir + "/far_field_prediction.csv";
    write_curve_csv(prediction, pred_path);
    artifacts.push_back(pred_path);

    return artifacts;
}

TomographyReport run_tomography(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!cfg.target) throw config_error("tomo needs a target state in the config");
    ensure_dir(cfg.out_dir);

    const PipelineData data = run_optical_pipeline(*cfg.target, cfg, cfg.grating, cfg.seed);
    const TomographyReport report =
        reconstruct_state(*cfg.target, data, cfg, cfg.seed);

    json j;
    j["command"] = "tomo";
    j["grating"] = cfg.grating.name();
    j["mode"] = report.mode;
    j["fidelity"] = report.fidelity;
    j["fidelity_raw"] = report.fidelity_raw;
    j["mle_iterations"] = report.mle_iterations;
    j["mle_stop_reason"] = report.mle_stop_reason;
    j["mle_final_loglik"] = report.mle_final_loglik;
    j["fitted_phases_rad"] = report.fitted_phases;
    j["fit_residual"] = report.fit_residual;
    j["converged"] = report.converged;
    j["near_powers"] = report.near_powers;
    j["iris_power_fraction"] = data.iris_power_fraction;
    j["seed"] = cfg.seed;
    write_text(cfg.out_dir + "/report.json", j.dump(2));
    write_text(cfg.out_dir + "/rho.json", density_to_json(report.rho));
    write_text(cfg.out_dir + "/record.json", record_to_json(build_optical_record(data, cfg)));
    return report;
}

namespace {

std::string row_csv(const SweepRow& r) {
    std::string line;
    line += std::to_string(r.state_id) + ",";
    line += std::to_string(r.dimension) + ",";
    line += r.grating + ",";
    line += fmt(r.theta) + ",";
    line += fmt(r.phi) + ",";
    line += r.digest + ",";
    line += std::to_string(r.seed) + ",";
    line += fmt(r.fidelity) + ",";
    line += r.stop_reason + ",";
    line += fmt(r.fit_residual) + "\n";
    return line;
}

constexpr const char* kRowHeader =
    "state_id,dimension,grating,theta,phi,digest,seed,fidelity,stop_reason,fit_residual\n";

} // namespace

std::vector<SweepAggregate> aggregate_rows(const std::vector<SweepRow>& rows) {
    // Fixed grating order, ascending dimension; means accumulate in row order
    // so a recomputation from the CSV reproduces them bit for bit.
    std::vector<SweepAggregate> aggs;
    for (const char* kind : {"binary", "blazed"}) {
        std::vector<int> dims;
        for (const SweepRow& r : rows) {
            if (r.grating == kind && std::find(dims.begin(), dims.end(), r.dimension) == dims.end()) {
                dims.push_back(r.dimension);
            }
        }
        std::sort(dims.begin(), dims.end());
        for (int d : dims) {
            SweepAggregate a;
            a.grating = kind;
            a.dimension = d;
            double sum = 0.0;
            a.min_fidelity = 1.0;
            a.max_fidelity = 0.0;
            for (const SweepRow& r : rows) {
                if (r.grating != kind || r.dimension != d) continue;
                ++a.count;
                sum += r.fidelity;
                a.min_fidelity = std::min(a.min_fidelity, r.fidelity);
                a.max_fidelity = std::max(a.max_fidelity, r.fidelity);
            }
            a.mean_fidelity = sum / a.count;
            aggs.push_back(a);
        }
    }
    return aggs;
}

SweepReport run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!cfg.sweep) throw config_error("sweep needs a sweep spec in the config");
    ensure_dir(cfg.out_dir);
    const SweepSpec& spec = *cfg.sweep;

    // State list first; sweeps always pair both grating kinds per state.
    std::vector<QuditState> states;
    std::vector<BlochPoint> bloch;
    if (spec.kind == SweepSpec::Kind::bloch) {
        bloch = sample_bloch_sphere(spec.count);
        for (const BlochPoint& p : bloch) states.push_back(bloch_to_state(p));
    } else {
        for (int i = 0; i < spec.count; ++i) {
            std::mt19937_64 rng(derive_seed(cfg.seed, i, "state"));
            states.push_back(haar_random_state(spec.dimension, rng));
        }
    }
    const std::vector<GratingSpec> gratings = {GratingSpec::binary(), GratingSpec::blazed()};

    json manifest;
    manifest["command"] = "sweep";
    manifest["kind"] = spec.kind == SweepSpec::Kind::bloch ? "bloch" : "qudit";
    manifest["count"] = spec.count;
    manifest["dimension"] = spec.dimension;
    manifest["seed"] = cfg.seed;
    manifest["bloch_sampling_scheme"] = kBlochSamplingScheme;
    manifest["gratings"] = {"binary", "blazed"};
    write_text(cfg.out_dir + "/manifest.json", manifest.dump(2));

    const int n_tasks = static_cast<int>(states.size()) * 2;
    std::vector<SweepRow> rows(static_cast<std::size_t>(n_tasks));
    std::vector<char> done(static_cast<std::size_t>(n_tasks), 0);

    std::ofstream rows_out(cfg.out_dir + "/rows.csv");
    if (!rows_out) throw config_error("cannot open rows.csv for writing");
    rows_out << kRowHeader;
    rows_out.flush();

    std::mutex mu;
    int next_flush = 0;
    std::exception_ptr first_error;

    auto run_task = [&](int task) {
        const int state_id = task / 2;
        const GratingSpec& grating = gratings[static_cast<std::size_t>(task % 2)];
        const QuditState& state = states[static_cast<std::size_t>(state_id)];
        const std::uint64_t seed = derive_seed(cfg.seed, state_id, grating.name());

        SweepRow row;
        row.state_id = state_id;
        row.dimension = state.dimension();
        row.grating = grating.name();
        if (spec.kind == SweepSpec::Kind::bloch) {
            row.theta = bloch[static_cast<std::size_t>(state_id)].theta;
            row.phi = bloch[static_cast<std::size_t>(state_id)].phi;
        }
        row.digest = state.digest();
        row.seed = seed;

        const PipelineData data = run_optical_pipeline(state, cfg, grating, seed);
        const TomographyReport rep = reconstruct_state(state, data, cfg, seed);
        row.fidelity = rep.fidelity;
        row.stop_reason = rep.converged ? (rep.mode == "joint" ? rep.mle_stop_reason : "fit")
                                        : "not_converged";
        row.fit_residual = rep.fit_residual;

        std::lock_guard<std::mutex> lock(mu);
        rows[static_cast<std::size_t>(task)] = std::move(row);
        done[static_cast<std::size_t>(task)] = 1;
        // Stream complete rows in task order: an interrupted sweep leaves a
        // valid prefix and a finished one is byte-deterministic.
        while (next_flush < n_tasks && done[static_cast<std::size_t>(next_flush)]) {
            rows_out << row_csv(rows[static_cast<std::size_t>(next_flush)]);
            rows_out.flush();
            ++next_flush;
        }
    };

    const unsigned hw = std::thread::hardware_concurrency();
    const int workers = static_cast<int>(std::clamp(hw, 1u, 8u));
    std::atomic<int> cursor{0};
    auto worker = [&]() {
        for (;;) {
            const int task = cursor.fetch_add(1);
            if (task >= n_tasks) return;
            try {
                run_task(task);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    SweepReport report;
    report.rows = std::move(rows);
    report.aggregates = aggregate_rows(report.rows);

    std::ofstream agg_out(cfg.out_dir + "/aggregates.csv");
    if (!agg_out) throw config_error("cannot open aggregates.csv for writing");
    agg_out << "grating,dimension,count,mean_fidelity,min_fidelity,max_fidelity\n";
    for (const SweepAggregate& a : report.aggregates) {
        agg_out << a.grating << "," << a.dimension << "," << a.count << "," << fmt(a.mean_fidelity)
                << "," << fmt(a.min_fidelity) << "," << fmt(a.max_fidelity) << "\n";
    }
    return report;
}

double efficiency_comparison(double eta) {
    if (!(eta > 0.0) || eta > 1.0) {
        throw config_error("eta must lie in (0, 1]");
    }
    return 1.0 / eta;
}

} // namespace qslm
