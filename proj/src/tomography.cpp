#include "qslm/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <nlohmann/json.hpp>

namespace qslm {

using json = nlohmann::json;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_pm_pi(double a) {
    a = std::fmod(a, kTwoPi);
    if (a <= -std::numbers::pi) a += kTwoPi;
    if (a > std::numbers::pi) a -= kTwoPi;
    return a;
}
} // namespace

void Projector::validate(double tol) const {
    if (op.rows() != op.cols()) throw config_error("projector must be square");
    if ((op - op.adjoint()).cwiseAbs().maxCoeff() > tol) {
        throw config_error("projector is not Hermitian");
    }
    if ((op * op - op).cwiseAbs().maxCoeff() > tol) {
        throw config_error("projector is not idempotent");
    }
    if (std::abs(op.trace().real() - 1.0) > tol) {
        throw config_error("projector trace differs from 1");
    }
}

std::vector<Projector> near_projectors(int dimension) {
    if (dimension < 2) throw config_error("near_projectors needs dimension >= 2");
    std::vector<Projector> out;
    out.reserve(static_cast<std::size_t>(dimension));
    for (int l = 0; l < dimension; ++l) {
        Projector p;
        p.op = CMatrix::Zero(dimension, dimension);
        p.op(l, l) = 1.0;
        p.label = "near(" + std::to_string(l) + ")";
        p.group = 0;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Projector> far_projectors(int dimension, const std::vector<double>& xi_set) {
    if (dimension < 2) throw config_error("far_projectors needs dimension >= 2");
    if (xi_set.empty()) throw config_error("far_projectors needs a nonempty xi set");
    std::vector<Projector> out;
    out.reserve(xi_set.size());
    for (double xi : xi_set) {
        CVector chi(dimension);
        for (int l = 0; l < dimension; ++l) {
            chi(l) = std::polar(1.0 / std::sqrt(static_cast<double>(dimension)), l * xi);
        }
        Projector p;
        p.op = chi * chi.adjoint();
        char buf[48];
        std::snprintf(buf, sizeof(buf), "far(%.17g)", xi); // label is the exact xi
        p.label = buf;
        p.group = 1;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<double> default_xi_set(int dimension) {
    if (dimension < 2) throw config_error("default_xi_set needs dimension >= 2");
    std::vector<double> xi(static_cast<std::size_t>(2 * dimension));
    for (int j = 0; j < 2 * dimension; ++j) {
        xi[static_cast<std::size_t>(j)] = kTwoPi * j / (2.0 * dimension);
    }
    return xi;
}

std::vector<double> xi_positions(const std::vector<double>& xi_set, const SlitGeometry& geom,
                                 const OpticsConstants& optics, double max_abs_um) {
    const double lf = optics.wavelength_nm * 1e-3 * optics.focal_mm * 1e3;
    std::vector<double> pos;
    pos.reserve(xi_set.size());
    for (double xi : xi_set) {
        const double x = xi * lf / (kTwoPi * geom.slit_period_um());
        if (std::abs(x) > max_abs_um) {
            throw config_error("xi position " + std::to_string(x) +
                               " um lies outside the simulated far field");
        }
        pos.push_back(x);
    }
    return pos;
}

void MeasurementRecord::validate() const {
    if (projectors.empty() || projectors.size() != values.size()) {
        throw config_error("measurement record must pair projectors with values");
    }
    double total = 0.0;
    for (double v : values) {
        if (v < 0.0 || !std::isfinite(v)) throw config_error("record values must be >= 0");
        total += v;
    }
    if (!(total > 0.0)) throw config_error("record has all-zero values");
}

MeasurementRecord simulate_counts(const DensityMatrix& rho, const std::vector<Projector>& projectors,
                                  double total_counts, std::uint64_t seed, bool poisson) {
    if (total_counts < 1.0) throw config_error("simulate_counts needs total_counts >= 1");
    MeasurementRecord rec;
    rec.projectors = projectors;
    rec.mode = poisson ? RecordMode::counts : RecordMode::intensity;
    rec.total_counts = total_counts;
    rec.values.reserve(projectors.size());
    std::mt19937_64 rng(seed);
    for (const Projector& p : projectors) {
        const double expect =
            total_counts * std::max(0.0, (p.op * rho.entries()).trace().real());
        if (poisson && expect > 0.0) {
            std::poisson_distribution<long long> dist(expect);
            rec.values.push_back(static_cast<double>(dist(rng)));
        } else {
            rec.values.push_back(expect);
        }
    }
    return rec;
}

namespace {

struct PreparedRecord {
    std::vector<const Projector*> projectors;
    std::vector<double> freq; // group-normalized weights
};

// Normalize values within each arm: group g contributes weight
// tr(sum_k Pi_k)/D (its expected probability mass for balanced sets), split
// across its entries in proportion to the measured values.
PreparedRecord prepare_record(const MeasurementRecord& record) {
    record.validate();
    std::map<int, double> group_sum;
    std::map<int, double> group_tr;
    for (std::size_t k = 0; k < record.values.size(); ++k) {
        const Projector& p = record.projectors[k];
        group_sum[p.group] += record.values[k];
        group_tr[p.group] += p.op.trace().real();
    }
    const int d = static_cast<int>(record.projectors.front().op.rows());
    PreparedRecord out;
    for (std::size_t k = 0; k < record.values.size(); ++k) {
        const Projector& p = record.projectors[k];
        if (!(group_sum[p.group] > 0.0)) continue; // dead arm carries no information
        const double w = group_tr[p.group] / d;
        out.projectors.push_back(&p);
        out.freq.push_back(w * record.values[k] / group_sum[p.group]);
    }
    if (out.projectors.empty()) throw config_error("record has no usable values");
    return out;
}

double log_likelihood(const PreparedRecord& rec, const CMatrix& rho) {
    double ll = 0.0;
    for (std::size_t k = 0; k < rec.projectors.size(); ++k) {
        if (rec.freq[k] <= 0.0) continue;
        const double p = std::max((rec.projectors[k]->op * rho).trace().real(), 1e-300);
        ll += rec.freq[k] * std::log(p);
    }
    return ll;
}

} // namespace

MleResult mle_reconstruct(const MeasurementRecord& record, const MleOptions& opts) {
    const PreparedRecord rec = prepare_record(record);
    const int d = static_cast<int>(rec.projectors.front()->op.rows());

    CMatrix rho = CMatrix::Identity(d, d) / static_cast<double>(d);
    double ll = log_likelihood(rec, rho);
    bool monotone = true;
    std::string stop = "max_iter";
    int iters = 0;
    double update_norm = 0.0;

    for (int it = 0; it < opts.max_iter; ++it) {
        iters = it + 1;
        CMatrix R = CMatrix::Zero(d, d);
        for (std::size_t k = 0; k < rec.projectors.size(); ++k) {
            if (rec.freq[k] <= 0.0) continue;
            const double p = std::max((rec.projectors[k]->op * rho).trace().real(), 1e-300);
            R += (rec.freq[k] / p) * rec.projectors[k]->op;
        }

        // Full R rho R step, diluted toward the identity whenever rounding
        // would push the log-likelihood downhill.
        CMatrix next;
        double ll_next = 0.0;
        bool accepted = false;
        double t = 1.0;
        const CMatrix eye = CMatrix::Identity(d, d);
        for (int attempt = 0; attempt < 40; ++attempt, t *= 0.5) {
            const CMatrix Rt = (1.0 - t) * eye + t * R;
            CMatrix cand = Rt * rho * Rt;
            cand = (cand + cand.adjoint()) / 2.0; // keep Hermitian against rounding
            const double tr = cand.trace().real();
            if (!(tr > 0.0)) continue;
            cand /= tr;
            const double cand_ll = log_likelihood(rec, cand);
            if (cand_ll + 1e-12 * (std::abs(ll) + 1.0) >= ll) {
                next = std::move(cand);
                ll_next = cand_ll;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            stop = "stalled";
            break;
        }
        if (ll_next < ll - 1e-9 * (std::abs(ll) + 1.0)) monotone = false;
        update_norm = (next - rho).norm();
        rho = std::move(next);
        ll = std::max(ll, ll_next);
        if (update_norm < opts.tol) {
            stop = "converged";
            break;
        }
    }

    MleResult result{DensityMatrix((rho + rho.adjoint()) / 2.0),
                     iters,
                     stop,
                     ll,
                     monotone,
                     update_norm};
    return result;
}

namespace {

struct FitData {
    std::vector<double> xi;
    std::vector<double> z; // envelope-divided intensities
    double z_sq_sum = 0.0;
    std::vector<int> slits;       // indices of the light-carrying slits
    std::vector<double> slit_mag; // their amplitudes
};

// theta holds one phase per light-carrying slit, theta[0] pinned to zero.
double fit_residual(const FitData& data, const std::vector<double>& theta) {
    const std::size_t n = data.xi.size();
    const std::size_t k = data.slits.size();
    double mm = 0.0, zm = 0.0;
    std::vector<double> model(n);
    for (std::size_t i = 0; i < n; ++i) {
        Complex a(0.0, 0.0);
        for (std::size_t s = 0; s < k; ++s) {
            a += std::polar(data.slit_mag[s], theta[s] - data.slits[s] * data.xi[i]);
        }
        model[i] = std::norm(a);
        mm += model[i] * model[i];
        zm += data.z[i] * model[i];
    }
    const double alpha = mm > 0.0 ? std::max(zm / mm, 0.0) : 0.0;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = data.z[i] - alpha * model[i];
        rss += r * r;
    }
    return rss / data.z_sq_sum;
}

// Nelder-Mead over the free phases (first light-carrying slit pinned to zero).
std::pair<std::vector<double>, double> nelder_mead(const FitData& data,
                                                   std::vector<double> start, int max_iter) {
    const int n = static_cast<int>(start.size()); // free parameters
    auto eval = [&](const std::vector<double>& free) {
        std::vector<double> theta(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i) theta[static_cast<std::size_t>(i) + 1] = free[static_cast<std::size_t>(i)];
        return fit_residual(data, theta);
    };

    std::vector<std::vector<double>> simplex(static_cast<std::size_t>(n) + 1, start);
    for (int i = 0; i < n; ++i) simplex[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(i)] += 0.5;
    std::vector<double> value(simplex.size());
    for (std::size_t i = 0; i < simplex.size(); ++i) value[i] = eval(simplex[i]);

    for (int it = 0; it < max_iter; ++it) {
        std::vector<std::size_t> order(simplex.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
        if (value[worst] - value[best] < 1e-14) break;

        std::vector<double> centroid(static_cast<std::size_t>(n), 0.0);
        for (std::size_t i : order) {
            if (i == worst) continue;
            for (int k = 0; k < n; ++k) centroid[static_cast<std::size_t>(k)] += simplex[i][static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < n; ++k) centroid[static_cast<std::size_t>(k)] /= n;

        auto blend = [&](double coef) {
            std::vector<double> p(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k) {
                p[static_cast<std::size_t>(k)] =
                    centroid[static_cast<std::size_t>(k)] +
                    coef * (centroid[static_cast<std::size_t>(k)] - simplex[worst][static_cast<std::size_t>(k)]);
            }
            return p;
        };

        std::vector<double> refl = blend(1.0);
        const double f_refl = eval(refl);
        if (f_refl < value[best]) {
            std::vector<double> expd = blend(2.0);
            const double f_expd = eval(expd);
            if (f_expd < f_refl) {
                simplex[worst] = std::move(expd);
                value[worst] = f_expd;
            } else {
                simplex[worst] = std::move(refl);
                value[worst] = f_refl;
            }
        } else if (f_refl < value[second]) {
            simplex[worst] = std::move(refl);
            value[worst] = f_refl;
        } else {
            std::vector<double> contr = blend(f_refl < value[worst] ? 0.5 : -0.5);
            const double f_contr = eval(contr);
            if (f_contr < std::min(value[worst], f_refl)) {
                simplex[worst] = std::move(contr);
                value[worst] = f_contr;
            } else {
                for (std::size_t i : order) {
                    if (i == best) continue;
                    for (int k = 0; k < n; ++k) {
                        simplex[i][static_cast<std::size_t>(k)] =
                            0.5 * (simplex[i][static_cast<std::size_t>(k)] + simplex[best][static_cast<std::size_t>(k)]);
                    }
                    value[i] = eval(simplex[i]);
                }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < value.size(); ++i) {
        if (value[i] < value[best]) best = i;
    }
    return {simplex[best], value[best]};
}

bool lex_less(const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        if (std::abs(a[i] - b[i]) > 1e-12) return a[i] < b[i];
    }
    return false;
}

} // namespace

PhaseFitResult fit_phases(const std::vector<double>& amplitudes, const IntensityCurve& curve,
                          const SlitGeometry& geom, const SimGrid& grid,
                          const OpticsConstants& optics, const PhaseFitOptions& opts) {
    const int d = static_cast<int>(amplitudes.size());
    if (d < 2) throw config_error("fit_phases needs at least 2 amplitudes");
    if (curve.position_um.size() != curve.intensity.size() || curve.position_um.empty()) {
        throw config_error("fit_phases: malformed curve");
    }
    const double lf = optics.wavelength_nm * 1e-3 * optics.focal_mm * 1e3;

    FitData data;
    for (std::size_t i = 0; i < curve.position_um.size(); ++i) {
        const double y = curve.position_um[i];
        const double env = slit_envelope_intensity(geom, grid, lf, y);
        if (env < 0.05) continue; // unreliable once the envelope has collapsed
        data.xi.push_back(kTwoPi * geom.slit_period_um() * y / lf);
        data.z.push_back(curve.intensity[i] / env);
    }
    const double xi_span =
        data.xi.empty() ? 0.0
                        : *std::max_element(data.xi.begin(), data.xi.end()) -
                              *std::min_element(data.xi.begin(), data.xi.end());
    if (data.xi.size() < static_cast<std::size_t>(2 * d) || xi_span < 2.0 * kTwoPi) {
        throw config_error("fit_phases: curve does not cover two fringe periods inside the envelope");
    }
    for (double z : data.z) data.z_sq_sum += z * z;
    if (!(data.z_sq_sum > 0.0)) throw config_error("fit_phases: all-zero curve");

    std::vector<double> mags(amplitudes);
    double msum = 0.0;
    for (double m : mags) {
        if (m < 0.0) throw config_error("fit_phases: negative amplitude");
        msum += m * m;
    }
    if (!(msum > 0.0)) throw config_error("fit_phases: all-zero amplitudes");
    for (double& m : mags) m /= std::sqrt(msum);

    PhaseFitResult result;
    result.samples_used = static_cast<int>(data.xi.size());
    result.phases.assign(static_cast<std::size_t>(d), 0.0);

    // Only slits that carry light have identifiable phases; fit over those.
    for (int l = 0; l < d; ++l) {
        if (mags[static_cast<std::size_t>(l)] > 1e-9) {
            data.slits.push_back(l);
            data.slit_mag.push_back(mags[static_cast<std::size_t>(l)]);
        }
    }
    if (data.slits.size() < 2) {
        result.residual = fit_residual(data, {0.0});
        result.converged = true;
        result.starts_used = 0;
        return result;
    }

    const int n_free = static_cast<int>(data.slits.size()) - 1;
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> uni(-std::numbers::pi, std::numbers::pi);

    std::vector<double> best_free;
    double best_resid = std::numeric_limits<double>::infinity();
    int starts = 0;
    const int budget = std::max(1, opts.random_starts);
    for (int s = 0; s < budget; ++s) {
        std::vector<double> start(static_cast<std::size_t>(n_free), 0.0);
        if (s > 0) {
            for (double& v : start) v = uni(rng);
        }
        auto [free, resid] = nelder_mead(data, start, opts.max_iter_per_start);
        ++starts;
        const bool better = resid < best_resid - 1e-12 ||
                            (std::abs(resid - best_resid) <= 1e-12 && lex_less(free, best_free));
        if (better) {
            best_resid = resid;
            best_free = std::move(free);
        }
        if (best_resid < 1e-10 && s >= 2) break; // clean data; the budget would be wasted
    }

    for (int i = 0; i < n_free; ++i) {
        result.phases[static_cast<std::size_t>(data.slits[static_cast<std::size_t>(i) + 1])] =
            wrap_pm_pi(best_free[static_cast<std::size_t>(i)]);
    }
    result.residual = best_resid;
    result.starts_used = starts;
    result.converged = best_resid <= opts.residual_ok;
    return result;
}

IntensityCurve predicted_farfield_curve(const QuditState& state, const SlitGeometry& geom,
                                        const SimGrid& grid, const OpticsConstants& optics,
                                        const std::vector<double>& positions_um) {
    const double lf = optics.wavelength_nm * 1e-3 * optics.focal_mm * 1e3;
    IntensityCurve curve;
    curve.position_um = positions_um;
    curve.intensity.resize(positions_um.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < positions_um.size(); ++i) {
        const double y = positions_um[i];
        const double xi = kTwoPi * geom.slit_period_um() * y / lf;
        Complex a(0.0, 0.0);
        for (int l = 0; l < state.dimension(); ++l) {
            a += state.amplitude(l) * std::polar(1.0, -l * xi);
        }
        const double v = slit_envelope_intensity(geom, grid, lf, y) * std::norm(a);
        curve.intensity[i] = v;
        peak = std::max(peak, v);
    }
    if (peak > 0.0) {
        for (double& v : curve.intensity) v /= peak;
    }
    return curve;
}

QuditState pure_from_estimates(const std::vector<double>& amplitudes,
                               const std::vector<double>& phases) {
    if (amplitudes.size() != phases.size() || amplitudes.size() < 2) {
        throw config_error("pure_from_estimates: mismatched amplitude/phase lists");
    }
    CVector v(static_cast<Eigen::Index>(amplitudes.size()));
    for (std::size_t l = 0; l < amplitudes.size(); ++l) {
        v(static_cast<Eigen::Index>(l)) = std::polar(std::max(amplitudes[l], 0.0), phases[l]);
    }
    return QuditState::normalize(v);
}

std::string record_to_json(const MeasurementRecord& rec) {
    rec.validate();
    json j;
    j["dimension"] = static_cast<int>(rec.projectors.front().op.rows());
    j["mode"] = rec.mode == RecordMode::counts ? "counts" : "intensity";
    j["total_counts"] = rec.total_counts;
    json entries = json::array();
    for (std::size_t k = 0; k < rec.projectors.size(); ++k) {
        entries.push_back({{"label", rec.projectors[k].label},
                           {"group", rec.projectors[k].group},
                           {"value", rec.values[k]}});
    }
    j["measurements"] = entries;
    return j.dump(2);
}

MeasurementRecord record_from_json(const std::string& text) {
    json j = json::parse(text);
    const int d = j.at("dimension").get<int>();
    MeasurementRecord rec;
    rec.mode = j.at("mode").get<std::string>() == "counts" ? RecordMode::counts
                                                           : RecordMode::intensity;
    rec.total_counts = j.value("total_counts", 0.0);
    for (const auto& e : j.at("measurements")) {
        const std::string label = e.at("label").get<std::string>();
        Projector p;
        p.label = label;
        p.group = e.at("group").get<int>();
        if (label.rfind("near(", 0) == 0) {
            const int l = std::stoi(label.substr(5));
            if (l < 0 || l >= d) throw config_error("record JSON: near index out of range");
            p.op = CMatrix::Zero(d, d);
            p.op(l, l) = 1.0;
        } else if (label.rfind("far(", 0) == 0) {
            const double xi = std::stod(label.substr(4));
            p.op = far_projectors(d, {xi}).front().op;
        } else {
            throw config_error("record JSON: unknown projector label " + label);
        }
        rec.projectors.push_back(std::move(p));
        rec.values.push_back(e.at("value").get<double>());
    }
    rec.validate();
    return rec;
}

} // namespace qslm
