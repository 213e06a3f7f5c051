#include "qslm/qudit.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <nlohmann/json.hpp>

namespace qslm {

using json = nlohmann::json;

QuditState QuditState::normalize(const CVector& raw) {
    if (raw.size() < 2) {
        throw config_error("state must have dimension >= 2, got " + std::to_string(raw.size()));
    }
    const double n = raw.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw config_error("cannot normalize a zero or non-finite amplitude vector");
    }
    return QuditState(raw / n);
}

QuditState QuditState::normalize(const std::vector<Complex>& raw) {
    CVector v(static_cast<Eigen::Index>(raw.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = raw[static_cast<std::size_t>(i)];
    return normalize(v);
}

double QuditState::max_magnitude() const {
    double m = 0.0;
    for (Eigen::Index i = 0; i < amps_.size(); ++i) m = std::max(m, std::abs(amps_(i)));
    return m;
}

std::string QuditState::digest() const {
    // Canonical text keeps the digest stable across platforms.
    std::string buf;
    char tmp[64];
    for (Eigen::Index i = 0; i < amps_.size(); ++i) {
        std::snprintf(tmp, sizeof(tmp), "%.12e,%.12e;", amps_(i).real(), amps_(i).imag());
        buf += tmp;
    }
    const std::uint64_t h = fnv1a64(buf.data(), buf.size());
    std::snprintf(tmp, sizeof(tmp), "%016llx", static_cast<unsigned long long>(h));
    return tmp;
}

bool QuditState::approx_equal_up_to_global_phase(const QuditState& other, double tol) const {
    if (other.dimension() != dimension()) return false;
    const Complex overlap = amps_.dot(other.amps_); // conjugates *this
    return std::abs(std::abs(overlap) - 1.0) < tol;
}

DensityMatrix::DensityMatrix(CMatrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols() || entries_.rows() < 2) {
        throw config_error("density matrix must be square with dimension >= 2");
    }
}

double DensityMatrix::hermiticity_defect() const {
    return (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff();
}

double DensityMatrix::min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<CMatrix> es((entries_ + entries_.adjoint()) / 2.0);
    return es.eigenvalues().minCoeff();
}

void DensityMatrix::validate(double herm_tol, double trace_tol, double eig_tol) const {
    if (hermiticity_defect() > herm_tol) {
        throw config_error("density matrix is not Hermitian within tolerance");
    }
    if (std::abs(trace_real() - 1.0) > trace_tol || std::abs(entries_.trace().imag()) > trace_tol) {
        throw config_error("density matrix trace differs from 1");
    }
    if (min_eigenvalue() < -eig_tol) {
        throw config_error("density matrix has a negative eigenvalue beyond tolerance");
    }
}

double fidelity_unclamped(const QuditState& target, const DensityMatrix& rho) {
    if (target.dimension() != rho.dimension()) {
        throw config_error("fidelity: state dimension " + std::to_string(target.dimension()) +
                           " vs density dimension " + std::to_string(rho.dimension()));
    }
    const Complex v = target.amplitudes().adjoint() * rho.entries() * target.amplitudes();
    return v.real();
}

double fidelity(const QuditState& target, const DensityMatrix& rho) {
    return std::clamp(fidelity_unclamped(target, rho), 0.0, 1.0);
}

double fidelity(const QuditState& a, const QuditState& b) {
    if (a.dimension() != b.dimension()) {
        throw config_error("fidelity: mismatched state dimensions");
    }
    const Complex overlap = a.amplitudes().dot(b.amplitudes());
    return std::clamp(std::norm(overlap), 0.0, 1.0);
}

QuditState bloch_to_state(const BlochPoint& p) {
    if (p.theta < 0.0 || p.theta > std::numbers::pi + 1e-12) {
        throw config_error("Bloch theta outside [0, pi]");
    }
    if (p.phi <= -std::numbers::pi - 1e-12 || p.phi > std::numbers::pi + 1e-12) {
        throw config_error("Bloch phi outside (-pi, pi]");
    }
    CVector v(2);
    v(0) = std::cos(p.theta / 2.0);
    v(1) = std::polar(std::sin(p.theta / 2.0), p.phi);
    return QuditState::normalize(v);
}

BlochPoint state_to_bloch(const QuditState& s) {
    if (s.dimension() != 2) throw config_error("state_to_bloch requires a qubit");
    // Strip the global phase so amplitude 0 is real nonnegative.
    Complex a0 = s.amplitude(0), a1 = s.amplitude(1);
    const double m0 = std::abs(a0);
    BlochPoint p;
    p.theta = 2.0 * std::atan2(std::abs(a1), m0);
    if (m0 > 1e-15 && std::abs(a1) > 1e-15) {
        p.phi = std::arg(a1) - std::arg(a0);
        while (p.phi <= -std::numbers::pi) p.phi += 2.0 * std::numbers::pi;
        while (p.phi > std::numbers::pi) p.phi -= 2.0 * std::numbers::pi;
    } else {
        p.phi = 0.0;
    }
    return p;
}

std::vector<BlochPoint> sample_bloch_sphere(int target_count) {
    if (target_count < 2) throw config_error("sample_bloch_sphere needs target_count >= 2");
    const double pi = std::numbers::pi;
    std::vector<BlochPoint> pts;
    pts.reserve(static_cast<std::size_t>(target_count));
    const double golden_angle = pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < target_count; ++i) {
        if (i == 0) {
            pts.push_back({0.0, 0.0});
        } else if (i == target_count - 1) {
            pts.push_back({pi, 0.0});
        } else {
            const double z = 1.0 - 2.0 * i / (target_count - 1.0);
            double phi = std::fmod(i * golden_angle, 2.0 * pi);
            if (phi <= -pi) phi += 2.0 * pi;
            if (phi > pi) phi -= 2.0 * pi;
            pts.push_back({std::acos(std::clamp(z, -1.0, 1.0)), phi});
        }
    }
    return pts;
}

DensityMatrix density_from_pure(const QuditState& psi) {
    CMatrix m = psi.amplitudes() * psi.amplitudes().adjoint();
    return DensityMatrix(std::move(m));
}

QuditState haar_random_state(int dimension, std::mt19937_64& rng) {
    if (dimension < 2) throw config_error("haar_random_state needs dimension >= 2");
    std::normal_distribution<double> gauss(0.0, 1.0);
    CVector v(dimension);
    for (int i = 0; i < dimension; ++i) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v(i) = Complex(re, im);
    }
    return QuditState::normalize(v);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string state_to_json(const QuditState& s) {
    json j;
    j["dimension"] = s.dimension();
    json amps = json::array();
    for (int i = 0; i < s.dimension(); ++i) {
        amps.push_back({s.amplitude(i).real(), s.amplitude(i).imag()});
    }
    j["amplitudes"] = amps;
    return j.dump(2);
}

QuditState state_from_json(const std::string& text) {
    json j = json::parse(text);
    const int d = j.at("dimension").get<int>();
    const auto& amps = j.at("amplitudes");
    if (static_cast<int>(amps.size()) != d) {
        throw config_error("state JSON: amplitudes length does not match dimension");
    }
    CVector v(d);
    for (int i = 0; i < d; ++i) {
        v(i) = Complex(amps[i].at(0).get<double>(), amps[i].at(1).get<double>());
    }
    return QuditState::normalize(v);
}

std::string density_to_json(const DensityMatrix& rho) {
    json j;
    const int d = rho.dimension();
    j["dimension"] = d;
    json entries = json::array();
    for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) {
            entries.push_back({rho.entries()(r, c).real(), rho.entries()(r, c).imag()});
        }
    }
    j["entries"] = entries; // row-major
    return j.dump(2);
}

DensityMatrix density_from_json(const std::string& text) {
    json j = json::parse(text);
    const int d = j.at("dimension").get<int>();
    const auto& entries = j.at("entries");
    if (static_cast<int>(entries.size()) != d * d) {
        throw config_error("density JSON: entries length does not match dimension^2");
    }
    CMatrix m(d, d);
    for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) {
            const auto& e = entries[static_cast<std::size_t>(r) * d + c];
            m(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
        }
    }
    return DensityMatrix(std::move(m));
}

} // namespace qslm
