#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qslm/errors.hpp"

namespace qslm {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

// Normalized pure state of a D-dimensional spatial qudit. Amplitudes carry
// unit norm (within 1e-12); construct through normalize() or the factories.
class QuditState {
public:
    static QuditState normalize(const CVector& raw);
    static QuditState normalize(const std::vector<Complex>& raw);

    int dimension() const { return static_cast<int>(amps_.size()); }
    const CVector& amplitudes() const { return amps_; }
    Complex amplitude(int l) const { return amps_(l); }

    // Largest |amplitude|; > 0 for any valid state.
    double max_magnitude() const;

    // Short hex digest of the amplitude list, used to key artifacts.
    std::string digest() const;

    bool approx_equal_up_to_global_phase(const QuditState& other, double tol = 1e-10) const;

private:
    explicit QuditState(CVector a) : amps_(std::move(a)) {}
    CVector amps_;
};

// D x D density operator. validate() enforces hermiticity (1e-10), unit trace
// (1e-10) and spectrum >= -1e-10.
class DensityMatrix {
public:
    explicit DensityMatrix(CMatrix entries);

    int dimension() const { return static_cast<int>(entries_.rows()); }
    const CMatrix& entries() const { return entries_; }

    double trace_real() const { return entries_.trace().real(); }
    double hermiticity_defect() const;   // max |rho - rho^dagger|
    double min_eigenvalue() const;
    void validate(double herm_tol = 1e-10, double trace_tol = 1e-10,
                  double eig_tol = 1e-10) const;

private:
    CMatrix entries_;
};

struct BlochPoint {
    double theta = 0.0; // [0, pi]
    double phi = 0.0;   // (-pi, pi]
};

// <psi|rho|psi>, clamped to [0,1]. Throws config_error on dimension mismatch.
double fidelity(const QuditState& target, const DensityMatrix& rho);
// Same overlap without the clamp, for diagnostics.
double fidelity_unclamped(const QuditState& target, const DensityMatrix& rho);
double fidelity(const QuditState& a, const QuditState& b);

// cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>. Validates ranges.
QuditState bloch_to_state(const BlochPoint& p);
// Inverse map; phi is 0 at the poles where it is undefined.
BlochPoint state_to_bloch(const QuditState& s);

// Deterministic near-uniform sphere covering: golden-angle spiral with the
// poles pinned as the first and last points. target_count >= 2.
std::vector<BlochPoint> sample_bloch_sphere(int target_count);
inline constexpr const char* kBlochSamplingScheme = "fibonacci-spiral-poles";

DensityMatrix density_from_pure(const QuditState& psi);

// Haar-distributed pure state from an explicit generator.
QuditState haar_random_state(int dimension, std::mt19937_64& rng);

// FNV-1a over a byte range; used for digests and derived seeds.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);

// JSON (de)serialization per docs/FORMATS.md.
std::string state_to_json(const QuditState& s);
QuditState state_from_json(const std::string& text);
std::string density_to_json(const DensityMatrix& rho);
DensityMatrix density_from_json(const std::string& text);

} // namespace qslm
