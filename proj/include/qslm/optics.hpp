#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qslm/mask.hpp"
#include "qslm/qudit.hpp"

namespace qslm {

enum class Plane { mask, fourier, image };

// Illumination and detection imperfections. Defaults are the ideal setup.
struct NoiseModel {
    // Phase jitter sigma (radians) per 8-bit gray level, drawn once per SLM
    // pixel per mask application.
    std::array<double, 256> phase_jitter_sigma{}; // zero-initialized
    double beam_offset_x_um = 0.0;
    double beam_offset_y_um = 0.0;
    // 1/e amplitude radius; infinity = plane wave.
    double beam_waist_um = std::numeric_limits<double>::infinity();
    bool shot_noise = false;
    double total_counts = 0.0; // Poisson scale when shot_noise is on

    bool has_jitter() const;
    static NoiseModel ideal();
    // Linear sigma ramp 0 -> 0.15 rad across gray levels, emulating
    // gray-level-dependent phase fluctuations of a PLUTO-class panel.
    static NoiseModel pluto_like();
};

struct SimParams {
    int subsampling = 4;       // field samples per SLM pixel per axis
    double guard_x = 2.0;      // grid extent / aperture extent, slit-length axis
    double guard_y = 2.0;      // same, slit-stacking axis
    double iris_radius_fraction = 0.4; // of the order spacing
};

// Sampled scalar field. Row-major samples[row * nx + col]; x (columns) is the
// slit-length/grating axis, y (rows) the slit-stacking axis, both centered:
// coordinate of index k is (k - n/2) * pitch.
class ComplexField {
public:
    ComplexField(int nx, int ny, double pitch_x_um, double pitch_y_um, Plane plane,
                 double wavelength_nm, double focal_mm);

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    Plane plane() const { return plane_; }
    void set_plane(Plane p) { plane_ = p; }
    double pitch_x_um() const { return pitch_x_; }
    double pitch_y_um() const { return pitch_y_; }
    void set_pitch(double px, double py) { pitch_x_ = px; pitch_y_ = py; }
    double wavelength_nm() const { return wavelength_nm_; }
    double focal_mm() const { return focal_mm_; }
    // lambda * f in um^2, the Fraunhofer scale factor.
    double lambda_f_um2() const { return wavelength_nm_ * 1e-3 * focal_mm_ * 1e3; }

    double x_um(int col) const { return (col - nx_ / 2) * pitch_x_; }
    double y_um(int row) const { return (row - ny_ / 2) * pitch_y_; }

    Complex& at(int row, int col) { return samples_[static_cast<std::size_t>(row) * nx_ + col]; }
    Complex at(int row, int col) const { return samples_[static_cast<std::size_t>(row) * nx_ + col]; }
    Complex* data() { return samples_.data(); }
    const Complex* data() const { return samples_.data(); }
    std::size_t size() const { return samples_.size(); }

    double total_power() const;

private:
    int nx_, ny_;
    double pitch_x_, pitch_y_;
    Plane plane_;
    double wavelength_nm_, focal_mm_;
    std::vector<Complex> samples_;
};

// Field grid derived from the geometry: the mask panel (D*d rows, L cols)
// centered with guard margins, sample counts padded to FFT-friendly sizes
// that stay multiples of the subsampling factor.
struct SimGrid {
    int panel_cols = 0, panel_rows = 0; // SLM pixels
    int grid_cols = 0, grid_rows = 0;   // SLM pixels incl. guard
    int margin_x = 0, margin_y = 0;     // pixels per side
    int subsampling = 4;
    double pixel_pitch_um = 8.0;

    int nx() const { return grid_cols * subsampling; }
    int ny() const { return grid_rows * subsampling; }
    double sample_pitch_um() const { return pixel_pitch_um / subsampling; }
    // Mask-panel pixel -> grid pixel offsets.
    int panel_col0() const { return margin_x; }
    int panel_row0() const { return margin_y; }
};

SimGrid make_grid(const SlitGeometry& geom, const SimParams& params);

struct OpticsConstants {
    double wavelength_nm = 647.0;
    double focal_mm = 300.0;
};

// Unit-power illumination sampled on the grid; plane wave or offset Gaussian.
ComplexField illuminate(const SlitGeometry& geom, const SimParams& params,
                        const NoiseModel& noise, const OpticsConstants& optics);

// Multiply by e^{i(phase + jitter)} with the mask panel centered on the grid
// and the mask's background phase outside it; one jitter draw per SLM pixel.
// Phase-only, so power is conserved exactly when jitter is off.
void apply_mask(ComplexField& field, const PhaseMask& mask, const NoiseModel& noise,
                std::uint64_t seed);

// Unitary centered transforms; both preserve total power to rounding and
// compose to the identity. far_field stamps Fourier pitches
// lambda*f/(N*pitch); near_field_image restores the spatial pitches.
void far_field(ComplexField& field);
void near_field_image(ComplexField& field);

struct IrisSpec {
    double center_x_um = 0.0;
    double center_y_um = 0.0;
    double radius_um = 0.0;

    // Disc centered on the first order. The default radius is 0.4x the order
    // spacing: wide enough for the full interference pattern, tight enough to
    // suppress the 1/x tails of orders 0 and 2.
    static IrisSpec order_one(const SlitGeometry& geom, const OpticsConstants& optics,
                              double radius_fraction = 0.4);
};

// Zero outside the disc. Throws config_error if the disc reaches the zeroth
// order (center distance must exceed the radius).
void iris_filter(ComplexField& field, const IrisSpec& iris);

// |c_m|^2 of one grating period sampled at `oversample` points per pixel;
// the direct-DFT oracle behind amplitude inversion and the efficiency tests.
double order_efficiency(const GratingSpec& spec, double phi0, int order,
                        int oversample = 8, int period_px = 0);
// All |c_m|^2 of that DFT (sums to 1 for a phase-only profile).
std::vector<double> order_spectrum(const GratingSpec& spec, double phi0,
                                   int oversample = 8, int period_px = 0);

// Integrated intensity per slit period cell, normalized to sum 1.
std::vector<double> slit_powers(const ComplexField& image, const SlitGeometry& geom,
                                const SimGrid& grid);

struct IntensityCurve {
    std::vector<double> position_um; // y, slit-stacking axis
    std::vector<double> intensity;
};

// Intensity integrated across the slit-length direction, vs y.
IntensityCurve farfield_intensity_curve(const ComplexField& fourier);

// Discrete single-slit envelope (the Dirichlet analogue of sinc^2(2a*y/(lambda f)))
// at far-field position y; equals 1 at y = 0.
double slit_envelope_intensity(const SlitGeometry& geom, const SimGrid& grid,
                               double lambda_f_um2, double y_um);

// Poisson counts with expectation total * value / sum(values).
std::vector<double> poissonize(const std::vector<double>& values, double total,
                               std::mt19937_64& rng);

void write_curve_csv(const IntensityCurve& curve, const std::string& path);
// Raw dump: JSON header line (dims, pitches, plane) then little-endian
// re/im doubles, row-major.
void write_field_dump(const ComplexField& field, const std::string& path);

} // namespace qslm
