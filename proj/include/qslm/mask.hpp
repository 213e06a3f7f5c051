#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qslm/qudit.hpp"

namespace qslm {

// Slit-array geometry in SLM pixels. Slits are horizontal bands stacked along
// y (rows) with their centers symmetric about the optical axis; the grating
// runs along x (columns), the slit-length direction.
struct SlitGeometry {
    int dimension = 2;
    int slit_width_px = 48;    // 2a
    int slit_period_px = 96;   // d
    int slit_length_px = 512;  // L
    int grating_period_px = 10;
    double pixel_pitch_um = 8.0;

    // Throws config_error on hard violations; returns soft warnings
    // (currently only the L/2a aspect check, ratio < 8).
    std::vector<std::string> validate() const;

    double slit_period_um() const { return slit_period_px * pixel_pitch_um; }
    double grating_period_um() const { return grating_period_px * pixel_pitch_um; }
};

enum class GratingKind { binary, blazed };

struct GratingSpec {
    GratingKind kind = GratingKind::blazed;
    int quantization_levels = 10; // meaningful for blazed only

    static GratingSpec binary();
    static GratingSpec blazed(int levels = 10);

    // pi for binary, 2*pi*(N-1)/N for blazed.
    double max_depth() const;
    // Profiles are generated symmetric about this value so the first-order
    // phase stays depth-independent: pi/2 binary, (N-1)*pi/N blazed.
    double mean_offset() const;
    const char* name() const { return kind == GratingKind::binary ? "binary" : "blazed"; }

    void validate() const;
};

// One grating period at pixel resolution, centered on mean_offset():
// binary = two-level square (low half first), blazed = N-level staircase.
// Values are raw (not yet wrapped); depth phi0 is the peak-to-peak excursion.
std::vector<double> grating_phase_profile(const GratingSpec& spec, double phi0, int period_px);

// Depth whose first-order amplitude, relative to full depth, equals mag.
// Binary has the closed form 2*asin(mag); blazed is inverted by bisection
// against the discrete-grating order_efficiency oracle.
double amplitude_to_depth_binary(double mag);
double amplitude_to_depth_blazed(double mag, int levels, int period_px = 0, int oversample = 16);
double amplitude_to_depth(const GratingSpec& spec, double mag, int period_px);

struct SlitWave {
    double magnitude = 0.0; // |beta_l| / max_j |beta_j|
    double phase = 0.0;     // arg(beta_l)
};

// Per-slit target modulation; the largest coefficient is mapped to full
// grating efficiency.
std::vector<SlitWave> build_aperture(const QuditState& state, const SlitGeometry& geom);

// Phase mask over the slit panel (D periods tall, L wide) at SLM-pixel
// resolution, values in [0, 2*pi).
class PhaseMask {
public:
    PhaseMask(int rows, int cols, double background_phase, SlitGeometry geom,
              GratingSpec spec, std::string state_digest);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    double at(int r, int c) const { return phases_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& at(int r, int c) { return phases_[static_cast<std::size_t>(r) * cols_ + c]; }
    const std::vector<double>& data() const { return phases_; }

    const SlitGeometry& geometry() const { return geom_; }
    const GratingSpec& grating() const { return spec_; }
    const std::string& state_digest() const { return digest_; }
    double background_phase() const { return background_; }

    // Row band [first, last) of slit l within the mask panel.
    std::pair<int, int> slit_rows(int l) const;
    // Row band of slit l's full period cell (the near-field integration box).
    std::pair<int, int> slit_cell_rows(int l) const;

private:
    int rows_, cols_;
    double background_;
    SlitGeometry geom_;
    GratingSpec spec_;
    std::string digest_;
    std::vector<double> phases_;
};

struct MaskOptions {
    double background_phase = 0.0;
};

// Panel synthesis: inside slit l the period profile at the inverted depth plus
// the constant offset arg(beta_l), wrapped to [0, 2*pi); dark slits carry the
// constant mean offset; everywhere else the background phase.
PhaseMask synthesize_mask(const QuditState& state, const SlitGeometry& geom,
                          const GratingSpec& spec, const MaskOptions& opts = {});

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major
};

// Linear map [0, 2*pi) -> [0, levels-1]; levels in [2, 256].
GrayImage render_mask_gray(const PhaseMask& mask, int levels = 256);
void write_pgm(const GrayImage& img, const std::string& path);

// Metadata sidecar (geometry, grating, digest) per docs/FORMATS.md.
std::string mask_metadata_json(const PhaseMask& mask);

double wrap_phase(double phi); // into [0, 2*pi)

} // namespace qslm
