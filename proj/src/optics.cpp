#include "qslm/optics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

#include <nlohmann/json.hpp>

namespace qslm {

using json = nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// FFTW plan cache. Plan creation is serialized (FFTW requirement); execution
// via fftw_execute_dft on caller arrays is thread-safe. Plans always use
// FFTW_ESTIMATE: MEASURE picks algorithms by wall-clock timing, which would
// break the bitwise run-to-run reproducibility the sweep outputs promise.
// ---------------------------------------------------------------------------
struct PlanKey {
    int nx, ny, sign;
    bool operator<(const PlanKey& o) const {
        return std::tie(nx, ny, sign) < std::tie(o.nx, o.ny, o.sign);
    }
};

std::mutex g_plan_mutex;
std::map<PlanKey, fftw_plan> g_plans;

fftw_plan get_plan(int nx, int ny, int sign) {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    auto& plan = g_plans[PlanKey{nx, ny, sign}];
    if (plan == nullptr) {
        fftw_complex* scratch = fftw_alloc_complex(static_cast<std::size_t>(nx) * ny);
        if (scratch == nullptr) throw std::bad_alloc();
        plan = fftw_plan_dft_2d(ny, nx, scratch, scratch, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_free(scratch);
        if (plan == nullptr) throw std::runtime_error("fftw_plan_dft_2d failed");
    }
    return plan;
}

// Swap quadrants in place; for even sizes this is both fftshift and its
// inverse. Grid sizes from make_grid are always even.
void fftshift2(Complex* data, int nx, int ny) {
    const int hx = nx / 2, hy = ny / 2;
    for (int r = 0; r < hy; ++r) {
        Complex* a = data + static_cast<std::size_t>(r) * nx;
        Complex* b = data + static_cast<std::size_t>(r + hy) * nx;
        for (int c = 0; c < hx; ++c) {
            std::swap(a[c], b[c + hx]);
            std::swap(a[c + hx], b[c]);
        }
    }
}

void centered_transform(ComplexField& field, int sign) {
    const int nx = field.nx(), ny = field.ny();
    if (nx % 2 != 0 || ny % 2 != 0) {
        throw config_error("field dimensions must be even for the centered transform");
    }
    fftw_plan plan = get_plan(nx, ny, sign);
    fftshift2(field.data(), nx, ny);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(field.data()),
                     reinterpret_cast<fftw_complex*>(field.data()));
    fftshift2(field.data(), nx, ny);
    const double scale = 1.0 / std::sqrt(static_cast<double>(nx) * ny);
    Complex* d = field.data();
    const std::size_t n = field.size();
    for (std::size_t i = 0; i < n; ++i) d[i] *= scale;
}

bool fast_size(int n) {
    for (int p : {2, 3, 5}) {
        while (n % p == 0) n /= p;
    }
    return n == 1;
}

// Smallest even 5-smooth sample count >= n that is a multiple of `step`.
int next_fast_size(int n, int step) {
    int m = ((n + step - 1) / step) * step;
    if (m % 2 != 0) m += step; // even sample counts keep fftshift exact
    while (!fast_size(m) || m % 2 != 0) m += step;
    return m;
}

int gray_level(double phase) {
    int g = static_cast<int>(phase / kTwoPi * 256.0);
    return std::clamp(g, 0, 255);
}

} // namespace

bool NoiseModel::has_jitter() const {
    for (double s : phase_jitter_sigma) {
        if (s > 0.0) return true;
    }
    return false;
}

NoiseModel NoiseModel::ideal() { return NoiseModel{}; }

NoiseModel NoiseModel::pluto_like() {
    NoiseModel n;
    for (int g = 0; g < 256; ++g) {
        n.phase_jitter_sigma[static_cast<std::size_t>(g)] = 0.15 * g / 255.0;
    }
    return n;
}

ComplexField::ComplexField(int nx, int ny, double pitch_x_um, double pitch_y_um, Plane plane,
                           double wavelength_nm, double focal_mm)
    : nx_(nx),
      ny_(ny),
      pitch_x_(pitch_x_um),
      pitch_y_(pitch_y_um),
      plane_(plane),
      wavelength_nm_(wavelength_nm),
      focal_mm_(focal_mm),
      samples_(static_cast<std::size_t>(nx) * ny) {
    if (nx < 2 || ny < 2) throw config_error("field grid too small");
}

double ComplexField::total_power() const {
    // Kahan summation: the conservation checks compare powers at 1e-12 on
    // multi-megasample grids, which naive accumulation cannot hold.
    double sum = 0.0, carry = 0.0;
    for (const Complex& s : samples_) {
        const double y = std::norm(s) - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    return sum;
}

SimGrid make_grid(const SlitGeometry& geom, const SimParams& params) {
    if (params.subsampling < 1) throw config_error("subsampling must be >= 1");
    if (params.guard_x < 1.0 || params.guard_y < 1.0) {
        throw config_error("guard factors must be >= 1");
    }
    SimGrid g;
    g.subsampling = params.subsampling;
    g.pixel_pitch_um = geom.pixel_pitch_um;
    g.panel_cols = geom.slit_length_px;
    g.panel_rows = geom.dimension * geom.slit_period_px;

    const int aperture_y = (geom.dimension - 1) * geom.slit_period_px + geom.slit_width_px;
    const int want_x = static_cast<int>(std::ceil(params.guard_x * g.panel_cols));
    const int want_y =
        std::max(g.panel_rows, static_cast<int>(std::ceil(params.guard_y * aperture_y)));

    const int s = params.subsampling;
    // Sample counts must be even (centered transform) and multiples of the
    // subsampling. Odd panels sit half a pixel off center; that is a pure
    // linear phase in the far field and drops out of every intensity.
    const int nx = next_fast_size(std::max(want_x, g.panel_cols + 2) * s, 2 * s);
    const int ny = next_fast_size(std::max(want_y, g.panel_rows + 2) * s, 2 * s);
    g.grid_cols = nx / s;
    g.grid_rows = ny / s;
    g.margin_x = (g.grid_cols - g.panel_cols) / 2;
    g.margin_y = (g.grid_rows - g.panel_rows) / 2;
    return g;
}

ComplexField illuminate(const SlitGeometry& geom, const SimParams& params,
                        const NoiseModel& noise, const OpticsConstants& optics) {
    const SimGrid grid = make_grid(geom, params);
    ComplexField field(grid.nx(), grid.ny(), grid.sample_pitch_um(), grid.sample_pitch_um(),
                       Plane::mask, optics.wavelength_nm, optics.focal_mm);
    const bool plane_wave = !std::isfinite(noise.beam_waist_um);
    if (plane_wave) {
        const double amp = 1.0 / std::sqrt(static_cast<double>(field.size()));
        Complex* d = field.data();
        for (std::size_t i = 0; i < field.size(); ++i) d[i] = amp;
        return field;
    }
    if (noise.beam_waist_um <= 0.0) throw config_error("beam waist must be positive");
    const double inv_w2 = 1.0 / (noise.beam_waist_um * noise.beam_waist_um);
    double power = 0.0;
    for (int r = 0; r < field.ny(); ++r) {
        const double dy = field.y_um(r) - noise.beam_offset_y_um;
        for (int c = 0; c < field.nx(); ++c) {
            const double dx = field.x_um(c) - noise.beam_offset_x_um;
            const double a = std::exp(-(dx * dx + dy * dy) * inv_w2);
            field.at(r, c) = a;
            power += a * a;
        }
    }
    if (!(power > 0.0)) throw config_error("beam waist too small for the grid");
    const double scale = 1.0 / std::sqrt(power);
    Complex* d = field.data();
    for (std::size_t i = 0; i < field.size(); ++i) d[i] *= scale;
    return field;
}

void apply_mask(ComplexField& field, const PhaseMask& mask, const NoiseModel& noise,
                std::uint64_t seed) {
    if (field.plane() != Plane::mask) {
        throw config_error("apply_mask expects a mask-plane field");
    }
    const double s_real = mask.geometry().pixel_pitch_um / field.pitch_x_um();
    const int s = static_cast<int>(std::lround(s_real));
    if (s < 1 || std::abs(s_real - s) > 1e-9 || field.pitch_x_um() != field.pitch_y_um()) {
        throw config_error("field sampling is not an integer subdivision of the SLM pixel");
    }
    if (field.nx() % s != 0 || field.ny() % s != 0) {
        throw config_error("field grid is not aligned to whole SLM pixels");
    }
    const int px_cols = field.nx() / s;
    const int px_rows = field.ny() / s;
    if (mask.cols() > px_cols || mask.rows() > px_rows) {
        throw config_error("mask panel does not fit on the field grid");
    }
    // Same floor convention as SimGrid::panel_row0/panel_col0.
    const int col0 = (px_cols - mask.cols()) / 2;
    const int row0 = (px_rows - mask.rows()) / 2;

    const bool jitter = noise.has_jitter();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (int pr = 0; pr < px_rows; ++pr) {
        const bool in_panel_row = pr >= row0 && pr < row0 + mask.rows();
        for (int pc = 0; pc < px_cols; ++pc) {
            double phase = mask.background_phase();
            if (in_panel_row && pc >= col0 && pc < col0 + mask.cols()) {
                phase = mask.at(pr - row0, pc - col0);
            }
            if (jitter) {
                const double sigma = noise.phase_jitter_sigma[static_cast<std::size_t>(gray_level(phase))];
                // One draw per SLM pixel per call, consumed even when sigma
                // is zero so the stream is independent of the sigma table.
                const double eps = gauss(rng);
                phase += sigma * eps;
            }
            const Complex factor = std::polar(1.0, phase);
            for (int dr = 0; dr < s; ++dr) {
                Complex* rowp = field.data() + static_cast<std::size_t>(pr * s + dr) * field.nx() +
                                static_cast<std::size_t>(pc) * s;
                for (int dc = 0; dc < s; ++dc) rowp[dc] *= factor;
            }
        }
    }
}

void far_field(ComplexField& field) {
    if (field.plane() == Plane::fourier) {
        throw config_error("far_field expects a mask- or image-plane field");
    }
    const double lf = field.lambda_f_um2();
    const double fx = lf / (field.nx() * field.pitch_x_um());
    const double fy = lf / (field.ny() * field.pitch_y_um());
    centered_transform(field, FFTW_FORWARD);
    field.set_pitch(fx, fy);
    field.set_plane(Plane::fourier);
}

void near_field_image(ComplexField& field) {
    if (field.plane() != Plane::fourier) {
        throw config_error("near_field_image expects a Fourier-plane field");
    }
    const double lf = field.lambda_f_um2();
    const double sx = lf / (field.nx() * field.pitch_x_um());
    const double sy = lf / (field.ny() * field.pitch_y_um());
    centered_transform(field, FFTW_BACKWARD);
    field.set_pitch(sx, sy);
    field.set_plane(Plane::image);
}

IrisSpec IrisSpec::order_one(const SlitGeometry& geom, const OpticsConstants& optics,
                             double radius_fraction) {
    if (radius_fraction <= 0.0 || radius_fraction >= 1.0) {
        throw config_error("iris radius fraction must be in (0, 1)");
    }
    const double lf = optics.wavelength_nm * 1e-3 * optics.focal_mm * 1e3;
    const double spacing = lf / geom.grating_period_um();
    IrisSpec iris;
    iris.center_x_um = spacing;
    iris.center_y_um = 0.0;
    iris.radius_um = radius_fraction * spacing;
    return iris;
}

void iris_filter(ComplexField& field, const IrisSpec& iris) {
    if (field.plane() != Plane::fourier) {
        throw config_error("iris_filter expects a Fourier-plane field");
    }
    if (iris.radius_um <= 0.0) throw config_error("iris radius must be positive");
    const double dist0 = std::hypot(iris.center_x_um, iris.center_y_um);
    if (dist0 <= iris.radius_um) {
        throw config_error("iris would pass the zeroth order (center distance <= radius)");
    }
    const double r2 = iris.radius_um * iris.radius_um;
    for (int r = 0; r < field.ny(); ++r) {
        const double dy = field.y_um(r) - iris.center_y_um;
        const double dy2 = dy * dy;
        if (dy2 > r2) {
            Complex* rowp = field.data() + static_cast<std::size_t>(r) * field.nx();
            std::fill(rowp, rowp + field.nx(), Complex(0.0, 0.0));
            continue;
        }
        for (int c = 0; c < field.nx(); ++c) {
            const double dx = field.x_um(c) - iris.center_x_um;
            if (dx * dx + dy2 > r2) field.at(r, c) = Complex(0.0, 0.0);
        }
    }
}

std::vector<double> order_spectrum(const GratingSpec& spec, double phi0, int oversample,
                                   int period_px) {
    if (oversample < 1) throw config_error("oversample must be >= 1");
    if (period_px <= 0) {
        period_px = (spec.kind == GratingKind::blazed) ? spec.quantization_levels : 10;
    }
    const auto profile = grating_phase_profile(spec, phi0, period_px);
    const int n = period_px * oversample;
    std::vector<Complex> wave(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        wave[static_cast<std::size_t>(j)] =
            std::polar(1.0, profile[static_cast<std::size_t>(j / oversample)]);
    }
    // Direct DFT: one period is small and this keeps the oracle independent
    // of the FFT engine it cross-checks.
    std::vector<double> spec_out(static_cast<std::size_t>(n));
    for (int m = 0; m < n; ++m) {
        Complex c(0.0, 0.0);
        for (int j = 0; j < n; ++j) {
            c += wave[static_cast<std::size_t>(j)] *
                 std::polar(1.0, -kTwoPi * m * j / static_cast<double>(n));
        }
        spec_out[static_cast<std::size_t>(m)] = std::norm(c / static_cast<double>(n));
    }
    return spec_out;
}

double order_efficiency(const GratingSpec& spec, double phi0, int order, int oversample,
                        int period_px) {
    if (oversample < 1) throw config_error("oversample must be >= 1");
    if (period_px <= 0) {
        period_px = (spec.kind == GratingKind::blazed) ? spec.quantization_levels : 10;
    }
    const auto profile = grating_phase_profile(spec, phi0, period_px);
    const int n = period_px * oversample;
    const int m = ((order % n) + n) % n;
    Complex c(0.0, 0.0);
    for (int j = 0; j < n; ++j) {
        c += std::polar(1.0, profile[static_cast<std::size_t>(j / oversample)] -
                                 kTwoPi * m * j / static_cast<double>(n));
    }
    return std::norm(c / static_cast<double>(n));
}

std::vector<double> slit_powers(const ComplexField& image, const SlitGeometry& geom,
                                const SimGrid& grid) {
    if (image.plane() != Plane::image) {
        throw config_error("slit_powers expects an image-plane field");
    }
    const int s = grid.subsampling;
    std::vector<double> powers(static_cast<std::size_t>(geom.dimension), 0.0);
    for (int l = 0; l < geom.dimension; ++l) {
        const int r0 = (grid.panel_row0() + l * geom.slit_period_px) * s;
        const int r1 = r0 + geom.slit_period_px * s;
        double p = 0.0;
        for (int r = r0; r < r1; ++r) {
            const Complex* rowp = image.data() + static_cast<std::size_t>(r) * image.nx();
            for (int c = 0; c < image.nx(); ++c) p += std::norm(rowp[c]);
        }
        powers[static_cast<std::size_t>(l)] = p;
    }
    double total = 0.0;
    for (double p : powers) total += p;
    if (!(total > 0.0)) throw config_error("no power reached the image plane");
    for (double& p : powers) p /= total;
    return powers;
}

IntensityCurve farfield_intensity_curve(const ComplexField& fourier) {
    if (fourier.plane() != Plane::fourier) {
        throw config_error("farfield_intensity_curve expects a Fourier-plane field");
    }
    IntensityCurve curve;
    curve.position_um.resize(static_cast<std::size_t>(fourier.ny()));
    curve.intensity.resize(static_cast<std::size_t>(fourier.ny()));
    for (int r = 0; r < fourier.ny(); ++r) {
        const Complex* rowp = fourier.data() + static_cast<std::size_t>(r) * fourier.nx();
        double s = 0.0;
        for (int c = 0; c < fourier.nx(); ++c) s += std::norm(rowp[c]);
        curve.position_um[static_cast<std::size_t>(r)] = fourier.y_um(r);
        curve.intensity[static_cast<std::size_t>(r)] = s;
    }
    return curve;
}

double slit_envelope_intensity(const SlitGeometry& geom, const SimGrid& grid,
                               double lambda_f_um2, double y_um) {
    const int w = geom.slit_width_px * grid.subsampling;
    const double delta = y_um * grid.sample_pitch_um() / lambda_f_um2; // cycles per sample
    const double den = std::sin(std::numbers::pi * delta);
    if (std::abs(den) < 1e-14) return 1.0;
    const double num = std::sin(std::numbers::pi * w * delta);
    const double amp = num / (w * den);
    return amp * amp;
}

std::vector<double> poissonize(const std::vector<double>& values, double total,
                               std::mt19937_64& rng) {
    double sum = 0.0;
    for (double v : values) {
        if (v < 0.0) throw config_error("poissonize: negative intensity");
        sum += v;
    }
    if (!(sum > 0.0)) throw config_error("poissonize: all-zero intensities");
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::poisson_distribution<long long> pois(total * values[i] / sum);
        out[i] = values[i] > 0.0 ? static_cast<double>(pois(rng)) : 0.0;
    }
    return out;
}

void write_curve_csv(const IntensityCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open " + path + " for writing");
    out << "position_um,intensity\n";
    char line[80];
    for (std::size_t i = 0; i < curve.position_um.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.17g,%.17g\n", curve.position_um[i],
                      curve.intensity[i]);
        out << line;
    }
    if (!out) throw config_error("failed writing " + path);
}

void write_field_dump(const ComplexField& field, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open " + path + " for writing");
    json header;
    header["nx"] = field.nx();
    header["ny"] = field.ny();
    header["pitch_x_um"] = field.pitch_x_um();
    header["pitch_y_um"] = field.pitch_y_um();
    header["plane"] = field.plane() == Plane::mask    ? "mask"
                      : field.plane() == Plane::fourier ? "fourier"
                                                        : "image";
    header["wavelength_nm"] = field.wavelength_nm();
    header["focal_mm"] = field.focal_mm();
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(field.data()),
              static_cast<std::streamsize>(field.size() * sizeof(Complex)));
    if (!out) throw config_error("failed writing " + path);
}

} // namespace qslm
