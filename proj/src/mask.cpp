#include "qslm/mask.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "qslm/optics.hpp" // order_efficiency oracle for the blazed inversion

namespace qslm {

using json = nlohmann::json;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double wrap_phase(double phi) {
    double w = std::fmod(phi, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    if (w >= kTwoPi) w = 0.0; // fmod can land exactly on 2*pi
    return w;
}

std::vector<std::string> SlitGeometry::validate() const {
    if (dimension < 2) throw config_error("geometry: dimension must be >= 2");
    if (slit_width_px <= 0 || slit_period_px <= 0 || slit_length_px <= 0 || pixel_pitch_um <= 0.0) {
        throw config_error("geometry: slit sizes and pixel pitch must be positive");
    }
    if (slit_width_px > slit_period_px) {
        throw config_error("geometry: slit width exceeds slit period");
    }
    if (grating_period_px < 2) {
        throw config_error("geometry: grating period must be >= 2 pixels");
    }
    std::vector<std::string> warnings;
    if (slit_length_px < 8 * slit_width_px) {
        warnings.push_back("slit length / slit width = " +
                           std::to_string(static_cast<double>(slit_length_px) / slit_width_px) +
                           " < 8; the 1-D slit model degrades for stubby slits");
    }
    if (slit_length_px < 20 * grating_period_px) {
        // The neighboring orders' spectral tails at the first order scale as
        // grating_period / (pi * slit_length); short gratings bleed percent-
        // level errors into the encoded amplitudes.
        warnings.push_back("slit length spans only " +
                           std::to_string(static_cast<double>(slit_length_px) / grating_period_px) +
                           " grating periods (< 20); expect visible inter-order leakage");
    }
    return warnings;
}

GratingSpec GratingSpec::binary() {
    GratingSpec s;
    s.kind = GratingKind::binary;
    s.quantization_levels = 2;
    return s;
}

GratingSpec GratingSpec::blazed(int levels) {
    GratingSpec s;
    s.kind = GratingKind::blazed;
    s.quantization_levels = levels;
    s.validate();
    return s;
}

double GratingSpec::max_depth() const {
    if (kind == GratingKind::binary) return std::numbers::pi;
    return kTwoPi * (quantization_levels - 1) / quantization_levels;
}

double GratingSpec::mean_offset() const {
    return max_depth() / 2.0;
}

void GratingSpec::validate() const {
    if (kind == GratingKind::blazed && quantization_levels < 2) {
        throw config_error("blazed grating needs at least 2 quantization levels");
    }
}

std::vector<double> grating_phase_profile(const GratingSpec& spec, double phi0, int period_px) {
    spec.validate();
    if (period_px < 2) throw config_error("grating period must be >= 2 pixels");
    if (phi0 < 0.0 || phi0 > spec.max_depth() + 1e-12) {
        throw config_error("grating depth outside [0, max_depth]");
    }
    std::vector<double> prof(static_cast<std::size_t>(period_px));
    const double mean = spec.mean_offset();
    if (spec.kind == GratingKind::binary) {
        const int up = period_px / 2;
        for (int j = 0; j < period_px; ++j) {
            prof[static_cast<std::size_t>(j)] = (j < up) ? mean - phi0 / 2.0 : mean + phi0 / 2.0;
        }
    } else {
        const int n = spec.quantization_levels;
        for (int j = 0; j < period_px; ++j) {
            const int level = static_cast<int>(static_cast<long long>(j) * n / period_px);
            prof[static_cast<std::size_t>(j)] =
                mean + (static_cast<double>(level) / (n - 1) - 0.5) * phi0;
        }
    }
    return prof;
}

double amplitude_to_depth_binary(double mag) {
    if (mag < 0.0 || mag > 1.0) throw config_error("amplitude must be in [0, 1]");
    // First-order amplitude of the two-level profile scales as sin(phi0/2)
    // for any duty cycle, so the continuous inversion is exact here too.
    return 2.0 * std::asin(mag);
}

double amplitude_to_depth_blazed(double mag, int levels, int period_px, int oversample) {
    if (mag < 0.0 || mag > 1.0) throw config_error("amplitude must be in [0, 1]");
    GratingSpec spec = GratingSpec::blazed(levels);
    if (period_px <= 0) period_px = levels;
    const double full = spec.max_depth();
    if (mag <= 0.0) return 0.0;
    if (mag >= 1.0) return full;
    const double ref = std::sqrt(order_efficiency(spec, full, 1, oversample, period_px));
    auto ratio = [&](double depth) {
        return std::sqrt(order_efficiency(spec, depth, 1, oversample, period_px)) / ref;
    };
    // First-order amplitude is monotone in depth (Dirichlet main arch).
    double lo = 0.0, hi = full;
    for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
        const double mid = 0.5 * (lo + hi);
        (ratio(mid) < mag ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double amplitude_to_depth(const GratingSpec& spec, double mag, int period_px) {
    if (spec.kind == GratingKind::binary) return amplitude_to_depth_binary(mag);
    return amplitude_to_depth_blazed(mag, spec.quantization_levels, period_px);
}

std::vector<SlitWave> build_aperture(const QuditState& state, const SlitGeometry& geom) {
    if (state.dimension() != geom.dimension) {
        throw config_error("build_aperture: state dimension " + std::to_string(state.dimension()) +
                           " does not match geometry dimension " + std::to_string(geom.dimension));
    }
    const double peak = state.max_magnitude();
    std::vector<SlitWave> waves(static_cast<std::size_t>(state.dimension()));
    for (int l = 0; l < state.dimension(); ++l) {
        const Complex a = state.amplitude(l);
        waves[static_cast<std::size_t>(l)].magnitude = std::abs(a) / peak;
        waves[static_cast<std::size_t>(l)].phase = (std::abs(a) > 0.0) ? std::arg(a) : 0.0;
    }
    return waves;
}

PhaseMask::PhaseMask(int rows, int cols, double background_phase, SlitGeometry geom,
                     GratingSpec spec, std::string state_digest)
    : rows_(rows),
      cols_(cols),
      background_(wrap_phase(background_phase)),
      geom_(geom),
      spec_(spec),
      digest_(std::move(state_digest)),
      phases_(static_cast<std::size_t>(rows) * cols, wrap_phase(background_phase)) {}

std::pair<int, int> PhaseMask::slit_rows(int l) const {
    const int center = l * geom_.slit_period_px + geom_.slit_period_px / 2;
    const int first = center - geom_.slit_width_px / 2;
    return {first, first + geom_.slit_width_px};
}

std::pair<int, int> PhaseMask::slit_cell_rows(int l) const {
    return {l * geom_.slit_period_px, (l + 1) * geom_.slit_period_px};
}

PhaseMask synthesize_mask(const QuditState& state, const SlitGeometry& geom,
                          const GratingSpec& spec, const MaskOptions& opts) {
    geom.validate();
    spec.validate();
    const auto waves = build_aperture(state, geom);

    PhaseMask mask(geom.dimension * geom.slit_period_px, geom.slit_length_px,
                   opts.background_phase, geom, spec, state.digest());

    const int period = geom.grating_period_px;
    for (int l = 0; l < geom.dimension; ++l) {
        const auto [r0, r1] = mask.slit_rows(l);
        const SlitWave& w = waves[static_cast<std::size_t>(l)];
        if (w.magnitude <= 0.0) {
            // Dark slit: flat mean-offset phase diffracts nothing into order 1.
            const double flat = wrap_phase(spec.mean_offset());
            for (int r = r0; r < r1; ++r)
                for (int c = 0; c < mask.cols(); ++c) mask.at(r, c) = flat;
            continue;
        }
        const double depth = amplitude_to_depth(spec, w.magnitude, period);
        const auto profile = grating_phase_profile(spec, depth, period);
        std::vector<double> row(static_cast<std::size_t>(mask.cols()));
        for (int c = 0; c < mask.cols(); ++c) {
            row[static_cast<std::size_t>(c)] =
                wrap_phase(profile[static_cast<std::size_t>(c % period)] + w.phase);
        }
        for (int r = r0; r < r1; ++r) {
            for (int c = 0; c < mask.cols(); ++c) mask.at(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return mask;
}

GrayImage render_mask_gray(const PhaseMask& mask, int levels) {
    if (levels < 2 || levels > 256) throw config_error("gray levels must be in [2, 256]");
    GrayImage img;
    img.width = mask.cols();
    img.height = mask.rows();
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            int g = static_cast<int>(mask.at(r, c) / kTwoPi * levels);
            if (g >= levels) g = levels - 1;
            img.pixels[static_cast<std::size_t>(r) * img.width + c] = static_cast<std::uint8_t>(g);
        }
    }
    return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open " + path + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw config_error("failed writing " + path);
}

std::string mask_metadata_json(const PhaseMask& mask) {
    const auto& g = mask.geometry();
    json j;
    j["geometry"] = {
        {"dimension", g.dimension},          {"slit_width_px", g.slit_width_px},
        {"slit_period_px", g.slit_period_px}, {"slit_length_px", g.slit_length_px},
        {"grating_period_px", g.grating_period_px}, {"pixel_pitch_um", g.pixel_pitch_um},
    };
    j["grating"] = {
        {"kind", mask.grating().name()},
        {"quantization_levels", mask.grating().quantization_levels},
        {"max_depth_rad", mask.grating().max_depth()},
        {"mean_offset_rad", mask.grating().mean_offset()},
    };
    j["state_digest"] = mask.state_digest();
    j["background_phase_rad"] = mask.background_phase();
    j["rows"] = mask.rows();
    j["cols"] = mask.cols();
    return j.dump(2);
}

} // namespace qslm
