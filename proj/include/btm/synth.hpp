#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/config.hpp"
#include "btm/image.hpp"
#include "btm/rng.hpp"

namespace btm {

// Challenge attributes; each one degrades a specific cue while leaving the
// complementary modality (or motion model) informative.
enum class SynthAttr {
    Occlusion,
    LowIllumRgb,
    HighIllumRgb,
    ThermalCrossover,
    FastMotion,
    ScaleVariation,
    AspectChange,
    SimilarObject,
};

inline const std::vector<std::pair<std::string, SynthAttr>>& attr_table() {
    static const std::vector<std::pair<std::string, SynthAttr>> t = {
        {"occlusion", SynthAttr::Occlusion},
        {"low_illumination_rgb", SynthAttr::LowIllumRgb},
        {"high_illumination_rgb", SynthAttr::HighIllumRgb},
        {"thermal_crossover", SynthAttr::ThermalCrossover},
        {"fast_motion", SynthAttr::FastMotion},
        {"scale_variation", SynthAttr::ScaleVariation},
        {"aspect_ratio_change", SynthAttr::AspectChange},
        {"similar_object", SynthAttr::SimilarObject},
    };
    return t;
}

inline std::vector<SynthAttr> parse_attrs(const std::string& csv) {
    std::vector<SynthAttr> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        bool found = false;
        for (auto& [name, a] : attr_table())
            if (name == item) {
                out.push_back(a);
                found = true;
                break;
            }
        if (!found) throw config_error(strcat_("unknown attribute '", item, "'"));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::string attrs_to_string(const std::vector<SynthAttr>& attrs) {
    std::string out;
    for (auto a : attrs)
        for (auto& [name, t] : attr_table())
            if (t == a) {
                if (!out.empty()) out += ",";
                out += name;
            }
    return out;
}

struct SceneSpec {
    uint64_t seed = 1;
    int frames = 32;
    int frame_size = 256;
    std::string shape = "mixed";  // rect | disc | tri | mixed
    double clutter = 0.5;
    double min_extent = 0.10;  // target extent as a fraction of frame_size
    double max_extent = 0.22;
    std::vector<SynthAttr> attributes;
};

inline void validate_spec(const SceneSpec& s) {
    if (s.frames < 2) throw config_error("scene needs at least 2 frames");
    if (s.frame_size < 64) throw config_error("frame_size must be at least 64");
    if (s.shape != "rect" && s.shape != "disc" && s.shape != "tri" && s.shape != "mixed")
        throw config_error(strcat_("unknown shape '", s.shape, "'"));
    if (s.clutter < 0 || s.clutter > 1) throw config_error("clutter must be in [0,1]");
    if (s.min_extent <= 0 || s.max_extent > 0.5 || s.min_extent > s.max_extent)
        throw config_error("extent range must satisfy 0 < min <= max <= 0.5");
}

// Mean-luminance gap between the target box and a surrounding ring, in [0,1].
// This is the measurement the attribute tests key on.
inline double contrast_probe(const Image& im, const PixelBox& box) {
    double band = std::max(4.0, 0.4 * std::max(box.w, box.h));
    int x0 = std::max(0, static_cast<int>(std::floor(box.x - band)));
    int y0 = std::max(0, static_cast<int>(std::floor(box.y - band)));
    int x1 = std::min(im.width, static_cast<int>(std::ceil(box.x + box.w + band)));
    int y1 = std::min(im.height, static_cast<int>(std::ceil(box.y + box.h + band)));
    double tgt = 0, ring = 0;
    int64_t nt = 0, nr = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double lum = 0;
            for (int c = 0; c < im.channels; ++c) lum += im.at(x, y, c);
            lum /= im.channels;
            bool in_box = x + 0.5 >= box.x && x + 0.5 < box.x + box.w && y + 0.5 >= box.y && y + 0.5 < box.y + box.h;
            if (in_box) {
                tgt += lum;
                ++nt;
            } else {
                ring += lum;
                ++nr;
            }
        }
    if (nt == 0 || nr == 0) return 0.0;
    return std::fabs(tgt / nt - ring / nr) / 255.0;
}

namespace detail {

// Bilinear value noise over a coarse control grid, sampled at pixel coords.
struct NoiseGrid {
    int gw = 0, gh = 0;
    double cell = 1;
    std::vector<double> v;

    double at(double x, double y) const {
        double gx = x / cell, gy = y / cell;
        int ix = std::min(gw - 2, std::max(0, static_cast<int>(std::floor(gx))));
        int iy = std::min(gh - 2, std::max(0, static_cast<int>(std::floor(gy))));
        double fx = std::min(1.0, std::max(0.0, gx - ix));
        double fy = std::min(1.0, std::max(0.0, gy - iy));
        auto g = [&](int a, int b) { return v[static_cast<size_t>(b) * gw + a]; };
        return g(ix, iy) * (1 - fx) * (1 - fy) + g(ix + 1, iy) * fx * (1 - fy) +
               g(ix, iy + 1) * (1 - fx) * fy + g(ix + 1, iy + 1) * fx * fy;
    }
};

inline NoiseGrid make_noise(CounterRng rng, int size, double cell) {
    NoiseGrid n;
    n.cell = cell;
    n.gw = static_cast<int>(size / cell) + 2;
    n.gh = n.gw;
    n.v.resize(static_cast<size_t>(n.gw) * n.gh);
    for (auto& x : n.v) x = rng.next_unit();
    return n;
}

// Per-frame working buffer in double precision, interleaved like Image.
struct Canvas {
    int size = 0, channels = 0;
    std::vector<double> v;

    Canvas(int s, int c) : size(s), channels(c), v(static_cast<size_t>(s) * s * c) {}
    double& at(int x, int y, int c) { return v[(static_cast<size_t>(y) * size + x) * channels + c]; }

    Image to_image() const {
        Image im = Image::make(size, size, channels);
        for (size_t i = 0; i < v.size(); ++i)
            im.px[i] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v[i]))));
        return im;
    }
};

struct SoftBlob {
    double cx, cy, r, delta;
};

// Fractional pixel coverage of the target silhouette; rect is exact where
// discs/triangles use a 3x3 supersample.
inline double shape_coverage(int shape, const PixelBox& b, int px, int py) {
    if (shape == 0) {
        double ox = std::min(b.x + b.w, px + 1.0) - std::max(b.x, static_cast<double>(px));
        double oy = std::min(b.y + b.h, py + 1.0) - std::max(b.y, static_cast<double>(py));
        return std::max(0.0, ox) * std::max(0.0, oy);
    }
    int hit = 0;
    for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
            double x = px + (sx + 0.5) / 3.0;
            double y = py + (sy + 0.5) / 3.0;
            if (shape == 1) {
                double nx = (x - b.cx()) / (b.w / 2);
                double ny = (y - b.cy()) / (b.h / 2);
                hit += nx * nx + ny * ny <= 1.0;
            } else {
                // Isoceles triangle: apex top-center, base along the box bottom.
                double u = (x - b.x) / b.w;
                double t = (y - b.y) / b.h;
                if (t >= 0 && t <= 1 && u >= 0 && u <= 1) hit += std::fabs(u - 0.5) <= t / 2;
            }
        }
    return hit / 9.0;
}

// Optional luminance modulation painted with the fill: an oriented gradient
// across the box plus a flat offset, both shared by all channels.
struct Shading {
    double grad = 0, theta = 0, offset = 0;
};

inline void paint_shape(Canvas& cv, int shape, const PixelBox& b, const double* color,
                        const Shading* sh = nullptr) {
    int x0 = std::max(0, static_cast<int>(std::floor(b.x)) - 1);
    int y0 = std::max(0, static_cast<int>(std::floor(b.y)) - 1);
    int x1 = std::min(cv.size, static_cast<int>(std::ceil(b.x + b.w)) + 1);
    int y1 = std::min(cv.size, static_cast<int>(std::ceil(b.y + b.h)) + 1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double a = shape_coverage(shape, b, x, y);
            if (a <= 0) continue;
            double shade = 0;
            if (sh) {
                double u = (x + 0.5 - b.x) / b.w - 0.5;
                double v = (y + 0.5 - b.y) / b.h - 0.5;
                shade = sh->offset + 2 * sh->grad * (u * std::cos(sh->theta) + v * std::sin(sh->theta));
            }
            for (int c = 0; c < cv.channels; ++c)
                cv.at(x, y, c) = cv.at(x, y, c) * (1 - a) + (color[c] + shade) * a;
        }
}

// Everything deterministic about one sequence, resolved once from the seed.
struct SceneState {
    int shape;
    double speed, heading;
    double extent, sv_phase, ar_phase;
    double margin;
    double cx, cy, vx, vy;
    double rgb_color[3];
    double tir_color;
    double grad_amp_rgb, grad_amp_tir, grad_theta0, grad_omega;
    double lum_amp_rgb, lum_amp_tir, lum_rate, lum_phase_rgb, lum_phase_tir;
    double twin_cx, twin_cy, twin_vx, twin_vy, twin_w, twin_h;
    NoiseGrid bg_rgb_base, bg_rgb_chan[3], bg_tir;
    std::vector<SoftBlob> blobs_rgb, blobs_tir;
    int occl_begin, occl_end;
};

inline std::vector<SoftBlob> make_blobs(CounterRng rng, int n, int size) {
    std::vector<SoftBlob> out;
    for (int i = 0; i < n; ++i) {
        SoftBlob b;
        b.cx = rng.uniform(0, size);
        b.cy = rng.uniform(0, size);
        b.r = rng.uniform(5, 20);
        b.delta = rng.uniform(14, 38) * (rng.next_below(2) ? 1 : -1);
        out.push_back(b);
    }
    return out;
}

inline void paint_blobs(Canvas& cv, const std::vector<SoftBlob>& blobs) {
    for (auto& b : blobs) {
        int x0 = std::max(0, static_cast<int>(b.cx - 3 * b.r));
        int y0 = std::max(0, static_cast<int>(b.cy - 3 * b.r));
        int x1 = std::min(cv.size, static_cast<int>(b.cx + 3 * b.r) + 1);
        int y1 = std::min(cv.size, static_cast<int>(b.cy + 3 * b.r) + 1);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                double dx = x - b.cx, dy = y - b.cy;
                double w = std::exp(-(dx * dx + dy * dy) / (2 * b.r * b.r));
                for (int c = 0; c < cv.channels; ++c) cv.at(x, y, c) += b.delta * w;
            }
    }
}

inline SceneState resolve_scene(const SceneSpec& spec) {
    CounterRng root(spec.seed);
    CounterRng rng = root.derive("scene");
    SceneState st;
    auto has = [&](SynthAttr a) {
        return std::find(spec.attributes.begin(), spec.attributes.end(), a) != spec.attributes.end();
    };
    if (spec.shape == "rect") st.shape = 0;
    else if (spec.shape == "disc") st.shape = 1;
    else if (spec.shape == "tri") st.shape = 2;
    else st.shape = static_cast<int>(rng.next_below(3));

    st.speed = rng.uniform(0.5, 1.5) * (has(SynthAttr::FastMotion) ? 6.0 : 1.0);
    st.heading = rng.uniform(0, 2 * M_PI);
    st.vx = st.speed * std::cos(st.heading);
    st.vy = st.speed * std::sin(st.heading);
    st.extent = rng.uniform(spec.min_extent, spec.max_extent) * spec.frame_size;
    st.sv_phase = rng.uniform(0, 2 * M_PI);
    st.ar_phase = rng.uniform(0, 2 * M_PI);
    st.margin = 0.75 * spec.max_extent * spec.frame_size + 6;
    st.cx = rng.uniform(st.margin, spec.frame_size - st.margin);
    st.cy = rng.uniform(st.margin, spec.frame_size - st.margin);

    // Both modalities keep the target far from the mid-gray background band;
    // all RGB channels sit on the same side so luminance cannot cancel.
    bool dark = rng.next_below(2) != 0;
    for (int c = 0; c < 3; ++c) st.rgb_color[c] = (dark ? 26.0 : 229.0) + rng.uniform(-8, 8);
    st.tir_color = rng.next_below(2) ? 238.0 + rng.uniform(-5, 5) : 14.0 + rng.uniform(-5, 5);

    // Surface shading drifts over time so the first-frame appearance goes
    // stale: an oriented gradient that slowly rotates plus a brightness swing.
    st.grad_amp_rgb = rng.uniform(14, 22);
    st.grad_amp_tir = rng.uniform(10, 16);
    st.grad_theta0 = rng.uniform(0, 2 * M_PI);
    st.grad_omega = rng.uniform(0.06, 0.16) * (rng.next_below(2) ? 1 : -1);
    st.lum_amp_rgb = rng.uniform(7, 11);
    st.lum_amp_tir = rng.uniform(6, 10);
    st.lum_rate = rng.uniform(0.2, 0.5);
    st.lum_phase_rgb = rng.uniform(0, 2 * M_PI);
    st.lum_phase_tir = rng.uniform(0, 2 * M_PI);

    // Decoy object: wanders independently, starts mirrored away from the
    // target, and keeps the target's first-frame geometry.
    double tspeed = rng.uniform(0.5, 1.5);
    double thead = rng.uniform(0, 2 * M_PI);
    st.twin_vx = tspeed * std::cos(thead);
    st.twin_vy = tspeed * std::sin(thead);
    double jx = rng.uniform(-0.12, 0.12) * spec.frame_size;
    double jy = rng.uniform(-0.12, 0.12) * spec.frame_size;
    st.twin_cx = std::clamp(spec.frame_size - st.cx + jx, st.margin, spec.frame_size - st.margin);
    st.twin_cy = std::clamp(spec.frame_size - st.cy + jy, st.margin, spec.frame_size - st.margin);
    double e0 = st.extent * (has(SynthAttr::ScaleVariation) ? 1 + 0.35 * std::sin(st.sv_phase) : 1.0);
    double ar0 = has(SynthAttr::AspectChange) ? std::exp(0.35 * std::sin(st.ar_phase)) : 1.0;
    st.twin_w = e0 * std::sqrt(ar0);
    st.twin_h = e0 / std::sqrt(ar0);

    st.bg_rgb_base = make_noise(root.derive("bg.rgb"), spec.frame_size, 24);
    for (int c = 0; c < 3; ++c) st.bg_rgb_chan[c] = make_noise(root.derive("bg.rgb.chan", static_cast<uint64_t>(c)), spec.frame_size, 36);
    st.bg_tir = make_noise(root.derive("bg.tir"), spec.frame_size, 24);
    int nblobs = static_cast<int>(spec.clutter * 14);
    st.blobs_rgb = make_blobs(root.derive("blobs.rgb"), nblobs, spec.frame_size);
    st.blobs_tir = make_blobs(root.derive("blobs.tir"), nblobs, spec.frame_size);
    st.occl_begin = spec.frames / 3;
    st.occl_end = (2 * spec.frames) / 3;
    return st;
}

}  // namespace detail

inline std::vector<PixelBox> load_boxes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error(strcat_("cannot open box file ", path.string()));
    std::vector<PixelBox> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        PixelBox b;
        char extra;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf %c", &b.x, &b.y, &b.w, &b.h, &extra) != 4)
            throw data_error(strcat_(path.string(), " line ", lineno, ": expected x,y,w,h"));
        out.push_back(b);
    }
    return out;
}

inline void save_boxes(const std::filesystem::path& path, const std::vector<PixelBox>& boxes) {
    std::ofstream out(path);
    if (!out) throw data_error(strcat_("cannot write box file ", path.string()));
    char buf[128];
    for (auto& b : boxes) {
        std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
        out << buf;
    }
}

// Renders one paired sequence into dir/{rgb,tir,groundtruth.txt,meta.txt}.
// Every output byte is a pure function of the spec.
inline void generate_sequence(const SceneSpec& spec, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    validate_spec(spec);
    fs::create_directories(dir / "rgb");
    fs::create_directories(dir / "tir");

    CounterRng root(spec.seed);
    detail::SceneState st = detail::resolve_scene(spec);
    auto has = [&](SynthAttr a) {
        return std::find(spec.attributes.begin(), spec.attributes.end(), a) != spec.attributes.end();
    };
    const int S = spec.frame_size;

    std::vector<PixelBox> gts;
    char name[32];
    for (int f = 0; f < spec.frames; ++f) {
        CounterRng frng = root.derive("frame", static_cast<uint64_t>(f));
        auto bounce = [&](double& cx, double& cy, double& vx, double& vy) {
            cx += vx;
            cy += vy;
            if (cx < st.margin) { cx = 2 * st.margin - cx; vx = -vx; }
            if (cx > S - st.margin) { cx = 2 * (S - st.margin) - cx; vx = -vx; }
            if (cy < st.margin) { cy = 2 * st.margin - cy; vy = -vy; }
            if (cy > S - st.margin) { cy = 2 * (S - st.margin) - cy; vy = -vy; }
        };
        if (f > 0) {
            bounce(st.cx, st.cy, st.vx, st.vy);
            bounce(st.twin_cx, st.twin_cy, st.twin_vx, st.twin_vy);
        }
        double phase = 2 * M_PI * f / spec.frames;
        double e = st.extent * (has(SynthAttr::ScaleVariation) ? 1 + 0.35 * std::sin(2 * phase + st.sv_phase) : 1.0);
        double ar = has(SynthAttr::AspectChange) ? std::exp(0.35 * std::sin(2 * phase + st.ar_phase)) : 1.0;
        PixelBox box;
        box.w = e * std::sqrt(ar);
        box.h = e / std::sqrt(ar);
        box.x = st.cx - box.w / 2;
        box.y = st.cy - box.h / 2;
        gts.push_back(box);

        detail::Canvas rgb(S, 3), tir(S, 1);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                double base = st.bg_rgb_base.at(x, y);
                for (int c = 0; c < 3; ++c)
                    rgb.at(x, y, c) = 95 + 70 * (0.75 * base + 0.25 * st.bg_rgb_chan[c].at(x, y));
                tir.at(x, y, 0) = 92 + 56 * st.bg_tir.at(x, y);
            }
        detail::paint_blobs(rgb, st.blobs_rgb);
        detail::paint_blobs(tir, st.blobs_tir);

        if (has(SynthAttr::SimilarObject)) {
            // The decoy wears the target's FIRST-frame appearance (fill and
            // shading frozen at f = 0) while the live target drifts away from
            // it; painted before the target so the target stays on top.
            PixelBox twin;
            twin.w = st.twin_w;
            twin.h = st.twin_h;
            twin.x = st.twin_cx - twin.w / 2;
            twin.y = st.twin_cy - twin.h / 2;
            detail::Shading tsh;
            tsh.theta = st.grad_theta0;
            tsh.grad = st.grad_amp_rgb;
            tsh.offset = st.lum_amp_rgb * std::sin(st.lum_phase_rgb);
            detail::paint_shape(rgb, st.shape, twin, st.rgb_color, &tsh);
            tsh.grad = st.grad_amp_tir;
            tsh.offset = st.lum_amp_tir * std::sin(st.lum_phase_tir);
            double twin_fill = st.tir_color;
            detail::paint_shape(tir, st.shape, twin, &twin_fill, &tsh);
        }

        double tir_fill = st.tir_color;
        if (has(SynthAttr::ThermalCrossover)) {
            // Match the local background so the thermal signature vanishes.
            double acc = 0;
            int n = 0;
            for (int y = std::max(0, static_cast<int>(box.y)); y < std::min(S, static_cast<int>(box.y + box.h)); ++y)
                for (int x = std::max(0, static_cast<int>(box.x)); x < std::min(S, static_cast<int>(box.x + box.w)); ++x) {
                    acc += tir.at(x, y, 0);
                    ++n;
                }
            tir_fill = n ? acc / n : 120.0;
        }
        detail::Shading sh;
        sh.theta = st.grad_theta0 + st.grad_omega * f;
        sh.grad = st.grad_amp_rgb;
        sh.offset = st.lum_amp_rgb * std::sin(st.lum_rate * f + st.lum_phase_rgb);
        detail::paint_shape(rgb, st.shape, box, st.rgb_color, &sh);
        sh.grad = st.grad_amp_tir;
        sh.offset = st.lum_amp_tir * std::sin(st.lum_rate * f + st.lum_phase_tir);
        // A crossed-over target must stay flat or its signature would survive.
        detail::paint_shape(tir, st.shape, box, &tir_fill,
                            has(SynthAttr::ThermalCrossover) ? nullptr : &sh);

        if (has(SynthAttr::Occlusion) && f >= st.occl_begin && f < st.occl_end) {
            PixelBox occ;
            occ.w = 0.75 * box.w;
            occ.h = 0.75 * box.h;
            occ.x = box.cx() + 0.20 * box.w * std::sin(phase * 3) - occ.w / 2;
            occ.y = box.cy() + 0.15 * box.h * std::cos(phase * 3) - occ.h / 2;
            double occ_rgb[3], occ_tir[1];
            for (int c = 0; c < 3; ++c) occ_rgb[c] = 95 + 70 * st.bg_rgb_base.at(occ.cx() + 37, occ.cy() + 59);
            occ_tir[0] = 92 + 56 * st.bg_tir.at(occ.cx() + 37, occ.cy() + 59);
            detail::paint_shape(rgb, 0, occ, occ_rgb);
            detail::paint_shape(tir, 0, occ, occ_tir);
        }

        CounterRng nrng = frng.derive("sensor");
        for (auto& v : rgb.v) v += nrng.uniform(-3, 3);
        for (auto& v : tir.v) v += nrng.uniform(-2, 2);

        if (has(SynthAttr::LowIllumRgb)) {
            CounterRng lrng = frng.derive("lowlight");
            for (auto& v : rgb.v) v = v * 0.05 + lrng.uniform(0, 6);
        } else if (has(SynthAttr::HighIllumRgb)) {
            CounterRng hrng = frng.derive("highlight");
            for (auto& v : rgb.v) v = 255 - (255 - v) * 0.05 - hrng.uniform(0, 6);
        }

        std::snprintf(name, sizeof name, "%06d.ppm", f);
        write_pnm((dir / "rgb" / name).string(), rgb.to_image());
        std::snprintf(name, sizeof name, "%06d.pgm", f);
        write_pnm((dir / "tir" / name).string(), tir.to_image());
    }

    save_boxes(dir / "groundtruth.txt", gts);
    std::ofstream meta(dir / "meta.txt");
    meta << "attributes=" << attrs_to_string(spec.attributes) << "\n"
         << "clutter=" << detail::format_double(spec.clutter) << "\n"
         << "frame_size=" << spec.frame_size << "\n"
         << "frames=" << spec.frames << "\n"
         << "seed=" << spec.seed << "\n"
         << "shape=" << spec.shape << "\n";
}

// ---------------------------------------------------------------------------
// Suite manifests: one file describing several batches of sequences.

struct SuiteSpec {
    std::string name;
    int count = 4;
    int frames = 0;   // 0 = inherit manifest default
    double clutter = -1;  // <0 = inherit
    std::string shape = "mixed";
    std::vector<SynthAttr> attributes;
};

struct Manifest {
    uint64_t seed = 1;
    int frames = 32;
    int frame_size = 256;
    double clutter = 0.5;
    std::vector<SuiteSpec> suites;
};

inline Manifest parse_manifest(std::istream& in) {
    Manifest m;
    std::vector<std::string> names;
    std::map<std::string, std::map<std::string, std::string>> suite_kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        auto eq = s.find('=');
        if (eq == std::string::npos) throw config_error(strcat_("manifest line ", lineno, ": expected key=value"));
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (key == "seed") {
            m.seed = static_cast<uint64_t>(std::stoull(val));
        } else if (key == "frames") {
            m.frames = detail::parse_int(key, val);
        } else if (key == "frame_size") {
            m.frame_size = detail::parse_int(key, val);
        } else if (key == "clutter") {
            m.clutter = detail::parse_double(key, val);
        } else if (key == "suites") {
            std::stringstream ss(val);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!detail::trim(item).empty()) names.push_back(detail::trim(item));
        } else if (key.rfind("suite.", 0) == 0) {
            auto dot = key.find('.', 6);
            if (dot == std::string::npos)
                throw config_error(strcat_("manifest line ", lineno, ": malformed key '", key, "'"));
            std::string suite = key.substr(6, dot - 6);
            std::string field = key.substr(dot + 1);
            if (field != "count" && field != "frames" && field != "attributes" && field != "shape" && field != "clutter")
                throw config_error(strcat_("manifest line ", lineno, ": unknown manifest key '", key, "'"));
            suite_kv[suite][field] = val;
        } else {
            throw config_error(strcat_("manifest line ", lineno, ": unknown manifest key '", key, "'"));
        }
    }
    if (names.empty()) throw config_error("manifest defines no suites");
    for (auto& n : names) {
        SuiteSpec s;
        s.name = n;
        auto it = suite_kv.find(n);
        if (it != suite_kv.end()) {
            for (auto& [field, val] : it->second) {
                if (field == "count") s.count = detail::parse_int(field, val);
                else if (field == "frames") s.frames = detail::parse_int(field, val);
                else if (field == "attributes") s.attributes = parse_attrs(val);
                else if (field == "shape") s.shape = val;
                else if (field == "clutter") s.clutter = detail::parse_double(field, val);
            }
            suite_kv.erase(it);
        }
        if (s.count < 1) throw config_error(strcat_("suite '", n, "' has count < 1"));
        m.suites.push_back(std::move(s));
    }
    if (!suite_kv.empty())
        throw config_error(strcat_("manifest configures undeclared suite '", suite_kv.begin()->first, "'"));
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error(strcat_("cannot open manifest ", path.string()));
    return parse_manifest(in);
}

// Writes every suite under out/<suite>/<suite>_NNN; per-sequence seeds are
// derived from (manifest seed, suite name, index) so suites are independent.
inline std::vector<std::filesystem::path> generate_from_manifest(const Manifest& m,
                                                                 const std::filesystem::path& out) {
    std::vector<std::filesystem::path> dirs;
    CounterRng root(m.seed);
    char num[16];
    for (auto& suite : m.suites) {
        for (int i = 0; i < suite.count; ++i) {
            SceneSpec spec;
            spec.seed = root.derive(suite.name, static_cast<uint64_t>(i)).next_u64();
            spec.frames = suite.frames > 0 ? suite.frames : m.frames;
            spec.frame_size = m.frame_size;
            spec.clutter = suite.clutter >= 0 ? suite.clutter : m.clutter;
            spec.shape = suite.shape;
            spec.attributes = suite.attributes;
            std::snprintf(num, sizeof num, "_%03d", i);
            std::filesystem::path dir = out / suite.name / (suite.name + num);
            generate_sequence(spec, dir);
            dirs.push_back(dir);
        }
    }
    return dirs;
}

// Any directory holding a groundtruth.txt is a sequence; sorted for stability.
inline std::vector<std::filesystem::path> discover_sequences(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<fs::path> out;
    if (!fs::exists(root)) throw data_error(strcat_("no such data directory ", root.string()));
    if (fs::exists(root / "groundtruth.txt")) out.push_back(root);
    for (auto& e : fs::recursive_directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace btm
