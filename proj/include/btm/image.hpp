#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "btm/common.hpp"
#include "btm/head.hpp"
#include "btm/tensor.hpp"

namespace btm {

// 8-bit raster, interleaved channels, row-major. channels is 1 (gray) or 3.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> px;

    static Image make(int w, int h, int c, uint8_t fill = 0) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3)) throw data_error(strcat_("bad image dims ", w, "x", h, "x", c));
        Image im;
        im.width = w;
        im.height = h;
        im.channels = c;
        im.px.assign(static_cast<size_t>(w) * h * c, fill);
        return im;
    }

    uint8_t at(int x, int y, int c) const {
        return px[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    void set(int x, int y, int c, uint8_t v) {
        px[(static_cast<size_t>(y) * width + x) * channels + c] = v;
    }
    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

namespace detail {

inline int read_pnm_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    if (ch == EOF || !std::isdigit(ch)) throw data_error(strcat_(path, ": malformed header"));
    int v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = in.get();
    }
    return v;
}

}  // namespace detail

// Reads binary P6 (rgb) or P5 (gray) images.
inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error(strcat_("cannot open image ", path));
    char m0 = static_cast<char>(in.get());
    char m1 = static_cast<char>(in.get());
    int channels;
    if (m0 == 'P' && m1 == '6') channels = 3;
    else if (m0 == 'P' && m1 == '5') channels = 1;
    else throw data_error(strcat_(path, ": not a binary P5/P6 file"));
    int w = detail::read_pnm_int(in, path);
    int h = detail::read_pnm_int(in, path);
    int maxval = detail::read_pnm_int(in, path);
    if (maxval != 255) throw data_error(strcat_(path, ": unsupported maxval ", maxval));
    if (w <= 0 || h <= 0) throw data_error(strcat_(path, ": bad dimensions"));
    Image im = Image::make(w, h, channels);
    in.read(reinterpret_cast<char*>(im.px.data()), static_cast<std::streamsize>(im.px.size()));
    if (in.gcount() != static_cast<std::streamsize>(im.px.size()))
        throw data_error(strcat_(path, ": truncated pixel data"));
    return im;
}

inline void write_pnm(const std::string& path, const Image& im) {
    if (im.channels != 1 && im.channels != 3) throw data_error("write_pnm: image must have 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error(strcat_("cannot write image ", path));
    out << (im.channels == 3 ? "P6" : "P5") << "\n" << im.width << " " << im.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(im.px.data()), static_cast<std::streamsize>(im.px.size()));
    if (!out) throw data_error(strcat_("short write on ", path));
}

// Square crop window in frame-pixel coordinates.
struct CropSpec {
    double cx = 0, cy = 0;
    double side = 0;
};

inline CropSpec make_crop(const PixelBox& box, double factor) {
    if (box.w <= 0 || box.h <= 0) throw data_error("make_crop: degenerate box");
    CropSpec c;
    c.cx = box.cx();
    c.cy = box.cy();
    c.side = factor * std::sqrt(box.w * box.h);
    if (c.side <= 0) throw data_error("make_crop: degenerate crop");
    return c;
}

// Box mapping between frame pixels and crop-normalized [0,1] coordinates.
// to_frame is the exact inverse of to_crop.
inline BBox to_crop(const CropSpec& c, const PixelBox& frame_box) {
    BBox b;
    b.cx = (frame_box.cx() - (c.cx - c.side / 2)) / c.side;
    b.cy = (frame_box.cy() - (c.cy - c.side / 2)) / c.side;
    b.w = frame_box.w / c.side;
    b.h = frame_box.h / c.side;
    return b;
}

inline PixelBox to_frame(const CropSpec& c, const BBox& crop_box) {
    PixelBox p;
    p.w = crop_box.w * c.side;
    p.h = crop_box.h * c.side;
    p.x = (c.cx - c.side / 2) + crop_box.cx * c.side - p.w / 2;
    p.y = (c.cy - c.side / 2) + crop_box.cy * c.side - p.h / 2;
    return p;
}

namespace detail {

inline void channel_means(const Image& im, double mean[3]) {
    double acc[3] = {0, 0, 0};
    size_t n = static_cast<size_t>(im.width) * im.height;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < im.channels; ++c) acc[c] += im.px[i * im.channels + c];
    for (int c = 0; c < im.channels; ++c) mean[c] = acc[c] / static_cast<double>(n);
}

}  // namespace detail

// Bilinear resample of a square frame window into an out_size x out_size
// tensor [out,out,3] scaled to [-1,1]. Samples outside the frame use the
// frame's per-channel mean; single-channel sources are replicated to 3
// channels so both modalities share the patch width.
inline Tensor crop_resize(const Image& im, const CropSpec& crop, int out_size) {
    if (out_size <= 0) throw data_error("crop_resize: bad output size");
    if (crop.side <= 0) throw data_error("crop_resize: degenerate crop");
    double mean[3];
    detail::channel_means(im, mean);
    Tensor t = Tensor::zeros({out_size, out_size, 3});
    auto& v = t.mutable_values();
    double x0 = crop.cx - crop.side / 2;
    double y0 = crop.cy - crop.side / 2;
    double step = crop.side / out_size;
    for (int oy = 0; oy < out_size; ++oy) {
        // Output pixel centers map into the frame's pixel-center grid.
        double sy = y0 + (oy + 0.5) * step - 0.5;
        int iy = static_cast<int>(std::floor(sy));
        double fy = sy - iy;
        for (int ox = 0; ox < out_size; ++ox) {
            double sx = x0 + (ox + 0.5) * step - 0.5;
            int ix = static_cast<int>(std::floor(sx));
            double fx = sx - ix;
            for (int c = 0; c < 3; ++c) {
                int sc = im.channels == 1 ? 0 : c;
                auto tap = [&](int x, int y) -> double {
                    return im.inside(x, y) ? static_cast<double>(im.at(x, y, sc)) : mean[sc];
                };
                double p = tap(ix, iy) * (1 - fx) * (1 - fy) + tap(ix + 1, iy) * fx * (1 - fy) +
                           tap(ix, iy + 1) * (1 - fx) * fy + tap(ix + 1, iy + 1) * fx * fy;
                v[(static_cast<size_t>(oy) * out_size + ox) * 3 + c] = p / 127.5 - 1.0;
            }
        }
    }
    return t;
}

}  // namespace btm
