#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "btm/image.hpp"
#include "btm/rng.hpp"

using namespace btm;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    fs::path p = fs::temp_directory_path() / "btm_image_test";
    fs::create_directories(p);
    return p;
}

Image random_image(CounterRng& rng, int w, int h, int c) {
    Image im = Image::make(w, h, c);
    for (auto& p : im.px) p = static_cast<uint8_t>(rng.next_below(256));
    return im;
}

// Reference sampler mirroring the production convention: pixel centers at
// integer coordinates, out-of-frame taps replaced by the channel mean.
double ref_sample(const Image& im, double sx, double sy, int ch, double mean) {
    int ix = static_cast<int>(std::floor(sx));
    int iy = static_cast<int>(std::floor(sy));
    double fx = sx - ix, fy = sy - iy;
    auto tap = [&](int x, int y) {
        return im.inside(x, y) ? static_cast<double>(im.at(x, y, ch)) : mean;
    };
    return tap(ix, iy) * (1 - fx) * (1 - fy) + tap(ix + 1, iy) * fx * (1 - fy) +
           tap(ix, iy + 1) * (1 - fx) * fy + tap(ix + 1, iy + 1) * fx * fy;
}

}  // namespace

TEST_CASE("pnm files round-trip byte for byte") {
    CounterRng rng(31);
    auto dir = tmp_dir();
    for (int channels : {3, 1}) {
        Image im = random_image(rng, 37, 23, channels);
        fs::path p = dir / (channels == 3 ? "rt.ppm" : "rt.pgm");
        write_pnm(p.string(), im);
        Image back = read_pnm(p.string());
        REQUIRE(back.width == im.width);
        REQUIRE(back.height == im.height);
        REQUIRE(back.channels == im.channels);
        REQUIRE(back.px == im.px);

        // Second write of the loaded image must reproduce the file exactly.
        fs::path p2 = dir / "rt2.bin";
        write_pnm(p2.string(), back);
        std::ifstream a(p, std::ios::binary), b(p2.string(), std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        REQUIRE(sa == sb);
    }
}

TEST_CASE("pnm header parsing accepts comments and rejects damage") {
    auto dir = tmp_dir();
    fs::path p = dir / "hdr.ppm";
    {
        std::ofstream out(p, std::ios::binary);
        out << "P6\n# a comment\n2 1\n# another\n255\n";
        out.write("\x01\x02\x03\x04\x05\x06", 6);
    }
    Image im = read_pnm(p.string());
    REQUIRE(im.width == 2);
    REQUIRE(im.height == 1);
    REQUIRE(im.at(1, 0, 2) == 6);

    auto write_bytes = [&](const std::string& bytes) {
        fs::path q = dir / "bad.ppm";
        std::ofstream out(q, std::ios::binary);
        out << bytes;
        out.close();
        return q;
    };
    REQUIRE_THROWS_AS(read_pnm((dir / "missing.ppm").string()), data_error);
    REQUIRE_THROWS_AS(read_pnm(write_bytes("P4\n2 2\n255\n0000").string()), data_error);
    REQUIRE_THROWS_AS(read_pnm(write_bytes("P6\n2 2\n127\n0000").string()), data_error);
    REQUIRE_THROWS_AS(read_pnm(write_bytes("P6\n2 2\n255\nxy").string()), data_error);
    REQUIRE_THROWS_AS(read_pnm(write_bytes("P6\nzz 2\n255\n").string()), data_error);
}

TEST_CASE("crop spec geometry and box mapping round-trip") {
    CounterRng rng(32);
    PixelBox box{40, 60, 30, 20};
    CropSpec c = make_crop(box, 2.0);
    REQUIRE(c.cx == Catch::Approx(55.0));
    REQUIRE(c.cy == Catch::Approx(70.0));
    REQUIRE(c.side == Catch::Approx(2.0 * std::sqrt(600.0)));
    REQUIRE_THROWS_AS(make_crop(PixelBox{0, 0, 0, 5}, 2.0), data_error);

    for (int trial = 0; trial < 2000; ++trial) {
        CropSpec cs;
        cs.cx = rng.uniform(-50, 300);
        cs.cy = rng.uniform(-50, 300);
        cs.side = rng.uniform(5, 400);
        PixelBox pb{rng.uniform(-100, 400), rng.uniform(-100, 400), rng.uniform(1, 150), rng.uniform(1, 150)};
        PixelBox back = to_frame(cs, to_crop(cs, pb));
        REQUIRE(std::fabs(back.x - pb.x) < 1e-9);
        REQUIRE(std::fabs(back.y - pb.y) < 1e-9);
        REQUIRE(std::fabs(back.w - pb.w) < 1e-9);
        REQUIRE(std::fabs(back.h - pb.h) < 1e-9);

        BBox nb{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
        BBox nback = to_crop(cs, to_frame(cs, nb));
        REQUIRE(std::fabs(nback.cx - nb.cx) < 1e-9);
        REQUIRE(std::fabs(nback.w - nb.w) < 1e-9);
    }
}

TEST_CASE("identity crop reproduces the source pixels") {
    CounterRng rng(33);
    Image im = random_image(rng, 16, 16, 3);
    CropSpec c{8.0, 8.0, 16.0};  // exactly the full frame
    Tensor t = crop_resize(im, c, 16);
    REQUIRE(t.shape() == Shape{16, 16, 3});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int ch = 0; ch < 3; ++ch)
                REQUIRE(t.get(y, x, ch) == Catch::Approx(im.at(x, y, ch) / 127.5 - 1.0).margin(1e-12));
}

TEST_CASE("crop sampling matches the reference bilinear sampler") {
    CounterRng rng(34);
    for (int trial = 0; trial < 12; ++trial) {
        int ch = trial % 2 ? 1 : 3;
        Image im = random_image(rng, 24, 19, ch);
        double mean[3];
        btm::detail::channel_means(im, mean);
        CropSpec c;
        c.cx = rng.uniform(-5, 30);
        c.cy = rng.uniform(-5, 25);
        c.side = rng.uniform(4, 50);
        int out = 8;
        Tensor t = crop_resize(im, c, out);
        for (int oy = 0; oy < out; ++oy)
            for (int ox = 0; ox < out; ++ox)
                for (int cc = 0; cc < 3; ++cc) {
                    double sx = c.cx - c.side / 2 + (ox + 0.5) * c.side / out - 0.5;
                    double sy = c.cy - c.side / 2 + (oy + 0.5) * c.side / out - 0.5;
                    int src = ch == 1 ? 0 : cc;
                    double want = ref_sample(im, sx, sy, src, mean[src]) / 127.5 - 1.0;
                    REQUIRE(t.get(oy, ox, cc) == Catch::Approx(want).margin(1e-12));
                }
    }
}

TEST_CASE("fully out-of-frame crops collapse to the channel mean") {
    CounterRng rng(35);
    Image im = random_image(rng, 20, 20, 3);
    double mean[3];
    btm::detail::channel_means(im, mean);
    Tensor t = crop_resize(im, CropSpec{1000.0, 1000.0, 40.0}, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c)
                REQUIRE(t.get(y, x, c) == Catch::Approx(mean[c] / 127.5 - 1.0).margin(1e-12));
}

TEST_CASE("single-channel sources replicate across rgb outputs") {
    CounterRng rng(36);
    Image im = random_image(rng, 20, 20, 1);
    Tensor t = crop_resize(im, CropSpec{10.0, 10.0, 14.0}, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            REQUIRE(t.get(y, x, 0) == t.get(y, x, 1));
            REQUIRE(t.get(y, x, 0) == t.get(y, x, 2));
        }
    REQUIRE_THROWS_AS(crop_resize(im, CropSpec{5.0, 5.0, 0.0}, 4), data_error);
    REQUIRE_THROWS_AS(crop_resize(im, CropSpec{5.0, 5.0, 8.0}, 0), data_error);
}
