#include <doctest.h>

#include <sstream>
#include <vector>

#include "adlfusion/errors.hpp"
#include "adlfusion/video_region.hpp"

using namespace adlfusion;

namespace {

DetectionBox person_box(double x1, double y1, double x2, double y2, long frame = 0) {
    DetectionBox b;
    b.video_id = "clip";
    b.frame = frame;
    b.class_id = kPersonClassId;
    b.class_name = "person";
    b.x1 = x1;
    b.y1 = y1;
    b.x2 = x2;
    b.y2 = y2;
    b.confidence = 0.9;
    return b;
}

double at(const DenseTensor& t, std::size_t f, std::size_t r, std::size_t c, std::size_t ch) {
    return t[((f * t.dim(1) + r) * t.dim(2) + c) * 3 + ch];
}

} // namespace

TEST_CASE("activity bbox is the union of all person boxes") {
    std::vector<DetectionBox> boxes{
        person_box(10, 20, 30, 60, 0),
        person_box(5, 25, 28, 55, 1),
        person_box(12, 18, 40, 50, 2),
    };
    BoundingBox bb = full_activity_bbox(boxes);
    CHECK(bb.x1 == 5.0);
    CHECK(bb.y1 == 18.0);
    CHECK(bb.x2 == 40.0);
    CHECK(bb.y2 == 60.0);

    std::vector<DetectionBox> none;
    CHECK_THROWS_AS((void)full_activity_bbox(none), DataError);
}

TEST_CASE("squarify grows the short side around the center") {
    BoundingBox wide{10, 20, 30, 28}; // 20 x 8
    ActivityCrop crop = squarify(wide, 64, 48);
    CHECK(crop.side == 20.0);
    CHECK(crop.x0 == 10.0);
    CHECK(crop.y0 == 24.0 - 10.0);
    CHECK(crop.image_width == 64);
    CHECK(crop.image_height == 48);

    BoundingBox tall{0, 0, 4, 10};
    ActivityCrop crop2 = squarify(tall, 32, 32);
    CHECK(crop2.side == 10.0);
    CHECK(crop2.x0 == 2.0 - 5.0); // may extend past the left edge
    CHECK(crop2.y0 == 0.0);

    BoundingBox flat{5, 5, 9, 5};
    CHECK_THROWS_AS((void)squarify(flat, 32, 32), DataError);
}

TEST_CASE("cropping the full image at native size is the identity") {
    DenseTensor frames({2, 3, 3, 3});
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = static_cast<double>(i);
    ActivityCrop crop;
    crop.x0 = 0;
    crop.y0 = 0;
    crop.side = 3;
    crop.image_width = 3;
    crop.image_height = 3;
    DenseTensor out = crop_frames(frames, crop, 3);
    CHECK(out == frames);
}

TEST_CASE("a 2x upscale blends neighbors at quarter weights") {
    DenseTensor frames({1, 2, 2, 3});
    double v[2][2] = {{0.0, 8.0}, {4.0, 12.0}};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch)
                frames[((r * 2) + c) * 3 + ch] = v[r][c];

    ActivityCrop crop;
    crop.x0 = 0;
    crop.y0 = 0;
    crop.side = 2;
    crop.image_width = 2;
    crop.image_height = 2;
    DenseTensor out = crop_frames(frames, crop, 4);

    // Corners replicate, interior samples mix rows and columns 0.75 / 0.25.
    CHECK(at(out, 0, 0, 0, 0) == 0.0);
    CHECK(at(out, 0, 0, 3, 0) == 8.0);
    CHECK(at(out, 0, 3, 0, 0) == 4.0);
    CHECK(at(out, 0, 3, 3, 0) == 12.0);
    CHECK(at(out, 0, 0, 1, 0) == 2.0);
    CHECK(at(out, 0, 1, 0, 0) == 1.0);
    CHECK(at(out, 0, 1, 1, 0) == 3.0);
    CHECK(at(out, 0, 2, 2, 0) == 9.0);
}

TEST_CASE("samples outside the image take the pad color") {
    DenseTensor frames({1, 2, 2, 3});
    frames.fill(10.0);
    ActivityCrop crop;
    crop.x0 = -2;
    crop.y0 = -2;
    crop.side = 6;
    crop.image_width = 2;
    crop.image_height = 2;
    DenseTensor out = crop_frames(frames, crop, 3);
    // Sample points land at -1, 1 and 3 along each axis; only (1, 1) is
    // inside the image.
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double expect = (r == 1 && c == 1) ? 10.0 : 128.0;
                CHECK(at(out, 0, r, c, ch) == expect);
            }

    ActivityCrop custom = crop;
    custom.pad_color = {1.0, 2.0, 3.0};
    DenseTensor out2 = crop_frames(frames, custom, 3);
    CHECK(at(out2, 0, 0, 0, 0) == 1.0);
    CHECK(at(out2, 0, 0, 0, 1) == 2.0);
    CHECK(at(out2, 0, 0, 0, 2) == 3.0);
}

TEST_CASE("border samples clamp interpolation neighbors") {
    // One pixel: every in-image sample must reproduce its value exactly even
    // though the bilinear neighbors stick out on all sides.
    DenseTensor frames({1, 1, 1, 3});
    frames[0] = 7.0;
    frames[1] = 7.0;
    frames[2] = 7.0;
    ActivityCrop crop;
    crop.x0 = 0;
    crop.y0 = 0;
    crop.side = 1;
    crop.image_width = 1;
    crop.image_height = 1;
    DenseTensor out = crop_frames(frames, crop, 5);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 7.0);
}

TEST_CASE("crop rejects malformed inputs") {
    DenseTensor ok({1, 2, 2, 3});
    ActivityCrop crop;
    crop.x0 = 0;
    crop.y0 = 0;
    crop.side = 2;
    CHECK_THROWS_AS((void)crop_frames(DenseTensor({2, 2, 3}), crop, 2), DimensionError);
    CHECK_THROWS_AS((void)crop_frames(DenseTensor({1, 2, 2, 4}), crop, 2), DimensionError);
    CHECK_THROWS_AS((void)crop_frames(ok, crop, 0), ConfigError);
    ActivityCrop degenerate = crop;
    degenerate.side = 0;
    CHECK_THROWS_AS((void)crop_frames(ok, degenerate, 2), DataError);
}
