#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "adlfusion/detections.hpp"
#include "adlfusion/tensor.hpp"

namespace adlfusion {

struct BoundingBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
};

// Smallest box covering every detection across all frames: elementwise min
// over top-left corners, max over bottom-right.  Intended for person
// detections so the crop covers the whole activity.
BoundingBox full_activity_bbox(std::span<const DetectionBox> boxes);

// A square pixel region over the source image.  May extend past the image;
// out-of-image samples are padded with a uniform gray.
struct ActivityCrop {
    double x0 = 0, y0 = 0;  // top-left of the square, may be negative
    double side = 0;
    std::size_t image_width = 0, image_height = 0;
    std::array<double, 3> pad_color{128.0, 128.0, 128.0};
};

// Expands `box` to a square of side max(width, height) about its center.
ActivityCrop squarify(const BoundingBox& box, std::size_t image_width,
                      std::size_t image_height);

// Crops frames [T, H, W, 3] to the square region and resizes to
// [T, out_size, out_size, 3] with bilinear sampling.  Sampling aligns the
// image corners as areas (pixel centers at half-integer offsets), so a 2x
// upscale blends neighbors at weights 0.25 / 0.75.  Samples outside the
// image take the pad color.
DenseTensor crop_frames(const DenseTensor& frames, const ActivityCrop& crop,
                        std::size_t out_size);

} // namespace adlfusion
