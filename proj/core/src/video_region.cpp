#include "adlfusion/video_region.hpp"

#include <algorithm>
#include <cmath>

#include "adlfusion/errors.hpp"

namespace adlfusion {

BoundingBox full_activity_bbox(std::span<const DetectionBox> boxes) {
    if (boxes.empty())
        throw DataError("full_activity_bbox: no detections to bound");
    BoundingBox bb{boxes[0].x1, boxes[0].y1, boxes[0].x2, boxes[0].y2};
    for (const auto& b : boxes.subspan(1)) {
        bb.x1 = std::min(bb.x1, b.x1);
        bb.y1 = std::min(bb.y1, b.y1);
        bb.x2 = std::max(bb.x2, b.x2);
        bb.y2 = std::max(bb.y2, b.y2);
    }
    return bb;
}

ActivityCrop squarify(const BoundingBox& box, std::size_t image_width,
                      std::size_t image_height) {
    if (!(box.width() > 0.0) || !(box.height() > 0.0))
        throw DataError("squarify: bounding box must have positive extent");
    ActivityCrop crop;
    crop.side = std::max(box.width(), box.height());
    crop.x0 = 0.5 * (box.x1 + box.x2) - 0.5 * crop.side;
    crop.y0 = 0.5 * (box.y1 + box.y2) - 0.5 * crop.side;
    crop.image_width = image_width;
    crop.image_height = image_height;
    return crop;
}

namespace {

// Bilinear sample of one channel at image coordinate (x, y), where pixel
// (i, j) covers [j, j+1) x [i, i+1).  Sample points outside the image take
// the pad color; interpolation neighbors that stick out are clamped so the
// in-image content is replicated, not darkened, at borders.
double sample_bilinear(const DenseTensor& frames, std::size_t t, double y, double x,
                       std::size_t ch, const ActivityCrop& crop) {
    std::size_t height = frames.dim(1), width = frames.dim(2);
    if (x < 0.0 || y < 0.0 || x >= static_cast<double>(width) || y >= static_cast<double>(height))
        return crop.pad_color[ch];
    double u = x - 0.5, v = y - 0.5;
    double fu = std::floor(u), fv = std::floor(v);
    double ax = u - fu, ay = v - fv;
    long x0 = static_cast<long>(fu), y0 = static_cast<long>(fv);
    auto clampx = [&](long i) {
        return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(width) - 1));
    };
    auto clampy = [&](long i) {
        return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(height) - 1));
    };
    auto px = [&](std::size_t iy, std::size_t ix) {
        return frames[((t * height + iy) * width + ix) * 3 + ch];
    };
    double top = (1.0 - ax) * px(clampy(y0), clampx(x0)) + ax * px(clampy(y0), clampx(x0 + 1));
    double bot = (1.0 - ax) * px(clampy(y0 + 1), clampx(x0)) + ax * px(clampy(y0 + 1), clampx(x0 + 1));
    return (1.0 - ay) * top + ay * bot;
}

} // namespace

DenseTensor crop_frames(const DenseTensor& frames, const ActivityCrop& crop,
                        std::size_t out_size) {
    if (frames.rank() != 4 || frames.dim(3) != 3)
        throw DimensionError("crop_frames expects frames of shape [T, H, W, 3], got " +
                             shape_string(frames.shape()));
    if (out_size == 0) throw ConfigError("crop_frames: output size must be positive");
    if (!(crop.side > 0.0)) throw DataError("crop_frames: crop side must be positive");

    std::size_t t_len = frames.dim(0);
    DenseTensor out({t_len, out_size, out_size, 3});
    double scale = crop.side / static_cast<double>(out_size);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t r = 0; r < out_size; ++r) {
            double y = crop.y0 + (static_cast<double>(r) + 0.5) * scale;
            for (std::size_t c = 0; c < out_size; ++c) {
                double x = crop.x0 + (static_cast<double>(c) + 0.5) * scale;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    out[((t * out_size + r) * out_size + c) * 3 + ch] =
                        sample_bilinear(frames, t, y, x, ch, crop);
            }
        }
    return out;
}

} // namespace adlfusion
