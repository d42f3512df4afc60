#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace adlfusion {

// One detector output record, image pixel coordinates, corners ordered
// (x1, y1) top-left / (x2, y2) bottom-right.
struct DetectionBox {
    std::string video_id;
    long frame = 0;
    int class_id = 0;
    std::string class_name;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double confidence = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
};

// In COCO numbering (the detector's native ids) the person class is 0.
inline constexpr int kPersonClassId = 0;

// Detections travel as JSON lines:
//   {"video_id": ..., "frame": n, "class_id": id, "class_name": ...,
//    "bbox": [x1, y1, x2, y2], "conf": c}
std::vector<DetectionBox> read_detections_jsonl(std::istream& in,
                                                const std::string& origin = "<stream>");
std::vector<DetectionBox> read_detections_jsonl(const std::filesystem::path& path);
void write_detections_jsonl(std::ostream& out, const std::vector<DetectionBox>& boxes);
void write_detections_jsonl(const std::filesystem::path& path,
                            const std::vector<DetectionBox>& boxes);

// The object classes the context branch reasons over.  A fixed-order list of
// (coco id, name); objects are indexed by their position here.
struct Vocabulary {
    std::vector<std::pair<int, std::string>> classes;

    std::size_t size() const { return classes.size(); }
    std::optional<std::size_t> index_of(int class_id) const;
    const std::string& name(std::size_t index) const { return classes[index].second; }
};

// The 40 home-relevant COCO classes used by default (person excluded; it
// drives cropping, not object context).
const Vocabulary& default_home_vocabulary();

Vocabulary load_vocabulary(const std::filesystem::path& json_path);

} // namespace adlfusion
