#include "adlfusion/detections.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adlfusion/errors.hpp"

namespace adlfusion {

std::vector<DetectionBox> read_detections_jsonl(std::istream& in, const std::string& origin) {
    std::vector<DetectionBox> boxes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(origin + ":" + std::to_string(lineno) +
                            ": malformed detection record: " + e.what());
        }
        DetectionBox box;
        try {
            box.video_id = j.at("video_id").get<std::string>();
            box.frame = j.at("frame").get<long>();
            box.class_id = j.at("class_id").get<int>();
            box.class_name = j.at("class_name").get<std::string>();
            const auto& bbox = j.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4)
                throw DataError(origin + ":" + std::to_string(lineno) +
                                ": bbox must be [x1, y1, x2, y2]");
            box.x1 = bbox[0].get<double>();
            box.y1 = bbox[1].get<double>();
            box.x2 = bbox[2].get<double>();
            box.y2 = bbox[3].get<double>();
            box.confidence = j.at("conf").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(origin + ":" + std::to_string(lineno) +
                            ": incomplete detection record: " + e.what());
        }
        if (!(box.x1 < box.x2) || !(box.y1 < box.y2))
            throw DataError(origin + ":" + std::to_string(lineno) +
                            ": degenerate bbox (corners must be ordered, positive area)");
        boxes.push_back(std::move(box));
    }
    return boxes;
}

std::vector<DetectionBox> read_detections_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open detections file " + path.string());
    return read_detections_jsonl(in, path.string());
}

void write_detections_jsonl(std::ostream& out, const std::vector<DetectionBox>& boxes) {
    for (const auto& b : boxes) {
        nlohmann::json j{{"video_id", b.video_id},
                         {"frame", b.frame},
                         {"class_id", b.class_id},
                         {"class_name", b.class_name},
                         {"bbox", {b.x1, b.y1, b.x2, b.y2}},
                         {"conf", b.confidence}};
        out << j.dump() << '\n';
    }
}

void write_detections_jsonl(const std::filesystem::path& path,
                            const std::vector<DetectionBox>& boxes) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write detections file " + path.string());
    write_detections_jsonl(out, boxes);
}

std::optional<std::size_t> Vocabulary::index_of(int class_id) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].first == class_id) return i;
    return std::nullopt;
}

const Vocabulary& default_home_vocabulary() {
    static const Vocabulary vocab{{
        {13, "bench"},        {39, "bottle"},     {40, "wine glass"},  {41, "cup"},
        {42, "fork"},         {43, "knife"},      {44, "spoon"},       {45, "bowl"},
        {46, "banana"},       {47, "apple"},      {48, "sandwich"},    {49, "orange"},
        {50, "broccoli"},     {51, "carrot"},     {52, "hot dog"},     {53, "pizza"},
        {54, "donut"},        {55, "cake"},       {56, "chair"},       {57, "couch"},
        {58, "potted plant"}, {59, "bed"},        {60, "dining table"},{61, "toilet"},
        {62, "tv"},           {63, "laptop"},     {64, "mouse"},       {65, "remote"},
        {66, "keyboard"},     {67, "cell phone"}, {68, "microwave"},   {69, "oven"},
        {70, "toaster"},      {71, "sink"},       {72, "refrigerator"},{73, "book"},
        {75, "vase"},         {76, "scissors"},   {78, "hair drier"},  {79, "toothbrush"},
    }};
    return vocab;
}

Vocabulary load_vocabulary(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open vocabulary file " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocabulary " + json_path.string() + ": " + e.what());
    }
    Vocabulary vocab;
    if (!j.is_array()) throw DataError("vocabulary must be an array of {id, name} objects");
    for (const auto& entry : j) {
        try {
            vocab.classes.emplace_back(entry.at("id").get<int>(),
                                       entry.at("name").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("vocabulary entry missing id/name: " + std::string(e.what()));
        }
    }
    if (vocab.classes.empty()) throw DataError("vocabulary " + json_path.string() + " is empty");
    return vocab;
}

} // namespace adlfusion
