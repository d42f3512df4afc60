#include "adlfusion/object_context.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "adlfusion/errors.hpp"

namespace adlfusion {

namespace {

// Column variance below this is treated as zero (the entries are ratios in
// [0, 1], so genuine variance is many orders of magnitude larger).
constexpr double kVarianceFloor = 1e-24;

} // namespace

std::size_t GridMask::count() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

GridMask temporal_object_mask(std::span<const DetectionBox> boxes, const ActivityCrop& crop,
                              std::size_t grid_rows, std::size_t grid_cols) {
    if (grid_rows == 0 || grid_cols == 0)
        throw ConfigError("temporal_object_mask: grid must be non-empty");
    if (!(crop.side > 0.0)) throw DataError("temporal_object_mask: crop side must be positive");
    GridMask mask(grid_rows, grid_cols);
    double cell_h = crop.side / static_cast<double>(grid_rows);
    double cell_w = crop.side / static_cast<double>(grid_cols);
    for (const auto& box : boxes) {
        // Box corners in crop coordinates.
        double bx1 = box.x1 - crop.x0, bx2 = box.x2 - crop.x0;
        double by1 = box.y1 - crop.y0, by2 = box.y2 - crop.y0;
        if (bx2 <= 0.0 || by2 <= 0.0 || bx1 >= crop.side || by1 >= crop.side) continue;
        for (std::size_t r = 0; r < grid_rows; ++r) {
            double cy1 = static_cast<double>(r) * cell_h, cy2 = cy1 + cell_h;
            if (std::min(by2, cy2) <= std::max(by1, cy1)) continue;
            for (std::size_t c = 0; c < grid_cols; ++c) {
                double cx1 = static_cast<double>(c) * cell_w, cx2 = cx1 + cell_w;
                if (std::min(bx2, cx2) > std::max(bx1, cx1)) mask.cell(r, c) = 1;
            }
        }
    }
    return mask;
}

GridMask mask_union(const GridMask& a, const GridMask& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw DimensionError("mask_union: grids disagree (" + std::to_string(a.rows) + "x" +
                             std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                             std::to_string(b.cols) + ")");
    GridMask out = a;
    for (std::size_t i = 0; i < out.cells.size(); ++i)
        out.cells[i] = out.cells[i] | b.cells[i];
    return out;
}

GridMask group_mask(std::span<const GridMask> members) {
    if (members.empty()) throw DataError("group_mask: no member masks");
    GridMask out = members[0];
    for (const auto& m : members.subspan(1)) out = mask_union(out, m);
    return out;
}

GridMask resize_mask(const GridMask& mask, std::size_t out_rows, std::size_t out_cols) {
    if (out_rows == 0 || out_cols == 0)
        throw ConfigError("resize_mask: target grid must be non-empty");
    if (mask.rows == 0 || mask.cols == 0)
        throw DataError("resize_mask: source grid is empty");
    GridMask out(out_rows, out_cols);
    for (std::size_t r = 0; r < out_rows; ++r) {
        // Source row span feeding output row r (see header for the mapping).
        std::size_t r0, r1;
        if (mask.rows >= out_rows) {
            r0 = (r * mask.rows + out_rows - 1) / out_rows;
            r1 = ((r + 1) * mask.rows + out_rows - 1) / out_rows;
        } else {
            r0 = r * mask.rows / out_rows;
            r1 = r0 + 1;
        }
        for (std::size_t c = 0; c < out_cols; ++c) {
            std::size_t c0, c1;
            if (mask.cols >= out_cols) {
                c0 = (c * mask.cols + out_cols - 1) / out_cols;
                c1 = ((c + 1) * mask.cols + out_cols - 1) / out_cols;
            } else {
                c0 = c * mask.cols / out_cols;
                c1 = c0 + 1;
            }
            std::uint8_t v = 0;
            for (std::size_t rr = r0; rr < r1 && !v; ++rr)
                for (std::size_t cc = c0; cc < c1; ++cc)
                    if (mask.cell(rr, cc)) { v = 1; break; }
            out.cell(r, c) = v;
        }
    }
    return out;
}

IncidenceMatrix build_incidence(std::span<const DetectionBox> boxes,
                                const std::map<std::string, std::string>& video_labels,
                                double confidence_threshold, const Vocabulary& vocabulary) {
    if (vocabulary.size() == 0) throw ConfigError("build_incidence: empty vocabulary");
    IncidenceMatrix inc;
    inc.vocabulary = vocabulary;

    // std::map iterates keys sorted, which fixes the video and activity
    // order independently of the detection stream.
    for (const auto& [video, activity] : video_labels) {
        inc.video_ids.push_back(video);
        if (std::find(inc.activities.begin(), inc.activities.end(), activity) ==
            inc.activities.end())
            inc.activities.push_back(activity);
    }
    std::sort(inc.activities.begin(), inc.activities.end());
    inc.video_activity.resize(inc.video_ids.size());
    for (std::size_t v = 0; v < inc.video_ids.size(); ++v) {
        const std::string& act = video_labels.at(inc.video_ids[v]);
        inc.video_activity[v] = static_cast<std::size_t>(
            std::find(inc.activities.begin(), inc.activities.end(), act) -
            inc.activities.begin());
    }

    inc.presence.assign(vocabulary.size() * inc.video_ids.size(), 0);
    for (const auto& box : boxes) {
        if (box.confidence < confidence_threshold) {
            ++inc.ignored_low_confidence;
            continue;
        }
        auto object = vocabulary.index_of(box.class_id);
        if (!object) {
            ++inc.ignored_out_of_vocabulary;
            continue;
        }
        auto it = std::lower_bound(inc.video_ids.begin(), inc.video_ids.end(), box.video_id);
        if (it == inc.video_ids.end() || *it != box.video_id) {
            ++inc.rejected_unknown_video;
            continue;
        }
        std::size_t video = static_cast<std::size_t>(it - inc.video_ids.begin());
        inc.presence[*object * inc.video_ids.size() + video] = 1;
    }
    return inc;
}

namespace {

ActivityObjectCounts counts_from_presence(const IncidenceMatrix& inc,
                                          const std::vector<std::uint8_t>& presence,
                                          std::size_t entities) {
    ActivityObjectCounts counts;
    counts.activities = inc.activities;
    std::size_t acts = inc.activities.size();
    std::size_t videos = inc.video_count();
    counts.s = DenseTensor({acts, entities});
    counts.p = DenseTensor({acts, entities});
    counts.empty_column.assign(entities, 0);
    for (std::size_t e = 0; e < entities; ++e)
        for (std::size_t v = 0; v < videos; ++v)
            if (presence[e * videos + v])
                counts.s[inc.video_activity[v] * entities + e] += 1.0;
    for (std::size_t e = 0; e < entities; ++e) {
        double total = 0.0;
        for (std::size_t a = 0; a < acts; ++a) total += counts.s[a * entities + e];
        if (total == 0.0) {
            counts.empty_column[e] = 1;
            continue;
        }
        for (std::size_t a = 0; a < acts; ++a)
            counts.p[a * entities + e] = counts.s[a * entities + e] / total;
    }
    return counts;
}

} // namespace

ActivityObjectCounts activity_counts(const IncidenceMatrix& inc) {
    return counts_from_presence(inc, inc.presence, inc.object_count());
}

ActivityObjectCounts activity_counts(const IncidenceMatrix& inc,
                                     const std::vector<std::vector<std::size_t>>& groups) {
    std::size_t videos = inc.video_count();
    std::vector<std::uint8_t> presence(groups.size() * videos, 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw DataError("activity_counts: empty group");
        for (std::size_t member : groups[g]) {
            if (member >= inc.object_count())
                throw DataError("activity_counts: group member " + std::to_string(member) +
                                " outside the vocabulary");
            for (std::size_t v = 0; v < videos; ++v)
                presence[g * videos + v] |= inc.presence[member * videos + v];
        }
    }
    return counts_from_presence(inc, presence, groups.size());
}

std::optional<double> pearson_column_correlation(const DenseTensor& p, std::size_t col_a,
                                                 std::size_t col_b) {
    std::size_t acts = p.dim(0), entities = p.dim(1);
    if (acts < 2) return std::nullopt;
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < acts; ++i) {
        mean_a += p[i * entities + col_a];
        mean_b += p[i * entities + col_b];
    }
    mean_a /= static_cast<double>(acts);
    mean_b /= static_cast<double>(acts);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < acts; ++i) {
        double da = p[i * entities + col_a] - mean_a;
        double db = p[i * entities + col_b] - mean_b;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa < kVarianceFloor || sbb < kVarianceFloor) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

CorrelationMatrix pairwise_pearson(const ActivityObjectCounts& counts) {
    CorrelationMatrix corr;
    corr.n = counts.p.dim(1);
    corr.values.assign(corr.n * corr.n, std::nullopt);
    for (std::size_t i = 0; i < corr.n; ++i)
        for (std::size_t j = i + 1; j < corr.n; ++j) {
            auto value = pearson_column_correlation(counts.p, i, j);
            corr.values[i * corr.n + j] = value;
            corr.values[j * corr.n + i] = value;
        }
    return corr;
}

ObjectGrouping merge_groups(const IncidenceMatrix& inc, std::size_t target_groups) {
    if (target_groups == 0) throw ConfigError("merge_groups: target group count must be positive");
    std::size_t objects = inc.object_count();
    ObjectGrouping grouping;
    grouping.groups.resize(objects);
    for (std::size_t i = 0; i < objects; ++i) grouping.groups[i] = {i};

    while (grouping.groups.size() > target_groups) {
        // Full recomputation each round: group presence, counts,
        // distributions and all pairwise correlations.
        ActivityObjectCounts counts = activity_counts(inc, grouping.groups);
        CorrelationMatrix corr = pairwise_pearson(counts);

        // Groups are kept sorted by smallest member, so scanning pairs in
        // index order visits candidate keys (rep_a, rep_b) in ascending
        // lexicographic order; a strict < then settles ties toward the
        // smallest key.
        std::size_t best_i = 0, best_j = 1;
        std::optional<double> best;
        for (std::size_t i = 0; i < grouping.groups.size(); ++i)
            for (std::size_t j = i + 1; j < grouping.groups.size(); ++j) {
                auto value = corr.at(i, j);
                if (!value) continue;
                if (!best || *value < *best) {
                    best = value;
                    best_i = i;
                    best_j = j;
                }
            }

        MergeStep step;
        step.correlation = best;
        if (!best) {
            // Every pair undefined (e.g. a single activity); fall back to
            // merging the two lowest-indexed groups.
            grouping.undefined_fallback = true;
            best_i = 0;
            best_j = 1;
        }
        step.rep_a = grouping.groups[best_i].front();
        step.rep_b = grouping.groups[best_j].front();

        auto& into = grouping.groups[best_i];
        auto& from = grouping.groups[best_j];
        into.insert(into.end(), from.begin(), from.end());
        std::sort(into.begin(), into.end());
        grouping.groups.erase(grouping.groups.begin() +
                              static_cast<std::ptrdiff_t>(best_j));
        std::sort(grouping.groups.begin(), grouping.groups.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
        grouping.merge_trace.push_back(step);
    }
    return grouping;
}

void save_grouping(const std::filesystem::path& json_path, const ObjectGrouping& grouping,
                   const Vocabulary& vocabulary) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : grouping.groups) {
        nlohmann::json names = nlohmann::json::array();
        for (std::size_t member : g) names.push_back(vocabulary.name(member));
        groups.push_back({{"objects", g}, {"names", names}});
    }
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& step : grouping.merge_trace) {
        nlohmann::json entry{{"pair", {step.rep_a, step.rep_b}}};
        if (step.correlation)
            entry["correlation"] = *step.correlation;
        else
            entry["correlation"] = nullptr;
        trace.push_back(entry);
    }
    nlohmann::json j{{"groups", groups},
                     {"merge_trace", trace},
                     {"undefined_fallback", grouping.undefined_fallback}};
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write grouping file " + json_path.string());
    out << j.dump(2) << '\n';
}

ObjectGrouping load_grouping(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open grouping file " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed grouping file " + json_path.string() + ": " + e.what());
    }
    ObjectGrouping grouping;
    try {
        for (const auto& g : j.at("groups"))
            grouping.groups.push_back(g.at("objects").get<std::vector<std::size_t>>());
        for (const auto& entry : j.at("merge_trace")) {
            MergeStep step;
            step.rep_a = entry.at("pair").at(0).get<std::size_t>();
            step.rep_b = entry.at("pair").at(1).get<std::size_t>();
            if (!entry.at("correlation").is_null())
                step.correlation = entry.at("correlation").get<double>();
            grouping.merge_trace.push_back(step);
        }
        grouping.undefined_fallback = j.value("undefined_fallback", false);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("grouping file " + json_path.string() + " missing fields: " + e.what());
    }
    return grouping;
}

DenseTensor masks_to_tensor(std::span<const GridMask> masks) {
    if (masks.empty()) throw DataError("masks_to_tensor: no masks");
    std::size_t rows = masks[0].rows, cols = masks[0].cols;
    DenseTensor t({masks.size(), rows, cols});
    for (std::size_t g = 0; g < masks.size(); ++g) {
        if (masks[g].rows != rows || masks[g].cols != cols)
            throw DimensionError("masks_to_tensor: mask " + std::to_string(g) +
                                 " has a different grid size");
        for (std::size_t i = 0; i < rows * cols; ++i)
            t[g * rows * cols + i] = masks[g].cells[i] ? 1.0 : 0.0;
    }
    return t;
}

std::vector<GridMask> masks_from_tensor(const DenseTensor& tensor) {
    if (tensor.rank() != 3)
        throw DataError("mask tensor must have shape [G, rows, cols], got " +
                        shape_string(tensor.shape()));
    std::vector<GridMask> masks;
    std::size_t rows = tensor.dim(1), cols = tensor.dim(2);
    for (std::size_t g = 0; g < tensor.dim(0); ++g) {
        GridMask m(rows, cols);
        for (std::size_t i = 0; i < rows * cols; ++i) {
            double v = tensor[g * rows * cols + i];
            if (v != 0.0 && v != 1.0)
                throw DataError("mask tensor contains a non-binary value " + std::to_string(v));
            m.cells[i] = v != 0.0 ? 1 : 0;
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

} // namespace adlfusion
