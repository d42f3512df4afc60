#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adlfusion/detections.hpp"
#include "adlfusion/tensor.hpp"
#include "adlfusion/video_region.hpp"

namespace adlfusion {

// Binary occupancy grid over the activity crop.
struct GridMask {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> cells; // row-major 0/1

    GridMask() = default;
    GridMask(std::size_t rows, std::size_t cols)
        : rows(rows), cols(cols), cells(rows * cols, 0) {}

    std::uint8_t& cell(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
    std::uint8_t cell(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
    std::size_t count() const;
    bool any() const { return count() > 0; }
    bool operator==(const GridMask&) const = default;
};

// Rasterizes every box onto the crop grid and ORs across frames: a cell is
// set when its area overlaps any box with positive area.  Boxes are given in
// image pixels; the crop maps them onto the grid.
GridMask temporal_object_mask(std::span<const DetectionBox> boxes, const ActivityCrop& crop,
                              std::size_t grid_rows, std::size_t grid_cols);

GridMask mask_union(const GridMask& a, const GridMask& b);

// Group mask: n-ary OR over the member-object masks (all same size).
GridMask group_mask(std::span<const GridMask> members);

// Resamples a binary mask to another grid with any-overlap (max-pool)
// semantics.  When shrinking, each fine cell ORs into the coarse cell that
// contains its center band (index map floor(r*out/in)); when growing, each
// output cell reads the input cell covering it.  All-ones stays all-ones in
// both directions.
GridMask resize_mask(const GridMask& mask, std::size_t out_rows, std::size_t out_cols);

// Object/video incidence built from a detection stream plus per-video
// activity labels.  Objects are vocabulary indices; videos and activities
// are kept in sorted order so results never depend on stream order.
struct IncidenceMatrix {
    Vocabulary vocabulary;
    std::vector<std::string> video_ids;            // sorted
    std::vector<std::string> activities;           // sorted
    std::vector<std::size_t> video_activity;       // per video, index into activities
    std::vector<std::uint8_t> presence;            // [objects x videos], row-major

    std::size_t rejected_unknown_video = 0;        // records naming an unlabeled video
    std::size_t ignored_low_confidence = 0;
    std::size_t ignored_out_of_vocabulary = 0;

    std::size_t object_count() const { return vocabulary.size(); }
    std::size_t video_count() const { return video_ids.size(); }
    bool present(std::size_t object, std::size_t video) const {
        return presence[object * video_ids.size() + video] != 0;
    }
};

IncidenceMatrix build_incidence(std::span<const DetectionBox> boxes,
                                const std::map<std::string, std::string>& video_labels,
                                double confidence_threshold, const Vocabulary& vocabulary);

// Per-entity activity statistics.  s[a, e] counts videos of activity a in
// which entity e appears; p is s with each column normalized to sum 1
// (all-zero columns stay zero and are flagged).
struct ActivityObjectCounts {
    std::vector<std::string> activities;
    DenseTensor s; // [activities, entities]
    DenseTensor p; // [activities, entities]
    std::vector<std::uint8_t> empty_column;
};

ActivityObjectCounts activity_counts(const IncidenceMatrix& inc);
// Same, for merged entities: each group is present where any member is.
ActivityObjectCounts activity_counts(const IncidenceMatrix& inc,
                                     const std::vector<std::vector<std::size_t>>& groups);

// Population Pearson correlation of two columns of p; nullopt when either
// column has (numerically) zero variance or fewer than two activities exist.
std::optional<double> pearson_column_correlation(const DenseTensor& p, std::size_t col_a,
                                                 std::size_t col_b);

struct CorrelationMatrix {
    std::size_t n = 0;
    std::vector<std::optional<double>> values; // [n x n], symmetric, diagonal unset

    std::optional<double> at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

CorrelationMatrix pairwise_pearson(const ActivityObjectCounts& counts);

// One agglomerative merge: the two groups are identified by their smallest
// member index.  `correlation` is empty when the step fell back to index
// order because no pair had a defined correlation.
struct MergeStep {
    std::size_t rep_a = 0, rep_b = 0;
    std::optional<double> correlation;
};

struct ObjectGrouping {
    std::vector<std::vector<std::size_t>> groups; // members sorted; groups sorted by front()
    std::vector<MergeStep> merge_trace;
    bool undefined_fallback = false;
};

// Greedy few-coincidences merging: repeatedly rebuild group-level presence,
// counts, distributions and correlations, then fuse the pair with the
// minimum correlation (ties resolved toward the lexicographically smallest
// (rep_a, rep_b) pair) until `target_groups` remain.
ObjectGrouping merge_groups(const IncidenceMatrix& inc, std::size_t target_groups);

void save_grouping(const std::filesystem::path& json_path, const ObjectGrouping& grouping,
                   const Vocabulary& vocabulary);
ObjectGrouping load_grouping(const std::filesystem::path& json_path);

// Group masks ship as one [G, rows, cols] tensor of 0/1 floats.
DenseTensor masks_to_tensor(std::span<const GridMask> masks);
std::vector<GridMask> masks_from_tensor(const DenseTensor& tensor);

} // namespace adlfusion
