// eval.hpp: IoU timelines, COCO-style AP/AR, and proposal evaluation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "longtrack/core.hpp"
#include "longtrack/detect.hpp"

namespace longtrack {

// ---------------------------------------------------------------------------
// IoU over time
// ---------------------------------------------------------------------------

enum class SecondAgg { mid, mean };

const char* to_string(SecondAgg a);
SecondAgg second_agg_from_string(const std::string& s);

struct SecondIou {
    std::size_t second = 0;
    std::optional<double> iou;  // nullopt: no ground truth
};

/// One value per second. `mid` takes the middle frame of the second, `mean`
/// averages the frames that have ground truth. A missing prediction scores 0.
std::vector<SecondIou> per_second_iou(const BoxTimeline& pred, const BoxTimeline& gt, SecondAgg agg = SecondAgg::mid);

/// Mean IoU over frames with ground truth; missing predictions score 0.
/// Returns 0 when no frame has ground truth.
double mean_iou(const BoxTimeline& pred, const BoxTimeline& gt);

void write_second_iou_csv(std::ostream& out, const std::vector<SecondIou>& series);

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

struct AreaRange {
    std::string name;
    double lo = 0.0;  // inclusive, px^2
    double hi = 0.0;  // exclusive
};

struct ApConfig {
    std::vector<double> iou_thresholds;  // default .50:.05:.95
    std::vector<AreaRange> areas;        // default all, small, medium, large
    std::vector<int> max_dets;           // default 1, 10, 100, ascending

    ApConfig();
    void validate() const;
};

struct ApEntry {
    enum class Metric { ap, ar };
    Metric metric = Metric::ap;
    std::optional<double> iou;  // nullopt: averaged over all thresholds
    std::string area;
    int max_dets = 100;
    double value = -1.0;  // -1 when the slice has no ground truth
};

/// Per-slice results, indexed [threshold][area][max_dets]. Values are means
/// over labels that have ground truth in the slice, or -1 when none does.
struct ApTables {
    ApConfig config;
    std::vector<std::vector<std::vector<double>>> precision;  // 101-point interpolated AP
    std::vector<std::vector<std::vector<double>>> recall;
};

/// Images are the keys of `gts` and `dets` unless `images` is given, in which
/// case detections on other images are ignored. Labels are those present in
/// the ground truth; each label is evaluated separately and averaged.
ApTables evaluate_ap(const DetectionMap& dets, const DetectionMap& gts, const ApConfig& cfg = {},
                     const std::set<std::int64_t>* images = nullptr);

/// Standard twelve-row summary: AP at .50:.95, .50, .75, AP per size, AR at
/// each max_dets, AR per size.
std::vector<ApEntry> summarize(const ApTables& tables);

std::vector<ApEntry> average_precision(const DetectionMap& dets, const DetectionMap& gts, const ApConfig& cfg = {},
                                       const std::set<std::int64_t>* images = nullptr);

/// AP of one label at one IoU threshold, one area range and a per-image
/// detection cap; -1 without ground truth.
double ap_single(const std::vector<Detection>& dets, const std::vector<Detection>& gts, double iou_threshold,
                 const AreaRange& area, int max_dets);

/// Raw (recall, precision) after each ranked detection of a single label,
/// before interpolation.
std::vector<std::pair<double, double>> pr_curve(const std::vector<Detection>& dets, const std::vector<Detection>& gts,
                                                double iou_threshold);

std::string ap_to_json(const std::vector<ApEntry>& entries);
void write_ap_csv(std::ostream& out, const std::vector<ApEntry>& entries);
/// Fixed-width lines in the familiar COCO summary layout.
std::string ap_to_text(const std::vector<ApEntry>& entries);

// ---------------------------------------------------------------------------
// Proposal evaluation
// ---------------------------------------------------------------------------

/// Second s counts as writing when strictly more than fps/2 of its frames
/// are labelled.
std::set<std::size_t> writing_seconds(const std::vector<bool>& labels, double fps);

struct Quartiles {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Linear interpolation between order statistics; nullopt when empty.
std::optional<Quartiles> quartiles(std::vector<double> values);

/// (naive - projected) / naive * 100; nullopt when naive is 0.
std::optional<double> reduction_percent(std::uint64_t naive, std::uint64_t projected);

struct SecondMaxIou {
    std::size_t second = 0;
    double iou = 0.0;
};

struct ProposalEvalReport {
    std::vector<SecondMaxIou> max_iou;  // one per ground-truth box per writing second
    std::optional<Quartiles> quartiles;
    std::uint64_t naive = 0;
    std::uint64_t projected = 0;
    std::optional<double> reduction;
};

/// `gt` holds the writing boxes per frame of a `frames`-long video; a frame
/// is labelled writing when it has at least one box. For each writing second
/// the boxes at its first labelled frame are compared with the proposals at
/// any frame of that second, and each box records its best IoU (0 without
/// proposals).
ProposalEvalReport proposal_eval(const DetectionMap& proposals, const DetectionMap& gt, std::size_t frames, double fps,
                                 std::uint64_t naive, std::uint64_t projected);

std::string proposal_report_to_json(const ProposalEvalReport& r);
void write_quartiles_csv(std::ostream& out, const ProposalEvalReport& r);

}  // namespace longtrack
