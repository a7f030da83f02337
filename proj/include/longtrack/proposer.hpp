// proposer.hpp: activity-region proposals from projected detections.
//
// Detections sampled once per second are projected onto a per-pixel count
// image over fixed windows, the count image is thresholded, small connected
// regions are discarded, and each surviving region yields one box of
// ground-truth median size.
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "longtrack/core.hpp"
#include "longtrack/detect.hpp"

namespace longtrack {

// ---------------------------------------------------------------------------
// Accumulation
// ---------------------------------------------------------------------------

struct AccumulatorImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> counts;  // row-major

    AccumulatorImage() = default;
    AccumulatorImage(int w, int h);

    std::uint32_t at(int row, int col) const { return counts[static_cast<std::size_t>(row) * width + col]; }
    std::uint32_t max() const;

    /// Adds one to every pixel the box covers (pixel-center rule).
    void add(const BBox& box);
};

AccumulatorImage accumulate(const std::vector<BBox>& boxes, int width, int height);

/// 16-bit binary PGM; counts above 65535 saturate.
void save_accumulator_pgm(const std::filesystem::path& path, const AccumulatorImage& acc);

// ---------------------------------------------------------------------------
// Thresholding
// ---------------------------------------------------------------------------

enum class ThresholdMethod { isodata, li, mean, minimum, otsu, triangle, yen };

const char* to_string(ThresholdMethod m);
ThresholdMethod threshold_method_from_string(const std::string& s);
const std::array<ThresholdMethod, 7>& all_threshold_methods();

/// 256 uniform bins over [0, max]. Bin k holds values in (k*w, (k+1)*w],
/// bin 0 also holds 0, so "value > upper_edge(k)" selects exactly the bins
/// above k.
struct Histogram {
    static constexpr int kBins = 256;

    std::array<std::uint64_t, kBins> counts{};
    double max_value = 0.0;
    double min_value = 0.0;  // over the values that entered the histogram
    double value_sum = 0.0;
    std::uint64_t total = 0;

    double bin_width() const { return max_value / kBins; }
    double center(int k) const { return (k + 0.5) * bin_width(); }
    double upper_edge(int k) const { return (k + 1) * bin_width(); }
    int bin_of(double v) const;
    int populated_bins() const;

    /// Adds `n` copies of `v`. `max_value` must already be set.
    void add(double v, std::uint64_t n = 1);
};

/// Histogram of the values; zeros are skipped unless `include_zero`.
template <class It>
Histogram make_histogram(It first, It last, bool include_zero) {
    Histogram h;
    double mx = 0.0;
    for (It it = first; it != last; ++it) mx = std::max(mx, static_cast<double>(*it));
    h.max_value = mx;
    for (It it = first; it != last; ++it) {
        const double v = static_cast<double>(*it);
        if (v != 0.0 || include_zero) h.add(v);
    }
    return h;
}

/// Threshold in value units; foreground is value > threshold.
/// Every method except mean needs at least two populated bins and throws
/// DegenerateInput otherwise. Histogram methods return the upper edge of the
/// last background bin.
double threshold(const Histogram& h, ThresholdMethod method);

/// Split bin chosen by a histogram method: background = bins 0..k.
int threshold_bin(const Histogram& h, ThresholdMethod method);

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // 0 or 1, row-major

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

    bool at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col] != 0; }
    std::size_t popcount() const;
};

struct ThresholdResult {
    double value = 0.0;
    BinaryMask mask;
    bool zeros_included = false;
};

/// Thresholds raw counts. Zero-count pixels stay out of the histogram unless
/// `include_zero_bin`, or unless fewer than two bins would be populated
/// without them.
ThresholdResult threshold(const AccumulatorImage& acc, ThresholdMethod method, bool include_zero_bin = false);

/// Thresholds an 8-bit image over all of its pixels.
ThresholdResult threshold(const FrameGray& image, ThresholdMethod method);

// ---------------------------------------------------------------------------
// Components and proposals
// ---------------------------------------------------------------------------

struct Component {
    std::vector<Pixel> pixels;  // discovery order
    std::size_t area = 0;
    double centroid_row = 0.0;  // mean pixel row index
    double centroid_col = 0.0;
};

/// 8-connected components, ordered by their first pixel in raster order.
std::vector<Component> components(const BinaryMask& mask);

struct GtSizeStats {
    double min_area = 900.0;
    double median_width = 120.0;
    double median_height = 90.0;

    /// Smallest area and median sides of the given boxes.
    static GtSizeStats from_boxes(const std::vector<BBox>& boxes);
    /// 900 px^2 and 120x90 at 858x480, scaled to the frame size.
    static GtSizeStats defaults(int width, int height);

    void validate() const;
};

struct ProposalSet {
    std::size_t window = 0;
    std::vector<BBox> boxes;
    std::vector<double> scores;  // peak count of the component / accumulator max
    std::size_t components_before = 0;
    std::size_t components_after = 0;
    double threshold = 0.0;
    bool degenerate = false;
};

ProposalSet propose(const AccumulatorImage& acc, const GtSizeStats& stats, ThresholdMethod method,
                    bool include_zero_bin = false);

// ---------------------------------------------------------------------------
// Video driver
// ---------------------------------------------------------------------------

struct ProposerConfig {
    double window_seconds = 12.0;
    ThresholdMethod method = ThresholdMethod::isodata;
    bool include_zero_bin = false;
    bool every_frame = false;  // otherwise one sampled frame per second
    std::string label;         // empty accepts any label

    void validate() const;
};

struct ProposalRun {
    std::vector<AccumulatorImage> accumulators;  // one per window
    std::vector<ProposalSet> windows;
    std::size_t naive_count = 0;  // detections projected
};

ProposalRun propose_video(const DetectionMap& detections, std::size_t frames, double fps, int width, int height,
                          const GtSizeStats& stats, const ProposerConfig& cfg);

/// Window proposals repeated at the sampled frame of every second in the window.
DetectionMap proposals_per_second(const ProposalRun& run, std::size_t frames, double fps, double window_seconds,
                                  const std::string& label = "proposal");

}  // namespace longtrack
