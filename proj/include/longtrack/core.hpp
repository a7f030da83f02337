// core.hpp: geometry, raster and timeline primitives shared by the pipeline.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace longtrack {

// ---------------------------------------------------------------------------
// Errors. The CLI maps UsageError to exit code 2 and every other Error to 1.
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class DetectorUnavailable : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

/// Axis-aligned box, top-left origin, real-valued pixel coordinates.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    bool valid() const { return w > 0.0 && h > 0.0; }

    static BBox from_center(double cx, double cy, double w, double h) {
        return {cx - 0.5 * w, cy - 0.5 * h, w, h};
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union. Zero for disjoint boxes.
double iou(const BBox& a, const BBox& b);

/// Intersection of `b` with the [0,width)x[0,height) frame, or nullopt if empty.
std::optional<BBox> clip(const BBox& b, int width, int height);

struct Pixel {
    int row = 0;
    int col = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
    friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Half-open pixel index ranges covered by a box under the pixel-center rule.
struct PixelRect {
    int row0 = 0, row1 = 0;  // [row0, row1)
    int col0 = 0, col1 = 0;  // [col0, col1)
    bool empty() const { return row0 >= row1 || col0 >= col1; }
    std::size_t count() const {
        return empty() ? 0 : static_cast<std::size_t>(row1 - row0) * static_cast<std::size_t>(col1 - col0);
    }
};

/// Pixel (i,j) is covered iff x <= j+0.5 < x+w and y <= i+0.5 < y+h,
/// restricted to the frame.
PixelRect covered_pixels(const BBox& b, int width, int height);

/// Covered pixels in row-major order.
std::vector<Pixel> rasterize(const BBox& b, int width, int height);

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

struct Detection {
    BBox box;
    double score = 1.0;
    std::string label;
    std::int64_t frame = 0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// Row-major 8-bit luma raster.
class FrameGray {
public:
    FrameGray() = default;
    FrameGray(int width, int height, std::uint8_t fill = 0);
    FrameGray(int width, int height, std::vector<std::uint8_t> data);

    /// Deep copy of a CV_8UC1 matrix.
    static FrameGray from_mat(const cv::Mat& m);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }

    std::uint8_t at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    std::uint8_t& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }

    const std::vector<std::uint8_t>& data() const { return data_; }
    std::vector<std::uint8_t>& data() { return data_; }

    /// Non-owning CV_8UC1 header over the pixel buffer.
    cv::Mat view() const;

    friend bool operator==(const FrameGray&, const FrameGray&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Indexed sequence of equally sized frames.
class FrameSeq {
public:
    virtual ~FrameSeq() = default;

    virtual std::size_t size() const = 0;
    virtual double fps() const = 0;
    virtual int width() const = 0;
    virtual int height() const = 0;
    virtual FrameGray frame(std::size_t index) const = 0;

    double duration_seconds() const { return static_cast<double>(size()) / fps(); }
};

class InMemorySeq final : public FrameSeq {
public:
    InMemorySeq(std::vector<FrameGray> frames, double fps);

    std::size_t size() const override { return frames_.size(); }
    double fps() const override { return fps_; }
    int width() const override { return width_; }
    int height() const override { return height_; }
    FrameGray frame(std::size_t index) const override;

private:
    std::vector<FrameGray> frames_;
    double fps_;
    int width_ = 0;
    int height_ = 0;
};

// ---------------------------------------------------------------------------
// Timelines
// ---------------------------------------------------------------------------

/// `held` marks a frame that repeats an earlier box without new evidence
/// (unsampled frames in detection-only runs, coasting after a tracker failure).
enum class BoxSource { detected, held, tracked, absent };

const char* to_string(BoxSource s);
BoxSource box_source_from_string(const std::string& s);

struct TimelineEntry {
    std::optional<BBox> box;
    BoxSource source = BoxSource::absent;
    double score = 0.0;
};

/// First frame of second s: llround(s * fps).
std::size_t second_frame(std::size_t second, double fps);

/// Second containing frame f: the largest s with second_frame(s) <= f.
std::size_t second_of(std::size_t frame, double fps);

/// Whole or partial seconds covered by `frames` frames.
std::size_t second_count(std::size_t frames, double fps);

class BoxTimeline {
public:
    BoxTimeline() = default;
    BoxTimeline(std::size_t frames, double fps);

    std::size_t size() const { return entries_.size(); }
    double fps() const { return fps_; }

    const TimelineEntry& operator[](std::size_t i) const { return entries_[i]; }
    TimelineEntry& operator[](std::size_t i) { return entries_[i]; }

    void set(std::size_t i, const BBox& box, BoxSource source, double score = 1.0);
    void set_absent(std::size_t i);

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// Present boxes as detections carrying `label`; absent frames are skipped.
    std::vector<Detection> to_detections(const std::string& label) const;

private:
    std::vector<TimelineEntry> entries_;
    double fps_ = 30.0;
};

}  // namespace longtrack
