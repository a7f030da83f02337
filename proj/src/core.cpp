#include "longtrack/core.hpp"

#include <algorithm>
#include <cmath>

namespace longtrack {

double iou(const BBox& a, const BBox& b) {
    const double ix = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double iy = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (ix <= 0.0 || iy <= 0.0) {
        return 0.0;
    }
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

std::optional<BBox> clip(const BBox& b, int width, int height) {
    const double x0 = std::max(b.x, 0.0);
    const double y0 = std::max(b.y, 0.0);
    const double x1 = std::min(b.right(), static_cast<double>(width));
    const double y1 = std::min(b.bottom(), static_cast<double>(height));
    if (x1 <= x0 || y1 <= y0) {
        return std::nullopt;
    }
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

PixelRect covered_pixels(const BBox& b, int width, int height) {
    // x <= j + 0.5 < x + w  <=>  ceil(x - 0.5) <= j < ceil(x + w - 0.5)
    auto lo = [](double v) { return std::ceil(v - 0.5); };
    PixelRect r;
    r.col0 = static_cast<int>(std::clamp(lo(b.x), 0.0, static_cast<double>(width)));
    r.col1 = static_cast<int>(std::clamp(lo(b.right()), 0.0, static_cast<double>(width)));
    r.row0 = static_cast<int>(std::clamp(lo(b.y), 0.0, static_cast<double>(height)));
    r.row1 = static_cast<int>(std::clamp(lo(b.bottom()), 0.0, static_cast<double>(height)));
    return r;
}

std::vector<Pixel> rasterize(const BBox& b, int width, int height) {
    const PixelRect r = covered_pixels(b, width, height);
    std::vector<Pixel> out;
    out.reserve(r.count());
    for (int i = r.row0; i < r.row1; ++i) {
        for (int j = r.col0; j < r.col1; ++j) {
            out.push_back({i, j});
        }
    }
    return out;
}

// --- FrameGray --------------------------------------------------------------

FrameGray::FrameGray(int width, int height, std::uint8_t fill)
    : FrameGray(width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                              static_cast<std::size_t>(std::max(height, 0)),
                                          fill)) {}

FrameGray::FrameGray(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width < 1 || height < 1) {
        throw InvalidInput("frame dimensions must be at least 1x1");
    }
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw InvalidInput("frame buffer length does not match width x height");
    }
}

FrameGray FrameGray::from_mat(const cv::Mat& m) {
    if (m.type() != CV_8UC1) {
        throw InvalidInput("expected an 8-bit single-channel image");
    }
    std::vector<std::uint8_t> data(m.total());
    for (int r = 0; r < m.rows; ++r) {
        std::copy_n(m.ptr<std::uint8_t>(r), m.cols, data.begin() + static_cast<std::ptrdiff_t>(r) * m.cols);
    }
    return FrameGray(m.cols, m.rows, std::move(data));
}

cv::Mat FrameGray::view() const {
    return cv::Mat(height_, width_, CV_8UC1, const_cast<std::uint8_t*>(data_.data()));
}

// --- InMemorySeq ------------------------------------------------------------

InMemorySeq::InMemorySeq(std::vector<FrameGray> frames, double fps) : frames_(std::move(frames)), fps_(fps) {
    if (!(fps > 0.0)) {
        throw InvalidInput("fps must be positive");
    }
    if (!frames_.empty()) {
        width_ = frames_.front().width();
        height_ = frames_.front().height();
        for (std::size_t i = 1; i < frames_.size(); ++i) {
            if (frames_[i].width() != width_ || frames_[i].height() != height_) {
                throw InvalidInput("frame " + std::to_string(i) + " has mismatched dimensions");
            }
        }
    }
}

FrameGray InMemorySeq::frame(std::size_t index) const {
    if (index >= frames_.size()) {
        throw InvalidInput("frame index " + std::to_string(index) + " out of range");
    }
    return frames_[index];
}

// --- BoxTimeline -------------------------------------------------------------

const char* to_string(BoxSource s) {
    switch (s) {
        case BoxSource::detected: return "detected";
        case BoxSource::held: return "held";
        case BoxSource::tracked: return "tracked";
        case BoxSource::absent: return "absent";
    }
    return "absent";
}

BoxSource box_source_from_string(const std::string& s) {
    if (s == "detected") return BoxSource::detected;
    if (s == "held") return BoxSource::held;
    if (s == "tracked") return BoxSource::tracked;
    if (s == "absent") return BoxSource::absent;
    throw InvalidInput("unknown box source '" + s + "'");
}

std::size_t second_frame(std::size_t second, double fps) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(second) * fps));
}

std::size_t second_of(std::size_t frame, double fps) {
    auto s = static_cast<std::size_t>(std::floor(static_cast<double>(frame) / fps));
    while (second_frame(s + 1, fps) <= frame) ++s;
    while (s > 0 && second_frame(s, fps) > frame) --s;
    return s;
}

std::size_t second_count(std::size_t frames, double fps) {
    return frames == 0 ? 0 : second_of(frames - 1, fps) + 1;
}

BoxTimeline::BoxTimeline(std::size_t frames, double fps) : entries_(frames), fps_(fps) {
    if (!(fps > 0.0)) {
        throw InvalidInput("fps must be positive");
    }
}

void BoxTimeline::set(std::size_t i, const BBox& box, BoxSource source, double score) {
    entries_.at(i) = TimelineEntry{box, source, score};
}

void BoxTimeline::set_absent(std::size_t i) { entries_.at(i) = TimelineEntry{}; }

std::vector<Detection> BoxTimeline::to_detections(const std::string& label) const {
    std::vector<Detection> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].box) {
            out.push_back({*entries_[i].box, entries_[i].score, label, static_cast<std::int64_t>(i)});
        }
    }
    return out;
}

}  // namespace longtrack
