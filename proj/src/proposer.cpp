#include "longtrack/proposer.hpp"

#include <cmath>
#include <limits>

#include <opencv2/imgcodecs.hpp>

namespace longtrack {

// --- accumulation -----------------------------------------------------------

AccumulatorImage::AccumulatorImage(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw InvalidInput("accumulator dimensions must be at least 1x1");
    counts.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
}

std::uint32_t AccumulatorImage::max() const {
    return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

void AccumulatorImage::add(const BBox& box) {
    const PixelRect r = covered_pixels(box, width, height);
    for (int i = r.row0; i < r.row1; ++i) {
        std::uint32_t* row = counts.data() + static_cast<std::size_t>(i) * width;
        for (int j = r.col0; j < r.col1; ++j) ++row[j];
    }
}

AccumulatorImage accumulate(const std::vector<BBox>& boxes, int width, int height) {
    AccumulatorImage acc(width, height);
    for (const auto& b : boxes) acc.add(b);
    return acc;
}

void save_accumulator_pgm(const std::filesystem::path& path, const AccumulatorImage& acc) {
    cv::Mat m(acc.height, acc.width, CV_16UC1);
    for (int i = 0; i < acc.height; ++i) {
        for (int j = 0; j < acc.width; ++j) {
            m.at<std::uint16_t>(i, j) = static_cast<std::uint16_t>(std::min<std::uint32_t>(acc.at(i, j), 65535));
        }
    }
    if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PXM_BINARY, 1})) {
        throw Error("cannot write " + path.string());
    }
}

// --- histogram --------------------------------------------------------------

const char* to_string(ThresholdMethod m) {
    switch (m) {
        case ThresholdMethod::isodata: return "isodata";
        case ThresholdMethod::li: return "li";
        case ThresholdMethod::mean: return "mean";
        case ThresholdMethod::minimum: return "minimum";
        case ThresholdMethod::otsu: return "otsu";
        case ThresholdMethod::triangle: return "triangle";
        case ThresholdMethod::yen: return "yen";
    }
    return "isodata";
}

const std::array<ThresholdMethod, 7>& all_threshold_methods() {
    static const std::array<ThresholdMethod, 7> all{ThresholdMethod::isodata, ThresholdMethod::li,
                                                    ThresholdMethod::mean,    ThresholdMethod::minimum,
                                                    ThresholdMethod::otsu,    ThresholdMethod::triangle,
                                                    ThresholdMethod::yen};
    return all;
}

ThresholdMethod threshold_method_from_string(const std::string& s) {
    for (auto m : all_threshold_methods()) {
        if (s == to_string(m)) return m;
    }
    throw InvalidInput("unknown threshold method '" + s + "'");
}

int Histogram::bin_of(double v) const {
    if (!(max_value > 0.0)) return 0;
    int k = static_cast<int>(std::ceil(v * kBins / max_value)) - 1;
    k = std::clamp(k, 0, kBins - 1);
    // Settle rounding so that bin_of(v) > k exactly when v > upper_edge(k).
    while (k > 0 && !(v > upper_edge(k - 1))) --k;
    while (k < kBins - 1 && v > upper_edge(k)) ++k;
    return k;
}

int Histogram::populated_bins() const {
    return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](std::uint64_t c) { return c > 0; }));
}

void Histogram::add(double v, std::uint64_t n) {
    if (n == 0) return;
    counts[static_cast<std::size_t>(bin_of(v))] += n;
    min_value = total == 0 ? v : std::min(min_value, v);
    value_sum += v * static_cast<double>(n);
    total += n;
}

// --- threshold methods ------------------------------------------------------

namespace {

using Counts = std::array<std::uint64_t, Histogram::kBins>;
constexpr int kBins = Histogram::kBins;

struct Span {
    int lo = -1;
    int hi = -1;
};

Span populated_span(const Counts& c) {
    Span s;
    for (int k = 0; k < kBins; ++k) {
        if (c[k] == 0) continue;
        if (s.lo < 0) s.lo = k;
        s.hi = k;
    }
    return s;
}

// Both classes of a split at k must be non-empty.
int clamp_split(int k, const Span& s) { return std::clamp(k, s.lo, s.hi - 1); }

// Weighted bin-index means of bins [a, b].
double index_mean(const Counts& c, int a, int b) {
    double n = 0.0, s = 0.0;
    for (int k = a; k <= b; ++k) {
        n += static_cast<double>(c[k]);
        s += static_cast<double>(c[k]) * k;
    }
    return s / n;
}

int isodata_bin(const Counts& c, const Span& span) {
    double tau = index_mean(c, 0, kBins - 1);
    int k = static_cast<int>(std::floor(tau));
    for (int iter = 0; iter < 4 * kBins; ++iter) {
        k = clamp_split(static_cast<int>(std::floor(tau)), span);
        const double next = 0.5 * (index_mean(c, 0, k) + index_mean(c, k + 1, kBins - 1));
        const int next_k = clamp_split(static_cast<int>(std::floor(next)), span);
        tau = next;
        if (next_k == k) break;
    }
    return k;
}

int otsu_bin(const Counts& c, const Span& span) {
    std::uint64_t n = 0, s = 0;
    for (int k = 0; k < kBins; ++k) {
        n += c[k];
        s += c[k] * static_cast<std::uint64_t>(k);
    }
    std::uint64_t n0 = 0, s0 = 0;
    long double best = -1.0L;
    int best_k = span.lo;
    for (int k = 0; k < kBins - 1; ++k) {
        n0 += c[k];
        s0 += c[k] * static_cast<std::uint64_t>(k);
        const std::uint64_t n1 = n - n0;
        if (n0 == 0 || n1 == 0) continue;
        // Between-class variance up to the constant factor 1/n^2.
        const __int128 d = static_cast<__int128>(n) * s0 - static_cast<__int128>(n0) * s;
        const long double dd = static_cast<long double>(d);
        const long double v = dd * dd / (static_cast<long double>(n0) * static_cast<long double>(n1));
        if (v > best) {
            best = v;
            best_k = k;
        }
    }
    return best_k;
}

int yen_bin(const Counts& c, const Span& span) {
    std::uint64_t n = 0;
    long double q_total = 0.0L;
    for (int k = 0; k < kBins; ++k) {
        n += c[k];
        q_total += static_cast<long double>(c[k]) * static_cast<long double>(c[k]);
    }
    std::uint64_t c1 = 0;
    long double q1 = 0.0L;
    long double best = -1.0L;
    int best_k = span.lo;
    for (int k = 0; k < kBins - 1; ++k) {
        c1 += c[k];
        q1 += static_cast<long double>(c[k]) * static_cast<long double>(c[k]);
        const long double q2 = q_total - q1;
        if (c1 == 0 || c1 == n) continue;
        const long double p = static_cast<long double>(c1) * static_cast<long double>(n - c1);
        const long double v = p * p / (q1 * q2);
        if (v > best) {
            best = v;
            best_k = k;
        }
    }
    return best_k;
}

int li_bin(const Histogram& h, const Span& span) {
    const Counts& c = h.counts;
    const double w = h.bin_width();
    const double lo = h.center(span.lo);
    double tol = std::numeric_limits<double>::infinity();
    int prev = -1;
    for (int k = span.lo; k <= span.hi; ++k) {
        if (c[k] == 0) continue;
        if (prev >= 0) tol = std::min(tol, (k - prev) * w);
        prev = k;
    }
    tol *= 0.5;

    // Centers shifted so the lowest populated one sits at zero.
    auto class_mean = [&](double t, bool fore) {
        double n = 0.0, s = 0.0;
        for (int k = span.lo; k <= span.hi; ++k) {
            const double v = h.center(k) - lo;
            if ((v > t) != fore) continue;
            n += static_cast<double>(c[k]);
            s += static_cast<double>(c[k]) * v;
        }
        return s / n;
    };
    double t_next = index_mean(c, 0, kBins - 1) * w + 0.5 * w - lo;
    double t_curr = -2.0 * tol;
    for (int iter = 0; iter < 10000 && std::abs(t_next - t_curr) > tol; ++iter) {
        t_curr = t_next;
        const double fore = class_mean(t_curr, true);
        const double back = class_mean(t_curr, false);
        if (back == 0.0) break;
        t_next = (back - fore) / (std::log(back) - std::log(fore));
    }
    const double t = t_next + lo;
    int k = span.lo;
    while (k + 1 <= span.hi && h.center(k + 1) <= t) ++k;
    return clamp_split(k, span);
}

int triangle_bin(const Counts& c, const Span& span) {
    int peak = 0;
    for (int k = 1; k < kBins; ++k) {
        if (c[k] > c[peak]) peak = k;
    }
    int low = span.lo;
    const int high = span.hi;
    const bool flip = peak - low < high - peak;
    Counts hist = c;
    if (flip) {
        std::reverse(hist.begin(), hist.end());
        low = kBins - high - 1;
        peak = kBins - peak - 1;
    }
    const std::int64_t width = peak - low;
    const auto peak_height = static_cast<std::int64_t>(hist[peak]);
    int level = low;
    std::int64_t best = std::numeric_limits<std::int64_t>::min();
    for (std::int64_t x = 0; x < width; ++x) {
        const std::int64_t len = peak_height * x - width * static_cast<std::int64_t>(hist[low + x]);
        if (len > best) {
            best = len;
            level = static_cast<int>(low + x);
        }
    }
    if (flip) level = kBins - level - 1;
    return clamp_split(level, span);
}

std::vector<int> local_maxima(const std::vector<double>& h) {
    std::vector<int> out;
    int direction = 1;
    for (std::size_t i = 0; i + 1 < h.size(); ++i) {
        if (direction > 0) {
            if (h[i + 1] < h[i]) {
                direction = -1;
                out.push_back(static_cast<int>(i));
            }
        } else if (h[i + 1] > h[i]) {
            direction = 1;
        }
    }
    return out;
}

int minimum_bin(const Counts& c, const Span& span) {
    std::vector<double> h(c.begin(), c.end());
    std::vector<double> next(h.size());
    std::vector<int> maxima;
    for (int iter = 0; iter < 10000; ++iter) {
        // Width-3 moving average, edges reflected.
        for (int k = 0; k < kBins; ++k) {
            const double l = h[static_cast<std::size_t>(std::max(k - 1, 0))];
            const double r = h[static_cast<std::size_t>(std::min(k + 1, kBins - 1))];
            next[static_cast<std::size_t>(k)] = (l + h[static_cast<std::size_t>(k)] + r) / 3.0;
        }
        h.swap(next);
        maxima = local_maxima(h);
        if (maxima.size() < 3) break;
    }
    if (maxima.size() != 2) throw DegenerateInput("minimum threshold: histogram does not have two maxima");
    int k = maxima[0];
    for (int i = maxima[0]; i <= maxima[1]; ++i) {
        if (h[static_cast<std::size_t>(i)] < h[static_cast<std::size_t>(k)]) k = i;
    }
    return clamp_split(k, span);
}

}  // namespace

int threshold_bin(const Histogram& h, ThresholdMethod method) {
    if (h.populated_bins() < 2) {
        throw DegenerateInput(std::string(to_string(method)) + " threshold needs at least two distinct values");
    }
    const Span span = populated_span(h.counts);
    switch (method) {
        case ThresholdMethod::isodata: return isodata_bin(h.counts, span);
        case ThresholdMethod::li: return li_bin(h, span);
        case ThresholdMethod::minimum: return minimum_bin(h.counts, span);
        case ThresholdMethod::otsu: return otsu_bin(h.counts, span);
        case ThresholdMethod::triangle: return triangle_bin(h.counts, span);
        case ThresholdMethod::yen: return yen_bin(h.counts, span);
        case ThresholdMethod::mean: break;
    }
    throw InvalidInput("mean is not a histogram-split method");
}

double threshold(const Histogram& h, ThresholdMethod method) {
    if (method == ThresholdMethod::mean) {
        if (h.total == 0) throw DegenerateInput("mean threshold of an empty input");
        return h.value_sum / static_cast<double>(h.total);
    }
    return h.upper_edge(threshold_bin(h, method));
}

std::size_t BinaryMask::popcount() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

template <class T>
ThresholdResult threshold_values(const std::vector<T>& values, int width, int height, ThresholdMethod method,
                                 bool include_zero) {
    Histogram h = make_histogram(values.begin(), values.end(), include_zero);
    if (!include_zero && h.populated_bins() < 2) {
        h = make_histogram(values.begin(), values.end(), true);
        include_zero = true;
    }
    ThresholdResult r;
    r.value = threshold(h, method);
    r.zeros_included = include_zero;
    r.mask = BinaryMask(width, height);
    for (std::size_t i = 0; i < values.size(); ++i) r.mask.bits[i] = static_cast<double>(values[i]) > r.value;
    return r;
}

}  // namespace

ThresholdResult threshold(const AccumulatorImage& acc, ThresholdMethod method, bool include_zero_bin) {
    return threshold_values(acc.counts, acc.width, acc.height, method, include_zero_bin);
}

ThresholdResult threshold(const FrameGray& image, ThresholdMethod method) {
    return threshold_values(image.data(), image.width(), image.height(), method, true);
}

// --- components -------------------------------------------------------------

std::vector<Component> components(const BinaryMask& mask) {
    std::vector<Component> out;
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::vector<Pixel> stack;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * mask.width + c;
            if (!mask.bits[idx] || seen[idx]) continue;
            Component comp;
            seen[idx] = 1;
            stack.push_back({r, c});
            double sr = 0.0, sc = 0.0;
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                comp.pixels.push_back(p);
                sr += p.row;
                sc += p.col;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nr = p.row + dr, nc = p.col + dc;
                        if (nr < 0 || nc < 0 || nr >= mask.height || nc >= mask.width) continue;
                        const std::size_t n = static_cast<std::size_t>(nr) * mask.width + nc;
                        if (mask.bits[n] && !seen[n]) {
                            seen[n] = 1;
                            stack.push_back({nr, nc});
                        }
                    }
                }
            }
            comp.area = comp.pixels.size();
            comp.centroid_row = sr / static_cast<double>(comp.area);
            comp.centroid_col = sc / static_cast<double>(comp.area);
            out.push_back(std::move(comp));
        }
    }
    return out;
}

// --- proposals --------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

GtSizeStats GtSizeStats::from_boxes(const std::vector<BBox>& boxes) {
    if (boxes.empty()) throw InvalidInput("ground-truth size statistics need at least one box");
    std::vector<double> ws, hs;
    GtSizeStats s;
    s.min_area = std::numeric_limits<double>::infinity();
    for (const auto& b : boxes) {
        if (!b.valid()) throw InvalidInput("ground-truth box with non-positive size");
        ws.push_back(b.w);
        hs.push_back(b.h);
        s.min_area = std::min(s.min_area, b.area());
    }
    s.median_width = median(ws);
    s.median_height = median(hs);
    return s;
}

GtSizeStats GtSizeStats::defaults(int width, int height) {
    const double sx = width / 858.0;
    const double sy = height / 480.0;
    return {900.0 * sx * sy, 120.0 * sx, 90.0 * sy};
}

void GtSizeStats::validate() const {
    if (!(min_area > 0.0) || !(median_width > 0.0) || !(median_height > 0.0)) {
        throw InvalidInput("ground-truth size statistics must be positive");
    }
}

ProposalSet propose(const AccumulatorImage& acc, const GtSizeStats& stats, ThresholdMethod method,
                    bool include_zero_bin) {
    stats.validate();
    ProposalSet out;
    ThresholdResult t;
    try {
        t = threshold(acc, method, include_zero_bin);
    } catch (const DegenerateInput&) {
        out.degenerate = true;
        return out;
    }
    out.threshold = t.value;
    const auto comps = components(t.mask);
    out.components_before = comps.size();
    const double peak_all = static_cast<double>(acc.max());
    for (const auto& comp : comps) {
        if (static_cast<double>(comp.area) < stats.min_area) continue;
        ++out.components_after;
        const BBox box = BBox::from_center(comp.centroid_col + 0.5, comp.centroid_row + 0.5, stats.median_width,
                                           stats.median_height);
        const auto clipped = clip(box, acc.width, acc.height);
        if (!clipped) continue;
        std::uint32_t peak = 0;
        for (const auto& p : comp.pixels) peak = std::max(peak, acc.at(p.row, p.col));
        out.boxes.push_back(*clipped);
        out.scores.push_back(peak_all > 0.0 ? peak / peak_all : 0.0);
    }
    return out;
}

// --- video driver -----------------------------------------------------------

void ProposerConfig::validate() const {
    if (!(window_seconds > 0.0)) throw InvalidInput("proposal window must be > 0 seconds");
}

namespace {

std::size_t window_of(std::size_t second, double window_seconds) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(second) / window_seconds + 1e-9));
}

}  // namespace

ProposalRun propose_video(const DetectionMap& detections, std::size_t frames, double fps, int width, int height,
                          const GtSizeStats& stats, const ProposerConfig& cfg) {
    cfg.validate();
    stats.validate();
    if (!(fps > 0.0)) throw InvalidInput("fps must be > 0");
    const std::size_t seconds = second_count(frames, fps);
    const std::size_t windows = seconds == 0 ? 0 : window_of(seconds - 1, cfg.window_seconds) + 1;
    ProposalRun run;
    run.accumulators.assign(windows, AccumulatorImage(width, height));
    for (const auto& [frame, dets] : detections) {
        if (frame < 0 || static_cast<std::size_t>(frame) >= frames) {
            throw InvalidInput("detection at frame " + std::to_string(frame) + " outside the sequence");
        }
        const auto f = static_cast<std::size_t>(frame);
        const std::size_t s = second_of(f, fps);
        if (!cfg.every_frame && second_frame(s, fps) != f) continue;
        AccumulatorImage& acc = run.accumulators[window_of(s, cfg.window_seconds)];
        for (const auto& d : dets) {
            if (!cfg.label.empty() && d.label != cfg.label) continue;
            acc.add(d.box);
            ++run.naive_count;
        }
    }
    for (std::size_t w = 0; w < windows; ++w) {
        ProposalSet p = propose(run.accumulators[w], stats, cfg.method, cfg.include_zero_bin);
        p.window = w;
        run.windows.push_back(std::move(p));
    }
    return run;
}

DetectionMap proposals_per_second(const ProposalRun& run, std::size_t frames, double fps, double window_seconds,
                                  const std::string& label) {
    DetectionMap out;
    const std::size_t seconds = second_count(frames, fps);
    for (std::size_t s = 0; s < seconds; ++s) {
        const std::size_t f = second_frame(s, fps);
        const std::size_t w = window_of(s, window_seconds);
        if (f >= frames || w >= run.windows.size()) continue;
        const ProposalSet& p = run.windows[w];
        for (std::size_t i = 0; i < p.boxes.size(); ++i) {
            out[static_cast<std::int64_t>(f)].push_back({p.boxes[i], p.scores[i], label, static_cast<std::int64_t>(f)});
        }
    }
    return out;
}

}  // namespace longtrack
