#include "longtrack/trackers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <opencv2/imgproc.hpp>

namespace longtrack {

const char* to_string(TrackerKind k) { return k == TrackerKind::mosse ? "mosse" : "kcf"; }

TrackerKind tracker_kind_from_string(const std::string& s) {
    if (s == "mosse") return TrackerKind::mosse;
    if (s == "kcf") return TrackerKind::kcf;
    throw InvalidInput("unknown tracker '" + s + "' (expected mosse or kcf)");
}

TrackerConfig TrackerConfig::defaults(TrackerKind kind) {
    TrackerConfig cfg;
    cfg.kind = kind;
    cfg.learning_rate = kind == TrackerKind::mosse ? 0.125 : 0.02;
    return cfg;
}

void TrackerConfig::validate() const {
    if (!(lambda > 0.0)) throw InvalidInput("tracker lambda must be > 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw InvalidInput("tracker learning rate must be in (0,1]");
    if (!(padding >= 1.0)) throw InvalidInput("tracker padding must be >= 1");
    if (!(sigma > 0.0)) throw InvalidInput("tracker sigma must be > 0");
    if (!(peak_bandwidth > 0.0)) throw InvalidInput("tracker peak bandwidth must be > 0");
    if (!(psr_threshold > 0.0)) throw InvalidInput("tracker psr threshold must be > 0");
}

namespace cf {

namespace {

constexpr int kExclusionHalf = 5;  // 11x11 zone

int wrap_offset(int i, int n) { return i <= n / 2 ? i : i - n; }

cv::Mat forward(const cv::Mat& spatial) {
    cv::Mat out;
    cv::dft(spatial, out, cv::DFT_COMPLEX_OUTPUT);
    return out;
}

cv::Mat inverse_real(const cv::Mat& spectrum) {
    cv::Mat out;
    cv::idft(spectrum, out, cv::DFT_SCALE | cv::DFT_REAL_OUTPUT);
    return out;
}

// a / b elementwise for CV_32FC2 spectra, with `eps` added to b's real part.
cv::Mat divide_spectra(const cv::Mat& a, const cv::Mat& b, float eps) {
    cv::Mat out(a.size(), CV_32FC2);
    for (int r = 0; r < a.rows; ++r) {
        const auto* pa = a.ptr<cv::Vec2f>(r);
        const auto* pb = b.ptr<cv::Vec2f>(r);
        auto* po = out.ptr<cv::Vec2f>(r);
        for (int c = 0; c < a.cols; ++c) {
            const float br = pb[c][0] + eps;
            const float bi = pb[c][1];
            const float den = br * br + bi * bi;
            po[c][0] = (pa[c][0] * br + pa[c][1] * bi) / den;
            po[c][1] = (pa[c][1] * br - pa[c][0] * bi) / den;
        }
    }
    return out;
}

// Sum of squares of the spatial signal from its full spectrum (Parseval).
double energy_from_spectrum(const cv::Mat& spectrum) {
    double sum = 0.0;
    for (int r = 0; r < spectrum.rows; ++r) {
        const auto* p = spectrum.ptr<cv::Vec2f>(r);
        for (int c = 0; c < spectrum.cols; ++c) {
            sum += static_cast<double>(p[c][0]) * p[c][0] + static_cast<double>(p[c][1]) * p[c][1];
        }
    }
    return sum / static_cast<double>(spectrum.total());
}

}  // namespace

cv::Size window_size(const BBox& box, double padding) {
    return {static_cast<int>(std::lround(box.w * padding)), static_cast<int>(std::lround(box.h * padding))};
}

cv::Mat extract_patch(const FrameGray& frame, double cx, double cy, cv::Size size) {
    const int x0 = static_cast<int>(std::floor(cx - 0.5 * size.width + 0.5));
    const int y0 = static_cast<int>(std::floor(cy - 0.5 * size.height + 0.5));
    const int fw = frame.width();
    const int fh = frame.height();
    const auto& px = frame.data();
    constexpr float kScale = 1.0f / 255.0f;

    cv::Mat out(size, CV_32F);
    const bool inside = x0 >= 0 && y0 >= 0 && x0 + size.width <= fw && y0 + size.height <= fh;
    for (int r = 0; r < size.height; ++r) {
        auto* dst = out.ptr<float>(r);
        const int sr = std::clamp(y0 + r, 0, fh - 1);
        const std::uint8_t* src = px.data() + static_cast<std::size_t>(sr) * fw;
        if (inside) {
            for (int c = 0; c < size.width; ++c) dst[c] = src[x0 + c] * kScale - 0.5f;
        } else {
            for (int c = 0; c < size.width; ++c) dst[c] = src[std::clamp(x0 + c, 0, fw - 1)] * kScale - 0.5f;
        }
    }
    return out;
}

cv::Mat hann_window(cv::Size size) {
    cv::Mat w;
    cv::createHanningWindow(w, size, CV_32F);
    return w;
}

cv::Mat gaussian_target(cv::Size size, double sigma) {
    cv::Mat g(size, CV_32F);
    const double k = -0.5 / (sigma * sigma);
    for (int r = 0; r < size.height; ++r) {
        const int dr = wrap_offset(r, size.height);
        auto* p = g.ptr<float>(r);
        for (int c = 0; c < size.width; ++c) {
            const int dc = wrap_offset(c, size.width);
            p[c] = static_cast<float>(std::exp(k * (dr * dr + dc * dc)));
        }
    }
    return g;
}

cv::Mat gaussian_correlation(const cv::Mat& x_f, const cv::Mat& z_f, double x_sq, double z_sq, double sigma) {
    cv::Mat cross_f;
    cv::mulSpectrums(z_f, x_f, cross_f, 0, /*conjB=*/true);
    cv::Mat k = inverse_real(cross_f);
    const double n = static_cast<double>(k.total());
    const double inv_sigma_sq = 1.0 / (sigma * sigma);
    const auto scale = static_cast<float>(2.0 * inv_sigma_sq / n);
    const auto offset = static_cast<float>(-(x_sq + z_sq) * inv_sigma_sq / n);
    for (int r = 0; r < k.rows; ++r) {
        auto* p = k.ptr<float>(r);
        for (int c = 0; c < k.cols; ++c) p[c] = std::min(0.0f, offset + scale * p[c]);
    }
    cv::exp(k, k);
    return k;
}

cv::Mat response(const TrackerState& state, const cv::Mat& features) {
    const cv::Mat z_f = forward(features);
    cv::Mat resp_f;
    if (state.config.kind == TrackerKind::mosse) {
        cv::Mat filtered;
        cv::mulSpectrums(z_f, state.numerator_f, filtered, 0);
        resp_f = divide_spectra(filtered, state.denominator_f, static_cast<float>(state.config.lambda));
    } else {
        const cv::Mat k = gaussian_correlation(state.template_f, z_f, energy_from_spectrum(state.template_f),
                                               cv::norm(features, cv::NORM_L2SQR), state.config.sigma);
        cv::mulSpectrums(state.alpha_f, forward(k), resp_f, 0);
    }
    return inverse_real(resp_f);
}

cv::Point response_peak(const cv::Mat& resp) {
    cv::Point best{0, 0};
    float best_v = -std::numeric_limits<float>::infinity();
    long best_mag = std::numeric_limits<long>::max();
    for (int r = 0; r < resp.rows; ++r) {
        const auto* p = resp.ptr<float>(r);
        const long dr = wrap_offset(r, resp.rows);
        for (int c = 0; c < resp.cols; ++c) {
            const long dc = wrap_offset(c, resp.cols);
            const long mag = dr * dr + dc * dc;
            if (p[c] > best_v || (p[c] == best_v && mag < best_mag)) {
                best_v = p[c];
                best_mag = mag;
                best = {c, r};
            }
        }
    }
    return best;
}

cv::Point displacement(cv::Point peak, cv::Size size) {
    return {wrap_offset(peak.x, size.width), wrap_offset(peak.y, size.height)};
}

double peak_to_sidelobe(const cv::Mat& resp, cv::Point peak) {
    // Shrink the exclusion zone on tiny windows so a sidelobe always remains.
    const int half_r = std::min(kExclusionHalf, std::max(0, (resp.rows - 2) / 2));
    const int half_c = std::min(kExclusionHalf, std::max(0, (resp.cols - 2) / 2));
    const double peak_v = resp.at<float>(peak);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int r = 0; r < resp.rows; ++r) {
        const auto* p = resp.ptr<float>(r);
        for (int c = 0; c < resp.cols; ++c) {
            sum += p[c];
            sum_sq += static_cast<double>(p[c]) * p[c];
        }
    }
    // Remove the exclusion zone, wrapping around the window edges.
    for (int dr = -half_r; dr <= half_r; ++dr) {
        const auto* p = resp.ptr<float>((peak.y + dr + resp.rows) % resp.rows);
        for (int dc = -half_c; dc <= half_c; ++dc) {
            const double v = p[(peak.x + dc + resp.cols) % resp.cols];
            sum -= v;
            sum_sq -= v * v;
        }
    }
    const std::size_t n = resp.total() - static_cast<std::size_t>((2 * half_r + 1) * (2 * half_c + 1));
    if (n == 0) return 0.0;
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    if (var <= 1e-12 * std::max(1.0, sum_sq / static_cast<double>(n))) {
        return peak_v > mean ? std::numeric_limits<double>::infinity() : 0.0;
    }
    return (peak_v - mean) / std::sqrt(var);
}

}  // namespace cf

namespace {

cv::Mat windowed_patch(const TrackerState& s, const FrameGray& frame) {
    cv::Mat p = cf::extract_patch(frame, s.box.cx(), s.box.cy(), s.window);
    cv::multiply(p, s.hann, p);
    return p;
}

// Fresh model terms for one training patch.
void train(TrackerState& s, const cv::Mat& features, bool first) {
    cv::Mat x_f;
    cv::dft(features, x_f, cv::DFT_COMPLEX_OUTPUT);
    if (s.config.kind == TrackerKind::mosse) {
        cv::Mat num, den;
        cv::mulSpectrums(s.target_f, x_f, num, 0, true);
        cv::mulSpectrums(x_f, x_f, den, 0, true);
        if (first) {
            s.numerator_f = num;
            s.denominator_f = den;
        } else {
            cv::addWeighted(s.numerator_f, 1.0 - s.config.learning_rate, num, s.config.learning_rate, 0.0,
                            s.numerator_f);
            cv::addWeighted(s.denominator_f, 1.0 - s.config.learning_rate, den, s.config.learning_rate, 0.0,
                            s.denominator_f);
        }
    } else {
        const double x_sq = cv::norm(features, cv::NORM_L2SQR);
        const cv::Mat k = cf::gaussian_correlation(x_f, x_f, x_sq, x_sq, s.config.sigma);
        cv::Mat k_f;
        cv::dft(k, k_f, cv::DFT_COMPLEX_OUTPUT);
        cv::Mat alpha(k_f.size(), CV_32FC2);
        // alpha = target / (k + lambda)
        for (int r = 0; r < k_f.rows; ++r) {
            const auto* pk = k_f.ptr<cv::Vec2f>(r);
            const auto* pt = s.target_f.ptr<cv::Vec2f>(r);
            auto* pa = alpha.ptr<cv::Vec2f>(r);
            for (int c = 0; c < k_f.cols; ++c) {
                const float br = pk[c][0] + static_cast<float>(s.config.lambda);
                const float bi = pk[c][1];
                const float den = br * br + bi * bi;
                pa[c][0] = (pt[c][0] * br + pt[c][1] * bi) / den;
                pa[c][1] = (pt[c][1] * br - pt[c][0] * bi) / den;
            }
        }
        if (first) {
            s.alpha_f = alpha;
            s.template_f = x_f;
        } else {
            cv::addWeighted(s.alpha_f, 1.0 - s.config.learning_rate, alpha, s.config.learning_rate, 0.0, s.alpha_f);
            cv::addWeighted(s.template_f, 1.0 - s.config.learning_rate, x_f, s.config.learning_rate, 0.0,
                            s.template_f);
        }
    }
}

BBox keep_inside(BBox b, cv::Size frame) {
    b.x = std::clamp(b.x, 0.0, std::max(0.0, frame.width - b.w));
    b.y = std::clamp(b.y, 0.0, std::max(0.0, frame.height - b.h));
    return b;
}

}  // namespace

TrackerState tracker_init(const FrameGray& frame, const BBox& box, const TrackerConfig& cfg) {
    cfg.validate();
    if (frame.empty()) {
        throw InvalidInput("tracker init on an empty frame");
    }
    if (!box.valid()) {
        throw InvalidInput("tracker init box must have positive size");
    }
    TrackerState s;
    s.config = cfg;
    s.frame_size = {frame.width(), frame.height()};
    s.box = box;
    s.window = cf::window_size(box, cfg.padding);
    if (s.window.width < 8 || s.window.height < 8) {
        throw InvalidInput("tracker box too small: padded window is " + std::to_string(s.window.width) + "x" +
                           std::to_string(s.window.height) + ", minimum 8x8");
    }
    s.hann = cf::hann_window(s.window);
    const cv::Mat target = cf::gaussian_target(s.window, cfg.peak_bandwidth * std::sqrt(box.w * box.h));
    cv::dft(target, s.target_f, cv::DFT_COMPLEX_OUTPUT);
    train(s, windowed_patch(s, frame), /*first=*/true);
    return s;
}

TrackStep tracker_update(TrackerState& s, const FrameGray& frame) {
    if (frame.width() != s.frame_size.width || frame.height() != s.frame_size.height) {
        throw InvalidInput("frame dimensions differ from the tracker's init frame");
    }
    const cv::Mat resp = cf::response(s, windowed_patch(s, frame));
    const cv::Point peak = cf::response_peak(resp);
    const double psr = cf::peak_to_sidelobe(resp, peak);
    ++s.frames_since_init;
    s.last_psr = psr;

    if (!(psr >= s.config.psr_threshold)) {
        return {s.box, psr, TrackStatus::failed};
    }
    const cv::Point d = cf::displacement(peak, s.window);
    BBox moved = s.box;
    moved.x += d.x;
    moved.y += d.y;
    s.box = keep_inside(moved, s.frame_size);
    train(s, windowed_patch(s, frame), /*first=*/false);
    return {s.box, psr, TrackStatus::ok};
}

double measure_fps(const TrackerConfig& cfg, const FrameSeq& seq, const BBox& init_box) {
    if (seq.size() == 0) {
        throw InvalidInput("measure_fps needs a non-empty sequence");
    }
    using clock = std::chrono::steady_clock;
    // Frames are decoded up front so only tracker work is timed.
    std::vector<FrameGray> frames;
    frames.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) frames.push_back(seq.frame(i));

    const auto start = clock::now();
    TrackerState state = tracker_init(frames.front(), init_box, cfg);
    for (std::size_t i = 1; i < frames.size(); ++i) {
        tracker_update(state, frames[i]);
    }
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    return static_cast<double>(frames.size()) / std::max(secs, 1e-9);
}

}  // namespace longtrack
