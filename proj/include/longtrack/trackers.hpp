// trackers.hpp: correlation-filter trackers (MOSSE, KCF) behind one contract.
//
// Features are raw luma scaled to [-0.5, 0.5] and multiplied by a Hann window.
// The desired response is a Gaussian whose peak sits at index (0,0) of the
// window (circularly wrapped), so an argmax at (r,c) is a displacement of
// (r,c) modulo the window size. Scale is fixed; only translation is estimated.
#pragma once

#include <string>

#include <opencv2/core.hpp>

#include "longtrack/core.hpp"

namespace longtrack {

enum class TrackerKind { mosse, kcf };

const char* to_string(TrackerKind k);
TrackerKind tracker_kind_from_string(const std::string& s);

struct TrackerConfig {
    TrackerKind kind = TrackerKind::kcf;
    double lambda = 1e-4;          // regularization
    double learning_rate = 0.02;   // model blend rate
    double padding = 2.5;          // search window = padding x box
    double sigma = 0.5;            // KCF gaussian kernel bandwidth
    double peak_bandwidth = 0.1;   // target peak sigma = peak_bandwidth * sqrt(w*h)
    double psr_threshold = 7.0;

    static TrackerConfig defaults(TrackerKind kind);

    /// Throws InvalidInput when a positivity constraint is violated.
    void validate() const;
};

/// Learned model plus the box it currently tracks.
///
/// MOSSE keeps the filter as numerator/denominator spectra; KCF keeps the dual
/// coefficients and the template spectrum. The unused pair stays empty.
struct TrackerState {
    TrackerConfig config;
    BBox box;
    cv::Size window;           // padded window (columns x rows)
    cv::Size frame_size;       // dimensions of the init frame
    cv::Mat hann;              // CV_32F, window sized
    cv::Mat target_f;          // spectrum of the desired response, CV_32FC2

    cv::Mat numerator_f;       // MOSSE
    cv::Mat denominator_f;     // MOSSE
    cv::Mat alpha_f;           // KCF
    cv::Mat template_f;        // KCF

    int frames_since_init = 0;
    double last_psr = 0.0;
};

enum class TrackStatus { ok, failed };

struct TrackStep {
    BBox box;
    double psr = 0.0;
    TrackStatus status = TrackStatus::ok;
};

/// Throws InvalidInput if the config is invalid or either padded side is < 8 px.
TrackerState tracker_init(const FrameGray& frame, const BBox& box, const TrackerConfig& cfg);

/// Locates the target in `frame`. On failure (psr below threshold) the model
/// and box are left untouched.
TrackStep tracker_update(TrackerState& state, const FrameGray& frame);

/// Wall-clock frames/second of init on frame 0 plus updates over the rest.
double measure_fps(const TrackerConfig& cfg, const FrameSeq& seq, const BBox& init_box);

// Building blocks, exposed for tests.
namespace cf {

/// Padded window dimensions for a box.
cv::Size window_size(const BBox& box, double padding);

/// Edge-replicated window of `size` centred on (cx, cy), features scaled to [-0.5, 0.5].
cv::Mat extract_patch(const FrameGray& frame, double cx, double cy, cv::Size size);

cv::Mat hann_window(cv::Size size);

/// Gaussian desired response with its peak at (0,0), wrapped.
cv::Mat gaussian_target(cv::Size size, double sigma);

/// Circular Gaussian kernel correlation k(x, z) over all shifts of z,
/// spatial domain, with squared distance normalised by element count.
cv::Mat gaussian_correlation(const cv::Mat& x_f, const cv::Mat& z_f, double x_sq, double z_sq, double sigma);

/// Response map of the current model for a windowed feature patch.
cv::Mat response(const TrackerState& state, const cv::Mat& features);

/// (peak - sidelobe mean) / sidelobe stddev, excluding an 11x11 zone around the peak.
double peak_to_sidelobe(const cv::Mat& response, cv::Point peak);

/// Integer argmax; ties broken toward the smallest wrapped displacement,
/// then row-major order.
cv::Point response_peak(const cv::Mat& response);

/// Wrapped displacement of a response index.
cv::Point displacement(cv::Point peak, cv::Size size);

}  // namespace cf

}  // namespace longtrack
