// augment.hpp: box-aware affine augmentation and the range/probability sweeps.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "longtrack/core.hpp"

namespace longtrack {

// ---------------------------------------------------------------------------
// Affine geometry
// ---------------------------------------------------------------------------

/// Row-major 2x3 matrix [a b c; d e f] mapping (x, y) to
/// (a x + b y + c, d x + e y + f) in continuous pixel coordinates, where
/// pixel (i, j) spans [j, j+1) x [i, i+1).
using Affine = std::array<double, 6>;

Affine identity_affine();
/// `outer` applied after `inner`.
Affine compose(const Affine& outer, const Affine& inner);
/// Throws InvalidInput when the linear part is singular.
Affine invert(const Affine& m);
std::pair<double, double> apply(const Affine& m, double x, double y);

Affine hflip_matrix(int width);
/// Uniform scale about the image center.
Affine scale_matrix(double s, int width, int height);
/// Horizontal shear by `degrees` about the image center: x += tan(deg) (y - cy).
Affine shear_matrix(double degrees, int width, int height);
/// Rotation about the image center; positive angles turn counter-clockwise
/// on screen.
Affine rotate_matrix(double degrees, int width, int height);
Affine translate_matrix(double dx);

/// Axis-aligned hull of the four transformed corners, clipped to the image;
/// nullopt when less than 1 px^2 survives. Throws InvalidInput for a
/// singular matrix.
std::optional<BBox> affine_box(const BBox& b, const Affine& m, int width, int height);

// ---------------------------------------------------------------------------
// Samples and parameters
// ---------------------------------------------------------------------------

enum class Transform { hflip, rescale, shear, rotate, translate };

const char* to_string(Transform t);
Transform transform_from_string(const std::string& s);

struct LabeledBox {
    BBox box;
    std::string label;
    friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct Sample {
    cv::Mat image;  // 8-bit, 1 or 3 channels
    std::vector<LabeledBox> boxes;
};

struct AugParams {
    double shear = 0.0;      // degrees, +-shear
    double rotate = 0.0;     // degrees, +-rotate
    double translate = 0.0;  // pixels, +-translate, horizontal
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    bool hflip = false;
    double p = 0.0;

    void validate() const;
};

/// One realisation of AugParams. Unset optionals were not applied.
struct AugDraw {
    bool hflip = false;
    std::optional<double> scale;
    std::optional<double> shear;
    std::optional<double> rotate;
    std::optional<double> translate;

    bool any() const { return hflip || scale || shear || rotate || translate; }
};

/// Each transform consumes three draws (apply, magnitude, sign) whether or
/// not it is enabled, so a seed maps to the same outcomes for any params.
AugDraw draw_augmentation(const AugParams& params, std::uint64_t seed);

/// hflip, then rescale, shear, rotate, translate.
Affine augmentation_matrix(const AugDraw& draw, int width, int height);

/// Bilinear warp of the image plus box mapping; boxes that clip away are
/// dropped. Returns an exact copy when no transform fires.
Sample apply_affine(const Sample& s, const Affine& m);
Sample apply_augmentation(const Sample& s, const AugParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::filesystem::path image;  // resolved against the manifest directory on load
    std::vector<LabeledBox> boxes;
};

/// What produced a manifest: nothing, a fixed +value transform, or random
/// params.
struct ManifestOrigin {
    enum class Mode { none, fixed, random };
    Mode mode = Mode::none;
    Transform transform = Transform::rotate;
    double value = 0.0;
    AugParams params;
};

struct Manifest {
    std::vector<ManifestEntry> samples;
    ManifestOrigin origin;
    std::uint64_t seed = 0;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& m);

/// Writes one PNG per sample plus manifest.json under `out_dir` and returns
/// the manifest path. Sample i uses seed derive_seed(seed, i).
std::filesystem::path augment_manifest(const std::filesystem::path& manifest, const AugParams& params,
                                       std::uint64_t seed, const std::filesystem::path& out_dir);

/// Every sample transformed by exactly +value of one transform.
std::filesystem::path augment_manifest_fixed(const std::filesystem::path& manifest, Transform t, double value,
                                             const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

class Trainer {
public:
    virtual ~Trainer() = default;
    /// Validation accuracy in [0, 1] for the dataset described by `manifest`.
    virtual double evaluate(const std::filesystem::path& manifest) = 0;
};

/// Runs `argv... <manifest>` and reads a single real from its stdout.
class SubprocessTrainer final : public Trainer {
public:
    explicit SubprocessTrainer(std::vector<std::string> argv) : argv_(std::move(argv)) {}
    double evaluate(const std::filesystem::path& manifest) override;

private:
    std::vector<std::string> argv_;
};

struct RangeResult {
    Transform transform = Transform::rotate;
    std::vector<std::pair<double, double>> table;  // (value, accuracy) in evaluation order
    double best = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// Evaluates the ascending ladder until accuracy first drops. The first
/// maximum wins and the range is +-max(0, best - 1).
RangeResult search_range(const std::function<double(double)>& accuracy_at, Transform t,
                         const std::vector<double>& ladder);
RangeResult search_range(Trainer& trainer, const std::filesystem::path& manifest, Transform t,
                         const std::vector<double>& ladder, const std::filesystem::path& work_dir);

struct ProbabilityResult {
    std::vector<std::pair<double, double>> table;  // (p, accuracy)
    double best_p = 0.0;
    double best_accuracy = 0.0;
};

/// Argmax over P; ties go to the smallest p.
ProbabilityResult search_probability(const std::function<double(double)>& accuracy_at, const std::vector<double>& P);
ProbabilityResult search_probability(Trainer& trainer, const std::filesystem::path& manifest, const AugParams& ranges,
                                     const std::vector<double>& P, std::uint64_t seed,
                                     const std::filesystem::path& work_dir);

std::string range_result_to_json(const RangeResult& r);
std::string probability_result_to_json(const ProbabilityResult& r);

}  // namespace longtrack
