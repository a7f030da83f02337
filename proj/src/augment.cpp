#include "longtrack/augment.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "longtrack/rng.hpp"

namespace longtrack {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Affine geometry
// ---------------------------------------------------------------------------

Affine identity_affine() { return {1, 0, 0, 0, 1, 0}; }

Affine compose(const Affine& a, const Affine& b) {
    return {a[0] * b[0] + a[1] * b[3],        a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],        a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]};
}

namespace {

double det2(const Affine& m) { return m[0] * m[4] - m[1] * m[3]; }

void require_invertible(const Affine& m) {
    for (double v : m) {
        if (!std::isfinite(v)) throw InvalidInput("affine matrix has a non-finite entry");
    }
    if (std::abs(det2(m)) < 1e-12) throw InvalidInput("affine matrix is singular");
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Affine invert(const Affine& m) {
    require_invertible(m);
    const double d = det2(m);
    const double a = m[4] / d, b = -m[1] / d, c = -m[3] / d, e = m[0] / d;
    return {a, b, -(a * m[2] + b * m[5]), c, e, -(c * m[2] + e * m[5])};
}

std::pair<double, double> apply(const Affine& m, double x, double y) {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
}

Affine hflip_matrix(int width) { return {-1, 0, static_cast<double>(width), 0, 1, 0}; }

Affine scale_matrix(double s, int width, int height) {
    const double cx = 0.5 * width, cy = 0.5 * height;
    return {s, 0, (1 - s) * cx, 0, s, (1 - s) * cy};
}

Affine shear_matrix(double degrees, int /*width*/, int height) {
    const double k = std::tan(radians(degrees));
    return {1, k, -k * 0.5 * height, 0, 1, 0};
}

Affine rotate_matrix(double degrees, int width, int height) {
    const double a = std::cos(radians(degrees)), b = std::sin(radians(degrees));
    const double cx = 0.5 * width, cy = 0.5 * height;
    return {a, b, (1 - a) * cx - b * cy, -b, a, b * cx + (1 - a) * cy};
}

Affine translate_matrix(double dx) { return {1, 0, dx, 0, 1, 0}; }

std::optional<BBox> affine_box(const BBox& b, const Affine& m, int width, int height) {
    require_invertible(m);
    const std::array<std::pair<double, double>, 4> corners{
        apply(m, b.x, b.y), apply(m, b.right(), b.y), apply(m, b.x, b.bottom()), apply(m, b.right(), b.bottom())};
    double x0 = corners[0].first, x1 = x0, y0 = corners[0].second, y1 = y0;
    for (const auto& [x, y] : corners) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    }
    const auto clipped = clip({x0, y0, x1 - x0, y1 - y0}, width, height);
    if (!clipped || clipped->area() < 1.0) return std::nullopt;
    return clipped;
}

// ---------------------------------------------------------------------------
// Samples and parameters
// ---------------------------------------------------------------------------

const char* to_string(Transform t) {
    switch (t) {
        case Transform::hflip: return "hflip";
        case Transform::rescale: return "rescale";
        case Transform::shear: return "shear";
        case Transform::rotate: return "rotate";
        case Transform::translate: return "translate";
    }
    return "?";
}

Transform transform_from_string(const std::string& s) {
    for (Transform t : {Transform::hflip, Transform::rescale, Transform::shear, Transform::rotate,
                        Transform::translate}) {
        if (s == to_string(t)) return t;
    }
    throw InvalidInput("unknown transform '" + s + "'");
}

void AugParams::validate() const {
    auto finite_nonneg = [](double v, const char* name) {
        if (!std::isfinite(v) || v < 0.0) throw InvalidInput(std::string(name) + " range must be >= 0");
    };
    finite_nonneg(shear, "shear");
    finite_nonneg(rotate, "rotate");
    finite_nonneg(translate, "translate");
    if (!std::isfinite(scale_lo) || !std::isfinite(scale_hi) || scale_lo <= 0.0 || scale_lo > scale_hi) {
        throw InvalidInput("scale range needs 0 < lo <= hi");
    }
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("probability must lie in [0, 1]");
}

AugDraw draw_augmentation(const AugParams& params, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    struct Triple {
        double apply, magnitude, sign;
    };
    auto next = [&] { return Triple{rng.unit(), rng.unit(), rng.unit()}; };
    auto signed_value = [](const Triple& d, double range) {
        const double v = range * d.magnitude;
        return d.sign < 0.5 ? -v : v;
    };

    AugDraw out;
    const Triple flip = next(), scale = next(), shear = next(), rotate = next(), translate = next();
    out.hflip = params.hflip && flip.apply < params.p;
    if ((params.scale_lo != 1.0 || params.scale_hi != 1.0) && scale.apply < params.p) {
        out.scale = params.scale_lo + (params.scale_hi - params.scale_lo) * scale.magnitude;
    }
    if (params.shear > 0.0 && shear.apply < params.p) out.shear = signed_value(shear, params.shear);
    if (params.rotate > 0.0 && rotate.apply < params.p) out.rotate = signed_value(rotate, params.rotate);
    if (params.translate > 0.0 && translate.apply < params.p) out.translate = signed_value(translate, params.translate);
    return out;
}

Affine augmentation_matrix(const AugDraw& d, int width, int height) {
    Affine m = identity_affine();
    if (d.hflip) m = compose(hflip_matrix(width), m);
    if (d.scale) m = compose(scale_matrix(*d.scale, width, height), m);
    if (d.shear) m = compose(shear_matrix(*d.shear, width, height), m);
    if (d.rotate) m = compose(rotate_matrix(*d.rotate, width, height), m);
    if (d.translate) m = compose(translate_matrix(*d.translate), m);
    return m;
}

namespace {

void require_sample(const Sample& s) {
    if (s.image.empty()) throw InvalidInput("sample image is empty");
    if (s.image.depth() != CV_8U || (s.image.channels() != 1 && s.image.channels() != 3)) {
        throw InvalidInput("sample image must be 8-bit with 1 or 3 channels");
    }
}

Sample copy_of(const Sample& s) { return {s.image.clone(), s.boxes}; }

}  // namespace

Sample apply_affine(const Sample& s, const Affine& m) {
    require_sample(s);
    require_invertible(m);
    if (m == identity_affine()) return copy_of(s);

    // warpAffine works on pixel-center indices: x_idx = x - 0.5.
    const cv::Mat idx = (cv::Mat_<double>(2, 3) << m[0], m[1], m[2] + 0.5 * (m[0] + m[1]) - 0.5,  //
                         m[3], m[4], m[5] + 0.5 * (m[3] + m[4]) - 0.5);
    Sample out;
    cv::warpAffine(s.image, out.image, idx, s.image.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    for (const auto& b : s.boxes) {
        if (auto mapped = affine_box(b.box, m, s.image.cols, s.image.rows)) out.boxes.push_back({*mapped, b.label});
    }
    return out;
}

Sample apply_augmentation(const Sample& s, const AugParams& params, std::uint64_t seed) {
    const AugDraw d = draw_augmentation(params, seed);
    if (!d.any()) {
        require_sample(s);
        return copy_of(s);
    }
    return apply_affine(s, augmentation_matrix(d, s.image.cols, s.image.rows));
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

namespace {

json params_to_json(const AugParams& p) {
    return {{"shear", p.shear},       {"rotate", p.rotate}, {"translate", p.translate},
            {"scale", {p.scale_lo, p.scale_hi}}, {"hflip", p.hflip}, {"p", p.p}};
}

AugParams params_from_json(const json& j) {
    AugParams p;
    p.shear = j.value("shear", 0.0);
    p.rotate = j.value("rotate", 0.0);
    p.translate = j.value("translate", 0.0);
    if (j.contains("scale")) {
        p.scale_lo = j.at("scale").at(0).get<double>();
        p.scale_hi = j.at("scale").at(1).get<double>();
    }
    p.hflip = j.value("hflip", false);
    p.p = j.value("p", 0.0);
    p.validate();
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << text;
}

Sample load_sample(const ManifestEntry& e) {
    Sample s;
    s.image = cv::imread(e.image.string(), cv::IMREAD_UNCHANGED);
    if (s.image.empty()) throw InvalidInput("cannot read image " + e.image.string());
    require_sample(s);
    for (const auto& b : e.boxes) {
        const auto c = clip(b.box, s.image.cols, s.image.rows);
        if (!c) throw InvalidInput("box outside image " + e.image.string());
        s.boxes.push_back({*c, b.label});
    }
    return s;
}

template <typename Fn>
fs::path write_augmented(const fs::path& manifest, const fs::path& out_dir, ManifestOrigin origin, std::uint64_t seed,
                         Fn&& transform) {
    const Manifest in = load_manifest(manifest);
    fs::create_directories(out_dir);
    Manifest out;
    out.origin = std::move(origin);
    out.seed = seed;
    for (std::size_t i = 0; i < in.samples.size(); ++i) {
        const Sample s = transform(load_sample(in.samples[i]), i);
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        if (!cv::imwrite((out_dir / name).string(), s.image)) {
            throw InvalidInput("cannot write " + (out_dir / name).string());
        }
        out.samples.push_back({out_dir / name, s.boxes});
    }
    const fs::path path = out_dir / "manifest.json";
    save_manifest(path, out);
    return path;
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open manifest " + path.string());
    Manifest m;
    try {
        const json j = json::parse(in);
        m.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("origin")) {
            const auto& o = j.at("origin");
            const std::string mode = o.at("mode").get<std::string>();
            if (mode == "fixed") {
                m.origin.mode = ManifestOrigin::Mode::fixed;
                m.origin.transform = transform_from_string(o.at("transform").get<std::string>());
                m.origin.value = o.at("value").get<double>();
            } else if (mode == "random") {
                m.origin.mode = ManifestOrigin::Mode::random;
                m.origin.params = params_from_json(o.at("params"));
            } else if (mode != "none") {
                throw InvalidInput("unknown manifest origin '" + mode + "'");
            }
        }
        const fs::path base = path.parent_path();
        for (const auto& s : j.at("samples")) {
            ManifestEntry e;
            const fs::path image = s.at("image").get<std::string>();
            e.image = image.is_absolute() ? image : base / image;
            for (const auto& b : s.value("boxes", json::array())) {
                const auto& bb = b.at("box");
                if (!bb.is_array() || bb.size() != 4) throw InvalidInput("manifest box must have 4 numbers");
                LabeledBox lb{{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()},
                              b.value("label", std::string{})};
                if (!lb.box.valid()) throw InvalidInput("manifest box must have positive size");
                e.boxes.push_back(std::move(lb));
            }
            m.samples.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw InvalidInput("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void save_manifest(const fs::path& path, const Manifest& m) {
    json origin;
    switch (m.origin.mode) {
        case ManifestOrigin::Mode::none: origin = {{"mode", "none"}}; break;
        case ManifestOrigin::Mode::fixed:
            origin = {{"mode", "fixed"}, {"transform", to_string(m.origin.transform)}, {"value", m.origin.value}};
            break;
        case ManifestOrigin::Mode::random: origin = {{"mode", "random"}, {"params", params_to_json(m.origin.params)}};
    }
    json samples = json::array();
    const fs::path base = path.parent_path();
    for (const auto& e : m.samples) {
        json boxes = json::array();
        for (const auto& b : e.boxes) boxes.push_back({{"box", {b.box.x, b.box.y, b.box.w, b.box.h}}, {"label", b.label}});
        const fs::path rel = e.image.lexically_relative(base);
        const bool inside = !rel.empty() && *rel.begin() != "..";
        samples.push_back({{"image", (inside ? rel : e.image).generic_string()}, {"boxes", boxes}});
    }
    write_text(path, json{{"seed", m.seed}, {"origin", origin}, {"samples", samples}}.dump(2) + "\n");
}

fs::path augment_manifest(const fs::path& manifest, const AugParams& params, std::uint64_t seed,
                          const fs::path& out_dir) {
    params.validate();
    ManifestOrigin origin;
    origin.mode = ManifestOrigin::Mode::random;
    origin.params = params;
    return write_augmented(manifest, out_dir, origin, seed, [&](const Sample& s, std::size_t i) {
        return apply_augmentation(s, params, derive_seed(seed, i));
    });
}

fs::path augment_manifest_fixed(const fs::path& manifest, Transform t, double value, const fs::path& out_dir) {
    if (!std::isfinite(value)) throw InvalidInput("transform value must be finite");
    if (t == Transform::rescale && value <= 0.0) throw InvalidInput("scale must be positive");
    ManifestOrigin origin;
    origin.mode = ManifestOrigin::Mode::fixed;
    origin.transform = t;
    origin.value = value;
    return write_augmented(manifest, out_dir, origin, 0, [&](const Sample& s, std::size_t) {
        const int w = s.image.cols, h = s.image.rows;
        Affine m = identity_affine();
        switch (t) {
            case Transform::hflip: m = hflip_matrix(w); break;
            case Transform::rescale: m = scale_matrix(value, w, h); break;
            case Transform::shear: m = shear_matrix(value, w, h); break;
            case Transform::rotate: m = rotate_matrix(value, w, h); break;
            case Transform::translate: m = translate_matrix(value); break;
        }
        return apply_affine(s, m);
    });
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

double SubprocessTrainer::evaluate(const fs::path& manifest) {
    if (argv_.empty()) throw InvalidInput("trainer command is empty");
    std::vector<std::string> args = argv_;
    args.push_back(manifest.string());
    std::vector<char*> cargv;
    for (auto& a : args) cargv.push_back(a.data());
    cargv.push_back(nullptr);

    int fds[2];
    if (::pipe(fds) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(fds[0]);
        ::close(fds[1]);
        throw Error(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::dup2(fds[1], STDOUT_FILENO);
        ::close(fds[0]);
        ::close(fds[1]);
        ::execvp(cargv[0], cargv.data());
        ::_exit(127);
    }
    ::close(fds[1]);
    std::string output;
    char buf[4096];
    while (true) {
        const ssize_t n = ::read(fds[0], buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        output.append(buf, static_cast<std::size_t>(n));
    }
    ::close(fds[0]);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw Error("trainer exited with failure");

    const auto first = output.find_first_not_of(" \t\r\n");
    const auto last = output.find_last_not_of(" \t\r\n");
    if (first == std::string::npos) throw Error("trainer printed nothing");
    const std::string_view text(output.data() + first, last - first + 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error("trainer output is not a single real: '" + std::string(text) + "'");
    }
    return v;
}

namespace {

std::string value_tag(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

double checked_accuracy(const std::function<double(double)>& accuracy_at, double v, const std::string& what) {
    double acc = 0.0;
    try {
        acc = accuracy_at(v);
    } catch (const std::exception& e) {
        throw Error("trainer failed at " + what + "=" + value_tag(v) + ": " + e.what());
    }
    if (!(acc >= 0.0 && acc <= 1.0)) {
        throw Error("trainer accuracy at " + what + "=" + value_tag(v) + " is outside [0, 1]");
    }
    return acc;
}

}  // namespace

RangeResult search_range(const std::function<double(double)>& accuracy_at, Transform t,
                         const std::vector<double>& ladder) {
    if (t != Transform::shear && t != Transform::rotate && t != Transform::translate) {
        throw InvalidInput("range search covers shear, rotate and translate");
    }
    if (ladder.empty()) throw InvalidInput("ladder is empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!std::isfinite(ladder[i]) || ladder[i] < 0.0) throw InvalidInput("ladder values must be >= 0");
        if (i > 0 && ladder[i] <= ladder[i - 1]) throw InvalidInput("ladder must be strictly ascending");
    }
    RangeResult r;
    r.transform = t;
    for (double v : ladder) {
        const double acc = checked_accuracy(accuracy_at, v, to_string(t));
        r.table.emplace_back(v, acc);
        if (r.table.size() > 1 && acc < r.table[r.table.size() - 2].second) break;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.table.size(); ++i) {
        if (r.table[i].second > r.table[best].second) best = i;
    }
    r.best = r.table[best].first;
    r.hi = std::max(0.0, r.best - 1.0);
    r.lo = -r.hi;
    return r;
}

RangeResult search_range(Trainer& trainer, const fs::path& manifest, Transform t, const std::vector<double>& ladder,
                         const fs::path& work_dir) {
    return search_range(
        [&](double v) {
            return trainer.evaluate(
                augment_manifest_fixed(manifest, t, v, work_dir / (std::string(to_string(t)) + "_" + value_tag(v))));
        },
        t, ladder);
}

ProbabilityResult search_probability(const std::function<double(double)>& accuracy_at, const std::vector<double>& P) {
    if (P.empty()) throw InvalidInput("probability list is empty");
    for (double p : P) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("probabilities must lie in [0, 1]");
    }
    ProbabilityResult r;
    for (double p : P) {
        const double acc = checked_accuracy(accuracy_at, p, "p");
        r.table.emplace_back(p, acc);
        if (r.table.size() == 1 || acc > r.best_accuracy || (acc == r.best_accuracy && p < r.best_p)) {
            r.best_p = p;
            r.best_accuracy = acc;
        }
    }
    return r;
}

ProbabilityResult search_probability(Trainer& trainer, const fs::path& manifest, const AugParams& ranges,
                                     const std::vector<double>& P, std::uint64_t seed, const fs::path& work_dir) {
    return search_probability(
        [&](double p) {
            AugParams params = ranges;
            params.p = p;
            return trainer.evaluate(augment_manifest(manifest, params, seed, work_dir / ("p_" + value_tag(p))));
        },
        P);
}

std::string range_result_to_json(const RangeResult& r) {
    json table = json::array();
    for (const auto& [v, a] : r.table) table.push_back({{"value", v}, {"accuracy", a}});
    return json{{"transform", to_string(r.transform)}, {"table", table}, {"best", r.best}, {"range", {r.lo, r.hi}}}
               .dump(2) +
           "\n";
}

std::string probability_result_to_json(const ProbabilityResult& r) {
    json table = json::array();
    for (const auto& [p, a] : r.table) table.push_back({{"p", p}, {"accuracy", a}});
    return json{{"table", table}, {"best_p", r.best_p}, {"best_accuracy", r.best_accuracy}}.dump(2) + "\n";
}

}  // namespace longtrack
