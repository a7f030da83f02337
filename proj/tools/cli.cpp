#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "longtrack/augment.hpp"
#include "longtrack/cli.hpp"
#include "longtrack/detect.hpp"
#include "longtrack/eval.hpp"
#include "longtrack/hybrid.hpp"
#include "longtrack/proposer.hpp"
#include "longtrack/synth.hpp"
#include "longtrack/trackers.hpp"

namespace longtrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << text;
}

std::vector<std::string> split_command(const std::string& cmd) {
    std::istringstream in(cmd);
    std::vector<std::string> argv;
    for (std::string w; in >> w;) argv.push_back(w);
    if (argv.empty()) throw UsageError("empty command");
    return argv;
}

/// Runs a flag-validation step, reporting bad values as usage errors.
template <class F>
auto as_usage(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
}

struct Globals {
    std::uint64_t seed = 0;
    int threads = 0;
};

struct FrameOpts {
    std::string frames;
    std::string meta;
};

void add_frame_options(CLI::App* sc, FrameOpts& o, bool required) {
    auto* f = sc->add_option("--frames", o.frames, "Frame directory or raw-luma file");
    if (required) f->required();
    sc->add_option("--meta", o.meta, "Meta file (default: <dir>/meta.txt or <raw>.meta)");
}

std::shared_ptr<const FrameSource> open_frames(const FrameOpts& o) {
    return ingest_frames(o.frames, o.meta.empty() ? std::nullopt : std::optional<fs::path>(o.meta));
}

/// Frame count, fps and size from --frames or, without it, a meta file with `frames`.
FrameMeta frame_geometry(const FrameOpts& o) {
    if (!o.frames.empty()) {
        const auto seq = open_frames(o);
        return {seq->fps(), seq->width(), seq->height(), seq->size()};
    }
    if (o.meta.empty()) throw UsageError("need --frames or --meta");
    FrameMeta m = load_meta(o.meta);
    if (!m.frames) throw UsageError("meta file needs a frames entry when --frames is absent");
    return m;
}

struct DetectorOpts {
    std::string detections;
    std::string scenario;
    std::string command;
    double latency = 0.0;
    double timeout = 30.0;
};

void add_detector_options(CLI::App* sc, DetectorOpts& o) {
    sc->add_option("--detections", o.detections, "Detection CSV replayed as the detector");
    sc->add_option("--scenario", o.scenario, "Synthetic scenario whose noisy ground truth acts as the detector");
    sc->add_option("--detector-cmd", o.command, "External detector command (newline-delimited JSON protocol)");
    sc->add_option("--latency", o.latency, "Simulated seconds per detector call")->capture_default_str();
    sc->add_option("--detector-timeout", o.timeout, "Seconds to wait for an external detector reply")
        ->capture_default_str();
}

std::unique_ptr<Detector> open_detector(const DetectorOpts& o, const FrameSource& frames, std::uint64_t seed) {
    const int given = !o.detections.empty() + !o.scenario.empty() + !o.command.empty();
    if (given != 1) throw UsageError("give exactly one of --detections, --scenario, --detector-cmd");
    if (!(o.latency >= 0.0)) throw UsageError("--latency must be >= 0");
    std::unique_ptr<Detector> det;
    if (!o.detections.empty()) {
        det = std::make_unique<FileDetector>(load_detections(o.detections));
    } else if (!o.scenario.empty()) {
        const Scenario s = load_scenario(o.scenario);
        if (s.frame_count() != frames.size() || s.width != frames.width() || s.height != frames.height()) {
            throw InvalidInput("scenario does not match the frame source");
        }
        det = std::make_unique<SyntheticDetector>(make_detector(s, generate(s, seed), seed));
    } else {
        if (frames.frame_path(0).empty()) throw UsageError("--detector-cmd needs a frame directory");
        if (!(o.timeout > 0.0)) throw UsageError("--detector-timeout must be > 0");
        const FrameSource* src = &frames;
        det = std::make_unique<SubprocessDetector>(
            split_command(o.command), [src](std::int64_t f) { return src->frame_path(static_cast<std::size_t>(f)).string(); },
            std::chrono::milliseconds(static_cast<long long>(o.timeout * 1000.0)));
    }
    det->set_latency_seconds(o.latency);
    return det;
}

struct TrackerOpts {
    std::string kind = "kcf";
    std::optional<double> lambda, learning_rate, padding, sigma, psr_threshold;
};

void add_tracker_options(CLI::App* sc, TrackerOpts& o) {
    sc->add_option("--tracker", o.kind, "kcf or mosse")->capture_default_str();
    sc->add_option("--lambda", o.lambda, "Filter regularization (default 1e-4)");
    sc->add_option("--learning-rate", o.learning_rate, "Model blend rate (default 0.02 kcf, 0.125 mosse)");
    sc->add_option("--padding", o.padding, "Search window size over box size (default 2.5)");
    sc->add_option("--sigma", o.sigma, "KCF kernel bandwidth (default 0.5)");
    sc->add_option("--psr-threshold", o.psr_threshold, "Peak-to-sidelobe failure threshold (default 7)");
}

TrackerConfig tracker_config(const TrackerOpts& o) {
    TrackerConfig c = TrackerConfig::defaults(tracker_kind_from_string(o.kind));
    if (o.lambda) c.lambda = *o.lambda;
    if (o.learning_rate) c.learning_rate = *o.learning_rate;
    if (o.padding) c.padding = *o.padding;
    if (o.sigma) c.sigma = *o.sigma;
    if (o.psr_threshold) c.psr_threshold = *o.psr_threshold;
    c.validate();
    return c;
}

struct GtOpts {
    std::string gt;
    std::string label;
    std::string agg = "mid";
    std::string series;
};

void add_gt_options(CLI::App* sc, GtOpts& o) {
    sc->add_option("--gt", o.gt, "Ground-truth detection CSV to score the timeline against");
    sc->add_option("--gt-label", o.label, "Ground-truth label to keep (default: any)");
    sc->add_option("--second-agg", o.agg, "Per-second IoU: mid (middle frame) or mean")->capture_default_str();
    sc->add_option("--iou-out", o.series, "Per-second IoU CSV");
}

struct RunOutputs {
    std::string timeline;
    std::string report;
};

void add_run_outputs(CLI::App* sc, RunOutputs& o) {
    sc->add_option("--out", o.timeline, "Timeline CSV with a source column");
    sc->add_option("--report", o.report, "Run report JSON (stdout when omitted)");
}

void emit_run(const RunReport& r, const std::string& label, const GtOpts& gt, const RunOutputs& outs,
              std::ostream& out) {
    json report = json::parse(report_to_json(r));
    if (!gt.gt.empty()) {
        const SecondAgg agg = second_agg_from_string(gt.agg);
        const BoxTimeline truth = load_timeline(gt.gt, r.timeline.size(), r.timeline.fps(), gt.label);
        const auto series = per_second_iou(r.timeline, truth, agg);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : series) {
            if (s.iou) {
                sum += *s.iou;
                ++n;
            }
        }
        report["evaluation"] = {{"mean_iou", mean_iou(r.timeline, truth)},
                                {"second_agg", to_string(agg)},
                                {"seconds_with_truth", n},
                                {"mean_second_iou", n ? sum / static_cast<double>(n) : 0.0}};
        if (!gt.series.empty()) {
            std::ostringstream csv;
            write_second_iou_csv(csv, series);
            write_file(gt.series, csv.str());
        }
    }
    if (!outs.timeline.empty()) {
        std::ostringstream csv;
        write_timeline(csv, r.timeline, label);
        write_file(outs.timeline, csv.str());
    }
    const std::string text = report.dump(2) + "\n";
    if (outs.report.empty()) {
        out << text;
    } else {
        write_file(outs.report, text);
    }
}

void check_agg(const GtOpts& gt) { (void)second_agg_from_string(gt.agg); }

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> v;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad number in ") + what + ": '" + item + "'");
        }
    }
    if (v.empty()) throw UsageError(std::string(what) + " is empty");
    return v;
}

DetectionMap load_any_detections(const fs::path& p, std::set<std::int64_t>* images = nullptr) {
    if (p.extension() == ".json") {
        CocoSet set = load_coco(p);
        if (images) {
            for (const auto& im : set.images) images->insert(im.id);
        }
        return std::move(set.annotations);
    }
    return load_detections(p);
}

DetectionMap filter_label(const DetectionMap& m, const std::string& label) {
    if (label.empty()) return m;
    DetectionMap out;
    for (const auto& [f, dets] : m) {
        for (const auto& d : dets) {
            if (d.label == label) out[f].push_back(d);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct TrackCmd {
    FrameOpts frames;
    std::vector<double> init;
    std::string init_detections;
    std::string label = "target";
    TrackerOpts tracker;
    GtOpts gt;
    RunOutputs outs;

    void add(CLI::App& app, std::function<void()>& run, const Globals&, std::ostream& out) {
        auto* sc = app.add_subcommand("track", "Track one box through every frame");
        add_frame_options(sc, frames, true);
        sc->add_option("--init", init, "Initial box x,y,w,h at frame 0")->delimiter(',')->expected(4);
        sc->add_option("--init-detections", init_detections, "Detection CSV; the best frame-0 row initialises");
        sc->add_option("--label", label, "Label written to the timeline and used to pick the frame-0 row")
            ->capture_default_str();
        add_tracker_options(sc, tracker);
        add_gt_options(sc, gt);
        add_run_outputs(sc, outs);
        sc->callback([this, &run, &out] { run = [this, &out] { execute(out); }; });
    }

    void execute(std::ostream& out) {
        const TrackerConfig cfg = as_usage([&] { return tracker_config(tracker); });
        as_usage([&] { check_agg(gt); });
        if (init.empty() == init_detections.empty()) throw UsageError("give exactly one of --init, --init-detections");
        const auto seq = open_frames(frames);
        BBox box;
        if (!init.empty()) {
            box = {init[0], init[1], init[2], init[3]};
        } else {
            const DetectionMap dets = load_detections(init_detections);
            const auto it = dets.find(0);
            const Detection* best = it == dets.end() ? nullptr : best_detection(it->second, label, std::nullopt);
            if (!best) throw InvalidInput("no frame-0 detection to initialise from");
            box = best->box;
        }
        const auto clipped = clip(box, seq->width(), seq->height());
        if (!clipped || !box.valid()) throw InvalidInput("initial box lies outside the frame");

        RunReport r;
        r.timeline = BoxTimeline(seq->size(), seq->fps());
        const auto start = std::chrono::steady_clock::now();
        TrackerState state = tracker_init(seq->frame(0), *clipped, cfg);
        r.timeline.set(0, *clipped, BoxSource::detected);
        r.events.push_back({0, RunEvent::Kind::init, 0});
        for (std::size_t f = 1; f < seq->size(); ++f) {
            const TrackStep step = tracker_update(state, seq->frame(f));
            ++r.track_steps;
            if (step.status == TrackStatus::ok) {
                r.timeline.set(f, step.box, BoxSource::tracked, 1.0);
            } else {
                ++r.failures;
                r.events.push_back({f, RunEvent::Kind::track_failure, 0});
                r.timeline.set(f, state.box, BoxSource::held, 1.0);
            }
        }
        r.compute_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.wall_seconds = r.compute_seconds;
        r.video_seconds = seq->duration_seconds();
        r.real_time_factor = r.video_seconds / std::max(r.wall_seconds, 1e-12);
        emit_run(r, label, gt, outs, out);
    }
};

struct DetectOnlyCmd {
    FrameOpts frames;
    DetectorOpts detector;
    int cadence = 0;
    std::string label;
    GtOpts gt;
    RunOutputs outs;

    void add(CLI::App& app, std::function<void()>& run, const Globals& g, std::ostream& out) {
        auto* sc = app.add_subcommand("detect-only", "Run the detector every cadence frames and hold between calls");
        add_frame_options(sc, frames, true);
        add_detector_options(sc, detector);
        sc->add_option("--cadence", cadence, "Frames between detector calls (0 = one second)")->capture_default_str();
        sc->add_option("--label", label, "Target label (default: any)");
        add_gt_options(sc, gt);
        add_run_outputs(sc, outs);
        sc->callback([this, &run, &g, &out] { run = [this, &g, &out] { execute(g, out); }; });
    }

    void execute(const Globals& g, std::ostream& out) {
        if (cadence < 0) throw UsageError("--cadence must be >= 0");
        as_usage([&] { check_agg(gt); });
        const auto seq = open_frames(frames);
        auto det = open_detector(detector, *seq, g.seed);
        const RunReport r = run_detection_only(*seq, *det, cadence, label);
        emit_run(r, label.empty() ? "target" : label, gt, outs, out);
    }
};

struct HybridCmd {
    FrameOpts frames;
    DetectorOpts detector;
    double interval = 5.0;
    int cadence = 0;
    std::string policy = "redetect-now";
    std::string label;
    TrackerOpts tracker;
    GtOpts gt;
    RunOutputs outs;

    void add(CLI::App& app, std::function<void()>& run, const Globals& g, std::ostream& out) {
        auto* sc = app.add_subcommand("hybrid", "Detect every interval seconds and track in between");
        add_frame_options(sc, frames, true);
        add_detector_options(sc, detector);
        sc->add_option("--interval", interval, "Seconds between scheduled detections")->capture_default_str();
        sc->add_option("--cadence", cadence, "Frames between detector calls while no track is held (0 = one second)")
            ->capture_default_str();
        sc->add_option("--policy", policy, "On tracker failure: redetect-now or coast")->capture_default_str();
        sc->add_option("--label", label, "Target label (default: any)");
        add_tracker_options(sc, tracker);
        add_gt_options(sc, gt);
        add_run_outputs(sc, outs);
        sc->callback([this, &run, &g, &out] { run = [this, &g, &out] { execute(g, out); }; });
    }

    void execute(const Globals& g, std::ostream& out) {
        const SchedulerConfig cfg = as_usage([&] {
            SchedulerConfig c;
            c.redetect_interval = interval;
            c.detection_cadence = cadence;
            c.failure_policy = failure_policy_from_string(policy);
            c.tracker = tracker_config(tracker);
            c.target_label = label;
            c.validate();
            check_agg(gt);
            return c;
        });
        const auto seq = open_frames(frames);
        auto det = open_detector(detector, *seq, g.seed);
        const RunReport r = run_hybrid(*seq, *det, cfg);
        emit_run(r, label.empty() ? "target" : label, gt, outs, out);
    }
};

struct ProposeCmd {
    FrameOpts frames;
    std::string detections;
    double window = 12.0;
    std::string method = "isodata";
    bool include_zero_bin = false;
    bool every_frame = false;
    std::string label;
    std::string gt_stats;
    std::optional<double> min_area;
    std::vector<double> box_size;
    std::string out_csv;
    std::string report;
    std::string accumulators;

    void add(CLI::App& app, std::function<void()>& run, const Globals&, std::ostream& out) {
        auto* sc = app.add_subcommand("propose", "Project detections over windows and propose activity regions");
        add_frame_options(sc, frames, false);
        sc->add_option("--detections", detections, "Detection CSV to project")->required();
        sc->add_option("--window", window, "Window length in seconds")->capture_default_str();
        sc->add_option("--method", method, "isodata, li, mean, minimum, otsu, triangle or yen")->capture_default_str();
        sc->add_flag("--include-zero-bin", include_zero_bin, "Keep zero-count pixels in the threshold histogram");
        sc->add_flag("--every-frame", every_frame, "Project every frame instead of one per second");
        sc->add_option("--label", label, "Detection label to project (default: any)");
        sc->add_option("--gt-stats", gt_stats, "Ground-truth CSV giving the minimum area and median box size");
        sc->add_option("--min-area", min_area, "Minimum component area in px^2");
        sc->add_option("--box-size", box_size, "Proposal box size w,h")->delimiter(',')->expected(2);
        sc->add_option("--out", out_csv, "Proposal CSV (one row per box per second)")->required();
        sc->add_option("--report", report, "Per-window report JSON");
        sc->add_option("--accumulators", accumulators, "Directory for 16-bit PGM accumulator dumps");
        sc->callback([this, &run, &out] { run = [this, &out] { execute(out); }; });
    }

    void execute(std::ostream& out) {
        const ProposerConfig cfg = as_usage([&] {
            ProposerConfig c;
            c.window_seconds = window;
            c.method = threshold_method_from_string(method);
            c.include_zero_bin = include_zero_bin;
            c.every_frame = every_frame;
            c.label = label;
            c.validate();
            return c;
        });
        const FrameMeta geo = frame_geometry(frames);
        GtSizeStats stats = GtSizeStats::defaults(geo.width, geo.height);
        if (!gt_stats.empty()) {
            std::vector<BBox> boxes;
            for (const auto& d : flatten(load_detections(gt_stats))) boxes.push_back(d.box);
            stats = GtSizeStats::from_boxes(boxes);
        }
        if (min_area) stats.min_area = *min_area;
        if (!box_size.empty()) {
            stats.median_width = box_size[0];
            stats.median_height = box_size[1];
        }
        as_usage([&] { stats.validate(); });

        const DetectionMap dets = load_detections(detections);
        const ProposalRun run = propose_video(dets, *geo.frames, geo.fps, geo.width, geo.height, stats, cfg);
        const DetectionMap props = proposals_per_second(run, *geo.frames, geo.fps, window);
        save_detections(out_csv, props);

        std::size_t projected = 0;
        for (const auto& [f, v] : props) projected += v.size();
        json windows = json::array();
        for (const auto& w : run.windows) {
            windows.push_back({{"window", w.window},
                               {"threshold", w.threshold},
                               {"degenerate", w.degenerate},
                               {"components_before", w.components_before},
                               {"components_after", w.components_after},
                               {"proposals", w.boxes.size()}});
        }
        const auto reduction = reduction_percent(run.naive_count, projected);
        const json j{{"method", to_string(cfg.method)},
                     {"window_seconds", window},
                     {"include_zero_bin", include_zero_bin},
                     {"min_area", stats.min_area},
                     {"box_size", {stats.median_width, stats.median_height}},
                     {"naive", run.naive_count},
                     {"projected", projected},
                     {"reduction_percent", reduction ? json(*reduction) : json(nullptr)},
                     {"windows", windows}};
        if (report.empty()) {
            out << j.dump(2) << "\n";
        } else {
            write_file(report, j.dump(2) + "\n");
        }
        if (!accumulators.empty()) {
            fs::create_directories(accumulators);
            for (std::size_t i = 0; i < run.accumulators.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "window_%04zu.pgm", i);
                save_accumulator_pgm(fs::path(accumulators) / name, run.accumulators[i]);
            }
        }
    }
};

struct EvalApCmd {
    std::string det;
    std::string gt;
    std::string out_json;
    std::string out_csv;

    void add(CLI::App& app, std::function<void()>& run, const Globals&, std::ostream& out) {
        auto* sc = app.add_subcommand("eval-ap", "COCO-style AP/AR summary");
        sc->add_option("--det", det, "Detections: CSV, or COCO JSON (.json)")->required();
        sc->add_option("--gt", gt, "Ground truth: CSV, or COCO JSON (.json) whose image list fixes the image set")
            ->required();
        sc->add_option("--out", out_json, "Summary JSON");
        sc->add_option("--csv", out_csv, "Summary CSV");
        sc->callback([this, &run, &out] { run = [this, &out] { execute(out); }; });
    }

    void execute(std::ostream& out) {
        std::set<std::int64_t> images;
        const DetectionMap gts = load_any_detections(gt, &images);
        const DetectionMap dets = load_any_detections(det);
        const auto rows = average_precision(dets, gts, ApConfig{}, images.empty() ? nullptr : &images);
        out << ap_to_text(rows);
        if (!out_json.empty()) write_file(out_json, ap_to_json(rows));
        if (!out_csv.empty()) {
            std::ostringstream csv;
            write_ap_csv(csv, rows);
            write_file(out_csv, csv.str());
        }
    }
};

struct EvalProposalsCmd {
    FrameOpts frames;
    std::string proposals;
    std::string gt;
    std::string gt_label;
    std::optional<std::uint64_t> naive, projected;
    std::string propose_report;
    std::string out_json;
    std::string quartiles_csv;
    std::string series_csv;

    void add(CLI::App& app, std::function<void()>& run, const Globals&, std::ostream& out) {
        auto* sc = app.add_subcommand("eval-proposals", "Best proposal IoU per writing second and reduction");
        add_frame_options(sc, frames, false);
        sc->add_option("--proposals", proposals, "Proposal CSV")->required();
        sc->add_option("--gt", gt, "Writing ground truth CSV (a labelled frame has at least one row)")->required();
        sc->add_option("--gt-label", gt_label, "Ground-truth label to keep (default: any)");
        sc->add_option("--naive", naive, "Naive projected detection count");
        sc->add_option("--projected", projected, "Proposal count");
        sc->add_option("--propose-report", propose_report, "Take naive and projected counts from a propose report");
        sc->add_option("--out", out_json, "Report JSON (stdout when omitted)");
        sc->add_option("--quartiles", quartiles_csv, "Quartile CSV");
        sc->add_option("--series", series_csv, "Per-box max IoU CSV");
        sc->callback([this, &run, &out] { run = [this, &out] { execute(out); }; });
    }

    void execute(std::ostream& out) {
        std::uint64_t n = 0, p = 0;
        if (!propose_report.empty()) {
            std::ifstream in(propose_report);
            if (!in) throw UsageError("cannot open " + propose_report);
            try {
                const json j = json::parse(in);
                n = j.at("naive").get<std::uint64_t>();
                p = j.at("projected").get<std::uint64_t>();
            } catch (const json::exception& e) {
                throw InvalidInput("malformed propose report: " + std::string(e.what()));
            }
        }
        if (naive) n = *naive;
        if (projected) p = *projected;
        const FrameMeta geo = frame_geometry(frames);
        const auto r = proposal_eval(load_detections(proposals), filter_label(load_detections(gt), gt_label),
                                     *geo.frames, geo.fps, n, p);
        const std::string text = proposal_report_to_json(r);
        if (out_json.empty()) {
            out << text;
        } else {
            write_file(out_json, text);
        }
        if (!quartiles_csv.empty()) {
            std::ostringstream csv;
            write_quartiles_csv(csv, r);
            write_file(quartiles_csv, csv.str());
        }
        if (!series_csv.empty()) {
            std::ostringstream csv;
            csv << "second,max_iou\n";
            for (const auto& s : r.max_iou) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%zu,%.6f\n", s.second, s.iou);
                csv << buf;
            }
            write_file(series_csv, csv.str());
        }
    }
};

struct AugmentOpts {
    double shear = 0.0, rotate = 0.0, translate = 0.0;
    std::vector<double> scale{1.0, 1.0};
    bool hflip = false;
    double p = 0.5;

    void add(CLI::App* sc, bool table_defaults) {
        if (table_defaults) {
            shear = 3.0;
            rotate = 7.0;
            translate = 20.0;
            scale = {0.8, 1.2};
            hflip = true;
        }
        sc->add_option("--shear", shear, "Shear range, degrees (+-)")->capture_default_str();
        sc->add_option("--rotate", rotate, "Rotation range, degrees (+-)")->capture_default_str();
        sc->add_option("--translate", translate, "Horizontal translation range, pixels (+-)")->capture_default_str();
        sc->add_option("--scale", scale, "Rescale range lo,hi")->delimiter(',')->expected(2)->capture_default_str();
        if (table_defaults) {
            sc->add_flag("--hflip,!--no-hflip", hflip, "Random horizontal flips")->capture_default_str();
        } else {
            sc->add_flag("--hflip", hflip, "Random horizontal flips");
            sc->add_option("--p", p, "Probability of applying each transform")->capture_default_str();
        }
    }

    AugParams params() const {
        AugParams a;
        a.shear = shear;
        a.rotate = rotate;
        a.translate = translate;
        a.scale_lo = scale.at(0);
        a.scale_hi = scale.at(1);
        a.hflip = hflip;
        a.p = p;
        a.validate();
        return a;
    }
};

struct AugmentCmd {
    std::string manifest;
    std::string out_dir;
    AugmentOpts aug;

    void add(CLI::App& app, std::function<void()>& run, const Globals& g, std::ostream& out) {
        auto* sc = app.add_subcommand("augment", "Write a randomly augmented copy of a dataset manifest");
        sc->add_option("--manifest", manifest, "Dataset manifest JSON")->required();
        sc->add_option("--out", out_dir, "Output directory (PNG images plus manifest.json)")->required();
        aug.add(sc, false);
        sc->callback([this, &run, &g, &out] { run = [this, &g, &out] { execute(g, out); }; });
    }

    void execute(const Globals& g, std::ostream& out) {
        const AugParams params = as_usage([&] { return aug.params(); });
        out << augment_manifest(manifest, params, g.seed, out_dir).string() << "\n";
    }
};

struct AugSearchCmd {
    std::string mode = "range";
    std::string manifest;
    std::string trainer;
    std::string work;
    std::string out_json;
    std::string transform = "rotate";
    std::string ladder = "2,4,8,16,32";
    std::optional<double> range_override;
    std::string probabilities = "0,0.25,0.5,0.75,1";
    AugmentOpts aug;

    void add(CLI::App& app, std::function<void()>& run, const Globals& g, std::ostream& out) {
        auto* sc = app.add_subcommand("aug-search", "Range or probability sweep driving an external trainer");
        sc->add_option("--mode", mode, "range or probability")->capture_default_str();
        sc->add_option("--manifest", manifest, "Training manifest JSON")->required();
        sc->add_option("--trainer", trainer, "Trainer command; the manifest path is appended, it prints one real")
            ->required();
        sc->add_option("--work", work, "Directory for augmented datasets")->required();
        sc->add_option("--out", out_json, "Result JSON (stdout when omitted)");
        sc->add_option("--transform", transform, "range mode: shear, rotate or translate")->capture_default_str();
        sc->add_option("--ladder", ladder, "range mode: ascending values")->capture_default_str();
        sc->add_option("--range-override", range_override, "range mode: report +-this instead of the derived range");
        sc->add_option("--probabilities", probabilities, "probability mode: values of p")->capture_default_str();
        aug.add(sc, true);
        sc->callback([this, &run, &g, &out] { run = [this, &g, &out] { execute(g, out); }; });
    }

    void execute(const Globals& g, std::ostream& out) {
        SubprocessTrainer t(split_command(trainer));
        std::string text;
        if (mode == "range") {
            const Transform tr = as_usage([&] { return transform_from_string(transform); });
            if (range_override && !(*range_override >= 0.0)) throw UsageError("--range-override must be >= 0");
            RangeResult r = search_range(t, manifest, tr, parse_list(ladder, "--ladder"), work);
            json j = json::parse(range_result_to_json(r));
            j["derived_range"] = {r.lo, r.hi};
            if (range_override) j["range"] = {-*range_override, *range_override};
            text = j.dump(2) + "\n";
        } else if (mode == "probability") {
            const std::vector<double> P = parse_list(probabilities, "--probabilities");
            const AugParams ranges = as_usage([&] { return aug.params(); });
            text = probability_result_to_json(search_probability(t, manifest, ranges, P, g.seed, work));
        } else {
            throw UsageError("--mode must be range or probability");
        }
        if (out_json.empty()) {
            out << text;
        } else {
            write_file(out_json, text);
        }
    }
};

struct SynthCmd {
    std::string scenario;
    std::string out_dir;
    std::string format = "pgm";

    void add(CLI::App& app, std::function<void()>& run, const Globals& g, std::ostream& out) {
        auto* sc = app.add_subcommand("synth", "Render a scripted scene with ground truth and noisy detections");
        sc->add_option("--scenario", scenario, "Scenario JSON")->required();
        sc->add_option("--out", out_dir, "Output directory")->required();
        sc->add_option("--format", format, "Frame format: pgm or png")->capture_default_str();
        sc->callback([this, &run, &g, &out] { run = [this, &g, &out] { execute(g, out); }; });
    }

    void execute(const Globals& g, std::ostream& out) {
        if (format != "pgm" && format != "png") throw UsageError("--format must be pgm or png");
        const Scenario s = load_scenario(scenario);
        const SynthResult r = generate(s, g.seed);
        const fs::path dir = out_dir;
        write_frames(*r.frames, dir / "frames", format);
        std::vector<Detection> truth;
        for (std::size_t i = 0; i < r.truth.size(); ++i) {
            const auto d = r.truth[i].to_detections(s.targets[i].label);
            truth.insert(truth.end(), d.begin(), d.end());
        }
        save_detections(dir / "gt.csv", group_by_frame(truth));
        save_detections(dir / "detections.csv", r.detections);
        write_file(dir / "scenario.json", scenario_to_json(s));
        out << (dir / "frames").string() << "\n";
    }
};

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Long-video detection, tracking, proposal and evaluation toolkit", "longtrack"};
    app.set_config("--config", "", "Flat key=value config file (keys: option or subcommand.option)")
        ->envname("LONGTRACK_CONFIG");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
    app.add_option("--threads", g.threads, "Cap on worker threads (0 = library default)")->capture_default_str();

    std::function<void()> run;
    TrackCmd track;
    DetectOnlyCmd detect_only;
    HybridCmd hybrid;
    ProposeCmd propose;
    EvalApCmd eval_ap;
    EvalProposalsCmd eval_proposals;
    AugmentCmd augment;
    AugSearchCmd aug_search;
    SynthCmd synth;
    track.add(app, run, g, out);
    detect_only.add(app, run, g, out);
    hybrid.add(app, run, g, out);
    propose.add(app, run, g, out);
    eval_ap.add(app, run, g, out);
    eval_proposals.add(app, run, g, out);
    augment.add(app, run, g, out);
    aug_search.add(app, run, g, out);
    synth.add(app, run, g, out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (g.threads < 0) throw UsageError("--threads must be >= 0");
        if (g.threads > 0) cv::setNumThreads(g.threads);
        if (run) run();
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"longtrack"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace longtrack
