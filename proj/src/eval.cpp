#include "longtrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace longtrack {

// --- IoU over time ----------------------------------------------------------

const char* to_string(SecondAgg a) { return a == SecondAgg::mean ? "mean" : "mid"; }

SecondAgg second_agg_from_string(const std::string& s) {
    if (s == "mid") return SecondAgg::mid;
    if (s == "mean") return SecondAgg::mean;
    throw InvalidInput("unknown per-second aggregation '" + s + "' (expected mid or mean)");
}

namespace {

void check_pair(const BoxTimeline& pred, const BoxTimeline& gt) {
    if (pred.fps() != gt.fps()) throw InvalidInput("prediction and ground truth have different fps");
    if (pred.size() != gt.size()) throw InvalidInput("prediction and ground truth have different frame counts");
}

double frame_iou(const TimelineEntry& p, const TimelineEntry& g) { return p.box ? iou(*p.box, *g.box) : 0.0; }

}  // namespace

std::vector<SecondIou> per_second_iou(const BoxTimeline& pred, const BoxTimeline& gt, SecondAgg agg) {
    check_pair(pred, gt);
    const double fps = gt.fps();
    const std::size_t n = gt.size();
    std::vector<SecondIou> out;
    for (std::size_t s = 0, count = second_count(n, fps); s < count; ++s) {
        const std::size_t start = second_frame(s, fps);
        const std::size_t end = std::min(second_frame(s + 1, fps), n);
        SecondIou v{s, std::nullopt};
        if (agg == SecondAgg::mid) {
            const std::size_t mid = start + (end - start) / 2;
            if (gt[mid].box) v.iou = frame_iou(pred[mid], gt[mid]);
        } else {
            double sum = 0.0;
            std::size_t k = 0;
            for (std::size_t f = start; f < end; ++f) {
                if (!gt[f].box) continue;
                sum += frame_iou(pred[f], gt[f]);
                ++k;
            }
            if (k) v.iou = sum / static_cast<double>(k);
        }
        out.push_back(v);
    }
    return out;
}

double mean_iou(const BoxTimeline& pred, const BoxTimeline& gt) {
    check_pair(pred, gt);
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
        if (!gt[f].box) continue;
        sum += frame_iou(pred[f], gt[f]);
        ++k;
    }
    return k ? sum / static_cast<double>(k) : 0.0;
}

void write_second_iou_csv(std::ostream& out, const std::vector<SecondIou>& series) {
    out << "second,iou\n";
    char buf[64];
    for (const auto& v : series) {
        if (v.iou) {
            std::snprintf(buf, sizeof buf, "%zu,%.6f\n", v.second, *v.iou);
        } else {
            std::snprintf(buf, sizeof buf, "%zu,no-data\n", v.second);
        }
        out << buf;
    }
}

// --- average precision ------------------------------------------------------

ApConfig::ApConfig() {
    for (int i = 0; i < 10; ++i) iou_thresholds.push_back(0.5 + 0.05 * i);
    constexpr double kBig = 1e10;
    areas = {{"all", 0.0, kBig}, {"small", 0.0, 32.0 * 32.0}, {"medium", 32.0 * 32.0, 96.0 * 96.0},
             {"large", 96.0 * 96.0, kBig}};
    max_dets = {1, 10, 100};
}

void ApConfig::validate() const {
    if (iou_thresholds.empty() || areas.empty() || max_dets.empty()) {
        throw InvalidInput("AP config needs thresholds, area ranges and max-detection caps");
    }
    for (double t : iou_thresholds) {
        if (!(t > 0.0 && t <= 1.0)) throw InvalidInput("IoU thresholds must lie in (0, 1]");
    }
    for (const auto& a : areas) {
        if (!(a.lo >= 0.0 && a.hi > a.lo)) throw InvalidInput("bad area range '" + a.name + "'");
    }
    for (std::size_t i = 0; i < max_dets.size(); ++i) {
        if (max_dets[i] < 1 || (i > 0 && max_dets[i] <= max_dets[i - 1])) {
            throw InvalidInput("max-detection caps must be positive and ascending");
        }
    }
}

namespace {

constexpr int kRecallPoints = 101;

struct ImageData {
    std::vector<const Detection*> dets;  // score descending, stable
    std::vector<const Detection*> gts;
};

struct SliceResult {
    double ap = -1.0;
    double recall = -1.0;
};

bool in_area(const BBox& b, const AreaRange& a) { return b.area() >= a.lo && b.area() < a.hi; }

struct Ranked {
    std::vector<char> tp;  // non-ignored detections in rank order
    std::size_t npig = 0;  // non-ignored ground truth
};

// Greedy matching of one label at one threshold, area range and cap.
Ranked rank_slice(const std::vector<ImageData>& images, double threshold, const AreaRange& area, int max_dets) {
    struct Scored {
        double score;
        bool tp;
    };
    std::vector<Scored> pool;
    Ranked out;
    for (const auto& img : images) {
        // Ground truth inside the area range first, each group in input order.
        std::vector<const Detection*> gts;
        std::vector<char> ignore;
        for (int pass = 0; pass < 2; ++pass) {
            for (const Detection* g : img.gts) {
                const bool ig = !in_area(g->box, area);
                if (ig == (pass == 1)) {
                    gts.push_back(g);
                    ignore.push_back(ig);
                }
            }
        }
        out.npig += static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), 0));
        std::vector<char> taken(gts.size(), 0);
        const std::size_t nd = std::min(img.dets.size(), static_cast<std::size_t>(max_dets));
        for (std::size_t d = 0; d < nd; ++d) {
            const Detection* det = img.dets[d];
            int m = -1;
            double best = threshold;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (taken[g]) continue;
                if (m >= 0 && !ignore[static_cast<std::size_t>(m)] && ignore[g]) break;
                const double v = iou(det->box, gts[g]->box);
                if (m < 0 ? v >= best : v > best) {
                    best = v;
                    m = static_cast<int>(g);
                }
            }
            bool det_ignored;
            if (m >= 0) {
                taken[static_cast<std::size_t>(m)] = 1;
                det_ignored = ignore[static_cast<std::size_t>(m)] != 0;
            } else {
                det_ignored = !in_area(det->box, area);
            }
            if (!det_ignored) pool.push_back({det->score, m >= 0});
        }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    for (const auto& p : pool) out.tp.push_back(p.tp);
    return out;
}

SliceResult evaluate_slice(const std::vector<ImageData>& images, double threshold, const AreaRange& area,
                           int max_dets) {
    const Ranked ranked = rank_slice(images, threshold, area, max_dets);
    SliceResult r;
    const std::size_t npig = ranked.npig;
    if (npig == 0) return r;
    const std::size_t n = ranked.tp.size();
    std::vector<std::size_t> tp(n);
    std::vector<double> pr(n);
    std::size_t acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
        acc += ranked.tp[j] ? 1 : 0;
        tp[j] = acc;
        pr[j] = static_cast<double>(acc) / static_cast<double>(j + 1);
    }
    for (std::size_t j = n; j-- > 1;) pr[j - 1] = std::max(pr[j - 1], pr[j]);

    // Recall point i/100 is reached at the first prefix with tp * 100 >= i * npig.
    double sum = 0.0;
    std::size_t j = 0;
    for (int i = 0; i < kRecallPoints; ++i) {
        while (j < n && tp[j] * 100 < static_cast<std::size_t>(i) * npig) ++j;
        if (j < n) sum += pr[j];
    }
    r.ap = sum / kRecallPoints;
    r.recall = n ? static_cast<double>(tp[n - 1]) / static_cast<double>(npig) : 0.0;
    return r;
}

std::vector<ImageData> collect(const std::vector<std::int64_t>& image_ids, const DetectionMap& dets,
                               const DetectionMap& gts, const std::string* label) {
    std::vector<ImageData> out;
    for (std::int64_t id : image_ids) {
        ImageData img;
        if (auto it = gts.find(id); it != gts.end()) {
            for (const auto& g : it->second) {
                if (!label || g.label == *label) img.gts.push_back(&g);
            }
        }
        if (auto it = dets.find(id); it != dets.end()) {
            for (const auto& d : it->second) {
                if (!label || d.label == *label) img.dets.push_back(&d);
            }
        }
        std::stable_sort(img.dets.begin(), img.dets.end(),
                         [](const Detection* a, const Detection* b) { return a->score > b->score; });
        out.push_back(std::move(img));
    }
    return out;
}

double mean_valid(const std::vector<double>& v) {
    double sum = 0.0;
    std::size_t k = 0;
    for (double x : v) {
        if (x > -1.0) {
            sum += x;
            ++k;
        }
    }
    return k ? sum / static_cast<double>(k) : -1.0;
}

}  // namespace

ApTables evaluate_ap(const DetectionMap& dets, const DetectionMap& gts, const ApConfig& cfg,
                     const std::set<std::int64_t>* images) {
    cfg.validate();
    std::set<std::int64_t> ids;
    if (images) {
        ids = *images;
    } else {
        for (const auto& [k, _] : gts) ids.insert(k);
        for (const auto& [k, _] : dets) ids.insert(k);
    }
    const std::vector<std::int64_t> image_ids(ids.begin(), ids.end());
    std::set<std::string> labels;
    for (const auto& [_, v] : gts)
        for (const auto& g : v) labels.insert(g.label);

    std::vector<std::vector<ImageData>> per_label;
    for (const auto& l : labels) per_label.push_back(collect(image_ids, dets, gts, &l));

    const std::size_t T = cfg.iou_thresholds.size(), A = cfg.areas.size(), M = cfg.max_dets.size();
    ApTables out;
    out.config = cfg;
    out.precision.assign(T, std::vector<std::vector<double>>(A, std::vector<double>(M, -1.0)));
    out.recall = out.precision;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t a = 0; a < A; ++a) {
            for (std::size_t m = 0; m < M; ++m) {
                std::vector<double> aps, recalls;
                for (const auto& data : per_label) {
                    const SliceResult r = evaluate_slice(data, cfg.iou_thresholds[t], cfg.areas[a], cfg.max_dets[m]);
                    aps.push_back(r.ap);
                    recalls.push_back(r.recall);
                }
                out.precision[t][a][m] = mean_valid(aps);
                out.recall[t][a][m] = mean_valid(recalls);
            }
        }
    }
    return out;
}

namespace {

std::optional<std::size_t> index_of_threshold(const ApConfig& cfg, double t) {
    for (std::size_t i = 0; i < cfg.iou_thresholds.size(); ++i) {
        if (std::abs(cfg.iou_thresholds[i] - t) < 1e-9) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> index_of_area(const ApConfig& cfg, const std::string& name) {
    for (std::size_t i = 0; i < cfg.areas.size(); ++i) {
        if (cfg.areas[i].name == name) return i;
    }
    return std::nullopt;
}

// Mean over thresholds (all, or just `t`) of the valid table entries.
double table_value(const std::vector<std::vector<std::vector<double>>>& table, std::optional<std::size_t> t,
                   std::size_t a, std::size_t m) {
    std::vector<double> v;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (!t || *t == i) v.push_back(table[i][a][m]);
    }
    return mean_valid(v);
}

}  // namespace

std::vector<ApEntry> summarize(const ApTables& tables) {
    const ApConfig& cfg = tables.config;
    const std::size_t last = cfg.max_dets.size() - 1;
    const int cap = cfg.max_dets.back();
    std::vector<ApEntry> out;
    auto ap_row = [&](std::optional<double> iou_t, const std::string& area) {
        ApEntry e{ApEntry::Metric::ap, iou_t, area, cap, -1.0};
        const auto a = index_of_area(cfg, area);
        std::optional<std::size_t> t;
        if (iou_t) t = index_of_threshold(cfg, *iou_t);
        if (a && (!iou_t || t)) e.value = table_value(tables.precision, t, *a, last);
        out.push_back(e);
    };
    auto ar_row = [&](std::size_t m, const std::string& area) {
        ApEntry e{ApEntry::Metric::ar, std::nullopt, area, cfg.max_dets[m], -1.0};
        if (const auto a = index_of_area(cfg, area)) e.value = table_value(tables.recall, std::nullopt, *a, m);
        out.push_back(e);
    };
    ap_row(std::nullopt, "all");
    ap_row(0.5, "all");
    ap_row(0.75, "all");
    ap_row(std::nullopt, "small");
    ap_row(std::nullopt, "medium");
    ap_row(std::nullopt, "large");
    for (std::size_t m = 0; m < cfg.max_dets.size(); ++m) ar_row(m, "all");
    ar_row(last, "small");
    ar_row(last, "medium");
    ar_row(last, "large");
    return out;
}

std::vector<ApEntry> average_precision(const DetectionMap& dets, const DetectionMap& gts, const ApConfig& cfg,
                                       const std::set<std::int64_t>* images) {
    return summarize(evaluate_ap(dets, gts, cfg, images));
}

double ap_single(const std::vector<Detection>& dets, const std::vector<Detection>& gts, double iou_threshold,
                 const AreaRange& area, int max_dets) {
    const DetectionMap d = group_by_frame(dets);
    const DetectionMap g = group_by_frame(gts);
    std::set<std::int64_t> ids;
    for (const auto& [k, _] : d) ids.insert(k);
    for (const auto& [k, _] : g) ids.insert(k);
    return evaluate_slice(collect({ids.begin(), ids.end()}, d, g, nullptr), iou_threshold, area, max_dets).ap;
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<Detection>& dets, const std::vector<Detection>& gts,
                                                double iou_threshold) {
    const DetectionMap d = group_by_frame(dets);
    const DetectionMap g = group_by_frame(gts);
    std::set<std::int64_t> ids;
    for (const auto& [k, _] : d) ids.insert(k);
    for (const auto& [k, _] : g) ids.insert(k);
    const Ranked r = rank_slice(collect({ids.begin(), ids.end()}, d, g, nullptr), iou_threshold,
                                AreaRange{"all", 0.0, 1e10}, std::numeric_limits<int>::max());
    std::vector<std::pair<double, double>> out;
    std::size_t tp = 0;
    for (std::size_t j = 0; j < r.tp.size(); ++j) {
        tp += r.tp[j] ? 1 : 0;
        const double recall = r.npig ? static_cast<double>(tp) / static_cast<double>(r.npig) : 0.0;
        out.emplace_back(recall, static_cast<double>(tp) / static_cast<double>(j + 1));
    }
    return out;
}

namespace {

std::string iou_label(const std::optional<double>& t, const ApConfig* cfg = nullptr) {
    char buf[32];
    if (t) {
        std::snprintf(buf, sizeof buf, "%.2f", *t);
    } else if (cfg && !cfg->iou_thresholds.empty()) {
        std::snprintf(buf, sizeof buf, "%.2f:%.2f", cfg->iou_thresholds.front(), cfg->iou_thresholds.back());
    } else {
        std::snprintf(buf, sizeof buf, "0.50:0.95");
    }
    return buf;
}

const char* metric_name(ApEntry::Metric m) { return m == ApEntry::Metric::ap ? "AP" : "AR"; }

}  // namespace

std::string ap_to_json(const std::vector<ApEntry>& entries) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) {
        j.push_back({{"metric", metric_name(e.metric)},
                     {"iou", iou_label(e.iou)},
                     {"area", e.area},
                     {"max_dets", e.max_dets},
                     {"value", e.value}});
    }
    return j.dump(2) + "\n";
}

void write_ap_csv(std::ostream& out, const std::vector<ApEntry>& entries) {
    out << "metric,iou,area,max_dets,value\n";
    char buf[160];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%.6f\n", metric_name(e.metric), iou_label(e.iou).c_str(),
                      e.area.c_str(), e.max_dets, e.value);
        out << buf;
    }
}

std::string ap_to_text(const std::vector<ApEntry>& entries) {
    std::ostringstream out;
    char buf[200];
    for (const auto& e : entries) {
        const bool ap = e.metric == ApEntry::Metric::ap;
        std::snprintf(buf, sizeof buf, " %-18s %s @[ IoU=%-9s | area=%6s | maxDets=%3d ] = %0.3f\n",
                      ap ? "Average Precision" : "Average Recall", ap ? "(AP)" : "(AR)", iou_label(e.iou).c_str(),
                      e.area.c_str(), e.max_dets, e.value);
        out << buf;
    }
    return out.str();
}

// --- proposal evaluation ----------------------------------------------------

std::set<std::size_t> writing_seconds(const std::vector<bool>& labels, double fps) {
    if (!(fps > 0.0)) throw InvalidInput("fps must be > 0");
    std::set<std::size_t> out;
    const std::size_t n = labels.size();
    for (std::size_t s = 0, count = second_count(n, fps); s < count; ++s) {
        const std::size_t end = std::min(second_frame(s + 1, fps), n);
        std::size_t k = 0;
        for (std::size_t f = second_frame(s, fps); f < end; ++f) k += labels[f];
        if (2.0 * static_cast<double>(k) > fps) out.insert(s);
    }
    return out;
}

std::optional<Quartiles> quartiles(std::vector<double> values) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    auto at = [&](double p) {
        const double pos = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    return Quartiles{values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

std::optional<double> reduction_percent(std::uint64_t naive, std::uint64_t projected) {
    if (naive == 0) return std::nullopt;
    return (static_cast<double>(naive) - static_cast<double>(projected)) / static_cast<double>(naive) * 100.0;
}

ProposalEvalReport proposal_eval(const DetectionMap& proposals, const DetectionMap& gt, std::size_t frames, double fps,
                                 std::uint64_t naive, std::uint64_t projected) {
    std::vector<bool> labels(frames, false);
    for (const auto& [f, boxes] : gt) {
        if (f < 0 || static_cast<std::size_t>(f) >= frames) {
            throw InvalidInput("ground truth at frame " + std::to_string(f) + " outside the sequence");
        }
        labels[static_cast<std::size_t>(f)] = !boxes.empty();
    }
    ProposalEvalReport r;
    r.naive = naive;
    r.projected = projected;
    r.reduction = reduction_percent(naive, projected);
    std::vector<double> values;
    for (std::size_t s : writing_seconds(labels, fps)) {
        const std::size_t start = second_frame(s, fps);
        const std::size_t end = std::min(second_frame(s + 1, fps), frames);
        std::size_t first = start;
        while (!labels[first]) ++first;
        const auto lo = proposals.lower_bound(static_cast<std::int64_t>(start));
        const auto hi = proposals.lower_bound(static_cast<std::int64_t>(end));
        for (const auto& g : gt.at(static_cast<std::int64_t>(first))) {
            double best = 0.0;
            for (auto it = lo; it != hi; ++it)
                for (const auto& p : it->second) best = std::max(best, iou(p.box, g.box));
            r.max_iou.push_back({s, best});
            values.push_back(best);
        }
    }
    r.quartiles = quartiles(values);
    return r;
}

std::string proposal_report_to_json(const ProposalEvalReport& r) {
    nlohmann::json j;
    j["naive"] = r.naive;
    j["projected"] = r.projected;
    j["reduction_percent"] = r.reduction ? nlohmann::json(*r.reduction) : nlohmann::json("no-data");
    if (r.quartiles) {
        const auto& q = *r.quartiles;
        j["quartiles"] = {{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
    } else {
        j["quartiles"] = "no-data";
    }
    j["writing_seconds"] = nlohmann::json::array();
    for (const auto& v : r.max_iou) j["writing_seconds"].push_back({{"second", v.second}, {"max_iou", v.iou}});
    return j.dump(2) + "\n";
}

void write_quartiles_csv(std::ostream& out, const ProposalEvalReport& r) {
    out << "min,q1,median,q3,max\n";
    if (!r.quartiles) return;
    const auto& q = *r.quartiles;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f\n", q.min, q.q1, q.median, q.q3, q.max);
    out << buf;
}

}  // namespace longtrack
