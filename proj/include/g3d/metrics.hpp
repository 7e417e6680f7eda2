// metrics.hpp - downstream evaluation protocol: grounding accuracy at IoU
// thresholds, multi-object F1 with score filtering, instance-segmentation
// AP, BLEU-4, CIDEr, and IoU-gated captioning metrics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "g3d/common.hpp"
#include "g3d/hungarian.hpp"
#include "g3d/scene.hpp"
#include "json.hpp"

namespace g3d {

struct ScoredBox {
    Box3 box;
    double score = 1.0;
};

struct GroundingQuery {
    std::string query_id;
    std::vector<ScoredBox> predictions;
    std::vector<Box3> ground_truth;  // exactly 1 for single-target accuracy
};

struct MetricReport {
    std::map<std::string, double> values;
    std::map<std::string, std::size_t> counts;
};

inline nlohmann::json report_to_json(const MetricReport& r) {
    return {{"metrics", r.values}, {"counts", r.counts}};
}

namespace detail {

inline std::string threshold_key(const std::string& prefix, double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s@%.2f", prefix.c_str(), t);
    return buf;
}

}  // namespace detail

// Acc@t: fraction of queries whose top-scoring predicted box reaches IoU >= t
// against the single ground-truth box.
inline MetricReport grounding_accuracy(const std::vector<GroundingQuery>& queries,
                                       const std::vector<double>& thresholds = {0.25, 0.5}) {
    MetricReport report;
    report.counts["queries"] = queries.size();
    for (double t : thresholds) {
        std::size_t hits = 0;
        for (const auto& q : queries) {
            if (q.ground_truth.size() != 1) throw Error("grounding_accuracy: query needs exactly one ground truth");
            if (q.predictions.empty()) continue;  // miss at every threshold
            const ScoredBox* best = &q.predictions[0];
            for (const auto& p : q.predictions)
                if (p.score > best->score) best = &p;
            if (box_iou(best->box, q.ground_truth[0]) >= t) ++hits;
        }
        report.values[detail::threshold_key("Acc", t)] =
            queries.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(queries.size());
    }
    return report;
}

// Per-query F1 with optimal prediction/ground-truth matching after the score
// filter; a query with no ground truth and no surviving predictions scores 1.
inline MetricReport multi_grounding_f1(const std::vector<GroundingQuery>& queries, double score_filter = 0.3,
                                       const std::vector<double>& thresholds = {0.25, 0.5}) {
    MetricReport report;
    report.counts["queries"] = queries.size();
    for (double t : thresholds) {
        double f1_sum = 0.0;
        for (const auto& q : queries) {
            std::vector<Box3> preds;
            for (const auto& p : q.predictions)
                if (p.score >= score_filter) preds.push_back(p.box);
            const auto& gts = q.ground_truth;
            if (preds.empty() && gts.empty()) {
                f1_sum += 1.0;
                continue;
            }
            if (preds.empty() || gts.empty()) continue;  // F1 = 0
            Matrix cost(preds.size(), gts.size());
            for (std::size_t i = 0; i < preds.size(); ++i)
                for (std::size_t j = 0; j < gts.size(); ++j) cost.at(i, j) = -box_iou(preds[i], gts[j]);
            Assignment match = hungarian_match(cost);
            std::size_t tp = 0;
            for (auto [i, j] : match.pairs)
                if (box_iou(preds[i], gts[j]) >= t) ++tp;
            std::size_t fp = preds.size() - tp;
            std::size_t fn = gts.size() - tp;
            f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        }
        report.values[detail::threshold_key("F1", t)] =
            queries.empty() ? 0.0 : f1_sum / static_cast<double>(queries.size());
    }
    return report;
}

struct DetectionInstance {
    std::string scene_id;
    std::string label;
    Mask mask;
    double score = 1.0;  // ignored for ground truth
};

namespace detail {

// All-point interpolated precision-recall area for one class at one IoU
// threshold, with score-ordered greedy matching.
inline double average_precision(std::vector<DetectionInstance> preds, const std::vector<DetectionInstance>& gts,
                                double iou_threshold) {
    if (gts.empty()) return 0.0;
    std::stable_sort(preds.begin(), preds.end(),
                     [](const DetectionInstance& a, const DetectionInstance& b) { return a.score > b.score; });
    std::vector<char> gt_used(gts.size(), 0);
    std::vector<char> is_tp;
    for (const auto& pred : preds) {
        double best_iou = 0.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g] || gts[g].scene_id != pred.scene_id) continue;
            double iou = mask_iou(pred.mask, gts[g].mask);
            if (iou > best_iou) {
                best_iou = iou;
                best_g = g;
            }
        }
        if (best_g < gts.size() && best_iou >= iou_threshold) {
            gt_used[best_g] = 1;
            is_tp.push_back(1);
        } else {
            is_tp.push_back(0);
        }
    }
    std::vector<double> precision;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < is_tp.size(); ++k) {
        if (is_tp[k]) ++tp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    // precision envelope; recall advances by exactly 1/|gt| at each true
    // positive, so the area is the envelope summed at TP ranks over |gt|
    for (std::size_t k = precision.size(); k > 1; --k) {
        precision[k - 2] = std::max(precision[k - 2], precision[k - 1]);
    }
    double envelope_sum = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
        if (is_tp[k]) envelope_sum += precision[k];
    }
    return envelope_sum / static_cast<double>(gts.size());
}

}  // namespace detail

// AP over the [0.5:0.95:0.05] threshold range plus AP@0.25 and AP@0.5;
// classes with no ground truth are excluded from the mean.
inline MetricReport detection_ap(const std::vector<DetectionInstance>& preds,
                                 const std::vector<DetectionInstance>& gts) {
    std::set<std::string> classes;
    for (const auto& g : gts) classes.insert(g.label);

    std::map<std::string, std::vector<DetectionInstance>> preds_by_class, gts_by_class;
    for (const auto& p : preds)
        if (classes.count(p.label)) preds_by_class[p.label].push_back(p);
    for (const auto& g : gts) gts_by_class[g.label].push_back(g);

    std::vector<double> range_thresholds;
    for (int i = 0; i <= 9; ++i) range_thresholds.push_back(0.5 + 0.05 * i);

    auto mean_ap_at = [&](double t) {
        double sum = 0.0;
        for (const auto& cls : classes) sum += detail::average_precision(preds_by_class[cls], gts_by_class[cls], t);
        return classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
    };

    MetricReport report;
    report.counts["classes"] = classes.size();
    report.counts["predictions"] = preds.size();
    report.counts["ground_truth"] = gts.size();
    report.values["AP@0.25"] = mean_ap_at(0.25);
    report.values["AP@0.50"] = mean_ap_at(0.5);
    double sum = 0.0;
    for (double t : range_thresholds) sum += mean_ap_at(t);
    report.values["mAP"] = sum / static_cast<double>(range_thresholds.size());
    return report;
}

namespace detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<Ngram, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
    }
    return counts;
}

}  // namespace detail

// Corpus-level BLEU-4 with add-one smoothing on n >= 2 precisions and the
// standard brevity penalty. Each candidate may have several references.
inline double bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
    if (candidates.size() != references.size()) throw Error("bleu4: corpus size mismatch");
    if (candidates.empty()) throw Error("bleu4: empty corpus");
    const std::size_t max_n = 4;
    std::vector<double> matched(max_n, 0.0), total(max_n, 0.0);
    double cand_len = 0.0, ref_len = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto cand_tokens = tokenize(candidates[i]);
        if (references[i].empty()) throw Error("bleu4: candidate without references");
        cand_len += static_cast<double>(cand_tokens.size());
        // closest reference length, ties toward the shorter
        std::size_t best_ref_len = tokenize(references[i][0]).size();
        for (const auto& ref : references[i]) {
            std::size_t len = tokenize(ref).size();
            auto dist = [&](std::size_t l) {
                return std::abs(static_cast<long long>(l) - static_cast<long long>(cand_tokens.size()));
            };
            if (dist(len) < dist(best_ref_len) || (dist(len) == dist(best_ref_len) && len < best_ref_len))
                best_ref_len = len;
        }
        ref_len += static_cast<double>(best_ref_len);
        for (std::size_t n = 1; n <= max_n; ++n) {
            auto cand_counts = detail::ngram_counts(cand_tokens, n);
            std::map<detail::Ngram, std::size_t> max_ref_counts;
            for (const auto& ref : references[i]) {
                for (const auto& [gram, count] : detail::ngram_counts(tokenize(ref), n)) {
                    max_ref_counts[gram] = std::max(max_ref_counts[gram], count);
                }
            }
            for (const auto& [gram, count] : cand_counts) {
                auto it = max_ref_counts.find(gram);
                matched[n - 1] += static_cast<double>(std::min(count, it == max_ref_counts.end() ? 0 : it->second));
                total[n - 1] += static_cast<double>(count);
            }
        }
    }
    if (total[0] == 0.0) return 0.0;
    double log_precision = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        double m = matched[n - 1], t = total[n - 1];
        if (n >= 2) {  // add-one smoothing
            m += 1.0;
            t += 1.0;
        }
        if (m == 0.0 || t == 0.0) return 0.0;
        log_precision += std::log(m / t) / static_cast<double>(max_n);
    }
    double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
    return bp * std::exp(log_precision);
}

// CIDEr: tf-idf weighted cosine over n = 1..4 with count clipping and a
// gaussian length penalty (sigma = 6), averaged and scaled by 10.
inline std::vector<double> cider_scores(const std::vector<std::string>& candidates,
                                        const std::vector<std::vector<std::string>>& references,
                                        double sigma = 6.0) {
    if (candidates.size() != references.size()) throw Error("cider: corpus size mismatch");
    const std::size_t max_n = 4;
    const double num_images = static_cast<double>(candidates.size());

    // document frequency: number of images whose reference set contains the n-gram
    std::vector<std::map<detail::Ngram, double>> df(max_n);
    for (const auto& refs : references) {
        std::vector<std::set<detail::Ngram>> seen(max_n);
        for (const auto& ref : refs) {
            auto tokens = tokenize(ref);
            for (std::size_t n = 1; n <= max_n; ++n)
                for (const auto& [gram, _] : detail::ngram_counts(tokens, n)) seen[n - 1].insert(gram);
        }
        for (std::size_t n = 0; n < max_n; ++n)
            for (const auto& gram : seen[n]) df[n][gram] += 1.0;
    }
    auto tfidf = [&](const std::map<detail::Ngram, std::size_t>& counts, std::size_t n) {
        std::map<detail::Ngram, double> vec;
        for (const auto& [gram, count] : counts) {
            auto it = df[n].find(gram);
            double d = it == df[n].end() ? 0.0 : it->second;
            vec[gram] = static_cast<double>(count) * std::log(num_images / std::max(1.0, d));
        }
        return vec;
    };

    std::vector<double> scores;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto cand_tokens = tokenize(candidates[i]);
        double score = 0.0;
        for (const auto& ref : references[i]) {
            auto ref_tokens = tokenize(ref);
            double delta = static_cast<double>(cand_tokens.size()) - static_cast<double>(ref_tokens.size());
            double length_penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
            for (std::size_t n = 1; n <= max_n; ++n) {
                auto cand_counts = detail::ngram_counts(cand_tokens, n);
                auto ref_counts = detail::ngram_counts(ref_tokens, n);
                auto cand_vec = tfidf(cand_counts, n - 1);
                auto ref_vec = tfidf(ref_counts, n - 1);
                double dot = 0.0, cand_norm = 0.0, ref_norm = 0.0;
                for (const auto& [gram, w] : cand_vec) cand_norm += w * w;
                for (const auto& [gram, w] : ref_vec) ref_norm += w * w;
                for (const auto& [gram, w] : cand_vec) {
                    auto it = ref_vec.find(gram);
                    if (it == ref_vec.end()) continue;
                    // clip candidate counts to reference counts
                    double clipped = std::min(w, [&] {
                        auto cit = ref_counts.find(gram);
                        auto dfi = df[n - 1].find(gram);
                        double d = dfi == df[n - 1].end() ? 0.0 : dfi->second;
                        return static_cast<double>(cit->second) * std::log(num_images / std::max(1.0, d));
                    }());
                    dot += clipped * it->second;
                }
                if (cand_norm > 0.0 && ref_norm > 0.0) {
                    score += length_penalty * dot / (std::sqrt(cand_norm) * std::sqrt(ref_norm)) /
                             static_cast<double>(max_n);
                }
            }
        }
        if (!references[i].empty()) score /= static_cast<double>(references[i].size());
        scores.push_back(10.0 * score);
    }
    return scores;
}

inline double cider(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
    auto scores = cider_scores(candidates, references);
    if (scores.empty()) return 0.0;
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

struct CaptionPrediction {
    Box3 predicted_box;
    std::string caption;
    Box3 gt_box;
    std::string reference;
};

// Scan2Cap-style gating: the predicted caption only counts when its box
// reaches the IoU threshold, otherwise the empty caption is scored.
inline MetricReport iou_gated_caption_metrics(const std::vector<CaptionPrediction>& preds,
                                              const std::vector<double>& thresholds = {0.25, 0.5}) {
    MetricReport report;
    report.counts["objects"] = preds.size();
    for (double t : thresholds) {
        std::vector<std::string> candidates;
        std::vector<std::vector<std::string>> references;
        for (const auto& p : preds) {
            bool pass = box_iou(p.predicted_box, p.gt_box) >= t;
            candidates.push_back(pass ? p.caption : std::string());
            references.push_back({p.reference});
        }
        report.values[detail::threshold_key("B-4", t)] = candidates.empty() ? 0.0 : bleu4(candidates, references);
        report.values[detail::threshold_key("C", t)] = candidates.empty() ? 0.0 : cider(candidates, references);
    }
    return report;
}

}  // namespace g3d
