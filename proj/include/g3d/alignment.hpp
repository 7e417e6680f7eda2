// alignment.hpp - phrase/query alignment mathematics on explicit matrices:
// scaled similarities, focal and dice losses with analytic gradients, the
// combined matching loss, referent targets, and phrase-to-mask decoding.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "g3d/common.hpp"
#include "g3d/hungarian.hpp"
#include "g3d/matrix.hpp"
#include "g3d/scene.hpp"

namespace g3d {

struct AlignmentParams {
    double temperature = 0.1;     // applied to text/referent similarities
    double lambda_cls = 1.0;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_epsilon = 1.0;
    double referent_iou_threshold = 0.3;  // strictly "exceeds"
    double decode_score_threshold = 0.3;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// S = A·Bᵀ / η
inline Matrix scaled_similarity(const Matrix& a, const Matrix& b, double eta) {
    if (eta <= 0.0) throw Error("scaled_similarity: temperature must be positive");
    Matrix s = matmul_transposed(a, b);
    for (double& v : s.data) v /= eta;
    return s;
}

// Binary targets with an ignore mask; ignored entries are excluded from the
// loss mean, they are not negatives.
struct CorrespondenceTargets {
    Matrix targets;  // entries in {0,1}
    Matrix ignore;   // same shape; nonzero = excluded

    static CorrespondenceTargets zeros(std::size_t rows, std::size_t cols) {
        return {Matrix(rows, cols, 0.0), Matrix(rows, cols, 0.0)};
    }
};

// Mean over non-ignored entries of -alpha_t (1-p_t)^gamma log(p_t).
inline double sigmoid_focal_loss(const Matrix& logits, const Matrix& targets, double gamma, double alpha,
                                 const Matrix* ignore = nullptr) {
    if (logits.rows != targets.rows || logits.cols != targets.cols)
        throw Error("sigmoid_focal_loss: shape mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        if (ignore && ignore->data[i] != 0.0) continue;
        double p = sigmoid(logits.data[i]);
        bool positive = targets.data[i] != 0.0;
        double pt = positive ? p : 1.0 - p;
        double at = positive ? alpha : 1.0 - alpha;
        pt = std::clamp(pt, 1e-12, 1.0);
        sum += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
        ++count;
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

// d(sigmoid_focal_loss)/d(logits)
inline Matrix sigmoid_focal_loss_grad(const Matrix& logits, const Matrix& targets, double gamma, double alpha,
                                      const Matrix* ignore = nullptr) {
    Matrix grad(logits.rows, logits.cols, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        if (ignore && ignore->data[i] != 0.0) continue;
        ++count;
    }
    if (count == 0) return grad;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        if (ignore && ignore->data[i] != 0.0) continue;
        double p = sigmoid(logits.data[i]);
        bool positive = targets.data[i] != 0.0;
        double pt = std::clamp(positive ? p : 1.0 - p, 1e-12, 1.0 - 1e-12);
        double at = positive ? alpha : 1.0 - alpha;
        // dl/dpt for l = -at (1-pt)^gamma log(pt)
        double dl_dpt = at * (gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt) -
                              std::pow(1.0 - pt, gamma) / pt);
        double dpt_dx = positive ? p * (1.0 - p) : -(p * (1.0 - p));
        grad.data[i] = dl_dpt * dpt_dx / static_cast<double>(count);
    }
    return grad;
}

// Mean over pairs (rows) of 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps).
inline double dice_loss(const Matrix& logits, const Matrix& target_masks, double eps = 1.0) {
    if (logits.rows != target_masks.rows || logits.cols != target_masks.cols)
        throw Error("dice_loss: shape mismatch");
    if (logits.rows == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            double p = sigmoid(logits.at(r, c));
            double t = target_masks.at(r, c);
            inter += p * t;
            psum += p;
            tsum += t;
        }
        total += 1.0 - (2.0 * inter + eps) / (psum + tsum + eps);
    }
    return total / static_cast<double>(logits.rows);
}

inline Matrix dice_loss_grad(const Matrix& logits, const Matrix& target_masks, double eps = 1.0) {
    Matrix grad(logits.rows, logits.cols, 0.0);
    if (logits.rows == 0) return grad;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double inter = 0.0, psum = 0.0, tsum = 0.0;
        std::vector<double> probs(logits.cols);
        for (std::size_t c = 0; c < logits.cols; ++c) {
            probs[c] = sigmoid(logits.at(r, c));
            inter += probs[c] * target_masks.at(r, c);
            psum += probs[c];
            tsum += target_masks.at(r, c);
        }
        double denom = psum + tsum + eps;
        double num = 2.0 * inter + eps;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            double t = target_masks.at(r, c);
            double dl_dp = -(2.0 * t * denom - num) / (denom * denom);
            grad.at(r, c) = dl_dp * probs[c] * (1.0 - probs[c]) / static_cast<double>(logits.rows);
        }
    }
    return grad;
}

struct LossReport {
    double total = 0.0;
    std::map<std::string, double> components;
    double lambda_cls = 1.0;
    Assignment matching;
};

namespace detail {

inline Matrix column(const Matrix& m, std::size_t c) {
    Matrix col(1, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) col.at(0, r) = m.at(r, c);
    return col;
}

}  // namespace detail

// Matching cost between a predicted mask column (logits over points) and a
// ground-truth instance column: focal + dice, mirroring the training loss.
inline Matrix mask_matching_cost(const Matrix& mask_logits, const Matrix& gt_masks,
                                 const AlignmentParams& params = {}) {
    if (mask_logits.rows != gt_masks.rows) throw Error("mask_matching_cost: point count mismatch");
    Matrix cost(gt_masks.cols, mask_logits.cols);
    for (std::size_t g = 0; g < gt_masks.cols; ++g) {
        Matrix gt_col = detail::column(gt_masks, g);
        for (std::size_t q = 0; q < mask_logits.cols; ++q) {
            Matrix pred_col = detail::column(mask_logits, q);
            cost.at(g, q) = sigmoid_focal_loss(pred_col, gt_col, params.focal_gamma, params.focal_alpha) +
                            dice_loss(pred_col, gt_col, params.dice_epsilon);
        }
    }
    return cost;
}

// L = L_mask(matched focal + dice) + lambda_cls * L_cls(S_text, T_text).
// The mask targets are derived by optimal matching of query columns to
// ground-truth instance columns.
inline LossReport clasp_loss(const Matrix& mask_logits, const Matrix& text_logits, const Matrix& gt_masks,
                             const CorrespondenceTargets& phrase_targets, const AlignmentParams& params = {}) {
    if (gt_masks.cols > mask_logits.cols) throw Error("clasp_loss: more ground-truth instances than queries");
    if (text_logits.rows != phrase_targets.targets.rows || text_logits.cols != phrase_targets.targets.cols)
        throw Error("clasp_loss: text target shape mismatch");

    Assignment match = hungarian_match(mask_matching_cost(mask_logits, gt_masks, params));

    Matrix matched_pred(match.pairs.size(), mask_logits.rows);
    Matrix matched_gt(match.pairs.size(), mask_logits.rows);
    for (std::size_t k = 0; k < match.pairs.size(); ++k) {
        auto [g, q] = match.pairs[k];
        for (std::size_t p = 0; p < mask_logits.rows; ++p) {
            matched_pred.at(k, p) = mask_logits.at(p, q);
            matched_gt.at(k, p) = gt_masks.at(p, g);
        }
    }
    double mask_focal = sigmoid_focal_loss(matched_pred, matched_gt, params.focal_gamma, params.focal_alpha);
    double mask_dice = dice_loss(matched_pred, matched_gt, params.dice_epsilon);
    double cls = sigmoid_focal_loss(text_logits, phrase_targets.targets, params.focal_gamma, params.focal_alpha,
                                    &phrase_targets.ignore);

    LossReport report;
    report.lambda_cls = params.lambda_cls;
    report.components["mask_focal"] = mask_focal;
    report.components["mask_dice"] = mask_dice;
    report.components["cls"] = cls;
    report.total = mask_focal + mask_dice + params.lambda_cls * cls;
    report.matching = std::move(match);
    return report;
}

enum class ReferentLabel { positive, ignored };

// A query is positive only when its mask IoU with the ground truth strictly
// exceeds the threshold; everything else is excluded, not negative.
inline std::vector<ReferentLabel> referent_positive_targets(const Matrix& query_masks, const Mask& gt_mask,
                                                            const AlignmentParams& params = {}) {
    std::vector<ReferentLabel> labels(query_masks.cols, ReferentLabel::ignored);
    Mask gt = canonical_mask(gt_mask);
    for (std::size_t q = 0; q < query_masks.cols; ++q) {
        Mask pred;
        for (std::size_t p = 0; p < query_masks.rows; ++p)
            if (query_masks.at(p, q) != 0.0) pred.push_back(p);
        if (mask_iou(pred, gt) > params.referent_iou_threshold) labels[q] = ReferentLabel::positive;
    }
    return labels;
}

// Referent contrastive loss; the language-model term arrives externally.
inline double referent_loss(const Matrix& referent_logits, const CorrespondenceTargets& referent_targets,
                            const AlignmentParams& params = {}) {
    return sigmoid_focal_loss(referent_logits, referent_targets.targets, params.focal_gamma, params.focal_alpha,
                              &referent_targets.ignore);
}

inline LossReport llm_loss(const Matrix& referent_logits, const CorrespondenceTargets& referent_targets,
                           double external_lang_loss, const AlignmentParams& params = {}) {
    LossReport report;
    report.components["lang"] = external_lang_loss;
    report.components["ref"] = referent_loss(referent_logits, referent_targets, params);
    report.total = report.components["lang"] + report.components["ref"];
    return report;
}

enum class DecodeMode { one_to_one, one_to_many };

// Phrase-to-mask decoding from the similarity matrices: pick queries by
// top score (or all above the score threshold), then threshold their mask
// logits at probability 0.5 and take the union.
inline std::vector<Mask> decode_phrase_masks(const Matrix& phrase_scores, const Matrix& mask_logits,
                                             DecodeMode mode, const AlignmentParams& params = {}) {
    if (phrase_scores.cols != mask_logits.cols) throw Error("decode_phrase_masks: query dimension mismatch");
    std::vector<Mask> out;
    for (std::size_t phrase = 0; phrase < phrase_scores.rows; ++phrase) {
        std::vector<std::size_t> queries;
        if (mode == DecodeMode::one_to_one) {
            std::size_t best = 0;
            for (std::size_t q = 1; q < phrase_scores.cols; ++q)
                if (phrase_scores.at(phrase, q) > phrase_scores.at(phrase, best)) best = q;
            if (phrase_scores.cols > 0) queries.push_back(best);
        } else {
            for (std::size_t q = 0; q < phrase_scores.cols; ++q)
                if (sigmoid(phrase_scores.at(phrase, q)) >= params.decode_score_threshold) queries.push_back(q);
        }
        std::set<std::size_t> points;
        for (std::size_t q : queries) {
            for (std::size_t p = 0; p < mask_logits.rows; ++p)
                if (mask_logits.at(p, q) > 0.0) points.insert(p);  // sigmoid > 0.5
        }
        out.emplace_back(points.begin(), points.end());
    }
    return out;
}

// Verification harness: compares an analytic gradient against central finite
// differences; returns the maximum relative deviation.
inline double grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                         std::vector<double> inputs, const std::vector<double>& analytic_grad, double h = 1e-5) {
    if (h <= 0.0 || h > 1e-3) throw Error("grad_check: h out of range");
    if (inputs.size() != analytic_grad.size()) throw Error("grad_check: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        double saved = inputs[i];
        inputs[i] = saved + h;
        double fp = loss_fn(inputs);
        inputs[i] = saved - h;
        double fm = loss_fn(inputs);
        inputs[i] = saved;
        double numeric = (fp - fm) / (2.0 * h);
        double denom = std::max({std::abs(numeric), std::abs(analytic_grad[i]), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic_grad[i]) / denom);
    }
    return worst;
}

}  // namespace g3d
