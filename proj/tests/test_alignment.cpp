#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "g3d/alignment.hpp"

using namespace g3d;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

// exhaustive permutation oracle for the assignment problem
double brute_force_min_cost(const Matrix& cost) {
    std::size_t n = std::max(cost.rows, cost.cols);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < cost.rows; ++i)
            if (perm[i] < cost.cols) total += cost.at(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("matrix containers") {
    Rng rng(7);
    Matrix m = random_matrix(rng, 5, 3);

    SUBCASE("binary save/load round-trips bit for bit") {
        auto path = (std::filesystem::temp_directory_path() / "g3d_matrix.bin").string();
        save_matrix(m, path);
        CHECK(load_matrix(path) == m);
    }
    SUBCASE("bad magic is rejected") {
        auto path = (std::filesystem::temp_directory_path() / "g3d_notmatrix.bin").string();
        std::ofstream(path) << "not a matrix";
        CHECK_THROWS_AS(load_matrix(path), Error);
    }
    SUBCASE("JSON round-trip") {
        CHECK(matrix_from_json(matrix_to_json(m)) == m);
        CHECK_THROWS_AS(matrix_from_json(nlohmann::json::parse("[[1,2],[3]]")), Error);
    }
    SUBCASE("matmul_transposed against a hand computation") {
        Matrix a = matrix_from_json(nlohmann::json::parse("[[1,2],[3,4]]"));
        Matrix b = matrix_from_json(nlohmann::json::parse("[[5,6],[7,8],[9,10]]"));
        Matrix s = matmul_transposed(a, b);  // 2x3
        CHECK(s.at(0, 0) == 1 * 5 + 2 * 6);
        CHECK(s.at(1, 2) == 3 * 9 + 4 * 10);
        CHECK_THROWS_AS(matmul_transposed(a, Matrix(2, 3)), Error);
    }
}

TEST_CASE("scaled_similarity") {
    Rng rng(13);
    Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 5, 4);
    Matrix s = scaled_similarity(a, b, 0.1);
    CHECK(s.rows == 3);
    CHECK(s.cols == 5);
    // temperature 0.1 scales the raw products by 10
    Matrix raw = matmul_transposed(a, b);
    for (std::size_t i = 0; i < s.data.size(); ++i) CHECK(s.data[i] == doctest::Approx(10.0 * raw.data[i]));
    CHECK_THROWS_AS(scaled_similarity(a, b, 0.0), Error);
    CHECK_THROWS_AS(scaled_similarity(a, b, -1.0), Error);

    SUBCASE("bilinear in each argument") {
        Matrix a2 = a;
        for (double& v : a2.data) v *= 3.0;
        Matrix s2 = scaled_similarity(a2, b, 0.1);
        for (std::size_t i = 0; i < s.data.size(); ++i) CHECK(s2.data[i] == doctest::Approx(3.0 * s.data[i]));
    }
}

TEST_CASE("hungarian_match") {
    SUBCASE("hand-sized example") {
        Matrix cost = matrix_from_json(nlohmann::json::parse("[[4,1,3],[2,0,5],[3,2,2]]"));
        Assignment a = hungarian_match(cost);
        CHECK(a.total_cost == 5.0);  // 1 + 2 + 2
        REQUIRE(a.pairs.size() == 3);
        CHECK(a.pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
        CHECK(a.pairs[1] == std::pair<std::size_t, std::size_t>{1, 0});
        CHECK(a.pairs[2] == std::pair<std::size_t, std::size_t>{2, 2});
    }
    SUBCASE("ties break toward the lowest row-then-column index") {
        Assignment a = hungarian_match(Matrix(4, 4, 0.0));
        for (std::size_t i = 0; i < 4; ++i) CHECK(a.pairs[i] == std::pair<std::size_t, std::size_t>{i, i});

        Matrix two = matrix_from_json(nlohmann::json::parse("[[0,0],[0,5]]"));
        Assignment b = hungarian_match(two);
        CHECK(b.total_cost == 0.0);
        CHECK(b.pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
        CHECK(b.pairs[1] == std::pair<std::size_t, std::size_t>{1, 0});
    }
    SUBCASE("rectangular inputs leave the excess side unmatched") {
        Matrix cost = matrix_from_json(nlohmann::json::parse("[[9,1,9,2],[1,9,9,9]]"));
        Assignment a = hungarian_match(cost);
        REQUIRE(a.pairs.size() == 2);
        CHECK(a.total_cost == 2.0);
        CHECK(a.unmatched_rows.empty());
        CHECK(a.unmatched_cols == std::vector<std::size_t>{2, 3});
    }
    SUBCASE("non-finite costs are rejected") {
        Matrix bad(2, 2, 0.0);
        bad.at(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(hungarian_match(bad), Error);
    }
    SUBCASE("matches the exhaustive permutation oracle") {
        Rng rng(21);
        for (int trial = 0; trial < 60; ++trial) {
            std::size_t r = 1 + rng.uniform_index(6), c = 1 + rng.uniform_index(6);
            Matrix cost(r, c);
            for (double& v : cost.data) v = rng.uniform(0.0, 10.0);
            Assignment a = hungarian_match(cost);
            CHECK(a.pairs.size() == std::min(r, c));
            double direct = 0.0;
            for (auto [i, j] : a.pairs) direct += cost.at(i, j);
            CHECK(a.total_cost == direct);
            CHECK(a.total_cost == doctest::Approx(brute_force_min_cost(cost)).epsilon(1e-12));
        }
    }
}

TEST_CASE("sigmoid_focal_loss") {
    Matrix logit0(1, 1, 0.0);
    SUBCASE("closed-form values at logit zero") {
        // positive: 0.25 * 0.5^2 * ln 2; negative: 0.75 * 0.5^2 * ln 2
        Matrix pos(1, 1, 1.0), neg(1, 1, 0.0);
        CHECK(sigmoid_focal_loss(logit0, pos, 2.0, 0.25) == doctest::Approx(0.25 * 0.25 * std::log(2.0)));
        CHECK(sigmoid_focal_loss(logit0, neg, 2.0, 0.25) == doctest::Approx(0.75 * 0.25 * std::log(2.0)));
    }
    SUBCASE("gamma zero with alpha half is scaled cross entropy") {
        Rng rng(4);
        Matrix logits = random_matrix(rng, 2, 3);
        Matrix targets(2, 3, 0.0);
        targets.at(0, 1) = 1.0;
        double want = 0.0;
        for (std::size_t i = 0; i < logits.data.size(); ++i) {
            double p = sigmoid(logits.data[i]);
            want += targets.data[i] != 0.0 ? -std::log(p) : -std::log(1.0 - p);
        }
        want *= 0.5 / 6.0;
        CHECK(sigmoid_focal_loss(logits, targets, 0.0, 0.5) == doctest::Approx(want));
    }
    SUBCASE("ignored entries do not contribute") {
        Matrix logits(1, 2, 0.0);
        logits.at(0, 1) = 50.0;  // would dominate if counted
        Matrix targets(1, 2, 1.0);
        targets.at(0, 1) = 0.0;
        Matrix ignore(1, 2, 0.0);
        ignore.at(0, 1) = 1.0;
        CHECK(sigmoid_focal_loss(logits, targets, 2.0, 0.25, &ignore) ==
              doctest::Approx(0.25 * 0.25 * std::log(2.0)));
        Matrix all(1, 2, 1.0);
        CHECK(sigmoid_focal_loss(logits, targets, 2.0, 0.25, &all) == 0.0);
    }
    SUBCASE("analytic gradient matches central finite differences") {
        Rng rng(31);
        Matrix logits = random_matrix(rng, 3, 4);
        Matrix targets(3, 4, 0.0);
        Matrix ignore(3, 4, 0.0);
        for (std::size_t i = 0; i < targets.data.size(); ++i) {
            if (rng.uniform() < 0.5) targets.data[i] = 1.0;
            if (rng.uniform() < 0.2) ignore.data[i] = 1.0;
        }
        Matrix analytic = sigmoid_focal_loss_grad(logits, targets, 2.0, 0.25, &ignore);
        auto fn = [&](const std::vector<double>& x) {
            Matrix m = logits;
            m.data = x;
            return sigmoid_focal_loss(m, targets, 2.0, 0.25, &ignore);
        };
        CHECK(grad_check(fn, logits.data, analytic.data) < 1e-4);
    }
}

TEST_CASE("dice_loss") {
    SUBCASE("closed-form value at logit zero") {
        // p = 0.5 on 4 points, half of them in the target: 1 - 3/5
        Matrix logits(1, 4, 0.0);
        Matrix target(1, 4, 0.0);
        target.at(0, 0) = target.at(0, 1) = 1.0;
        CHECK(dice_loss(logits, target, 1.0) == doctest::Approx(0.4));
    }
    SUBCASE("near-perfect prediction approaches zero") {
        Matrix logits(1, 3, -40.0);
        logits.at(0, 0) = 40.0;
        Matrix target(1, 3, 0.0);
        target.at(0, 0) = 1.0;
        CHECK(dice_loss(logits, target, 1.0) < 1e-6);
    }
    SUBCASE("analytic gradient matches central finite differences") {
        Rng rng(32);
        Matrix logits = random_matrix(rng, 3, 5);
        Matrix target(3, 5, 0.0);
        for (std::size_t i = 0; i < target.data.size(); ++i)
            if (rng.uniform() < 0.4) target.data[i] = 1.0;
        Matrix analytic = dice_loss_grad(logits, target, 1.0);
        auto fn = [&](const std::vector<double>& x) {
            Matrix m = logits;
            m.data = x;
            return dice_loss(m, target, 1.0);
        };
        CHECK(grad_check(fn, logits.data, analytic.data) < 1e-4);
    }
}

TEST_CASE("grad_check harness sanity") {
    // f(x) = sum x_i^2, grad = 2x
    auto fn = [](const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    std::vector<double> x{0.5, -1.2, 2.0};
    std::vector<double> good{1.0, -2.4, 4.0};
    std::vector<double> bad{1.0, -2.4, 5.0};
    CHECK(grad_check(fn, x, good) < 1e-6);
    CHECK(grad_check(fn, x, bad) > 0.1);
    CHECK_THROWS_AS(grad_check(fn, x, good, 0.1), Error);
    CHECK_THROWS_AS(grad_check(fn, x, {1.0}), Error);
}

TEST_CASE("clasp_loss") {
    // 3 points, 2 queries; query 0 predicts points {0,1}, query 1 predicts {2}
    Matrix mask_logits(3, 2, -10.0);
    mask_logits.at(0, 0) = mask_logits.at(1, 0) = 10.0;
    mask_logits.at(2, 1) = 10.0;
    // gt instance 0 = {2}, instance 1 = {0,1}
    Matrix gt(3, 2, 0.0);
    gt.at(2, 0) = 1.0;
    gt.at(0, 1) = gt.at(1, 1) = 1.0;
    Matrix text_logits(1, 2, -10.0);
    text_logits.at(0, 1) = 10.0;
    CorrespondenceTargets targets = CorrespondenceTargets::zeros(1, 2);
    targets.targets.at(0, 1) = 1.0;

    LossReport report = clasp_loss(mask_logits, text_logits, gt, targets);
    REQUIRE(report.matching.pairs.size() == 2);
    CHECK(report.matching.pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(report.matching.pairs[1] == std::pair<std::size_t, std::size_t>{1, 0});
    CHECK(report.total == doctest::Approx(report.components.at("mask_focal") + report.components.at("mask_dice") +
                                          report.lambda_cls * report.components.at("cls")));
    CHECK(report.total < 0.05);  // everything is confidently correct

    SUBCASE("cost matrix mirrors the training loss per pair") {
        Matrix cost = mask_matching_cost(mask_logits, gt);
        CHECK(cost.rows == 2);
        CHECK(cost.cols == 2);
        // pair (gt 1, query 0) is the perfect one
        CHECK(cost.at(1, 0) < cost.at(1, 1));
        CHECK(cost.at(0, 1) < cost.at(0, 0));
    }
    SUBCASE("more instances than queries is an error") {
        Matrix many_gt(3, 3, 0.0);
        CHECK_THROWS_AS(clasp_loss(mask_logits, text_logits, many_gt, targets), Error);
    }
    SUBCASE("shape mismatch on text targets is an error") {
        CorrespondenceTargets wrong = CorrespondenceTargets::zeros(2, 2);
        CHECK_THROWS_AS(clasp_loss(mask_logits, text_logits, gt, wrong), Error);
    }
}

TEST_CASE("referent_positive_targets uses a strict IoU threshold") {
    auto make_query = [](std::size_t points, const Mask& on) {
        Matrix m(points, 1, 0.0);
        for (std::size_t p : on) m.at(p, 0) = 1.0;
        return m;
    };
    auto range_mask = [](std::size_t lo, std::size_t hi) {
        Mask m;
        for (std::size_t i = lo; i < hi; ++i) m.push_back(i);
        return m;
    };

    SUBCASE("IoU 0.29 stays ignored") {
        Mask q = range_mask(0, 29);
        for (std::size_t i = 79; i < 100; ++i) q.push_back(i);  // |q|=50, inter=29, union=100
        auto labels = referent_positive_targets(make_query(100, q), range_mask(0, 79));
        CHECK(labels[0] == ReferentLabel::ignored);
    }
    SUBCASE("IoU exactly 0.30 stays ignored") {
        Mask q = range_mask(0, 3);
        for (std::size_t i = 7; i < 10; ++i) q.push_back(i);  // |q|=6, gt=7, inter=3, union=10
        auto labels = referent_positive_targets(make_query(10, q), range_mask(0, 7));
        CHECK(labels[0] == ReferentLabel::ignored);
    }
    SUBCASE("IoU 0.31 flips to positive") {
        Mask q = range_mask(0, 31);
        for (std::size_t i = 79; i < 100; ++i) q.push_back(i);  // |q|=52, inter=31, union=100
        auto labels = referent_positive_targets(make_query(100, q), range_mask(0, 79));
        CHECK(labels[0] == ReferentLabel::positive);
    }
    SUBCASE("per-query labels are independent") {
        Matrix queries(10, 2, 0.0);
        for (std::size_t p = 0; p < 7; ++p) queries.at(p, 0) = 1.0;  // IoU 1.0 with gt
        queries.at(9, 1) = 1.0;                                      // disjoint
        auto labels = referent_positive_targets(queries, range_mask(0, 7));
        CHECK(labels[0] == ReferentLabel::positive);
        CHECK(labels[1] == ReferentLabel::ignored);
    }
}

TEST_CASE("referent_loss and llm_loss") {
    Matrix logits(1, 2, 0.0);
    CorrespondenceTargets targets = CorrespondenceTargets::zeros(1, 2);
    targets.targets.at(0, 0) = 1.0;
    targets.ignore.at(0, 1) = 1.0;  // not a negative, just excluded
    double want = 0.25 * 0.25 * std::log(2.0);
    CHECK(referent_loss(logits, targets) == doctest::Approx(want));

    LossReport report = llm_loss(logits, targets, 1.5);
    CHECK(report.components.at("lang") == 1.5);
    CHECK(report.components.at("ref") == doctest::Approx(want));
    CHECK(report.total == doctest::Approx(1.5 + want));
}

TEST_CASE("decode_phrase_masks") {
    // 4 points, 3 queries
    Matrix mask_logits(4, 3, -5.0);
    mask_logits.at(0, 0) = 5.0;                          // query 0 -> {0}
    mask_logits.at(1, 1) = mask_logits.at(2, 1) = 5.0;   // query 1 -> {1,2}
    mask_logits.at(3, 2) = 5.0;                          // query 2 -> {3}

    SUBCASE("one_to_one takes the argmax query") {
        Matrix scores(1, 3, 0.0);
        scores.at(0, 1) = 2.0;
        auto masks = decode_phrase_masks(scores, mask_logits, DecodeMode::one_to_one);
        REQUIRE(masks.size() == 1);
        CHECK(masks[0] == Mask{1, 2});
    }
    SUBCASE("one_to_many unions every query above the score threshold") {
        Matrix scores(1, 3, -5.0);             // sigmoid(-5) < 0.3, excluded
        scores.at(0, 0) = 0.0;                 // sigmoid(0) = 0.5 >= 0.3
        scores.at(0, 2) = 3.0;
        auto masks = decode_phrase_masks(scores, mask_logits, DecodeMode::one_to_many);
        CHECK(masks[0] == Mask{0, 3});
    }
    SUBCASE("a phrase with no passing query decodes to an empty mask") {
        Matrix scores(1, 3, -9.0);
        auto masks = decode_phrase_masks(scores, mask_logits, DecodeMode::one_to_many);
        CHECK(masks[0].empty());
    }
    SUBCASE("query dimension mismatch is an error") {
        Matrix scores(1, 2, 0.0);
        CHECK_THROWS_AS(decode_phrase_masks(scores, mask_logits, DecodeMode::one_to_one), Error);
    }
}
