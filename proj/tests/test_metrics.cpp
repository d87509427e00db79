#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "quanet/metrics.hpp"
#include "quanet/rng.hpp"

using namespace quanet;

namespace {

GridF random_map(Shape s, Rng& rng) {
    GridF g(std::move(s));
    for (float& v : g.data) v = static_cast<float>(std::max(0.0, rng.normal(0.1, 0.4)));
    return g;
}

EvalRecord count_record(const std::string& id, const std::string& cls, double pred,
                        double gt) {
    EvalRecord r;
    r.image_id = id;
    r.class_name = cls;
    r.pred_count = pred;
    r.gt_count = gt;
    return r;
}

// independent prefix-overlap AP: O(n^2) array scans, no sets
double ap_bruteforce(const std::vector<std::string>& gt_order,
                     const std::vector<std::string>& pred_order) {
    const size_t n = gt_order.size();
    double ap = 0.0;
    for (size_t k = 1; k <= n; ++k) {
        int hits = 0;
        for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j)
                if (pred_order[i] == gt_order[j]) ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k);
    }
    return ap / static_cast<double>(n);
}

}  // namespace

TEST_CASE("mae and rmse: worked examples") {
    std::vector<EvalRecord> recs{count_record("a", "c", 10, 12),
                                 count_record("b", "c", 20, 18)};
    auto [mae, rmse] = mae_rmse(recs);
    CHECK(mae == doctest::Approx(2.0));
    CHECK(rmse == doctest::Approx(2.0));

    std::vector<EvalRecord> perfect{count_record("a", "c", 7, 7),
                                    count_record("b", "c", 3, 3)};
    auto [m2, r2] = mae_rmse(perfect);
    CHECK(m2 == 0.0);
    CHECK(r2 == 0.0);

    std::vector<EvalRecord> one{count_record("a", "c", 10, 5)};
    auto [m3, r3] = mae_rmse(one);
    CHECK(m3 == doctest::Approx(5.0));
    CHECK(r3 == doctest::Approx(5.0));

    CHECK_THROWS_AS(mae_rmse({}), ConfigError);
}

TEST_CASE("record construction: counts equal full-map sums") {
    Rng rng(201);
    GridF pred = random_map(Shape{16, 16}, rng);
    GridF gt = random_map(Shape{16, 16}, rng);
    EvalRecord r = make_eval_record("img", "cls", pred, gt);
    CHECK(r.pred_count == doctest::Approx(pred.sum()).epsilon(1e-4));
    CHECK(r.gt_count == doctest::Approx(gt.sum()).epsilon(1e-4));
    CHECK(r.region_pred.size() == 4);               // levels 0..3
    CHECK(r.region_pred[3].size() == 64);           // 8x8 regions
    CHECK_THROWS_AS(make_eval_record("img", "cls", pred, random_map(Shape{8, 8}, rng)),
                    ShapeError);
}

TEST_CASE("game level 0 equals mae exactly") {
    Rng rng(202);
    std::vector<EvalRecord> recs;
    for (int i = 0; i < 25; ++i)
        recs.push_back(make_eval_record("img" + std::to_string(i), "c",
                                        random_map(Shape{16, 16}, rng),
                                        random_map(Shape{16, 16}, rng)));
    auto [mae, rmse] = mae_rmse(recs);
    (void)rmse;
    CHECK(game(recs, 0) == mae);
}

TEST_CASE("game is monotone non-decreasing in level") {
    Rng rng(203);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<EvalRecord> recs{make_eval_record(
            "img", "c", random_map(Shape{32, 32}, rng), random_map(Shape{32, 32}, rng))};
        double prev = game(recs, 0);
        for (int level = 1; level <= 3; ++level) {
            double cur = game(recs, level);
            CHECK(cur >= prev - 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("misplaced mass: zero count error but positive localization error") {
    GridF pred(Shape{4, 4});
    GridF gt(Shape{4, 4});
    gt.at(0, 0) = 5.0f;   // top-left quadrant
    pred.at(3, 3) = 5.0f; // bottom-right quadrant
    std::vector<EvalRecord> recs{make_eval_record("img", "c", pred, gt, 1)};
    CHECK(game(recs, 0) == 0.0);
    CHECK(game(recs, 1) == doctest::Approx(10.0));
}

TEST_CASE("game level 1 on a 4x4 pair matches hand-computed region sums") {
    GridF pred(Shape{4, 4});
    GridF gt(Shape{4, 4});
    // quadrant sums pred: TL=1+2=3, TR=4, BL=0.5, BR=6
    pred.at(0, 0) = 1.0f;
    pred.at(1, 1) = 2.0f;
    pred.at(0, 3) = 4.0f;
    pred.at(3, 0) = 0.5f;
    pred.at(2, 2) = 6.0f;
    // quadrant sums gt: TL=2, TR=1, BL=0, BR=7
    gt.at(1, 0) = 2.0f;
    gt.at(1, 2) = 1.0f;
    gt.at(3, 3) = 7.0f;
    std::vector<EvalRecord> recs{make_eval_record("img", "c", pred, gt, 1)};
    // |3-2| + |4-1| + |0.5-0| + |6-7| = 1 + 3 + 0.5 + 1 = 5.5
    CHECK(game(recs, 1) == doctest::Approx(5.5));
}

TEST_CASE("game matches the scalar region oracle on random pairs") {
    Rng rng(204);
    for (int trial = 0; trial < 40; ++trial) {
        GridF pred = random_map(Shape{24, 40}, rng);
        GridF gt = random_map(Shape{24, 40}, rng);
        std::vector<EvalRecord> recs{make_eval_record("img", "c", pred, gt)};
        for (int level = 0; level <= 2; ++level) {
            double want = oracle::game_image(pred.cast<double>(), gt.cast<double>(), level);
            CHECK(game(recs, level) == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("region splitting conserves mass on odd dimensions") {
    Rng rng(205);
    GridF map = random_map(Shape{13, 21}, rng);
    for (int level = 0; level <= 3; ++level) {
        auto sums = region_sums(map, level);
        CHECK(sums.size() == static_cast<size_t>(1 << level) * (1 << level));
        double total = 0.0;
        for (double s : sums) total += s;
        CHECK(total == doctest::Approx(map.sum()).epsilon(1e-5));
        CHECK(sums == region_sums(map, level));  // deterministic
    }
    CHECK_THROWS_AS(region_sums(random_map(Shape{4, 4}, rng), 3), ConfigError);
}

TEST_CASE("average precision: identical and reversed orderings") {
    CHECK(average_precision({"a", "b", "c"}, {"a", "b", "c"}) == 1.0);
    CHECK(average_precision({"a", "b"}, {"b", "a"}) == doctest::Approx(0.5));
}

TEST_CASE("average precision matches brute-force prefix enumeration") {
    Rng rng(206);
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("img" + std::to_string(i));
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> pred = ids;
        rng.shuffle(pred);
        CHECK(average_precision(ids, pred) ==
              doctest::Approx(ap_bruteforce(ids, pred)).epsilon(1e-12));
    }
}

TEST_CASE("rank map: perfect ordering, class averaging, and skips") {
    std::vector<EvalRecord> recs{
        count_record("a1", "apples", 1, 10), count_record("a2", "apples", 2, 20),
        count_record("a3", "apples", 3, 30), count_record("b1", "birds", 5, 7),
        count_record("b2", "birds", 4, 9),  // reversed pair -> AP 0.5
        count_record("c1", "cats", 1, 1)};  // single image -> skipped
    std::vector<std::string> warnings;
    double m = rank_map(recs, &warnings);
    CHECK(m == doctest::Approx((1.0 + 0.5) / 2.0));
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("cats") != std::string::npos);

    std::vector<EvalRecord> only_small{count_record("c1", "cats", 1, 1)};
    CHECK_THROWS_AS(rank_map(only_small), ConfigError);
}

TEST_CASE("rank map is invariant to strictly monotone transforms of predictions") {
    Rng rng(207);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<EvalRecord> recs;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 6; ++i)
                recs.push_back(count_record("img" + std::to_string(c * 6 + i),
                                            "class" + std::to_string(c),
                                            rng.uniform(0.0, 50.0), rng.uniform(0.0, 50.0)));
        double base = rank_map(recs);
        std::vector<EvalRecord> warped = recs;
        for (auto& r : warped) r.pred_count = std::exp(r.pred_count * 0.1) + 3.0;
        CHECK(rank_map(warped) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("rank map breaks count ties by image id") {
    // equal predicted counts: order falls back to id, matching GT's id ordering
    std::vector<EvalRecord> recs{count_record("a", "c", 5, 1), count_record("b", "c", 5, 2),
                                 count_record("d", "c", 5, 3)};
    CHECK(rank_map(recs) == 1.0);
}
