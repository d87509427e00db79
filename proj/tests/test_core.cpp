#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "quanet/grid.hpp"
#include "quanet/rng.hpp"

using namespace quanet;

TEST_CASE("shape basics") {
    Shape s{3, 4, 2};
    CHECK(s.rank() == 3);
    CHECK(s.numel() == 24);
    CHECK(s.str() == "[3x4x2]");
    CHECK(Shape{3, 4} == Shape{3, 4});
    CHECK(Shape{3, 4} != Shape{4, 3});
}

TEST_CASE("grid indexing is row-major with innermost channels") {
    Grid<float> g(Shape{2, 3, 2});
    g.at(1, 2, 1) = 7.0f;
    CHECK(g.data[(1 * 3 + 2) * 2 + 1] == 7.0f);
    Grid<float> m(Shape{2, 3});
    m.at(1, 2) = 5.0f;
    CHECK(m.data[1 * 3 + 2] == 5.0f);
    CHECK(m.sum() == 5.0f);
}

TEST_CASE("grid rejects mismatched buffer") {
    CHECK_THROWS_AS(Grid<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("rng streams are reproducible and label-separated") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(42, "init"), d(42, "init"), e(42, "data");
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 50; ++i) {
        uint64_t x = c.next_u64(), y = d.next_u64(), z = e.next_u64();
        all_equal = all_equal && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("rng uniform and normal have sane moments") {
    Rng r(7);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
        sq += u * u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
    CHECK(sq / n == doctest::Approx(1.0 / 3).epsilon(0.03));

    double nsum = 0.0, nsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        nsum += v;
        nsq += v * v;
    }
    CHECK(std::abs(nsum / n) < 0.03);
    CHECK(nsq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("rng integer helpers stay in range") {
    Rng r(11);
    for (int i = 0; i < 2000; ++i) {
        int64_t v = r.uniform_int(3, 9);
        CHECK(v >= 3);
        CHECK(v <= 9);
        int64_t lu = r.log_uniform_int(1, 500);
        CHECK(lu >= 1);
        CHECK(lu <= 500);
    }
    // log-uniform should put roughly as much mass in [1,22) as in [22,500]
    int low = 0;
    for (int i = 0; i < 4000; ++i)
        if (r.log_uniform_int(1, 500) < 22) ++low;
    CHECK(low > 1200);
    CHECK(low < 2800);
}

TEST_CASE("shuffle is a permutation and deterministic") {
    std::vector<int> v(20);
    for (int i = 0; i < 20; ++i) v[i] = i;
    std::vector<int> w = v;
    Rng r1(5, "shuffle"), r2(5, "shuffle");
    r1.shuffle(v);
    r2.shuffle(w);
    CHECK(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}
