#include <austkit/rng.hpp>
#include <austkit/tensor.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace austkit;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool rg = false) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(v), std::move(shape), rg);
}

} // namespace

TEST_CASE("tensor construction and invariants") {
    auto t = Tensor::from_data({1, 2, 3, 4, 5, 6}, {2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == std::vector<int>{2, 3});
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS_AS(Tensor::from_data({1, 2}, {3}), TensorError);
    CHECK_THROWS_AS(Tensor::from_data({1, 2}, {2, 0}), TensorError);
}

TEST_CASE("backward: sum gives unit gradients") {
    auto x = Tensor::from_data({3, -1, 4, 1, -5, 9}, {2, 3}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sum of squares") {
    auto x = Tensor::from_data({1, 2, 3}, {3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = Tensor::from_data({1, 2}, {2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), TensorError);
}

TEST_CASE("backward accumulates across calls") {
    auto x = Tensor::from_data({1, 2}, {2}, true);
    backward(sum(x));
    backward(sum(x));
    CHECK(x.grad() == std::vector<double>{2, 2});
}

TEST_CASE("backward is deterministic") {
    Rng rng(77);
    auto xv = random_tensor({3, 4}, rng).values();
    std::vector<std::vector<double>> grads;
    for (int run = 0; run < 2; ++run) {
        auto x = Tensor::from_data(xv, {3, 4}, true);
        auto y = sum(mul(sigmoid(x), add(x, x)));
        backward(y);
        grads.push_back(x.grad());
    }
    CHECK(grads[0] == grads[1]); // bitwise
}

TEST_CASE("no-grad mode records no tape") {
    auto x = Tensor::from_data({1, 2}, {2}, true);
    NoGradGuard off;
    auto y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("conv2d: all-ones 3x3 sums to 9") {
    auto x = Tensor::full({1, 1, 3, 3}, 1.0);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0);
    auto b = Tensor::zeros({1});
    auto y = conv2d(x, k, b, 1, 0);
    CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d: 1x1 identity kernel") {
    Rng rng(3);
    auto x = random_tensor({1, 1, 4, 5}, rng);
    auto k = Tensor::from_data({1.0}, {1, 1, 1, 1});
    auto y = conv2d(x, k, Tensor::zeros({1}), 1, 0);
    CHECK(y.values() == x.values());
}

TEST_CASE("conv2d matches nested-loop oracle on a random case") {
    Rng rng(11);
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto y = conv2d(x, k, b, 1, 0);
    int OH, OW;
    auto ref = oracle::conv2d_loops(x.values(), 1, 2, 5, 5, k.values(), 3, 3, 3, b.values(), 1, 0,
                                    OH, OW);
    REQUIRE(y.shape() == std::vector<int>{1, 3, OH, OW});
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(std::abs(y.values()[i] - ref[i]) <= 1e-10);
}

TEST_CASE("conv2d matches oracle across shapes, strides and padding") {
    Rng rng(29);
    for (int N : {1, 2})
        for (int C : {1, 3, 4})
            for (int HW : {3, 5, 7})
                for (int kk : {1, 3})
                    for (int stride : {1, 2})
                        for (int pad : {0, 1}) {
                            if (HW + 2 * pad < kk) continue;
                            const int O = 2;
                            auto x = random_tensor({N, C, HW, HW}, rng);
                            auto k = random_tensor({O, C, kk, kk}, rng);
                            auto b = random_tensor({O}, rng);
                            auto y = conv2d(x, k, b, stride, pad);
                            int OH, OW;
                            auto ref = oracle::conv2d_loops(x.values(), N, C, HW, HW, k.values(), O,
                                                            kk, kk, b.values(), stride, pad, OH, OW);
                            REQUIRE(y.shape() == std::vector<int>{N, O, OH, OW});
                            double maxd = 0.0;
                            for (std::size_t i = 0; i < ref.size(); ++i)
                                maxd = std::max(maxd, std::abs(y.values()[i] - ref[i]));
                            CHECK(maxd <= 1e-10);
                        }
}

TEST_CASE("conv2d names the offending dimension") {
    auto x = Tensor::zeros({1, 2, 4, 4});
    auto k = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_WITH(conv2d(x, k, Tensor::zeros({1}), 1, 0),
                      Catch::Matchers::ContainsSubstring("channels"));
    auto k2 = Tensor::zeros({2, 2, 3, 3});
    CHECK_THROWS_WITH(conv2d(x, k2, Tensor::zeros({1}), 1, 0),
                      Catch::Matchers::ContainsSubstring("bias"));
}

TEST_CASE("cosine_similarity basics") {
    auto a = Tensor::from_data({1, 2, 3}, {3});
    CHECK(cosine_similarity(a, a).item() == Catch::Approx(1.0).margin(1e-12));
    auto e1 = Tensor::from_data({1, 0}, {2});
    auto e2 = Tensor::from_data({0, 1}, {2});
    CHECK(cosine_similarity(e1, e2).item() == Catch::Approx(0.0).margin(1e-12));
    auto u = Tensor::from_data({1, 1}, {2});
    auto v = Tensor::from_data({-1, -1}, {2});
    CHECK(cosine_similarity(u, v).item() == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("cosine_similarity stays within [-1,1] and handles zero vectors") {
    Rng rng(5);
    for (int s = 0; s < 50; ++s) {
        auto a = random_tensor({4, 6}, rng, -3.0, 3.0);
        auto b = random_tensor({4, 6}, rng, -3.0, 3.0);
        auto c = cosine_similarity(a, b);
        REQUIRE(c.shape() == std::vector<int>{4});
        for (double v : c.values()) {
            CHECK(v >= -1.0 - 1e-9);
            CHECK(v <= 1.0 + 1e-9);
        }
    }
    auto z = Tensor::zeros({3});
    auto w = Tensor::from_data({1, 0, 0}, {3});
    CHECK(cosine_similarity(z, w).item() == 0.0);
}

TEST_CASE("resize_bilinear identity and constancy") {
    auto m = Tensor::from_data({0, 1, 0, 1}, {1, 1, 2, 2});
    CHECK(resize_bilinear(m, 2, 2).values() == m.values());
    auto c = Tensor::full({1, 1, 3, 5}, 0.42);
    auto r = resize_bilinear(c, 7, 2);
    for (double v : r.values()) CHECK(v == Catch::Approx(0.42).margin(1e-12));
    CHECK_THROWS_AS(resize_bilinear(c, 0, 3), TensorError);
}

TEST_CASE("resize_bilinear matches the interpolation formula") {
    auto x = Tensor::from_data({0, 0, 1, 1}, {1, 1, 2, 2});
    auto y = resize_bilinear(x, 4, 4);
    // direct evaluation per output pixel (align_corners=false)
    auto sample = [&](int oy, int ox) {
        auto src = [&](double o, int in, int out) {
            double s = (o + 0.5) * (static_cast<double>(in) / out) - 0.5;
            return std::min(std::max(s, 0.0), static_cast<double>(in - 1));
        };
        const double sy = src(oy, 2, 4), sx = src(ox, 2, 4);
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
        const double fy = sy - y0, fx = sx - x0;
        const double v00 = x.at({0, 0, y0, x0}), v01 = x.at({0, 0, y0, x1});
        const double v10 = x.at({0, 0, y1, x0}), v11 = x.at({0, 0, y1, x1});
        return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    };
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox)
            CHECK(y.at({0, 0, oy, ox}) == Catch::Approx(sample(oy, ox)).margin(1e-12));
}

TEST_CASE("avg_pool2d downsamples exactly") {
    auto x = Tensor::from_data({1, 2, 3, 4}, {1, 1, 2, 2});
    CHECK(avg_pool2d(x, 2, 2).item() == 2.5);
}

TEST_CASE("matmul and transpose") {
    auto a = Tensor::from_data({1, 2, 3, 4, 5, 6}, {2, 3});
    auto b = Tensor::from_data({7, 8, 9, 10, 11, 12}, {3, 2});
    auto c = matmul(a, b);
    CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
    CHECK(transpose(a).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK_THROWS_AS(matmul(a, a), TensorError);
}

TEST_CASE("concat and slice are inverse") {
    Rng rng(17);
    auto a = random_tensor({1, 2, 3, 3}, rng);
    auto b = random_tensor({1, 3, 3, 3}, rng);
    auto cat = concat_channels({a, b});
    REQUIRE(cat.shape() == std::vector<int>{1, 5, 3, 3});
    CHECK(slice_channels(cat, 0, 2).values() == a.values());
    CHECK(slice_channels(cat, 2, 5).values() == b.values());
}

TEST_CASE("l2_normalize_rows produces unit rows") {
    Rng rng(23);
    auto a = random_tensor({5, 4}, rng, -2.0, 2.0);
    auto n = l2_normalize_rows(a);
    for (int r = 0; r < 5; ++r) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += n.at({r, c}) * n.at({r, c});
        CHECK(std::sqrt(s) == Catch::Approx(1.0).margin(1e-12));
    }
}

// Finite-difference checks for every differentiable op. The acceptance suite
// reruns these with more seeds; here a few seeds keep the unit run quick.
TEST_CASE("gradient checks against central differences") {
    const int kSeeds = 5;
    const double kTol = 1e-4;

    auto check = [&](const char* name, const gradcheck::Builder& f,
                     std::vector<std::vector<int>> shapes, gradcheck::Options opt = {}) {
        double worst = 0.0;
        for (int s = 0; s < kSeeds; ++s) {
            Rng rng(1000 + 37 * s);
            auto r = gradcheck::run(f, shapes, rng, opt);
            worst = std::max(worst, r.max_rel);
        }
        INFO(name);
        CHECK(worst <= kTol);
    };

    check("add", [](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
          {{2, 3}, {2, 3}});
    check("sub_mul_div",
          [](const std::vector<Tensor>& in) { return div(mul(in[0], in[1]), add_scalar(in[2], 3.0)); },
          {{2, 2}, {2, 2}, {2, 2}});
    check("sigmoid_log_exp_sqrt",
          [](const std::vector<Tensor>& in) {
              return austkit::log(add_scalar(austkit::sqrt(add_scalar(austkit::exp(sigmoid(in[0])), 1.0)), 1.0));
          },
          {{3, 3}});
    check("relu",
          [](const std::vector<Tensor>& in) { return relu(in[0]); }, {{4, 4}},
          [] {
              gradcheck::Options o;
              o.reject = [](const std::vector<std::vector<double>>& vs) {
                  for (const auto& v : vs)
                      for (double x : v)
                          if (std::abs(x) < 1e-3) return true;
                  return false;
              };
              return o;
          }());
    check("clamp",
          [](const std::vector<Tensor>& in) { return clamp(in[0], -0.5, 0.5); }, {{3, 3}},
          [] {
              gradcheck::Options o;
              o.reject = [](const std::vector<std::vector<double>>& vs) {
                  for (const auto& v : vs)
                      for (double x : v)
                          if (std::abs(std::abs(x) - 0.5) < 1e-3) return true;
                  return false;
              };
              return o;
          }());
    check("mean_rsub",
          [](const std::vector<Tensor>& in) { return rsub_scalar(mean(in[0]), 1.0); }, {{3, 5}});
    check("matmul",
          [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, {{3, 4}, {4, 2}});
    check("transpose_reshape",
          [](const std::vector<Tensor>& in) { return transpose(reshape(in[0], {2, 6})); }, {{3, 4}});
    check("conv2d",
          [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
          {{1, 2, 4, 4}, {2, 2, 3, 3}, {2}});
    check("conv2d_strided",
          [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2, 0); },
          {{2, 1, 5, 5}, {2, 1, 3, 3}, {2}});
    check("avg_pool2d",
          [](const std::vector<Tensor>& in) { return avg_pool2d(in[0], 2, 2); }, {{1, 2, 4, 4}});
    check("resize_up",
          [](const std::vector<Tensor>& in) { return resize_bilinear(in[0], 5, 7); },
          {{1, 2, 3, 3}});
    check("resize_down",
          [](const std::vector<Tensor>& in) { return resize_bilinear(in[0], 2, 2); },
          {{1, 1, 5, 5}});
    check("cosine_similarity",
          [](const std::vector<Tensor>& in) { return cosine_similarity(in[0], in[1]); },
          {{4, 5}, {4, 5}});
    check("l2_normalize_rows",
          [](const std::vector<Tensor>& in) { return l2_normalize_rows(in[0]); }, {{4, 3}});
    check("concat_slice",
          [](const std::vector<Tensor>& in) {
              return slice_channels(concat_channels({in[0], in[1]}), 1, 3);
          },
          {{1, 2, 2, 2}, {1, 2, 2, 2}});
    check("mul_bscalar_reciprocal",
          [](const std::vector<Tensor>& in) {
              return mul_bscalar(in[0], reciprocal(add_scalar(sum(in[1]), 10.0)));
          },
          {{2, 3}, {4}});
}
