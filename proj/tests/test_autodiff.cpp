#include "sonate/autodiff.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "sonate/flow.hpp"
#include "sonate/rng.hpp"

using namespace sonate;

namespace {

Mat fixed_randn(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    return randn(rows, cols, rng);
}

// Central-difference check of d(loss)/d(param) for a scalar-valued graph
// builder. The builder must re-read param->val on every call.
double gradcheck_scalar(const ad::Value& param, const std::function<ad::Value()>& build, double eps = 1e-6) {
    ad::zero_grad({param});
    ad::backward(build());
    const Mat analytic = param->grad;
    double max_rel = 0.0;
    for (Eigen::Index i = 0; i < param->val.rows(); ++i) {
        for (Eigen::Index j = 0; j < param->val.cols(); ++j) {
            const double saved = param->val(i, j);
            param->val(i, j) = saved + eps;
            const double up = build()->val(0, 0);
            param->val(i, j) = saved - eps;
            const double down = build()->val(0, 0);
            param->val(i, j) = saved;
            const double numeric = (up - down) / (2 * eps);
            const double rel =
                std::abs(analytic(i, j) - numeric) / std::max({std::abs(analytic(i, j)), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    ad::zero_grad({param});
    return max_rel;
}

}  // namespace

TEST_CASE("backward on a linear map matches the hand-derived gradient", "[autodiff]") {
    Rng rng(1);
    auto w = ad::param(randn(3, 2, rng));
    const Mat x = randn(4, 3, rng);
    const Mat target = randn(4, 2, rng);
    auto loss = ad::mse_against(ad::matmul(ad::constant(x), w), target);
    ad::backward(loss);
    // d/dW mean((xW - T)^2) = 2/N x^T (xW - T)
    const Mat expected = 2.0 / static_cast<double>(target.size()) * x.transpose() * (x * w->val - target);
    CHECK((w->grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every op passes a central-difference gradient check", "[autodiff]") {
    Rng rng(7);
    const Mat target1 = randn(5, 4, rng);
    const Mat target2 = randn(5, 3, rng);

    SECTION("matmul variants") {
        auto p = ad::param(randn(4, 3, rng));
        const Mat a = randn(5, 4, rng);
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::matmul(ad::constant(a), p), target2);
              }) < 1e-7);
        const Mat b = randn(5, 4, rng);
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::matmul(p, ad::constant(b), true, true), fixed_randn(3, 5, 12));
              }) < 1e-7);
    }
    SECTION("add, sub, mul, scale, add_row") {
        auto p = ad::param(randn(5, 4, rng));
        const Mat other = randn(5, 4, rng);
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::mul(ad::add(p, ad::constant(other)), ad::sub(p, ad::constant(other))),
                                         target1);
              }) < 1e-7);
        auto row = ad::param(randn(1, 4, rng));
        CHECK(gradcheck_scalar(row, [&] {
                  return ad::mse_against(ad::add_row(ad::scale(ad::constant(other), 0.7), row), target1);
              }) < 1e-7);
    }
    SECTION("structure: concat/slice") {
        auto p = ad::param(randn(3, 4, rng));
        const Mat other = randn(2, 4, rng);
        CHECK(gradcheck_scalar(p, [&] {
                  auto cat = ad::concat_rows({p, ad::constant(other)});
                  return ad::mse_against(ad::slice_rows(cat, 1, 3), fixed_randn(3, 4, 3));
              }) < 1e-7);
        CHECK(gradcheck_scalar(p, [&] {
                  auto cols = ad::concat_cols({ad::slice_cols(p, 0, 2), ad::slice_cols(p, 2, 2)});
                  return ad::mse_against(cols, fixed_randn(3, 4, 4));
              }) < 1e-7);
    }
    SECTION("gather_rows") {
        auto table = ad::param(randn(6, 4, rng));
        const std::vector<int> ids{0, 3, 3, 5, 1};
        CHECK(gradcheck_scalar(table, [&] {
                  return ad::mse_against(ad::gather_rows(table, ids), fixed_randn(5, 4, 5));
              }) < 1e-7);
    }
    SECTION("nonlinearities") {
        auto p = ad::param(randn(5, 4, rng));
        CHECK(gradcheck_scalar(p, [&] { return ad::mse_against(ad::gelu(p), target1); }) < 1e-6);
        CHECK(gradcheck_scalar(p, [&] { return ad::mse_against(ad::tanh_op(p), target1); }) < 1e-6);
        CHECK(gradcheck_scalar(p, [&] { return ad::mse_against(ad::softmax_rows(p), target1); }) < 1e-6);
    }
    SECTION("layer_norm") {
        auto p = ad::param(randn(5, 4, rng));
        auto g = ad::param(randn(1, 4, rng));
        auto b = ad::param(randn(1, 4, rng));
        CHECK(gradcheck_scalar(p, [&] { return ad::mse_against(ad::layer_norm(p, g, b), target1); }) < 1e-6);
        CHECK(gradcheck_scalar(g, [&] { return ad::mse_against(ad::layer_norm(p, g, b), target1); }) < 1e-6);
        CHECK(gradcheck_scalar(b, [&] { return ad::mse_against(ad::layer_norm(p, g, b), target1); }) < 1e-6);
    }
    SECTION("rope") {
        auto p = ad::param(randn(5, 4, rng));
        const std::vector<long> positions{0, 1, 2, 3, 7};
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::rope(p, positions, 100.0), target1);
              }) < 1e-7);
    }
    SECTION("reductions") {
        auto p = ad::param(randn(5, 4, rng));
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::mean_rows(p), fixed_randn(1, 4, 6));
              }) < 1e-7);
        CHECK(gradcheck_scalar(p, [&] { return ad::softmax_xent(ad::mean_rows(p), 2); }) < 1e-6);
        CHECK(gradcheck_scalar(p, [&] {
                  return ad::mse_against(ad::l2_normalize_row(ad::mean_rows(p)), fixed_randn(1, 4, 8));
              }) < 1e-6);
    }
}

TEST_CASE("gradients accumulate across separate backward calls", "[autodiff]") {
    Rng rng(9);
    auto p = ad::param(randn(2, 2, rng));
    const Mat t = Mat::Zero(2, 2);
    ad::zero_grad({p});
    ad::backward(ad::mse_against(p, t));
    const Mat once = p->grad;
    ad::backward(ad::mse_against(p, t));
    CHECK((p->grad - 2.0 * once).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("diamond-shaped graphs backpropagate once per node", "[autodiff]") {
    // loss = mean((x + x)^2): d/dx = 8x/N; a naive traversal that revisits
    // nodes would double-count.
    Rng rng(11);
    auto p = ad::param(randn(3, 3, rng));
    ad::zero_grad({p});
    auto sum = ad::add(p, p);
    ad::backward(ad::mse_against(sum, Mat(Mat::Zero(3, 3))));
    const Mat expected = 8.0 / 9.0 * p->val;
    CHECK((p->grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constants never accumulate gradient", "[autodiff]") {
    auto c = ad::constant(Mat(Mat::Ones(2, 2)));
    auto p = ad::param(Mat(Mat::Ones(2, 2)));
    ad::backward(ad::mse_against(ad::mul(c, p), Mat(Mat::Zero(2, 2))));
    CHECK(c->grad.size() == 0);
    CHECK(p->grad.size() > 0);
}

TEST_CASE("finite_diff_gradcheck rejects eps = 0 and a linear model is exact", "[autodiff][flow]") {
    Rng rng(13);
    auto w = ad::param(randn(4, 4, rng));
    const Mat x = randn(6, 4, rng);
    const Mat target = randn(6, 4, rng);
    auto loss_fn = [&] { return ad::mse_against(ad::matmul(ad::constant(x), w), target); };
    Rng probe_rng(17);
    CHECK_THROWS_AS(finite_diff_gradcheck({w}, loss_fn, 10, 0.0, probe_rng), Error);
    const double rel = finite_diff_gradcheck({w}, loss_fn, 16, 1e-4, probe_rng);
    CHECK(rel < 1e-8);
}
