#include <gtest/gtest.h>

#include "raunet/grad_check.hpp"
#include "raunet/op_suite.hpp"
#include "test_util.hpp"

using namespace raunet;

TEST(GradCheck, FourPointStencilRemovesCubicTruncation) {
    // f(x) = sum x^3: the 2-point error is eps^2 per element, the 4-point one vanishes.
    auto f = [](const auto& xs) { return reduce_mean(mul(mul(xs[0], xs[0]), xs[0])); };
    const std::vector<Tensor<double>> in{Tensor<double>(Shape{4}, std::vector<double>{0.3, -0.7, 1.1, 0.05})};
    const auto two = grad_check<double>(f, in, {.eps = 1e-2});
    const auto four = grad_check<double>(f, in, {.eps = 1e-2, .stencil = 4});
    EXPECT_GT(two.max_relative_error, 1e-5);
    EXPECT_LT(four.max_relative_error, 1e-12);
    EXPECT_THROW(grad_check<double>(f, in, {.stencil = 3}), std::invalid_argument);
}

TEST(GradCheck, WideOracleEvaluatesInExtendedPrecision) {
    auto f = [](const auto& xs) { return reduce_mean(sigmoid(xs[0])); };
    Rng rng(2);
    const auto r = grad_check<double, long double>(f, {raunet::testing::random_tensor({3, 5}, rng)}, {.eps = 1e-3, .stencil = 4});
    EXPECT_LT(r.max_relative_error, 1e-10);
}

TEST(OpSuite, NamesUniqueAndLookupWorks) {
    const auto names = op_case_names();
    EXPECT_GE(names.size(), 20u);
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = i + 1; j < names.size(); ++j) EXPECT_NE(names[i], names[j]);
    EXPECT_EQ(find_op_case("conv2d").name, "conv2d");
    try {
        find_op_case("conv3d");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("maxpool2x2"), std::string::npos);
    }
}

TEST(OpSuite, EveryOpPassesAt64Bit) {
    for (const auto& c : op_cases()) {
        const auto s = check_op(c, 2, 17);
        EXPECT_LT(s.max_relative_error, op_threshold(true)) << c.name;
    }
}

TEST(OpSuite, InjectedFaultIsCaughtForEveryOp) {
    for (const auto& c : op_cases()) {
        const auto s = check_op(c, 1, 3, {.f64 = true, .inject_fault = true});
        EXPECT_GT(s.max_relative_error, 1e-3) << c.name;
    }
}

TEST(OpSuite, DrawsAreSeeded) {
    const auto c = find_op_case("sigmoid");
    EXPECT_EQ(check_op(c, 3, 5).max_relative_error, check_op(c, 3, 5).max_relative_error);
}

TEST(OpSuite, ModelCheckPassesAndCatchesFault) {
    const auto ok = check_model(Variant::residual_attention_unet, 3, 16, 20, 1);
    EXPECT_EQ(ok.probed, 20u);
    EXPECT_LT(ok.max_relative_error, kModelThreshold);
    EXPECT_GT(check_model(Variant::residual_attention_unet, 3, 16, 20, 1, true).max_relative_error, kModelThreshold);
    EXPECT_THROW(check_model(Variant::plain_unet, 3, 18, 20, 1), std::invalid_argument);
}
