#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "reloc/losses.hpp"

using namespace reloc;
using namespace reloc::losses;

namespace {

Tensor constant(int n, int c, int h, int w, double value) {
    Tensor t(n, c, h, w);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
}

const LossWeights kDefault{};

}  // namespace

TEST_CASE("MAE: identity, constants, symmetry") {
    Rng rng(1);
    const Tensor a = oracles::rand_tensor(rng, 1, 3, 4, 4, 0.0, 1.0);
    CHECK(loss_mae(a, a) == 0.0);

    const Tensor half = constant(1, 3, 4, 4, 0.5);
    const Tensor quarter = constant(1, 3, 4, 4, 0.25);
    CHECK(loss_mae(half, quarter) == doctest::Approx(0.25).epsilon(1e-12));

    const Tensor b = oracles::rand_tensor(rng, 1, 3, 4, 4, 0.0, 1.0);
    CHECK(loss_mae(a, b) == loss_mae(b, a));
    CHECK_THROWS_AS(loss_mae(a, constant(1, 3, 4, 5, 0.0)), std::invalid_argument);
}

TEST_CASE("generator / discriminator losses: hand values and clamping") {
    CHECK(loss_gen(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(loss_gen(1.0 - 1e-7) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(loss_gen(1e-12) == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
    CHECK(std::isfinite(loss_gen(0.0)));

    CHECK(loss_disc(0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(loss_disc(1.0 - 1e-7, 1e-7) == doctest::Approx(0.0).epsilon(1e-6));

    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const double dp = rng.uniform(0.01, 0.99), dr = rng.uniform(0.01, 0.99);
        CHECK(oracles::rel_err(loss_disc(dp, dr), oracles::disc(dp, dr, 1e-7)) < 1e-9);
    }
}

TEST_CASE("CE: perfect prediction, uniform prediction, oracle match") {
    Rng rng(3);
    Tensor gt = oracles::rand_binary_tensor(rng, 1, 4, 4);
    CHECK(loss_ce(gt, gt) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-3));

    const Tensor half = constant(1, 1, 4, 4, 0.5);
    CHECK(loss_ce(half, gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("DICE: trivial geometry cases") {
    const Tensor ones = constant(1, 1, 4, 4, 1.0);
    const Tensor zeros = constant(1, 1, 4, 4, 0.0);
    CHECK(loss_dice(ones, ones) == doctest::Approx(1.0 - 32.0 / (32.0 + 1e-6)).epsilon(1e-12));

    Tensor pred(1, 1, 4, 4), gt(1, 1, 4, 4);
    for (int x = 0; x < 4; ++x) {
        pred.at(0, 0, 0, x) = 1.0;  // disjoint supports
        gt.at(0, 0, 3, x) = 1.0;
    }
    CHECK(loss_dice(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(loss_dice(zeros, zeros) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("localization loss: endpoints and hand combination") {
    Rng rng(4);
    const Tensor pred = oracles::rand_tensor(rng, 1, 1, 4, 4, 0.05, 0.95);
    const Tensor gt = oracles::rand_binary_tensor(rng, 1, 4, 4);

    LossWeights w;
    w.lambda1 = 1.0;
    CHECK(loss_loc(pred, gt, w) == doctest::Approx(loss_ce(pred, gt)).epsilon(1e-12));
    w.lambda1 = 0.0;
    CHECK(loss_loc(pred, gt, w) == doctest::Approx(loss_dice(pred, gt)).epsilon(1e-12));
    w.lambda1 = -0.1;
    CHECK_THROWS_AS(loss_loc(pred, gt, w), std::invalid_argument);

    // lambda1 = 0.2 with CE = 0.5 and DICE = 0.3 combines to 0.34
    CHECK(0.2 * 0.5 + (1.0 - 0.2) * 0.3 == doctest::Approx(0.34).epsilon(1e-12));
}

TEST_CASE("restoration loss: weighted combinations") {
    LossWeights w;
    w.lambda2 = 0.0;
    w.lambda3 = 0.0;
    w.lambda4 = 0.0;
    CHECK(loss_restore(0.3, 0.7, 0.9, w) == 0.0);

    w = LossWeights{};
    w.lambda2 = 100.0;
    w.lambda3 = 1.0;
    w.lambda4 = 0.05;
    CHECK(loss_restore(0.01, 0.7, 0.4, w) == doctest::Approx(1.72).epsilon(1e-12));
    w.lambda4 = 0.1;
    CHECK(loss_restore(0.01, 0.7, 0.4, w) == doctest::Approx(1.74).epsilon(1e-12));
    w.lambda2 = -1.0;
    CHECK_THROWS_AS(loss_restore(0.01, 0.7, 0.4, w), std::invalid_argument);
}

TEST_CASE("oracle equivalence on 100 random 4x4 instances per loss") {
    Rng rng(42);
    for (int i = 0; i < 100; ++i) {
        const Tensor plain = oracles::rand_tensor(rng, 1, 3, 4, 4, 0.0, 1.0);
        const Tensor restored = oracles::rand_tensor(rng, 1, 3, 4, 4, 0.0, 1.0);
        CHECK(std::abs(loss_mae(plain, restored) - oracles::mae(plain, restored)) < 1e-9);

        const Tensor pred = oracles::rand_tensor(rng, 1, 1, 4, 4, 0.02, 0.98);
        const Tensor gt = oracles::rand_binary_tensor(rng, 1, 4, 4);
        CHECK(std::abs(loss_ce(pred, gt) - oracles::ce(pred, gt, 1e-7)) < 1e-9);
        CHECK(std::abs(loss_dice(pred, gt) - oracles::dice(pred, gt, 1e-6)) < 1e-9);
        CHECK(std::abs(loss_loc(pred, gt, kDefault) -
                       oracles::loc(pred, gt, 0.2, 1e-7, 1e-6)) < 1e-9);

        const double dp = rng.uniform(0.01, 0.99), dr = rng.uniform(0.01, 0.99);
        CHECK(std::abs(loss_gen(dr) - oracles::gen(dr, 1e-7)) < 1e-9);
        CHECK(std::abs(loss_disc(dp, dr) - oracles::disc(dp, dr, 1e-7)) < 1e-9);
        CHECK(std::abs(loss_restore(0.3, 0.7, 0.9, kDefault) -
                       oracles::restore_total(0.3, 0.7, 0.9, 100.0, 1.0, 0.05)) < 1e-9);
    }
}

TEST_CASE("ranges: losses stay in their documented intervals") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const Tensor a = oracles::rand_tensor(rng, 2, 3, 4, 4, 0.0, 1.0);
        const Tensor b = oracles::rand_tensor(rng, 2, 3, 4, 4, 0.0, 1.0);
        const double m = loss_mae(a, b);
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);

        const Tensor pred = oracles::rand_tensor(rng, 2, 1, 4, 4, 0.0, 1.0);
        const Tensor gt = oracles::rand_binary_tensor(rng, 2, 4, 4);
        const double d = loss_dice(pred, gt);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(loss_ce(pred, gt) >= 0.0);
        CHECK(loss_gen(rng.uniform()) >= 0.0);
        CHECK(loss_disc(rng.uniform(), rng.uniform()) >= 0.0);
    }
}

TEST_CASE("gradients match central finite differences (step 1e-4, rel 1e-4)") {
    Rng rng(6);
    Tensor plain = oracles::rand_tensor(rng, 1, 3, 8, 8, 0.05, 0.95);
    Tensor restored = oracles::rand_tensor(rng, 1, 3, 8, 8, 0.05, 0.95);
    Tensor pred = oracles::rand_tensor(rng, 1, 1, 8, 8, 0.1, 0.9);
    Tensor gt = oracles::rand_binary_tensor(rng, 1, 8, 8);

    SUBCASE("MAE wrt restored image") {
        const Tensor g = loss_mae_grad(plain, restored);
        auto f = [&]() { return loss_mae(plain, restored); };
        for (size_t i = 0; i < restored.size(); i += 11)
            CHECK(oracles::rel_err(oracles::central_diff(f, &restored.v[i], 1e-4), g.v[i]) < 1e-4);
    }
    SUBCASE("CE wrt probability map") {
        const Tensor g = loss_ce_grad(pred, gt);
        auto f = [&]() { return loss_ce(pred, gt); };
        for (size_t i = 0; i < pred.size(); i += 7)
            CHECK(oracles::rel_err(oracles::central_diff(f, &pred.v[i], 1e-4), g.v[i]) < 1e-4);
    }
    SUBCASE("DICE wrt probability map") {
        const Tensor g = loss_dice_grad(pred, gt);
        auto f = [&]() { return loss_dice(pred, gt); };
        for (size_t i = 0; i < pred.size(); i += 7)
            CHECK(oracles::rel_err(oracles::central_diff(f, &pred.v[i], 1e-4), g.v[i]) < 1e-4);
    }
    SUBCASE("LOC wrt probability map") {
        const Tensor g = loss_loc_grad(pred, gt, kDefault);
        auto f = [&]() { return loss_loc(pred, gt, kDefault); };
        for (size_t i = 0; i < pred.size(); i += 7)
            CHECK(oracles::rel_err(oracles::central_diff(f, &pred.v[i], 1e-4), g.v[i]) < 1e-4);
    }
    SUBCASE("GEN and DISC wrt discriminator outputs") {
        std::vector<double> d_rest = {0.3, 0.6, 0.85};
        std::vector<double> d_plain = {0.7, 0.4, 0.55};
        const auto g_gen = loss_gen_grad(d_rest);
        for (size_t i = 0; i < d_rest.size(); ++i) {
            auto f = [&]() { return loss_gen(d_rest); };
            CHECK(oracles::rel_err(oracles::central_diff(f, &d_rest[i], 1e-4), g_gen[i]) < 1e-4);
        }
        std::vector<double> gp, gr;
        loss_disc_grad(d_plain, d_rest, gp, gr);
        for (size_t i = 0; i < d_rest.size(); ++i) {
            auto f = [&]() { return loss_disc(d_plain, d_rest); };
            CHECK(oracles::rel_err(oracles::central_diff(f, &d_plain[i], 1e-4), gp[i]) < 1e-4);
            CHECK(oracles::rel_err(oracles::central_diff(f, &d_rest[i], 1e-4), gr[i]) < 1e-4);
        }
    }
    SUBCASE("composite restoration loss wrt all differentiable inputs") {
        std::vector<double> d_rest = {0.4};
        auto f = [&]() {
            const double m = loss_mae(plain, restored);
            const double g = loss_gen(d_rest);
            const double l = loss_loc(pred, gt, kDefault);
            return loss_restore(m, g, l, kDefault);
        };
        double mval = 0.0, lval = 0.0;
        const Tensor g_mae = loss_mae_grad(plain, restored, &mval);
        const auto g_gen = loss_gen_grad(d_rest);
        const Tensor g_loc = loss_loc_grad(pred, gt, kDefault, &lval);
        for (size_t i = 0; i < restored.size(); i += 31) {
            const double fd = oracles::central_diff(f, &restored.v[i], 1e-4);
            CHECK(oracles::rel_err(fd, kDefault.lambda2 * g_mae.v[i]) < 1e-4);
        }
        CHECK(oracles::rel_err(oracles::central_diff(f, &d_rest[0], 1e-4),
                               kDefault.lambda3 * g_gen[0]) < 1e-4);
        for (size_t i = 0; i < pred.size(); i += 13) {
            const double fd = oracles::central_diff(f, &pred.v[i], 1e-4);
            CHECK(oracles::rel_err(fd, kDefault.lambda4 * g_loc.v[i]) < 1e-4);
        }
    }
}
