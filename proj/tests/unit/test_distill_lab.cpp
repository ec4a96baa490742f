// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hft/distill_lab.hpp"
#include "hft/error.hpp"

using namespace hft;

namespace {

GaussianWorld random_world(std::size_t n, std::uint64_t seed) {
    SeededRng rng(seed);
    return GaussianWorld::random(n, rng);
}

// Rows whose sample mean is exactly zero and sample covariance (1/B) exactly I.
Matrix moment_matched(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    SeededRng rng(seed);
    Matrix m = gaussian_matrix(rng, rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            mean += m(r, c);
        }
        mean /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            m(r, c) -= mean;
        }
    }
    Matrix cov = matmul(transpose(m), m) * (1.0 / static_cast<double>(rows));
    return matmul(m, symmetric_inverse_sqrt(cov));
}

double kl_1d_quadrature(double mf, double vf, double mr, double vr) {
    const double lo = -30.0;
    const double hi = 30.0;
    const int steps = 60000;
    const double h = (hi - lo) / steps;
    double acc = 0.0;
    for (int i = 0; i <= steps; ++i) {
        const double x = lo + h * i;
        const double pf = std::exp(-0.5 * (x - mf) * (x - mf) / vf) / std::sqrt(2.0 * std::numbers::pi * vf);
        const double pr = std::exp(-0.5 * (x - mr) * (x - mr) / vr) / std::sqrt(2.0 * std::numbers::pi * vr);
        const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
        if (pf > 0.0) {
            acc += w * pf * std::log(pf / pr);
        }
    }
    return acc * h;
}

DistillConfig quick_config(std::uint64_t seed) {
    DistillConfig c;
    c.generator_steps = 200;
    c.phase_switch_step = 100;
    c.batch = 64;
    c.fixture_chunks = 0;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("score matches finite differences of the log density") {
    SeededRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial % 4;
        const GaussianWorld w = GaussianWorld::random(n, rng);
        const Matrix x = gaussian_sample(rng, n);
        const auto s = gaussian_score(x.row(0), w.mean, w.cov);
        for (std::size_t i = 0; i < n; ++i) {
            Matrix xp = x;
            Matrix xm = x;
            const double h = 1e-5;
            xp(0, i) += h;
            xm(0, i) -= h;
            const double fd =
                (gaussian_log_density(xp.row(0), w.mean, w.cov) - gaussian_log_density(xm.row(0), w.mean, w.cov)) /
                (2.0 * h);
            CHECK(s[i] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("score rejects singular covariance") {
    const Matrix singular = Matrix::from_rows({{1.0, 1.0}, {1.0, 1.0}});
    const std::vector<double> x{0.0, 1.0};
    CHECK_THROWS_AS(gaussian_score(x, x, singular), NumericError);
    CHECK_THROWS_AS(symmetric_inverse_sqrt(singular), NumericError);
}

TEST_CASE("flow matching loss closed forms") {
    const std::size_t n = 3;
    const std::size_t batch = 4096;
    const GaussianWorld w = random_world(n, 11);
    const Matrix joint = moment_matched(batch, 2 * n, 12);
    const Matrix x0 = teacher_rollout(w, joint.col_block(0, n));
    const Matrix eps = joint.col_block(n, n);

    SUBCASE("the true conditional velocity gives zero") {
        const std::vector<double> t(batch, 0.3);
        const Matrix target = eps - x0;
        const VelocityFn exact = [&](const Matrix&, const std::vector<double>&) { return target; };
        CHECK(flow_matching_loss(exact, x0, eps, t) == doctest::Approx(0.0));
    }

    SUBCASE("zero velocity gives n + |mu|^2 + tr(cov)") {
        std::vector<double> t(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            t[i] = static_cast<double>(i) / static_cast<double>(batch);
        }
        const VelocityFn zero = [&](const Matrix& x, const std::vector<double>&) { return Matrix(x.rows(), x.cols()); };
        double expected = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            expected += w.mean[i] * w.mean[i] + w.cov(i, i);
        }
        CHECK(flow_matching_loss(zero, x0, eps, t) == doctest::Approx(expected).epsilon(1e-10));
    }

    SUBCASE("optimal linear velocity is stationary") {
        const double tt = 0.4;
        const double a = 1.0 - tt;
        const double b = tt;
        // W* = Cov(y, x) Cov(x)^{-1} with y = eps - x0, x = a x0 + b eps.
        const Matrix cxx = w.cov * (a * a) + Matrix::identity(n) * (b * b);
        const Matrix cyx = Matrix::identity(n) * b - w.cov * a;
        const Matrix inv_sqrt = symmetric_inverse_sqrt(cxx);
        const Matrix W = matmul(cyx, matmul(inv_sqrt, inv_sqrt));
        std::vector<double> c(n);
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = -w.mean[i];
            for (std::size_t j = 0; j < n; ++j) {
                c[i] -= W(i, j) * a * w.mean[j];
            }
        }
        const std::vector<double> t(batch, tt);
        auto loss_at = [&](const Matrix& Wp, const std::vector<double>& cp) {
            const VelocityFn v = [&](const Matrix& x, const std::vector<double>&) {
                return AffineGenerator{Wp, cp}.apply(x);
            };
            return flow_matching_loss(v, x0, eps, t);
        };
        const double h = 1e-5;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                Matrix wp = W;
                Matrix wm = W;
                wp(i, j) += h;
                wm(i, j) -= h;
                CHECK(std::abs(loss_at(wp, c) - loss_at(wm, c)) / (2.0 * h) < 1e-3);
            }
            auto cp = c;
            auto cm = c;
            cp[i] += h;
            cm[i] -= h;
            CHECK(std::abs(loss_at(W, cp) - loss_at(W, cm)) / (2.0 * h) < 1e-3);
        }
    }

    SUBCASE("t outside [0, 1] is rejected") {
        const VelocityFn zero = [&](const Matrix& x, const std::vector<double>&) { return Matrix(x.rows(), x.cols()); };
        std::vector<double> t(batch, 0.5);
        t[7] = 1.5;
        CHECK_THROWS_AS(flow_matching_loss(zero, x0, eps, t), ContractError);
    }
}

TEST_CASE("DMD gradient vanishes at matched laws with the exact critic") {
    const GaussianWorld w = random_world(2, 21);
    const AffineGenerator g{symmetric_sqrt(w.cov), w.mean};
    SeededRng rng(5);
    for (double t : {0.1, 0.5, 0.9}) {
        CHECK(dmd_gradient(g, w, t, rng, 2000).norm() < 1e-12);
    }
}

TEST_CASE("fitted-critic DMD noise shrinks like 1/sqrt(batch)") {
    const GaussianWorld w = random_world(2, 22);
    const AffineGenerator g{symmetric_sqrt(w.cov), w.mean};
    auto rms = [&](std::size_t batch) {
        double acc = 0.0;
        const int reps = 24;
        for (int r = 0; r < reps; ++r) {
            SeededRng rng(1000 * batch + r);
            const GaussianParams fake = fit_gaussian(g, rng, batch);
            acc += std::pow(dmd_gradient(g, w, 0.5, rng, batch, &fake).norm(), 2);
        }
        return std::sqrt(acc / reps);
    };
    const double big = rms(8000);
    const double small = rms(2000);
    CHECK(small / big == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("1-D DMD gradient matches a quadrature KL derivative") {
    const GaussianWorld w = GaussianWorld::standard(1);
    for (double b0 : {-1.5, 0.7, 2.0}) {
        for (double t : {0.3, 0.6}) {
            const AffineGenerator g{Matrix::from_rows({{0.8}}), {b0}};
            SeededRng rng(9);
            const DmdEstimate e = dmd_gradient(g, w, t, rng, 100000);
            const double a = 1.0 - t;
            const double vf = a * a * 0.64 + t * t;
            const double vr = a * a + t * t;
            const double h = 1e-4;
            const double dkl_db =
                (kl_1d_quadrature(a * (b0 + h), vf, 0.0, vr) - kl_1d_quadrature(a * (b0 - h), vf, 0.0, vr)) / (2 * h);
            CHECK(e.grad_b[0] * dkl_db > 0.0);
            CHECK(e.grad_b[0] == doctest::Approx(dkl_db).epsilon(0.1));
            const auto vfa = [&](double s) { return a * a * s * s + t * t; };
            const double dkl_da =
                (kl_1d_quadrature(a * b0, vfa(0.8 + h), 0.0, vr) - kl_1d_quadrature(a * b0, vfa(0.8 - h), 0.0, vr)) /
                (2 * h);
            CHECK(e.grad_A(0, 0) * dkl_da > 0.0);
            CHECK(e.grad_A(0, 0) == doctest::Approx(dkl_da).epsilon(0.1));
        }
    }
}

TEST_CASE("reg loss is symmetric and prices a constant offset at c^2") {
    SeededRng rng(4);
    const Matrix a = gaussian_matrix(rng, 50, 3);
    const Matrix b = gaussian_matrix(rng, 50, 3);
    CHECK(reg_loss(a, b) == reg_loss(b, a));
    CHECK(reg_loss(a, a) == 0.0);
    Matrix shifted = a;
    for (double& v : shifted.data()) {
        v += 0.3;
    }
    CHECK(reg_loss(shifted, a) == doctest::Approx(0.09).epsilon(1e-12));
    CHECK_THROWS_AS(reg_loss(a, Matrix(49, 3)), ShapeError);
}

TEST_CASE("teacher rollout transports standard noise onto the world") {
    const GaussianWorld w = random_world(3, 31);
    const std::size_t batch = 2048;
    const Matrix x = teacher_rollout(w, moment_matched(batch, 3, 32));
    for (std::size_t i = 0; i < 3; ++i) {
        double mean = 0.0;
        for (std::size_t r = 0; r < batch; ++r) {
            mean += x(r, i);
        }
        mean /= batch;
        CHECK(mean == doctest::Approx(w.mean[i]).epsilon(1e-10));
        for (std::size_t j = 0; j < 3; ++j) {
            double cov = 0.0;
            for (std::size_t r = 0; r < batch; ++r) {
                cov += (x(r, i) - w.mean[i]) * (x(r, j) - w.mean[j]);
            }
            CHECK(cov / batch == doctest::Approx(w.cov(i, j)).epsilon(1e-9));
        }
    }
}

TEST_CASE("lambda only acts on steps whose gradient step is the first") {
    const GaussianWorld w = random_world(2, 41);
    const DistillConfig c = quick_config(1);
    SeededRng r1(c.seed);
    const TrainResult base = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {c.phase_switch_step}, r1);

    std::vector<bool> first(c.generator_steps);
    std::size_t first_count = 0;
    for (const TraceRow& row : base.trace) {
        first[row.step] = row.s_index == 0;
        first_count += first[row.step];
        if (row.s_index == 0) {
            CHECK(row.lambda_applied == c.lambda);
            CHECK(row.l_distill == row.l_dmd + 0.05 * row.l_reg);
            CHECK(row.l_reg > 0.0);
        } else {
            CHECK(row.lambda_applied == 0.0);
            CHECK(row.l_distill == row.l_dmd);
        }
    }
    REQUIRE(first_count > 0);
    REQUIRE(first_count < c.generator_steps);

    SUBCASE("toggling lambda elsewhere changes nothing") {
        TrainHooks hooks;
        hooks.lambda_at = [&](std::size_t step) { return first[step] ? c.lambda : (step % 2 ? 0.0 : 5.0); };
        SeededRng r2(c.seed);
        const TrainResult toggled =
            train(c, w, AffineGenerator::scaled_identity(2, 0.5), {c.phase_switch_step}, r2, hooks);
        CHECK(toggled.generator == base.generator);
        CHECK(toggled.trace == base.trace);
    }

    SUBCASE("changing lambda on a first-step update does change the run") {
        TrainHooks hooks;
        hooks.lambda_at = [&](std::size_t step) { return first[step] ? 1.0 : c.lambda; };
        SeededRng r2(c.seed);
        const TrainResult changed =
            train(c, w, AffineGenerator::scaled_identity(2, 0.5), {c.phase_switch_step}, r2, hooks);
        CHECK_FALSE(changed.generator == base.generator);
    }

    SUBCASE("lambda zero reduces every row to the DMD loss") {
        DistillConfig z = c;
        z.lambda = 0.0;
        SeededRng r2(c.seed);
        const TrainResult pure = train(z, w, AffineGenerator::scaled_identity(2, 0.5), {z.phase_switch_step}, r2);
        for (const TraceRow& row : pure.trace) {
            CHECK(row.l_distill == row.l_dmd);
        }
        CHECK(trace_csv(pure.trace).find(",0.05,") == std::string::npos);
    }
}

TEST_CASE("phase schedule drives the streaming fixture") {
    const GaussianWorld w = random_world(2, 51);
    DistillConfig c = quick_config(2);
    c.generator_steps = 12;
    c.phase_switch_step = 6;
    c.fixture_chunks = 4;
    SeededRng rng(c.seed);
    const TrainResult r = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {c.phase_switch_step}, rng);
    for (const TraceRow& row : r.trace) {
        const Phase expected = row.step < 6 ? Phase::Dense : Phase::Hybrid;
        CHECK(row.phase == expected);
        StreamConfig f;
        f.frames_per_chunk = 3;
        f.window_frames = 3;
        f.tokens_per_frame = 2;
        f.model_dim = 8;
        f.heads = 2;
        f.head_dim = 4;
        f.layers = 1;
        f.timesteps.assign(c.timesteps.begin(), c.timesteps.begin() + static_cast<std::ptrdiff_t>(row.s_index + 1));
        f.mode = expected == Phase::Dense ? AttentionMode::Dense : AttentionMode::Hybrid;
        std::uint64_t evals = 0;
        for (std::int64_t i = 0; i < 4; ++i) {
            evals += expected_score_evaluations(f, i);
        }
        CHECK(row.fixture_score_evaluations == evals);
    }

    SUBCASE("switch at zero runs hybrid throughout") {
        PhaseSchedule all_hybrid{0};
        for (std::size_t s = 0; s < 10; ++s) {
            CHECK(all_hybrid.at(s) == Phase::Hybrid);
        }
    }
}

TEST_CASE("training converges on a 2-D world") {
    const GaussianWorld w = random_world(2, 100);
    DistillConfig c;
    c.fixture_chunks = 0;
    SeededRng rng(c.seed);
    const TrainResult r = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {c.phase_switch_step}, rng);
    CHECK(r.trace.size() == 2000);
    CHECK(mean_error(r.generator, w) <= 0.05);
    CHECK(cov_error(r.generator, w) <= 0.05);
    CHECK(r.trace.front().mean_error > 0.05);
}

TEST_CASE("training is deterministic for a seed") {
    const GaussianWorld w = random_world(2, 61);
    DistillConfig c = quick_config(3);
    c.generator_steps = 40;
    c.fixture_chunks = 4;
    SeededRng a(7);
    SeededRng b(7);
    SeededRng other(8);
    const auto ra = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {20}, a);
    const auto rb = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {20}, b);
    const auto rc = train(c, w, AffineGenerator::scaled_identity(2, 0.5), {20}, other);
    CHECK(trace_csv(ra.trace) == trace_csv(rb.trace));
    CHECK(ra.generator == rb.generator);
    CHECK_FALSE(trace_csv(ra.trace) == trace_csv(rc.trace));
}

TEST_CASE("config validation names the bad field") {
    DistillConfig c;
    c.lambda = -1.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lambda"), UsageError);
    c = {};
    c.timesteps = {1.0, 0.5, 0.75};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.batch = 1;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch"), UsageError);
    const GaussianWorld w = GaussianWorld::standard(2);
    SeededRng rng(0);
    CHECK_THROWS_AS(train(DistillConfig{}, w, AffineGenerator::scaled_identity(3, 1.0), {}, rng), ShapeError);
}
