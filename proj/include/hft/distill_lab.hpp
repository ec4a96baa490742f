// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hft/hybrid_engine.hpp"
#include "hft/numerics.hpp"

namespace hft {

/// Mean and covariance of a Gaussian.
struct GaussianParams {
    std::vector<double> mean;
    Matrix cov;

    bool operator==(const GaussianParams&) const = default;
};

/// Stand-in for the data distribution: N(mean, cov) in n dimensions.
struct GaussianWorld {
    std::vector<double> mean;
    Matrix cov;

    std::size_t dim() const { return mean.size(); }
    /// Mean ~ N(0, I); covariance B B^T + 0.25 I with B ~ N(0, 1/n). NumericError if not PD.
    static GaussianWorld random(std::size_t n, SeededRng& rng);
    static GaussianWorld standard(std::size_t n);
    /// ContractError unless cov is n x n, symmetric and positive definite.
    void validate() const;
};

/// x0 = A eps + b; the induced distribution is N(b, A A^T).
struct AffineGenerator {
    Matrix A;
    std::vector<double> b;

    std::size_t dim() const { return b.size(); }
    /// Rows of `eps` are noise vectors; returns eps A^T + b row-wise.
    Matrix apply(const Matrix& eps) const;
    GaussianParams induced() const;
    static AffineGenerator scaled_identity(std::size_t n, double scale);

    bool operator==(const AffineGenerator&) const = default;
};

/// Symmetric positive-definite square root (NumericError if not PSD).
Matrix symmetric_sqrt(const Matrix& spd);
/// Symmetric inverse square root (NumericError if not PD).
Matrix symmetric_inverse_sqrt(const Matrix& spd);

/// Score of N(mean, cov) at x: -cov^{-1}(x - mean). NumericError on singular cov.
std::vector<double> gaussian_score(std::span<const double> x, std::span<const double> mean, const Matrix& cov);

/// log N(x; mean, cov).
double gaussian_log_density(std::span<const double> x, std::span<const double> mean, const Matrix& cov);

/// N(alpha_t mean, alpha_t^2 cov + beta_t^2 I): the law of x_t under the rectified-flow schedule.
GaussianParams diffuse(const GaussianParams& clean, double t);

using VelocityFn = std::function<Matrix(const Matrix& x_t, const std::vector<double>& t)>;

/**
 * Batch mean of ||v(x_t, t) - (eps - x0)||^2 with x_t = (1 - t) x0 + t eps.
 * Rows of x0 and eps are samples; t holds one time per row.
 */
double flow_matching_loss(const VelocityFn& velocity, const Matrix& x0, const Matrix& eps,
                          const std::vector<double>& t);

struct DmdEstimate {
    Matrix grad_A;
    std::vector<double> grad_b;
    /// 0.5 * batch mean of ||alpha_t (s_fake - s_real)||^2; its gradient matches grad_A / grad_b.
    double loss = 0.0;

    double norm() const;
};

/**
 * Monte Carlo DMD gradient for an affine generator from given draws.
 *
 * z rows are the generator's noise inputs, x0 = A z + b; each row is
 * diffused to its own time taus[i] with independent noise eps_prime. Scores
 * are exact Gaussian scores of the diffused real law and of the diffused
 * `fake` law. grad_b = mean(alpha g), grad_A = mean(alpha g z^T), with
 * g = s_fake - s_real.
 */
DmdEstimate dmd_gradient_from(const AffineGenerator& gen, const GaussianWorld& world, const GaussianParams& fake,
                              const Matrix& z, const std::vector<double>& taus, const Matrix& eps_prime);

/**
 * Draws `batch` samples at a single time t. `fake` defaults to the
 * generator's exact induced law, which makes the estimate vanish identically
 * once the laws match; pass a fitted law to see sampling noise.
 */
DmdEstimate dmd_gradient(const AffineGenerator& gen, const GaussianWorld& world, double t, SeededRng& rng,
                         std::size_t batch, const GaussianParams* fake = nullptr);

/// Sample mean and (n - 1)-normalized covariance of `batch` fresh generator outputs.
GaussianParams fit_gaussian(const AffineGenerator& gen, SeededRng& rng, std::size_t batch);

/// Frozen teacher's full rollout: eps -> mean + cov^{1/2} eps, row-wise.
Matrix teacher_rollout(const GaussianWorld& world, const Matrix& eps);

/// Elementwise mean squared difference. ShapeError on mismatch.
double reg_loss(const Matrix& student, const Matrix& teacher);

enum class Phase { Dense, Hybrid };
const char* to_string(Phase phase);

struct PhaseSchedule {
    std::size_t switch_step = 1000;
    Phase at(std::size_t step) const { return step < switch_step ? Phase::Dense : Phase::Hybrid; }
};

enum class CriticKind {
    /// Running Gaussian fit of fresh generator samples, one refresh per critic step.
    Fitted,
    /// The generator's exact induced law; no sampling noise in s_fake.
    Exact,
};

struct DistillConfig {
    double lambda = 0.05;
    std::vector<double> timesteps{1.0, 0.75, 0.5, 0.25};
    std::size_t phase_switch_step = 1000;
    std::size_t generator_steps = 2000;
    std::size_t generator_update_every = 5;
    std::size_t batch = 256;
    /// Peak generator step size; decays to lr_floor * generator_lr on a cosine.
    double generator_lr = 0.3;
    double lr_floor = 0.0;
    /// Fraction of the gap the critic closes toward each fresh fit.
    double critic_lr = 0.5;
    CriticKind critic = CriticKind::Fitted;
    /// DMD diffusion times are drawn from U[tau_min, tau_max].
    double tau_min = 0.02;
    double tau_max = 0.98;
    /// Streaming fixture exercised forward-only at every generator step (0 disables it).
    std::size_t fixture_chunks = 4;
    std::uint64_t seed = 0;

    /// UsageError naming the first invalid field.
    void validate() const;
    bool operator==(const DistillConfig&) const = default;
};

struct TraceRow {
    std::size_t step = 0;
    Phase phase = Phase::Dense;
    /// Index into timesteps of the step that carried the gradient; 0 is the first (t = 1) step.
    std::size_t s_index = 0;
    double t_s = 1.0;
    double l_dmd = 0.0;
    double l_reg = 0.0;
    /// lambda applied at this step (zero unless s_index == 0).
    double lambda_applied = 0.0;
    double l_distill = 0.0;
    double grad_norm = 0.0;
    double mean_error = 0.0;
    double cov_error = 0.0;
    double lr = 0.0;
    std::uint64_t fixture_score_evaluations = 0;
    double fixture_checksum = 0.0;

    bool operator==(const TraceRow&) const = default;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    AffineGenerator generator;
    GaussianParams critic;
};

struct TrainHooks {
    /// Overrides the configured lambda per step before gating (for gating checks).
    std::function<double(std::size_t step)> lambda_at;
};

/**
 * Few-step distillation of an affine student against a Gaussian world.
 *
 * Every generator step samples the gradient step s uniformly, rolls the
 * student from t = 1 down to t_s with renoising, and takes the DMD gradient
 * on the t_s output. When s is the first step the teacher-rollout
 * regularizer is added with weight lambda. The critic is refreshed
 * generator_update_every times per generator update. A small streaming
 * fixture runs forward-only in Dense or Hybrid mode per the phase schedule.
 */
TrainResult train(const DistillConfig& config, const GaussianWorld& world, AffineGenerator generator,
                  const PhaseSchedule& schedule, SeededRng& rng, const TrainHooks& hooks = {});

std::string trace_csv_header();
std::string trace_csv(const std::vector<TraceRow>& trace);

/// Distance of the generator's induced law to the world: ||b - mean|| and ||A A^T - cov||_F.
double mean_error(const AffineGenerator& gen, const GaussianWorld& world);
double cov_error(const AffineGenerator& gen, const GaussianWorld& world);

}  // namespace hft
