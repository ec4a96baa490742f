// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/distill_lab.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "hft/error.hpp"

namespace hft {

namespace {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

EMat to_eigen(const Matrix& m) {
    EMat out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(r, c) = m(r, c);
        }
    }
    return out;
}

Matrix from_eigen(const EMat& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out(r, c) = m(r, c);
        }
    }
    return out;
}

EVec to_eigen(std::span<const double> v) {
    return Eigen::Map<const EVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> from_eigen(const EVec& v) {
    return {v.data(), v.data() + v.size()};
}

Eigen::LLT<EMat> checked_llt(const EMat& cov, const char* what) {
    Eigen::LLT<EMat> llt(cov);
    require<NumericError>(llt.info() == Eigen::Success, what, ": covariance is not positive definite");
    return llt;
}

EMat spectral_power(const Matrix& spd, double power, bool definite) {
    require<ShapeError>(spd.rows() == spd.cols(), "expected a square matrix, got ", spd.rows(), "x", spd.cols());
    Eigen::SelfAdjointEigenSolver<EMat> es(to_eigen(spd));
    require<NumericError>(es.info() == Eigen::Success, "eigendecomposition failed");
    EVec ev = es.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        require<NumericError>(definite ? ev(i) > tol : ev(i) > -tol, "matrix is not positive ",
                              definite ? "definite" : "semidefinite",
                              " (eigenvalue ", ev(i), ")");
        ev(i) = std::pow(std::max(ev(i), 0.0), power);
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_samples(const Matrix& m, std::size_t n, const char* what) {
    require<ShapeError>(m.cols() == n, what, " has ", m.cols(), " columns, expected ", n);
}

/// Rows of `x` whitened under N(mean, cov): cov^{-1/2}(x - mean).
Matrix whiten(const Matrix& x, const EVec& mean, const EMat& cov_inv_sqrt) {
    EMat ex = to_eigen(x);
    ex.rowwise() -= mean.transpose();
    return from_eigen(EMat(ex * cov_inv_sqrt));  // symmetric, so right-multiplying rows is fine
}

double cosine_lr(const DistillConfig& c, std::size_t step) {
    const double progress = static_cast<double>(step) / static_cast<double>(c.generator_steps);
    const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return c.generator_lr * (c.lr_floor + (1.0 - c.lr_floor) * w);
}

StreamConfig fixture_config(const DistillConfig& c, Phase phase, std::size_t step, std::size_t s_index) {
    StreamConfig f;
    f.frames_per_chunk = 3;
    f.window_frames = 3;
    f.sink_chunks = 1;
    f.tokens_per_frame = 2;
    f.model_dim = 8;
    f.heads = 2;
    f.head_dim = 4;
    f.layers = 1;
    f.timesteps.assign(c.timesteps.begin(), c.timesteps.begin() + static_cast<std::ptrdiff_t>(s_index + 1));
    f.seed = c.seed * 1000003ULL + step;
    f.mode = phase == Phase::Dense ? AttentionMode::Dense : AttentionMode::Hybrid;
    return f;
}

}  // namespace

GaussianWorld GaussianWorld::random(std::size_t n, SeededRng& rng) {
    require<ContractError>(n > 0, "world dimension must be positive");
    GaussianWorld w;
    w.mean.resize(n);
    for (double& m : w.mean) {
        m = rng.normal();
    }
    const Matrix B = gaussian_matrix(rng, n, n) * (1.0 / std::sqrt(static_cast<double>(n)));
    w.cov = matmul_transposed(B, B) + Matrix::identity(n) * 0.25;
    w.validate();
    return w;
}

GaussianWorld GaussianWorld::standard(std::size_t n) {
    return {std::vector<double>(n, 0.0), Matrix::identity(n)};
}

void GaussianWorld::validate() const {
    const std::size_t n = mean.size();
    require<ContractError>(n > 0, "world mean is empty");
    require<ContractError>(cov.rows() == n && cov.cols() == n, "world cov must be ", n, "x", n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            require<ContractError>(std::abs(cov(i, j) - cov(j, i)) <= 1e-12 * (1.0 + std::abs(cov(i, j))),
                                   "world cov is not symmetric at (", i, ",", j, ")");
        }
    }
    require<ContractError>(Eigen::LLT<EMat>(to_eigen(cov)).info() == Eigen::Success,
                           "world cov is not positive definite");
}

Matrix AffineGenerator::apply(const Matrix& eps) const {
    check_samples(eps, dim(), "generator noise");
    Matrix out = matmul_transposed(eps, A);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += b[c];
        }
    }
    return out;
}

GaussianParams AffineGenerator::induced() const {
    return {b, matmul_transposed(A, A)};
}

AffineGenerator AffineGenerator::scaled_identity(std::size_t n, double scale) {
    return {Matrix::identity(n) * scale, std::vector<double>(n, 0.0)};
}

Matrix symmetric_sqrt(const Matrix& spd) {
    return from_eigen(spectral_power(spd, 0.5, false));
}

Matrix symmetric_inverse_sqrt(const Matrix& spd) {
    return from_eigen(spectral_power(spd, -0.5, true));
}

std::vector<double> gaussian_score(std::span<const double> x, std::span<const double> mean, const Matrix& cov) {
    require<ShapeError>(x.size() == mean.size() && cov.rows() == x.size() && cov.cols() == x.size(),
                        "score operands disagree: x ", x.size(), ", mean ", mean.size(), ", cov ", cov.rows(), "x",
                        cov.cols());
    const auto llt = checked_llt(to_eigen(cov), "gaussian_score");
    return from_eigen(EVec(-llt.solve(to_eigen(x) - to_eigen(mean))));
}

double gaussian_log_density(std::span<const double> x, std::span<const double> mean, const Matrix& cov) {
    require<ShapeError>(x.size() == mean.size() && cov.rows() == x.size(), "density operands disagree");
    const auto llt = checked_llt(to_eigen(cov), "gaussian_log_density");
    const EVec d = to_eigen(x) - to_eigen(mean);
    const EVec w = llt.matrixL().solve(d);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
    }
    const double n = static_cast<double>(x.size());
    return -0.5 * (w.squaredNorm() + log_det + n * std::log(2.0 * std::numbers::pi));
}

GaussianParams diffuse(const GaussianParams& clean, double t) {
    const double a = NoiseSchedule::alpha(t);
    const double s = NoiseSchedule::beta(t);
    GaussianParams out{clean.mean, clean.cov * (a * a) + Matrix::identity(clean.mean.size()) * (s * s)};
    for (double& m : out.mean) {
        m *= a;
    }
    return out;
}

double flow_matching_loss(const VelocityFn& velocity, const Matrix& x0, const Matrix& eps,
                          const std::vector<double>& t) {
    require<ShapeError>(x0.rows() == eps.rows() && x0.cols() == eps.cols() && t.size() == x0.rows(),
                        "flow matching batch shapes disagree");
    require<ContractError>(x0.rows() > 0, "flow matching batch is empty");
    Matrix xt(x0.rows(), x0.cols());
    for (std::size_t r = 0; r < x0.rows(); ++r) {
        require<ContractError>(t[r] >= 0.0 && t[r] <= 1.0, "t must lie in [0, 1], got ", t[r]);
        for (std::size_t c = 0; c < x0.cols(); ++c) {
            xt(r, c) = NoiseSchedule::alpha(t[r]) * x0(r, c) + NoiseSchedule::beta(t[r]) * eps(r, c);
        }
    }
    const Matrix v = velocity(xt, t);
    require<ShapeError>(v.rows() == x0.rows() && v.cols() == x0.cols(), "velocity output has wrong shape");
    double acc = 0.0;
    for (std::size_t r = 0; r < x0.rows(); ++r) {
        for (std::size_t c = 0; c < x0.cols(); ++c) {
            const double d = v(r, c) - (eps(r, c) - x0(r, c));
            acc += d * d;
        }
    }
    return acc / static_cast<double>(x0.rows());
}

double DmdEstimate::norm() const {
    double acc = 0.0;
    for (double v : grad_A.data()) {
        acc += v * v;
    }
    for (double v : grad_b) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

DmdEstimate dmd_gradient_from(const AffineGenerator& gen, const GaussianWorld& world, const GaussianParams& fake,
                              const Matrix& z, const std::vector<double>& taus, const Matrix& eps_prime) {
    const std::size_t n = gen.dim();
    require<ShapeError>(world.dim() == n && fake.mean.size() == n, "generator, world and critic dimensions disagree");
    check_samples(z, n, "z");
    check_samples(eps_prime, n, "eps_prime");
    require<ShapeError>(eps_prime.rows() == z.rows() && taus.size() == z.rows(), "batch sizes disagree");
    require<ContractError>(z.rows() > 0, "DMD batch is empty");

    const EMat A = to_eigen(gen.A);
    const EVec b = to_eigen(gen.b);
    const EVec mu_r = to_eigen(world.mean);
    const EVec mu_f = to_eigen(fake.mean);
    const EMat cov_r = to_eigen(world.cov);
    const EMat cov_f = to_eigen(fake.cov);
    const EMat I = EMat::Identity(n, n);

    EMat grad_A = EMat::Zero(n, n);
    EVec grad_b = EVec::Zero(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double t = taus[i];
        require<ContractError>(t > 0.0 && t <= 1.0, "diffusion time must lie in (0, 1], got ", t);
        const double a = NoiseSchedule::alpha(t);
        const double s = NoiseSchedule::beta(t);
        const EVec zi = to_eigen(z.row(i));
        const EVec x0 = A * zi + b;
        const EVec xt = a * x0 + s * to_eigen(eps_prime.row(i));
        const auto llt_r = checked_llt(a * a * cov_r + s * s * I, "real score");
        const auto llt_f = checked_llt(a * a * cov_f + s * s * I, "fake score");
        const EVec s_real = -llt_r.solve(xt - a * mu_r);
        const EVec s_fake = -llt_f.solve(xt - a * mu_f);
        const EVec g = a * (s_fake - s_real);
        grad_b += g;
        grad_A += g * zi.transpose();
        loss += 0.5 * g.squaredNorm();
    }
    const double inv = 1.0 / static_cast<double>(z.rows());
    return {from_eigen(EMat(grad_A * inv)), from_eigen(EVec(grad_b * inv)), loss * inv};
}

DmdEstimate dmd_gradient(const AffineGenerator& gen, const GaussianWorld& world, double t, SeededRng& rng,
                         std::size_t batch, const GaussianParams* fake) {
    require<ContractError>(t > 0.0 && t <= 1.0, "t must lie in (0, 1], got ", t);
    require<ContractError>(batch > 0, "batch must be positive");
    const Matrix z = gaussian_matrix(rng, batch, gen.dim());
    const Matrix eps_prime = gaussian_matrix(rng, batch, gen.dim());
    const GaussianParams exact = gen.induced();
    return dmd_gradient_from(gen, world, fake ? *fake : exact, z, std::vector<double>(batch, t), eps_prime);
}

GaussianParams fit_gaussian(const AffineGenerator& gen, SeededRng& rng, std::size_t batch) {
    require<ContractError>(batch >= 2, "fitting needs at least two samples");
    const EMat x = to_eigen(gen.apply(gaussian_matrix(rng, batch, gen.dim())));
    const EVec mean = x.colwise().mean();
    const EMat centered = x.rowwise() - mean.transpose();
    const EMat cov = centered.transpose() * centered / static_cast<double>(batch - 1);
    return {from_eigen(mean), from_eigen(cov)};
}

Matrix teacher_rollout(const GaussianWorld& world, const Matrix& eps) {
    const AffineGenerator teacher{symmetric_sqrt(world.cov), world.mean};
    return teacher.apply(eps);
}

double reg_loss(const Matrix& student, const Matrix& teacher) {
    require<ShapeError>(student.rows() == teacher.rows() && student.cols() == teacher.cols(),
                        "reg_loss shapes disagree: ", student.rows(), "x", student.cols(), " vs ", teacher.rows(), "x",
                        teacher.cols());
    require<ContractError>(!student.empty(), "reg_loss batch is empty");
    double acc = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double d = student.data()[i] - teacher.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(student.size());
}

const char* to_string(Phase phase) {
    return phase == Phase::Dense ? "dense" : "hybrid";
}

void DistillConfig::validate() const {
    require<UsageError>(std::isfinite(lambda) && lambda >= 0.0, "lambda must be >= 0, got ", lambda);
    require<UsageError>(!timesteps.empty(), "timesteps must not be empty");
    require<UsageError>(timesteps.front() == 1.0, "timesteps must start at 1");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        require<UsageError>(timesteps[i] > 0.0 && timesteps[i] <= 1.0, "timesteps must lie in (0, 1]");
        require<UsageError>(i == 0 || timesteps[i] < timesteps[i - 1], "timesteps must be strictly decreasing");
    }
    require<UsageError>(generator_steps > 0, "generator_steps must be positive");
    require<UsageError>(generator_update_every > 0, "generator_update_every must be positive");
    require<UsageError>(batch >= 2, "batch must be at least 2, got ", batch);
    require<UsageError>(generator_lr > 0.0, "generator_lr must be positive");
    require<UsageError>(lr_floor >= 0.0 && lr_floor <= 1.0, "lr_floor must lie in [0, 1]");
    require<UsageError>(critic_lr > 0.0 && critic_lr <= 1.0, "critic_lr must lie in (0, 1]");
    require<UsageError>(tau_min > 0.0 && tau_min <= tau_max && tau_max <= 1.0,
                        "tau range must satisfy 0 < tau_min <= tau_max <= 1");
}

double mean_error(const AffineGenerator& gen, const GaussianWorld& world) {
    return (to_eigen(gen.b) - to_eigen(world.mean)).norm();
}

double cov_error(const AffineGenerator& gen, const GaussianWorld& world) {
    const EMat A = to_eigen(gen.A);
    return (A * A.transpose() - to_eigen(world.cov)).norm();
}

TrainResult train(const DistillConfig& config, const GaussianWorld& world, AffineGenerator generator,
                  const PhaseSchedule& schedule, SeededRng& rng, const TrainHooks& hooks) {
    config.validate();
    world.validate();
    const std::size_t n = world.dim();
    require<ShapeError>(generator.dim() == n && generator.A.rows() == n && generator.A.cols() == n,
                        "generator does not match world dimension ", n);
    const std::size_t B = config.batch;
    const std::size_t T = config.timesteps.size();

    TrainResult result;
    result.trace.reserve(config.generator_steps);
    GaussianParams critic = generator.induced();
    bool critic_seeded = false;

    for (std::size_t step = 0; step < config.generator_steps; ++step) {
        for (std::size_t c = 0; c < config.generator_update_every; ++c) {
            if (config.critic == CriticKind::Exact) {
                critic = generator.induced();
                continue;
            }
            const GaussianParams fit = fit_gaussian(generator, rng, B);
            const double w = critic_seeded ? config.critic_lr : 1.0;
            critic_seeded = true;
            for (std::size_t i = 0; i < n; ++i) {
                critic.mean[i] += w * (fit.mean[i] - critic.mean[i]);
            }
            critic.cov = critic.cov * (1.0 - w) + fit.cov * w;
        }

        const std::size_t s_index = rng.uniform_index(T);
        const Matrix eps = gaussian_matrix(rng, B, n);

        // No-grad rollout down to t_s. Each step's input is whitened under the
        // law it was drawn from, so z stays standard normal and is treated as a constant.
        Matrix z = eps;
        Matrix x0 = generator.apply(z);
        for (std::size_t j = 1; j <= s_index; ++j) {
            const double t = config.timesteps[j];
            const double a = NoiseSchedule::alpha(t);
            const double s = NoiseSchedule::beta(t);
            const Matrix renoise = gaussian_matrix(rng, B, n);
            Matrix x = x0 * a + renoise * s;
            const GaussianParams law = diffuse(generator.induced(), t);
            z = whiten(x, to_eigen(law.mean), spectral_power(law.cov, -0.5, true));
            x0 = generator.apply(z);
        }

        std::vector<double> taus(B);
        for (double& tau : taus) {
            tau = config.tau_min + (config.tau_max - config.tau_min) * rng.uniform();
        }
        const Matrix eps_prime = gaussian_matrix(rng, B, n);
        DmdEstimate est = dmd_gradient_from(generator, world, critic, z, taus, eps_prime);

        TraceRow row;
        row.step = step;
        row.phase = schedule.at(step);
        row.s_index = s_index;
        row.t_s = config.timesteps[s_index];
        row.l_dmd = est.loss;

        const double base_lambda = hooks.lambda_at ? hooks.lambda_at(step) : config.lambda;
        if (s_index == 0) {
            const Matrix teacher = teacher_rollout(world, eps);
            row.l_reg = reg_loss(x0, teacher);
            row.lambda_applied = base_lambda;
            if (base_lambda != 0.0) {
                const double k = base_lambda * 2.0 / static_cast<double>(B * n);
                for (std::size_t r = 0; r < B; ++r) {
                    for (std::size_t i = 0; i < n; ++i) {
                        const double resid = x0(r, i) - teacher(r, i);
                        est.grad_b[i] += k * resid;
                        for (std::size_t j = 0; j < n; ++j) {
                            est.grad_A(i, j) += k * resid * eps(r, j);
                        }
                    }
                }
            }
        }
        row.l_distill = row.l_dmd + row.lambda_applied * row.l_reg;
        row.grad_norm = est.norm();
        row.lr = cosine_lr(config, step);

        generator.A -= est.grad_A * row.lr;
        for (std::size_t i = 0; i < n; ++i) {
            generator.b[i] -= row.lr * est.grad_b[i];
        }
        require<NumericError>(all_finite(generator.A) && std::isfinite(mean_error(generator, world)),
                              "generator diverged at step ", step);
        row.mean_error = mean_error(generator, world);
        row.cov_error = cov_error(generator, world);

        if (config.fixture_chunks > 0) {
            const StreamConfig f = fixture_config(config, row.phase, step, s_index);
            const StreamResult sr = generate_stream(f, config.fixture_chunks);
            for (const ChunkRecord& rec : sr.chunks) {
                row.fixture_score_evaluations += rec.score_evaluations;
            }
            for (double v : sr.chunks.back().latent.data()) {
                row.fixture_checksum += v;
            }
        }
        result.trace.push_back(row);
    }
    result.generator = std::move(generator);
    result.critic = std::move(critic);
    return result;
}

std::string trace_csv_header() {
    return "step,phase,L_DMD,L_Reg,grad_norm,mean_error,cov_error,s_index,t_s,lambda,reg_contribution,L_distill,lr,"
           "fixture_score_evals,fixture_checksum";
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os << trace_csv_header() << '\n';
    char buf[512];
    for (const TraceRow& r : trace) {
        std::snprintf(buf, sizeof buf,
                      "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%llu,%.17g\n", r.step,
                      to_string(r.phase), r.l_dmd, r.l_reg, r.grad_norm, r.mean_error, r.cov_error, r.s_index, r.t_s,
                      r.lambda_applied, r.lambda_applied * r.l_reg, r.l_distill, r.lr,
                      static_cast<unsigned long long>(r.fixture_score_evaluations), r.fixture_checksum);
        os << buf;
    }
    return os.str();
}

}  // namespace hft
