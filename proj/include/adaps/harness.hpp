#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaps/config.hpp"
#include "adaps/core.hpp"
#include "adaps/io.hpp"
#include "adaps/metrics.hpp"
#include "adaps/nonlinear.hpp"
#include "adaps/oracle.hpp"
#include "adaps/parallel.hpp"
#include "adaps/sampler.hpp"

namespace adaps {

// sub-stream tags for seed derivation
inline constexpr std::uint64_t kTruthStream = 101;
inline constexpr std::uint64_t kMeasurementStream = 202;

inline int log_level() {
    static int level = [] {
        const char* env = std::getenv("ADAPS_LOG");
        if (!env) return 1;
        std::string v(env);
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[adaps] " << msg << "\n";
}
inline void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[adaps:debug] " << msg << "\n";
}

/// Fully constructed experiment: prior, operator, schedule, ground truth,
/// measurement, and (when the task has a 1D/2D analytic prior) the
/// quadrature posterior used for W1 reporting.
struct TaskSetup {
    ScoreModel prior;
    Schedule schedule;
    Vec truth;
    Measurement meas;
    LinearOperator op;        // valid() iff the task is linear
    NonlinearOperator nlop;   // valid() iff the task is nonlinear
    double sigma_eff = 0.0;
    Eigen::Index n = 0;
    std::optional<QuadraturePosterior> oracle_post;

    bool nonlinear() const { return nlop.valid(); }
};

namespace detail {

inline Vec sample_from_prior(const ScoreModel& prior, Rng& rng) {
    if (auto g = std::dynamic_pointer_cast<const GaussianPrior>(prior.impl())) {
        Vec z = rng.normal_vec(g->dim());
        return g->mean().array() + g->variances().array().sqrt() * z.array();
    }
    if (auto m = std::dynamic_pointer_cast<const GmmPrior>(prior.impl())) {
        double u = rng.uniform();
        Eigen::Index k = 0;
        double acc = 0.0;
        for (; k < m->components(); ++k) {
            acc += m->weights()[k];
            if (u <= acc) break;
        }
        k = std::min(k, m->components() - 1);
        Vec z = rng.normal_vec(m->dim());
        return m->means().row(k).transpose() + std::sqrt(m->variances()[k]) * z;
    }
    throw ConfigError("cannot sample ground truth from a blackbox prior");
}

inline ScoreModel default_prior(const ExperimentConfig& c, Eigen::Index n) {
    std::string kind = c.prior_kind;
    if (kind.empty())
        kind = (c.task == TaskKind::gmm_1d || c.task == TaskKind::gmm_2d) ? "gmm" : "gaussian";
    if (kind == "gaussian") {
        Vec mean = c.prior_mean.size() ? c.prior_mean : Vec::Zero(n);
        Vec var = c.prior_var.size() ? c.prior_var : Vec::Ones(n);
        if (mean.size() == 1 && n > 1) mean = Vec::Constant(n, mean[0]);
        if (var.size() == 1 && n > 1) var = Vec::Constant(n, var[0]);
        return gaussian_prior(mean, var);
    }
    if (kind == "gmm") {
        Vec w = c.gmm_weights.size() ? c.gmm_weights : (Vec(2) << 0.5, 0.5).finished();
        Mat means = c.gmm_means;
        if (!means.size()) {
            means.resize(2, n);
            means.row(0).setConstant(-2.0);
            means.row(1).setConstant(2.0);
        }
        Vec vars = c.gmm_vars.size() ? c.gmm_vars : Vec::Constant(w.size(), 0.25);
        require_dim(means.cols() == n, "gmm means dimension does not match the task");
        return gmm_prior(w, means, vars);
    }
    throw ConfigError("unknown prior kind '" + kind + "'");
}

}  // namespace detail

inline TaskSetup build_task(const ExperimentConfig& c) {
    TaskSetup t;
    t.schedule = make_linear_schedule(c.T, c.beta_start, c.beta_end);
    t.sigma_eff = c.effective_sigma_y();

    OperatorParams p = c.op_params;
    std::string op_kind = c.operator_kind;
    switch (c.task) {
        case TaskKind::gmm_1d:
            if (p.n == 0) p.n = 1;
            if (op_kind.empty()) op_kind = "identity";
            break;
        case TaskKind::gmm_2d:
            if (p.n == 0) p.n = 2;
            if (op_kind.empty()) op_kind = "identity";
            break;
        case TaskKind::identity_denoise:
            if (p.n == 0) p.n = p.side > 0 ? p.side * p.side : 16;
            if (op_kind.empty()) op_kind = "identity";
            break;
        case TaskKind::sr:
            if (p.side == 0) p.side = 16;
            if (op_kind.empty()) op_kind = "sr-bicubic";
            break;
        case TaskKind::gaussian_deblur:
            if (p.side == 0) p.side = 16;
            if (op_kind.empty()) op_kind = "gaussian-blur";
            break;
        case TaskKind::motion_deblur:
            if (p.side == 0) p.side = 16;
            if (op_kind.empty()) op_kind = "motion-blur";
            break;
        case TaskKind::nonlinear_toy:
            if (p.n == 0) p.n = 8;
            break;
    }

    if (c.task == TaskKind::nonlinear_toy) {
        t.nlop = tanh_operator(p.n, c.nl_a, c.nl_b);
        t.n = p.n;
    } else {
        t.op = make_operator(op_kind, p);
        t.n = t.op.in_dim();
    }

    t.prior = detail::default_prior(c, t.n);
    require_dim(t.prior.dim() == t.n, "prior dimension does not match the operator");

    if (c.truth_source.rfind("file:", 0) == 0) {
        t.truth = read_tensor(c.truth_source.substr(5));
        require_dim(t.truth.size() == t.n, "truth tensor has wrong length");
    } else if (c.truth_source == "prior-sample") {
        Rng rng(derive_seed(c.seed, kTruthStream));
        t.truth = detail::sample_from_prior(t.prior, rng);
    } else {
        throw ConfigError("truth.source must be prior-sample or file:<path>");
    }

    if (c.fixed_measurement.has_value()) {
        require(t.nonlinear() ? t.nlop.out_dim() == 1 : t.op.out_dim() == 1,
                "truth.measurement needs a scalar measurement task");
        t.meas.sigma_y = t.sigma_eff;
        t.meas.y = Vec::Constant(1, *c.fixed_measurement);
    } else if (t.nonlinear()) {
        t.meas = nl_synthesize(t.nlop, t.truth, t.sigma_eff, derive_seed(c.seed, kMeasurementStream));
    } else {
        t.meas = synthesize(t.op, t.truth, t.sigma_eff, derive_seed(c.seed, kMeasurementStream));
    }

    // W1 oracle for low-dimensional analytic tasks
    if ((c.task == TaskKind::gmm_1d || c.task == TaskKind::gmm_2d) && t.sigma_eff > 0.0 &&
        !t.nonlinear()) {
        t.oracle_post = posterior_quadrature(t.prior, dense_matrix(t.op), t.meas.y, t.sigma_eff);
    }
    return t;
}

struct RunOutput {
    MetricsRecord metrics;
    Mat samples;  // chains x n
    TaskSetup task;
};

struct RunOptions {
    int jobs = 1;
    bool write_outputs = true;
};

inline MetricsRecord summarize_run(const ExperimentConfig& c, const TaskSetup& task,
                                   const Mat& samples, const std::vector<double>& chain_xi,
                                   const std::vector<double>& chain_align) {
    MetricsRecord m;
    double peak = c.metrics_peak;
    if (peak <= 0.0) {
        peak = task.truth.maxCoeff() - task.truth.minCoeff();
        if (peak <= 0.0) peak = 1.0;
    }
    double psnr_sum = 0.0, mse_sum = 0.0;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        Vec xi = samples.row(i).transpose();
        psnr_sum += psnr(xi, task.truth, peak);
        mse_sum += mse(xi, task.truth);
    }
    m.psnr = psnr_sum / static_cast<double>(samples.rows());
    m.mse = mse_sum / static_cast<double>(samples.rows());
    if (task.oracle_post) {
        if (task.oracle_post->dim() == 1) {
            std::vector<double> s(samples.col(0).data(), samples.col(0).data() + samples.rows());
            m.w1 = wasserstein1_1d(s, *task.oracle_post);
        } else {
            double acc = 0.0;
            for (int axis = 0; axis < 2; ++axis) {
                std::vector<double> s(samples.col(axis).data(),
                                      samples.col(axis).data() + samples.rows());
                acc += wasserstein1_1d(s, task.oracle_post->marginal(axis));
            }
            m.w1 = acc / 2.0;
        }
    }
    double xs = 0.0, as = 0.0;
    for (double v : chain_xi) xs += v;
    for (double v : chain_align) as += v;
    if (!chain_xi.empty()) m.mean_xi = xs / static_cast<double>(chain_xi.size());
    if (!chain_align.empty()) m.mean_alignment = as / static_cast<double>(chain_align.size());
    return m;
}

inline nlohmann::json metrics_to_json(const ExperimentConfig& c, const MetricsRecord& m) {
    nlohmann::json j;
    j["task"] = to_string(c.task);
    j["chains"] = c.chains;
    j["steps"] = c.steps;
    j["eta"] = c.eta;
    j["sigma_y"] = c.sigma_y;
    j["seed"] = c.seed;
    j["psnr_db"] = m.psnr;
    j["mse"] = m.mse;
    if (std::isfinite(m.w1)) j["w1_to_oracle"] = m.w1;  // fidelity proxy, not a perceptual metric
    j["mean_xi"] = m.mean_xi;
    j["mean_alignment"] = m.mean_alignment;
    return j;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "step,t,xi,d_norm,alignment\n";
    f << std::setprecision(17);
    int step = 0;
    for (auto it = traj.steps.rbegin(); it != traj.steps.rend(); ++it, ++step)
        f << step << "," << it->t << "," << it->xi << "," << it->d_norm << "," << it->alignment
          << "\n";
}

/// Runs all chains of one experiment; optionally writes metrics.json,
/// sample tensors and trajectory CSVs under c.out_dir.
inline RunOutput run_experiment(const ExperimentConfig& c, const RunOptions& opts = {}) {
    auto t0 = std::chrono::steady_clock::now();
    RunOutput out;
    out.task = build_task(c);
    const TaskSetup& task = out.task;

    out.samples.resize(c.chains, task.n);
    std::vector<Trajectory> trajectories(static_cast<size_t>(c.chains));
    std::vector<double> chain_xi(static_cast<size_t>(c.chains), 0.0);
    std::vector<double> chain_align(static_cast<size_t>(c.chains), 0.0);

    parallel_for(c.chains, opts.jobs, [&](int i) {
        SamplerConfig sc;
        sc.steps = c.steps;
        sc.eta = c.eta;
        sc.rng_seed = c.seed + static_cast<std::uint64_t>(i);
        sc.record_trajectory = c.record_trajectory;
        sc.clip_x0 = c.clip_x0;
        SampleResult res;
        if (!c.guidance_enabled) {
            res = sample(sc, task.schedule, task.prior);
        } else if (task.nonlinear()) {
            sc.guidance = c.guidance;
            const GuidanceSpec spec = c.guidance;
            const GNConfig gn = c.gn;
            res = sample_with_guidance(
                sc, task.schedule, task.prior,
                [&task, spec, gn](const Vec& x_t, const StepCoeffs& coeffs,
                                  const DenoiseOutput& den) {
                    return nl_guidance_step(spec, task.prior, task.nlop, task.meas.y,
                                            task.meas.sigma_y, x_t, coeffs.abar, den, gn);
                });
        } else {
            sc.guidance = c.guidance;
            res = sample(sc, task.schedule, task.prior, task.op, task.meas);
        }
        out.samples.row(i) = res.x0.transpose();
        double xs = 0.0, as = 0.0;
        for (const auto& r : res.trajectory.steps) {
            xs += r.xi;
            as += r.alignment;
        }
        size_t nsteps = res.trajectory.steps.size();
        chain_xi[static_cast<size_t>(i)] = nsteps ? xs / static_cast<double>(nsteps) : 0.0;
        chain_align[static_cast<size_t>(i)] = nsteps ? as / static_cast<double>(nsteps) : 0.0;
        if (c.record_trajectory) trajectories[static_cast<size_t>(i)] = std::move(res.trajectory);
    });

    out.metrics = summarize_run(c, task, out.samples, chain_xi, chain_align);
    out.metrics.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (opts.write_outputs) {
        ensure_dir(c.out_dir);
        std::ofstream mj(c.out_dir + "/metrics.json");
        if (!mj) throw IoError("cannot write metrics.json under " + c.out_dir);
        mj << metrics_to_json(c, out.metrics).dump(2) << "\n";

        if (c.save_samples != "none") {
            ensure_dir(c.out_dir + "/samples");
            Vec mean = out.samples.colwise().mean().transpose();
            write_tensor(c.out_dir + "/samples/mean.tensor", {task.n}, mean);
            if (c.save_samples == "all") {
                char name[64];
                for (Eigen::Index i = 0; i < out.samples.rows(); ++i) {
                    std::snprintf(name, sizeof(name), "/samples/chain_%04lld.tensor",
                                  static_cast<long long>(i));
                    write_tensor(c.out_dir + name, {task.n}, out.samples.row(i).transpose());
                }
            }
        }
        if (c.record_trajectory) {
            ensure_dir(c.out_dir + "/traj");
            char name[64];
            for (size_t i = 0; i < trajectories.size(); ++i) {
                std::snprintf(name, sizeof(name), "/traj/chain_%04zu.csv", i);
                write_trajectory_csv(c.out_dir + name, trajectories[i]);
            }
        }
    }
    log_info("run " + std::string(to_string(c.task)) + ": psnr=" + std::to_string(out.metrics.psnr) +
             " dB, mse=" + std::to_string(out.metrics.mse) +
             (std::isfinite(out.metrics.w1) ? ", w1=" + std::to_string(out.metrics.w1) : "") +
             ", wall=" + std::to_string(out.metrics.wall_time_sec) + "s");
    return out;
}

enum class AblationAxis { steps, eta, sigma_y, xi_mode, gd_pairing };

inline AblationAxis parse_axis(const std::string& s) {
    if (s == "steps") return AblationAxis::steps;
    if (s == "eta") return AblationAxis::eta;
    if (s == "sigma_y") return AblationAxis::sigma_y;
    if (s == "xi_mode") return AblationAxis::xi_mode;
    if (s == "gd_pairing") return AblationAxis::gd_pairing;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

/// Applies one swept value onto a copy of the base config. Seeds are left
/// untouched, so rows are paired.
inline ExperimentConfig apply_axis_value(const ExperimentConfig& base, AblationAxis axis,
                                         const std::string& value) {
    ExperimentConfig c = base;
    switch (axis) {
        case AblationAxis::steps:
            c.steps = std::stoi(value);
            break;
        case AblationAxis::eta:
            c.eta = std::stod(value);
            break;
        case AblationAxis::sigma_y:
            c.sigma_y = std::stod(value);
            break;
        case AblationAxis::xi_mode: {
            if (value == "adaptive") {
                c.guidance.xi_mode = XiMode::adaptive;
            } else if (value == "averaged") {
                c.guidance.xi_mode = XiMode::averaged;
            } else {
                std::string v = value.rfind("fixed:", 0) == 0 ? value.substr(6) : value;
                c.guidance.xi_mode = XiMode::fixed;
                c.guidance.xi_value = std::stod(v);
            }
            break;
        }
        case AblationAxis::gd_pairing: {
            size_t colon = value.find(':');
            require(colon != std::string::npos, "gd_pairing values look like g:d, e.g. pgdm:map");
            c.guidance.g_kind = parse_surrogate(value.substr(0, colon));
            c.guidance.d_kind = parse_surrogate(value.substr(colon + 1));
            break;
        }
    }
    c.validate();
    return c;
}

struct AblationRow {
    std::string value;
    MetricsRecord metrics;
};

/// One row per swept value, shared seeds across rows. Rows are flushed to
/// <out>/ablation.csv as they finish, so a failing row leaves a partial table.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& base, AblationAxis axis,
                                             const std::vector<std::string>& values,
                                             const RunOptions& opts = {}) {
    std::vector<AblationRow> rows;
    std::ofstream csv;
    std::string axis_name = [&] {
        switch (axis) {
            case AblationAxis::steps: return "steps";
            case AblationAxis::eta: return "eta";
            case AblationAxis::sigma_y: return "sigma_y";
            case AblationAxis::xi_mode: return "xi_mode";
            default: return "gd_pairing";
        }
    }();
    if (opts.write_outputs) {
        ensure_dir(base.out_dir);
        csv.open(base.out_dir + "/ablation.csv");
        if (!csv) throw IoError("cannot write ablation.csv under " + base.out_dir);
        csv << "axis,value,psnr_db,mse,w1_to_oracle,mean_xi,mean_alignment\n";
        csv << std::setprecision(17);
        csv.flush();
    }
    for (const auto& v : values) {
        ExperimentConfig c = apply_axis_value(base, axis, v);
        RunOptions row_opts = opts;
        row_opts.write_outputs = false;  // the table is the artifact
        RunOutput out = run_experiment(c, row_opts);
        rows.push_back({v, out.metrics});
        if (opts.write_outputs) {
            csv << axis_name << "," << v << "," << out.metrics.psnr << "," << out.metrics.mse << ",";
            if (std::isfinite(out.metrics.w1)) csv << out.metrics.w1;
            csv << "," << out.metrics.mean_xi << "," << out.metrics.mean_alignment << "\n";
            csv.flush();
        }
    }
    return rows;
}

}  // namespace adaps
