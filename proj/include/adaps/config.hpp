#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adaps/core.hpp"
#include "adaps/guidance.hpp"
#include "adaps/nonlinear.hpp"
#include "adaps/operators.hpp"

namespace adaps {

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Flat INI-style key/value store: [section] headers, key = value lines,
/// '#' or ';' comments.
class IniFile {
  public:
    static IniFile parse_string(const std::string& text, const std::string& origin = "<string>") {
        IniFile ini;
        ini.origin_ = origin;
        std::istringstream ss(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            size_t cut = line.find_first_of("#;");
            if (cut != std::string::npos) line = line.substr(0, cut);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section");
                section = detail::trim(line.substr(1, line.size() - 2));
                continue;
            }
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = detail::trim(line.substr(0, eq));
            std::string val = detail::trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            ini.values_[section + "." + key] = val;
        }
        return ini;
    }

    static IniFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse_string(ss.str(), path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    std::string require_str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
        return it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_double(key, it->second);
    }
    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (...) {
            throw ConfigError("key '" + key + "': not an integer: " + it->second);
        }
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (...) {
            throw ConfigError("key '" + key + "': not an unsigned integer: " + it->second);
        }
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("key '" + key + "': not a boolean: " + v);
    }
    /// Comma-separated doubles.
    Vec get_vec(const std::string& key, const Vec& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return parse_list(key, it->second);
    }
    /// Semicolon-separated rows of comma-separated doubles.
    Mat get_mat(const std::string& key, const Mat& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<Vec> rows;
        std::istringstream ss(it->second);
        std::string row;
        while (std::getline(ss, row, ';')) {
            row = detail::trim(row);
            if (row.empty()) continue;
            rows.push_back(parse_list(key, row));
        }
        require(!rows.empty(), "key '" + key + "': empty matrix");
        Mat m(static_cast<Eigen::Index>(rows.size()), rows[0].size());
        for (size_t r = 0; r < rows.size(); ++r) {
            require_dim(rows[r].size() == m.cols(), "key '" + key + "': ragged rows");
            m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
        }
        return m;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

  private:
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            double d = std::stod(v, &used);
            if (detail::trim(v.substr(used)).empty()) return d;
        } catch (...) {
        }
        throw ConfigError("key '" + key + "': not a number: " + v);
    }
    static Vec parse_list(const std::string& key, const std::string& text) {
        std::vector<double> vals;
        std::istringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (item.empty()) continue;
            vals.push_back(parse_double(key, item));
        }
        require(!vals.empty(), "key '" + key + "': empty list");
        return Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
};

enum class TaskKind {
    sr,
    gaussian_deblur,
    motion_deblur,
    identity_denoise,
    gmm_1d,
    gmm_2d,
    nonlinear_toy,
};

inline TaskKind parse_task(const std::string& s) {
    if (s == "sr") return TaskKind::sr;
    if (s == "gaussian-deblur") return TaskKind::gaussian_deblur;
    if (s == "motion-deblur") return TaskKind::motion_deblur;
    if (s == "identity-denoise") return TaskKind::identity_denoise;
    if (s == "gmm-1d") return TaskKind::gmm_1d;
    if (s == "gmm-2d") return TaskKind::gmm_2d;
    if (s == "nonlinear-toy") return TaskKind::nonlinear_toy;
    throw ConfigError("unknown task '" + s + "'");
}

inline const char* to_string(TaskKind t) {
    switch (t) {
        case TaskKind::sr: return "sr";
        case TaskKind::gaussian_deblur: return "gaussian-deblur";
        case TaskKind::motion_deblur: return "motion-deblur";
        case TaskKind::identity_denoise: return "identity-denoise";
        case TaskKind::gmm_1d: return "gmm-1d";
        case TaskKind::gmm_2d: return "gmm-2d";
        default: return "nonlinear-toy";
    }
}

/// Everything one experiment needs; parsed from the INI config and finalized
/// by CLI overrides.
struct ExperimentConfig {
    TaskKind task = TaskKind::gmm_1d;

    // schedule
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int steps = 100;
    double eta = 1.0;

    // prior
    std::string prior_kind;  // defaulted per task when empty
    Vec prior_mean;          // gaussian; scalar broadcasts
    Vec prior_var;
    Vec gmm_weights;
    Mat gmm_means;
    Vec gmm_vars;

    // operator
    OperatorParams op_params;
    std::string operator_kind;  // defaulted per task when empty

    // noise; sigma_y is given in [0,1] units and doubled for [-1,1] signals
    double sigma_y = 0.05;
    bool signal_range_pm1 = false;

    // nonlinear task
    double nl_a = 0.5;
    double nl_b = 2.0;
    GNConfig gn;

    // guidance
    bool guidance_enabled = true;
    GuidanceSpec guidance;

    // sampling
    int chains = 100;
    std::uint64_t seed = 1234;
    bool record_trajectory = false;
    bool clip_x0 = false;

    // truth & measurement
    std::string truth_source = "prior-sample";  // or file:<path>
    std::optional<double> fixed_measurement;    // exact scalar y for 1D tasks

    // output
    std::string out_dir = "out";
    std::string save_samples = "mean";  // none | mean | all
    double metrics_peak = 0.0;          // 0 -> dynamic range of the truth

    double effective_sigma_y() const { return signal_range_pm1 ? 2.0 * sigma_y : sigma_y; }

    static ExperimentConfig from_ini(const IniFile& ini) {
        ExperimentConfig c;
        c.task = parse_task(ini.get_str("task.kind", "gmm-1d"));

        c.T = static_cast<int>(ini.get_int("schedule.T", c.T));
        c.beta_start = ini.get_double("schedule.beta_start", c.beta_start);
        c.beta_end = ini.get_double("schedule.beta_end", c.beta_end);
        c.steps = static_cast<int>(ini.get_int("schedule.steps", c.steps));
        c.eta = ini.get_double("schedule.eta", c.eta);

        c.prior_kind = ini.get_str("prior.kind", "");
        c.prior_mean = ini.get_vec("prior.mean", Vec());
        c.prior_var = ini.get_vec("prior.var", Vec());
        c.gmm_weights = ini.get_vec("prior.weights", Vec());
        c.gmm_means = ini.get_mat("prior.means", Mat());
        c.gmm_vars = ini.get_vec("prior.vars", Vec());

        c.operator_kind = ini.get_str("operator.kind", "");
        c.op_params.n = ini.get_int("operator.n", 0);
        c.op_params.side = ini.get_int("operator.side", 0);
        c.op_params.sr_factor = static_cast<int>(ini.get_int("operator.factor", 4));
        c.op_params.kernel_size = static_cast<int>(ini.get_int("operator.kernel_size", 5));
        c.op_params.kernel_std = ini.get_double("operator.kernel_std", 10.0);
        c.op_params.motion_angle = ini.get_double("operator.motion_angle", 0.6);
        c.op_params.motion_intensity = ini.get_double("operator.motion_intensity", 0.5);
        c.op_params.kernel_path = ini.get_str("operator.kernel_path", "");
        if (ini.has("operator.matrix")) c.op_params.dense = ini.get_mat("operator.matrix", Mat());

        c.sigma_y = ini.get_double("noise.sigma_y", c.sigma_y);
        std::string range = ini.get_str("noise.signal_range", "raw");
        if (range == "pm1") c.signal_range_pm1 = true;
        else if (range != "raw") throw ConfigError("noise.signal_range must be raw or pm1");

        c.nl_a = ini.get_double("nonlinear.a", c.nl_a);
        c.nl_b = ini.get_double("nonlinear.b", c.nl_b);
        c.gn.iterations = static_cast<int>(ini.get_int("nonlinear.gn_iterations", c.gn.iterations));
        c.gn.lambda_damp = ini.get_double("nonlinear.gn_damping", c.gn.lambda_damp);

        c.guidance_enabled = ini.get_bool("guidance.enabled", true);
        c.guidance.g_kind = parse_surrogate(ini.get_str("guidance.g", "pgdm"));
        c.guidance.d_kind = parse_surrogate(ini.get_str("guidance.d", "map"));
        std::string mode = ini.get_str("guidance.xi_mode", "adaptive");
        if (mode == "adaptive") c.guidance.xi_mode = XiMode::adaptive;
        else if (mode == "fixed") c.guidance.xi_mode = XiMode::fixed;
        else if (mode == "averaged") c.guidance.xi_mode = XiMode::averaged;
        else throw ConfigError("guidance.xi_mode must be adaptive, fixed or averaged");
        c.guidance.xi_value = ini.get_double("guidance.xi_value", 1.0);
        c.guidance.normalize_g = ini.get_bool("guidance.normalize_g", true);
        c.guidance.allow_negative_xi = ini.get_bool("guidance.allow_negative_xi", false);

        c.chains = static_cast<int>(ini.get_int("sampling.chains", c.chains));
        c.seed = ini.get_u64("sampling.seed", c.seed);
        c.record_trajectory = ini.get_bool("sampling.record_trajectory", false);
        c.clip_x0 = ini.get_bool("sampling.clip_x0", false);

        c.truth_source = ini.get_str("truth.source", "prior-sample");
        if (ini.has("truth.measurement"))
            c.fixed_measurement = ini.get_double("truth.measurement", 0.0);

        c.out_dir = ini.get_str("output.dir", "out");
        c.save_samples = ini.get_str("output.save_samples", "mean");
        c.metrics_peak = ini.get_double("metrics.peak", 0.0);

        c.validate();
        return c;
    }

    void validate() const {
        require(T >= 1 && steps >= 1 && steps <= T, "schedule: need 1 <= steps <= T");
        require(eta >= 0.0 && eta <= 1.0, "eta must lie in [0,1]");
        require(sigma_y >= 0.0, "sigma_y must be >= 0");
        require(chains >= 1, "need at least one chain");
        guidance.validate();
        require(save_samples == "none" || save_samples == "mean" || save_samples == "all",
                "output.save_samples must be none, mean or all");
    }
};

}  // namespace adaps
