#pragma once

// INI run configurations and the batch runner behind the command-line tool.
//
// Sections: [run] [model] [block:NAME] [system] [grid] [coint] [forward]
// [curve]. Matrices are flat row-major lists separated by commas or blanks.

#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "contcoint/coint_analysis.hpp"
#include "contcoint/forward_pricing.hpp"
#include "contcoint/hilbert_curves.hpp"
#include "contcoint/io.hpp"
#include "contcoint/simulation.hpp"

namespace contcoint {

enum class Command { simulate, check_coint, forward, curve };

inline std::string to_string(Command c) {
    switch (c) {
        case Command::simulate:
            return "simulate";
        case Command::check_coint:
            return "check-coint";
        case Command::forward:
            return "forward";
        case Command::curve:
            return "curve";
    }
    return "unknown";
}

inline Command parse_command(const std::string& s) {
    if (s == "simulate") return Command::simulate;
    if (s == "check-coint") return Command::check_coint;
    if (s == "forward") return Command::forward;
    if (s == "curve") return Command::curve;
    throw ConfigError("command", "unknown command '" + s + "' (simulate, check-coint, forward, curve)");
}

/// Spread OU on a uniform maturity grid: g0 = level, vol(x) = scale e^{-rate x}.
struct CurveSettings {
    double x_max = 20.0;
    Index points = kDefaultCurvePoints;
    double alpha_w = 0.1;
    double g0_level = 0.0;
    double vol_scale = 1.0;
    double vol_rate = 1.0;
    std::vector<double> times{0.0, 10.0};
    DriverSpec driver = DriverSpec::standard_brownian(1);
};

struct RunConfig {
    Command command = Command::simulate;
    std::uint64_t seed = 0;
    Index n_paths = 1000;
    int workers = 1;
    std::string out_dir;
    CompositeModel model;
    std::vector<std::string> block_names;
    std::optional<PricingSystem> system;
    std::optional<TimeGrid> grid;
    EmpiricalOptions empirical;
    bool run_empirical = true;
    std::vector<double> x_grid{0.0, 1.0, 2.0};
    double forward_t = 0.0;
    std::optional<Vector> state;
    std::string forward_kind = "affine";
    CurveSettings curve;
};

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<Index> n_paths;
    std::optional<std::string> out_dir;
    std::optional<std::string> command;
};

namespace cfg {

using boost::property_tree::ptree;

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        throw ConfigError(key, "'" + t + "' is not a number");
    }
    if (used != t.size() || !std::isfinite(v)) {
        throw ConfigError(key, "'" + t + "' is not a finite number");
    }
    return v;
}

inline std::vector<double> to_list(const std::string& key, const std::string& text) {
    std::string s = text;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) {
        out.push_back(to_double(key, tok));
    }
    if (out.empty()) {
        throw ConfigError(key, "empty list");
    }
    return out;
}

inline std::vector<std::string> to_names(const std::string& text) {
    std::string s = text;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) {
        out.push_back(tok);
    }
    return out;
}

/// Reads the keys of one section and rejects anything not in `allowed`.
class Section {
public:
    Section(std::string name, const ptree& tree, std::set<std::string> allowed)
        : name_(std::move(name)), allowed_(std::move(allowed)) {
        for (const auto& [k, v] : tree) {
            if (!v.empty()) {
                throw ConfigError(qualify(k), "nested keys are not supported");
            }
            if (!allowed_.count(k)) {
                throw ConfigError(qualify(k), "unknown key");
            }
            values_[k] = v.data();
        }
    }

    std::string qualify(const std::string& k) const { return name_.empty() ? k : name_ + "." + k; }

    bool has(const std::string& k) const { return values_.count(k) != 0; }

    std::string str(const std::string& k, const std::string& def) const {
        const auto it = values_.find(k);
        return it == values_.end() ? def : trim(it->second);
    }

    std::string required(const std::string& k) const {
        const auto it = values_.find(k);
        if (it == values_.end()) {
            throw ConfigError(qualify(k), "missing required key");
        }
        return trim(it->second);
    }

    double num(const std::string& k, double def) const {
        return has(k) ? to_double(qualify(k), values_.at(k)) : def;
    }

    double num(const std::string& k) const { return to_double(qualify(k), required(k)); }

    Index count(const std::string& k, Index def, Index min_value) const {
        const double v = num(k, static_cast<double>(def));
        if (v != std::floor(v) || v < static_cast<double>(min_value)) {
            throw ConfigError(qualify(k), "must be an integer >= " + std::to_string(min_value));
        }
        return static_cast<Index>(v);
    }

    std::vector<double> list(const std::string& k) const { return to_list(qualify(k), required(k)); }

    std::optional<std::vector<double>> maybe_list(const std::string& k) const {
        if (!has(k)) {
            return std::nullopt;
        }
        return list(k);
    }

    bool flag(const std::string& k, bool def) const {
        if (!has(k)) {
            return def;
        }
        const std::string v = str(k, "");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(qualify(k), "expected true or false, got '" + v + "'");
    }

    const std::string& name() const { return name_; }

private:
    std::string name_;
    std::set<std::string> allowed_;
    std::map<std::string, std::string> values_;
};

inline Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline Matrix to_matrix(const Section& s, const std::string& key, Index rows, Index cols) {
    const auto v = s.list(key);
    if (static_cast<Index>(v.size()) != rows * cols) {
        throw ConfigError(s.qualify(key), "has " + std::to_string(v.size()) + " entries but a " +
                                              std::to_string(rows) + "x" + std::to_string(cols) +
                                              " matrix needs " + std::to_string(rows * cols));
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
        }
    }
    return m;
}

inline Index square_side(const Section& s, const std::string& key) {
    const auto v = s.list(key);
    const auto k = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
    if (k * k != static_cast<Index>(v.size())) {
        throw ConfigError(s.qualify(key), "has " + std::to_string(v.size()) + " entries, not a square matrix");
    }
    return k;
}

inline const std::set<std::string> kDriverKeys{"driver", "driver_cov", "jump_rate", "jump_mean", "jump_cov"};

/// Driver of dimension `k` (or inferred from driver_cov / jump_mean when k < 0).
inline DriverSpec parse_driver(const Section& s, Index k) {
    const std::string kind = s.str("driver", "brownian");
    auto cov_or_identity = [&](const std::string& key, Index dim) {
        if (!s.has(key)) {
            return Matrix(Matrix::Identity(dim, dim));
        }
        return to_matrix(s, key, dim, dim);
    };
    try {
        if (kind == "brownian") {
            if (k < 0) {
                k = s.has("driver_cov") ? square_side(s, "driver_cov") : 1;
            }
            if (s.has("jump_rate") || s.has("jump_mean") || s.has("jump_cov")) {
                throw ConfigError(s.qualify("driver"), "jump keys given for a brownian driver");
            }
            return DriverSpec::brownian(cov_or_identity("driver_cov", k));
        }
        if (kind == "compound_poisson") {
            const auto jm = s.list("jump_mean");
            if (k < 0) {
                k = static_cast<Index>(jm.size());
            }
            if (static_cast<Index>(jm.size()) != k) {
                throw ConfigError(s.qualify("jump_mean"), "has length " + std::to_string(jm.size()) +
                                                              " but the driver dimension is " + std::to_string(k));
            }
            std::optional<Matrix> diff;
            if (s.has("driver_cov")) {
                diff = to_matrix(s, "driver_cov", k, k);
            }
            return DriverSpec::compound_poisson(s.num("jump_rate"), to_vector(jm), cov_or_identity("jump_cov", k),
                                                diff);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(s.qualify("driver"), e.what());
    }
    throw ConfigError(s.qualify("driver"), "unknown driver '" + kind + "' (brownian, compound_poisson)");
}

inline std::set<std::string> with_driver(std::set<std::string> keys) {
    keys.insert(kDriverKeys.begin(), kDriverKeys.end());
    return keys;
}

inline FactorModel parse_block(const std::string& name, const ptree& tree) {
    const ptree empty;
    std::string kind;
    if (const auto k = tree.get_optional<std::string>("kind")) {
        kind = trim(*k);
    } else {
        throw ConfigError(name + ".kind", "missing required key");
    }
    if (kind == "mv_ou" || kind == "drifted_bm") {
        Section s(name, tree, with_driver({"kind", "mu", "c", "sigma", "x0", "start"}));
        const auto mu = s.list("mu");
        const auto n = static_cast<Index>(mu.size());
        const auto sig = s.list("sigma");
        if (sig.size() % static_cast<std::size_t>(n) != 0) {
            throw ConfigError(s.qualify("sigma"), "has " + std::to_string(sig.size()) +
                                                      " entries, not a multiple of the dimension " + std::to_string(n));
        }
        const Index k = static_cast<Index>(sig.size()) / n;
        const DriverSpec driver = parse_driver(s, k);
        if (driver.dim() != k) {
            throw ConfigError(s.qualify("driver"), "dimension " + std::to_string(driver.dim()) +
                                                       " does not match the " + std::to_string(k) + " columns of sigma");
        }
        const Matrix sigma = to_matrix(s, "sigma", n, k);
        Vector x0 = Vector::Zero(n);
        if (s.has("x0")) {
            const auto v = s.list("x0");
            if (static_cast<Index>(v.size()) != n) {
                throw ConfigError(s.qualify("x0"), "has length " + std::to_string(v.size()) +
                                                       " but mu has length " + std::to_string(n));
            }
            x0 = to_vector(v);
        }
        if (kind == "drifted_bm") {
            if (s.has("c") || s.has("start")) {
                throw ConfigError(s.qualify(s.has("c") ? "c" : "start"), "not used by drifted_bm");
            }
            DriftedBM m{to_vector(mu), sigma, driver, x0};
            return m;
        }
        MultivariateOU m;
        m.mu = to_vector(mu);
        m.c = to_matrix(s, "c", n, n);
        m.sigma = sigma;
        m.driver = driver;
        m.x0 = x0;
        const std::string start = s.str("start", "fixed");
        if (start == "stationary") {
            m.start = StartKind::stationary;
        } else if (start != "fixed") {
            throw ConfigError(s.qualify("start"), "expected fixed or stationary");
        }
        return m;
    }
    if (kind == "carma") {
        Section s(name, tree, with_driver({"kind", "p", "q", "alpha", "b", "y0"}));
        const int p = static_cast<int>(s.count("p", 1, 1));
        const int q = static_cast<int>(s.count("q", 0, 0));
        const auto alpha = s.list("alpha");
        if (static_cast<int>(alpha.size()) != p) {
            throw ConfigError(s.qualify("alpha"), "has length " + std::to_string(alpha.size()) +
                                                      " but p = " + std::to_string(p));
        }
        const auto b = s.list("b");
        if (static_cast<int>(b.size()) != q + 1) {
            throw ConfigError(s.qualify("b"), "has length " + std::to_string(b.size()) + " but q + 1 = " +
                                                  std::to_string(q + 1));
        }
        std::optional<Vector> y0;
        if (s.has("y0")) {
            const auto v = s.list("y0");
            if (static_cast<int>(v.size()) != p) {
                throw ConfigError(s.qualify("y0"), "has length " + std::to_string(v.size()) + " but p = " +
                                                       std::to_string(p));
            }
            y0 = to_vector(v);
        }
        try {
            return make_carma(p, q, alpha, b, parse_driver(s, 1), y0);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(s.qualify("alpha"), e.what());
        }
    }
    if (kind == "ls_kernel") {
        Section s(name, tree, with_driver({"kind", "kernel", "kernel_scale", "kernel_rate", "burn_in", "substep",
                                           "two_sided"}));
        if (s.str("kernel", "exp") != "exp") {
            throw ConfigError(s.qualify("kernel"), "only the exponential kernel scale*exp(-rate*u) is available");
        }
        const double scale = s.num("kernel_scale", 1.0);
        const double rate = s.num("kernel_rate", 1.0);
        if (!(rate > 0.0)) {
            throw ConfigError(s.qualify("kernel_rate"), "must be positive");
        }
        LsKernel m;
        m.kernel = [scale, rate](double u) { return Matrix::Constant(1, 1, scale * std::exp(-rate * u)); };
        m.driver = parse_driver(s, 1);
        m.burn_in = s.num("burn_in", 20.0);
        m.substep = s.num("substep", 0.01);
        m.two_sided = s.flag("two_sided", true);
        m.kernel_l2_bound = scale * scale / (2.0 * rate);
        m.tail_bound = scale * scale * std::exp(-2.0 * rate * m.burn_in) / (2.0 * rate);
        m.lipschitz = std::abs(scale) * rate;
        std::ostringstream label;
        label.precision(17);
        label << "exp(scale=" << scale << ",rate=" << rate << ")";
        m.label = label.str();
        return m;
    }
    throw ConfigError(name + ".kind", "unknown model kind '" + kind + "' (mv_ou, drifted_bm, carma, ls_kernel)");
}

inline void wrap_validate(const std::string& key, const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key, e.what());
    }
}

}  // namespace cfg

inline RunConfig parse_config(const std::string& text, const ConfigOverrides& ov = {}) {
    using cfg::Section;
    cfg::ptree root;
    {
        std::istringstream is(text);
        try {
            boost::property_tree::ini_parser::read_ini(is, root);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError("syntax", e.message() + " at line " + std::to_string(e.line()));
        }
    }
    const cfg::ptree empty;
    static const std::set<std::string> known{"run", "model", "system", "grid", "coint", "forward", "curve"};
    for (const auto& [name, sub] : root) {
        if (sub.empty() && !sub.data().empty()) {
            throw ConfigError(name, "key outside of any section");
        }
        if (!known.count(name) && name.rfind("block:", 0) != 0) {
            throw ConfigError(name, "unknown section");
        }
    }
    auto section = [&](const std::string& name) -> const cfg::ptree& {
        const auto it = root.find(name);
        return it == root.not_found() ? empty : it->second;
    };

    RunConfig c;
    const Section run("run", section("run"), {"command", "seed", "n_paths", "workers", "out"});
    c.command = parse_command(ov.command ? *ov.command : run.required("command"));
    if (ov.seed) {
        c.seed = *ov.seed;
    } else {
        if (!run.has("seed")) {
            throw ConfigError("run.seed", "missing; every run needs an explicit seed");
        }
        const std::string s = run.str("seed", "");
        try {
            std::size_t used = 0;
            c.seed = std::stoull(s, &used);
            if (used != s.size() || s.front() == '-') {
                throw std::invalid_argument("seed");
            }
        } catch (const std::exception&) {
            throw ConfigError("run.seed", "'" + s + "' is not an unsigned 64-bit integer");
        }
    }
    c.n_paths = ov.n_paths ? *ov.n_paths : run.count("n_paths", 1000, 1);
    if (c.n_paths < 1) {
        throw ConfigError("run.n_paths", "must be positive");
    }
    c.workers = static_cast<int>(run.count("workers", 1, 1));
    c.out_dir = ov.out_dir ? *ov.out_dir : run.str("out", "");

    // model
    const auto& model_tree = section("model");
    if (c.command != Command::curve) {
        if (model_tree.empty()) {
            throw ConfigError("model", "missing section");
        }
        if (const auto blocks = model_tree.get_optional<std::string>("blocks")) {
            if (model_tree.size() != 1) {
                for (const auto& [k, v] : model_tree) {
                    if (k != "blocks") {
                        throw ConfigError("model." + k, "unknown key (block keys go in [block:NAME] sections)");
                    }
                }
            }
            c.block_names = cfg::to_names(*blocks);
            if (c.block_names.empty()) {
                throw ConfigError("model.blocks", "empty block list");
            }
            for (const auto& name : c.block_names) {
                const auto it = root.find("block:" + name);
                if (it == root.not_found()) {
                    throw ConfigError("model.blocks", "no section [block:" + name + "]");
                }
                c.model.blocks.push_back(cfg::parse_block("block:" + name, it->second));
            }
        } else {
            c.block_names = {"model"};
            c.model.blocks.push_back(cfg::parse_block("model", model_tree));
        }
        for (const auto& [name, sub] : root) {
            if (name.rfind("block:", 0) == 0 &&
                std::find(c.block_names.begin(), c.block_names.end(), name.substr(6)) == c.block_names.end()) {
                throw ConfigError(name, "section is not listed in model.blocks");
            }
        }
        cfg::wrap_validate("model", [&] { validate(c.model); });
    }
    const Index n = c.command == Command::curve ? 0 : factor_dim(c.model);

    // pricing system
    const Section sys("system", section("system"), {"p", "p_rows", "c", "m"});
    if (!section("system").empty()) {
        const auto pv = sys.list("p");
        const Index rows = sys.count("p_rows", 1, 1);
        if (static_cast<Index>(pv.size()) % rows != 0) {
            throw ConfigError("system.p", "has " + std::to_string(pv.size()) + " entries, not a multiple of p_rows = " +
                                              std::to_string(rows));
        }
        const Index cols = static_cast<Index>(pv.size()) / rows;
        if (cols != n) {
            throw ConfigError("system.p", "has " + std::to_string(cols) + " columns but the model has dimension " +
                                              std::to_string(n));
        }
        PricingSystem ps;
        ps.p = cfg::to_matrix(sys, "p", rows, cols);
        if (sys.has("c")) {
            const auto cv = sys.list("c");
            if (static_cast<Index>(cv.size()) != rows) {
                throw ConfigError("system.c", "has length " + std::to_string(cv.size()) + " but p has " +
                                                  std::to_string(rows) + " rows");
            }
            ps.c = cfg::to_vector(cv);
        }
        if (sys.has("m")) {
            ps.m = sys.count("m", 0, 0);
            if (*ps.m > n) {
                throw ConfigError("system.m", "m = " + std::to_string(*ps.m) + " exceeds the model dimension " +
                                                  std::to_string(n));
            }
        }
        cfg::wrap_validate("system", [&] { validate(ps); });
        c.system = std::move(ps);
    }
    if (c.command == Command::check_coint) {
        if (!c.system || !c.system->c || !c.system->m) {
            throw ConfigError(!c.system ? "system" : !c.system->c ? "system.c" : "system.m",
                              "check-coint needs p, c and m");
        }
    }
    if (c.command == Command::forward && !c.system) {
        throw ConfigError("system", "forward needs a pricing matrix p");
    }

    // time grid
    const Section grid("grid", section("grid"), {"times", "t0", "t_end", "steps"});
    if (grid.has("times")) {
        if (grid.has("t_end") || grid.has("steps") || grid.has("t0")) {
            throw ConfigError("grid.times", "give either times or t0/t_end/steps, not both");
        }
        cfg::wrap_validate("grid.times", [&] { c.grid = TimeGrid(grid.list("times")); });
    } else if (grid.has("t_end")) {
        const double t0 = grid.num("t0", 0.0);
        const double t1 = grid.num("t_end");
        const Index steps = grid.count("steps", 1, 1);
        cfg::wrap_validate("grid.t_end", [&] { c.grid = TimeGrid::uniform(t0, t1, static_cast<int>(steps)); });
    }
    if (c.command == Command::simulate && !c.grid) {
        throw ConfigError("grid", "simulate needs grid.times or grid.t_end");
    }

    // empirical test
    const Section co("coint", section("coint"), {"t1", "t2", "n_boot", "level", "z_grid", "run_empirical"});
    if (co.has("t1")) c.empirical.t1 = co.num("t1");
    if (co.has("t2")) c.empirical.t2 = co.num("t2");
    c.empirical.n_boot = static_cast<int>(co.count("n_boot", kDefaultBootstrap, 1));
    c.empirical.level = co.num("level", kDefaultLevel);
    if (!(c.empirical.level > 0.0 && c.empirical.level < 1.0)) {
        throw ConfigError("coint.level", "must lie in (0, 1)");
    }
    if (co.has("z_grid")) {
        c.empirical.z_grid = co.list("z_grid");
        cfg::wrap_validate("coint.z_grid", [&] { detail::check_z_grid(c.empirical.z_grid); });
    }
    c.run_empirical = co.flag("run_empirical", true);
    c.empirical.n_paths = c.n_paths;
    c.empirical.seed = c.seed;
    c.empirical.workers = c.workers;

    // forward
    const Section fw("forward", section("forward"), {"x_grid", "t", "state", "kind"});
    if (fw.has("x_grid")) {
        c.x_grid = fw.list("x_grid");
        cfg::wrap_validate("forward.x_grid", [&] { detail::check_x_grid(c.x_grid); });
    }
    c.forward_t = fw.num("t", 0.0);
    c.forward_kind = fw.str("kind", "affine");
    if (c.forward_kind != "affine" && c.forward_kind != "geometric") {
        throw ConfigError("forward.kind", "expected affine or geometric");
    }
    if (fw.has("state")) {
        const auto v = fw.list("state");
        if (static_cast<Index>(v.size()) != n) {
            throw ConfigError("forward.state", "has length " + std::to_string(v.size()) +
                                                   " but the model has dimension " + std::to_string(n));
        }
        c.state = cfg::to_vector(v);
    }

    // curve
    const Section cu("curve", section("curve"),
                     cfg::with_driver({"x_max", "points", "alpha_w", "g0_level", "vol_scale", "vol_rate", "times"}));
    if (c.command == Command::curve) {
        c.curve.x_max = cu.num("x_max", 20.0);
        c.curve.points = cu.count("points", kDefaultCurvePoints, 3);
        c.curve.alpha_w = cu.num("alpha_w", 0.1);
        if (!(c.curve.alpha_w > 0.0)) {
            throw ConfigError("curve.alpha_w", "must be positive");
        }
        if (!(c.curve.x_max > 0.0)) {
            throw ConfigError("curve.x_max", "must be positive");
        }
        c.curve.g0_level = cu.num("g0_level", 0.0);
        c.curve.vol_scale = cu.num("vol_scale", 1.0);
        c.curve.vol_rate = cu.num("vol_rate", 1.0);
        if (cu.has("times")) {
            c.curve.times = cu.list("times");
        }
        c.curve.driver = cfg::parse_driver(cu, 1);
        if (c.curve.driver.dim() != 1) {
            throw ConfigError("curve.driver", "dimension " + std::to_string(c.curve.driver.dim()) +
                                                  " but one vol curve is configured");
        }
        cfg::wrap_validate("curve.times", [&] { TimeGrid(c.curve.times).validate(); });
    } else if (!section("curve").empty()) {
        throw ConfigError("curve", "section only applies to the curve command");
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& ov = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("config", "cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), ov);
}

/// Ordered `key: value` report.
class Report {
public:
    void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
    void add(const std::string& key, double value) { add(key, fmt17(value)); }
    void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }
    void add(const std::string& key, const Vector& v) {
        std::string s;
        for (Index i = 0; i < v.size(); ++i) {
            s += (i ? "," : "") + fmt17(v(i));
        }
        add(key, s);
    }

    std::string str() const {
        std::string out;
        for (const auto& [k, v] : lines_) {
            out += k + ": " + v + "\n";
        }
        return out;
    }

    std::optional<std::string> get(const std::string& key) const {
        for (const auto& [k, v] : lines_) {
            if (k == key) return v;
        }
        return std::nullopt;
    }

private:
    std::vector<std::pair<std::string, std::string>> lines_;
};

struct RunResult {
    Report report;
    std::vector<std::string> files;
};

namespace detail {

inline Vector default_state(const CompositeModel& model) {
    Vector x(factor_dim(model));
    Index off = 0;
    for (const auto& b : model.blocks) {
        const Index k = factor_dim(b);
        if (const auto* ou = std::get_if<MultivariateOU>(&b)) {
            x.segment(off, k) = ou->x0;
        } else if (const auto* bm = std::get_if<DriftedBM>(&b)) {
            x.segment(off, k) = bm->x0;
        } else {
            throw ConfigError("forward.state", "needed for models with " + model_tag(b) + " blocks");
        }
        off += k;
    }
    return x;
}

inline void report_tolerances(Report& r, const RunConfig& c) {
    r.add("tol_zero", kZeroTol);
    r.add("tol_rank_rel", kRankRelTol);
    r.add("tol_exact_solve", kExactSolveTol);
    r.add("tol_cumulant_quad", kCumulantQuadTol);
    r.add("tol_kernel_tail", kMaxKernelTail);
    r.add("tol_drift", kDriftTol);
    for (std::size_t i = 0; i < c.model.blocks.size(); ++i) {
        if (const auto* ls = std::get_if<LsKernel>(&c.model.blocks[i])) {
            const std::string pre = "block_" + c.block_names[i] + "_";
            r.add(pre + "burn_in", ls->burn_in);
            r.add(pre + "tail_bound", ls->tail_bound);
            r.add(pre + "substep", ls->substep);
        }
    }
}

}  // namespace detail

/// Runs the configured command, writing CSV outputs and report.txt into
/// `out_dir` (each through a temporary file and a rename).
inline RunResult run(const RunConfig& c, const std::filesystem::path& out_dir) {
    const auto start = std::chrono::steady_clock::now();
    RunResult res;
    Report& r = res.report;
    auto write = [&](const std::string& name, const std::string& content) {
        atomic_write(out_dir / name, content);
        res.files.push_back(name);
    };
    r.add("command", to_string(c.command));
    r.add("seed", std::to_string(c.seed));
    r.add("n_paths", std::to_string(c.n_paths));
    r.add("workers", std::to_string(c.workers));
    if (c.command != Command::curve) {
        r.add("model_digest", model_digest(c.model));
        r.add("model", describe(c.model));
    }
    SimOptions opt;
    opt.workers = c.workers;

    switch (c.command) {
        case Command::simulate: {
            const auto e = simulate(c.model, *c.grid, c.n_paths, c.seed, opt);
            write("paths.csv", ensemble_csv(e));
            const auto sv = classify_stationary(c.model);
            r.add("stationary", sv.stationary());
            r.add("stationary_reason", sv.reason);
            const auto mom = ensemble_moments(e, e.grid.size() - 1);
            r.add("t_last", e.grid.points.back());
            r.add("mean_t_last", mom.mean);
            r.add("cov_t_last", Vector(Eigen::Map<const Vector>(mom.cov.data(), mom.cov.size())));
            if (c.system) {
                r.add("pricing_rows", std::to_string(c.system->d()));
            }
            detail::report_tolerances(r, c);
            break;
        }
        case Command::check_coint: {
            ClassifyOptions co;
            co.empirical = c.empirical;
            co.run_empirical = c.run_empirical;
            const auto rep = classify(c.model, *c.system, co);
            r.add("verdict", to_string(rep.verdict));
            r.add("c", *c.system->c);
            r.add("m", std::to_string(*c.system->m));
            r.add("image", rep.image);
            r.add("in_cx_m", rep.in_cx_m);
            r.add("residual_norm", rep.residual.size() ? rep.residual.norm() : 0.0);
            r.add("block_stationary", rep.block_stationary);
            r.add("block_reason", rep.block_reason);
            r.add("drift_loading", rep.drift_loading ? fmt17(*rep.drift_loading) : std::string("none"));
            r.add("in_declared_span", rep.in_declared_span);
            if (rep.cf) {
                r.add("cf_t1", rep.cf->t1);
                r.add("cf_t2", rep.cf->t2);
                r.add("cf_d", rep.cf->d);
                r.add("cf_d_star", rep.cf->d_star);
                r.add("cf_level", rep.cf->level);
                r.add("cf_n_boot", std::to_string(rep.cf->n_boot));
                r.add("cf_n_paths", std::to_string(rep.cf->n_paths));
                write("cf.csv", cf_csv(*rep.cf));
            }
            if (rep.verdict == CointVerdict::cointegrated_analytic) {
                const auto law = limiting_law(c.model, *c.system);
                r.add("limit_mean", law.mean);
                r.add("limit_variance", law.variance);
                r.add("limit_gaussian", law.gaussian);
            }
            r.add("note", rep.note.empty() ? std::string("none") : rep.note);
            detail::report_tolerances(r, c);
            break;
        }
        case Command::forward: {
            const Vector x_t = c.state ? *c.state : detail::default_state(c.model);
            r.add("kind", c.forward_kind);
            r.add("t", c.forward_t);
            r.add("state", x_t);
            ForwardCurve fc;
            if (c.forward_kind == "affine") {
                const auto k = affine_kernel_ou(c.model);
                fc = forward_curve_affine(*c.system, k, x_t, c.x_grid, c.forward_t);
                r.add("homogeneous", k.homogeneous);
                if (c.system->c && c.system->m) {
                    for (double x : c.x_grid) {
                        r.add("forward_coint_x" + fmt17(x), to_string(forward_coint_check(*c.system, k, x)));
                    }
                }
            } else {
                const auto k = exp_affine_kernel_ou(c.model);
                fc.x_grid = c.x_grid;
                fc.t = c.forward_t;
                fc.values.resize(c.system->d(), static_cast<Index>(c.x_grid.size()));
                for (std::size_t i = 0; i < c.x_grid.size(); ++i) {
                    fc.values.col(static_cast<Index>(i)) = geometric_forward(*c.system, k, x_t, c.x_grid[i]).forward;
                }
            }
            r.add("spot", Vector(c.system->p * x_t));
            write("forward.csv", forward_csv(fc));
            detail::report_tolerances(r, c);
            break;
        }
        case Command::curve: {
            const auto& cs = c.curve;
            WeightSpec w;
            w.alpha = cs.alpha_w;
            const auto xs = uniform_grid(cs.x_max, cs.points);
            const auto g0 = constant_curve(xs, cs.g0_level, w);
            const double scale = cs.vol_scale, rate = cs.vol_rate;
            const auto vol = make_curve(xs, [=](double x) { return scale * std::exp(-rate * x); }, w);
            const auto e = simulate_spread_ou(g0, {vol}, cs.driver, TimeGrid(cs.times), c.n_paths, c.seed, opt);
            write("curves.csv", curve_ensemble_csv(e));
            write("curves.meta.txt", curve_metadata(xs, w, "spread"));
            const auto v = e.at_node(e.n_times() - 1, 0);
            double m = 0.0, s2 = 0.0;
            for (double a : v) m += a;
            m /= static_cast<double>(v.size());
            for (double a : v) s2 += (a - m) * (a - m);
            s2 /= std::max<double>(1.0, static_cast<double>(v.size()) - 1.0);
            r.add("alpha_w", cs.alpha_w);
            r.add("x_max", cs.x_max);
            r.add("x_points", std::to_string(cs.points));
            r.add("step", xs[1] - xs[0]);
            r.add("driver", cs.driver.describe());
            r.add("t_last", cs.times.back());
            r.add("mean_g0_t_last", m);
            r.add("var_g0_t_last", s2);
            r.add("tol_orthonormal", kOrthonormalTol);
            break;
        }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.add("wall_time_s", wall);
    write("report.txt", r.str());
    return res;
}

}  // namespace contcoint
