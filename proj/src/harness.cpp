#include "ghme/harness.hpp"

#include "ghme/errors.hpp"
#include "ghme/parallel.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace ghme {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& msg) {
    fail(ErrorKind::config, "field '" + field + "': " + msg);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) config_error(where, "expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) config_error(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

double get_number(const json& j, const std::string& field) {
    if (!j.is_number()) config_error(field, "expected a number");
    return j.get<double>();
}

long long get_integer(const json& j, const std::string& field) {
    if (!j.is_number_integer() && !(j.is_number() && std::floor(j.get<double>()) == j.get<double>()))
        config_error(field, "expected an integer");
    return j.is_number_integer() ? j.get<long long>() : static_cast<long long>(j.get<double>());
}

std::string get_string(const json& j, const std::string& field) {
    if (!j.is_string()) config_error(field, "expected a string");
    return j.get<std::string>();
}

Eigen::VectorXd get_vector(const json& j, const std::string& field) {
    if (!j.is_array()) config_error(field, "expected an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k)
        v[static_cast<Eigen::Index>(k)] = get_number(j[k], field + "[" + std::to_string(k) + "]");
    return v;
}

json to_array(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
    return a;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::strtod(s.c_str(), nullptr);
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot open '" + p.string() + "' for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) fail(ErrorKind::io, "cannot open '" + p.string() + "' for reading");
    return is;
}

std::string reason_of(const Error& e) { return to_string(e.kind()); }

}  // namespace

const char* to_string(CovariateGen g) {
    switch (g) {
    case CovariateGen::iid_gauss: return "iid_gauss";
    case CovariateGen::gauss_plus_timeindex: return "gauss_plus_timeindex";
    case CovariateGen::from_file: return "from_file";
    }
    return "?";
}

const char* to_string(MleStart s) {
    switch (s) {
    case MleStart::truth: return "truth";
    case MleStart::cold: return "cold";
    case MleStart::initial: return "initial";
    }
    return "?";
}

LinkSpec Scenario::links() const { return {link_from_name(s_link), link_from_name(sigma2_link)}; }

Eigen::Index Scenario::n_obs(std::size_t i) const {
    if (covariates == CovariateGen::from_file && covariate_template) return covariate_template->records.at(i).n();
    return n_schedule.size() == 1 ? n_schedule.front() : n_schedule.at(i);
}

void Scenario::validate() const {
    if (n_individuals < 1) config_error("N", "must be at least 1");
    if (covariates == CovariateGen::from_file) {
        if (!covariate_template) config_error("covariate_file", "from_file covariates need a covariate file");
        if (covariate_template->size() != n_individuals)
            config_error("N", "does not match the number of individuals in the covariate file");
        if (covariate_template->px() != theta_true.beta.size() || covariate_template->pz() != theta_true.alpha.size() ||
            covariate_template->pw() != theta_true.tau.size())
            config_error("theta_true", "dimensions do not match the covariate file");
    } else {
        if (n_schedule.empty()) config_error("n_schedule", "must not be empty");
        if (n_schedule.size() != 1 && n_schedule.size() != n_individuals)
            config_error("n_schedule", "needs one entry or one entry per individual");
        for (auto n : n_schedule)
            if (n < 1) config_error("n_schedule", "every individual needs at least one observation");
    }
    if (theta_true.beta.size() < 1 || theta_true.alpha.size() < 1 || theta_true.tau.size() < 1)
        config_error("theta_true", "beta, alpha and tau need at least one entry");
    if (covariates == CovariateGen::gauss_plus_timeindex &&
        (theta_true.beta.size() < 2 || theta_true.alpha.size() < 2 || theta_true.tau.size() < 2))
        config_error("covariates", "gauss_plus_timeindex needs two-dimensional beta, alpha and tau");
    Theta th = theta_true;
    if (family.fixed_lambda) th.lambda = family.lambda;
    if (!th.gig().interior() || !std::isfinite(th.lambda)) config_error("theta_true", "(lambda, delta, gamma) must be interior");
    if (family.fixed_lambda && theta_true.lambda != family.lambda)
        config_error("theta_true.lambda", "differs from the fixed lambda of the family");
    (void)links();
}

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) {
    // SplitMix64 output at counter position `trial` of the stream seeded by master.
    std::uint64_t z = master + (trial + 1) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SimulatedData simulate_dataset(const Scenario& sc) { return simulate_dataset(sc, sc.seed); }

SimulatedData simulate_dataset(const Scenario& sc, std::uint64_t seed) {
    sc.validate();
    const LinkSpec links = sc.links();
    Theta th = sc.theta_true;
    if (sc.family.fixed_lambda) th.lambda = sc.family.lambda;
    const dist::GigParams gig = th.gig();
    const Eigen::Index pb = th.beta.size(), pa = th.alpha.size(), pt = th.tau.size();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    SimulatedData out;
    out.v.resize(static_cast<Eigen::Index>(sc.n_individuals));
    out.data.records.reserve(sc.n_individuals);
    for (std::size_t i = 0; i < sc.n_individuals; ++i) {
        const double v = dist::gig_draw(gig, rng);
        out.v[static_cast<Eigen::Index>(i)] = v;
        IndividualRecord rec;
        const Eigen::Index n = sc.n_obs(i);
        if (sc.covariates == CovariateGen::from_file) {
            const IndividualRecord& t = sc.covariate_template->records[i];
            rec.id = t.id;
            rec.x = t.x;
            rec.z = t.z;
            rec.w = t.w;
        } else {
            rec.id = std::to_string(i + 1);
            rec.x.resize(n, pb);
            rec.z.resize(n, pa);
            rec.w.resize(n, pt);
            for (Eigen::Index j = 0; j < n; ++j) {
                for (Eigen::Index k = 0; k < pb; ++k) rec.x(j, k) = nd(rng);
                for (Eigen::Index k = 0; k < pa; ++k) rec.z(j, k) = nd(rng);
                for (Eigen::Index k = 0; k < pt; ++k) rec.w(j, k) = nd(rng);
                if (sc.covariates == CovariateGen::gauss_plus_timeindex) {
                    const auto time = static_cast<double>(j);
                    rec.x(j, 1) = time;
                    rec.z(j, 1) = time;
                    rec.w(j, 1) = time;
                }
            }
        }
        rec.y.resize(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double s = links.s.value(rec.z.row(j), th.alpha);
            const double sig2 = links.sigma2.value(rec.w.row(j), th.tau);
            rec.y[j] = rec.x.row(j).dot(th.beta) + s * v + std::sqrt(v * sig2) * nd(rng);
        }
        out.data.records.push_back(std::move(rec));
    }
    return out;
}

Theta cold_start(const Theta& like, const Family& family) {
    Theta th;
    th.beta = Eigen::VectorXd::Constant(like.beta.size(), 1e-8);
    th.alpha = Eigen::VectorXd::Constant(like.alpha.size(), 1e-8);
    th.tau = Eigen::VectorXd::Constant(like.tau.size(), 1e-8);
    th.lambda = family.fixed_lambda ? family.lambda : 1e-8;
    th.delta = 1e-4;
    th.gamma = 1e-3;
    return th;
}

std::size_t MethodReport::used() const {
    return static_cast<std::size_t>(
        std::count_if(trials.begin(), trials.end(), [](const TrialRecord& t) { return t.excluded.empty(); }));
}

std::size_t MethodReport::excluded() const { return trials.size() - used(); }

Eigen::VectorXd MethodReport::coverage() const {
    Eigen::Index p = 0;
    for (const auto& t : trials)
        if (t.excluded.empty()) p = t.covered.size();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
    std::size_t n = 0;
    for (const auto& t : trials) {
        if (!t.excluded.empty()) continue;
        c += t.covered.cast<double>();
        ++n;
    }
    if (n == 0) return Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    return c / static_cast<double>(n);
}

Eigen::VectorXd MethodReport::rmse(const Eigen::VectorXd& truth) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(truth.size() + 1);
    std::size_t n = 0;
    for (const auto& t : trials) {
        if (!t.fit_ok || t.estimate.size() != truth.size() || !t.estimate.allFinite()) continue;
        const Eigen::VectorXd d = (t.estimate - truth).cwiseAbs2();
        acc.head(truth.size()) += d;
        acc[truth.size()] += d.sum();
        ++n;
    }
    if (n == 0) return Eigen::VectorXd::Constant(truth.size() + 1, std::numeric_limits<double>::quiet_NaN());
    return (acc / static_cast<double>(n)).cwiseSqrt();
}

std::vector<std::pair<std::string, std::size_t>> MethodReport::exclusion_counts() const {
    std::map<std::string, std::size_t> m;
    for (const auto& t : trials)
        if (!t.excluded.empty()) ++m[t.excluded];
    return {m.begin(), m.end()};
}

const MethodReport* McReport::find(Method m) const {
    for (const auto& r : methods)
        if (r.method == m) return &r;
    return nullptr;
}

McReport mc_run(const Scenario& sc, const McOptions& opt) {
    sc.validate();
    if (opt.trials < 1) config_error("trials", "must be at least 1");
    if (!(opt.level > 0.0 && opt.level < 1.0)) config_error("level", "must lie in (0, 1)");
    const LinkSpec links = sc.links();
    Theta truth = sc.theta_true;
    if (sc.family.fixed_lambda) truth.lambda = sc.family.lambda;
    const ParamLayout lay(truth.beta.size(), truth.alpha.size(), truth.tau.size(), sc.family);

    McReport rep;
    rep.scenario = sc.name;
    rep.n_individuals = sc.n_individuals;
    rep.trials_total = opt.trials;
    rep.seed = sc.seed;
    rep.level = opt.level;
    rep.info_variant = to_string(opt.info);
    rep.names = lay.names();
    rep.truth = lay.pack(truth);
    std::vector<Method> methods;
    for (Method m : opt.methods)
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    std::sort(methods.begin(), methods.end());
    for (Method m : methods) {
        MethodReport mr;
        mr.method = m;
        mr.trials.resize(opt.trials);
        rep.methods.push_back(std::move(mr));
    }
    if (methods.empty()) return rep;
    const bool need_initial =
        std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::mle; }) ||
        opt.mle_start == MleStart::initial;

    parallel_for(opt.trials, [&](std::size_t t) {
        const std::uint64_t seed = trial_seed(sc.seed, t);
        const SimulatedData sim = simulate_dataset(sc, seed);
        const LongitudinalDataset& ds = sim.data;

        std::optional<FitResult> init;
        std::string init_error;
        if (need_initial) {
            try {
                init = initial_fit(ds, links, sc.family, opt.fit);
            } catch (const Error& e) {
                init_error = reason_of(e);
            }
        }
        for (std::size_t k = 0; k < methods.size(); ++k) {
            TrialRecord& rec = rep.methods[k].trials[t];
            rec.trial = t;
            rec.seed = seed;
            std::optional<FitResult> fit;
            try {
                switch (methods[k]) {
                case Method::initial:
                    if (!init) fail(ErrorKind::optim_failed, init_error);
                    fit = init;
                    break;
                case Method::one_step:
                    if (!init) fail(ErrorKind::optim_failed, init_error);
                    fit = one_step(ds, links, sc.family, init->theta_hat, opt.fit);
                    break;
                case Method::mle: {
                    Theta start = truth;
                    if (opt.mle_start == MleStart::cold) start = cold_start(truth, sc.family);
                    if (opt.mle_start == MleStart::initial) {
                        if (!init) fail(ErrorKind::optim_failed, init_error);
                        start = init->theta_hat;
                    }
                    fit = mle(ds, links, sc.family, start, opt.fit);
                    break;
                }
                }
            } catch (const Error& e) {
                rec.excluded = (methods[k] != Method::mle && !init) ? init_error : reason_of(e);
                continue;
            }
            rec.fit_ok = true;
            rec.estimate = fit->estimate;
            rec.loglik = fit->loglik_value;
            rec.converged = fit->converged;
            rec.at_boundary = fit->at_boundary;
            rec.iterations = fit->iterations;
            rec.wall_time = fit->wall_time;
            if (methods[k] == Method::mle && fit->singular_hessian) {
                rec.excluded = to_string(ErrorKind::singular_hessian);
                continue;
            }
            if (!fit->converged) {
                rec.excluded = "NonConvergence";
                continue;
            }
            try {
                studentize(ds, links, *fit, opt.info, opt.level);
            } catch (const Error& e) {
                rec.excluded = reason_of(e);
                continue;
            }
            rec.se = fit->se;
            rec.wald = wald_statistic(*fit, truth);
            rec.standardized = standardized_estimate(*fit, truth);
            rec.covered.resize(rec.estimate.size());
            for (Eigen::Index c = 0; c < rec.estimate.size(); ++c)
                rec.covered[c] = (fit->ci_low[c] <= rep.truth[c] && rep.truth[c] <= fit->ci_high[c]) ? 1 : 0;
        }
    });
    return rep;
}

void emit_report(const McReport& rep, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create directory '" + dir + "': " + ec.message());
    const fs::path root(dir);
    const auto& names = rep.names;
    auto header = [&](std::ostream& os, const std::string& lead, const std::string& prefix = "") {
        os << lead;
        for (const auto& n : names) os << ',' << prefix << n;
    };

    {
        json s;
        s["scenario"] = rep.scenario;
        s["N"] = rep.n_individuals;
        s["trials_total"] = rep.trials_total;
        s["seed"] = rep.seed;
        s["level"] = rep.level;
        s["info_variant"] = rep.info_variant;
        s["names"] = names;
        s["truth"] = to_array(rep.truth);
        json ms = json::array();
        for (const auto& m : rep.methods) {
            json jm;
            jm["method"] = to_string(m.method);
            jm["used"] = m.used();
            jm["excluded"] = m.excluded();
            json ex = json::object();
            for (const auto& [reason, count] : m.exclusion_counts()) ex[reason] = count;
            jm["exclusions"] = ex;
            ms.push_back(jm);
        }
        s["methods"] = ms;
        auto os = open_out(root / "summary.json");
        os << s.dump(2) << '\n';
    }
    {
        auto os = open_out(root / "trials.csv");
        os << "method,trial,seed,fit_ok,excluded,loglik,converged,at_boundary,iterations,wald";
        for (const char* pre : {"est_", "se_", "std_", "cov_"})
            for (const auto& n : names) os << ',' << pre << n;
        os << '\n';
        for (const auto& m : rep.methods)
            for (const auto& t : m.trials) {
                os << to_string(m.method) << ',' << t.trial << ',' << t.seed << ',' << (t.fit_ok ? 1 : 0) << ','
                   << t.excluded << ',' << fmt(t.loglik) << ',' << (t.converged ? 1 : 0) << ','
                   << (t.at_boundary ? 1 : 0) << ',' << t.iterations << ',' << fmt(t.wald);
                auto put = [&](const Eigen::VectorXd& v) {
                    for (std::size_t k = 0; k < names.size(); ++k)
                        os << ',' << (static_cast<Eigen::Index>(k) < v.size() ? fmt(v[static_cast<Eigen::Index>(k)]) : "");
                };
                put(t.estimate);
                put(t.se);
                put(t.standardized);
                for (std::size_t k = 0; k < names.size(); ++k)
                    os << ','
                       << (static_cast<Eigen::Index>(k) < t.covered.size()
                               ? std::to_string(t.covered[static_cast<Eigen::Index>(k)])
                               : "");
                os << '\n';
            }
    }
    {
        auto os = open_out(root / "coverage.csv");
        header(os, "method,used,excluded");
        os << '\n';
        for (const auto& m : rep.methods) {
            os << to_string(m.method) << ',' << m.used() << ',' << m.excluded();
            const Eigen::VectorXd c = m.coverage();
            for (std::size_t k = 0; k < names.size(); ++k)
                os << ',' << (static_cast<Eigen::Index>(k) < c.size() ? fmt(c[static_cast<Eigen::Index>(k)]) : "nan");
            os << '\n';
        }
    }
    {
        auto os = open_out(root / "standardized.csv");
        header(os, "method,trial");
        os << '\n';
        for (const auto& m : rep.methods)
            for (const auto& t : m.trials) {
                if (!t.excluded.empty()) continue;
                os << to_string(m.method) << ',' << t.trial;
                for (Eigen::Index k = 0; k < t.standardized.size(); ++k) os << ',' << fmt(t.standardized[k]);
                os << '\n';
            }
    }
    {
        auto os = open_out(root / "chisq.csv");
        os << "method,trial,df,wald\n";
        for (const auto& m : rep.methods)
            for (const auto& t : m.trials) {
                if (!t.excluded.empty()) continue;
                os << to_string(m.method) << ',' << t.trial << ',' << names.size() << ',' << fmt(t.wald) << '\n';
            }
    }
    {
        auto os = open_out(root / "rmse.csv");
        header(os, "method,N,with_estimate");
        os << ",vector\n";
        for (const auto& m : rep.methods) {
            const auto n_est = std::count_if(m.trials.begin(), m.trials.end(), [](const TrialRecord& t) { return t.fit_ok; });
            os << to_string(m.method) << ',' << rep.n_individuals << ',' << n_est;
            const Eigen::VectorXd r = m.rmse(rep.truth);
            for (Eigen::Index k = 0; k < r.size(); ++k) os << ',' << fmt(r[k]);
            os << '\n';
        }
    }
    {
        // Wall times vary run to run; they are kept apart from the deterministic files.
        auto os = open_out(root / "timing.csv");
        os << "method,trial,wall_time\n";
        for (const auto& m : rep.methods)
            for (const auto& t : m.trials)
                if (t.fit_ok) os << to_string(m.method) << ',' << t.trial << ',' << fmt(t.wall_time) << '\n';
        os << "#method,q05,q50,q95,mean\n";
        for (const auto& m : rep.methods) {
            std::vector<double> w;
            for (const auto& t : m.trials)
                if (t.fit_ok) w.push_back(t.wall_time);
            if (w.empty()) continue;
            std::sort(w.begin(), w.end());
            auto q = [&](double p) { return w[static_cast<std::size_t>(std::lround(p * static_cast<double>(w.size() - 1)))]; };
            double mean = 0.0;
            for (double x : w) mean += x;
            mean /= static_cast<double>(w.size());
            os << '#' << to_string(m.method) << ',' << fmt(q(0.05)) << ',' << fmt(q(0.5)) << ',' << fmt(q(0.95)) << ','
               << fmt(mean) << '\n';
        }
    }
}

McReport read_report(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    McReport rep;
    json s;
    {
        auto is = open_in(root / "summary.json");
        try {
            is >> s;
        } catch (const json::exception& e) {
            fail(ErrorKind::io, "malformed '" + (root / "summary.json").string() + "': " + e.what());
        }
    }
    rep.scenario = s.at("scenario").get<std::string>();
    rep.n_individuals = s.at("N").get<std::size_t>();
    rep.trials_total = s.at("trials_total").get<std::size_t>();
    rep.seed = s.at("seed").get<std::uint64_t>();
    rep.level = s.at("level").get<double>();
    rep.info_variant = s.at("info_variant").get<std::string>();
    rep.names = s.at("names").get<std::vector<std::string>>();
    rep.truth = get_vector(s.at("truth"), "truth");
    for (const auto& jm : s.at("methods")) {
        MethodReport mr;
        mr.method = method_from_string(jm.at("method").get<std::string>());
        mr.trials.resize(rep.trials_total);
        rep.methods.push_back(std::move(mr));
    }
    auto method_slot = [&](const std::string& name) -> MethodReport& {
        const Method m = method_from_string(name);
        for (auto& r : rep.methods)
            if (r.method == m) return r;
        fail(ErrorKind::io, "trials.csv names a method missing from summary.json: " + name);
    };

    const auto p = rep.names.size();
    {
        auto is = open_in(root / "trials.csv");
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto f = split(line);
            if (f.size() != 10 + 4 * p) fail(ErrorKind::io, "malformed row in trials.csv: " + line);
            MethodReport& mr = method_slot(f[0]);
            const auto t = static_cast<std::size_t>(std::stoull(f[1]));
            if (t >= mr.trials.size()) fail(ErrorKind::io, "trial index out of range in trials.csv");
            TrialRecord& r = mr.trials[t];
            r.trial = t;
            r.seed = std::stoull(f[2]);
            r.fit_ok = f[3] == "1";
            r.excluded = f[4];
            r.loglik = parse_double(f[5]);
            r.converged = f[6] == "1";
            r.at_boundary = f[7] == "1";
            r.iterations = std::stoi(f[8]);
            r.wald = parse_double(f[9]);
            auto get = [&](std::size_t off) {
                if (f[off].empty()) return Eigen::VectorXd();
                Eigen::VectorXd v(static_cast<Eigen::Index>(p));
                for (std::size_t k = 0; k < p; ++k) v[static_cast<Eigen::Index>(k)] = parse_double(f[off + k]);
                return v;
            };
            r.estimate = get(10);
            r.se = get(10 + p);
            r.standardized = get(10 + 2 * p);
            if (!f[10 + 3 * p].empty()) {
                r.covered.resize(static_cast<Eigen::Index>(p));
                for (std::size_t k = 0; k < p; ++k) r.covered[static_cast<Eigen::Index>(k)] = std::stoi(f[10 + 3 * p + k]);
            }
        }
    }
    if (fs::exists(root / "timing.csv")) {
        auto is = open_in(root / "timing.csv");
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto f = split(line);
            if (f.size() != 3) fail(ErrorKind::io, "malformed row in timing.csv: " + line);
            MethodReport& mr = method_slot(f[0]);
            mr.trials.at(std::stoull(f[1])).wall_time = parse_double(f[2]);
        }
    }
    return rep;
}

json theta_to_json(const Theta& th) {
    return json{{"beta", to_array(th.beta)}, {"alpha", to_array(th.alpha)}, {"tau", to_array(th.tau)},
                {"lambda", th.lambda},       {"delta", th.delta},           {"gamma", th.gamma}};
}

Theta theta_from_json(const json& j) {
    check_keys(j, "theta", {"beta", "alpha", "tau", "lambda", "delta", "gamma"});
    Theta th;
    for (const char* k : {"beta", "alpha", "tau", "delta", "gamma"})
        if (!j.contains(k)) config_error(std::string("theta.") + k, "missing");
    th.beta = get_vector(j["beta"], "theta.beta");
    th.alpha = get_vector(j["alpha"], "theta.alpha");
    th.tau = get_vector(j["tau"], "theta.tau");
    th.lambda = j.contains("lambda") ? get_number(j["lambda"], "theta.lambda") : -0.5;
    th.delta = get_number(j["delta"], "theta.delta");
    th.gamma = get_number(j["gamma"], "theta.gamma");
    return th;
}

json family_to_json(const Family& f) {
    if (!f.fixed_lambda) return "full";
    return json{{"fixed_lambda", f.lambda}};
}

Family family_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "full") return Family::full();
        if (s == "ig" || s == "inverse_gaussian") return Family::fixed(-0.5);
        config_error("family", "expected \"full\", \"ig\" or {\"fixed_lambda\": value}");
    }
    check_keys(j, "family", {"fixed_lambda"});
    if (!j.contains("fixed_lambda")) config_error("family.fixed_lambda", "missing");
    return Family::fixed(get_number(j["fixed_lambda"], "family.fixed_lambda"));
}

json scenario_to_json(const Scenario& sc) {
    json j;
    j["name"] = sc.name;
    j["N"] = sc.n_individuals;
    if (sc.n_schedule.size() == 1)
        j["n_schedule"] = sc.n_schedule.front();
    else
        j["n_schedule"] = sc.n_schedule;
    j["covariates"] = to_string(sc.covariates);
    if (!sc.covariate_file.empty()) j["covariate_file"] = sc.covariate_file;
    j["links"] = {{"s", sc.s_link}, {"sigma2", sc.sigma2_link}};
    j["theta_true"] = theta_to_json(sc.theta_true);
    j["family"] = family_to_json(sc.family);
    j["seed"] = sc.seed;
    return j;
}

Scenario scenario_from_json(const json& j) {
    check_keys(j, "scenario", {"name", "N", "n_schedule", "covariates", "covariate_file", "links", "theta_true", "family", "seed"});
    Scenario sc;
    if (j.contains("name")) sc.name = get_string(j["name"], "scenario.name");
    if (j.contains("n_schedule")) {
        const json& ns = j["n_schedule"];
        sc.n_schedule.clear();
        if (ns.is_array()) {
            for (std::size_t k = 0; k < ns.size(); ++k)
                sc.n_schedule.push_back(get_integer(ns[k], "scenario.n_schedule[" + std::to_string(k) + "]"));
            if (!j.contains("N")) sc.n_individuals = sc.n_schedule.size();
        } else {
            sc.n_schedule.push_back(get_integer(ns, "scenario.n_schedule"));
        }
    }
    if (j.contains("N")) {
        const auto n = get_integer(j["N"], "scenario.N");
        if (n < 1) config_error("scenario.N", "must be at least 1");
        sc.n_individuals = static_cast<std::size_t>(n);
    }
    if (j.contains("covariates")) {
        const auto g = get_string(j["covariates"], "scenario.covariates");
        if (g == "iid_gauss") sc.covariates = CovariateGen::iid_gauss;
        else if (g == "gauss_plus_timeindex") sc.covariates = CovariateGen::gauss_plus_timeindex;
        else if (g == "from_file") sc.covariates = CovariateGen::from_file;
        else config_error("scenario.covariates", "expected iid_gauss, gauss_plus_timeindex or from_file");
    }
    if (j.contains("covariate_file")) sc.covariate_file = get_string(j["covariate_file"], "scenario.covariate_file");
    if (j.contains("links")) {
        check_keys(j["links"], "scenario.links", {"s", "sigma2"});
        if (j["links"].contains("s")) sc.s_link = get_string(j["links"]["s"], "scenario.links.s");
        if (j["links"].contains("sigma2")) sc.sigma2_link = get_string(j["links"]["sigma2"], "scenario.links.sigma2");
    }
    if (j.contains("family")) sc.family = family_from_json(j["family"]);
    if (!j.contains("theta_true")) config_error("scenario.theta_true", "missing");
    sc.theta_true = theta_from_json(j["theta_true"]);
    if (sc.family.fixed_lambda) sc.theta_true.lambda = sc.family.lambda;
    if (j.contains("seed")) sc.seed = static_cast<std::uint64_t>(get_integer(j["seed"], "scenario.seed"));
    try {
        (void)sc.links();
    } catch (const Error& e) {
        config_error("scenario.links", e.what());
    }
    return sc;
}

Method method_from_string(const std::string& s) {
    if (s == "initial") return Method::initial;
    if (s == "one_step" || s == "one-step") return Method::one_step;
    if (s == "mle") return Method::mle;
    fail(ErrorKind::config, "unknown method '" + s + "' (expected initial, one_step or mle)");
}

json mc_options_to_json(const McOptions& o) {
    json j;
    j["trials"] = o.trials;
    json ms = json::array();
    for (Method m : o.methods) ms.push_back(to_string(m));
    j["methods"] = ms;
    j["level"] = o.level;
    j["info"] = to_string(o.info);
    j["mle_start"] = to_string(o.mle_start);
    j["fit"] = {{"margin", o.fit.margin},     {"grad_tol", o.fit.grad_tol},   {"step_tol", o.fit.step_tol},
                {"max_iter", o.fit.max_iter}, {"rcond_min", o.fit.rcond_min}};
    return j;
}

McOptions mc_options_from_json(const json& j, McOptions o) {
    check_keys(j, "", {"trials", "methods", "level", "info", "mle_start", "fit"});
    if (j.contains("trials")) {
        const auto t = get_integer(j["trials"], "trials");
        if (t < 1) config_error("trials", "must be at least 1");
        o.trials = static_cast<std::size_t>(t);
    }
    if (j.contains("methods")) {
        if (!j["methods"].is_array()) config_error("methods", "expected an array of method names");
        o.methods.clear();
        for (const auto& m : j["methods"]) {
            try {
                o.methods.push_back(method_from_string(get_string(m, "methods")));
            } catch (const Error& e) {
                config_error("methods", e.what());
            }
        }
    }
    if (j.contains("level")) {
        o.level = get_number(j["level"], "level");
        if (!(o.level > 0.0 && o.level < 1.0)) config_error("level", "must lie in (0, 1)");
    }
    if (j.contains("info")) {
        const auto s = get_string(j["info"], "info");
        if (s == "observed_info") o.info = InfoVariant::observed_info;
        else if (s == "outer_product") o.info = InfoVariant::outer_product;
        else config_error("info", "expected observed_info or outer_product");
    }
    if (j.contains("mle_start")) {
        const auto s = get_string(j["mle_start"], "mle_start");
        if (s == "truth") o.mle_start = MleStart::truth;
        else if (s == "cold") o.mle_start = MleStart::cold;
        else if (s == "initial") o.mle_start = MleStart::initial;
        else config_error("mle_start", "expected truth, cold or initial");
    }
    if (j.contains("fit")) {
        const json& f = j["fit"];
        check_keys(f, "fit", {"margin", "grad_tol", "step_tol", "max_iter", "rcond_min"});
        if (f.contains("margin")) o.fit.margin = get_number(f["margin"], "fit.margin");
        if (f.contains("grad_tol")) o.fit.grad_tol = get_number(f["grad_tol"], "fit.grad_tol");
        if (f.contains("step_tol")) o.fit.step_tol = get_number(f["step_tol"], "fit.step_tol");
        if (f.contains("max_iter")) o.fit.max_iter = static_cast<int>(get_integer(f["max_iter"], "fit.max_iter"));
        if (f.contains("rcond_min")) o.fit.rcond_min = get_number(f["rcond_min"], "fit.rcond_min");
        if (!(o.fit.margin >= 0.0 && o.fit.margin < 0.5)) config_error("fit.margin", "must lie in [0, 0.5)");
        if (o.fit.max_iter < 1) config_error("fit.max_iter", "must be at least 1");
    }
    return o;
}

namespace {

Theta make_theta(std::initializer_list<double> beta, std::initializer_list<double> alpha,
                 std::initializer_list<double> tau, double lambda, double delta, double gamma) {
    Theta th;
    th.beta = Eigen::Map<const Eigen::VectorXd>(beta.begin(), static_cast<Eigen::Index>(beta.size()));
    th.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.begin(), static_cast<Eigen::Index>(alpha.size()));
    th.tau = Eigen::Map<const Eigen::VectorXd>(tau.begin(), static_cast<Eigen::Index>(tau.size()));
    th.lambda = lambda;
    th.delta = delta;
    th.gamma = gamma;
    return th;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"scenario-i", "scenario-ii", "scenario-i-prime", "scenario-ii-prime", "paper-cold-start",
            "table4-case-i-desk"};
}

Preset preset(const std::string& name) {
    Preset p;
    Scenario& sc = p.scenario;
    McOptions& mc = p.mc;
    sc.name = name;
    sc.n_individuals = 1000;
    sc.n_schedule = {10};
    sc.seed = 20240101;
    mc.methods = {Method::initial, Method::one_step, Method::mle};
    mc.trials = 1000;
    if (name == "scenario-i") {
        sc.theta_true = make_theta({0.3, 0.5}, {-0.04, 0.05}, {0.05, 0.07}, 1.2, 1.5, 2.0);
        sc.family = Family::full();
    } else if (name == "scenario-ii") {
        sc.covariates = CovariateGen::gauss_plus_timeindex;
        sc.theta_true = make_theta({0.3, 1.2}, {-0.4, 0.8}, {0.05, 0.007}, 0.9, 1.2, 0.9);
        sc.family = Family::full();
    } else if (name == "scenario-i-prime" || name == "scenario-ii-prime" || name == "table4-case-i-desk") {
        sc.theta_true = make_theta({3.0, 5.0}, {-4.0, 5.0}, {0.05, 0.07}, -0.5, 1.5, 0.7);
        sc.family = Family::fixed(-0.5);
        mc.mle_start = name == "scenario-ii-prime" ? MleStart::cold : MleStart::truth;
        if (name == "table4-case-i-desk") mc.trials = 300;
    } else if (name == "paper-cold-start") {
        sc.theta_true = make_theta({-3.0, 5.0}, {-3.0, 4.0}, {0.02, -0.05}, -0.5, 1.6, 1.0);
        sc.family = Family::fixed(-0.5);
        mc.mle_start = MleStart::cold;
        mc.methods = {Method::one_step, Method::mle};
        mc.trials = 10;
    } else {
        std::string known;
        for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
        fail(ErrorKind::config, "unknown preset '" + name + "' (known: " + known + ")");
    }
    return p;
}

}  // namespace ghme
