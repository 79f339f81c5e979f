#include "commands.hpp"

#include "config.hpp"
#include "csv.hpp"

#include "ghme/estimate.hpp"
#include "ghme/harness.hpp"
#include "ghme/model.hpp"
#include "ghme/parallel.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace ghme::cli {

using nlohmann::json;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return exit_config;
    case ErrorKind::data:
    case ErrorKind::io: return exit_data;
    default: return exit_numerical;
    }
}

const char* remediation_hint(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::degenerate_skew: return "skew link is ~0; fix λ or use fixed_lambda family";
    case ErrorKind::singular_hessian:
        return "the Hessian at the starting value is singular; use method mle or check that every covariate varies";
    case ErrorKind::indefinite_info:
        return "the information matrix is not positive definite; the estimate may sit on the parameter box, "
               "try info outer_product or a simpler model";
    case ErrorKind::max_iter_exceeded: return "raise fit.max_iter or start the MLE from the initial estimate";
    case ErrorKind::optim_failed:
        return "a least-squares stage failed; check covariate scaling and that the link choices suit the data";
    case ErrorKind::infeasible_moments:
    case ErrorKind::inversion_failed:
    case ErrorKind::no_solution:
        return "the residual moments are inconsistent with a GIG random effect; use the fixed_lambda family";
    case ErrorKind::non_finite:
    case ErrorKind::domain: return "check the data for extreme values and the start for admissibility";
    case ErrorKind::dimension: return "the parameter dimensions do not match the declared covariate roles";
    default: return "";
    }
}

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::optional<std::string> out;
    std::optional<std::string> preset;
};

std::string fmt6(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    os << j.dump(2) << '\n';
    if (!os) fail(ErrorKind::io, "write to '" + path + "' failed");
}

std::string out_dir(const Globals& g, const RunConfig& cfg) {
    const std::string dir = g.out ? *g.out : cfg.out ? *cfg.out : std::string("ghme_out");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

std::string join(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

void setup_threads(const Globals& g, const RunConfig& cfg) {
    set_thread_count(resolve_thread_count(g.threads > 0 ? g.threads : cfg.threads));
}

// Scenario from --preset and/or the "scenario" section, with the top-level
// links, family and seed applied on top.
Scenario build_scenario(const Globals& g, const RunConfig& cfg, std::optional<Preset>* preset_out = nullptr) {
    std::optional<Preset> p;
    if (g.preset) p = preset(*g.preset);
    if (!p && !cfg.has_scenario())
        fail(ErrorKind::config, "field 'scenario': missing (give a scenario section or --preset)");
    Scenario sc = cfg.scenario(p ? std::optional<Scenario>(p->scenario) : std::nullopt);
    if (cfg.links_given) {
        sc.s_link = cfg.s_link;
        sc.sigma2_link = cfg.sigma2_link;
    }
    if (cfg.family_given) {
        sc.family = cfg.family;
        if (sc.family.fixed_lambda) sc.theta_true.lambda = sc.family.lambda;
    }
    if (g.seed) sc.seed = *g.seed;
    else if (cfg.seed) sc.seed = *cfg.seed;
    sc.validate();
    if (preset_out) *preset_out = p;
    return sc;
}

void print_theta(std::ostream& os, const Theta& th, const Family& fam) {
    const ParamLayout lay(th.beta.size(), th.alpha.size(), th.tau.size(), fam);
    const auto names = lay.names();
    const Eigen::VectorXd v = lay.pack(th);
    for (std::size_t k = 0; k < names.size(); ++k)
        os << (k ? ", " : "") << names[k] << "=" << fmt6(v[static_cast<Eigen::Index>(k)]);
    if (fam.fixed_lambda) os << " (lambda fixed at " << fmt6(fam.lambda) << ")";
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const Globals& g) {
    const RunConfig cfg = load_config(g.config);
    setup_threads(g, cfg);
    const Scenario sc = build_scenario(g, cfg);
    const std::string dir = out_dir(g, cfg);

    const SimulatedData sim = simulate_dataset(sc);
    write_dataset_csv(join(dir, "data.csv"), sim.data);
    {
        std::ofstream os(join(dir, "latent.csv"), std::ios::binary);
        if (!os) fail(ErrorKind::io, "cannot open '" + join(dir, "latent.csv") + "' for writing");
        os << "id,v\n";
        for (std::size_t i = 0; i < sim.data.size(); ++i)
            os << sim.data.records[i].id << ',' << format_full(sim.v[static_cast<Eigen::Index>(i)]) << '\n';
        if (!os) fail(ErrorKind::io, "write to latent.csv failed");
    }
    const RoleMap roles = default_roles(sim.data);
    json dc;
    dc["data"] = {{"path", "data.csv"}, {"id", roles.id}, {"y", roles.y}, {"x", roles.x}, {"z", roles.z}, {"w", roles.w}};
    dc["links"] = {{"s", sc.s_link}, {"sigma2", sc.sigma2_link}};
    dc["family"] = family_to_json(sc.family);
    write_json(join(dir, "data_config.json"), dc);
    json truth = theta_to_json(sc.theta_true);
    write_json(join(dir, "truth.json"), {{"theta_true", truth}, {"scenario", scenario_to_json(sc)}});

    std::cout << "scenario " << sc.name << ": N=" << sim.data.size() << ", total observations "
              << sim.data.total_obs() << ", seed " << sc.seed << "\n";
    std::cout << "theta_true: ";
    print_theta(std::cout, sc.theta_true, sc.family);
    std::cout << "\nwrote " << join(dir, "data.csv") << ", latent.csv, data_config.json, truth.json\n";
    return exit_ok;
}

// --------------------------------------------------------------------- fit

struct FitInput {
    LongitudinalDataset data;
    LinkSpec links;
    std::string s_link, sigma2_link;
    Family family;
    std::optional<Theta> truth;
    std::string source;
};

FitInput load_fit_input(const Globals& g, const RunConfig& cfg) {
    FitInput in;
    if (cfg.data_path) {
        in.data = dataset_from_csv(read_csv(*cfg.data_path), cfg.roles, true);
        in.data.validate();
        in.s_link = cfg.s_link;
        in.sigma2_link = cfg.sigma2_link;
        in.family = cfg.family;
        in.source = *cfg.data_path;
    } else {
        const Scenario sc = build_scenario(g, cfg);
        in.data = simulate_dataset(sc).data;
        in.s_link = sc.s_link;
        in.sigma2_link = sc.sigma2_link;
        in.family = sc.family;
        in.truth = sc.theta_true;
        in.source = "simulated scenario " + sc.name + " (seed " + std::to_string(sc.seed) + ")";
    }
    in.links = {link_from_name(in.s_link), link_from_name(in.sigma2_link)};
    return in;
}

void check_dims(const Theta& th, const LongitudinalDataset& ds, const std::string& what) {
    if (th.beta.size() != ds.px() || th.alpha.size() != ds.pz() || th.tau.size() != ds.pw()) {
        std::ostringstream os;
        os << what << " has (beta, alpha, tau) lengths (" << th.beta.size() << ", " << th.alpha.size() << ", "
           << th.tau.size() << ") but the data have " << ds.px() << ", " << ds.pz() << ", " << ds.pw()
           << " covariate columns";
        fail(ErrorKind::config, os.str());
    }
}

// Standard errors from an information matrix, or nullopt when it is not
// positive definite.
std::optional<Eigen::VectorXd> se_from_info(const Eigen::MatrixXd& info) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    if (es.info() != Eigen::Success) return std::nullopt;
    const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
    if (!(lmin > 1e-12 * std::max(lmax, 1e-300))) return std::nullopt;
    const Eigen::MatrixXd inv =
        es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    return Eigen::VectorXd(inv.diagonal().cwiseSqrt());
}

struct MethodOutput {
    FitResult fit;
    std::optional<Eigen::VectorXd> se_other;  // the non-chosen variant, when both are requested
    std::string studentize_error;
};

json fit_to_json(const MethodOutput& m, bool info_both) {
    const FitResult& f = m.fit;
    json j;
    j["method"] = to_string(f.method);
    j["theta"] = theta_to_json(f.theta_hat);
    j["estimate"] = to_std(f.estimate);
    j["loglik"] = f.loglik_value;
    j["converged"] = f.converged;
    j["iterations"] = f.iterations;
    j["wall_time"] = f.wall_time;
    j["at_boundary"] = f.at_boundary;
    j["warnings"] = f.warnings;
    if (f.studentized) {
        j["info_variant"] = to_string(f.info_variant);
        j["level"] = f.level;
        j["se"] = to_std(f.se);
        j["ci_low"] = to_std(f.ci_low);
        j["ci_high"] = to_std(f.ci_high);
        if (info_both) {
            const InfoVariant other = f.info_variant == InfoVariant::observed_info ? InfoVariant::outer_product
                                                                                   : InfoVariant::observed_info;
            j["se_" + std::string(to_string(other))] = m.se_other ? json(to_std(*m.se_other)) : json(nullptr);
        }
    } else if (!m.studentize_error.empty()) {
        j["studentize_error"] = m.studentize_error;
    }
    return j;
}

void print_fit(std::ostream& os, const MethodOutput& m, bool info_both) {
    const FitResult& f = m.fit;
    os << "\n== " << to_string(f.method) << " ==\n";
    os << "loglik " << fmt6(f.loglik_value) << "   wall time " << fmt6(f.wall_time) << " s";
    if (f.method == Method::mle)
        os << "   iterations " << f.iterations << (f.converged ? " (converged)" : " (NOT converged)");
    os << "\n";
    std::string other_name;
    if (f.studentized && info_both)
        other_name = std::string("se(") +
                     to_string(f.info_variant == InfoVariant::observed_info ? InfoVariant::outer_product
                                                                           : InfoVariant::observed_info) +
                     ")";
    char line[256];
    if (f.studentized) {
        const std::string ci = fmt6(100.0 * f.level) + "% CI";
        std::snprintf(line, sizeof line, "%-10s %13s %13s %13s %13s", "parameter", "estimate", "se", (ci + " low").c_str(),
                      (ci + " high").c_str());
        os << line;
        if (!other_name.empty()) {
            std::snprintf(line, sizeof line, " %22s", other_name.c_str());
            os << line;
        }
        os << "   [" << to_string(f.info_variant) << "]\n";
    } else {
        std::snprintf(line, sizeof line, "%-10s %13s", "parameter", "estimate");
        os << line << "\n";
    }
    for (std::size_t k = 0; k < f.names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        if (f.studentized) {
            std::snprintf(line, sizeof line, "%-10s %13s %13s %13s %13s", f.names[k].c_str(), fmt6(f.estimate[i]).c_str(),
                          fmt6(f.se[i]).c_str(), fmt6(f.ci_low[i]).c_str(), fmt6(f.ci_high[i]).c_str());
            os << line;
            if (!other_name.empty()) {
                std::snprintf(line, sizeof line, " %22s", m.se_other ? fmt6((*m.se_other)[i]).c_str() : "n/a");
                os << line;
            }
            os << "\n";
        } else {
            std::snprintf(line, sizeof line, "%-10s %13s", f.names[k].c_str(), fmt6(f.estimate[i]).c_str());
            os << line << "\n";
        }
    }
    if (!m.studentize_error.empty()) os << "standard errors unavailable: " << m.studentize_error << "\n";
    for (const auto& w : f.warnings) os << "warning: " << w << "\n";
}

int cmd_fit(const Globals& g) {
    const RunConfig cfg = load_config(g.config);
    setup_threads(g, cfg);
    const FitInput in = load_fit_input(g, cfg);
    const LongitudinalDataset& ds = in.data;
    if (cfg.mle_theta) check_dims(*cfg.mle_theta, ds, "mle_start");
    if (cfg.mle_start == MleStart::truth && !cfg.mle_theta && !in.truth)
        fail(ErrorKind::config, "field 'mle_start': truth needs a scenario with theta_true");
    const std::string dir = out_dir(g, cfg);

    std::vector<Method> methods = cfg.methods;
    std::sort(methods.begin(), methods.end(),
              [](Method a, Method b) { return static_cast<int>(a) < static_cast<int>(b); });
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    const auto wants = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    const bool need_initial =
        wants(Method::initial) || wants(Method::one_step) ||
        (wants(Method::mle) && !cfg.mle_theta && cfg.mle_start == MleStart::initial);

    std::cout << "data: " << in.source << "\n";
    std::cout << "N=" << ds.size() << ", total observations " << ds.total_obs() << ", links s=" << in.s_link
              << ", sigma2=" << in.sigma2_link << ", family "
              << (in.family.fixed_lambda ? "fixed_lambda(" + fmt6(in.family.lambda) + ")" : std::string("full"))
              << ", threads " << thread_count() << "\n";

    reset_hessian_eval_count();
    std::vector<MethodOutput> outputs;
    std::optional<Theta> theta0;
    int code = exit_ok;
    auto studentize_into = [&](MethodOutput& m) {
        try {
            studentize(ds, in.links, m.fit, cfg.info, cfg.level);
            if (cfg.info_both)
                m.se_other = se_from_info(cfg.info == InfoVariant::observed_info ? m.fit.outer_product_info
                                                                                  : m.fit.observed_info);
        } catch (const Error& e) {
            m.studentize_error = e.what();
        }
    };

    Method current = Method::initial;
    try {
        if (need_initial) {
            current = Method::initial;
            FitResult f = initial_fit(ds, in.links, in.family, cfg.fit);
            theta0 = f.theta_hat;
            if (wants(Method::initial)) outputs.push_back({std::move(f), std::nullopt, {}});
        }
        if (wants(Method::one_step)) {
            current = Method::one_step;
            MethodOutput m{one_step(ds, in.links, in.family, *theta0, cfg.fit), std::nullopt, {}};
            studentize_into(m);
            outputs.push_back(std::move(m));
        }
        if (wants(Method::mle)) {
            current = Method::mle;
            Theta start;
            if (cfg.mle_theta) start = *cfg.mle_theta;
            else if (cfg.mle_start == MleStart::initial) start = *theta0;
            else if (cfg.mle_start == MleStart::truth) start = *in.truth;
            else start = cold_start(ds.records.empty() ? Theta{} : [&] {
                    Theta like;
                    like.beta = Eigen::VectorXd::Zero(ds.px());
                    like.alpha = Eigen::VectorXd::Zero(ds.pz());
                    like.tau = Eigen::VectorXd::Zero(ds.pw());
                    return like;
                }(), in.family);
            if (in.family.fixed_lambda) start.lambda = in.family.lambda;
            MethodOutput m{mle(ds, in.links, in.family, start, cfg.fit), std::nullopt, {}};
            studentize_into(m);
            if (!m.fit.converged) code = exit_numerical;
            outputs.push_back(std::move(m));
        }
    } catch (const Error& e) {
        if (exit_code_for(e.kind()) != exit_numerical) throw;
        std::cerr << "error: " << to_string(current) << " failed (" << to_string(e.kind()) << "): " << e.what() << "\n";
        if (*remediation_hint(e.kind())) std::cerr << "hint: " << remediation_hint(e.kind()) << "\n";
        code = exit_numerical;
    }
    const std::uint64_t hessians = hessian_eval_count();

    for (const auto& m : outputs) print_fit(std::cout, m, cfg.info_both);
    std::cout << "\nHessian evaluations: " << hessians << "\n";
    if (code == exit_numerical && !outputs.empty() && outputs.back().fit.method == Method::mle &&
        !outputs.back().fit.converged)
        std::cerr << "error: mle did not converge\nhint: " << remediation_hint(ErrorKind::max_iter_exceeded) << "\n";

    json j;
    j["source"] = in.source;
    j["links"] = {{"s", in.s_link}, {"sigma2", in.sigma2_link}};
    j["family"] = family_to_json(in.family);
    j["n_individuals"] = ds.size();
    j["n_obs"] = ds.total_obs();
    j["names"] = ParamLayout::of(ds, in.family).names();
    j["hessian_evaluations"] = hessians;
    j["threads"] = thread_count();
    j["fits"] = json::array();
    for (const auto& m : outputs) j["fits"].push_back(fit_to_json(m, cfg.info_both));
    if (in.truth) j["theta_true"] = theta_to_json(*in.truth);
    write_json(join(dir, "fit.json"), j);
    std::cout << "wrote " << join(dir, "fit.json") << "\n";
    return code;
}

// ---------------------------------------------------------------------- mc

int cmd_mc(const Globals& g) {
    const RunConfig cfg = load_config(g.config);
    setup_threads(g, cfg);
    std::optional<Preset> p;
    const Scenario sc = build_scenario(g, cfg, &p);
    if (cfg.info_both) fail(ErrorKind::config, "field 'info': mc runs one information variant at a time");
    if (cfg.mle_theta) fail(ErrorKind::config, "field 'mle_start': mc accepts initial, cold or truth");
    json overrides = json::object();
    for (const char* key : {"trials", "methods", "level", "info", "mle_start", "fit"})
        if (cfg.doc.contains(key)) overrides[key] = cfg.doc[key];
    const McOptions opt = mc_options_from_json(overrides, p ? p->mc : McOptions{});
    const std::string dir = out_dir(g, cfg);

    std::cout << "scenario " << sc.name << ": N=" << sc.n_individuals << ", trials " << opt.trials << ", seed "
              << sc.seed << ", threads " << thread_count() << ", MLE start " << to_string(opt.mle_start) << "\n";
    const McReport rep = mc_run(sc, opt);
    emit_report(rep, dir);

    for (const auto& m : rep.methods) {
        std::cout << "\n== " << to_string(m.method) << " == used " << m.used() << ", excluded " << m.excluded();
        for (const auto& [reason, count] : m.exclusion_counts()) std::cout << " [" << reason << ": " << count << "]";
        std::cout << "\n";
        const Eigen::VectorXd cov = m.coverage();
        const Eigen::VectorXd rmse = m.rmse(rep.truth);
        char line[128];
        std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", "parameter", "truth", "coverage", "rmse");
        std::cout << line;
        for (std::size_t k = 0; k < rep.names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", rep.names[k].c_str(), fmt6(rep.truth[i]).c_str(),
                          i < cov.size() ? fmt6(cov[i]).c_str() : "n/a", i < rmse.size() ? fmt6(rmse[i]).c_str() : "n/a");
            std::cout << line;
        }
    }
    std::cout << "\nwrote report to " << dir << "\n";
    return exit_ok;
}

// ----------------------------------------------------------------- predict

struct FittedModel {
    Theta theta;
    Family family;
    std::string s_link, sigma2_link;
    Method method = Method::initial;
};

FittedModel load_fitted(const RunConfig& cfg) {
    if (!cfg.fitted) fail(ErrorKind::config, "field 'fitted': missing (path to a fit.json written by 'ghme fit')");
    std::ifstream is(*cfg.fitted, std::ios::binary);
    if (!is) fail(ErrorKind::data, "cannot open fitted-parameter file '" + *cfg.fitted + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorKind::data, *cfg.fitted + ": invalid JSON (" + e.what() + ")");
    }
    try {
        FittedModel fm;
        const json& fits = j.at("fits");
        if (!fits.is_array() || fits.empty()) fail(ErrorKind::data, *cfg.fitted + ": no fits recorded");
        const json* chosen = nullptr;
        if (cfg.predict_method) {
            for (const auto& f : fits)
                if (method_from_string(f.at("method").get<std::string>()) == *cfg.predict_method) chosen = &f;
            if (!chosen)
                fail(ErrorKind::config, std::string("field 'predict_method': ") + to_string(*cfg.predict_method) +
                                            " is not in " + *cfg.fitted);
        } else {
            chosen = &fits.back();
        }
        fm.method = method_from_string(chosen->at("method").get<std::string>());
        fm.theta = theta_from_json(chosen->at("theta"));
        fm.family = family_from_json(j.at("family"));
        if (fm.family.fixed_lambda) fm.theta.lambda = fm.family.lambda;
        fm.s_link = j.at("links").at("s").get<std::string>();
        fm.sigma2_link = j.at("links").at("sigma2").get<std::string>();
        return fm;
    } catch (const json::exception& e) {
        fail(ErrorKind::data, *cfg.fitted + ": malformed fit file (" + e.what() + ")");
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::config && cfg.predict_method) throw;
        fail(ErrorKind::data, *cfg.fitted + ": " + e.what());
    }
}

int cmd_predict(const Globals& g) {
    const RunConfig cfg = load_config(g.config);
    setup_threads(g, cfg);
    FittedModel fm = load_fitted(cfg);
    if (!cfg.data_path) fail(ErrorKind::config, "field 'data': missing (predict needs the individuals' data)");
    if (cfg.links_given) {
        fm.s_link = cfg.s_link;
        fm.sigma2_link = cfg.sigma2_link;
    }
    const LinkSpec links{link_from_name(fm.s_link), link_from_name(fm.sigma2_link)};
    const LongitudinalDataset ds = dataset_from_csv(read_csv(*cfg.data_path), cfg.roles, true);
    ds.validate();
    if (fm.theta.beta.size() != ds.px() || fm.theta.alpha.size() != ds.pz() || fm.theta.tau.size() != ds.pw())
        fail(ErrorKind::data, *cfg.data_path + ": covariate columns do not match the fitted parameter dimensions");
    if (!fm.theta.gig().admissible()) fail(ErrorKind::data, *cfg.fitted + ": fitted GIG parameters are not admissible");
    const std::string dir = out_dir(g, cfg);

    std::map<std::string, std::size_t> index;
    std::vector<double> vhat(ds.size());
    {
        std::ofstream re(join(dir, "random_effects.csv"), std::ios::binary);
        std::ofstream pr(join(dir, "predictions.csv"), std::ios::binary);
        if (!re || !pr) fail(ErrorKind::io, "cannot open prediction files in '" + dir + "'");
        re << "id,n,nu,eta,psi,v_hat\n";
        pr << "id,j,y,y_hat,v_hat\n";
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const IndividualRecord& rec = ds.records[i];
            index.emplace(rec.id, i);
            const dist::GigParams post = posterior_gig(rec, fm.theta, links);
            vhat[i] = posterior_mean(rec, fm.theta, links);
            re << rec.id << ',' << rec.n() << ',' << format_full(post.lambda) << ',' << format_full(post.delta) << ','
               << format_full(post.gamma) << ',' << format_full(vhat[i]) << '\n';
            for (Eigen::Index j = 0; j < rec.n(); ++j) {
                const double yhat = predict_fitted(rec, fm.theta, links, rec.x.row(j).transpose(), rec.z.row(j).transpose());
                pr << rec.id << ',' << j << ',' << format_full(rec.y[j]) << ',' << format_full(yhat) << ','
                   << format_full(vhat[i]) << '\n';
            }
        }
        if (!re || !pr) fail(ErrorKind::io, "write to prediction files failed");
    }

    std::size_t n_forecast = 0;
    if (cfg.forecast_path) {
        const CsvTable t = read_csv(*cfg.forecast_path);
        const int id_col = t.column(cfg.roles.id);
        if (id_col < 0) fail(ErrorKind::data, t.path + ": id column '" + cfg.roles.id + "' not found");
        auto cols_of = [&](const std::vector<std::string>& names, const char* role) {
            std::vector<int> cols;
            for (const auto& n : names) {
                const int c = t.column(n);
                if (c < 0 && n != "intercept")
                    fail(ErrorKind::data, t.path + ": " + role + " column '" + n + "' not found");
                cols.push_back(c);
            }
            return cols;
        };
        const auto xc = cols_of(cfg.roles.x, "x"), zc = cols_of(cfg.roles.z, "z");
        std::ofstream fo(join(dir, "forecast.csv"), std::ios::binary);
        if (!fo) fail(ErrorKind::io, "cannot open '" + join(dir, "forecast.csv") + "' for writing");
        fo << "id,row,y_hat,v_hat\n";
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const std::string& id = t.rows[r][static_cast<std::size_t>(id_col)];
            const auto it = index.find(id);
            if (it == index.end()) {
                std::ostringstream os;
                os << t.path << ":" << t.line_no[r] << ": unknown id '" << id << "' (not present in the fitted data)";
                fail(ErrorKind::data, os.str());
            }
            Eigen::VectorXd nx(static_cast<Eigen::Index>(xc.size())), nz(static_cast<Eigen::Index>(zc.size()));
            for (std::size_t k = 0; k < xc.size(); ++k)
                nx[static_cast<Eigen::Index>(k)] = xc[k] < 0 ? 1.0 : number_at(t, r, xc[k]);
            for (std::size_t k = 0; k < zc.size(); ++k)
                nz[static_cast<Eigen::Index>(k)] = zc[k] < 0 ? 1.0 : number_at(t, r, zc[k]);
            const double yhat = predict_fitted(ds.records[it->second], fm.theta, links, nx, nz);
            fo << id << ',' << r << ',' << format_full(yhat) << ',' << format_full(vhat[it->second]) << '\n';
            ++n_forecast;
        }
        if (!fo) fail(ErrorKind::io, "write to forecast.csv failed");
    }

    std::cout << "predicted with " << to_string(fm.method) << " estimate: ";
    print_theta(std::cout, fm.theta, fm.family);
    std::cout << "\n" << ds.size() << " individuals, " << ds.total_obs() << " rows";
    if (cfg.forecast_path) std::cout << ", " << n_forecast << " forecast rows";
    std::cout << "\nwrote " << join(dir, "predictions.csv") << ", random_effects.csv"
              << (cfg.forecast_path ? ", forecast.csv" : "") << "\n";
    return exit_ok;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"ghme: generalized hyperbolic mixed-effects location-scale models"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    std::string out, preset_name;
    app.add_option("--config", g.config, "JSON run configuration")->required();
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the configuration)");
    app.add_option("--threads", g.threads, "worker threads (default: GHME_THREADS or 1)")->check(CLI::NonNegativeNumber);
    auto* out_opt = app.add_option("--out", out, "output directory");
    auto* preset_opt = app.add_option("--preset", preset_name, "named scenario preset");

    auto* sim = app.add_subcommand("simulate", "simulate a dataset from a scenario")->fallthrough();
    auto* fit = app.add_subcommand("fit", "fit the model to data")->fallthrough();
    auto* mc = app.add_subcommand("mc", "Monte Carlo coverage experiment")->fallthrough();
    auto* pred = app.add_subcommand("predict", "empirical-Bayes random effects and predictions")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }
    if (*seed_opt) g.seed = seed;
    if (*out_opt) g.out = out;
    if (*preset_opt) g.preset = preset_name;

    try {
        if (sim->parsed()) return cmd_simulate(g);
        if (fit->parsed()) return cmd_fit(g);
        if (mc->parsed()) return cmd_mc(g);
        if (pred->parsed()) return cmd_predict(g);
    } catch (const Error& e) {
        const int code = exit_code_for(e.kind());
        std::cerr << "error: " << e.what() << "\n";
        if (code == exit_numerical && *remediation_hint(e.kind())) std::cerr << "hint: " << remediation_hint(e.kind()) << "\n";
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_numerical;
    }
    return exit_config;
}

}  // namespace ghme::cli
