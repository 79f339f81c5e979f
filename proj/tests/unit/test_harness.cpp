#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include "ghme/dist.hpp"
#include "ghme/errors.hpp"
#include "ghme/harness.hpp"
#include "ghme/model.hpp"
#include "ghme/parallel.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>

using namespace ghme;
using oracle::rel_err;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ghme_test_" + name);
    fs::remove_all(dir);
    return dir;
}

bool same_records(const LongitudinalDataset& a, const LongitudinalDataset& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto &r = a.records[i], &s = b.records[i];
        if (r.id != s.id || r.y != s.y || r.x != s.x || r.z != s.z || r.w != s.w) return false;
    }
    return true;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::domain;
}

}  // namespace

TEST_CASE("trial seeds") {
    CHECK(trial_seed(20240101, 0) == trial_seed(20240101, 0));
    std::set<std::uint64_t> seen;
    for (std::uint64_t t = 0; t < 1000; ++t) seen.insert(trial_seed(20240101, t));
    CHECK(seen.size() == 1000);
    CHECK(trial_seed(1, 5) != trial_seed(2, 5));
}

TEST_CASE("simulate_dataset is deterministic and honours the schedule") {
    const Scenario sc = fixture::ig_scenario(50, 6, 9);
    const SimulatedData a = simulate_dataset(sc), b = simulate_dataset(sc);
    CHECK(same_records(a.data, b.data));
    CHECK(a.v == b.v);
    CHECK(!same_records(a.data, simulate_dataset(sc, 10).data));
    CHECK(a.data.total_obs() == 300);
    CHECK(a.v.size() == 50);
    CHECK((a.v.array() > 0.0).all());

    Scenario uneven = sc;
    uneven.n_individuals = 3;
    uneven.n_schedule = {3, 5, 2};
    const auto d = simulate_dataset(uneven).data;
    CHECK(d.total_obs() == 10);
    CHECK(d.records[1].n() == 5);

    Scenario ti = sc;
    ti.covariates = CovariateGen::gauss_plus_timeindex;
    const auto t = simulate_dataset(ti).data;
    for (const auto& r : t.records)
        for (Eigen::Index j = 0; j < r.n(); ++j) {
            CHECK(r.x(j, 1) == static_cast<double>(j));
            CHECK(r.z(j, 1) == static_cast<double>(j));
            CHECK(r.w(j, 1) == static_cast<double>(j));
        }
}

TEST_CASE("simulated responses have the model mean") {
    // one covariate cell replicated across many individuals
    auto tmpl = std::make_shared<LongitudinalDataset>();
    const std::size_t reps = 100000;
    IndividualRecord cell;
    cell.y = Eigen::VectorXd::Zero(1);
    cell.x = Eigen::RowVector2d(0.4, -0.3);
    cell.z = Eigen::RowVector2d(0.2, 0.1);
    cell.w = Eigen::RowVector2d(-0.5, 0.6);
    for (std::size_t i = 0; i < reps; ++i) {
        cell.id = std::to_string(i);
        tmpl->records.push_back(cell);
    }
    Scenario sc = fixture::ig_scenario(reps, 1, 3);
    sc.covariates = CovariateGen::from_file;
    sc.covariate_template = tmpl;
    const auto d = simulate_dataset(sc).data;
    Eigen::VectorXd y(static_cast<Eigen::Index>(reps));
    for (std::size_t i = 0; i < reps; ++i) y[static_cast<Eigen::Index>(i)] = d.records[i].y[0];
    const Theta th = fixture::ig_truth();
    const double s = std::tanh(cell.z.row(0).dot(th.alpha));
    const double expected = cell.x.row(0).dot(th.beta) + s * dist::gig_mean(th.gig());
    const double sd = std::sqrt((y.array() - y.mean()).square().sum() / (reps - 1.0));
    CHECK(std::abs(y.mean() - expected) < 3.0 * sd / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("posterior means track the latent effects") {
    const Scenario sc = fixture::ig_scenario(1000, 10, 4);
    const SimulatedData sim = simulate_dataset(sc);
    Eigen::VectorXd vh(sim.v.size());
    for (std::size_t i = 0; i < sim.data.size(); ++i)
        vh[static_cast<Eigen::Index>(i)] = posterior_mean(sim.data.records[i], sc.theta_true, sc.links());
    const Eigen::ArrayXd a = vh.array() - vh.mean(), b = sim.v.array() - sim.v.mean();
    CHECK((a * b).sum() / std::sqrt(a.square().sum() * b.square().sum()) > 0.7);
}

TEST_CASE("scenario validation and JSON round trip") {
    Scenario sc = fixture::ig_scenario(20, 4, 5);
    CHECK_NOTHROW(sc.validate());
    const Scenario back = scenario_from_json(scenario_to_json(sc));
    CHECK(scenario_to_json(back) == scenario_to_json(sc));
    CHECK(same_records(simulate_dataset(back).data, simulate_dataset(sc).data));

    Scenario bad = sc;
    bad.theta_true.gamma = -1.0;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::config);
    bad = sc;
    bad.n_schedule = {3, 4};
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::config);

    auto j = scenario_to_json(sc);
    j["colour"] = "blue";
    try {
        (void)scenario_from_json(j);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("colour") != std::string::npos);
    }
    j = scenario_to_json(sc);
    j["N"] = "many";
    CHECK(kind_of([&] { (void)scenario_from_json(j); }) == ErrorKind::config);

    McOptions o;
    o.trials = 7;
    o.methods = {Method::one_step};
    o.info = InfoVariant::outer_product;
    o.mle_start = MleStart::cold;
    const McOptions ob = mc_options_from_json(mc_options_to_json(o));
    CHECK(ob.trials == 7);
    CHECK(ob.methods.size() == 1);
    CHECK(ob.info == InfoVariant::outer_product);
    CHECK(ob.mle_start == MleStart::cold);
    CHECK(kind_of([] { (void)mc_options_from_json(nlohmann::json{{"trials", 0}}); }) == ErrorKind::config);
    CHECK(kind_of([] { (void)method_from_string("bayes"); }) == ErrorKind::config);
}

TEST_CASE("presets") {
    const auto names = preset_names();
    CHECK(names.size() == 6);
    for (const auto& n : names) {
        INFO(n);
        const Preset p = preset(n);
        CHECK(p.scenario.seed == 20240101);
        CHECK(p.scenario.n_individuals == 1000);
        CHECK(p.scenario.n_schedule == std::vector<Eigen::Index>{10});
        CHECK_NOTHROW(p.scenario.validate());
    }
    CHECK(preset("table4-case-i-desk").scenario.family.fixed_lambda);
    CHECK(preset("table4-case-i-desk").mc.trials == 300);
    CHECK(preset("paper-cold-start").mc.mle_start == MleStart::cold);
    CHECK(preset("paper-cold-start").mc.trials == 10);
    CHECK(preset("scenario-ii").scenario.covariates == CovariateGen::gauss_plus_timeindex);
    CHECK(!preset("scenario-i").scenario.family.fixed_lambda);
    CHECK(kind_of([] { (void)preset("scenario-iii"); }) == ErrorKind::config);

    const Theta cold = cold_start(fixture::ig_truth(), Family::full());
    CHECK(cold.beta.cwiseAbs().maxCoeff() == 1e-8);
    CHECK(cold.lambda == 1e-8);
    CHECK(cold.delta == 1e-4);
    CHECK(cold.gamma == 1e-3);
}

TEST_CASE("mc_run with a single trial") {
    const Scenario sc = fixture::ig_scenario(200, 10, 6);
    McOptions o;
    o.trials = 1;
    const McReport rep = mc_run(sc, o);
    CHECK(rep.trials_total == 1);
    CHECK(rep.names.size() == 8);
    REQUIRE(rep.methods.size() == 3);
    for (const auto& m : rep.methods) {
        CHECK(m.trials.size() == 1);
        CHECK(m.used() + m.excluded() == 1);
        const Eigen::VectorXd c = m.coverage();
        if (m.used() == 1) CHECK(((c.array() == 0.0) || (c.array() == 1.0)).all());
    }
    // the initial estimator carries no intervals
    const MethodReport* init = rep.find(Method::initial);
    REQUIRE(init);
    CHECK(init->trials[0].fit_ok);
    CHECK(rep.find(Method::one_step)->trials[0].se.size() == 8);
}

TEST_CASE("mc_run is deterministic across thread counts and trials are reproducible alone") {
    const Scenario sc = fixture::ig_scenario(150, 10, 7);
    McOptions o;
    o.trials = 4;
    o.methods = {Method::initial, Method::one_step};
    set_thread_count(1);
    const McReport a = mc_run(sc, o);
    set_thread_count(3);
    const McReport b = mc_run(sc, o);
    set_thread_count(1);
    const fs::path da = scratch("det_a"), db = scratch("det_b");
    emit_report(a, da.string());
    emit_report(b, db.string());
    for (const char* f : {"summary.json", "coverage.csv", "standardized.csv", "chisq.csv", "rmse.csv"})
        CHECK(slurp(da / f) == slurp(db / f));

    // trial 2 in isolation
    const SimulatedData d2 = simulate_dataset(sc, trial_seed(sc.seed, 2));
    const FitResult f2 = one_step(d2.data, sc.links(), sc.family, initial_estimator(d2.data, sc.links(), sc.family));
    CHECK((f2.estimate - a.find(Method::one_step)->trials[2].estimate).cwiseAbs().maxCoeff() < 1e-12);
    fs::remove_all(da);
    fs::remove_all(db);
}

TEST_CASE("reports round-trip through their files") {
    const Scenario sc = fixture::ig_scenario(150, 10, 8);
    McOptions o;
    o.trials = 3;
    const McReport rep = mc_run(sc, o);
    const fs::path dir = scratch("round_trip");
    emit_report(rep, dir.string());
    for (const char* f : {"summary.json", "trials.csv", "coverage.csv", "standardized.csv", "chisq.csv", "rmse.csv",
                          "timing.csv"})
        CHECK(fs::exists(dir / f));
    const McReport back = read_report(dir.string());
    CHECK(back.scenario == rep.scenario);
    CHECK(back.trials_total == rep.trials_total);
    CHECK(back.seed == rep.seed);
    CHECK(back.names == rep.names);
    CHECK(back.truth == rep.truth);
    REQUIRE(back.methods.size() == rep.methods.size());
    for (std::size_t m = 0; m < rep.methods.size(); ++m)
        for (std::size_t t = 0; t < rep.trials_total; ++t) {
            const auto &x = rep.methods[m].trials[t], &y = back.methods[m].trials[t];
            CHECK(x.seed == y.seed);
            CHECK(x.excluded == y.excluded);
            CHECK(x.estimate == y.estimate);
            CHECK(x.se == y.se);
            CHECK(x.covered == y.covered);
            CHECK(x.wald == y.wald);
            CHECK(x.wall_time == y.wall_time);
        }
    // re-emitting the re-read report reproduces the deterministic files
    const fs::path dir2 = scratch("round_trip2");
    emit_report(back, dir2.string());
    for (const char* f : {"summary.json", "trials.csv", "coverage.csv", "rmse.csv"}) CHECK(slurp(dir / f) == slurp(dir2 / f));

    // coverage header: one column per parameter
    std::ifstream cov(dir / "coverage.csv");
    std::string header;
    std::getline(cov, header);
    CHECK(std::count(header.begin(), header.end(), ',') >= 8);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("an empty method list writes header-only tables") {
    const Scenario sc = fixture::ig_scenario(50, 5, 9);
    McOptions o;
    o.trials = 2;
    o.methods = {};
    const McReport rep = mc_run(sc, o);
    CHECK(rep.methods.empty());
    const fs::path dir = scratch("empty");
    emit_report(rep, dir.string());
    for (const char* f : {"trials.csv", "coverage.csv", "standardized.csv", "chisq.csv", "rmse.csv", "timing.csv"}) {
        INFO(std::string(f));
        const std::string s = slurp(dir / f);
        CHECK(!s.empty());
        // timing.csv carries a second header for its quantile block
        const long headers = std::string(f) == "timing.csv" ? 2 : 1;
        CHECK(std::count(s.begin(), s.end(), '\n') == headers);
    }
    fs::remove_all(dir);
    CHECK(kind_of([] { emit_report(McReport{}, "/proc/forbidden/dir"); }) == ErrorKind::io);
}
