#include "doctest.h"
#include "fixtures.hpp"

#include "ghme/harness.hpp"

#include "json.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli() {
    const char* p = std::getenv("GHME_CLI");
    return p ? p : "";
}

struct Run {
    int code = -1;
    std::string output;
};

// Runs the command-line tool in `dir` with the given arguments.
Run run(const fs::path& dir, const std::string& args) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = "cd '" + dir.string() + "' && '" + cli() + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    return r;
}

fs::path workdir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ghme_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    return json::parse(is);
}

std::size_t lines(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("cli: configuration errors exit with code 2") {
    REQUIRE(!cli().empty());
    const fs::path d = workdir("errors");
    write(d / "bogus.json", R"({"bogus": 1})");
    write(d / "broken.json", "{\"level\": 0.9,\n \"x\": }");
    write(d / "badlevel.json", R"({"level": 2})");
    write(d / "empty.json", "{}");

    CHECK(run(d, "fit").code == 2);
    const Run r1 = run(d, "--config bogus.json fit");
    CHECK(r1.code == 2);
    CHECK(r1.output.find("bogus") != std::string::npos);
    const Run r2 = run(d, "--config broken.json fit");
    CHECK(r2.code == 2);
    CHECK(r2.output.find("broken.json:2:") != std::string::npos);
    const Run r3 = run(d, "--config badlevel.json fit");
    CHECK(r3.code == 2);
    CHECK(r3.output.find("level") != std::string::npos);
    CHECK(run(d, "--config empty.json --preset scenario-iii simulate").code == 2);
    CHECK(run(d, "--config missing.json fit").code != 0);
    CHECK(run(d, "--help").code == 0);
}

TEST_CASE("cli: simulate is reproducible and honours schedules") {
    const fs::path d = workdir("simulate");
    write(d / "small.json", R"({"scenario": {"N": 40}})");
    REQUIRE(run(d, "--config small.json --preset table4-case-i-desk --out a simulate").code == 0);
    REQUIRE(run(d, "--config small.json --preset table4-case-i-desk --out b simulate").code == 0);
    REQUIRE(run(d, "--config small.json --preset table4-case-i-desk --seed 5 --out c simulate").code == 0);
    CHECK(slurp(d / "a" / "data.csv") == slurp(d / "b" / "data.csv"));
    CHECK(slurp(d / "a" / "data.csv") != slurp(d / "c" / "data.csv"));
    CHECK(lines(d / "a" / "data.csv") == 1 + 40 * 10);
    CHECK(lines(d / "a" / "latent.csv") == 1 + 40);
    CHECK(fs::exists(d / "a" / "data_config.json"));
    CHECK(fs::exists(d / "a" / "truth.json"));

    write(d / "sched.json", R"({"scenario": {"N": 3, "n_schedule": [3, 5, 2]}})");
    REQUIRE(run(d, "--config sched.json --preset scenario-i --out s simulate").code == 0);
    CHECK(lines(d / "s" / "data.csv") == 1 + 10);

    write(d / "empty.json", "{}");
    REQUIRE(run(d, "--preset scenario-i --config empty.json --out p simulate").code == 0);
    CHECK(lines(d / "p" / "data.csv") == 1 + 1000 * 10);
}

TEST_CASE("cli: fit, laziness of the Hessian, and predict") {
    const fs::path d = workdir("fit");
    write(d / "small.json", R"({"scenario": {"N": 300}})");
    REQUIRE(run(d, "--config small.json --preset table4-case-i-desk --out sim simulate").code == 0);

    // initial only: no Hessian evaluation
    json cfg = read_json(d / "sim" / "data_config.json");
    cfg["methods"] = {"initial"};
    write(d / "sim" / "initial.json", cfg.dump());
    const Run r0 = run(d, "--config sim/initial.json --out fit0 fit");
    REQUIRE(r0.code == 0);
    const json f0 = read_json(d / "fit0" / "fit.json");
    CHECK(f0["hessian_evaluations"] == 0);
    CHECK(f0["fits"].size() == 1);

    cfg["methods"] = {"initial", "one_step", "mle"};
    cfg["info"] = "both";
    write(d / "sim" / "all.json", cfg.dump());
    const Run r1 = run(d, "--config sim/all.json --out fit1 fit");
    REQUIRE(r1.code == 0);
    CHECK(r1.output.find("one_step") != std::string::npos);
    const json f1 = read_json(d / "fit1" / "fit.json");
    REQUIRE(f1["fits"].size() == 3);
    CHECK(f1["names"].size() == 8);
    CHECK(f1["hessian_evaluations"].get<int>() > 0);
    const json& os = f1["fits"][1];
    CHECK(os["method"] == "one_step");
    CHECK(os["se"].size() == 8);
    CHECK(os.contains("se_outer_product"));
    CHECK(f1["fits"][2]["converged"] == true);

    // predict from the fitted parameters
    json pc;
    pc["data"] = cfg["data"];
    pc["data"]["path"] = "sim/data.csv";
    pc["fitted"] = "fit1/fit.json";
    pc["predict_method"] = "one_step";
    write(d / "fc.csv", "id,x0,x1,z0,z1\n1,0.5,-0.5,0,0\n2,1,1,0.3,0.2\n");
    pc["forecast"] = "fc.csv";
    write(d / "pred.json", pc.dump());
    const Run rp = run(d, "--config pred.json --out pred predict");
    REQUIRE(rp.code == 0);
    CHECK(lines(d / "pred" / "random_effects.csv") == 1 + 300);
    CHECK(lines(d / "pred" / "predictions.csv") == 1 + 3000);
    CHECK(lines(d / "pred" / "forecast.csv") == 1 + 2);
    // with z = 0 the forecast is the fixed-effect trend
    std::ifstream fc(d / "pred" / "forecast.csv");
    std::string header, row;
    std::getline(fc, header);
    std::getline(fc, row);
    const double beta0 = os["theta"]["beta"][0], beta1 = os["theta"]["beta"][1];
    const double yhat = std::stod(row.substr(row.find(',', row.find(',') + 1) + 1));
    CHECK(yhat == doctest::Approx(0.5 * beta0 - 0.5 * beta1).epsilon(1e-9));

    // an unknown id in the forecast rows is a data error
    write(d / "fc.csv", "id,x0,x1,z0,z1\nnobody,0.5,-0.5,0,0\n");
    const Run bad = run(d, "--config pred.json --out pred2 predict");
    CHECK(bad.code == 3);
    CHECK(bad.output.find("nobody") != std::string::npos);

    // missing data file
    json missing = cfg;
    missing["data"]["path"] = "nowhere.csv";
    write(d / "missing.json", missing.dump());
    CHECK(run(d, "--config missing.json fit").code == 3);
}

TEST_CASE("cli: monte carlo smoke run") {
    const fs::path d = workdir("mc");
    write(d / "mc.json", R"({"trials": 10, "methods": ["initial", "one_step"], "scenario": {"N": 250}})");
    const auto t0 = std::chrono::steady_clock::now();
    const Run r = run(d, "--config mc.json --preset table4-case-i-desk --out one mc");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(r.code == 0);
    CHECK(secs < 60.0);
    std::ifstream cov(d / "one" / "coverage.csv");
    std::string header;
    std::getline(cov, header);
    for (const char* n : {"beta0", "beta1", "alpha0", "alpha1", "tau0", "tau1", "delta", "gamma"})
        CHECK(header.find(n) != std::string::npos);
    CHECK(header.find("lambda") == std::string::npos);

    REQUIRE(run(d, "--config mc.json --preset table4-case-i-desk --threads 2 --out two mc").code == 0);
    for (const char* f : {"summary.json", "trials.csv", "coverage.csv", "standardized.csv", "chisq.csv"})
        CHECK(slurp(d / "one" / f) == slurp(d / "two" / f));

    const ghme::McReport rep = ghme::read_report((d / "one").string());
    CHECK(rep.trials_total == 10);
    CHECK(rep.n_individuals == 250);
}

TEST_CASE("cli: riesby-style depression data") {
    // Same layout as the riesby data (id, hamd, week and subject covariates), synthetic values.
    const fs::path d = workdir("riesby");
    ghme::Scenario sc = fixture::scenario(fixture::theta({1.5, -2.0}, {0.5, 0.3}, {1.0, 0.1}, 1.0, 2.0, 1.5),
                                          ghme::Family::full(), 66, 6, 31);
    sc.covariates = ghme::CovariateGen::gauss_plus_timeindex;
    const auto data = ghme::simulate_dataset(sc).data;
    std::ostringstream csv;
    csv << "id,hamd,week,endog,endweek,reactive\n";
    csv.precision(17);
    for (const auto& r : data.records)
        for (Eigen::Index j = 0; j < r.n(); ++j) {
            if ((j == 5 && std::stoi(r.id) % 3 == 0) || (j == 4 && std::stoi(r.id) % 7 == 0)) continue;  // dropouts
            csv << r.id << ',' << r.y[j] << ',' << j << ',' << r.x(j, 0) << ',' << r.z(j, 0) << ',' << r.w(j, 0)
                << '\n';
        }
    write(d / "riesby.csv", csv.str());
    write(d / "fit.json", R"({"data": {"path": "riesby.csv", "id": "id", "y": "hamd",
        "x": ["endog", "week"], "z": ["endweek", "week"], "w": ["reactive", "week"]},
        "family": "full", "methods": ["initial", "one_step"]})");
    const Run r = run(d, "--config fit.json --out out fit");
    INFO(r.output);
    REQUIRE(r.code == 0);
    const json f = read_json(d / "out" / "fit.json");
    CHECK(f["names"].size() == 9);
    CHECK(f["fits"][1]["estimate"].size() == 9);
    CHECK(f["n_individuals"] == 66);
    CHECK(f["n_obs"].get<int>() < 66 * 6);
}
