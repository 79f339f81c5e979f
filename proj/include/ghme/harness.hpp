#pragma once

#include "ghme/estimate.hpp"
#include "ghme/model.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ghme {

enum class CovariateGen { iid_gauss, gauss_plus_timeindex, from_file };
enum class MleStart { truth, cold, initial };

const char* to_string(CovariateGen g);
const char* to_string(MleStart s);

struct Scenario {
    std::string name = "custom";
    std::size_t n_individuals = 1000;
    std::vector<Eigen::Index> n_schedule{10};  // one entry: every individual; otherwise one per individual
    CovariateGen covariates = CovariateGen::iid_gauss;
    // Covariates reused verbatim by CovariateGen::from_file (responses ignored).
    std::string covariate_file;  // resolved by the caller into covariate_template
    std::shared_ptr<const LongitudinalDataset> covariate_template;
    std::string s_link = "tanh_linear";
    std::string sigma2_link = "exp_linear";
    Theta theta_true;
    Family family;
    std::uint64_t seed = 1;

    LinkSpec links() const;
    Eigen::Index n_obs(std::size_t i) const;
    // Throws a config error describing the first problem found.
    void validate() const;
};

struct SimulatedData {
    LongitudinalDataset data;
    Eigen::VectorXd v;  // latent mixing variables
};

// Per-trial seeds: trial t of a run with master seed m uses trial_seed(m, t).
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial);

SimulatedData simulate_dataset(const Scenario& sc);
SimulatedData simulate_dataset(const Scenario& sc, std::uint64_t seed);

struct McOptions {
    std::size_t trials = 100;
    std::vector<Method> methods{Method::initial, Method::one_step, Method::mle};
    double level = 0.95;
    InfoVariant info = InfoVariant::observed_info;
    MleStart mle_start = MleStart::truth;
    FitOptions fit;
};

// The start vector (1e-8, ..., 1e-8, 1e-4, 1e-3) with lambda, when free, at 1e-8.
Theta cold_start(const Theta& like, const Family& family);

struct TrialRecord {
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    bool fit_ok = false;       // an estimate exists
    std::string excluded;      // empty when the trial enters the coverage tallies
    double loglik = 0.0;
    bool converged = false;
    bool at_boundary = false;
    int iterations = 0;
    double wall_time = 0.0;
    double wald = 0.0;
    Eigen::VectorXd estimate;
    Eigen::VectorXd se;
    Eigen::VectorXd standardized;
    Eigen::VectorXi covered;
};

struct MethodReport {
    Method method = Method::initial;
    std::vector<TrialRecord> trials;  // sorted by trial index

    std::size_t used() const;
    std::size_t excluded() const;
    Eigen::VectorXd coverage() const;
    // sqrt(mean squared error) per coordinate over trials with an estimate;
    // the last entry is the root mean squared Euclidean error.
    Eigen::VectorXd rmse(const Eigen::VectorXd& truth) const;
    // Exclusion counts by reason, sorted by reason.
    std::vector<std::pair<std::string, std::size_t>> exclusion_counts() const;
};

struct McReport {
    std::string scenario;
    std::size_t n_individuals = 0;
    std::size_t trials_total = 0;
    std::uint64_t seed = 0;
    double level = 0.95;
    std::string info_variant;
    std::vector<std::string> names;
    Eigen::VectorXd truth;
    std::vector<MethodReport> methods;

    const MethodReport* find(Method m) const;
};

McReport mc_run(const Scenario& sc, const McOptions& opt);

// Writes summary.json, trials.csv, coverage.csv, standardized.csv, chisq.csv,
// rmse.csv (all deterministic) and timing.csv into dir.
void emit_report(const McReport& rep, const std::string& dir);
McReport read_report(const std::string& dir);

// JSON (de)serialization shared with the command-line tool.
nlohmann::json theta_to_json(const Theta& th);
Theta theta_from_json(const nlohmann::json& j);
nlohmann::json family_to_json(const Family& f);
Family family_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& sc);
// Unknown keys and wrong types are config errors naming the field.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json mc_options_to_json(const McOptions& o);
McOptions mc_options_from_json(const nlohmann::json& j, McOptions base = {});
Method method_from_string(const std::string& s);

struct Preset {
    Scenario scenario;
    McOptions mc;
};
// scenario-i, scenario-ii, scenario-i-prime, scenario-ii-prime,
// paper-cold-start, table4-case-i-desk.
Preset preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace ghme
