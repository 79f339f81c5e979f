#pragma once

#include "csv.hpp"

#include "ghme/estimate.hpp"
#include "ghme/harness.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ghme::cli {

// Validated run configuration. Every schema problem raises a config error
// naming the field before any numerical work starts.
struct RunConfig {
    std::string path;
    std::string base_dir;  // relative paths resolve against this
    nlohmann::json doc;

    std::optional<std::string> data_path;  // resolved against the config directory
    RoleMap roles;
    std::string s_link = "tanh_linear";
    std::string sigma2_link = "exp_linear";
    Family family;
    bool family_given = false;
    bool links_given = false;

    std::vector<Method> methods{Method::initial, Method::one_step};
    bool methods_given = false;
    double level = 0.95;
    bool level_given = false;
    bool info_both = false;
    InfoVariant info = InfoVariant::observed_info;
    bool info_given = false;
    MleStart mle_start = MleStart::initial;
    bool mle_start_given = false;
    std::optional<Theta> mle_theta;  // explicit MLE start
    FitOptions fit;
    nlohmann::json fit_json;  // raw "fit" section, re-applied over presets

    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int threads = 0;
    // Raw "scenario" section; scenario() overlays it on a preset when one is given.
    nlohmann::json scenario_json;
    std::optional<std::size_t> trials;

    std::optional<std::string> fitted;  // fit JSON for predict
    std::optional<Method> predict_method;
    std::optional<std::string> forecast_path;

    LinkSpec links() const;
    bool has_scenario() const { return !scenario_json.is_null(); }
    // Builds the scenario from the optional preset and the "scenario" section,
    // resolving and loading any covariate file.
    Scenario scenario(const std::optional<Scenario>& base) const;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const nlohmann::json& doc, const std::string& base_dir, const std::string& path = "<inline>");

}  // namespace ghme::cli
