#include "config.hpp"

#include "ghme/errors.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

namespace ghme::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& msg) {
    fail(ErrorKind::config, "field '" + field + "': " + msg);
}

std::string str(const json& j, const std::string& field) {
    if (!j.is_string()) bad(field, "expected a string");
    return j.get<std::string>();
}

std::vector<std::string> str_list(const json& j, const std::string& field) {
    if (j.is_string()) return {j.get<std::string>()};
    if (!j.is_array()) bad(field, "expected a column name or an array of column names");
    std::vector<std::string> out;
    for (std::size_t k = 0; k < j.size(); ++k) out.push_back(str(j[k], field + "[" + std::to_string(k) + "]"));
    return out;
}

std::string resolve(const std::string& base, const std::string& p) {
    const std::filesystem::path fp(p);
    if (fp.is_absolute() || base.empty()) return p;
    return (std::filesystem::path(base) / fp).string();
}

// Rethrows library config errors from the harness parsers unchanged and
// turns anything else into a config error for `field`.
template <class F>
auto guarded(const std::string& field, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::config) throw;
        bad(field, e.what());
    } catch (const json::exception& e) {
        bad(field, e.what());
    }
}

}  // namespace

LinkSpec RunConfig::links() const { return {link_from_name(s_link), link_from_name(sigma2_link)}; }

Scenario RunConfig::scenario(const std::optional<Scenario>& base) const {
    json j = base ? scenario_to_json(*base) : json::object();
    if (!scenario_json.is_null()) {
        // Replace whole sub-objects rather than merging their keys.
        for (auto it = scenario_json.begin(); it != scenario_json.end(); ++it) j[it.key()] = it.value();
    }
    Scenario sc = guarded("scenario", [&] { return scenario_from_json(j); });
    if (base && !scenario_json.contains("covariate_file")) {
        sc.covariate_template = base->covariate_template;
    } else if (!sc.covariate_file.empty()) {
        sc.covariate_file = resolve(base_dir, sc.covariate_file);
        const CsvTable t = read_csv(sc.covariate_file);
        const RoleMap r = data_path ? roles : infer_roles(t);
        sc.covariate_template = std::make_shared<const LongitudinalDataset>(dataset_from_csv(t, r, false));
    }
    return sc;
}

RunConfig parse_config(const json& doc, const std::string& base_dir, const std::string& path) {
    if (!doc.is_object()) fail(ErrorKind::config, path + ": the configuration must be a JSON object");
    static const std::set<std::string> known{"data",   "scenario", "links",   "family",         "methods",
                                             "level",  "info",     "mle_start", "fit",          "seed",
                                             "out",    "threads",  "trials",  "fitted",         "predict_method",
                                             "forecast"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.count(it.key())) bad(it.key(), "unknown key");

    RunConfig c;
    c.path = path;
    c.base_dir = base_dir;
    c.doc = doc;
    if (doc.contains("data")) {
        const json& d = doc["data"];
        if (!d.is_object()) bad("data", "expected an object with path and column roles");
        for (auto it = d.begin(); it != d.end(); ++it)
            if (!std::set<std::string>{"path", "id", "y", "x", "z", "w"}.count(it.key())) bad("data." + it.key(), "unknown key");
        if (!d.contains("path")) bad("data.path", "missing");
        c.data_path = resolve(base_dir, str(d["path"], "data.path"));
        if (d.contains("id")) c.roles.id = str(d["id"], "data.id");
        if (d.contains("y")) c.roles.y = str(d["y"], "data.y");
        for (const char* role : {"x", "z", "w"}) {
            if (!d.contains(role)) bad(std::string("data.") + role, "missing column list");
            auto cols = str_list(d[role], std::string("data.") + role);
            if (cols.empty()) bad(std::string("data.") + role, "needs at least one column");
            (role[0] == 'x' ? c.roles.x : role[0] == 'z' ? c.roles.z : c.roles.w) = std::move(cols);
        }
    }
    if (doc.contains("scenario")) {
        if (!doc["scenario"].is_object()) bad("scenario", "expected an object");
        c.scenario_json = doc["scenario"];
        // Complete scenarios are checked now; partial ones are checked once overlaid on a preset.
        if (c.scenario_json.contains("theta_true")) (void)c.scenario(std::nullopt);
    }
    if (doc.contains("links")) {
        const json& l = doc["links"];
        if (!l.is_object()) bad("links", "expected an object with s and sigma2");
        for (auto it = l.begin(); it != l.end(); ++it)
            if (it.key() != "s" && it.key() != "sigma2") bad("links." + it.key(), "unknown key");
        if (l.contains("s")) c.s_link = str(l["s"], "links.s");
        if (l.contains("sigma2")) c.sigma2_link = str(l["sigma2"], "links.sigma2");
        guarded("links", [&] { return c.links(); });
        c.links_given = true;
    }
    if (doc.contains("family")) {
        c.family = guarded("family", [&] { return family_from_json(doc["family"]); });
        c.family_given = true;
    }
    if (doc.contains("methods")) {
        if (!doc["methods"].is_array() || doc["methods"].empty()) bad("methods", "expected a non-empty array");
        c.methods.clear();
        for (const auto& m : doc["methods"])
            c.methods.push_back(guarded("methods", [&] { return method_from_string(str(m, "methods")); }));
        c.methods_given = true;
    }
    if (doc.contains("level")) {
        if (!doc["level"].is_number()) bad("level", "expected a number");
        c.level = doc["level"].get<double>();
        if (!(c.level > 0.0 && c.level < 1.0)) bad("level", "must lie in (0, 1)");
        c.level_given = true;
    }
    if (doc.contains("info")) {
        const std::string s = str(doc["info"], "info");
        if (s == "both") {
            c.info_both = true;
        } else if (s == "observed_info") {
            c.info = InfoVariant::observed_info;
        } else if (s == "outer_product") {
            c.info = InfoVariant::outer_product;
        } else {
            bad("info", "expected observed_info, outer_product or both");
        }
        c.info_given = true;
    }
    if (doc.contains("mle_start")) {
        const json& m = doc["mle_start"];
        if (m.is_object()) {
            c.mle_theta = guarded("mle_start", [&] { return theta_from_json(m); });
        } else {
            const std::string s = str(m, "mle_start");
            if (s == "initial") c.mle_start = MleStart::initial;
            else if (s == "cold") c.mle_start = MleStart::cold;
            else if (s == "truth") c.mle_start = MleStart::truth;
            else bad("mle_start", "expected initial, cold, truth or a parameter object");
        }
        c.mle_start_given = true;
    }
    if (doc.contains("fit")) {
        c.fit_json = doc["fit"];
        c.fit = guarded("fit", [&] { return mc_options_from_json(json{{"fit", doc["fit"]}}).fit; });
    }
    if (doc.contains("seed")) {
        const json& s = doc["seed"];
        if (!s.is_number_integer() || s.get<long long>() < 0) bad("seed", "expected a non-negative integer");
        c.seed = s.get<std::uint64_t>();
    }
    if (doc.contains("out")) c.out = resolve(base_dir, str(doc["out"], "out"));
    if (doc.contains("threads")) {
        if (!doc["threads"].is_number_integer() || doc["threads"].get<int>() < 0) bad("threads", "expected a non-negative integer");
        c.threads = doc["threads"].get<int>();
    }
    if (doc.contains("trials")) {
        if (!doc["trials"].is_number_integer() || doc["trials"].get<long long>() < 1) bad("trials", "expected a positive integer");
        c.trials = doc["trials"].get<std::size_t>();
    }
    if (doc.contains("fitted")) c.fitted = resolve(base_dir, str(doc["fitted"], "fitted"));
    if (doc.contains("predict_method"))
        c.predict_method = guarded("predict_method", [&] { return method_from_string(str(doc["predict_method"], "predict_method")); });
    if (doc.contains("forecast")) {
        const json& f = doc["forecast"];
        if (f.is_string()) {
            c.forecast_path = resolve(base_dir, f.get<std::string>());
        } else {
            if (!f.is_object() || !f.contains("path")) bad("forecast", "expected a path or {\"path\": ...}");
            for (auto it = f.begin(); it != f.end(); ++it)
                if (it.key() != "path") bad("forecast." + it.key(), "unknown key");
            c.forecast_path = resolve(base_dir, str(f["path"], "forecast.path"));
        }
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::config, "cannot open configuration file '" + path + "'");
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Report the line and column of the byte offset.
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << path << ":" << line << ":" << col << ": invalid JSON (" << e.what() << ")";
        fail(ErrorKind::config, os.str());
    }
    const std::string base = std::filesystem::path(path).parent_path().string();
    return parse_config(doc, base, path);
}

}  // namespace ghme::cli
