#pragma once

// Experiment configuration as JSON. Every key except schema_version is optional
// and falls back to the library default; unknown keys and mistyped values are
// rejected with the line they appear on.

#include "exo/anomaly.hpp"
#include "exo/csv.hpp"
#include "exo/hil.hpp"
#include "exo/scenario.hpp"
#include "exo/translator.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace exo {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
    int subjects = 10;
    int detector_subjects = 6;  // the last ones walk the clean training bouts
    int clean_gaits = 25;
    int conflict_gaits = 25;
    double severity = 0.8;
    int conflicts_per_episode = 3;
    double conflict_duration = 2.5;  // s

    /// Subjects [0, eval_subjects()) get conflict bouts for detector evaluation.
    int eval_subjects() const { return subjects - detector_subjects; }

    void validate() const {
        if (subjects < 4) throw ConfigError("data.subjects: need at least 4 subjects for translation");
        if (detector_subjects < 1 || detector_subjects >= subjects)
            throw ConfigError("data.detector_subjects: must lie in [1, subjects)");
        if (clean_gaits < 5 || conflict_gaits < 5) throw ConfigError("data: episodes need at least 5 gaits");
        if (!(severity > 0.0 && severity <= 1.0)) throw ConfigError("data.severity: must lie in (0, 1]");
        if (conflicts_per_episode < 1 || !(conflict_duration > 0.0)) throw ConfigError("data: invalid conflict schedule");
    }
};

struct HilRunConfig {
    int subjects = 2;  // the first ones are optimized
    int gaits = 7;     // per iteration; the cost uses the last
    double lambda = 0.5;
    HilConfig loop;
};

struct ExperimentConfig {
    std::string scenario = "default";
    std::uint64_t seed = 1;
    PopulationConfig population;
    DataConfig data;
    RobotParams plant = RobotParams::knees();
    ImpedanceConfig controller = ImpedanceConfig::for_joints(kKnees);
    ObserverConfig observer;
    SessionConfig session;
    KernelCounts dmp;
    WindowSpec window;
    VaeConfig vae;
    TranslatorConfig translator;
    HilRunConfig hil;

    SessionSetup setup() const {
        SessionSetup s;
        s.plant = plant;
        s.impedance = controller;
        s.observer = observer;
        s.session = session;
        s.bounds = compute_bounds(plant, WorkspaceRanges::knee_default(plant.n));
        return s;
    }

    CostConfig cost() const { return CostConfig{hil.lambda}; }

    void validate() const;
    Json to_json() const;
    /// Hash of every setting except the seed.
    std::string hash() const;
};

namespace config_detail {

// Visits every configurable field with its (section, key) name; shared by the
// reader and the writer so the two cannot drift apart.
template <typename C, typename V>
void visit_fields(C& c, V&& v) {
    v("", "scenario", c.scenario);
    v("", "seed", c.seed);

    auto& p = c.population;
    v("population", "latent_dim", p.latent_dim);
    v("population", "task_noise", p.task_noise);
    v("population", "walk_noise", p.walk_noise);
    v("population", "map_linear", p.map_linear);
    v("population", "map_quadratic", p.map_quadratic);
    v("population", "map_seed", p.map_seed);
    v("population", "cadence_mean", p.cadence_mean);
    v("population", "cadence_sd", p.cadence_sd);
    v("population", "K_h", p.K_h);
    v("population", "C_h", p.C_h);
    v("population", "impedance_spread", p.impedance_spread);

    auto& d = c.data;
    v("data", "subjects", d.subjects);
    v("data", "detector_subjects", d.detector_subjects);
    v("data", "clean_gaits", d.clean_gaits);
    v("data", "conflict_gaits", d.conflict_gaits);
    v("data", "severity", d.severity);
    v("data", "conflicts_per_episode", d.conflicts_per_episode);
    v("data", "conflict_duration", d.conflict_duration);

    auto& r = c.plant;
    v("plant", "mass", r.mass);
    v("plant", "length", r.length);
    v("plant", "com", r.com);
    v("plant", "inertia", r.inertia);
    v("plant", "stiffness", r.stiffness);
    v("plant", "rotor", r.rotor);
    v("plant", "g0", r.g0);

    auto& k = c.controller;
    v("controller", "C_d", k.C_d);
    v("controller", "K_d", k.K_d);
    v("controller", "K_v", k.K_v);
    v("controller", "K_z", k.K_z);
    v("controller", "lambda1", k.lambda1);
    v("controller", "lambda2", k.lambda2);
    v("controller", "chi1", k.chi1);
    v("controller", "chi2", k.chi2);
    v("controller", "k_g", k.k_g);
    v("controller", "delta", k.delta);
    v("controller", "torque_limit", k.torque_limit);
    v("controller", "score_cutoff_hz", k.score_cutoff_hz);
    v("controller", "score_gain", k.score_gain);

    v("observer", "beta", c.observer.beta);
    v("observer", "rho", c.observer.rho);

    auto& s = c.session;
    v("session", "dt", s.dt);
    v("session", "log_decimation", s.log_decimation);
    v("session", "entrainment", s.entrainment);
    v("session", "cadence_jitter", s.cadence_jitter);
    v("session", "jitter_tau", s.jitter_tau);
    v("session", "score_window", s.score_window);
    v("session", "score_stride", s.score_stride);
    v("session", "initial_tracking", s.initial_tracking);

    v("dmp", "rhythmic_kernels", c.dmp.rhythmic);
    v("dmp", "discrete_kernels", c.dmp.discrete);

    v("window", "length", c.window.length);
    v("window", "stride", c.window.stride);
    v("window", "modality", c.window.modality);

    v("vae", "latent", c.vae.latent);
    v("vae", "hidden", c.vae.hidden);
    v("vae", "kl_weight", c.vae.kl_weight);
    v("vae", "step_size", c.vae.train.step_size);
    v("vae", "batch_size", c.vae.train.batch_size);
    v("vae", "epochs", c.vae.train.epochs);

    auto& t = c.translator;
    v("translator", "hidden", t.hidden);
    v("translator", "input_variance", t.input_variance);
    v("translator", "ridge_lambda", t.ridge_lambda);
    v("translator", "step_size", t.train.step_size);
    v("translator", "batch_size", t.train.batch_size);
    v("translator", "epochs", t.train.epochs);

    auto& h = c.hil;
    v("hil", "subjects", h.subjects);
    v("hil", "gaits", h.gaits);
    v("hil", "lambda", h.lambda);
    v("hil", "iterations", h.loop.iterations);
    v("hil", "bound_fraction", h.loop.bound_fraction);
    v("hil", "min_half_width", h.loop.min_half_width);
    v("hil", "frozen", h.loop.frozen);
    v("hil", "stall_limit", h.loop.stall_limit);
    v("hil", "penalty_factor", h.loop.penalty_factor);
    v("hil", "length_scale", h.loop.gp.length_scale);
    v("hil", "jitter", h.loop.gp.jitter);
    v("hil", "max_jitter", h.loop.gp.max_jitter);
    v("hil", "upsilon", h.loop.gp.upsilon);
    v("hil", "restarts", h.loop.search.restarts);
    v("hil", "search_iterations", h.loop.search.max_iterations);
}

inline Json encode_value(const std::string& s) { return s; }
inline Json encode_value(double d) { return d; }
inline Json encode_value(int i) { return i; }
inline Json encode_value(std::uint64_t u) { return u; }
inline Json encode_value(Modality m) { return to_string(m); }
inline Json encode_value(const JointVec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

/// Source line of each key, by dotted path.
class KeyLines {
public:
    explicit KeyLines(std::string text) : text_(std::move(text)) {}

    // Called for every key event in document order.
    void key(const std::string& path, const std::string& name) {
        const std::string quoted = '"' + name + '"';
        for (std::size_t at = text_.find(quoted, cursor_); at != std::string::npos; at = text_.find(quoted, at + 1)) {
            if (at > 0 && text_[at - 1] == '\\') continue;
            std::size_t after = at + quoted.size();
            while (after < text_.size() && std::isspace(static_cast<unsigned char>(text_[after]))) ++after;
            if (after < text_.size() && text_[after] == ':') {
                lines_[path] = 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
                cursor_ = after;
                return;
            }
        }
    }

    int line(const std::string& path) const {
        const auto it = lines_.find(path);
        return it == lines_.end() ? 0 : it->second;
    }

private:
    std::string text_;
    std::size_t cursor_ = 0;
    std::map<std::string, int> lines_;
};

inline std::string dotted(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

}  // namespace config_detail

inline Json ExperimentConfig::to_json() const {
    Json j = Json::object();
    j["schema_version"] = kSchemaVersion;
    config_detail::visit_fields(*this, [&](const char* sec, const char* key, const auto& value) {
        if (*sec) j[sec][key] = config_detail::encode_value(value);
        else j[key] = config_detail::encode_value(value);
    });
    return j;
}

inline std::string ExperimentConfig::hash() const {
    Json j = to_json();
    j.erase("seed");
    return csv::hex64(csv::fnv1a(j.dump()));
}

inline void ExperimentConfig::validate() const {
    try {
        population.validate();
        plant.validate();
        controller.validate();
        observer.validate();
        session.validate();
        dmp.validate();
        window.validate();
        vae.validate();
        translator.validate();
        hil.loop.validate();
        CostConfig{hil.lambda}.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    data.validate();
    if (plant.n != kKnees || controller.joints() != kKnees) throw ConfigError("plant/controller: the walking setup has exactly 2 joints");
    if (hil.subjects < 0 || hil.subjects > data.eval_subjects())
        throw ConfigError("hil.subjects: must lie in [0, data.subjects - data.detector_subjects] so the detector never saw them");
    if (hil.gaits < 2) throw ConfigError("hil.gaits: need at least 2 gaits per iteration");
    if (hil.loop.frozen >= dmp.rhythmic) throw ConfigError("hil.frozen: must leave at least one free kernel weight");
    if (window.length > session.score_window * 4 || window.length < 2) throw ConfigError("window.length: out of range");
}

/// Parse and validate. `source` names the text in error messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "config") {
    using config_detail::dotted;
    config_detail::KeyLines lines(text);
    std::vector<std::string> stack;
    std::string last_key;
    Json user;
    try {
        user = Json::parse(text, [&](int depth, Json::parse_event_t ev, Json& parsed) {
            switch (ev) {
                case Json::parse_event_t::key: {
                    last_key = parsed.get<std::string>();
                    std::string path;
                    for (std::size_t i = 1; i < stack.size(); ++i) path += stack[i] + ".";
                    lines.key(path + last_key, last_key);
                    break;
                }
                case Json::parse_event_t::object_start:
                case Json::parse_event_t::array_start: stack.push_back(depth == 0 ? std::string() : last_key); break;
                case Json::parse_event_t::object_end:
                case Json::parse_event_t::array_end:
                    if (!stack.empty()) stack.pop_back();
                    break;
                default: break;
            }
            return true;
        });
    } catch (const Json::parse_error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    auto where = [&](const std::string& path) {
        const int l = lines.line(path);
        return source + ":" + (l > 0 ? std::to_string(l) : std::string("?")) + ": ";
    };
    if (!user.is_object()) throw ConfigError(source + ":1: top level must be a JSON object");
    if (!user.contains("schema_version")) throw ConfigError(source + ":1: missing schema_version (expected " + std::to_string(kSchemaVersion) + ")");
    if (!user["schema_version"].is_number_integer() || user["schema_version"].get<int>() != kSchemaVersion)
        throw ConfigError(where("schema_version") + "unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");

    ExperimentConfig cfg;
    const Json defaults = cfg.to_json();
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string& key = it.key();
        if (!defaults.contains(key)) throw ConfigError(where(key) + "unknown key '" + key + "'");
        if (defaults[key].is_object()) {
            if (!it->is_object()) throw ConfigError(where(key) + "'" + key + "' must be an object");
            for (auto jt = it->begin(); jt != it->end(); ++jt)
                if (!defaults[key].contains(jt.key()))
                    throw ConfigError(where(dotted(key, jt.key())) + "unknown key '" + jt.key() + "' in '" + key + "'");
        }
    }

    auto read = [&](const char* sec, const char* key, auto& value) {
        const Json* node = &user;
        if (*sec) {
            if (!user.contains(sec)) return;
            node = &user[sec];
        }
        if (!node->contains(key)) return;
        const Json& j = (*node)[key];
        const std::string path = dotted(sec, key);
        auto fail = [&](const std::string& what) { throw ConfigError(where(path) + "'" + path + "' " + what); };
        using T = std::decay_t<decltype(value)>;
        if constexpr (std::is_same_v<T, std::string>) {
            if (!j.is_string()) fail("must be a string");
            value = j.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!j.is_number()) fail("must be a number");
            value = j.get<double>();
        } else if constexpr (std::is_same_v<T, int>) {
            if (!j.is_number_integer()) fail("must be an integer");
            value = j.get<int>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!j.is_number_unsigned()) fail("must be a non-negative integer");
            value = j.get<std::uint64_t>();
        } else if constexpr (std::is_same_v<T, Modality>) {
            if (!j.is_string()) fail("must be a string");
            try {
                value = parse_modality(j.get<std::string>());
            } catch (const std::exception& e) {
                fail(std::string("invalid: ") + e.what());
            }
        } else if constexpr (std::is_same_v<T, JointVec>) {
            if (!j.is_array() || j.size() != static_cast<std::size_t>(value.size())) fail("must be an array of " + std::to_string(value.size()) + " numbers");
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (!j[i].is_number()) fail("must contain only numbers");
                value[static_cast<Eigen::Index>(i)] = j[i].get<double>();
            }
        }
    };
    config_detail::visit_fields(cfg, read);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open config file");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path);
}

}  // namespace exo
