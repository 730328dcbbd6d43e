#include "carl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "carl/errors.hpp"
#include "carl/json_io.hpp"

namespace carl {

// --- JSON (de)serialization of config structs --------------------------------

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
         {"n_heads", c.n_heads},       {"d_ff", c.d_ff},         {"max_len", c.max_len},
         {"dropout_p", c.dropout_p},   {"d_proj", c.d_proj}};
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lambda1", c.lambda1},
         {"lambda2", c.lambda2},
         {"lr_peak", c.lr_peak},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"warmup_frac", c.warmup_frac},
         {"restart_period", c.restart_period},
         {"weight_decay", c.weight_decay},
         {"seed", c.seed},
         {"eval_every", c.eval_every},
         {"deterministic", c.deterministic},
         {"m_initial", c.m_initial},
         {"tau_sim", c.tau_sim},
         {"tau_va", c.tau_va},
         {"eval_frac", c.eval_frac}};
}

void to_json(nlohmann::json& j, const PTDConfig& c) {
    j = {{"ratio", c.ratio},           {"pgd_steps", c.pgd_steps},
         {"alpha", c.alpha},           {"epsilon", c.epsilon},
         {"frobenius_cap", c.frobenius_cap}, {"gamma", c.gamma}};
}

void to_json(nlohmann::json& j, const CarlConfig& c) {
    j = {{"encoder", c.encoder}, {"train", c.train}, {"ptd", c.ptd}};
}

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

}  // namespace

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    check_keys(j,
               {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "dropout_p",
                "d_proj"},
               "encoder");
    maybe(j, "vocab_size", c.vocab_size);
    maybe(j, "d_model", c.d_model);
    maybe(j, "n_layers", c.n_layers);
    maybe(j, "n_heads", c.n_heads);
    maybe(j, "d_ff", c.d_ff);
    maybe(j, "max_len", c.max_len);
    maybe(j, "dropout_p", c.dropout_p);
    maybe(j, "d_proj", c.d_proj);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    check_keys(j,
               {"lambda1", "lambda2", "lr_peak", "epochs", "batch_size", "warmup_frac",
                "restart_period", "weight_decay", "seed", "eval_every", "deterministic",
                "m_initial", "tau_sim", "tau_va", "eval_frac"},
               "train");
    maybe(j, "lambda1", c.lambda1);
    maybe(j, "lambda2", c.lambda2);
    maybe(j, "lr_peak", c.lr_peak);
    maybe(j, "epochs", c.epochs);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "warmup_frac", c.warmup_frac);
    maybe(j, "restart_period", c.restart_period);
    maybe(j, "weight_decay", c.weight_decay);
    maybe(j, "seed", c.seed);
    maybe(j, "eval_every", c.eval_every);
    maybe(j, "deterministic", c.deterministic);
    maybe(j, "m_initial", c.m_initial);
    maybe(j, "tau_sim", c.tau_sim);
    maybe(j, "tau_va", c.tau_va);
    maybe(j, "eval_frac", c.eval_frac);
}

void from_json(const nlohmann::json& j, PTDConfig& c) {
    check_keys(j, {"ratio", "pgd_steps", "alpha", "epsilon", "frobenius_cap", "gamma"}, "ptd");
    maybe(j, "ratio", c.ratio);
    maybe(j, "pgd_steps", c.pgd_steps);
    maybe(j, "alpha", c.alpha);
    maybe(j, "epsilon", c.epsilon);
    maybe(j, "frobenius_cap", c.frobenius_cap);
    maybe(j, "gamma", c.gamma);
}

void from_json(const nlohmann::json& j, CarlConfig& c) {
    check_keys(j, {"encoder", "train", "ptd"}, "carl");
    if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("ptd")) j.at("ptd").get_to(c.ptd);
}

// --- presets ------------------------------------------------------------------

void apply_preset(CarlConfig& cfg, const std::string& name) {
    cfg = CarlConfig{};  // struct defaults are the desk preset
    if (name == "desk") {
        return;
    }
    if (name == "paper") {
        cfg.encoder.max_len = 128;
        cfg.train.lr_peak = 2e-5;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 128;
        // m=0.9996, tau=0.05, ratio=0.10, epsilon=5e-9, alpha=5,
        // lambda=(0.8,0.2), warmup 10% are already the struct defaults
        return;
    }
    if (name == "smoke") {
        cfg.ptd.epsilon = 0.5;
        cfg.ptd.alpha = 0.25;
        cfg.train.epochs = 3;
        return;
    }
    throw ConfigError("unknown preset '" + name + "' (expected paper, desk, or smoke)");
}

// --- config file loading --------------------------------------------------------

namespace {

// Minimal TOML subset: comments, [section], key = string|number|bool.
nlohmann::json parse_toml_subset(std::istream& in, const std::string& path) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fail = [&](const std::string& msg) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + msg);
        };
        // strip comments outside strings
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line.resize(i);
                break;
            }
        }
        const auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string{};
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("malformed section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) fail("empty section name");
            root[name] = nlohmann::json::object();
            section = &root[name];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) fail("expected key = value");
        if (value.front() == '"') {
            if (value.size() < 2 || value.back() != '"') fail("unterminated string");
            (*section)[key] = value.substr(1, value.size() - 2);
        } else if (value == "true" || value == "false") {
            (*section)[key] = value == "true";
        } else {
            try {
                std::size_t used = 0;
                if (value.find_first_of(".eE") != std::string::npos &&
                    value.find("0x") == std::string::npos) {
                    (*section)[key] = std::stod(value, &used);
                } else {
                    (*section)[key] = std::stoll(value, &used, 0);
                }
                if (used != value.size()) fail("malformed value '" + value + "'");
            } catch (const std::logic_error&) {
                fail("malformed value '" + value + "'");
            }
        }
    }
    return root;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: " + path + ": " + e.what());
        }
    } else {
        j = parse_toml_subset(in, path);
    }

    RunConfig run;
    // preset first, then explicit sections override
    std::string preset = "desk";
    if (j.contains("preset")) preset = j.at("preset").get<std::string>();
    apply_preset(run.carl, preset);
    run.preset = preset;

    for (const auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        if (key == "corpus") {
            run.corpus = value.get<std::string>();
        } else if (key == "scale_lo") {
            run.scale_lo = value.get<double>();
        } else if (key == "scale_hi") {
            run.scale_hi = value.get<double>();
        } else if (key == "encoder") {
            value.get_to(run.carl.encoder);
        } else if (key == "train") {
            value.get_to(run.carl.train);
        } else if (key == "ptd") {
            value.get_to(run.carl.ptd);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    return run;
}

}  // namespace carl
