#include "biblab/run_config.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace biblab {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& section, const std::string& key,
                    const std::string& v) {
    try {
        std::size_t idx = 0;
        double out = std::stod(v, &idx);
        if (idx != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + v + "' is not a number");
    }
}

long parse_long(const std::string& section, const std::string& key,
                const std::string& v) {
    try {
        std::size_t idx = 0;
        long out = std::stol(v, &idx);
        if (idx != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + v + "' is not an integer");
    }
}

std::uint64_t parse_u64(const std::string& section, const std::string& key,
                        const std::string& v) {
    try {
        std::size_t idx = 0;
        unsigned long long out = std::stoull(v, &idx);
        if (idx != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + v +
                          "' is not an unsigned integer");
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

std::vector<Index> parse_index_list(const std::string& section, const std::string& key,
                                    const std::string& v) {
    std::vector<Index> out;
    for (const std::string& part : split(v, ',')) {
        if (part.empty()) continue;
        out.push_back(static_cast<Index>(parse_long(section, key, part)));
    }
    return out;
}

std::vector<RowVec> parse_means(const std::string& v) {
    std::vector<RowVec> out;
    for (const std::string& point : split(v, ';')) {
        if (point.empty()) continue;
        std::vector<std::string> coords = split(point, ',');
        RowVec m(coords.size());
        for (std::size_t i = 0; i < coords.size(); ++i) {
            m[static_cast<Index>(i)] = parse_double("dataset", "means", coords[i]);
        }
        out.push_back(std::move(m));
    }
    if (out.empty()) throw ConfigError("[dataset] means: empty list");
    return out;
}

Activation parse_activation(const std::string& v) {
    if (v == "tanh") return Activation::Tanh;
    if (v == "relu") return Activation::Relu;
    throw ConfigError("[model] activation: '" + v + "' (valid: tanh, relu)");
}

EncoderKind parse_encoder_kind(const std::string& v) {
    for (EncoderKind k : {EncoderKind::Deterministic, EncoderKind::GaussianHead,
                          EncoderKind::AdditiveInputNoise, EncoderKind::ConcatNoise}) {
        if (v == to_string(k)) return k;
    }
    throw ConfigError("[model] encoder: '" + v +
                      "' (valid: deterministic, gaussian-head, additive-input-noise, "
                      "concat-noise)");
}

using Section = std::map<std::string, std::string>;
using Sections = std::map<std::string, Section>;

Sections parse_ini(const std::string& text) {
    Sections out;
    std::istringstream is(text);
    std::string line, section;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
            }
            out[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key before any section");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        if (out[section].count(key)) {
            throw ConfigError("[" + section + "] " + key + ": duplicate key");
        }
        out[section][key] = val;
    }
    return out;
}

void apply_dataset(RunConfig& cfg, const Section& sec,
                   const std::filesystem::path& base) {
    for (const auto& [key, val] : sec) {
        if (key == "kind") {
            try {
                cfg.dataset.kind = dataset_kind_from_string(val);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("[dataset] kind: ") + e.what());
            }
        } else if (key == "seed") {
            cfg.dataset.seed = parse_u64("dataset", key, val);
        } else if (key == "n_train") {
            cfg.dataset.n_train = parse_long("dataset", key, val);
        } else if (key == "n_test") {
            cfg.dataset.n_test = parse_long("dataset", key, val);
        } else if (key == "means") {
            cfg.dataset.means = parse_means(val);
        } else if (key == "component_sigma") {
            cfg.dataset.component_sigma = parse_double("dataset", key, val);
        } else if (key == "ring_radius") {
            cfg.dataset.ring_radius = parse_double("dataset", key, val);
        } else if (key == "ring_noise") {
            cfg.dataset.ring_noise = parse_double("dataset", key, val);
        } else if (key == "lg_dim_x") {
            cfg.dataset.lg_dim_x = parse_long("dataset", key, val);
        } else if (key == "lg_dim_z") {
            cfg.dataset.lg_dim_z = parse_long("dataset", key, val);
        } else if (key == "lg_noise_sigma") {
            cfg.dataset.lg_noise_sigma = parse_double("dataset", key, val);
        } else if (key == "world_file") {
            const std::filesystem::path p = base / val;
            std::ifstream is(p);
            if (!is) throw ConfigError("[dataset] world_file: cannot open " + p.string());
            try {
                cfg.dataset.world = oracle::load_world(is);
            } catch (const oracle::OracleError& e) {
                throw ConfigError("[dataset] world_file: " + std::string(e.what()));
            }
        } else {
            throw ConfigError("[dataset] unknown key '" + key + "'");
        }
    }
}

void apply_model(RunConfig& cfg, const Section& sec) {
    // the preset expands first so explicit keys can override it
    if (auto it = sec.find("preset"); it != sec.end()) {
        try {
            cfg.preset_cfg = preset(preset_from_string(it->second));
        } catch (const BindingError& e) {
            throw ConfigError(std::string("[model] preset: ") + e.what());
        }
    }
    for (const auto& [key, val] : sec) {
        try {
            if (key == "preset") {
                continue;
            } else if (key == "input_dim") {
                cfg.model.input_dim = parse_long("model", key, val);
            } else if (key == "latent_dim") {
                cfg.model.latent_dim = parse_long("model", key, val);
            } else if (key == "enc_hidden") {
                cfg.model.enc_hidden = parse_index_list("model", key, val);
            } else if (key == "dec_hidden") {
                cfg.model.dec_hidden = parse_index_list("model", key, val);
            } else if (key == "disc_hidden") {
                cfg.model.disc_hidden = parse_index_list("model", key, val);
            } else if (key == "activation") {
                cfg.model.act = parse_activation(val);
            } else if (key == "laplacian_lambda") {
                cfg.model.laplacian_lambda = parse_double("model", key, val);
            } else if (key == "gaussian_sigma") {
                cfg.model.gaussian_sigma = parse_double("model", key, val);
            } else if (key == "encoder") {
                cfg.preset_cfg.encoder = parse_encoder_kind(val);
            } else if (key == "noise_dim") {
                cfg.model.noise_dim = parse_long("model", key, val);
            } else if (key == "noise_sigma") {
                cfg.model.noise_sigma = parse_double("model", key, val);
            } else if (key == "codebook_size") {
                cfg.model.codebook_size = parse_long("model", key, val);
            } else if (key == "dither_sigma") {
                cfg.model.dither_sigma = parse_double("model", key, val);
            } else if (key == "classes") {
                cfg.model.classes = parse_long("model", key, val);
            } else if (key == "w_a") {
                cfg.preset_cfg.weights.w_a = parse_double("model", key, val);
            } else if (key == "w_b") {
                cfg.preset_cfg.weights.w_b = parse_double("model", key, val);
            } else if (key == "w_c") {
                cfg.preset_cfg.weights.w_c = parse_double("model", key, val);
            } else if (key == "w_d") {
                cfg.preset_cfg.weights.w_d = parse_double("model", key, val);
            } else if (key == "b_sign") {
                cfg.preset_cfg.weights.b_sign = parse_double("model", key, val);
            } else if (key == "term_b") {
                cfg.preset_cfg.bindings.b = term_b_binding_from_string(val);
            } else if (key == "term_c") {
                cfg.preset_cfg.bindings.c = term_c_binding_from_string(val);
            } else if (key == "term_d") {
                cfg.preset_cfg.bindings.d = term_d_binding_from_string(val);
            } else {
                throw ConfigError("[model] unknown key '" + key + "'");
            }
        } catch (const BindingError& e) {
            throw ConfigError("[model] " + key + ": " + e.what());
        }
    }
}

void apply_train(RunConfig& cfg, const Section& sec) {
    for (const auto& [key, val] : sec) {
        if (key == "steps") {
            cfg.train.steps = parse_long("train", key, val);
        } else if (key == "batch_size") {
            cfg.train.batch_size = parse_long("train", key, val);
        } else if (key == "learning_rate") {
            cfg.train.learning_rate = parse_double("train", key, val);
        } else if (key == "adam_beta1") {
            cfg.train.adam_beta1 = parse_double("train", key, val);
        } else if (key == "adam_beta2") {
            cfg.train.adam_beta2 = parse_double("train", key, val);
        } else if (key == "adam_eps") {
            cfg.train.adam_eps = parse_double("train", key, val);
        } else if (key == "disc_steps_per_gen_step") {
            cfg.train.disc_steps_per_gen_step =
                static_cast<int>(parse_long("train", key, val));
        } else if (key == "eval_every") {
            cfg.train.eval_every = parse_long("train", key, val);
        } else if (key == "seed") {
            cfg.train.seed = parse_u64("train", key, val);
        } else if (key == "beta") {
            cfg.train.beta = parse_double("train", key, val);
            cfg.preset_cfg.weights.beta = cfg.train.beta;
        } else if (key == "disc_d_source") {
            if (val == "prior") {
                cfg.train.disc_d_source = DiscDSource::Prior;
            } else if (val == "reconstruction") {
                cfg.train.disc_d_source = DiscDSource::Reconstruction;
            } else {
                throw ConfigError("[train] disc_d_source: '" + val +
                                  "' (valid: prior, reconstruction)");
            }
        } else if (key == "quantized_pretrain_steps") {
            cfg.train.quantized_pretrain_steps = parse_long("train", key, val);
        } else if (key == "codebook_iters") {
            cfg.train.codebook_iters = static_cast<int>(parse_long("train", key, val));
        } else {
            throw ConfigError("[train] unknown key '" + key + "'");
        }
    }
}

void apply_output(RunConfig& cfg, const Section& sec) {
    for (const auto& [key, val] : sec) {
        if (key == "dir") {
            cfg.output_dir = val;
        } else {
            throw ConfigError("[output] unknown key '" + key + "'");
        }
    }
}

void apply_rd(RunConfig& cfg, const Section& sec) {
    for (const auto& [key, val] : sec) {
        if (key == "codebook_sizes") {
            cfg.rd_codebook_sizes = parse_index_list("rd", key, val);
        } else if (key == "seeds") {
            cfg.rd_seeds = static_cast<int>(parse_long("rd", key, val));
        } else {
            throw ConfigError("[rd] unknown key '" + key + "'");
        }
    }
}

void apply_novelty(RunConfig& cfg, const Section& sec) {
    for (const auto& [key, val] : sec) {
        if (key == "weight_disc") {
            cfg.novelty_weight_disc = parse_double("novelty", key, val);
        } else if (key == "weight_recon") {
            cfg.novelty_weight_recon = parse_double("novelty", key, val);
        } else if (key == "outlier_sigma") {
            cfg.novelty_outlier_sigma = parse_double("novelty", key, val);
        } else if (key == "n_outliers") {
            cfg.novelty_outliers = parse_long("novelty", key, val);
        } else {
            throw ConfigError("[novelty] unknown key '" + key + "'");
        }
    }
}

RunConfig parse_sections(const Sections& sections, const std::filesystem::path& base) {
    RunConfig cfg;
    for (const auto& [name, sec] : sections) {
        if (name == "dataset") {
            apply_dataset(cfg, sec, base);
        } else if (name == "model") {
            apply_model(cfg, sec);
        } else if (name == "train") {
            apply_train(cfg, sec);
        } else if (name == "output") {
            apply_output(cfg, sec);
        } else if (name == "rd") {
            apply_rd(cfg, sec);
        } else if (name == "novelty") {
            apply_novelty(cfg, sec);
        } else {
            throw ConfigError("unknown section [" + name + "]");
        }
    }
    return cfg;
}

} // namespace

RunConfig parse_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_sections(parse_ini(buf.str()),
                          std::filesystem::path(path).parent_path());
}

RunConfig parse_run_config_text(const std::string& text) {
    return parse_sections(parse_ini(text), std::filesystem::current_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    auto& ds = j["dataset"];
    ds["kind"] = to_string(cfg.dataset.kind);
    ds["seed"] = cfg.dataset.seed;
    ds["n_train"] = cfg.dataset.n_train;
    ds["n_test"] = cfg.dataset.n_test;
    if (cfg.dataset.kind == DatasetKind::Gmm2d || cfg.dataset.kind == DatasetKind::LabeledGmm) {
        nlohmann::json means = nlohmann::json::array();
        for (const RowVec& m : cfg.dataset.means) {
            nlohmann::json coords = nlohmann::json::array();
            for (Index i = 0; i < m.size(); ++i) coords.push_back(m[i]);
            means.push_back(std::move(coords));
        }
        ds["means"] = std::move(means);
        ds["component_sigma"] = cfg.dataset.component_sigma;
    }
    if (cfg.dataset.kind == DatasetKind::Ring2d) {
        ds["ring_radius"] = cfg.dataset.ring_radius;
        ds["ring_noise"] = cfg.dataset.ring_noise;
    }
    if (cfg.dataset.kind == DatasetKind::LinearGaussian) {
        ds["lg_dim_x"] = cfg.dataset.lg_dim_x;
        ds["lg_dim_z"] = cfg.dataset.lg_dim_z;
        ds["lg_noise_sigma"] = cfg.dataset.lg_noise_sigma;
    }

    auto& mo = j["model"];
    mo["preset"] = to_string(cfg.preset_cfg.name);
    mo["input_dim"] = cfg.model.input_dim;
    mo["latent_dim"] = cfg.model.latent_dim;
    mo["activation"] = cfg.model.act == Activation::Tanh ? "tanh" : "relu";
    mo["laplacian_lambda"] = cfg.model.laplacian_lambda;
    mo["gaussian_sigma"] = cfg.model.gaussian_sigma;
    mo["encoder"] = cfg.preset_cfg.encoder ? to_string(*cfg.preset_cfg.encoder) : "none";
    mo["weights"] = {{"w_a", cfg.preset_cfg.weights.w_a},
                     {"w_b", cfg.preset_cfg.weights.w_b},
                     {"w_c", cfg.preset_cfg.weights.w_c},
                     {"w_d", cfg.preset_cfg.weights.w_d},
                     {"beta", cfg.preset_cfg.weights.beta},
                     {"b_sign", cfg.preset_cfg.weights.b_sign}};
    mo["bindings"] = {{"term_a", to_string(cfg.preset_cfg.bindings.a)},
                      {"term_b", to_string(cfg.preset_cfg.bindings.b)},
                      {"term_c", to_string(cfg.preset_cfg.bindings.c)},
                      {"term_d", to_string(cfg.preset_cfg.bindings.d)}};
    mo["quantized"] = cfg.preset_cfg.quantized;
    mo["dithered"] = cfg.preset_cfg.dithered;

    auto& tr = j["train"];
    tr["steps"] = cfg.train.steps;
    tr["batch_size"] = cfg.train.batch_size;
    tr["learning_rate"] = cfg.train.learning_rate;
    tr["disc_steps_per_gen_step"] = cfg.train.disc_steps_per_gen_step;
    tr["eval_every"] = cfg.train.eval_every;
    tr["seed"] = cfg.train.seed;
    tr["beta"] = cfg.train.beta;
    return j.dump(2);
}

Mat make_outliers(const DatasetSpec& spec, Index n, double sigma_multiplier,
                  Rng& rng) {
    if (spec.kind != DatasetKind::Gmm2d && spec.kind != DatasetKind::LabeledGmm) {
        throw std::invalid_argument("make_outliers: only defined for mixture datasets");
    }
    const double margin = sigma_multiplier * spec.component_sigma;
    double reach = 0.0;
    for (const RowVec& m : spec.means) reach = std::max(reach, m.cwiseAbs().maxCoeff());
    const double box = reach + margin + 3.0 * spec.component_sigma;
    const Index dim = spec.means.front().size();
    std::uniform_real_distribution<double> coord(-box, box);
    Mat out(n, dim);
    for (Index i = 0; i < n; ++i) {
        for (;;) {
            RowVec cand(dim);
            for (Index d = 0; d < dim; ++d) cand[d] = coord(rng);
            bool far_enough = true;
            for (const RowVec& m : spec.means) {
                if ((cand - m).norm() < margin) {
                    far_enough = false;
                    break;
                }
            }
            if (far_enough) {
                out.row(i) = cand;
                break;
            }
        }
    }
    return out;
}

} // namespace biblab
