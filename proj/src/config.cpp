#include "lord/config.hpp"

#include <fstream>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

IniFile IniFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

IniFile IniFile::parse_string(const std::string& text) {
    IniFile ini;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            ini.data_[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        ini.data_[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return ini;
}

bool IniFile::has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
}

std::string IniFile::get(const std::string& section, const std::string& key, const std::string& fallback) const {
    auto s = data_.find(section);
    if (s == data_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

double IniFile::get_double(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    try {
        return std::stod(get(section, key, ""));
    } catch (const std::exception&) {
        throw ConfigError("config " + section + "." + key + ": not a number");
    }
}

int IniFile::get_int(const std::string& section, const std::string& key, int fallback) const {
    if (!has(section, key)) return fallback;
    try {
        return std::stoi(get(section, key, ""));
    } catch (const std::exception&) {
        throw ConfigError("config " + section + "." + key + ": not an integer");
    }
}

bool IniFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config " + section + "." + key + ": expected boolean");
}

std::vector<double> IniFile::get_doubles(const std::string& section, const std::string& key,
                                         const std::vector<double>& fallback) const {
    if (!has(section, key)) return fallback;
    std::vector<double> out;
    for (const auto& tok : split_list(get(section, key, ""))) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config " + section + "." + key + ": bad list entry '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::string> IniFile::get_strings(const std::string& section, const std::string& key,
                                              const std::vector<std::string>& fallback) const {
    if (!has(section, key)) return fallback;
    return split_list(get(section, key, ""));
}

void IniFile::set(const std::string& section, const std::string& key, const std::string& value) {
    data_[section][key] = value;
}

std::string IniFile::canonical() const {
    std::ostringstream os;
    for (const auto& [section, kv] : data_) {
        os << "[" << section << "]\n";
        for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
    }
    return os.str();
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

void domain_to_ini(IniFile& ini, const std::string& section, const DomainConfig& d) {
    ini.set(section, "handedness", d.left_handed ? "left" : "right");
    ini.set(section, "agent_lambda", fmt(d.agent_lambda));
    ini.set(section, "speed_min", fmt(d.speed_min));
    ini.set(section, "speed_max", fmt(d.speed_max));
    ini.set(section, "lane_count", std::to_string(d.lane_count));
    ini.set(section, "lane_width", fmt(d.lane_width));
    ini.set(section, "curvature_min", fmt(d.curvature_min));
    ini.set(section, "curvature_max", fmt(d.curvature_max));
    ini.set(section, "gap_mean", fmt(d.gap_mean));
    ini.set(section, "speed_noise", fmt(d.speed_noise));
    ini.set(section, "lateral_noise", fmt(d.lateral_noise));
    ini.set(section, "cruise_factor", fmt(d.cruise_factor));
}

DomainConfig domain_from_ini(const IniFile& ini, const std::string& section, DomainConfig d) {
    const std::string hand = ini.get(section, "handedness", d.left_handed ? "left" : "right");
    if (hand != "left" && hand != "right") throw ConfigError(section + ".handedness must be left or right");
    d.left_handed = hand == "left";
    d.agent_lambda = ini.get_double(section, "agent_lambda", d.agent_lambda);
    d.speed_min = ini.get_double(section, "speed_min", d.speed_min);
    d.speed_max = ini.get_double(section, "speed_max", d.speed_max);
    d.lane_count = ini.get_int(section, "lane_count", d.lane_count);
    d.lane_width = ini.get_double(section, "lane_width", d.lane_width);
    d.curvature_min = ini.get_double(section, "curvature_min", d.curvature_min);
    d.curvature_max = ini.get_double(section, "curvature_max", d.curvature_max);
    d.gap_mean = ini.get_double(section, "gap_mean", d.gap_mean);
    d.speed_noise = ini.get_double(section, "speed_noise", d.speed_noise);
    d.lateral_noise = ini.get_double(section, "lateral_noise", d.lateral_noise);
    d.cruise_factor = ini.get_double(section, "cruise_factor", d.cruise_factor);
    d.validate();
    return d;
}

void split_to_ini(IniFile& ini, const std::string& section, const DataSplitSizes& s) {
    ini.set(section, "train_scenarios", std::to_string(s.train_scenarios));
    ini.set(section, "train_windows", std::to_string(s.train_windows));
    ini.set(section, "val_scenarios", std::to_string(s.val_scenarios));
    ini.set(section, "val_windows", std::to_string(s.val_windows));
    ini.set(section, "test_scenarios", std::to_string(s.test_scenarios));
    ini.set(section, "test_windows", std::to_string(s.test_windows));
}

DataSplitSizes split_from_ini(const IniFile& ini, const std::string& section, DataSplitSizes s) {
    s.train_scenarios = ini.get_int(section, "train_scenarios", s.train_scenarios);
    s.train_windows = ini.get_int(section, "train_windows", s.train_windows);
    s.val_scenarios = ini.get_int(section, "val_scenarios", s.val_scenarios);
    s.val_windows = ini.get_int(section, "val_windows", s.val_windows);
    s.test_scenarios = ini.get_int(section, "test_scenarios", s.test_scenarios);
    s.test_windows = ini.get_int(section, "test_windows", s.test_windows);
    return s;
}

std::string join_doubles(const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << fmt(v[i]);
    }
    return os.str();
}

std::string join_strings(const std::vector<std::string>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig cfg;
    cfg.domain_id.name = "id";
    cfg.domain_ood.name = "ood";
    cfg.domain_ood.left_handed = true;
    cfg.domain_ood.agent_lambda = 1.5;
    cfg.domain_ood.speed_min = 4.0;
    cfg.domain_ood.speed_max = 9.0;
    cfg.domain_ood.gap_mean = 40.0;
    cfg.domain_ood.cruise_factor = 0.8;
    cfg.domain_ood_handedness = cfg.domain_id;
    cfg.domain_ood_handedness.name = "ood_hand";
    cfg.domain_ood_handedness.left_handed = true;
    cfg.ood_split = {40, 4, 15, 2, 30, 2};
    return cfg;
}

ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
    ExperimentConfig cfg = defaults();
    cfg.domain_id = domain_from_ini(ini, "domains.id", cfg.domain_id);
    cfg.domain_ood = domain_from_ini(ini, "domains.ood", cfg.domain_ood);
    cfg.domain_ood_handedness = cfg.domain_id;
    cfg.domain_ood_handedness.name = "ood_hand";
    cfg.domain_ood_handedness.left_handed = !cfg.domain_id.left_handed;

    ModelConfig& m = cfg.model;
    m.history_steps = ini.get_int("model", "history_steps", m.history_steps);
    m.horizon_steps = ini.get_int("model", "horizon_steps", m.horizon_steps);
    m.max_agents = ini.get_int("model", "max_agents", m.max_agents);
    m.num_modes = ini.get_int("model", "num_modes", m.num_modes);
    m.latent_dim = ini.get_int("model", "latent_dim", m.latent_dim);
    m.lane_points = ini.get_int("model", "lane_points", m.lane_points);
    m.dt = ini.get_double("model", "dt", m.dt);
    m.enc_hidden = ini.get_int("model", "enc_hidden", m.enc_hidden);
    m.enc_embed = ini.get_int("model", "enc_embed", m.enc_embed);
    m.fusion_hidden = ini.get_int("model", "fusion_hidden", m.fusion_hidden);
    m.head_hidden = ini.get_int("model", "head_hidden", m.head_hidden);
    m.joint_hidden = ini.get_int("model", "joint_hidden", m.joint_hidden);
    m.head_game_params = ini.get_bool("model", "head_game_params", m.head_game_params);
    m.head_sdv = ini.get_bool("model", "head_sdv", m.head_sdv);
    m.plan_mode = plan_mode_from_string(ini.get("model", "plan_mode", plan_mode_name(m.plan_mode)));

    PlannerConfig& p = cfg.planner;
    p.accel_set = ini.get_doubles("planner", "accel_set", p.accel_set);
    p.lateral_set = ini.get_doubles("planner", "lateral_set", p.lateral_set);
    p.v_max = ini.get_double("planner", "v_max", p.v_max);
    p.temperature = ini.get_double("planner", "temperature", p.temperature);
    p.unroll_steps = ini.get_int("planner", "unroll_steps", p.unroll_steps);
    p.unroll_step_size = ini.get_double("planner", "unroll_step_size", p.unroll_step_size);
    p.unroll_clamp = ini.get_double("planner", "unroll_clamp", p.unroll_clamp);
    p.proximity_margin = ini.get_double("planner", "proximity_margin", p.proximity_margin);
    p.agent_radius = ini.get_double("planner", "agent_radius", p.agent_radius);

    LossConfig& l = cfg.loss;
    l.w_regression = ini.get_double("loss", "w_regression", l.w_regression);
    l.w_mode_ce = ini.get_double("loss", "w_mode_ce", l.w_mode_ce);
    l.w_candidate_ce = ini.get_double("loss", "w_candidate_ce", l.w_candidate_ce);
    l.w_init = ini.get_double("loss", "w_init", l.w_init);
    l.w_sdv = ini.get_double("loss", "w_sdv", l.w_sdv);
    l.w_unrolled = ini.get_double("loss", "w_unrolled", l.w_unrolled);
    l.w_final_plan = ini.get_double("loss", "w_final_plan", l.w_final_plan);
    l.w_progress = ini.get_double("loss", "w_progress", l.w_progress);
    l.w_collision = ini.get_double("loss", "w_collision", l.w_collision);
    l.history_dropout = ini.get_double("loss", "history_dropout", l.history_dropout);

    cfg.id_split = split_from_ini(ini, "data.id", cfg.id_split);
    cfg.ood_split = split_from_ini(ini, "data.ood", cfg.ood_split);

    cfg.base_steps = ini.get_int("train", "base_steps", cfg.base_steps);
    cfg.base_batch = ini.get_int("train", "base_batch", cfg.base_batch);
    cfg.base_lr = ini.get_double("train", "base_lr", cfg.base_lr);
    cfg.val_every = ini.get_int("train", "val_every", cfg.val_every);
    cfg.ft_steps = ini.get_int("finetune", "steps", cfg.ft_steps);
    cfg.ft_batch = ini.get_int("finetune", "batch", cfg.ft_batch);
    cfg.ft_lr = ini.get_double("finetune", "lr", cfg.ft_lr);
    cfg.adapter_rank = ini.get_int("finetune", "rank", cfg.adapter_rank);
    cfg.adapter_dropout = ini.get_double("finetune", "dropout", cfg.adapter_dropout);
    cfg.ft_strategies = ini.get_strings("finetune", "strategies", cfg.ft_strategies);
    cfg.ft_modes = ini.get_strings("finetune", "modes", cfg.ft_modes);
    cfg.alphas = ini.get_doubles("finetune", "alphas", cfg.alphas);
    cfg.mix_alpha = ini.get_double("finetune", "mix_alpha", cfg.mix_alpha);

    cfg.cl_episodes = ini.get_int("eval", "cl_episodes", cfg.cl_episodes);
    cfg.replan_every = ini.get_int("eval", "replan_every", cfg.replan_every);
    cfg.miss_threshold = ini.get_double("eval", "miss_threshold", cfg.miss_threshold);

    cfg.out_dir = ini.get("output", "dir", cfg.out_dir);
    cfg.master_seed = static_cast<std::uint64_t>(ini.get_double("output", "master_seed",
                                                                static_cast<double>(cfg.master_seed)));
    return cfg;
}

IniFile ExperimentConfig::to_ini() const {
    IniFile ini;
    domain_to_ini(ini, "domains.id", domain_id);
    domain_to_ini(ini, "domains.ood", domain_ood);

    ini.set("model", "history_steps", std::to_string(model.history_steps));
    ini.set("model", "horizon_steps", std::to_string(model.horizon_steps));
    ini.set("model", "max_agents", std::to_string(model.max_agents));
    ini.set("model", "num_modes", std::to_string(model.num_modes));
    ini.set("model", "latent_dim", std::to_string(model.latent_dim));
    ini.set("model", "lane_points", std::to_string(model.lane_points));
    ini.set("model", "dt", fmt(model.dt));
    ini.set("model", "enc_hidden", std::to_string(model.enc_hidden));
    ini.set("model", "enc_embed", std::to_string(model.enc_embed));
    ini.set("model", "fusion_hidden", std::to_string(model.fusion_hidden));
    ini.set("model", "head_hidden", std::to_string(model.head_hidden));
    ini.set("model", "joint_hidden", std::to_string(model.joint_hidden));
    ini.set("model", "head_game_params", model.head_game_params ? "true" : "false");
    ini.set("model", "head_sdv", model.head_sdv ? "true" : "false");
    ini.set("model", "plan_mode", plan_mode_name(model.plan_mode));

    ini.set("planner", "accel_set", join_doubles(planner.accel_set));
    ini.set("planner", "lateral_set", join_doubles(planner.lateral_set));
    ini.set("planner", "v_max", fmt(planner.v_max));
    ini.set("planner", "temperature", fmt(planner.temperature));
    ini.set("planner", "unroll_steps", std::to_string(planner.unroll_steps));
    ini.set("planner", "unroll_step_size", fmt(planner.unroll_step_size));
    ini.set("planner", "unroll_clamp", fmt(planner.unroll_clamp));
    ini.set("planner", "proximity_margin", fmt(planner.proximity_margin));
    ini.set("planner", "agent_radius", fmt(planner.agent_radius));

    ini.set("loss", "w_regression", fmt(loss.w_regression));
    ini.set("loss", "w_mode_ce", fmt(loss.w_mode_ce));
    ini.set("loss", "w_candidate_ce", fmt(loss.w_candidate_ce));
    ini.set("loss", "w_init", fmt(loss.w_init));
    ini.set("loss", "w_sdv", fmt(loss.w_sdv));
    ini.set("loss", "w_unrolled", fmt(loss.w_unrolled));
    ini.set("loss", "w_final_plan", fmt(loss.w_final_plan));
    ini.set("loss", "w_progress", fmt(loss.w_progress));
    ini.set("loss", "w_collision", fmt(loss.w_collision));
    ini.set("loss", "history_dropout", fmt(loss.history_dropout));

    split_to_ini(ini, "data.id", id_split);
    split_to_ini(ini, "data.ood", ood_split);

    ini.set("train", "base_steps", std::to_string(base_steps));
    ini.set("train", "base_batch", std::to_string(base_batch));
    ini.set("train", "base_lr", fmt(base_lr));
    ini.set("train", "val_every", std::to_string(val_every));
    ini.set("finetune", "steps", std::to_string(ft_steps));
    ini.set("finetune", "batch", std::to_string(ft_batch));
    ini.set("finetune", "lr", fmt(ft_lr));
    ini.set("finetune", "rank", std::to_string(adapter_rank));
    ini.set("finetune", "dropout", fmt(adapter_dropout));
    ini.set("finetune", "strategies", join_strings(ft_strategies));
    ini.set("finetune", "modes", join_strings(ft_modes));
    ini.set("finetune", "alphas", join_doubles(alphas));
    ini.set("finetune", "mix_alpha", fmt(mix_alpha));

    ini.set("eval", "cl_episodes", std::to_string(cl_episodes));
    ini.set("eval", "replan_every", std::to_string(replan_every));
    ini.set("eval", "miss_threshold", fmt(miss_threshold));

    ini.set("output", "dir", out_dir);
    ini.set("output", "master_seed", std::to_string(master_seed));
    return ini;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(to_ini().canonical()); }

std::string ExperimentConfig::meta_line() const {
    std::ostringstream os;
    os << "config_hash=" << hash() << " master_seed=" << master_seed;
    return os.str();
}

}  // namespace lord
