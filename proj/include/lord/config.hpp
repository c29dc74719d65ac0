#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lord/domains.hpp"
#include "lord/model.hpp"
#include "lord/planner.hpp"
#include "lord/training.hpp"

namespace lord {

// Sectioned key=value text ([section] headers, # or ; comments).
class IniFile {
public:
    static IniFile parse_file(const std::string& path);
    static IniFile parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const;
    std::vector<std::string> get_strings(const std::string& section, const std::string& key,
                                         const std::vector<std::string>& fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);

    // Sorted section/key dump; the config hash input.
    std::string canonical() const;

private:
    std::map<std::string, std::map<std::string, std::string>> data_;
};

std::uint64_t fnv1a64(const std::string& text);

struct DataSplitSizes {
    int train_scenarios = 120;
    int train_windows = 4;
    int val_scenarios = 30;
    int val_windows = 2;
    int test_scenarios = 50;
    int test_windows = 2;
};

struct ExperimentConfig {
    DomainConfig domain_id;
    DomainConfig domain_ood;
    DomainConfig domain_ood_handedness;  // handedness-only shift ablation
    ModelConfig model;
    PlannerConfig planner;
    LossConfig loss;

    DataSplitSizes id_split;
    DataSplitSizes ood_split;  // smaller: the fine-tuning budget

    // training
    int base_steps = 1500;
    int base_batch = 8;
    double base_lr = 1e-3;
    int ft_steps = 500;
    int ft_batch = 8;
    double ft_lr = 1e-3;
    int val_every = 100;
    int adapter_rank = 4;
    double adapter_dropout = 0.1;
    std::vector<std::string> ft_strategies{"full", "ftlord"};
    std::vector<std::string> ft_modes{"ood", "mix"};
    std::vector<double> alphas{0.0, 0.25, 0.5, 1.0};
    double mix_alpha = 0.25;

    // evaluation
    int cl_episodes = 50;
    int replan_every = 2;
    double miss_threshold = 3.6;

    std::string out_dir = "out";
    std::uint64_t master_seed = 7;

    static ExperimentConfig defaults();
    static ExperimentConfig from_ini(const IniFile& ini);
    IniFile to_ini() const;
    std::uint64_t hash() const;
    std::string meta_line() const;  // "config_hash=... master_seed=..."
};

}  // namespace lord
