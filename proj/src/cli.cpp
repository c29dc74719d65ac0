#include "lord/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lord/config.hpp"
#include "lord/errors.hpp"
#include "lord/evaluation.hpp"
#include "lord/report.hpp"

namespace lord {

namespace {

namespace fs = std::filesystem;

// Disjoint scenario-index ranges per split so derived seed sets never overlap.
constexpr std::uint64_t kSeedIdTrain = 1'000'000;
constexpr std::uint64_t kSeedIdVal = 2'000'000;
constexpr std::uint64_t kSeedIdTest = 3'000'000;
constexpr std::uint64_t kSeedOodTrain = 4'000'000;
constexpr std::uint64_t kSeedOodVal = 5'000'000;
constexpr std::uint64_t kSeedOodTest = 6'000'000;
constexpr std::uint64_t kSeedEvalId = 7'000'000;
constexpr std::uint64_t kSeedEvalOod = 8'000'000;
constexpr std::uint64_t kSeedOodHandTest = 9'000'000;

struct Paths {
    fs::path root;

    explicit Paths(const std::string& out_dir) : root(out_dir) {}

    fs::path data(const std::string& name) const { return root / "data" / (name + ".bin"); }
    fs::path ckpt(const std::string& name) const { return root / "ckpt" / (name + ".ckpt"); }
    fs::path log(const std::string& name) const { return root / "logs" / (name + ".csv"); }
    fs::path report(const std::string& name) const { return root / "reports" / name; }

    void make_dirs() const {
        fs::create_directories(root / "data");
        fs::create_directories(root / "ckpt");
        fs::create_directories(root / "logs");
        fs::create_directories(root / "reports");
    }
};

void ensure_writable(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) {
        throw DataError("refusing to overwrite " + p.string() + " (use --force)");
    }
}

void require_exists(const fs::path& p, const std::string& rule) {
    if (!fs::exists(p)) throw DataError("missing " + p.string() + " — " + rule);
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir_override;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
    bool force = false;
};

ExperimentConfig load_config(const CommonOpts& opts) {
    IniFile ini = opts.config_path.empty() ? IniFile() : IniFile::parse_file(opts.config_path);
    for (const std::string& kv : opts.overrides) {
        const std::size_t dot = kv.find('.');
        const std::size_t eq = kv.find('=');
        if (dot == std::string::npos || eq == std::string::npos || eq < dot) {
            throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        }
        ini.set(kv.substr(0, dot), kv.substr(dot + 1, eq - dot - 1), kv.substr(eq + 1));
    }
    ExperimentConfig cfg = ExperimentConfig::from_ini(ini);
    if (!opts.out_dir_override.empty()) cfg.out_dir = opts.out_dir_override;
    if (opts.has_seed_override) cfg.master_seed = opts.seed_override;
    return cfg;
}

std::string ft_artifact_name(const std::string& strategy_label, const std::string& mode_label) {
    return "ft_" + strategy_label + "_" + mode_label;
}

bool frozen_base(const StrategySpec& spec) {
    return spec.kind == FineTuneStrategy::MosaF || spec.kind == FineTuneStrategy::MosaAF;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const ExperimentConfig& cfg, bool force) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    const std::uint64_t h = cfg.hash();

    struct Job {
        const char* name;
        const DomainConfig* domain;
        int scenarios;
        int windows;
        std::uint64_t offset;
    };
    const Job jobs[] = {
        {"id_train", &cfg.domain_id, cfg.id_split.train_scenarios, cfg.id_split.train_windows, kSeedIdTrain},
        {"id_val", &cfg.domain_id, cfg.id_split.val_scenarios, cfg.id_split.val_windows, kSeedIdVal},
        {"id_test", &cfg.domain_id, cfg.id_split.test_scenarios, cfg.id_split.test_windows, kSeedIdTest},
        {"ood_train", &cfg.domain_ood, cfg.ood_split.train_scenarios, cfg.ood_split.train_windows, kSeedOodTrain},
        {"ood_val", &cfg.domain_ood, cfg.ood_split.val_scenarios, cfg.ood_split.val_windows, kSeedOodVal},
        {"ood_test", &cfg.domain_ood, cfg.ood_split.test_scenarios, cfg.ood_split.test_windows, kSeedOodTest},
    };
    for (const Job& j : jobs) ensure_writable(paths.data(j.name), force);

    Dataset id_train, ood_train;
    for (const Job& j : jobs) {
        Dataset ds = make_dataset(*j.domain, cfg.model, j.scenarios, j.windows, cfg.master_seed, j.offset, h);
        save_dataset(ds, paths.data(j.name).string());
        std::cout << "wrote " << paths.data(j.name).string() << " (" << ds.windows.size() << " windows)\n";
        if (std::string(j.name) == "id_train") id_train = ds;
        if (std::string(j.name) == "ood_train") ood_train = ds;
    }

    const DomainStatistics id_stats = domain_statistics(id_train);
    const DomainStatistics ood_stats = domain_statistics(ood_train);
    const std::string report = statistics_report(id_stats, ood_stats);
    const fs::path stats_path = paths.report("domain_stats.txt");
    ensure_writable(stats_path, force);
    std::ofstream out(stats_path);
    out << "# " << cfg.meta_line() << "\n" << report;
    std::cout << report;
    return 0;
}

// ---------------------------------------------------------------------------
// train-base

int cmd_train_base(const ExperimentConfig& cfg, bool force) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    require_exists(paths.data("id_train"), "base training needs the ID training split (run gen-data)");
    require_exists(paths.data("id_val"), "base training needs the ID validation split (run gen-data)");
    ensure_writable(paths.ckpt("base_best"), force);
    ensure_writable(paths.ckpt("base_final"), force);

    const Dataset id_train = load_dataset(paths.data("id_train").string());
    const Dataset id_val = load_dataset(paths.data("id_val").string());

    ParameterStore params;
    init_model_params(params, cfg.model, mix_seed(cfg.master_seed, 0xBA5Eull));

    TrainRun run;
    run.strategy = StrategySpec{};  // FullFT over ID data is the pre-training run
    run.mode = DataMode::ID;
    run.steps = cfg.base_steps;
    run.batch_size = cfg.base_batch;
    run.adam.lr = cfg.base_lr;
    run.val_every = cfg.val_every;
    run.seed = mix_seed(cfg.master_seed, 0x7121ull);

    TrainPaths tp;
    tp.log_csv = paths.log("train_base").string();
    tp.best_ckpt = paths.ckpt("base_best").string();
    tp.final_ckpt = paths.ckpt("base_final").string();
    tp.meta = cfg.meta_line();

    AdapterSet none;
    const TrainResult res = train(run, params, none, cfg.model, cfg.planner, cfg.loss, &id_train, nullptr, &id_val, tp);
    std::cout << "base training done: first loss " << res.first_loss << ", last loss " << res.last_loss
              << ", best val ADE " << res.best_val << " @ step " << res.best_step << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneJob {
    StrategySpec strategy;
    DataMode mode;
    double alpha;
    std::string label;  // artifact stem
};

void run_finetune_job(const ExperimentConfig& cfg, const Paths& paths, const FinetuneJob& job, bool force,
                      const Dataset* id_train, const Dataset* ood_train, const Dataset* val) {
    const fs::path best = paths.ckpt(job.label + "_best");
    const fs::path final_ = paths.ckpt(job.label + "_final");
    ensure_writable(best, force);
    ensure_writable(final_, force);

    ParameterStore params;
    init_model_params(params, cfg.model, mix_seed(cfg.master_seed, 0xBA5Eull));
    load_checkpoint_into(params, paths.ckpt("base_best").string());

    AdapterSet adapters = strategy_adapters(job.strategy, cfg.adapter_rank, cfg.adapter_dropout);
    init_adapter_set(params, adapters, cfg.model, mix_seed(cfg.master_seed, fnv1a64(job.label)));

    TrainRun run;
    run.strategy = job.strategy;
    run.mode = job.mode;
    run.alpha = job.alpha;
    run.steps = cfg.ft_steps;
    run.batch_size = cfg.ft_batch;
    run.adam.lr = cfg.ft_lr;
    run.val_every = cfg.val_every;
    run.seed = mix_seed(cfg.master_seed, fnv1a64("ft_" + job.label));

    TrainPaths tp;
    tp.log_csv = paths.log(job.label).string();
    tp.meta = cfg.meta_line();
    // Frozen-base strategies leave the base checkpoint untouched on disk and
    // store only their adapters.
    const std::string prefix = frozen_base(job.strategy) ? "adapter/" : "";
    TrainResult res = train(run, params, adapters, cfg.model, cfg.planner, cfg.loss, id_train, ood_train, val, tp);
    save_checkpoint(params, final_.string(), cfg.meta_line(), prefix);
    save_checkpoint(res.best_params, best.string(), cfg.meta_line(), prefix);
    std::cout << "finetuned " << job.label << ": best val ADE " << res.best_val << " @ step " << res.best_step
              << "\n";
}

std::vector<FinetuneJob> finetune_jobs(const ExperimentConfig& cfg, const std::string& only_strategy,
                                       const std::string& only_mode) {
    std::vector<std::string> strategies = only_strategy.empty() ? cfg.ft_strategies
                                                               : std::vector<std::string>{only_strategy};
    std::vector<std::string> modes = only_mode.empty() ? cfg.ft_modes : std::vector<std::string>{only_mode};
    std::vector<FinetuneJob> jobs;
    for (const std::string& s : strategies) {
        for (const std::string& m : modes) {
            FinetuneJob job;
            job.strategy = StrategySpec::parse(s);
            double alpha = cfg.mix_alpha;
            job.mode = data_mode_from_string(m, &alpha);
            job.alpha = alpha;
            job.label = ft_artifact_name(job.strategy.label(), data_mode_label(job.mode, alpha));
            jobs.push_back(std::move(job));
        }
    }
    return jobs;
}

int cmd_finetune(const ExperimentConfig& cfg, bool force, const std::string& only_strategy,
                 const std::string& only_mode) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    require_exists(paths.ckpt("base_best"), "fine-tuning starts from the pre-trained base (run train-base)");
    require_exists(paths.data("ood_train"), "fine-tuning needs the OOD training split (run gen-data)");

    const Dataset id_train = load_dataset(paths.data("id_train").string());
    const Dataset ood_train = load_dataset(paths.data("ood_train").string());
    const Dataset ood_val = load_dataset(paths.data("ood_val").string());

    // Validate every job before any training starts.
    std::vector<FinetuneJob> jobs = finetune_jobs(cfg, only_strategy, only_mode);
    for (const FinetuneJob& job : jobs) {
        AdapterSet adapters = strategy_adapters(job.strategy, cfg.adapter_rank, cfg.adapter_dropout);
        ParameterStore probe;
        init_model_params(probe, cfg.model, 0);
        init_adapter_set(probe, adapters, cfg.model, 0);
        trainable_mask(probe, adapters, job.strategy);
    }
    for (const FinetuneJob& job : jobs) {
        run_finetune_job(cfg, paths, job, force, &id_train, &ood_train, &ood_val);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// evaluation commands

struct LoadedModel {
    ParameterStore params;
    AdapterSet adapters;
};

LoadedModel load_model_checkpoint(const ExperimentConfig& cfg, const Paths& paths, const StrategySpec* strategy,
                                  const std::string& ckpt_name, const std::string& rule) {
    LoadedModel m;
    init_model_params(m.params, cfg.model, mix_seed(cfg.master_seed, 0xBA5Eull));
    if (!strategy) {
        require_exists(paths.ckpt(ckpt_name), rule);
        load_checkpoint_into(m.params, paths.ckpt(ckpt_name).string());
        return m;
    }
    m.adapters = strategy_adapters(*strategy, cfg.adapter_rank, cfg.adapter_dropout);
    init_adapter_set(m.params, m.adapters, cfg.model, 0);
    if (frozen_base(*strategy)) {
        // Base weights from the base checkpoint, adapters from their own file.
        require_exists(paths.ckpt("base_best"), "frozen-base evaluation needs the base checkpoint");
        load_checkpoint_into(m.params, paths.ckpt("base_best").string());
    }
    require_exists(paths.ckpt(ckpt_name), rule);
    load_checkpoint_into(m.params, paths.ckpt(ckpt_name).string());
    return m;
}

int cmd_eval_ol(const ExperimentConfig& cfg, bool force) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    require_exists(paths.data("id_test"), "open-loop evaluation needs the ID test split");
    require_exists(paths.data("ood_test"), "open-loop evaluation needs the OOD test split");
    const fs::path csv_path = paths.report("openloop.csv");
    const fs::path json_path = paths.report("openloop.json");
    ensure_writable(csv_path, force);
    ensure_writable(json_path, force);

    const Dataset id_test = load_dataset(paths.data("id_test").string());
    const Dataset ood_test = load_dataset(paths.data("ood_test").string());
    const std::string rule = "open-loop evaluation uses the checkpoint with the lowest validation metric (_best)";

    std::vector<std::pair<ReportLabels, MetricRow>> rows;
    std::vector<CrossDomainReport> reports;

    LoadedModel base = load_model_checkpoint(cfg, paths, nullptr, "base_best", rule);
    const MetricRow base_id = metric_row(
        eval_open_loop(base.params, nullptr, cfg.model, cfg.planner, id_test, cfg.miss_threshold));
    const MetricRow base_ood = metric_row(
        eval_open_loop(base.params, nullptr, cfg.model, cfg.planner, ood_test, cfg.miss_threshold));
    rows.push_back({{"base", "-", "-", "id", "test"}, base_id});
    rows.push_back({{"base", "-", "-", "ood", "test"}, base_ood});
    reports.push_back(cross_domain_report("base", base_id, base_ood, nullptr, cfg.hash(), cfg.hash()));

    for (const FinetuneJob& job : finetune_jobs(cfg, "", "")) {
        const fs::path ckpt = paths.ckpt(job.label + "_best");
        if (!fs::exists(ckpt)) continue;  // evaluate what exists
        LoadedModel m = load_model_checkpoint(cfg, paths, &job.strategy, job.label + "_best", rule);
        const AdapterSet* ad = m.adapters.empty() ? nullptr : &m.adapters;
        const MetricRow id_row =
            metric_row(eval_open_loop(m.params, ad, cfg.model, cfg.planner, id_test, cfg.miss_threshold));
        const MetricRow ood_row =
            metric_row(eval_open_loop(m.params, ad, cfg.model, cfg.planner, ood_test, cfg.miss_threshold));
        const std::string mode_label = data_mode_label(job.mode, job.alpha);
        rows.push_back({{job.label, job.strategy.label(), mode_label, "id", "test"}, id_row});
        rows.push_back({{job.label, job.strategy.label(), mode_label, "ood", "test"}, ood_row});
        reports.push_back(cross_domain_report(job.label, id_row, ood_row, &base_id, cfg.hash(), cfg.hash()));
    }

    write_metrics_csv(csv_path.string(), rows, cfg.meta_line());
    std::ofstream jf(json_path);
    jf << cross_domain_report_json(reports, nullptr, cfg.meta_line());
    std::cout << "wrote " << csv_path.string() << " and " << json_path.string() << "\n";
    return 0;
}

int cmd_eval_cl(const ExperimentConfig& cfg, bool force, bool traces) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    const fs::path csv_path = paths.report("closedloop.csv");
    const fs::path json_path = paths.report("closedloop.json");
    ensure_writable(csv_path, force);
    ensure_writable(json_path, force);

    EpisodeConfig ecfg;
    ecfg.replan_every = cfg.replan_every;

    struct DomainEval {
        const DomainConfig* domain;
        std::uint64_t seed_offset;
        const char* name;
    };
    const DomainEval domains[] = {{&cfg.domain_id, kSeedEvalId, "id"}, {&cfg.domain_ood, kSeedEvalOod, "ood"}};

    auto eval_policy = [&](const std::string& method, const PlanFn& policy) {
        std::map<std::string, std::map<std::string, ClosedLoopAggregate>> result;  // domain -> mode -> agg
        for (const DomainEval& de : domains) {
            for (AgentSimMode mode : {AgentSimMode::NonReactive, AgentSimMode::Reactive}) {
                std::vector<ClosedLoopMetrics> runs;
                for (int i = 0; i < cfg.cl_episodes; ++i) {
                    const Scenario sc = sample_scenario(*de.domain,
                                                        mix_seed(cfg.master_seed, de.seed_offset + static_cast<std::uint64_t>(i)));
                    std::vector<std::string> trace;
                    runs.push_back(closed_loop_episode(policy, sc, cfg.model, mode, ecfg, traces ? &trace : nullptr));
                    if (traces) {
                        const fs::path tp = paths.report("trace_" + method + "_" + de.name + "_" +
                                                         agent_sim_mode_name(mode) + "_" + std::to_string(i) + ".csv");
                        std::ofstream tf(tp);
                        tf << "# " << cfg.meta_line() << "\n";
                        for (const auto& line : trace) tf << line << "\n";
                    }
                }
                result[de.name][agent_sim_mode_name(mode)] = aggregate_closed_loop(runs);
            }
        }
        return result;
    };

    std::vector<std::pair<ReportLabels, MetricRow>> rows;
    std::vector<CrossDomainReport> reports;
    const std::string rule = "closed-loop evaluation uses the last checkpoint (_final)";

    auto add_method = [&](const std::string& method, const std::string& strategy, const std::string& mode_label,
                          const std::map<std::string, std::map<std::string, ClosedLoopAggregate>>& r,
                          const MetricRow* base_id) {
        MetricRow id_row, ood_row;
        for (const char* domain : {"id", "ood"}) {
            MetricRow& row = std::string(domain) == "id" ? id_row : ood_row;
            const auto& by_mode = r.at(domain);
            row.values["cl_nr"] = by_mode.at("nonreactive").mean_score;
            row.values["cl_r"] = by_mode.at("reactive").mean_score;
            row.values["cl_nr_collisions"] = by_mode.at("nonreactive").collision_rate;
            row.values["cl_r_collisions"] = by_mode.at("reactive").collision_rate;
            row.values["cl_progress"] =
                (by_mode.at("nonreactive").mean_progress + by_mode.at("reactive").mean_progress) / 2.0;
            rows.push_back({{method, strategy, mode_label, domain, "cl"}, row});
        }
        reports.push_back(cross_domain_report(method, id_row, ood_row, base_id, cfg.hash(), cfg.hash()));
    };

    LoadedModel base = load_model_checkpoint(cfg, paths, nullptr, "base_final", rule);
    auto base_res = eval_policy("base", make_network_policy(base.params, nullptr, cfg.model, cfg.planner));
    add_method("base", "-", "-", base_res, nullptr);
    const MetricRow base_id_row = reports.back().id;

    for (const FinetuneJob& job : finetune_jobs(cfg, "", "")) {
        const fs::path ckpt = paths.ckpt(job.label + "_final");
        if (!fs::exists(ckpt)) continue;
        LoadedModel m = load_model_checkpoint(cfg, paths, &job.strategy, job.label + "_final", rule);
        const AdapterSet* ad = m.adapters.empty() ? nullptr : &m.adapters;
        auto res = eval_policy(job.label, make_network_policy(m.params, ad, cfg.model, cfg.planner));
        add_method(job.label, job.strategy.label(), data_mode_label(job.mode, job.alpha), res, &base_id_row);
    }

    write_metrics_csv(csv_path.string(), rows, cfg.meta_line());
    std::ofstream jf(json_path);
    jf << cross_domain_report_json(reports, nullptr, cfg.meta_line());
    std::cout << "wrote " << csv_path.string() << " and " << json_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const ExperimentConfig& cfg, bool force) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    require_exists(paths.ckpt("base_best"), "ablations start from the pre-trained base (run train-base)");
    const Dataset id_train = load_dataset(paths.data("id_train").string());
    const Dataset ood_train = load_dataset(paths.data("ood_train").string());
    const Dataset ood_val = load_dataset(paths.data("ood_val").string());
    const Dataset id_test = load_dataset(paths.data("id_test").string());
    const Dataset ood_test = load_dataset(paths.data("ood_test").string());

    const fs::path alpha_csv = paths.report("ablate_alpha.csv");
    const fs::path alpha_svg = paths.report("ablate_alpha.svg");
    const fs::path attach_csv = paths.report("ablate_attachments.csv");
    ensure_writable(alpha_csv, force);
    ensure_writable(alpha_svg, force);
    ensure_writable(attach_csv, force);

    // Added-ID-data ratio sweep on FT+LoRD, mirroring the added-ID-% axis.
    std::vector<std::pair<ReportLabels, MetricRow>> alpha_rows;
    SvgSeries id_series{"id", {}}, ood_series{"ood", {}};
    for (double alpha : cfg.alphas) {
        FinetuneJob job;
        job.strategy = StrategySpec::parse("ftlord");
        job.mode = alpha > 0.0 ? DataMode::Mix : DataMode::OOD;
        job.alpha = alpha;
        std::ostringstream label;
        label << "ablate_alpha" << alpha;
        job.label = label.str();
        run_finetune_job(cfg, paths, job, force, &id_train, &ood_train, &ood_val);
        LoadedModel m = load_model_checkpoint(cfg, paths, &job.strategy, job.label + "_best", "alpha sweep");
        const OpenLoopMetrics id_m =
            eval_open_loop(m.params, &m.adapters, cfg.model, cfg.planner, id_test, cfg.miss_threshold);
        const OpenLoopMetrics ood_m =
            eval_open_loop(m.params, &m.adapters, cfg.model, cfg.planner, ood_test, cfg.miss_threshold);
        alpha_rows.push_back({{job.label, "ftlord", data_mode_label(job.mode, alpha), "id", "test"},
                              metric_row(id_m)});
        alpha_rows.push_back({{job.label, "ftlord", data_mode_label(job.mode, alpha), "ood", "test"},
                              metric_row(ood_m)});
        id_series.points.emplace_back(100.0 * alpha, id_m.ade);
        ood_series.points.emplace_back(100.0 * alpha, ood_m.ade);
        std::cout << "alpha " << alpha << ": id ADE " << id_m.ade << ", ood ADE " << ood_m.ade << "\n";
    }
    write_metrics_csv(alpha_csv.string(), alpha_rows, cfg.meta_line());
    write_svg_curve(alpha_svg.string(), "multi-task fine-tuning ratio sweep", "added ID data [%]", "plan ADE [m]",
                    {id_series, ood_series}, cfg.meta_line());

    // Attachment-subset sweep.
    const std::pair<const char*, const char*> variants[] = {
        {"ftlord_base", "ftlord"},
        {"no_goal", "ftlord:cost_weights+init_trajectory"},
        {"no_cost", "ftlord:goals+init_trajectory"},
        {"no_lowrank", "ftlord:cost_weights+goals+init_trajectory:full"},
        {"residual_on_output", "ftlord:final_output"},
    };
    std::vector<std::pair<ReportLabels, MetricRow>> attach_rows;
    for (const auto& [name, spec_text] : variants) {
        FinetuneJob job;
        job.strategy = StrategySpec::parse(spec_text);
        job.mode = DataMode::OOD;
        job.alpha = 0.0;
        job.label = std::string("ablate_") + name;
        run_finetune_job(cfg, paths, job, force, &id_train, &ood_train, &ood_val);
        LoadedModel m = load_model_checkpoint(cfg, paths, &job.strategy, job.label + "_best", "attachment sweep");
        const OpenLoopMetrics id_m =
            eval_open_loop(m.params, &m.adapters, cfg.model, cfg.planner, id_test, cfg.miss_threshold);
        const OpenLoopMetrics ood_m =
            eval_open_loop(m.params, &m.adapters, cfg.model, cfg.planner, ood_test, cfg.miss_threshold);
        attach_rows.push_back({{name, job.strategy.label(), "ood", "id", "test"}, metric_row(id_m)});
        attach_rows.push_back({{name, job.strategy.label(), "ood", "ood", "test"}, metric_row(ood_m)});
        std::cout << "variant " << name << ": ood minSFDE " << ood_m.min_sfde << ", ood bminSFDE " << ood_m.bmin_sfde
                  << "\n";
    }
    write_metrics_csv(attach_csv.string(), attach_rows, cfg.meta_line());
    return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const ExperimentConfig& cfg, bool force) {
    Paths paths(cfg.out_dir);
    paths.make_dirs();
    const fs::path summary = paths.report("summary.txt");
    ensure_writable(summary, force);

    std::ostringstream os;
    os << "# " << cfg.meta_line() << "\n";
    for (const char* name : {"openloop.csv", "closedloop.csv", "ablate_alpha.csv", "ablate_attachments.csv"}) {
        const fs::path p = paths.report(name);
        if (!fs::exists(p)) continue;
        os << "\n== " << name << " ==\n";
        std::ifstream in(p);
        os << in.rdbuf();
    }

    // Parameter/runtime overhead of the default adapter configuration.
    ParameterStore params;
    init_model_params(params, cfg.model, mix_seed(cfg.master_seed, 0xBA5Eull));
    AdapterSet adapters = strategy_adapters(StrategySpec::parse("ftlord"), cfg.adapter_rank, cfg.adapter_dropout);
    init_adapter_set(params, adapters, cfg.model, 0);
    const OverheadReport oh = overhead(params, adapters, cfg.model, 200);
    os << "\n== overhead (ftlord default) ==\n";
    os << "base params: " << oh.base_params << "\n";
    os << "adapter params: " << oh.adapter_params << "\n";
    os << "param fraction: " << oh.param_fraction << "\n";
    os << "time fraction: " << oh.time_fraction << "\n";

    std::ofstream out(summary);
    out << os.str();
    std::cout << os.str();
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"structured-policy adaptation testbed: two-domain synthetic driving with low-rank residual decoders"};
    app.require_subcommand(1);

    CommonOpts common;
    app.add_option("--config", common.config_path, "experiment config file (INI)");
    app.add_option("--set", common.overrides, "override a config value: section.key=value")->take_all();
    app.add_option("--out", common.out_dir_override, "output directory override");
    app.add_option("--seed", common.seed_override, "master seed override")
        ->each([&](const std::string&) { common.has_seed_override = true; });
    app.add_flag("--force", common.force, "overwrite existing artifacts");

    auto* gen = app.add_subcommand("gen-data", "generate ID/OOD datasets and the shift-statistics report");
    auto* tb = app.add_subcommand("train-base", "pre-train the base model on the ID domain");
    auto* ft = app.add_subcommand("finetune", "fine-tune under the configured strategy/data-mode grid");
    std::string only_strategy, only_mode;
    ft->add_option("--strategy", only_strategy, "run a single strategy (full, partial, mosa_f, mosa_af, pa, ftlord)");
    ft->add_option("--mode", only_mode, "run a single data mode (id, ood, mix, mix:<alpha>)");
    auto* eol = app.add_subcommand("eval-ol", "open-loop cross-domain evaluation (best checkpoints)");
    auto* ecl = app.add_subcommand("eval-cl", "closed-loop cross-domain evaluation (final checkpoints)");
    bool traces = false;
    ecl->add_flag("--traces", traces, "write per-episode trace files");
    auto* abl = app.add_subcommand("ablate", "ratio and attachment ablation sweeps");
    auto* rep = app.add_subcommand("report", "merge reports and print the summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const ExperimentConfig cfg = load_config(common);
        if (gen->parsed()) return cmd_gen_data(cfg, common.force);
        if (tb->parsed()) return cmd_train_base(cfg, common.force);
        if (ft->parsed()) return cmd_finetune(cfg, common.force, only_strategy, only_mode);
        if (eol->parsed()) return cmd_eval_ol(cfg, common.force);
        if (ecl->parsed()) return cmd_eval_cl(cfg, common.force, traces);
        if (abl->parsed()) return cmd_ablate(cfg, common.force);
        if (rep->parsed()) return cmd_report(cfg, common.force);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace lord
