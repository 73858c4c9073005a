// Command-line front end: data generation, model training, aggregator
// instance generation, synthesis, evaluation, and analysis.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>

#include "listsynth/datagen.hpp"
#include "listsynth/evalkit.hpp"
#include "listsynth/io.hpp"
#include "listsynth/search.hpp"
#include "listsynth/training.hpp"

using namespace listsynth;

namespace {

struct TaskFile {
    std::optional<Program> program;
    std::vector<Example> examples;
};

TaskFile load_task(const std::string& path) {
    JsonlFile file = read_jsonl(path);
    if (file.lines.empty()) throw ConfigError("task file " + path + " holds no record");
    const json& j = file.lines.front();
    TaskFile task;
    if (j.contains("program") && !j.at("program").is_null())
        task.program = parse_program(j.at("program").get<std::string>());
    for (const auto& ex : j.at("examples")) task.examples.push_back(example_from_json(ex));
    return task;
}

std::vector<std::pair<int, int>> parse_counts(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    std::istringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        auto colon = part.find(':');
        if (colon == std::string::npos) throw ConfigError("counts must look like 1:800,2:1100");
        out.emplace_back(std::stoi(part.substr(0, colon)), std::stoi(part.substr(colon + 1)));
    }
    if (out.empty()) throw ConfigError("no counts given");
    return out;
}

void emit(const json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump() << "\n";
    } else {
        std::ofstream os(out_path);
        os << j.dump() << "\n";
    }
}

OptimizerConfig make_optimizer(const std::string& name, double lr, const std::string& sched) {
    OptimizerConfig cfg;
    cfg.kind = OptimizerConfig::kind_from_name(name);
    cfg.lr = lr;
    cfg.sched = OptimizerConfig::sched_from_name(sched);
    return cfg;
}

struct EvalModelSet {
    std::optional<EncoderModel<float>> gps;
    std::optional<EncoderModel<float>> pe;
    std::optional<CrossAggregator<float>> ca;
};

EvalModelSet load_models(const std::string& gps_path, const std::string& pe_path,
                         const std::string& ca_path, AggMode mode) {
    EvalModelSet models;
    if (gps_path.empty()) throw ConfigError("--gps checkpoint is required");
    models.gps = encoder_from_checkpoint(load_checkpoint(gps_path));
    if (mode != AggMode::None) {
        if (pe_path.empty()) throw ConfigError("--pe checkpoint is required for this mode");
        models.pe = encoder_from_checkpoint(load_checkpoint(pe_path));
    }
    if (mode == AggMode::Ca) {
        if (ca_path.empty()) throw ConfigError("--ca checkpoint is required for mode ca");
        models.ca = aggregator_from_checkpoint(load_checkpoint(ca_path));
    }
    return models;
}

SynthesisResult result_from_json(const json& j, const Vocab& vocab) {
    SynthesisResult r;
    r.solved = j.at("status") == "solved";
    if (r.solved) {
        r.program_text = j.at("program").get<std::string>();
        r.program = parse_program(r.program_text);
    }
    r.perfect_pe = j.value("perfect_pe", false);
    r.alpha = j.value("alpha", 0.0);
    for (const auto& p : j.at("pe")) {
        PESolution sol;
        sol.example_index = p.at("example").get<int>() - 1;
        sol.found = p.at("found").get<bool>();
        if (sol.found) {
            sol.program = parse_program(p.at("program").get<std::string>());
            sol.u = p.at("u").get<double>();
            sol.satisfied = p.at("satisfied").get<std::vector<int>>();
            annotate_solution(sol, vocab);
        }
        r.pe.push_back(std::move(sol));
    }
    return r;
}

std::vector<SynthesisResult> results_from_report(const std::string& path, const Vocab& vocab) {
    JsonlFile file = read_jsonl(path);
    std::vector<SynthesisResult> out;
    for (const json& j : file.lines) {
        if (j.value("summary", false)) continue;
        out.push_back(result_from_json(j, vocab));
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"per-example program synthesis over an integer-list DSL"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags like --seed work after the subcommand
    app.set_config("--config", "", "key=value config file; flags override it");

    DslConfig dsl_cfg;
    uint64_t seed = 1;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();

    // ---- datagen ----------------------------------------------------------
    auto* cmd_datagen = app.add_subcommand("datagen", "generate a dataset split");
    std::string dg_out, dg_counts = "1:800,2:1100,3:1300", dg_against;
    DatagenConfig dg_cfg;
    cmd_datagen->add_option("--out", dg_out, "output JSONL path")->required();
    cmd_datagen->add_option("--counts", dg_counts, "length:count pairs, lengths ascending")
        ->capture_default_str();
    cmd_datagen->add_option("--against", dg_against,
                            "existing dataset to stay functionally non-equivalent to");
    cmd_datagen->add_option("--n-examples", dg_cfg.dsl.n_examples)->capture_default_str();
    cmd_datagen->add_option("--input-min", dg_cfg.input_min)->capture_default_str();
    cmd_datagen->add_option("--input-max", dg_cfg.input_max)->capture_default_str();

    // ---- train-gps / train-pe ---------------------------------------------
    auto* cmd_train_gps = app.add_subcommand("train-gps", "train the global search model");
    auto* cmd_train_pe = app.add_subcommand("train-pe", "train the per-example model");
    std::string tr_data, tr_out, tr_metrics, tr_opt = "adam", tr_sched = "step";
    double tr_lr = 1e-3;
    int tr_epochs = 12, tr_batch = 32, tr_patience = 3, tr_z = 64, tr_e = 20;
    for (CLI::App* cmd : {cmd_train_gps, cmd_train_pe}) {
        cmd->add_option("--data", tr_data, "training dataset JSONL")->required();
        cmd->add_option("--out", tr_out, "checkpoint path")->required();
        cmd->add_option("--metrics", tr_metrics, "metrics JSONL path");
        cmd->add_option("--lr", tr_lr)->capture_default_str();
        cmd->add_option("--optimizer", tr_opt)->capture_default_str();
        cmd->add_option("--scheduler", tr_sched)->capture_default_str();
        cmd->add_option("--epochs", tr_epochs)->capture_default_str();
        cmd->add_option("--batch", tr_batch)->capture_default_str();
        cmd->add_option("--patience", tr_patience)->capture_default_str();
        cmd->add_option("--z", tr_z, "state embedding width")->capture_default_str();
        cmd->add_option("--e", tr_e, "value embedding width")->capture_default_str();
    }

    // ---- gen-agg -----------------------------------------------------------
    auto* cmd_gen_agg = app.add_subcommand("gen-agg", "generate aggregator instances");
    std::string ga_data, ga_pe, ga_out, ga_policy = "fixed", ga_unit = "nodes:1200",
                ga_mode = "all";
    int ga_depth = 3;
    cmd_gen_agg->add_option("--data", ga_data)->required();
    cmd_gen_agg->add_option("--pe", ga_pe, "trained PE checkpoint")->required();
    cmd_gen_agg->add_option("--out", ga_out)->required();
    cmd_gen_agg->add_option("--policy", ga_policy, "fixed | random | triple")
        ->capture_default_str();
    cmd_gen_agg->add_option("--unit", ga_unit, "budget at policy scale 1.0")
        ->capture_default_str();
    cmd_gen_agg->add_option("--pe-mode", ga_mode, "all | tot")->capture_default_str();
    cmd_gen_agg->add_option("--depth", ga_depth, "per-example search depth")
        ->capture_default_str();

    // ---- train-ca ----------------------------------------------------------
    auto* cmd_train_ca = app.add_subcommand("train-ca", "train the cross aggregator");
    std::string ca_instances, ca_gps, ca_pe, ca_out, ca_metrics, ca_variant = "default",
                ca_opt = "adam", ca_sched = "cosine";
    double ca_lr = 1e-4, ca_dropout = 0.1;
    int ca_epochs = 8, ca_patience = 3, ca_tau = 4, ca_dk = 16, ca_dff = 0;
    bool ca_no_u = false;
    cmd_train_ca->add_option("--instances", ca_instances)->required();
    cmd_train_ca->add_option("--gps", ca_gps)->required();
    cmd_train_ca->add_option("--pe", ca_pe)->required();
    cmd_train_ca->add_option("--out", ca_out)->required();
    cmd_train_ca->add_option("--metrics", ca_metrics);
    cmd_train_ca->add_option("--variant", ca_variant, "default | pg | pp")->capture_default_str();
    cmd_train_ca->add_flag("--no-u", ca_no_u, "zero out the relation scores");
    cmd_train_ca->add_option("--lr", ca_lr)->capture_default_str();
    cmd_train_ca->add_option("--optimizer", ca_opt)->capture_default_str();
    cmd_train_ca->add_option("--scheduler", ca_sched)->capture_default_str();
    cmd_train_ca->add_option("--epochs", ca_epochs)->capture_default_str();
    cmd_train_ca->add_option("--patience", ca_patience)->capture_default_str();
    cmd_train_ca->add_option("--tau", ca_tau, "attention heads")->capture_default_str();
    cmd_train_ca->add_option("--dk", ca_dk, "per-head width")->capture_default_str();
    cmd_train_ca->add_option("--dff", ca_dff, "feed-forward width (0 = 4Z)")
        ->capture_default_str();
    cmd_train_ca->add_option("--dropout", ca_dropout)->capture_default_str();

    // ---- synth --------------------------------------------------------------
    auto* cmd_synth = app.add_subcommand("synth", "synthesize one task");
    std::string sy_task, sy_gps, sy_pe, sy_ca, sy_budget = "nodes:6000",
                sy_peps = "nodes:600", sy_mode = "ca", sy_out, sy_variant = "default";
    double sy_alpha = 0.8;
    int sy_depth = 0;
    bool sy_parallel = false, sy_trace = false;
    cmd_synth->add_option("--task", sy_task, "task JSONL (one record)")->required();
    cmd_synth->add_option("--gps", sy_gps)->required();
    cmd_synth->add_option("--pe", sy_pe);
    cmd_synth->add_option("--ca", sy_ca);
    cmd_synth->add_option("--alpha", sy_alpha)->capture_default_str();
    cmd_synth->add_option("--budget", sy_budget, "total budget")->capture_default_str();
    cmd_synth->add_option("--peps-budget", sy_peps, "per-example budget")->capture_default_str();
    cmd_synth->add_option("--mode", sy_mode, "ca | sum | mean | mean_u | none")
        ->capture_default_str();
    cmd_synth->add_option("--variant", sy_variant)->capture_default_str();
    cmd_synth->add_option("--depth", sy_depth, "max program length (0 = ground-truth length)")
        ->capture_default_str();
    cmd_synth->add_flag("--parallel-pe", sy_parallel, "search PE solutions concurrently");
    cmd_synth->add_flag("--trace", sy_trace, "record the node-expansion sequence");
    cmd_synth->add_option("--out", sy_out, "write the result here instead of stdout");

    // ---- eval ----------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a split");
    std::string ev_split, ev_gps, ev_pe, ev_ca, ev_budget = "nodes:6000", ev_peps = "nodes:600",
                ev_mode = "gps", ev_out, ev_variant = "default";
    double ev_alpha = 0.8;
    int ev_depth = 0;
    cmd_eval->add_option("--split", ev_split)->required();
    cmd_eval->add_option("--gps", ev_gps)->required();
    cmd_eval->add_option("--pe", ev_pe);
    cmd_eval->add_option("--ca", ev_ca);
    cmd_eval->add_option("--mode", ev_mode, "gps | ca | sum | mean | mean_u")
        ->capture_default_str();
    cmd_eval->add_option("--alpha", ev_alpha)->capture_default_str();
    cmd_eval->add_option("--budget", ev_budget)->capture_default_str();
    cmd_eval->add_option("--peps-budget", ev_peps)->capture_default_str();
    cmd_eval->add_option("--variant", ev_variant)->capture_default_str();
    cmd_eval->add_option("--depth", ev_depth)->capture_default_str();
    cmd_eval->add_option("--out", ev_out, "report JSONL path")->required();

    // ---- analyze ---------------------------------------------------------------
    auto* cmd_analyze = app.add_subcommand("analyze", "analysis utilities");
    cmd_analyze->require_subcommand(1);

    auto* an_totind = cmd_analyze->add_subcommand("tot-ind", "coverage analysis of PE searches");
    std::string ti_split, ti_pe, ti_budget = "nodes:600", ti_out;
    int ti_kmax = 5, ti_depth = 0;
    an_totind->add_option("--split", ti_split)->required();
    an_totind->add_option("--pe", ti_pe)->required();
    an_totind->add_option("--budget", ti_budget, "per-example budget")->capture_default_str();
    an_totind->add_option("--k", ti_kmax, "max coverage level")->capture_default_str();
    an_totind->add_option("--depth", ti_depth)->capture_default_str();
    an_totind->add_option("--out", ti_out);

    auto* an_overlap = cmd_analyze->add_subcommand("overlap", "operator overlap with PE solutions");
    std::string ov_split, ov_report, ov_out;
    an_overlap->add_option("--split", ov_split)->required();
    an_overlap->add_option("--report", ov_report, "eval report JSONL")->required();
    an_overlap->add_option("--out", ov_out);

    auto* an_failures = cmd_analyze->add_subcommand("failures", "per-operator failure rates");
    std::string fa_split, fa_report, fa_out;
    an_failures->add_option("--split", fa_split)->required();
    an_failures->add_option("--report", fa_report)->required();
    an_failures->add_option("--out", fa_out);

    auto* an_perfect = cmd_analyze->add_subcommand("perfect-pe", "fraction of perfect PE solutions");
    std::string pf_report, pf_out;
    an_perfect->add_option("--report", pf_report)->required();
    an_perfect->add_option("--out", pf_out);

    auto* an_intent = cmd_analyze->add_subcommand("intent", "generalization to held-out examples");
    std::string in_split, in_report, in_out;
    int in_extra = 5;
    uint64_t in_seed = 71;
    an_intent->add_option("--split", in_split)->required();
    an_intent->add_option("--report", in_report)->required();
    an_intent->add_option("--n-extra", in_extra)->capture_default_str();
    an_intent->add_option("--extra-seed", in_seed)->capture_default_str();
    an_intent->add_option("--out", in_out);

    auto* an_attention = cmd_analyze->add_subcommand("attention", "export attention weights");
    std::string at_task, at_gps, at_pe, at_ca, at_peps = "nodes:600", at_out;
    int at_depth = 0;
    an_attention->add_option("--task", at_task)->required();
    an_attention->add_option("--gps", at_gps)->required();
    an_attention->add_option("--pe", at_pe)->required();
    an_attention->add_option("--ca", at_ca)->required();
    an_attention->add_option("--peps-budget", at_peps)->capture_default_str();
    an_attention->add_option("--depth", at_depth)->capture_default_str();
    an_attention->add_option("--out", at_out);

    auto* an_nearest = cmd_analyze->add_subcommand("nearest", "nearest statements by head rows");
    std::string ne_ca, ne_stmt, ne_metric = "euclidean", ne_out;
    int ne_k = 10;
    an_nearest->add_option("--ca", ne_ca)->required();
    an_nearest->add_option("--stmt", ne_stmt, "statement text, e.g. 'MAP +1 b' over slots a..")
        ->required();
    an_nearest->add_option("--k", ne_k)->capture_default_str();
    an_nearest->add_option("--metric", ne_metric, "euclidean | cosine")->capture_default_str();
    an_nearest->add_option("--out", ne_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    Vocab vocab(dsl_cfg.nu);

    if (cmd_datagen->parsed()) {
        dg_cfg.dsl = dsl_cfg;
        dg_cfg.dsl.n_examples = dg_cfg.dsl.n_examples;
        Corpus corpus;
        if (!dg_against.empty())
            for (const DatasetRecord& r : read_dataset(dg_against)) corpus.insert(r);
        DatasetSpec spec;
        spec.counts = parse_counts(dg_counts);
        spec.seed = seed;
        DatagenStats stats;
        auto records = build_dataset(spec, dg_cfg, corpus, &stats);
        json header;
        header["kind"] = "dataset";
        header["seed"] = seed;
        header["counts"] = dg_counts;
        header["n_examples"] = dg_cfg.dsl.n_examples;
        header["input_min"] = dg_cfg.input_min;
        header["input_max"] = dg_cfg.input_max;
        header["rejected_examples"] = stats.rejected_examples;
        header["rejected_equivalent"] = stats.rejected_equivalent;
        write_jsonl(dg_out, header, records, record_to_json);
        json done;
        done["written"] = records.size();
        done["path"] = dg_out;
        emit(done, "");
        return 0;
    }

    if (cmd_train_gps->parsed() || cmd_train_pe->parsed()) {
        ModelKind kind = cmd_train_gps->parsed() ? ModelKind::Gps : ModelKind::Pe;
        auto records = read_dataset(tr_data);
        EncoderHyper hyper;
        hyper.nu = dsl_cfg.nu;
        hyper.q = dsl_cfg.max_list_len;
        hyper.e = tr_e;
        hyper.z = tr_z;
        hyper.n_s = vocab.num_statements();
        hyper.n_o = vocab.num_operators();
        hyper.kind = kind == ModelKind::Gps ? "gps" : "pe";
        EncoderModel<float> model = EncoderModel<float>::init(hyper, seed);
        TrainConfig tc;
        tc.batch_size = tr_batch;
        tc.epochs = tr_epochs;
        tc.patience = tr_patience;
        tc.seed = seed;
        tc.metrics_path = tr_metrics;
        tc.optimizer = make_optimizer(tr_opt, tr_lr, tr_sched);
        TrainReport report = train_supervised(records, kind, model, tc, dsl_cfg, vocab);
        json meta = model.meta();
        meta["seed"] = seed;
        meta["epochs_run"] = report.epochs_run;
        meta["best_val_loss"] = report.best_val_loss;
        save_checkpoint(tr_out, meta, model.params);
        json done;
        done["checkpoint"] = tr_out;
        done["best_val_loss"] = report.best_val_loss;
        done["epochs_run"] = report.epochs_run;
        done["anomalies"] = report.anomalies;
        emit(done, "");
        return 0;
    }

    if (cmd_gen_agg->parsed()) {
        auto records = read_dataset(ga_data);
        EncoderModel<float> pe = encoder_from_checkpoint(load_checkpoint(ga_pe));
        TimeoutPolicy policy;
        policy.tag = TimeoutPolicy::tag_from_name(ga_policy);
        policy.unit = SearchBudget::parse(ga_unit);
        PeMode mode = ga_mode == "tot" ? PeMode::Tot : PeMode::All;
        InstanceStats stats;
        auto instances = build_aggregator_instances(records, pe, policy, mode, dsl_cfg, vocab,
                                                    seed, ga_depth, &stats);
        json header;
        header["kind"] = "instances";
        header["seed"] = seed;
        header["policy"] = ga_policy;
        header["unit"] = ga_unit;
        header["pe_mode"] = ga_mode;
        header["omitted_perfect"] = stats.omitted_perfect;
        header["omitted_no_solution"] = stats.omitted_no_solution;
        write_jsonl(ga_out, header, instances, instance_to_json);
        json done;
        done["written"] = instances.size();
        done["omitted_perfect"] = stats.omitted_perfect;
        done["omitted_no_solution"] = stats.omitted_no_solution;
        emit(done, "");
        return 0;
    }

    if (cmd_train_ca->parsed()) {
        auto instances = read_instances(ca_instances);
        EncoderModel<float> gps = encoder_from_checkpoint(load_checkpoint(ca_gps));
        EncoderModel<float> pe = encoder_from_checkpoint(load_checkpoint(ca_pe));
        CaHyper hyper;
        hyper.z = gps.h.z;
        hyper.tau = ca_tau;
        hyper.d_k = ca_dk;
        hyper.d_ff = ca_dff > 0 ? ca_dff : 4 * hyper.z;
        hyper.n_s = vocab.num_statements();
        hyper.n_o = vocab.num_operators();
        hyper.dropout = ca_dropout;
        hyper.use_u = !ca_no_u;
        hyper.variant = ca_variant;
        hyper.key_encoder = ca_variant == "pg" ? "gps" : "pe";
        CrossAggregator<float> ca = CrossAggregator<float>::init(hyper, seed);
        TrainConfig tc;
        tc.epochs = ca_epochs;
        tc.patience = ca_patience;
        tc.seed = seed;
        tc.metrics_path = ca_metrics;
        tc.optimizer = make_optimizer(ca_opt, ca_lr, ca_sched);
        CaTrainReport report = train_ca(instances, gps, pe, ca, tc, dsl_cfg, vocab);
        json meta = ca.meta();
        meta["seed"] = seed;
        meta["epochs_run"] = report.epochs_run;
        meta["best_val_loss"] = report.best_val_loss;
        save_checkpoint(ca_out, meta, ca.params);
        json done;
        done["checkpoint"] = ca_out;
        done["best_val_loss"] = report.best_val_loss;
        done["skipped_instances"] = report.skipped_instances;
        emit(done, "");
        return 0;
    }

    if (cmd_synth->parsed()) {
        TaskFile task = load_task(sy_task);
        AggMode mode = agg_mode_from_name(sy_mode);
        EvalModelSet models = load_models(sy_gps, sy_pe, sy_ca, mode);
        PipelineConfig cfg;
        cfg.alpha = sy_alpha;
        cfg.mode = mode;
        cfg.variant = key_variant_from_name(sy_variant);
        cfg.total_budget = SearchBudget::parse(sy_budget);
        cfg.peps_budget = SearchBudget::parse(sy_peps);
        cfg.parallel_pe = sy_parallel;
        cfg.capture_trace = sy_trace;
        cfg.seed = seed;
        cfg.max_depth = sy_depth > 0 ? sy_depth
                        : task.program ? task.program->length()
                                       : 0;
        if (cfg.max_depth <= 0)
            throw ConfigError("--depth is required when the task has no reference program");
        SynthesisResult result =
            synthesize(task.examples, &*models.gps, models.pe ? &*models.pe : nullptr,
                       models.ca ? &*models.ca : nullptr, cfg, dsl_cfg, vocab);
        emit(synthesis_result_to_json(result), sy_out);
        return 0;
    }

    if (cmd_eval->parsed()) {
        auto split = read_dataset(ev_split);
        AggMode mode = agg_mode_from_name(ev_mode);
        EvalModelSet models = load_models(ev_gps, ev_pe, ev_ca, mode);
        PipelineConfig cfg;
        cfg.alpha = mode == AggMode::None ? 0.0 : ev_alpha;
        cfg.mode = mode;
        cfg.variant = key_variant_from_name(ev_variant);
        cfg.total_budget = SearchBudget::parse(ev_budget);
        cfg.peps_budget = SearchBudget::parse(ev_peps);
        cfg.seed = seed;
        EvalOutcome outcome =
            eval_success(split, &*models.gps, models.pe ? &*models.pe : nullptr,
                         models.ca ? &*models.ca : nullptr, cfg, dsl_cfg, vocab, ev_depth);
        json header;
        header["kind"] = "eval_report";
        header["mode"] = ev_mode;
        header["alpha"] = cfg.alpha;
        header["budget"] = ev_budget;
        header["peps_budget"] = ev_peps;
        header["seed"] = seed;
        header["split"] = ev_split;
        std::ofstream os(ev_out);
        if (!os) throw ConfigError("cannot open " + ev_out);
        json h = header;
        h["header"] = true;
        os << h.dump() << "\n";
        for (const json& line : outcome.task_lines) os << line.dump() << "\n";
        os << outcome.summary.dump() << "\n";
        json done;
        done["report"] = ev_out;
        done["success_ratio"] = outcome.success_ratio;
        emit(done, "");
        return 0;
    }

    if (an_totind->parsed()) {
        auto split = read_dataset(ti_split);
        EncoderModel<float> pe = encoder_from_checkpoint(load_checkpoint(ti_pe));
        TotIndReport report = analyze_tot_ind(split, pe, SearchBudget::parse(ti_budget), ti_kmax,
                                              dsl_cfg, vocab, ti_depth);
        json j = report.to_json();
        j["seed"] = seed;
        j["budget"] = ti_budget;
        emit(j, ti_out);
        return 0;
    }

    if (an_overlap->parsed()) {
        auto split = read_dataset(ov_split);
        auto results = results_from_report(ov_report, vocab);
        OverlapReport rep = operator_overlap(results, split, vocab);
        json j;
        j["analysis"] = "overlap";
        j["operator_overlap"] = rep.operator_overlap;
        j["statement_overlap"] = rep.statement_overlap;
        j["statements"] = rep.statements;
        emit(j, ov_out);
        return 0;
    }

    if (an_failures->parsed()) {
        auto split = read_dataset(fa_split);
        auto results = results_from_report(fa_report, vocab);
        emit(failure_breakdown(results, split), fa_out);
        return 0;
    }

    if (an_perfect->parsed()) {
        auto results = results_from_report(pf_report, vocab);
        json j;
        j["analysis"] = "perfect_pe";
        j["fraction"] = perfect_pe_fraction(results);
        j["tasks"] = results.size();
        emit(j, pf_out);
        return 0;
    }

    if (an_intent->parsed()) {
        auto split = read_dataset(in_split);
        auto results = results_from_report(in_report, vocab);
        DatagenConfig gen_cfg;
        gen_cfg.dsl = dsl_cfg;
        Rng rng(in_seed);
        std::vector<std::vector<Example>> extra;
        for (const DatasetRecord& r : split) {
            auto more = gen_examples(r.program, in_extra, rng, gen_cfg);
            extra.push_back(more ? *more : std::vector<Example>{});
        }
        json j;
        j["analysis"] = "intent";
        j["n_extra"] = in_extra;
        j["extra_seed"] = in_seed;
        j["success_ratio"] = intent_generalization(results, extra);
        j["tasks"] = results.size();
        emit(j, in_out);
        return 0;
    }

    if (an_attention->parsed()) {
        TaskFile task = load_task(at_task);
        EncoderModel<float> gps = encoder_from_checkpoint(load_checkpoint(at_gps));
        EncoderModel<float> pe = encoder_from_checkpoint(load_checkpoint(at_pe));
        CrossAggregator<float> ca = aggregator_from_checkpoint(load_checkpoint(at_ca));

        int depth = at_depth > 0 ? at_depth : task.program ? task.program->length() : 0;
        if (depth <= 0) throw ConfigError("--depth required without a reference program");

        GpsPredictor pe_predictor(pe, dsl_cfg);
        SearchBudget per_example = SearchBudget::parse(at_peps);
        Meter total(per_example.scaled(static_cast<double>(task.examples.size()) + 1.0));
        PeSearchReport pe_report = pe_searches(task.examples, pe_predictor, per_example,
                                               PeMode::All, total, CabSchedule{}, depth, dsl_cfg,
                                               vocab);
        Program program;
        if (task.program) {
            program = *task.program;
        } else {
            throw ConfigError("attention export needs a reference program in the task file");
        }
        const EncoderModel<float>& key_encoder = ca.h.key_encoder == "gps" ? gps : pe;
        AttentionTrace trace = export_attention(program, task.examples, pe_report.solutions, gps,
                                                key_encoder, ca, dsl_cfg, vocab);
        emit(trace.to_json(), at_out);
        return 0;
    }

    if (an_nearest->parsed()) {
        CrossAggregator<float> ca = aggregator_from_checkpoint(load_checkpoint(ne_ca));
        Statement stmt = parse_statement(ne_stmt, dsl_cfg.nu);
        int index = vocab.statement_index(stmt);
        DistanceMetric metric =
            ne_metric == "cosine" ? DistanceMetric::Cosine : DistanceMetric::Euclidean;
        auto ranked = nearest_statements(ca, index, ne_k, metric);
        json j;
        j["analysis"] = "nearest";
        j["stmt"] = ne_stmt;
        j["stmt_index"] = index;
        j["metric"] = ne_metric;
        json rows = json::array();
        for (const auto& [idx, dist] : ranked) {
            Statement s = vocab.statement_at(idx);
            std::vector<std::string> names;
            for (int i = 0; i < dsl_cfg.nu; ++i) names.push_back(var_name(i));
            json row;
            row["index"] = idx;
            row["stmt"] = format_statement(s, "_", names).substr(5);  // strip "_ <- "
            row["distance"] = dist;
            rows.push_back(row);
        }
        j["rows"] = rows;
        emit(j, ne_out);
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
