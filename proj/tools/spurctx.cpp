// spurctx: evaluate scoring-model sensitivity to spurious prompt context and
// train debiased toy policies.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "spurctx/corpus.hpp"
#include "spurctx/gradcheck.hpp"
#include "spurctx/remote_policy.hpp"
#include "spurctx/runner.hpp"
#include "spurctx/study.hpp"
#include "spurctx/training.hpp"

namespace spurctx {
namespace {

// Multi-dimension wrapper holding one planted toy policy per rubric
// dimension; the fleet is built up front so completion calls stay read-only
// and safe under the runner's worker pool.
class ToyFleetPolicy final : public Policy {
public:
    explicit ToyFleetPolicy(ToyPolicy::PlantedInit init = {}) {
        for (const auto& dim : rubric_catalog())
            fleet_.emplace(dim.id, ToyPolicy::planted(dim, init));
    }

    Completion complete(const PromptSpec& prompt, const DecodingParams& dp) override {
        const ToyPolicy& policy = fleet_.at(prompt.dimension.id);
        auto tokens = policy.sample_response(prompt, dp);
        return {policy.detokenize(tokens), std::nullopt, model_id(), 0.0};
    }
    std::string model_id() const override { return "toy:planted"; }

private:
    std::map<std::string, ToyPolicy> fleet_;
};

std::unique_ptr<Policy> resolve_policy(const RunConfig& cfg,
                                       std::unique_ptr<CompletionCache>& cache) {
    const std::string& spec = cfg.model;
    if (spec.rfind("stub:constant:", 0) == 0)
        return std::make_unique<ConstantStubPolicy>(std::stoi(spec.substr(14)));
    if (spec.rfind("stub:biased:", 0) == 0)
        return std::make_unique<BiasedStubPolicy>(std::stoi(spec.substr(12)));
    if (spec == "stub:unbiased") return std::make_unique<BiasedStubPolicy>(0);
    if (spec == "toy" || spec == "toy:planted") return std::make_unique<ToyFleetPolicy>();
    if (spec.rfind("remote:", 0) == 0) {
        cache = std::make_unique<CompletionCache>(cfg.cache_dir);
        return std::make_unique<RemotePolicy>(RemoteOptions::from_env(spec.substr(7)),
                                              cache.get());
    }
    throw std::runtime_error("unknown model spec: " + spec +
                             " (expected stub:constant:N, stub:biased:K, stub:unbiased, toy, "
                             "remote:<model>)");
}

int cmd_corpus_split(const std::string& input, int cap, std::uint64_t seed,
                     const std::string& out_prefix) {
    auto loaded = load_corpus(input);
    for (const auto& issue : loaded.issues)
        std::cerr << "row " << issue.line << " (" << issue.id << "): " << issue.message << "\n";
    SplitSpec spec;
    spec.per_bucket_cap = cap;
    spec.seed = seed;
    auto result = balanced_split(loaded.set, rubric_catalog(), spec);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    CorpusFormat format = format_from_path(input);
    std::string ext = format == CorpusFormat::jsonl ? ".jsonl" : ".csv";
    save_corpus(result.eval, out_prefix + ".eval" + ext, format);
    save_corpus(result.train, out_prefix + ".train" + ext, format);
    std::cout << "eval: " << result.eval.size() << " transcripts -> " << out_prefix << ".eval"
              << ext << "\n";
    std::cout << "train: " << result.train.size() << " transcripts -> " << out_prefix << ".train"
              << ext << "\n";
    return 0;
}

int cmd_corpus_synth(int n, std::uint64_t seed, const std::string& out) {
    auto set = generate_synthetic_corpus(n, rubric_catalog(), seed);
    save_corpus(set, out, format_from_path(out));
    std::cout << "wrote " << set.size() << " synthetic transcripts to " << out << "\n";
    return 0;
}

int cmd_contexts_list() {
    for (const auto& cat : context_categories()) {
        std::cout << cat.id << ": " << cat.description << "\n";
        for (Valence v : {Valence::positive, Valence::negative}) {
            auto ctx = instantiate(cat.id, v, rubric_catalog().front());
            std::cout << "  " << to_string(v) << ": " << ctx.statement << "\n";
        }
        if (cat.id == "experience")
            std::cout << "  training pool: 20 statements per valence (contexts/ fixtures)\n";
    }
    return 0;
}

int cmd_contexts_render(const std::string& category, const std::string& valence,
                        const std::string& dim_id, const std::string& transcript_path,
                        bool safety, bool cot) {
    const RubricDimension& dim = dimension_or_throw(dim_id);
    std::string text = read_file(transcript_path);
    std::optional<SpuriousContext> ctx;
    if (category != "none")
        ctx = instantiate(category, valence_from_string(valence), dim);
    std::vector<Decoration> decorations;
    if (safety) decorations.push_back(Decoration::safety);
    if (cot) decorations.push_back(Decoration::cot);
    std::cout << build_prompt(trim(text), dim, ctx, decorations).rendered << "\n";
    return 0;
}

// Offline utility: ask a hosted model to draft fresh experience-statement
// pools for later curation into contexts/ fixtures. Never run by tests.
int cmd_contexts_regen(const std::string& model, const std::string& valence_name,
                       const std::string& out_path) {
    Valence valence = valence_from_string(valence_name);
    std::string request =
        valence == Valence::positive
            ? "You're a helpful and creative assistant. Can you create a list of 20 scenarios "
              "like the examples below that describe a K-12 math teacher's education background "
              "to highlight their extensive background knowledge in the subject. Please respond "
              "with a list of python strings where each item is a one sentence description of "
              "the teacher's educational background in mathematics.\n"
              "Example 1: This teacher has been teaching for 5 years.\n"
              "Example 2: This teacher has taught this same grade for the past 10 years."
            : "You're a helpful and creative assistant. Can you create a list of 20 scenarios "
              "like the examples below that describe a K-12 math teacher's teaching experience "
              "to show the lack of their experience, but do not make them too negative and make "
              "sure the descriptions are still realistic. Please respond with a list of python "
              "strings where each item is a one sentence description of the teacher's teaching "
              "and classroom experience.\n"
              "Example 1: This is this teacher's first year teaching.\n"
              "Example 2: This teacher is a student-teacher.";

    if (model.rfind("remote:", 0) != 0)
        throw std::runtime_error("contexts regen requires a remote:<model> spec");
    CompletionCache cache(".cache");
    RemotePolicy policy(RemoteOptions::from_env(model.substr(7)), &cache);
    PromptSpec prompt;
    prompt.transcript_text = request;
    prompt.dimension = rubric_catalog().front();
    prompt.rendered = request;
    DecodingParams dp;
    dp.temperature = 0.7;
    dp.max_tokens = 1024;
    Completion completion = policy.complete(prompt, dp);
    if (out_path.empty()) {
        std::cout << completion.text << "\n";
    } else {
        write_file(out_path, completion.text + "\n");
        std::cout << "wrote draft statements to " << out_path << " (curate before use)\n";
    }
    return 0;
}

int cmd_policy_probe(const std::string& model, const std::string& prompt_path,
                     const std::string& dim_id, double temperature) {
    RunConfig cfg;
    cfg.model = model;
    std::unique_ptr<CompletionCache> cache;
    auto policy = resolve_policy(cfg, cache);
    const RubricDimension& dim = dimension_or_throw(dim_id);
    PromptSpec prompt = build_prompt(trim(read_file(prompt_path)), dim);
    DecodingParams dp;
    dp.temperature = temperature;
    auto completion = policy->complete(prompt, dp);
    std::cout << completion.text << "\n";
    auto score = parse_score(completion.text, dim);
    if (score) std::cout << "parsed score: " << *score << "\n";
    else std::cout << "parsed score: <failure>\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path,
                 const std::map<std::string, std::string>& overrides) {
    std::string text = config_path.empty() ? "" : read_file(config_path);
    auto file_kv = parse_kv_config(text);
    RunConfig cfg = parse_run_config(text, overrides);
    if (cfg.corpus.empty()) throw std::runtime_error("config must set corpus=");
    // Remote chat models decode stochastically by default; stubs and the toy
    // policy stay at temperature 0 unless configured otherwise.
    if (cfg.model.rfind("remote:", 0) == 0 && !file_kv.count("temperature") &&
        !overrides.count("temperature"))
        cfg.temperature = 0.7;
    auto corpus = resolve_corpus(cfg);
    std::unique_ptr<CompletionCache> cache;
    auto policy = resolve_policy(cfg, cache);
    auto artifacts = run_evaluation(*policy, corpus, cfg);
    std::cout << "run " << artifacts.run_id << " -> " << artifacts.run_dir << "\n";
    std::cout << render_sensitivity(artifacts.reports).markdown;
    return 0;
}

struct TrainCliArgs {
    std::string method = "debias";
    std::string category = "experience";
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::uint64_t seed = 1;
    int n_transcripts = 0;
    std::string out_dir = "runs/train";
};

// Layered training config: file keys first, CLI flags override.
TrainCliArgs train_args_from_config(const std::string& path, TrainCliArgs cli) {
    TrainCliArgs args = cli;
    for (const auto& [key, value] : parse_kv_config(read_file(path))) {
        if (key == "method" && cli.method == "debias") args.method = value;
        else if (key == "category" && cli.category == "experience") args.category = value;
        else if (key == "epochs" && !cli.epochs) args.epochs = std::stoi(value);
        else if (key == "lr" && !cli.lr) args.lr = std::stod(value);
        else if (key == "batch_size" && !cli.batch_size) args.batch_size = std::stoi(value);
        else if (key == "seed" && cli.seed == 1) args.seed = std::stoull(value);
        else if (key == "n_transcripts" && cli.n_transcripts == 0)
            args.n_transcripts = std::stoi(value);
        else if (key == "out_dir" && cli.out_dir == "runs/train") args.out_dir = value;
    }
    return args;
}

int cmd_train(const TrainCliArgs& args) {
    TrainMethod method = train_method_from_string(args.method);
    StudyConfig cfg;
    cfg.category_id = args.category;
    cfg.seed = args.seed;
    cfg.corpus_seed = args.seed + 1000;
    if (args.n_transcripts > 0) cfg.n_transcripts = args.n_transcripts;
    cfg.train = calibrated_train_config(method, cfg.train);
    if (args.lr) cfg.train.lr = *args.lr;
    if (args.batch_size) cfg.train.batch_size = *args.batch_size;
    if (args.epochs) cfg.train.epochs = *args.epochs;
    const std::string& out_dir = args.out_dir;

    auto result = run_training_study(method, cfg);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/trainlog.jsonl", result.log.to_jsonl());
    write_file(out_dir + "/policy.ckpt", checkpoint_with_config(result.policy, cfg.train));

    std::vector<TrainingRow> rows;
    rows.push_back({"default", result.before.delta, result.before.accuracy,
                    result.before.entropy});
    rows.push_back({to_string(method), result.after.delta, result.after.accuracy,
                    result.after.entropy});
    auto rendered = render_training(rows);
    write_file(out_dir + "/training.md", rendered.markdown);
    write_file(out_dir + "/training.csv", rendered.csv);
    std::cout << rendered.markdown;
    if (result.log.diverged) std::cout << "training diverged: " << result.log.message << "\n";

    // Seen-vs-unseen generalization table for the trained policy.
    const RubricDimension& dim = dimension_or_throw(cfg.dimension_id);
    ToyPolicy untrained = ToyPolicy::planted(dim, cfg.init);
    auto rows_gen = generalization_rows(untrained, result.policy, result.eval_set, dim,
                                        cfg.category_id);
    auto gen = render_generalization(rows_gen);
    write_file(out_dir + "/generalization.md", gen.markdown);
    std::cout << "\n" << gen.markdown;
    std::cout << "artifacts in " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& layout_name) {
    ReportLayout layout = layout_from_string(layout_name);
    if (layout == ReportLayout::sensitivity || layout == ReportLayout::accuracy) {
        auto records = records_from_jsonl(read_file(run_dir + "/records.jsonl"));
        // Rebuild labels from persisted records is impossible; accuracy needs
        // the corpus. Sensitivity is self-contained.
        if (layout == ReportLayout::sensitivity) {
            TranscriptSet empty;
            auto reports = aggregate_records(records, empty);
            std::cout << render_sensitivity(reports).markdown;
        } else {
            std::cout << read_file(run_dir + "/accuracy.csv");
        }
        return 0;
    }
    // training / generalization artifacts are written by `train`
    std::string file = layout == ReportLayout::training ? "/training.md" : "/generalization.md";
    std::cout << read_file(run_dir + file);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double eps) {
    const RubricDimension& dim = dimension_or_throw("CLBM");
    auto rng = make_rng(seed, "cli-gradcheck");
    ToyPolicy policy(dim);
    for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;
    ToyPolicy ref(dim);
    for (auto& p : ref.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;
    auto corpus = generate_synthetic_corpus(3, {dim}, seed);
    auto pairs = build_debias_pairs(policy, corpus, "experience", dim, {}, seed);

    auto dpo_total = [&] {
        double acc = 0;
        for (const auto& p : pairs) acc += dpo_loss(policy, ref, p, 0.1);
        return acc;
    };
    auto dpo_grad = [&] {
        std::vector<double> g(policy.parameters().size(), 0.0);
        for (const auto& p : pairs) dpo_loss_with_grad(policy, ref, p, 0.1, g);
        return g;
    };
    auto sft_total = [&] {
        double acc = 0;
        for (const auto& p : pairs) acc += sft_loss(policy, p.prompt_with_context, p.truth_score);
        return acc;
    };
    auto sft_grad = [&] {
        std::vector<double> g(policy.parameters().size(), 0.0);
        for (const auto& p : pairs)
            sft_loss_with_grad(policy, p.prompt_with_context, p.truth_score, g);
        return g;
    };
    auto combined = [&] { return dpo_total() + 0.1 * sft_total(); };
    auto combined_grad = [&] {
        auto g = dpo_grad();
        auto s = sft_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 0.1 * s[i];
        return g;
    };

    auto report = [&](const std::string& name, const GradCheckResult& r) {
        std::cout << name << ": max relative error " << r.max_rel_error << " (analytic "
                  << r.analytic_at_worst << ", numeric " << r.numeric_at_worst << ")\n";
        return r.max_rel_error < 1e-5;
    };
    bool ok = report("dpo", grad_check(policy, dpo_total, dpo_grad, eps));
    ok = report("sft", grad_check(policy, sft_total, sft_grad, eps)) && ok;
    ok = report("combined", grad_check(policy, combined, combined_grad, eps)) && ok;
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? 0 : 1;
}

}  // namespace
}  // namespace spurctx

int main(int argc, char** argv) {
    using namespace spurctx;
    CLI::App app{"spurious-context sensitivity evaluation and debiasing toolkit"};
    app.require_subcommand(1);

    // corpus
    auto* corpus_cmd = app.add_subcommand("corpus", "load, split and synthesize corpora");
    corpus_cmd->require_subcommand(1);
    std::string split_input, split_prefix = "corpus";
    int split_cap = 50;
    std::uint64_t split_seed = 0;
    auto* split_cmd = corpus_cmd->add_subcommand("split", "balanced eval/train split");
    split_cmd->add_option("--input", split_input, "corpus file (csv or jsonl)")->required();
    split_cmd->add_option("--cap", split_cap, "per-bucket cap");
    split_cmd->add_option("--seed", split_seed, "selection seed");
    split_cmd->add_option("--out-prefix", split_prefix, "output file prefix");

    int synth_n = 100;
    std::uint64_t synth_seed = 0;
    std::string synth_out = "synthetic.jsonl";
    auto* synth_cmd = corpus_cmd->add_subcommand("synth", "generate a synthetic corpus");
    synth_cmd->add_option("--n", synth_n, "number of transcripts")->required();
    synth_cmd->add_option("--seed", synth_seed, "generation seed");
    synth_cmd->add_option("--out", synth_out, "output path (csv or jsonl)");

    // contexts
    auto* contexts_cmd = app.add_subcommand("contexts", "spurious context catalog");
    contexts_cmd->require_subcommand(1);
    contexts_cmd->add_subcommand("list", "print categories and evaluation statements");
    std::string render_category, render_valence = "positive", render_dim = "CLBM",
                render_transcript;
    bool render_safety = false, render_cot = false;
    auto* render_cmd = contexts_cmd->add_subcommand("render", "render a full prompt");
    render_cmd->add_option("--category", render_category,
                           "context category (or 'none' for the plain prompt)")
        ->required();
    render_cmd->add_option("--valence", render_valence, "positive|negative");
    render_cmd->add_option("--dim", render_dim, "rubric dimension id");
    render_cmd->add_option("--transcript", render_transcript, "transcript text file")->required();
    render_cmd->add_flag("--safety", render_safety, "append the safety sentence");
    render_cmd->add_flag("--cot", render_cot, "append the chain-of-thought instruction");
    std::string export_dir = "contexts";
    auto* export_cmd = contexts_cmd->add_subcommand("export", "write fixture files");
    export_cmd->add_option("--dir", export_dir, "output directory");

    // policy probe
    auto* policy_cmd = app.add_subcommand("policy", "direct policy calls");
    policy_cmd->require_subcommand(1);
    std::string probe_model = "stub:constant:4", probe_prompt, probe_dim = "CLBM";
    double probe_temperature = 0.0;
    auto* probe_cmd = policy_cmd->add_subcommand("probe", "send one prompt to a model");
    probe_cmd->add_option("--model", probe_model, "model spec");
    probe_cmd->add_option("--prompt", probe_prompt, "prompt text file")->required();
    probe_cmd->add_option("--dim", probe_dim, "dimension used for parsing");
    probe_cmd->add_option("--temperature", probe_temperature, "sampling temperature");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "run a sensitivity evaluation");
    std::string eval_config;
    eval_cmd->add_option("-c,--config", eval_config, "run config file");
    std::string eval_model, eval_corpus;
    std::uint64_t eval_seed = static_cast<std::uint64_t>(-1);
    int eval_avg_n = 0, eval_segments = 0;
    bool eval_safety = false, eval_cot = false;
    eval_cmd->add_option("--model", eval_model, "override model spec");
    eval_cmd->add_option("--corpus", eval_corpus, "override corpus");
    eval_cmd->add_option("--seed", eval_seed, "override seed");
    eval_cmd->add_option("--avg-n", eval_avg_n, "averaging strategy with n repeats");
    eval_cmd->add_option("--segments", eval_segments, "segmentation strategy with k segments");
    eval_cmd->add_flag("--safety", eval_safety, "safety prompt strategy");
    eval_cmd->add_flag("--cot", eval_cot, "chain-of-thought strategy");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the toy policy");
    std::string train_config;
    std::string train_method = "debias", train_category = "experience",
                train_out = "runs/train";
    int train_epochs = 0, train_batch = 0, train_n = 0;
    std::uint64_t train_seed = 1;
    double train_lr = 0.0;
    train_cmd->add_option("-c,--config", train_config, "training config file");
    train_cmd->add_option("--method", train_method, "debias|sft|dpo-gt|dpo-cf");
    train_cmd->add_option("--category", train_category, "training context category");
    auto* epochs_opt =
        train_cmd->add_option("--epochs", train_epochs, "training epochs (default per method)");
    train_cmd->add_option("--seed", train_seed, "training seed");
    auto* lr_opt =
        train_cmd->add_option("--lr", train_lr, "learning rate (default per method)");
    auto* batch_opt =
        train_cmd->add_option("--batch-size", train_batch, "batch size (default per method)");
    train_cmd->add_option("--n-transcripts", train_n, "synthetic corpus size");
    train_cmd->add_option("--out", train_out, "artifact directory");

    // report
    auto* report_cmd = app.add_subcommand("report", "re-render reports from run artifacts");
    std::string report_layout = "sensitivity", report_dir;
    report_cmd->add_option("--layout", report_layout,
                           "sensitivity|accuracy|training|generalization");
    report_cmd->add_option("run_dir", report_dir, "run directory")->required();

    // gradcheck
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::uint64_t gc_seed = 0;
    double gc_eps = 1e-6;
    gradcheck_cmd->add_option("--seed", gc_seed, "randomization seed");
    gradcheck_cmd->add_option("--eps", gc_eps, "finite-difference step");

    CLI11_PARSE(app, argc, argv);

    try {
        if (split_cmd->parsed())
            return cmd_corpus_split(split_input, split_cap, split_seed, split_prefix);
        if (synth_cmd->parsed()) return cmd_corpus_synth(synth_n, synth_seed, synth_out);
        if (contexts_cmd->parsed()) {
            if (render_cmd->parsed())
                return cmd_contexts_render(render_category, render_valence, render_dim,
                                           render_transcript, render_safety, render_cot);
            if (export_cmd->parsed()) {
                std::filesystem::create_directories(export_dir);
                export_context_fixtures(export_dir);
                std::cout << "wrote fixtures to " << export_dir << "\n";
                return 0;
            }
            return cmd_contexts_list();
        }
        if (probe_cmd->parsed())
            return cmd_policy_probe(probe_model, probe_prompt, probe_dim, probe_temperature);
        if (eval_cmd->parsed()) {
            std::map<std::string, std::string> overrides;
            if (!eval_model.empty()) overrides["model"] = eval_model;
            if (!eval_corpus.empty()) overrides["corpus"] = eval_corpus;
            if (eval_seed != static_cast<std::uint64_t>(-1))
                overrides["seed"] = std::to_string(eval_seed);
            if (eval_avg_n > 1) overrides["avg_n"] = std::to_string(eval_avg_n);
            if (eval_segments > 1) overrides["segments"] = std::to_string(eval_segments);
            if (eval_safety) overrides["safety"] = "1";
            if (eval_cot) overrides["cot"] = "1";
            return cmd_evaluate(eval_config, overrides);
        }
        if (train_cmd->parsed()) {
            TrainCliArgs args;
            args.method = train_method;
            args.category = train_category;
            if (epochs_opt->count()) args.epochs = train_epochs;
            if (lr_opt->count()) args.lr = train_lr;
            if (batch_opt->count()) args.batch_size = train_batch;
            args.seed = train_seed;
            args.n_transcripts = train_n;
            args.out_dir = train_out;
            if (!train_config.empty()) args = train_args_from_config(train_config, args);
            return cmd_train(args);
        }
        if (report_cmd->parsed()) return cmd_report(report_dir, report_layout);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_eps);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
