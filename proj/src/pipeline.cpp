#include "mixdiff/pipeline.hpp"

#include <cstdlib>
#include <iostream>

#include "mixdiff/denoiser.hpp"
#include "mixdiff/diffusion.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/io.hpp"
#include "mixdiff/plot.hpp"
#include "mixdiff/privacy.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/toygen.hpp"
#include "mixdiff/training.hpp"
#include "mixdiff/utility.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mixdiff {

RunConfig RunConfig::from_json(json j, const fs::path& base_dir, const Overrides& o) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    RunConfig c;
    c.raw = std::move(j);
    c.base_dir = base_dir.empty() ? fs::path(".") : base_dir;
    try {
        c.seed = o.seed ? *o.seed : c.raw.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad seed: ") + e.what());
    }
    if (o.output_dir) {
        c.output_dir = *o.output_dir;
    } else if (c.raw.contains("output_dir")) {
        c.output_dir = c.base_dir / c.raw.at("output_dir").get<std::string>();
    } else {
        const char* root = std::getenv("MIXDIFF_OUT_ROOT");
        const std::string stem = c.raw.value("name", std::string("run"));
        c.output_dir = (root && *root ? fs::path(root) : fs::path("runs")) / stem;
    }
    c.plots = o.plots.value_or(c.raw.value("plots", false));
    c.verbosity = o.verbosity.value_or(1);
    return c;
}

RunConfig RunConfig::load(const fs::path& path, const Overrides& o) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.is_object() && !j.contains("name")) j["name"] = path.stem().string();
    return from_json(std::move(j), path.parent_path(), o);
}

fs::path RunConfig::path(const std::string& key, const std::string& fallback) const {
    if (raw.contains(key) && raw.at(key).is_string()) {
        fs::path p = raw.at(key).get<std::string>();
        return p.is_absolute() ? p : base_dir / p;
    }
    return output_dir / fallback;
}

json RunConfig::section(const std::string& key) const {
    if (!raw.contains(key)) return json::object();
    const auto& s = raw.at(key);
    if (!s.is_object()) throw UsageError("config section '" + key + "' must be an object");
    return s;
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : stage) h = (h ^ ch) * 1099511628211ull;
    return Rng::mix(seed ^ h);
}

void RunConfig::log(int level, const std::string& message) const {
    if (level <= verbosity) std::cerr << message << '\n';
}

std::vector<QuasiVar> parse_quasi(const json& j) {
    std::vector<QuasiVar> out;
    if (j.is_null()) return out;
    if (!j.is_array()) throw UsageError("quasi-identifiers must be a list");
    for (const auto& q : j) {
        QuasiVar v;
        if (q.is_string()) {
            v.name = q.get<std::string>();
        } else {
            v.name = q.at("name").get<std::string>();
            if (q.contains("bin_width")) v.bin_width = q.at("bin_width").get<double>();
        }
        out.push_back(std::move(v));
    }
    return out;
}

json EvaluationReport::summary() const {
    json j;
    j["cascade"] = cascade.to_json();
    json kls = json::object();
    double kl_max = 0;
    for (const auto& e : kl) {
        kls[e.name] = e.kl;
        kl_max = std::max(kl_max, e.kl);
    }
    j["kl"] = kls;
    j["kl_max"] = kl_max;
    j["log_cluster"] = {{"U", log_cluster.mean},
                        {"per_rep", log_cluster.per_rep},
                        {"sample_real", log_cluster.sample_real},
                        {"sample_syn", log_cluster.sample_syn},
                        {"capped", log_cluster.capped}};
    if (category_coverage) j["category_coverage"] = *category_coverage;
    j["dynamic"] = {{"real_patients", dynamic_real.patients},
                    {"real_excluded", dynamic_real.excluded},
                    {"syn_patients", dynamic_syn.patients},
                    {"syn_excluded", dynamic_syn.excluded}};
    return j;
}

EvaluationReport evaluate(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const EvaluationOptions& options) {
    EvaluationReport r;
    r.cascade = run_cascade(real, syn, schema, options.cascade);
    r.kl = kl_table(real, syn, schema, options.kl_bins);
    r.static_real = static_correlations(real, schema);
    r.static_syn = static_correlations(syn, schema);
    r.dynamic_real = dynamic_correlations(real, schema);
    r.dynamic_syn = dynamic_correlations(syn, schema);

    const auto er = encode(real, schema), es = encode(syn, schema);
    std::size_t nr = 0, ns = 0;
    const auto rr = encoded_rows(er, &nr), rs = encoded_rows(es, &ns);
    r.log_cluster = log_cluster_U(rr, nr, rs, ns, schema.width(), options.log_cluster);

    try {
        r.category_coverage = category_coverage(real, syn, schema);
    } catch (const NotApplicableError&) {
    }
    if (!options.demographics.empty())
        r.demographics = demographic_coverage(real, syn, schema, options.demographics);
    return r;
}

namespace {

void archive_config(const RunConfig& cfg, const std::string& command) {
    json j = cfg.raw;
    j["seed"] = cfg.seed;
    j["output_dir"] = fs::absolute(cfg.output_dir).string();
    write_file_atomic(cfg.output_dir / (command + "_config.json"), j.dump(2) + "\n");
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

DatasetSchema load_schema(const RunConfig& cfg) { return DatasetSchema::load(cfg.path("schema", "schema.json")); }

fs::path train_csv(const RunConfig& cfg) { return cfg.path("train_csv", "toy_train.csv"); }

NoiseSchedule schedule_from(const json& s) {
    return build_schedule(s.value("T", std::size_t{1000}), s.value("beta_min", 1e-4), s.value("beta_max", 0.01));
}

}  // namespace

json cmd_toygen(const RunConfig& cfg) {
    auto toy = cfg.section("toy");
    if (!toy.contains("seed")) toy["seed"] = cfg.stage_seed("toygen");
    const auto spec = ToySpec::from_json(toy);
    const auto data = generate_toy(spec);
    const auto schema_path = cfg.output_dir / "schema.json";
    data.schema.save(schema_path);
    save_csv(data.train, cfg.output_dir / "toy_train.csv");
    save_csv(data.holdout, cfg.output_dir / "toy_holdout.csv");
    archive_config(cfg, "toygen");
    json out{{"command", "toygen"},
             {"schema", schema_path.string()},
             {"train_rows", data.train.rows()},
             {"holdout_rows", data.holdout.rows()},
             {"spec", spec.to_json()}};
    cfg.log(1, "toygen: " + std::to_string(spec.patients) + " train / " + std::to_string(spec.holdout) +
                   " holdout patients -> " + cfg.output_dir.string());
    return out;
}

json cmd_train(const RunConfig& cfg) {
    auto schema = load_schema(cfg);
    const auto table = load_csv(train_csv(cfg), schema);
    bool fitted = false;
    for (const auto& v : schema.variables)
        if (v.is_numeric() && !v.has_range()) fitted = true;
    if (fitted) schema = fit_ranges(schema, table);
    // the frozen copy (ranges included) travels with the checkpoint
    schema.save(cfg.output_dir / "schema_frozen.json");
    const auto data = encode(table, schema);

    const auto schedule = schedule_from(cfg.section("schedule"));
    auto dj = cfg.section("denoiser");
    dj["input_width"] = schema.width();
    if (!dj.contains("lengths")) {
        const auto l = DenoiserConfig::default_lengths(schema.max_length);
        dj["lengths"] = {l[0], l[1], l[2]};
    }
    const auto dconf = DenoiserConfig::from_json(dj);
    Denoiser model(dconf);

    auto tj = cfg.section("train");
    if (!tj.contains("seed")) tj["seed"] = cfg.stage_seed("train");
    const auto tconf = TrainConfig::from_json(tj);
    Rng init_rng(Rng::mix(tconf.seed ^ 0x696e6974ull));
    auto params = model.init(init_rng);

    TrainOptions opts;
    opts.checkpoint_dir = cfg.output_dir / "checkpoints";
    opts.checkpoint_extra = {{"schema", schema.to_json()}, {"schedule", schedule.to_json()}, {"train", tconf.to_json()}};
    std::size_t last_epoch = static_cast<std::size_t>(-1);
    opts.on_iteration = [&](const LossRecord& r, std::size_t epoch) {
        if (cfg.verbosity >= 2 || (cfg.verbosity >= 1 && epoch != last_epoch && epoch % 10 == 0))
            cfg.log(1, "epoch " + std::to_string(epoch) + " iter " + std::to_string(r.iteration) +
                           " L_tot " + format_double(r.total));
        last_epoch = epoch;
    };
    cfg.log(1, "train: " + std::to_string(data.batch()) + " episodes, " + std::to_string(model.parameter_count()) +
                   " parameters, T=" + std::to_string(schedule.steps()));
    const auto report = train(data, model, params, schedule, tconf, opts);

    const auto loss_path = cfg.output_dir / "loss_log.csv";
    write_file_atomic(loss_path, report.to_csv());
    if (cfg.plots) plot_loss_csv(loss_path, cfg.output_dir / "plots" / "loss.svg");
    archive_config(cfg, "train");

    const std::size_t n = report.records.size(), w = std::max<std::size_t>(1, n / 10);
    const auto head = report.mean(0, std::min(w, n)), tail = report.mean(n - std::min(w, n), n);
    return {{"command", "train"},
            {"checkpoint", (*opts.checkpoint_dir / "final.bin").string()},
            {"iterations", n},
            {"parameters", model.parameter_count()},
            {"ranges_fitted", fitted},
            {"loss_first", head.total},
            {"loss_last", tail.total}};
}

json cmd_sample(const RunConfig& cfg) {
    const auto ckpt_path = cfg.path("checkpoint", "checkpoints/final.bin");
    const auto ckpt = load_checkpoint(ckpt_path);
    if (!ckpt.extra.contains("schema") || !ckpt.extra.contains("schedule"))
        throw SchemaError("checkpoint " + ckpt_path.string() + " lacks schema or schedule");
    const auto schema = DatasetSchema::from_json(ckpt.extra.at("schema"));
    const auto schedule = NoiseSchedule::from_json(ckpt.extra.at("schedule"));
    Denoiser model(ckpt.params.config);

    const auto sj = cfg.section("sample");
    const std::size_t count = sj.value("patients", std::size_t{500});
    const std::size_t chunk = sj.value("chunk", std::size_t{128});
    const std::uint64_t seed = sj.value("seed", cfg.stage_seed("sample"));
    cfg.log(1, "sample: " + std::to_string(count) + " patients, T=" + std::to_string(schedule.steps()));
    const auto batch = generate(model, ckpt.params, schedule, schema, count, seed, chunk);
    const auto table = decode(batch);
    const auto out = cfg.path("synthetic_csv", "synthetic.csv");
    save_csv(table, out);
    archive_config(cfg, "sample");
    return {{"command", "sample"}, {"synthetic_csv", out.string()}, {"patients", count}, {"rows", table.rows()}};
}

namespace {

struct Pair {
    DatasetSchema schema;
    RecordTable real, syn;
};

Pair load_pair(const RunConfig& cfg) {
    Pair p;
    const auto frozen = cfg.output_dir / "schema_frozen.json";
    if (cfg.raw.contains("schema") || !fs::exists(frozen))
        p.schema = load_schema(cfg);
    else
        p.schema = DatasetSchema::load(frozen);
    const auto real_path = cfg.raw.contains("real_csv") ? cfg.path("real_csv", "") : train_csv(cfg);
    p.real = load_csv(real_path, p.schema);
    p.syn = load_csv(cfg.path("synthetic_csv", "synthetic.csv"), p.schema);
    bool missing = false;
    for (const auto& v : p.schema.variables)
        if (v.is_numeric() && !v.has_range()) missing = true;
    if (missing) p.schema = fit_ranges(p.schema, p.real);
    return p;
}

}  // namespace

json cmd_evaluate(const RunConfig& cfg) {
    const auto p = load_pair(cfg);
    const auto ej = cfg.section("evaluate");
    EvaluationOptions opts;
    opts.cascade.alpha = ej.value("alpha", 0.05);
    opts.cascade.repetitions = ej.value("repetitions", std::size_t{100});
    opts.cascade.batch = ej.value("batch", std::size_t{32});
    opts.cascade.sigma_k = ej.value("sigma_k", 2.0);
    opts.cascade.seed = cfg.stage_seed("cascade");
    opts.kl_bins = ej.value("kl_bins", std::size_t{20});
    opts.log_cluster.gamma = ej.value("gamma", std::size_t{20});
    opts.log_cluster.reps = ej.value("reps", std::size_t{20});
    opts.log_cluster.sample_n = ej.value("sample_n", std::size_t{100000});
    opts.log_cluster.seed = cfg.stage_seed("log_cluster");
    if (ej.contains("quasi")) opts.demographics = parse_quasi(ej.at("quasi"));

    cfg.log(1, "evaluate: " + std::to_string(p.real.patient_count()) + " real / " +
                   std::to_string(p.syn.patient_count()) + " synthetic patients");
    const auto r = evaluate(p.real, p.syn, p.schema, opts);

    const auto dir = cfg.output_dir / "evaluation";
    write_file_atomic(dir / "cascade.csv", r.cascade.to_csv());
    write_file_atomic(dir / "kl.csv", kl_table_csv(r.kl));
    const std::pair<const char*, const CorrelationMatrix*> mats[] = {
        {"static_real", &r.static_real},         {"static_syn", &r.static_syn},
        {"trend_real", &r.dynamic_real.trend},   {"trend_syn", &r.dynamic_syn.trend},
        {"cycle_real", &r.dynamic_real.cycle},   {"cycle_syn", &r.dynamic_syn.cycle}};
    for (const auto& [name, m] : mats) {
        write_file_atomic(dir / (std::string(name) + ".csv"), m->to_csv());
        if (cfg.plots)
            plot_heatmap_csv(dir / (std::string(name) + ".csv"), cfg.output_dir / "plots" / (std::string(name) + ".svg"),
                             name, ColorScale::Diverging);
    }
    if (r.demographics) write_file_atomic(dir / "demographics.csv", r.demographics->to_csv());
    auto summary = r.summary();
    write_json(dir / "report.json", summary);
    archive_config(cfg, "evaluate");
    summary["command"] = "evaluate";
    summary["report"] = (dir / "report.json").string();
    return summary;
}

json cmd_privacy(const RunConfig& cfg) {
    const auto p = load_pair(cfg);
    const auto pj = cfg.section("privacy");
    std::vector<QuasiVar> quasi;
    if (pj.contains("quasi")) {
        quasi = parse_quasi(pj.at("quasi"));
    } else {
        for (const auto& v : p.schema.variables)
            if (!v.is_numeric()) quasi.push_back({v.name, std::nullopt});
        if (quasi.empty()) throw UsageError("privacy needs quasi-identifiers (privacy.quasi)");
    }
    const double dmin = min_euclidean_distance(encode(p.real, p.schema), encode(p.syn, p.schema));
    const auto report = disclosure_risk(p.real, p.syn, p.schema, quasi);
    json j = report.to_json();
    j["min_distance"] = dmin;
    j["exact_copy"] = dmin == 0.0;
    write_json(cfg.output_dir / "privacy" / "report.json", j);
    archive_config(cfg, "privacy");
    cfg.log(1, "privacy: risk " + format_double(report.risk) + ", min distance " + format_double(dmin));
    return {{"command", "privacy"},
            {"risk", report.risk},
            {"threshold", report.threshold},
            {"pass", report.pass},
            {"min_distance", dmin}};
}

json cmd_utility(const RunConfig& cfg) {
    const auto p = load_pair(cfg);
    const auto uj = cfg.section("utility");
    if (!uj.contains("action_vars")) throw UsageError("utility needs utility.action_vars");
    if (!uj.contains("reward")) throw UsageError("utility needs utility.reward {variable, lo, hi}");
    UtilityConfig uc;
    uc.action_vars = uj.at("action_vars").get<std::vector<std::string>>();
    uc.components = uj.value("components", std::size_t{5});
    uc.states = uj.value("states", std::size_t{100});
    uc.seed = cfg.stage_seed("utility");
    if (uj.contains("bcq")) {
        const auto& b = uj.at("bcq");
        uc.bcq.gamma = b.value("gamma", uc.bcq.gamma);
        uc.bcq.alpha = b.value("alpha", uc.bcq.alpha);
        uc.bcq.iterations = b.value("iterations", uc.bcq.iterations);
        uc.bcq.tau = b.value("tau", uc.bcq.tau);
    }
    const auto& rj = uj.at("reward");
    const auto reward = band_reward(rj.at("variable").get<std::string>(), rj.at("lo").get<double>(),
                                    rj.at("hi").get<double>());
    cfg.log(1, "utility: " + std::to_string(uc.states) + " states, " + std::to_string(uc.components) +
                   " components");
    const auto r = run_utility(p.real, p.syn, p.schema, uc, reward);

    const auto dir = cfg.output_dir / "utility";
    write_file_atomic(dir / "heatmap_real.csv", r.real_map.to_csv());
    write_file_atomic(dir / "heatmap_syn.csv", r.syn_map.to_csv());
    write_json(dir / "policy_real.json", r.real_policy.to_json());
    write_json(dir / "policy_syn.json", r.syn_policy.to_json());
    if (cfg.plots) {
        plot_heatmap_csv(dir / "heatmap_real.csv", cfg.output_dir / "plots" / "heatmap_real.svg",
                         "policy on real data (%)", ColorScale::Sequential);
        plot_heatmap_csv(dir / "heatmap_syn.csv", cfg.output_dir / "plots" / "heatmap_syn.svg",
                         "policy on synthetic data (%)", ColorScale::Sequential);
    }
    json j{{"command", "utility"}, {"tv", r.tv}, {"pls_reduced", r.pls_reduced}};
    write_json(dir / "summary.json", j);
    archive_config(cfg, "utility");
    cfg.log(1, "utility: TV distance " + format_double(r.tv));
    return j;
}

json run_command(const std::string& name, const RunConfig& cfg) {
    if (name == "toygen") return cmd_toygen(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "sample") return cmd_sample(cfg);
    if (name == "evaluate") return cmd_evaluate(cfg);
    if (name == "privacy") return cmd_privacy(cfg);
    if (name == "utility") return cmd_utility(cfg);
    throw UsageError("unknown command '" + name + "'");
}

}  // namespace mixdiff
