#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mixdiff/denoiser.hpp"
#include "mixdiff/diffusion.hpp"
#include "mixdiff/fidelity.hpp"
#include "mixdiff/io.hpp"
#include "mixdiff/pipeline.hpp"
#include "mixdiff/privacy.hpp"
#include "mixdiff/schema.hpp"
#include "mixdiff/structure.hpp"
#include "mixdiff/utility.hpp"

using namespace mixdiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// ---------- 1: schema arithmetic

Outcome schema_widths(const fs::path& src) {
    const auto hiv = DatasetSchema::load(src / "fixtures/schemas/hiv.json");
    const auto hyp = DatasetSchema::load(src / "fixtures/schemas/hypotension.json");
    return {hiv.width() == 37 && hyp.width() == 54,
            "N(hiv)=" + std::to_string(hiv.width()) + " N(hypotension)=" + std::to_string(hyp.width())};
}

// ---------- 2: forward composition vs closed form

struct ForwardDraws {
    std::vector<std::vector<double>> sequential, closed;
};

ForwardDraws forward_draws(std::uint64_t seed) {
    const std::size_t T = 50, n = 10000;
    const auto s = build_schedule(T, 1e-4, 0.02);
    Rng rng(seed);
    Tensor x0({1, 1, 1, n});
    for (auto& v : x0.values()) v = rng.uniform();
    ForwardDraws d;
    for (std::size_t t : {std::size_t{1}, T / 2, T}) {
        Rng seq = rng.split(t), closed = rng.split(1000 + t);
        Tensor x = x0;
        for (std::size_t k = 1; k <= t; ++k) x = forward_step(x, k, standard_normal(x0.shape(), seq), s);
        const auto c = q_sample(x0, t, standard_normal(x0.shape(), closed), s);
        d.sequential.emplace_back(x.values().begin(), x.values().end());
        d.closed.emplace_back(c.values().begin(), c.values().end());
    }
    return d;
}

Outcome forward_marginals(const ForwardDraws& d) {
    double worst = 0;
    std::string detail;
    const char* names[] = {"t=1", "t=25", "t=50"};
    for (std::size_t i = 0; i < d.sequential.size(); ++i) {
        const double ks = ks_statistic(d.sequential[i], d.closed[i]);
        worst = std::max(worst, ks);
        detail += std::string(i ? " " : "") + names[i] + " D=" + fmt(ks);
    }
    return {worst < 0.05, detail + " (bound 0.05)"};
}

// ---------- 3: reconstruction identity

Outcome reconstruction() {
    const auto s = build_schedule(1000, 1e-4, 0.01);
    Rng rng(3);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const auto x0 = standard_normal({2, 1, 4, 6}, rng);
        const auto eps = standard_normal(x0.shape(), rng);
        const auto t = static_cast<std::size_t>(rng.uniform_int(1, 1000));
        const auto back = one_step_reconstruct(q_sample(x0, t, eps, s), t, eps, s);
        for (std::size_t k = 0; k < x0.size(); ++k)
            worst = std::max(worst, std::fabs(back[k] - x0[k]) / std::max(std::fabs(x0[k]), 1e-12));
    }
    return {worst <= 1e-6, "max relative error " + fmt(worst) + " over 100 draws (bound 1e-6)"};
}

// ---------- 4: gradient check

Outcome gradients() {
    DenoiserConfig c;
    c.input_width = 6;
    c.latent_width = 16;
    c.lengths = {8, 4, 2};
    Denoiser m(c);
    Rng rng(4);
    auto p = m.init(rng, false);
    for (auto& a : p.arrays)
        if (a.name.ends_with(".b") || a.name.ends_with(".g"))
            for (auto& v : a.values) v += 0.1 * rng.normal();
    Tensor x({2, 1, 8, 6}), w({2, 1, 8, 6});
    for (auto& v : x.values()) v = rng.normal();
    for (auto& v : w.values()) v = rng.normal();
    const std::vector<std::size_t> steps{3, 17};
    auto loss = [&] {
        const auto y = m.forward(p, x, steps);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
        return s;
    };
    auto cache = m.make_cache();
    m.forward(p, x, steps, cache.get());
    auto g = p.zeros_like();
    m.backward(p, *cache, w, g);

    // relative error per entry; the denominator is floored at 1e-3 of the group's
    // largest gradient so entries near zero are judged against the group scale
    double worst = 0, worst_raw = 0;
    std::string worst_group;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < p.arrays.size(); ++k) {
        auto& a = p.arrays[k];
        double scale = 0;
        for (double v : g.arrays[k].values) scale = std::max(scale, std::fabs(v));
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            double& v = a.values[i];
            const double o = v, h = 1e-3;
            auto at = [&](double d) {
                v = o + d;
                return loss();
            };
            const double d1 = (at(h) - at(-h)) / (2 * h), d2 = (at(2 * h) - at(-2 * h)) / (4 * h);
            v = o;
            const double num = (4 * d1 - d2) / 3, an = g.arrays[k].values[i];
            const double err = std::fabs(num - an);
            const double rel = err / std::max({std::fabs(num), std::fabs(an), 1e-3 * scale, 1e-12});
            worst_raw = std::max(worst_raw, err / std::max({std::fabs(num), std::fabs(an), 1e-12}));
            if (rel > worst) worst = rel, worst_group = a.name;
            ++checked;
        }
    }
    return {worst < 1e-5, std::to_string(p.arrays.size()) + " groups, " + std::to_string(checked) +
                              " entries, max relative error " + fmt(worst) + " in " + worst_group +
                              " (bound 1e-5, 64-bit; unfloored " + fmt(worst_raw) + ")"};
}

// ---------- 5: toy end to end

struct ToyRun {
    fs::path dir;
    json evaluation;
    json utility;
};

ToyRun toy_run(const fs::path& config, const fs::path& dir) {
    RunConfig::Overrides o;
    o.output_dir = dir;
    o.verbosity = 1;
    const auto cfg = RunConfig::load(config, o);
    ToyRun r{dir, {}, {}};
    for (const char* cmd : {"toygen", "train", "sample"}) run_command(cmd, cfg);
    r.evaluation = run_command("evaluate", cfg);
    r.utility = run_command("utility", cfg);
    return r;
}

// reuses a finished run left in `dir` by an earlier invocation
ToyRun toy_run_or_load(const fs::path& config, const fs::path& dir, bool reuse) {
    const auto eval = dir / "evaluation" / "report.json", util = dir / "utility" / "summary.json";
    if (reuse && fs::exists(eval) && fs::exists(util))
        return {dir, json::parse(read_file(eval)), json::parse(read_file(util))};
    return toy_run(config, dir);
}

Outcome toy_criteria(const fs::path& config, const ToyRun& r) {
    const auto raw = json::parse(read_file(config));
    const auto losses = read_file(r.dir / "loss_log.csv");
    const auto iterations = static_cast<std::size_t>(std::count(losses.begin(), losses.end(), '\n')) - 1;
    const auto weights = raw.at("train").value("loss_weights", std::vector<double>{1, 20, 10});
    const auto T = raw.at("schedule").at("T").get<std::size_t>();
    bool ok = iterations >= 2000 && T == 200 && weights == std::vector<double>{1, 20, 10};
    std::ostringstream os;
    os << "T=" << T << " iterations=" << iterations << ";";
    for (const auto& v : r.evaluation.at("cascade").at("variables")) {
        const auto name = v.at("name").get<std::string>();
        const int ks = v.at("ks").get<int>();
        const double kl = r.evaluation.at("kl").at(name).get<double>();
        ok = ok && ks >= 80 && kl < 0.1;
        os << ' ' << name << " KS " << ks << "/100 KL " << fmt(kl);
        if (!v.at("three_sigma").is_null()) {
            const int ts = v.at("three_sigma").get<int>();
            ok = ok && ts == 100;
            os << " 3s " << ts << "/100";
        }
        os << ';';
    }
    const double cat = r.evaluation.value("category_coverage", 0.0);
    ok = ok && cat == 1.0;
    os << " CAT " << cat * 100 << "%";
    return {ok, os.str()};
}

// ---------- 6: metric oracles

std::optional<double> tau_pairs(const std::vector<double>& a, const std::vector<double>& b) {
    long long con = 0, dis = 0, ta = 0, tb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0 && db == 0) continue;
            if (da == 0) {
                ++ta;
            } else if (db == 0) {
                ++tb;
            } else if ((da > 0) == (db > 0)) {
                ++con;
            } else {
                ++dis;
            }
        }
    const double denom = std::sqrt(static_cast<double>(con + dis + ta) * static_cast<double>(con + dis + tb));
    if (denom == 0) return std::nullopt;
    return static_cast<double>(con - dis) / denom;
}

double ks_sweep(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    auto ecdf = [](const std::vector<double>& s, double x) {
        return static_cast<double>(std::count_if(s.begin(), s.end(), [&](double v) { return v <= x; })) /
               static_cast<double>(s.size());
    };
    for (const auto* s : {&a, &b})
        for (double x : *s) d = std::max(d, std::fabs(ecdf(a, x) - ecdf(b, x)));
    return d;
}

Outcome metric_oracles() {
    Rng rng(6);
    double tau_err = 0, ks_err = 0;
    bool tau_defined_match = true;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng.uniform_int(0, 48);
        std::vector<double> a(n), b(n);
        for (std::size_t k = 0; k < n; ++k) {
            a[k] = static_cast<double>(rng.uniform_int(0, 5));
            b[k] = static_cast<double>(rng.uniform_int(0, 5));
        }
        const auto fast = kendall_tau(a, b), slow = tau_pairs(a, b);
        if (fast.has_value() != slow.has_value()) tau_defined_match = false;
        if (fast && slow) tau_err = std::max(tau_err, std::fabs(*fast - *slow));
        std::vector<double> x(1 + rng.uniform_int(0, 40)), y(1 + rng.uniform_int(0, 40));
        for (auto& v : x) v = std::round(rng.normal() * 3);
        for (auto& v : y) v = std::round(rng.normal() * 3 + 0.5);
        ks_err = std::max(ks_err, std::fabs(ks_statistic(x, y) - ks_sweep(x, y)));
    }

    const std::vector<std::size_t> labels{0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<bool> real{true, true, true, false, true, false, false, false};
    const double u = log_cluster_from_assignment(labels, real, 2).value;
    const double u_err = std::fabs(u - std::log(0.0625));

    const std::vector<std::vector<std::string>> rk{{"A"}, {"A"}, {"A"}, {"A"}, {"C"}};
    const double risk = disclosure_risk(rk, {{"A"}, {"B"}}).risk;

    std::vector<std::vector<double>> ra(100, std::vector<double>(5)), sa(80, std::vector<double>(5));
    for (auto& v : ra)
        for (auto& x : v) x = rng.normal();
    for (auto& v : sa)
        for (auto& x : v) x = rng.normal();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : sa)
        for (const auto& r : ra) {
            double d = 0;
            for (std::size_t k = 0; k < 5; ++k) d += (s[k] - r[k]) * (s[k] - r[k]);
            best = std::min(best, std::sqrt(d));
        }
    const double dist_err = std::fabs(min_euclidean_distance(ra, sa) - best);

    const bool ok = tau_defined_match && tau_err <= 1e-12 && ks_err <= 1e-12 && u_err <= 1e-9 && risk == 0.125 &&
                    dist_err <= 1e-9;
    return {ok, "tau err " + fmt(tau_err) + ", KS err " + fmt(ks_err) + ", U=" + fmt(u) + " (err " + fmt(u_err) +
                    "), risk=" + fmt(risk) + ", min-distance err " + fmt(dist_err)};
}

// ---------- 7: decomposition

Outcome decomposition() {
    Rng rng(7);
    double add = 0, resid = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> y(2 + rng.uniform_int(0, 46));
        const double slope = rng.normal(), level = 10 * rng.normal();
        for (std::size_t t = 0; t < y.size(); ++t) y[t] = level + slope * static_cast<double>(t) + rng.normal();
        const auto trend = linear_trend(y);
        double mean = 0;
        for (std::size_t t = 0; t < y.size(); ++t) {
            const double cycle = y[t] - trend[t];
            add = std::max(add, std::fabs(trend[t] + cycle - y[t]));
            mean += cycle;
        }
        resid = std::max(resid, std::fabs(mean / static_cast<double>(y.size())));
    }
    return {add <= 1e-10 && resid <= 1e-10,
            "max additivity error " + fmt(add) + ", max |mean residual| " + fmt(resid) + " over 1000 series"};
}

// ---------- 8: BCQ vs value iteration

MdpDataset ring(std::optional<std::pair<std::size_t, std::size_t>> removed) {
    MdpDataset d;
    d.states = 5;
    d.actions = 3;
    for (std::size_t s = 0; s < 5; ++s)
        for (std::size_t a = 0; a < 3; ++a) {
            if (removed && *removed == std::make_pair(s, a)) continue;
            const std::size_t n = (2 * s + a + 1) % 5;
            d.transitions.push_back({s, a, 0.3 * static_cast<double>(n) - 0.1 * static_cast<double>(a), n, false});
        }
    return d;
}

std::vector<std::size_t> vi_greedy(const MdpDataset& d, double gamma) {
    const std::size_t A = d.actions;
    std::vector<bool> seen(d.states * A, false);
    for (const auto& t : d.transitions) seen[t.state * A + t.action] = true;
    std::vector<double> q(d.states * A, 0.0);
    for (int it = 0; it < 2000; ++it) {
        auto next = q;
        for (const auto& t : d.transitions) {
            double v = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < A; ++a)
                if (seen[t.next_state * A + a]) v = std::max(v, q[t.next_state * A + a]);
            next[t.state * A + t.action] = t.reward + gamma * v;
        }
        q = next;
    }
    std::vector<std::size_t> g(d.states);
    for (std::size_t s = 0; s < d.states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < A; ++a)
            if (seen[s * A + a] && q[s * A + a] > best) best = q[s * A + a], g[s] = a;
    }
    return g;
}

Outcome bcq() {
    BcqConfig c;
    c.gamma = 0.9;
    c.alpha = 0.5;
    c.iterations = 2000;
    const auto full = ring(std::nullopt);
    const auto oracle = vi_greedy(full, c.gamma);
    const auto pol = bcq_train(full, c);
    bool match = true;
    for (std::size_t s = 0; s < 5; ++s) match = match && pol.act(s) == oracle[s];
    // remove the oracle's choice in state 0 from the behaviour data
    const std::size_t banned = oracle[0];
    const auto cut = ring(std::make_pair(std::size_t{0}, banned));
    const auto pol2 = bcq_train(cut, c);
    const auto oracle2 = vi_greedy(cut, c.gamma);
    bool never = pol2.act(0) != banned;
    bool match2 = true;
    for (std::size_t s = 0; s < 5; ++s) match2 = match2 && pol2.act(s) == oracle2[s];
    std::string g;
    for (std::size_t s = 0; s < 5; ++s) g += std::to_string(pol.act(s));
    return {match && never && match2, "greedy " + g + (match ? " = " : " != ") + "value iteration; removed action " +
                                          std::to_string(banned) + " in state 0 " +
                                          (never ? "not selected" : "SELECTED")};
}

// ---------- 9: utility discrimination

struct UtilityPair {
    double tv_syn = 0, tv_degenerate = 0;
    std::string syn_map, degenerate_map;
};

UtilityPair utility_pair(const fs::path& config, const ToyRun& run, const fs::path& dir) {
    UtilityPair u;
    u.tv_syn = run.utility.at("tv").get<double>();
    u.syn_map = read_file(run.dir / "utility" / "heatmap_syn.csv");

    const auto schema = DatasetSchema::load(run.dir / "schema_frozen.json");
    const auto syn = load_csv(run.dir / "synthetic.csv", schema);
    const auto first = syn.episodes().front();
    RecordTable degenerate(schema);
    const std::size_t copies = syn.patient_count();
    for (std::size_t p = 0; p < copies; ++p)
        for (std::size_t i = 0; i < first.length; ++i) {
            const std::size_t r = first.first_row + i;
            std::vector<std::variant<double, std::string>> row;
            for (const auto& v : schema.variables) {
                const auto col = syn.index_of(v.name);
                if (v.is_numeric())
                    row.emplace_back(syn.numbers(col)[r]);
                else
                    row.emplace_back(syn.labels(col)[r]);
            }
            degenerate.append("deg_" + std::to_string(p), static_cast<long>(i), row);
        }
    degenerate.normalize();
    fs::create_directories(dir);
    save_csv(degenerate, dir / "degenerate.csv");

    auto raw = json::parse(read_file(config));
    raw["name"] = "degenerate";
    raw["schema"] = fs::absolute(run.dir / "schema_frozen.json").string();
    raw["train_csv"] = fs::absolute(run.dir / "toy_train.csv").string();
    raw["synthetic_csv"] = fs::absolute(dir / "degenerate.csv").string();
    RunConfig::Overrides o;
    o.output_dir = dir;
    o.verbosity = 0;
    const auto cfg = RunConfig::from_json(raw, config.parent_path(), o);
    u.tv_degenerate = run_command("utility", cfg).at("tv").get<double>();
    u.degenerate_map = read_file(dir / "utility" / "heatmap_syn.csv");
    return u;
}

Outcome utility_discrimination(const UtilityPair& u) {
    return {u.tv_syn < u.tv_degenerate,
            "TV(real, synthetic)=" + fmt(u.tv_syn) + " < TV(real, degenerate)=" + fmt(u.tv_degenerate)};
}

// ---------- 10: determinism

bool same_file(const fs::path& a, const fs::path& b) {
    return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    fs::path workdir = fs::temp_directory_path() / "mixdiff_acceptance";
    fs::path config = fs::path(MIXDIFF_SOURCE_DIR) / "configs" / "toy.json";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "scratch directory for the toy runs");
    app.add_option("--config", config, "toy run configuration")->check(CLI::ExistingFile);
    bool keep = false;
    app.add_option("--only", only, "run a subset of criteria");
    app.add_flag("--keep", keep, "keep the workdir and reuse a finished first toy run");
    CLI11_PARSE(app, argc, argv);
    const fs::path src = MIXDIFF_SOURCE_DIR;
    if (!keep) fs::remove_all(workdir);
    fs::create_directories(workdir);

    auto want = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
    int failures = 0;
    auto report = [&](int id, const std::function<Outcome()>& fn) {
        if (!want(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::printf("criterion %2d: %s  %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    std::optional<ForwardDraws> draws;
    std::optional<ToyRun> toy;
    std::optional<UtilityPair> util;

    report(1, [&] { return schema_widths(src); });
    report(2, [&] {
        draws = forward_draws(2);
        return forward_marginals(*draws);
    });
    report(3, reconstruction);
    report(4, gradients);
    report(5, [&] {
        toy = toy_run(config, workdir / "toy_a");
        return toy_criteria(config, *toy);
    });
    report(6, metric_oracles);
    report(7, decomposition);
    report(8, bcq);
    report(9, [&] {
        if (!toy) toy = toy_run_or_load(config, workdir / "toy_a", keep);
        util = utility_pair(config, *toy, workdir / "degenerate_a");
        return utility_discrimination(*util);
    });
    report(10, [&] {
        std::string detail;
        bool ok = true;
        if (!draws) draws = forward_draws(2);
        const auto again = forward_draws(2);
        const bool c2 = again.sequential == draws->sequential && again.closed == draws->closed;
        ok = ok && c2;
        detail += std::string("2 ") + (c2 ? "identical" : "DIFFERENT");

        if (!toy) toy = toy_run_or_load(config, workdir / "toy_a", keep);
        const auto rerun = toy_run(config, workdir / "toy_b");
        bool c5 = true;
        for (const char* f : {"toy_train.csv", "loss_log.csv", "checkpoints/final.bin", "synthetic.csv",
                              "evaluation/cascade.csv", "evaluation/kl.csv", "evaluation/report.json"})
            c5 = c5 && same_file(toy->dir / f, rerun.dir / f);
        ok = ok && c5;
        detail += std::string(", 5 ") + (c5 ? "identical" : "DIFFERENT");

        if (!util) util = utility_pair(config, *toy, workdir / "degenerate_a");
        const auto u2 = utility_pair(config, rerun, workdir / "degenerate_b");
        const bool c9 = u2.tv_syn == util->tv_syn && u2.tv_degenerate == util->tv_degenerate &&
                        u2.syn_map == util->syn_map && u2.degenerate_map == util->degenerate_map;
        ok = ok && c9;
        detail += std::string(", 9 ") + (c9 ? "identical" : "DIFFERENT");
        return Outcome{ok, detail + " (bit-for-bit)"};
    });

    std::printf("%s: %d criterion failure(s)\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
