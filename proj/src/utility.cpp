#include "mixdiff/utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mixdiff/error.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

namespace {

void standardise(const Eigen::MatrixXd& m, Eigen::RowVectorXd& mean, Eigen::RowVectorXd& scale) {
    const double n = static_cast<double>(m.rows());
    mean = m.colwise().mean();
    scale.resize(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double var = (m.col(j).array() - mean(j)).square().sum() / std::max(1.0, n - 1.0);
        scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
}

}  // namespace

Eigen::MatrixXd PlsModel::transform(const Eigen::MatrixXd& x) const {
    if (x.cols() != x_mean.size()) throw ShapeError("PLS input has the wrong number of columns");
    const Eigen::MatrixXd xs = (x.rowwise() - x_mean).array().rowwise() / x_scale.array();
    return xs * rotations;
}

PlsModel fit_pls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t k) {
    if (x.rows() != y.rows()) throw ShapeError("PLS blocks need the same number of rows");
    if (x.rows() < 2) throw ParameterError("PLS needs at least two rows");
    if (k == 0 || k > static_cast<std::size_t>(x.cols()))
        throw ParameterError("PLS component count must be in 1.." + std::to_string(x.cols()));
    PlsModel m;
    Eigen::RowVectorXd y_mean, y_scale;
    standardise(x, m.x_mean, m.x_scale);
    standardise(y, y_mean, y_scale);
    Eigen::MatrixXd X = (x.rowwise() - m.x_mean).array().rowwise() / m.x_scale.array();
    Eigen::MatrixXd Y = (y.rowwise() - y_mean).array().rowwise() / y_scale.array();

    std::vector<Eigen::VectorXd> ws, ps;
    double first = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const Eigen::MatrixXd cross = X.transpose() * Y;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeThinU);
        const double s = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
        if (c == 0) first = s;
        if (!(s > 1e-10 * std::max(first, 1e-300))) break;
        Eigen::VectorXd w = svd.matrixU().col(0);
        Eigen::Index arg;
        w.cwiseAbs().maxCoeff(&arg);
        if (w(arg) < 0.0) w = -w;
        const Eigen::VectorXd t = X * w;
        const double tt = t.squaredNorm();
        if (!(tt > 1e-12)) break;
        const Eigen::VectorXd p = X.transpose() * t / tt;
        const Eigen::VectorXd q = Y.transpose() * t / tt;
        X -= t * p.transpose();
        Y -= t * q.transpose();
        ws.push_back(w);
        ps.push_back(p);
    }
    if (ws.empty()) throw ParameterError("PLS found no covariance between the blocks");
    m.components = ws.size();
    m.reduced = ws.size() < k;
    m.weights.resize(x.cols(), static_cast<Eigen::Index>(ws.size()));
    Eigen::MatrixXd P(x.cols(), static_cast<Eigen::Index>(ws.size()));
    for (std::size_t c = 0; c < ws.size(); ++c) {
        m.weights.col(static_cast<Eigen::Index>(c)) = ws[c];
        P.col(static_cast<Eigen::Index>(c)) = ps[c];
    }
    m.rotations = m.weights * (P.transpose() * m.weights).inverse();
    return m;
}

std::vector<std::size_t> StateModel::assign(const Eigen::MatrixXd& scores) const {
    const Eigen::MatrixXd z = (scores.rowwise() - score_mean).array().rowwise() / score_scale.array();
    std::vector<std::size_t> out(static_cast<std::size_t>(z.rows()));
    std::vector<double> row(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index j = 0; j < z.cols(); ++j) row[static_cast<std::size_t>(j)] = z(i, j);
        out[static_cast<std::size_t>(i)] = clusters.nearest(row.data());
    }
    return out;
}

StateModel build_states(const Eigen::MatrixXd& scores, std::size_t k, std::uint64_t seed) {
    if (static_cast<std::size_t>(scores.rows()) < k)
        throw ParameterError("need at least " + std::to_string(k) + " rows to build " + std::to_string(k) + " states");
    StateModel m;
    standardise(scores, m.score_mean, m.score_scale);
    const Eigen::MatrixXd z = (scores.rowwise() - m.score_mean).array().rowwise() / m.score_scale.array();
    const std::size_t n = static_cast<std::size_t>(z.rows()), d = static_cast<std::size_t>(z.cols());
    std::vector<double> pts(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            pts[i * d + j] = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    Rng rng(seed);
    m.clusters = kmeans(pts, n, d, k, rng);
    return m;
}

void MdpDataset::validate() const {
    if (states == 0 || actions == 0) throw ParameterError("MDP needs at least one state and one action");
    for (const auto& t : transitions)
        if (t.state >= states || t.next_state >= states || t.action >= actions)
            throw ParameterError("transition ids out of range");
}

bool BcqPolicy::admissible(std::size_t s, std::size_t a) const {
    std::size_t top = 0;
    for (std::size_t b = 0; b < actions; ++b) top = std::max(top, counts[s * actions + b]);
    if (top == 0) return false;
    return static_cast<double>(counts[s * actions + a]) / static_cast<double>(top) >= tau;
}

nlohmann::json BcqPolicy::to_json() const {
    nlohmann::json g = nlohmann::json::array();
    for (const auto& a : greedy) g.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
    return {{"states", states}, {"actions", actions}, {"tau", tau}, {"fallback_action", fallback},
            {"greedy", g},      {"q", q},             {"counts", counts}};
}

BcqPolicy bcq_train(const MdpDataset& data, const BcqConfig& config) {
    data.validate();
    if (data.transitions.empty()) throw ParameterError("BCQ needs at least one transition");
    const std::size_t S = data.states, A = data.actions;
    BcqPolicy pol;
    pol.states = S;
    pol.actions = A;
    pol.tau = config.tau;
    pol.q.assign(S * A, 0.0);
    pol.counts.assign(S * A, 0);
    for (const auto& t : data.transitions) ++pol.counts[t.state * A + t.action];

    std::vector<std::size_t> total(A, 0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) total[a] += pol.counts[s * A + a];
    pol.fallback = static_cast<std::size_t>(std::max_element(total.begin(), total.end()) - total.begin());

    // admissible action sets are fixed by the data
    std::vector<std::vector<std::size_t>> allowed(S);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            if (pol.admissible(s, a)) allowed[s].push_back(a);

    auto best_value = [&](std::size_t s) {
        double v = -std::numeric_limits<double>::infinity();
        for (auto a : allowed[s]) v = std::max(v, pol.q[s * A + a]);
        return allowed[s].empty() ? 0.0 : v;
    };
    for (std::size_t it = 0; it < config.iterations; ++it) {
        for (const auto& t : data.transitions) {
            const double target = t.reward + (t.terminal ? 0.0 : config.gamma * best_value(t.next_state));
            double& q = pol.q[t.state * A + t.action];
            q += config.alpha * (target - q);
        }
    }
    pol.greedy.assign(S, std::nullopt);
    for (std::size_t s = 0; s < S; ++s) {
        if (allowed[s].empty()) continue;
        std::size_t best = allowed[s].front();
        for (auto a : allowed[s])
            if (pol.q[s * A + a] > pol.q[s * A + best]) best = a;
        pol.greedy[s] = best;
    }
    return pol;
}

std::string Heatmap::to_csv() const {
    std::ostringstream os;
    os << '"' << row_name << " \\ " << col_name << '"';
    for (const auto& c : col_labels) os << ",\"" << c << '"';
    os << '\n';
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        os << '"' << row_labels[r] << '"';
        for (std::size_t c = 0; c < col_labels.size(); ++c) os << ',' << format_double(at(r, c));
        os << '\n';
    }
    return os.str();
}

std::size_t ActionSpace::size() const {
    std::size_t n = 1;
    for (const auto& l : levels) n *= l.size();
    return n;
}

std::size_t ActionSpace::index(const std::vector<std::size_t>& idx) const {
    std::size_t a = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) a = a * levels[i].size() + idx.at(i);
    return a;
}

std::vector<std::size_t> ActionSpace::decompose(std::size_t action) const {
    std::vector<std::size_t> idx(levels.size());
    for (std::size_t i = levels.size(); i-- > 0;) {
        idx[i] = action % levels[i].size();
        action /= levels[i].size();
    }
    return idx;
}

ActionSpace ActionSpace::from_schema(const DatasetSchema& schema, const std::vector<std::string>& action_vars) {
    if (action_vars.empty()) throw ParameterError("at least one action variable is required");
    ActionSpace s;
    for (const auto& name : action_vars) {
        const auto idx = schema.find(name);
        if (!idx) throw SchemaError("unknown action variable '" + name + "'");
        const auto& spec = schema.variables[*idx];
        if (spec.is_numeric()) throw SchemaError("action variable '" + name + "' must be binary or categorical");
        s.variables.push_back(name);
        s.levels.push_back(spec.levels);
    }
    return s;
}

Heatmap action_heatmap(const BcqPolicy& policy, const std::vector<double>& visits, const ActionSpace& space) {
    if (visits.size() != policy.states) throw ShapeError("visit weights must cover every state");
    if (space.size() != policy.actions) throw ShapeError("action space does not match the policy");
    Heatmap h;
    h.row_name = space.variables.front();
    h.row_labels = space.levels.front();
    std::size_t cols = 1;
    for (std::size_t i = 1; i < space.levels.size(); ++i) cols *= space.levels[i].size();
    for (std::size_t c = 0; c < cols; ++c) {
        std::string label;
        std::size_t rem = c;
        std::vector<std::string> parts(space.levels.size() - 1);
        for (std::size_t i = space.levels.size(); i-- > 1;) {
            parts[i - 1] = space.levels[i][rem % space.levels[i].size()];
            rem /= space.levels[i].size();
        }
        for (std::size_t i = 0; i < parts.size(); ++i) label += (i ? " / " : "") + parts[i];
        h.col_labels.push_back(parts.empty() ? "all" : label);
    }
    for (std::size_t i = 1; i < space.variables.size(); ++i)
        h.col_name += (i > 1 ? " / " : "") + space.variables[i];
    if (h.col_name.empty()) h.col_name = "all";
    h.percent.assign(h.row_labels.size() * cols, 0.0);
    double total = 0.0;
    for (std::size_t s = 0; s < policy.states; ++s) {
        if (!(visits[s] > 0.0)) continue;
        h.percent[policy.act(s)] += visits[s];  // action id is row * cols + col
        total += visits[s];
    }
    if (!(total > 0.0)) throw ParameterError("heatmap needs positive visit weight");
    for (auto& p : h.percent) p = 100.0 * p / total;
    return h;
}

double compare_policies(const Heatmap& a, const Heatmap& b) {
    if (a.row_labels != b.row_labels || a.col_labels != b.col_labels)
        throw ShapeError("heatmaps cover different action spaces");
    double tv = 0.0;
    for (std::size_t i = 0; i < a.percent.size(); ++i) tv += std::abs(a.percent[i] - b.percent[i]);
    return std::clamp(tv / 200.0, 0.0, 1.0);
}

RewardFn band_reward(std::string variable, double lo, double hi) {
    return [variable = std::move(variable), lo, hi](const RecordTable& t, std::size_t row,
                                                     std::optional<std::size_t> next) {
        const auto& col = t.numbers(t.index_of(variable));
        const double v = col.at(next.value_or(row));
        return v >= lo && v <= hi ? 1.0 : 0.0;
    };
}

Eigen::MatrixXd UtilityPipeline::observations(const RecordTable& table) const {
    check_table_matches(table, schema);
    std::size_t width = 0;
    for (auto v : observation_vars) width += schema.variables[v].width();
    Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(table.rows()), static_cast<Eigen::Index>(width));
    Eigen::Index off = 0;
    for (auto v : observation_vars) {
        const auto& spec = schema.variables[v];
        const std::size_t col = table.index_of(spec.name);
        for (std::size_t r = 0; r < table.rows(); ++r) {
            const auto ri = static_cast<Eigen::Index>(r);
            if (spec.is_numeric()) {
                obs(ri, off) = (table.numbers(col)[r] - *spec.min) / (*spec.max - *spec.min);
            } else {
                const auto li = spec.level_index(table.labels(col)[r]);
                if (!li) throw SchemaError("unknown level '" + table.labels(col)[r] + "' for " + spec.name);
                obs(ri, off + static_cast<Eigen::Index>(*li)) = 1.0;
            }
        }
        off += static_cast<Eigen::Index>(spec.width());
    }
    return obs;
}

std::vector<std::size_t> UtilityPipeline::actions(const RecordTable& table) const {
    std::vector<std::size_t> out(table.rows());
    std::vector<std::size_t> idx(space.variables.size());
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t i = 0; i < space.variables.size(); ++i) {
            const auto& label = table.labels(table.index_of(space.variables[i]))[r];
            const auto it = std::find(space.levels[i].begin(), space.levels[i].end(), label);
            if (it == space.levels[i].end()) throw SchemaError("unknown action level '" + label + "'");
            idx[i] = static_cast<std::size_t>(it - space.levels[i].begin());
        }
        out[r] = space.index(idx);
    }
    return out;
}

std::vector<std::size_t> UtilityPipeline::state_ids(const RecordTable& table) const {
    return states.assign(pls.transform(observations(table)));
}

MdpDataset UtilityPipeline::mdp(const RecordTable& table, const RewardFn& reward) const {
    const auto s = state_ids(table);
    const auto a = actions(table);
    MdpDataset d;
    d.states = states.clusters.k;
    d.actions = space.size();
    for (const auto& ep : table.episodes()) {
        for (std::size_t i = 0; i < ep.length; ++i) {
            const std::size_t r = ep.first_row + i;
            const bool last = i + 1 == ep.length;
            Transition t;
            t.state = s[r];
            t.action = a[r];
            t.terminal = last;
            t.next_state = last ? s[r] : s[r + 1];
            t.reward = reward(table, r, last ? std::nullopt : std::optional<std::size_t>(r + 1));
            d.transitions.push_back(t);
        }
    }
    return d;
}

std::vector<double> UtilityPipeline::visits(const RecordTable& table) const {
    std::vector<double> v(states.clusters.k, 0.0);
    for (auto s : state_ids(table)) v[s] += 1.0;
    return v;
}

UtilityPipeline fit_utility(const RecordTable& real, const DatasetSchema& schema, const UtilityConfig& config) {
    check_table_matches(real, schema);
    UtilityPipeline p;
    p.schema = schema;
    bool missing = false;
    for (const auto& v : schema.variables) missing |= v.is_numeric() && !v.has_range();
    if (missing) {
        const auto fitted = fit_ranges(schema, real);
        for (std::size_t i = 0; i < schema.variables.size(); ++i)
            if (schema.variables[i].is_numeric() && !schema.variables[i].has_range())
                p.schema.variables[i] = fitted.variables[i];
    }
    for (const auto& v : p.schema.variables)
        if (v.is_numeric() && !(*v.min < *v.max))
            throw DegenerateRangeError("variable '" + v.name + "' has a degenerate range");
    p.space = ActionSpace::from_schema(p.schema, config.action_vars);
    for (std::size_t v = 0; v < p.schema.variables.size(); ++v)
        if (std::find(config.action_vars.begin(), config.action_vars.end(), p.schema.variables[v].name) ==
            config.action_vars.end())
            p.observation_vars.push_back(v);
    if (p.observation_vars.empty()) throw ParameterError("no observation variables remain besides the actions");

    const Eigen::MatrixXd obs = p.observations(real);
    const auto acts = p.actions(real);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(obs.rows(), static_cast<Eigen::Index>(p.space.size()));
    for (std::size_t r = 0; r < acts.size(); ++r)
        onehot(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(acts[r])) = 1.0;
    const std::size_t k = std::min<std::size_t>(config.components, static_cast<std::size_t>(obs.cols()));
    p.pls = fit_pls(obs, onehot, k);
    p.states = build_states(p.pls.transform(obs), config.states, config.seed);
    return p;
}

UtilityResult run_utility(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const UtilityConfig& config, const RewardFn& reward) {
    const auto pipe = fit_utility(real, schema, config);
    UtilityResult res;
    res.pls_reduced = pipe.pls.reduced;
    res.real_policy = bcq_train(pipe.mdp(real, reward), config.bcq);
    res.syn_policy = bcq_train(pipe.mdp(syn, reward), config.bcq);
    const auto weights = pipe.visits(real);
    res.real_map = action_heatmap(res.real_policy, weights, pipe.space);
    res.syn_map = action_heatmap(res.syn_policy, weights, pipe.space);
    res.tv = compare_policies(res.real_map, res.syn_map);
    return res;
}

}  // namespace mixdiff
