#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mixdiff/kmeans.hpp"
#include "mixdiff/schema.hpp"

namespace mixdiff {

// PLS cross decomposition (NIPALS with SVD weight steps) of a standardised
// observation block against a standardised target block.
struct PlsModel {
    std::size_t components = 0;
    bool reduced = false;  // fewer components than requested (rank deficiency)
    Eigen::RowVectorXd x_mean, x_scale;
    Eigen::MatrixXd weights;    // d x k, orthonormal columns
    Eigen::MatrixXd rotations;  // d x k, maps standardised X to scores

    Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

PlsModel fit_pls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t k = 5);

struct StateModel {
    Eigen::RowVectorXd score_mean, score_scale;
    KMeansResult clusters;

    std::vector<std::size_t> assign(const Eigen::MatrixXd& scores) const;
};

// Standardises scores, then k-means with k states.
StateModel build_states(const Eigen::MatrixXd& scores, std::size_t k, std::uint64_t seed);

struct Transition {
    std::size_t state = 0;
    std::size_t action = 0;
    double reward = 0.0;
    std::size_t next_state = 0;
    bool terminal = false;
};

struct MdpDataset {
    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<Transition> transitions;

    void validate() const;
};

struct BcqConfig {
    double gamma = 0.99;
    double alpha = 0.01;
    std::size_t iterations = 100;
    double tau = 0.3;
};

struct BcqPolicy {
    std::size_t states = 0, actions = 0;
    std::vector<double> q;             // states x actions
    std::vector<std::size_t> counts;   // behaviour counts, states x actions
    std::vector<std::optional<std::size_t>> greedy;  // empty for unseen states
    std::size_t fallback = 0;          // most frequent behaviour action overall
    double tau = 0.3;

    bool admissible(std::size_t s, std::size_t a) const;
    std::size_t act(std::size_t s) const { return greedy.at(s).value_or(fallback); }
    nlohmann::json to_json() const;
};

BcqPolicy bcq_train(const MdpDataset& data, const BcqConfig& config = {});

struct Heatmap {
    std::vector<std::string> row_labels, col_labels;
    std::string row_name, col_name;
    std::vector<double> percent;  // rows x cols, sums to 100

    double at(std::size_t r, std::size_t c) const { return percent.at(r * col_labels.size() + c); }
    std::string to_csv() const;
};

// Action layout: mixed-radix index over the levels of the action variables,
// first variable most significant.
struct ActionSpace {
    std::vector<std::string> variables;
    std::vector<std::vector<std::string>> levels;

    std::size_t size() const;
    std::size_t index(const std::vector<std::size_t>& level_indices) const;
    std::vector<std::size_t> decompose(std::size_t action) const;

    static ActionSpace from_schema(const DatasetSchema& schema, const std::vector<std::string>& action_vars);
};

// Share of greedy actions over states, weighted by `visits`, as a table
// over the first action variable (rows) and the remaining ones (columns).
Heatmap action_heatmap(const BcqPolicy& policy, const std::vector<double>& visits, const ActionSpace& space);

// Total-variation distance between two heatmaps over the same space, in [0, 1].
double compare_policies(const Heatmap& a, const Heatmap& b);

// reward(table, row, next_row): next_row is empty at an episode's last step.
using RewardFn = std::function<double(const RecordTable&, std::size_t, std::optional<std::size_t>)>;

// +1 when the variable's value at the next step (or the current one at the
// last step) lies inside [lo, hi].
RewardFn band_reward(std::string variable, double lo, double hi);

struct UtilityConfig {
    std::vector<std::string> action_vars;
    std::size_t components = 5;
    std::size_t states = 100;
    BcqConfig bcq;
    std::uint64_t seed = 0;
};

struct UtilityPipeline {
    DatasetSchema schema;  // numeric ranges filled from the real table where missing
    ActionSpace space;
    PlsModel pls;
    StateModel states;
    std::vector<std::size_t> observation_vars;  // schema indices of non-action variables

    Eigen::MatrixXd observations(const RecordTable& table) const;
    std::vector<std::size_t> actions(const RecordTable& table) const;
    std::vector<std::size_t> state_ids(const RecordTable& table) const;
    MdpDataset mdp(const RecordTable& table, const RewardFn& reward) const;
    // Visit count of every state over all rows of `table`.
    std::vector<double> visits(const RecordTable& table) const;
};

// Fits the observation compression and state clusters on the real table.
UtilityPipeline fit_utility(const RecordTable& real, const DatasetSchema& schema, const UtilityConfig& config);

struct UtilityResult {
    BcqPolicy real_policy, syn_policy;
    Heatmap real_map, syn_map;
    double tv = 0.0;
    bool pls_reduced = false;
};

UtilityResult run_utility(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const UtilityConfig& config, const RewardFn& reward);

}  // namespace mixdiff
