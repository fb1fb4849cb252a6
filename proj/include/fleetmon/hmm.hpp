// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fleetmon::hmm {

// Discrete-emission HMM. A and B are row-stochastic, row-major.
struct HmmModel {
    int n_states = 0;
    int n_symbols = 0;
    std::vector<double> pi;  // N
    std::vector<double> a;   // N x N
    std::vector<double> b;   // N x M

    struct TrainMeta {
        std::uint64_t seed = 0;
        int iterations = 0;
        double final_ll = 0.0;
    } meta;

    double& A(int i, int j) { return a[static_cast<std::size_t>(i) * n_states + j]; }
    double A(int i, int j) const { return a[static_cast<std::size_t>(i) * n_states + j]; }
    double& B(int i, int k) { return b[static_cast<std::size_t>(i) * n_symbols + k]; }
    double B(int i, int k) const { return b[static_cast<std::size_t>(i) * n_symbols + k]; }

    std::string to_json() const;
    static HmmModel from_json(const std::string& text);
};

struct TrainConfig {
    int n_states = 5;
    int max_iters = 200;
    double tol = 1e-5;  // relative log-likelihood improvement
    int n_restarts = 3;
    std::uint64_t seed = 0;
    double epsilon = 1e-6;  // post-training probability floor
    int n_symbols = 0;      // alphabet size; 0 derives it from the corpus
};

// Incremental scaled-forward recursion. One instance scores one sequence;
// state is O(N) regardless of sequence length. step() folds in the next
// symbol and returns the cumulative log-likelihood.
class ForwardScorer {
public:
    explicit ForwardScorer(const HmmModel& model);
    double step(int symbol);
    double log_likelihood() const { return log_prob_; }
    int length() const { return length_; }
    void reset();

private:
    const HmmModel* model_;
    std::vector<double> alpha_;
    std::vector<double> next_;
    double log_prob_ = 0.0;
    int length_ = 0;
};

double log_likelihood(const HmmModel& model, std::span<const int> symbols);
// One forward pass; element i is the log-likelihood of the first i+1 symbols.
std::vector<double> prefix_log_likelihoods(const HmmModel& model, std::span<const int> symbols);

// Baum-Welch over a sequence corpus, best of n_restarts by final train
// log-likelihood. ll_trace, when given, receives the per-iteration train
// log-likelihoods of the selected restart (pre-flooring).
HmmModel train_hmm(const std::vector<std::vector<int>>& sequences, const TrainConfig& config,
                   std::vector<double>* ll_trace = nullptr);

struct SelectionRow {
    int n_states = 0;
    double mean_heldout_ll_per_event = 0.0;
};

struct SelectionResult {
    HmmModel model;  // retrained on the full corpus with the winning state count
    std::vector<SelectionRow> table;
    int selected_states = 0;
};

// K-fold cross-validated choice of the hidden-state count; ties go to the
// smaller candidate.
SelectionResult select_model(const std::vector<std::vector<int>>& sequences,
                             const std::vector<int>& candidate_states, int k_folds,
                             TrainConfig config);

}  // namespace fleetmon::hmm
