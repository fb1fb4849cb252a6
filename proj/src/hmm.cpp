// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "fleetmon/rng.hpp"

namespace fleetmon::hmm {

namespace {

void check_symbol(const HmmModel& m, int symbol) {
    if (symbol < 0 || symbol >= m.n_symbols)
        throw std::out_of_range("symbol " + std::to_string(symbol) + " out of range [0," +
                                std::to_string(m.n_symbols) + ")");
}

// Clamp row entries to >= floor and rescale the remainder so the row still
// sums to one. Entries pinned at the floor stay exactly at the floor.
void floor_row(std::span<double> row, double floor) {
    const auto n = row.size();
    if (floor <= 0.0) return;
    if (floor * static_cast<double>(n) >= 1.0) {
        std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(n));
        return;
    }
    std::vector<bool> pinned(n, false);
    for (;;) {
        double pinned_mass = 0.0;
        double free_mass = 0.0;
        std::size_t n_pinned = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (pinned[i] || row[i] <= floor) {
                pinned[i] = true;
                ++n_pinned;
                pinned_mass += floor;
            } else {
                free_mass += row[i];
            }
        }
        if (n_pinned == n) {
            std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(n));
            return;
        }
        const double scale = (1.0 - pinned_mass) / free_mass;
        bool new_pin = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (pinned[i]) {
                row[i] = floor;
            } else {
                row[i] *= scale;
                if (row[i] < floor) new_pin = true;
            }
        }
        if (!new_pin) return;
    }
}

void floor_model(HmmModel& m, double eps) {
    floor_row(std::span<double>(m.pi), eps);
    for (int i = 0; i < m.n_states; ++i) {
        floor_row(std::span<double>(m.a.data() + static_cast<std::size_t>(i) * m.n_states,
                                    static_cast<std::size_t>(m.n_states)),
                  eps);
        floor_row(std::span<double>(m.b.data() + static_cast<std::size_t>(i) * m.n_symbols,
                                    static_cast<std::size_t>(m.n_symbols)),
                  eps);
    }
}

HmmModel random_model(int n_states, int n_symbols, Rng& rng) {
    HmmModel m;
    m.n_states = n_states;
    m.n_symbols = n_symbols;
    m.pi.assign(static_cast<std::size_t>(n_states), 1.0 / n_states);
    auto dirichlet_row = [&rng](std::span<double> row) {
        double sum = 0.0;
        for (double& v : row) {
            v = rng.exponential(1.0);
            sum += v;
        }
        for (double& v : row) v = (sum > 0.0) ? v / sum : 1.0 / static_cast<double>(row.size());
    };
    m.a.resize(static_cast<std::size_t>(n_states) * n_states);
    m.b.resize(static_cast<std::size_t>(n_states) * n_symbols);
    for (int i = 0; i < n_states; ++i) {
        dirichlet_row(std::span<double>(m.a.data() + static_cast<std::size_t>(i) * n_states,
                                        static_cast<std::size_t>(n_states)));
        dirichlet_row(std::span<double>(m.b.data() + static_cast<std::size_t>(i) * n_symbols,
                                        static_cast<std::size_t>(n_symbols)));
    }
    return m;
}

struct EmAccumulators {
    std::vector<double> pi;        // N
    std::vector<double> trans;     // N x N
    std::vector<double> trans_den; // N
    std::vector<double> emit;      // N x M
    std::vector<double> emit_den;  // N
    std::size_t n_sequences = 0;

    EmAccumulators(int n, int m)
        : pi(static_cast<std::size_t>(n), 0.0),
          trans(static_cast<std::size_t>(n) * n, 0.0),
          trans_den(static_cast<std::size_t>(n), 0.0),
          emit(static_cast<std::size_t>(n) * m, 0.0),
          emit_den(static_cast<std::size_t>(n), 0.0) {}
};

// Scaled forward-backward over one sequence; returns its log-likelihood
// under the current parameters and adds expected counts to acc.
double accumulate_sequence(const HmmModel& m, const std::vector<int>& seq, EmAccumulators& acc,
                           std::vector<double>& alpha_buf, std::vector<double>& scale_buf) {
    const int n = m.n_states;
    const auto T = seq.size();
    if (T == 0) return 0.0;
    for (int s : seq) check_symbol(m, s);

    alpha_buf.resize(T * static_cast<std::size_t>(n));
    scale_buf.resize(T);
    double ll = 0.0;

    // forward
    {
        double* a0 = alpha_buf.data();
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            a0[j] = m.pi[static_cast<std::size_t>(j)] * m.B(j, seq[0]);
            sum += a0[j];
        }
        if (!(sum > 0.0)) throw std::runtime_error("zero-probability prefix in training");
        scale_buf[0] = sum;
        for (int j = 0; j < n; ++j) a0[j] /= sum;
        ll += std::log(sum);
    }
    for (std::size_t t = 1; t < T; ++t) {
        const double* prev = alpha_buf.data() + (t - 1) * static_cast<std::size_t>(n);
        double* cur = alpha_buf.data() + t * static_cast<std::size_t>(n);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            double acc_in = 0.0;
            for (int i = 0; i < n; ++i) acc_in += prev[i] * m.A(i, j);
            cur[j] = acc_in * m.B(j, seq[t]);
            sum += cur[j];
        }
        if (!(sum > 0.0)) throw std::runtime_error("zero-probability prefix in training");
        scale_buf[t] = sum;
        for (int j = 0; j < n; ++j) cur[j] /= sum;
        ll += std::log(sum);
    }

    // backward, accumulating gamma and xi on the fly
    std::vector<double> beta(static_cast<std::size_t>(n), 1.0);
    std::vector<double> tmp(static_cast<std::size_t>(n));
    std::vector<double> beta_next(static_cast<std::size_t>(n));
    for (std::size_t t = T; t-- > 0;) {
        const double* al = alpha_buf.data() + t * static_cast<std::size_t>(n);
        for (int i = 0; i < n; ++i) {
            const double g = al[i] * beta[i];
            acc.emit[static_cast<std::size_t>(i) * m.n_symbols + seq[t]] += g;
            acc.emit_den[static_cast<std::size_t>(i)] += g;
            if (t + 1 < T) acc.trans_den[static_cast<std::size_t>(i)] += g;
            if (t == 0) acc.pi[static_cast<std::size_t>(i)] += g;
        }
        if (t == 0) break;
        // xi over the transition t-1 -> t, then the beta recursion
        const double inv_s = 1.0 / scale_buf[t];
        for (int j = 0; j < n; ++j) tmp[j] = m.B(j, seq[t]) * beta[j] * inv_s;
        const double* al_prev = alpha_buf.data() + (t - 1) * static_cast<std::size_t>(n);
        for (int i = 0; i < n; ++i) {
            double bsum = 0.0;
            const double* arow = m.a.data() + static_cast<std::size_t>(i) * n;
            double* trow = acc.trans.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double w = arow[j] * tmp[j];
                trow[j] += al_prev[i] * w;
                bsum += w;
            }
            beta_next[i] = bsum;
        }
        std::swap(beta, beta_next);
    }
    ++acc.n_sequences;
    return ll;
}

void m_step(HmmModel& m, const EmAccumulators& acc) {
    const int n = m.n_states;
    const int msym = m.n_symbols;
    for (int i = 0; i < n; ++i) {
        m.pi[static_cast<std::size_t>(i)] =
            acc.pi[static_cast<std::size_t>(i)] / static_cast<double>(acc.n_sequences);
        if (acc.trans_den[static_cast<std::size_t>(i)] > 0.0) {
            const double inv = 1.0 / acc.trans_den[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j)
                m.A(i, j) = acc.trans[static_cast<std::size_t>(i) * n + j] * inv;
        }
        if (acc.emit_den[static_cast<std::size_t>(i)] > 0.0) {
            const double inv = 1.0 / acc.emit_den[static_cast<std::size_t>(i)];
            for (int k = 0; k < msym; ++k)
                m.B(i, k) = acc.emit[static_cast<std::size_t>(i) * msym + k] * inv;
        }
    }
}

struct RestartOutcome {
    HmmModel model;
    std::vector<double> ll_trace;
};

RestartOutcome run_restart(const std::vector<std::vector<int>>& sequences, int n_symbols,
                           const TrainConfig& cfg, std::uint64_t restart_seed) {
    Rng rng(restart_seed);
    RestartOutcome out;
    out.model = random_model(cfg.n_states, n_symbols, rng);
    HmmModel& m = out.model;

    std::vector<double> alpha_buf;
    std::vector<double> scale_buf;
    double prev_ll = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        EmAccumulators acc(m.n_states, m.n_symbols);
        double ll = 0.0;
        for (const auto& seq : sequences) ll += accumulate_sequence(m, seq, acc, alpha_buf, scale_buf);
        out.ll_trace.push_back(ll);
        iterations = iter + 1;
        if (iter > 0) {
            const double rel = (ll - prev_ll) / std::max(std::abs(prev_ll), 1e-300);
            if (rel < cfg.tol) break;
        }
        prev_ll = ll;
        if (acc.n_sequences == 0) break;
        m_step(m, acc);
    }
    m.meta.seed = restart_seed;
    m.meta.iterations = iterations;
    m.meta.final_ll = out.ll_trace.empty() ? 0.0 : out.ll_trace.back();
    return out;
}

}  // namespace

ForwardScorer::ForwardScorer(const HmmModel& model)
    : model_(&model),
      alpha_(static_cast<std::size_t>(model.n_states), 0.0),
      next_(static_cast<std::size_t>(model.n_states), 0.0) {}

void ForwardScorer::reset() {
    std::fill(alpha_.begin(), alpha_.end(), 0.0);
    log_prob_ = 0.0;
    length_ = 0;
}

double ForwardScorer::step(int symbol) {
    check_symbol(*model_, symbol);
    const int n = model_->n_states;
    double sum = 0.0;
    if (length_ == 0) {
        for (int j = 0; j < n; ++j) {
            next_[static_cast<std::size_t>(j)] =
                model_->pi[static_cast<std::size_t>(j)] * model_->B(j, symbol);
            sum += next_[static_cast<std::size_t>(j)];
        }
    } else {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                acc += alpha_[static_cast<std::size_t>(i)] * model_->A(i, j);
            next_[static_cast<std::size_t>(j)] = acc * model_->B(j, symbol);
            sum += next_[static_cast<std::size_t>(j)];
        }
    }
    if (sum > 0.0) {
        for (int j = 0; j < n; ++j) alpha_[static_cast<std::size_t>(j)] = next_[static_cast<std::size_t>(j)] / sum;
        log_prob_ += std::log(sum);
    } else {
        // only reachable with un-floored degenerate models
        std::fill(alpha_.begin(), alpha_.end(), 1.0 / n);
        log_prob_ = -std::numeric_limits<double>::infinity();
    }
    ++length_;
    return log_prob_;
}

double log_likelihood(const HmmModel& model, std::span<const int> symbols) {
    ForwardScorer scorer(model);
    double ll = 0.0;
    for (int s : symbols) ll = scorer.step(s);
    return symbols.empty() ? 0.0 : ll;
}

std::vector<double> prefix_log_likelihoods(const HmmModel& model, std::span<const int> symbols) {
    ForwardScorer scorer(model);
    std::vector<double> out;
    out.reserve(symbols.size());
    for (int s : symbols) out.push_back(scorer.step(s));
    return out;
}

HmmModel train_hmm(const std::vector<std::vector<int>>& sequences, const TrainConfig& config,
                   std::vector<double>* ll_trace) {
    if (config.n_states < 1) throw std::invalid_argument("n_states must be >= 1");
    if (config.n_restarts < 1) throw std::invalid_argument("n_restarts must be >= 1");
    if (!(config.tol > 0.0)) throw std::invalid_argument("tol must be > 0");
    if (!(config.epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    std::size_t total = 0;
    int max_symbol = -1;
    for (const auto& seq : sequences) {
        total += seq.size();
        for (int s : seq) {
            if (s < 0) throw std::out_of_range("negative symbol");
            max_symbol = std::max(max_symbol, s);
        }
    }
    if (total == 0) throw std::invalid_argument("empty training corpus");
    const int n_symbols = config.n_symbols > 0 ? config.n_symbols : max_symbol + 1;
    if (max_symbol >= n_symbols) throw std::out_of_range("corpus symbol exceeds alphabet size");

    RestartOutcome best;
    bool have_best = false;
    for (int r = 0; r < config.n_restarts; ++r) {
        RestartOutcome cand = run_restart(sequences, n_symbols, config, mix_seed(config.seed, r));
        if (!have_best || cand.model.meta.final_ll > best.model.meta.final_ll) {
            best = std::move(cand);
            have_best = true;
        }
    }
    floor_model(best.model, config.epsilon);
    if (ll_trace) *ll_trace = best.ll_trace;
    return best.model;
}

SelectionResult select_model(const std::vector<std::vector<int>>& sequences,
                             const std::vector<int>& candidate_states, int k_folds,
                             TrainConfig config) {
    if (k_folds < 2) throw std::invalid_argument("k_folds must be >= 2");
    if (sequences.size() < static_cast<std::size_t>(k_folds))
        throw std::invalid_argument("fewer sequences than folds");
    if (candidate_states.empty()) throw std::invalid_argument("no candidate state counts");

    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(config.seed, 0xF01D5);
    shuffle_rng.shuffle(order);

    SelectionResult result;
    int best_states = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int n_states : candidate_states) {
        double fold_sum = 0.0;
        for (int fold = 0; fold < k_folds; ++fold) {
            std::vector<std::vector<int>> train;
            std::vector<const std::vector<int>*> heldout;
            for (std::size_t pos = 0; pos < order.size(); ++pos) {
                if (static_cast<int>(pos % static_cast<std::size_t>(k_folds)) == fold)
                    heldout.push_back(&sequences[order[pos]]);
                else
                    train.push_back(sequences[order[pos]]);
            }
            TrainConfig fold_cfg = config;
            fold_cfg.n_states = n_states;
            fold_cfg.seed = mix_seed(config.seed, 0x10000ULL * static_cast<std::uint64_t>(n_states) +
                                                      static_cast<std::uint64_t>(fold));
            HmmModel m = train_hmm(train, fold_cfg);
            double ll = 0.0;
            std::size_t events = 0;
            for (const auto* seq : heldout) {
                ll += log_likelihood(m, *seq);
                events += seq->size();
            }
            fold_sum += events > 0 ? ll / static_cast<double>(events) : 0.0;
        }
        const double mean_ll = fold_sum / k_folds;
        result.table.push_back({n_states, mean_ll});
        if (mean_ll > best_ll || (mean_ll == best_ll && n_states < best_states)) {
            best_ll = mean_ll;
            best_states = n_states;
        }
    }

    TrainConfig final_cfg = config;
    final_cfg.n_states = best_states;
    final_cfg.seed = mix_seed(config.seed, 0xF17A1ULL + static_cast<std::uint64_t>(best_states));
    result.model = train_hmm(sequences, final_cfg);
    result.selected_states = best_states;
    return result;
}

std::string HmmModel::to_json() const {
    nlohmann::ordered_json j;
    j["n_states"] = n_states;
    j["n_symbols"] = n_symbols;
    j["pi"] = pi;
    j["a"] = a;
    j["b"] = b;
    j["meta"] = {{"seed", meta.seed}, {"iterations", meta.iterations}, {"final_ll", meta.final_ll}};
    return j.dump();
}

HmmModel HmmModel::from_json(const std::string& text) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
    HmmModel m;
    m.n_states = j.at("n_states").get<int>();
    m.n_symbols = j.at("n_symbols").get<int>();
    m.pi = j.at("pi").get<std::vector<double>>();
    m.a = j.at("a").get<std::vector<double>>();
    m.b = j.at("b").get<std::vector<double>>();
    m.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
    m.meta.iterations = j.at("meta").at("iterations").get<int>();
    m.meta.final_ll = j.at("meta").at("final_ll").get<double>();
    if (m.pi.size() != static_cast<std::size_t>(m.n_states) ||
        m.a.size() != static_cast<std::size_t>(m.n_states) * m.n_states ||
        m.b.size() != static_cast<std::size_t>(m.n_states) * m.n_symbols)
        throw std::invalid_argument("model dimensions inconsistent");
    return m;
}

}  // namespace fleetmon::hmm
