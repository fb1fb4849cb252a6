// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fleetmon/rng.hpp"

namespace fleetmon::detect {

namespace {

using Matrix = std::array<std::array<double, kFeatureDim>, kFeatureDim>;

// Cholesky factorization; returns false on a non-positive pivot.
bool cholesky_solve(Matrix m, Features rhs, Features& out) {
    Matrix l{};
    for (int i = 0; i < kFeatureDim; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            for (int k = 0; k < j; ++k)
                sum -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
                       l[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            if (i == j) {
                if (!(sum > 0.0) || !std::isfinite(sum)) return false;
                l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::sqrt(sum);
            } else {
                l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    sum / l[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
            }
        }
    }
    // forward then backward substitution
    Features y{};
    for (int i = 0; i < kFeatureDim; ++i) {
        double sum = rhs[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k)
            sum -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
                   y[static_cast<std::size_t>(k)];
        y[static_cast<std::size_t>(i)] = sum / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    }
    for (int i = kFeatureDim - 1; i >= 0; --i) {
        double sum = y[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < kFeatureDim; ++k)
            sum -= l[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] *
                   out[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = sum / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    }
    return std::all_of(out.begin(), out.end(), [](double v) { return std::isfinite(v); });
}

double dot(const Features& a, const Features& b) {
    double s = 0.0;
    for (int i = 0; i < kFeatureDim; ++i)
        s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
    return s;
}

}  // namespace

TrainingSplit split_training(const std::vector<Drive>& benign, double fraction,
                             std::uint64_t seed) {
    if (benign.size() < 2) throw std::invalid_argument("need at least 2 drives to split");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("split fraction must be in (0,1)");
    std::vector<std::size_t> order(benign.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::stream(seed, 0x5417);
    rng.shuffle(order);
    const auto n1 = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(benign.size())));
    if (n1 == 0 || n1 == benign.size())
        throw std::invalid_argument("degenerate split: one side is empty");
    TrainingSplit split;
    split.p1.reserve(n1);
    split.p2.reserve(benign.size() - n1);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n1 ? split.p1 : split.p2).push_back(benign[order[i]]);
    return split;
}

Features temporal_features(std::size_t index1, double t, double t_prev) {
    const double i = static_cast<double>(index1);
    return {1.0, i, t, t - t_prev, t / i};
}

Features solve_least_squares(const std::vector<Features>& rows, const std::vector<double>& targets,
                             double ridge_rel) {
    if (rows.empty() || rows.size() != targets.size())
        throw std::invalid_argument("least squares needs matching non-empty rows and targets");
    Matrix xtx{};
    Features xty{};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Features& v = rows[r];
        for (int i = 0; i < kFeatureDim; ++i) {
            xty[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)] * targets[r];
            for (int j = 0; j <= i; ++j)
                xtx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                    v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)];
        }
    }
    for (int i = 0; i < kFeatureDim; ++i)
        for (int j = i + 1; j < kFeatureDim; ++j)
            xtx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                xtx[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];

    Features w{};
    if (cholesky_solve(xtx, xty, w)) return w;

    double max_diag = 0.0;
    for (int i = 0; i < kFeatureDim; ++i)
        max_diag = std::max(max_diag, xtx[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);
    const double ridge = ridge_rel * std::max(max_diag, 1.0);
    Matrix damped = xtx;
    for (int i = 0; i < kFeatureDim; ++i)
        damped[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += ridge;
    if (cholesky_solve(damped, xty, w)) return w;
    throw std::runtime_error("normal equations unsolvable even with ridge");
}

RegressorModel build_regressor(const hmm::HmmModel& model,
                               const std::vector<ObservationSequence>& p2,
                               const RegressorConfig& config) {
    std::vector<Features> rows;
    std::vector<double> targets;
    for (const ObservationSequence& seq : p2) {
        const auto lls = hmm::prefix_log_likelihoods(model, seq.symbols);
        double prev_t = 0.0;
        for (std::size_t i = 0; i < lls.size(); ++i) {
            rows.push_back(temporal_features(i + 1, seq.times[i], prev_t));
            targets.push_back(lls[i]);
            prev_t = seq.times[i];
        }
    }
    if (rows.empty()) throw std::invalid_argument("regressor training set has no events");

    RegressorModel reg;
    reg.w = solve_least_squares(rows, targets, config.ridge);
    double sum = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) sum += targets[r] - dot(reg.w, rows[r]);
    reg.residual_mu = sum / static_cast<double>(rows.size());
    double var = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double d = targets[r] - dot(reg.w, rows[r]) - reg.residual_mu;
        var += d * d;
    }
    reg.residual_sigma = std::sqrt(var / static_cast<double>(rows.size()));
    reg.tau = reg.residual_mu - config.tau_sigmas * reg.residual_sigma;
    return reg;
}

StaticThresholds compute_static_thresholds(const hmm::HmmModel& model,
                                           const std::vector<ObservationSequence>& training) {
    StaticThresholds out;
    double sum = 0.0;
    std::size_t n = 0;
    out.min_norm_ll = std::numeric_limits<double>::infinity();
    for (const ObservationSequence& seq : training) {
        if (seq.symbols.empty()) continue;
        const double norm =
            hmm::log_likelihood(model, seq.symbols) / static_cast<double>(seq.symbols.size());
        sum += norm;
        out.min_norm_ll = std::min(out.min_norm_ll, norm);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("no non-empty training sequences");
    out.avg_norm_ll = sum / static_cast<double>(n);
    return out;
}

OnlineScorer::OnlineScorer(const hmm::HmmModel& model, const RegressorModel& regressor)
    : fwd_(model), regressor_(&regressor) {}

void OnlineScorer::reset() {
    fwd_.reset();
    prev_t_ = 0.0;
    index_ = 0;
}

double OnlineScorer::step(int symbol, double t) {
    const double ll = fwd_.step(symbol);
    ++index_;
    const double predicted = dot(regressor_->w, temporal_features(index_, t, prev_t_));
    prev_t_ = t;
    return ll - predicted;
}

OfflineScore score_offline(const hmm::HmmModel& model, const RegressorModel& regressor,
                           const ObservationSequence& seq) {
    if (seq.symbols.empty()) throw std::invalid_argument("cannot score an empty drive");
    OnlineScorer scorer(model, regressor);
    double residual = 0.0;
    for (std::size_t i = 0; i < seq.symbols.size(); ++i)
        residual = scorer.step(seq.symbols[i], seq.times[i]);
    return {residual, residual < regressor.tau};
}

OnlineScore score_online(const hmm::HmmModel& model, const RegressorModel& regressor,
                         const ObservationSequence& seq) {
    if (seq.symbols.empty()) throw std::invalid_argument("cannot score an empty drive");
    OnlineScore out;
    out.residuals.reserve(seq.symbols.size());
    OnlineScorer scorer(model, regressor);
    out.min_residual = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < seq.symbols.size(); ++i) {
        const double r = scorer.step(seq.symbols[i], seq.times[i]);
        out.residuals.push_back(r);
        out.min_residual = std::min(out.min_residual, r);
        if (!out.first_alert && r < regressor.tau) out.first_alert = i;
    }
    return out;
}

StaticOffline score_static_offline(const hmm::HmmModel& model, const StaticThresholds& thresholds,
                                   StaticMode mode, const ObservationSequence& seq) {
    if (seq.symbols.empty()) throw std::invalid_argument("cannot score an empty drive");
    const double norm =
        hmm::log_likelihood(model, seq.symbols) / static_cast<double>(seq.symbols.size());
    const double cut = mode == StaticMode::Avg ? thresholds.avg_norm_ll : thresholds.min_norm_ll;
    return {norm, norm < cut};
}

StaticOnline score_static_online(const hmm::HmmModel& model, const StaticThresholds& thresholds,
                                 StaticMode mode, const ObservationSequence& seq) {
    if (seq.symbols.empty()) throw std::invalid_argument("cannot score an empty drive");
    const double cut = mode == StaticMode::Avg ? thresholds.avg_norm_ll : thresholds.min_norm_ll;
    StaticOnline out;
    out.min_norm_ll = std::numeric_limits<double>::infinity();
    const auto lls = hmm::prefix_log_likelihoods(model, seq.symbols);
    for (std::size_t i = 0; i < lls.size(); ++i) {
        const double norm = lls[i] / static_cast<double>(i + 1);
        out.norm_lls.push_back(norm);
        out.min_norm_ll = std::min(out.min_norm_ll, norm);
        if (!out.first_alert && norm < cut) out.first_alert = i;
    }
    return out;
}

std::string DetectorBundle::to_json() const {
    nlohmann::ordered_json j;
    j["alphabet"] = nlohmann::ordered_json::parse(alphabet.to_json());
    j["hmm"] = nlohmann::ordered_json::parse(model.to_json());
    j["regressor"] = {{"w", regressor.w},
                      {"residual_mu", regressor.residual_mu},
                      {"residual_sigma", regressor.residual_sigma},
                      {"tau", regressor.tau}};
    j["static_thresholds"] = {{"avg_norm_ll", thresholds.avg_norm_ll},
                              {"min_norm_ll", thresholds.min_norm_ll}};
    nlohmann::ordered_json sel = nlohmann::ordered_json::array();
    for (const auto& row : selection)
        sel.push_back({{"n_states", row.n_states},
                       {"mean_heldout_ll_per_event", row.mean_heldout_ll_per_event}});
    j["selection"] = std::move(sel);
    return j.dump();
}

DetectorBundle DetectorBundle::from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    }
    try {
        DetectorBundle b;
        b.alphabet = Alphabet::from_json(j.at("alphabet").dump());
        b.model = hmm::HmmModel::from_json(j.at("hmm").dump());
        const auto& r = j.at("regressor");
        const auto w = r.at("w").get<std::vector<double>>();
        if (w.size() != kFeatureDim) throw SchemaError("bundle: regressor dimension mismatch");
        std::copy(w.begin(), w.end(), b.regressor.w.begin());
        b.regressor.residual_mu = r.at("residual_mu").get<double>();
        b.regressor.residual_sigma = r.at("residual_sigma").get<double>();
        b.regressor.tau = r.at("tau").get<double>();
        b.thresholds.avg_norm_ll = j.at("static_thresholds").at("avg_norm_ll").get<double>();
        b.thresholds.min_norm_ll = j.at("static_thresholds").at("min_norm_ll").get<double>();
        for (const auto& row : j.at("selection"))
            b.selection.push_back({row.at("n_states").get<int>(),
                                   row.at("mean_heldout_ll_per_event").get<double>()});
        if (b.model.n_symbols != b.alphabet.size())
            throw SchemaError("bundle: model/alphabet size mismatch");
        if (!(b.thresholds.min_norm_ll <= b.thresholds.avg_norm_ll))
            throw SchemaError("bundle: min threshold above avg threshold");
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bundle: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("bundle: ") + e.what());
    }
}

void DetectorBundle::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot open for writing: " + path);
    out << to_json() << '\n';
    if (!out) throw DatasetError("write failed: " + path);
}

DetectorBundle DetectorBundle::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open for reading: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

}  // namespace fleetmon::detect
