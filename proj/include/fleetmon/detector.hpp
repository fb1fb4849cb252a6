// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "fleetmon/events.hpp"
#include "fleetmon/hmm.hpp"
#include "fleetmon/transform.hpp"

namespace fleetmon::detect {

struct TrainingSplit {
    std::vector<Drive> p1;  // HMM training
    std::vector<Drive> p2;  // regressor training
};

// Deterministic shuffled split; |p1| == round(fraction * total).
TrainingSplit split_training(const std::vector<Drive>& benign, double fraction,
                             std::uint64_t seed);

inline constexpr int kFeatureDim = 5;
using Features = std::array<double, kFeatureDim>;

// [bias, prefix index, time since start, inter-arrival gap, mean gap].
// index1 is 1-based; the first event uses t itself as its gap.
Features temporal_features(std::size_t index1, double t, double t_prev);

struct RegressorModel {
    Features w{};
    double residual_mu = 0.0;
    double residual_sigma = 0.0;
    double tau = 0.0;
};

struct RegressorConfig {
    double tau_sigmas = 3.0;  // tau = mu - tau_sigmas * sigma
    double ridge = 1e-8;      // relative ridge applied when normal equations are singular
};

// Ordinary least squares via normal equations; falls back to a relative
// ridge when the Cholesky factorization breaks down.
Features solve_least_squares(const std::vector<Features>& rows, const std::vector<double>& targets,
                             double ridge_rel);

RegressorModel build_regressor(const hmm::HmmModel& model,
                               const std::vector<ObservationSequence>& p2,
                               const RegressorConfig& config = {});

struct StaticThresholds {
    double avg_norm_ll = 0.0;
    double min_norm_ll = 0.0;
};

// Length-normalized full-drive log-likelihood statistics over benign
// training drives.
StaticThresholds compute_static_thresholds(const hmm::HmmModel& model,
                                           const std::vector<ObservationSequence>& training);

// Streams one drive through the forward recursion and the temporal
// regressor; constant state per event. Shared by batch scoring and the
// fleet service so their residuals agree bit for bit.
class OnlineScorer {
public:
    OnlineScorer(const hmm::HmmModel& model, const RegressorModel& regressor);
    double step(int symbol, double t);  // residual of the current prefix
    double prefix_ll() const { return fwd_.log_likelihood(); }
    std::size_t length() const { return index_; }
    void reset();

private:
    hmm::ForwardScorer fwd_;
    const RegressorModel* regressor_;
    double prev_t_ = 0.0;
    std::size_t index_ = 0;
};

struct OfflineScore {
    double score = 0.0;  // final-prefix residual; lower means more anomalous
    bool anomalous = false;
};

struct OnlineScore {
    std::vector<double> residuals;
    std::optional<std::size_t> first_alert;  // first index with residual < tau
    double min_residual = 0.0;               // drive-level score for ROC
};

OfflineScore score_offline(const hmm::HmmModel& model, const RegressorModel& regressor,
                           const ObservationSequence& seq);
OnlineScore score_online(const hmm::HmmModel& model, const RegressorModel& regressor,
                         const ObservationSequence& seq);

enum class StaticMode { Avg, Min };

struct StaticOffline {
    double norm_ll = 0.0;  // per-event log-likelihood of the full drive
    bool anomalous = false;
};

struct StaticOnline {
    std::vector<double> norm_lls;  // per-prefix normalized log-likelihoods
    std::optional<std::size_t> first_alert;
    double min_norm_ll = 0.0;
};

StaticOffline score_static_offline(const hmm::HmmModel& model, const StaticThresholds& thresholds,
                                   StaticMode mode, const ObservationSequence& seq);
StaticOnline score_static_online(const hmm::HmmModel& model, const StaticThresholds& thresholds,
                                 StaticMode mode, const ObservationSequence& seq);

// Self-contained per-vehicle detection artifact.
struct DetectorBundle {
    Alphabet alphabet;
    hmm::HmmModel model;
    RegressorModel regressor;
    StaticThresholds thresholds;
    std::vector<hmm::SelectionRow> selection;  // empty when no model selection ran

    std::string to_json() const;
    static DetectorBundle from_json(const std::string& text);
    void save(const std::string& path) const;
    static DetectorBundle load(const std::string& path);
};

}  // namespace fleetmon::detect
