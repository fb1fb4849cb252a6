// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fleetmon/attacks.hpp"
#include "fleetmon/simulator.hpp"
#include "fleetmon/transform.hpp"

namespace fleetmon::eval {

// Lower score means more anomalous.
struct ScoredEntry {
    std::string drive_id;
    double score = 0.0;
    bool anomalous = false;
};

// Mann-Whitney formulation: P(anomalous scores below benign), ties half.
double roc_auc(std::span<const ScoredEntry> scored);

struct FScore {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Anomalous is the positive class; predicted positive iff score < threshold.
FScore f_measure(std::span<const ScoredEntry> scored, double threshold);

// Threshold maximizing F1 over midpoints of the observed scores.
double best_f1_threshold(std::span<const ScoredEntry> calibration);

// (fpr, tpr) steps of the ROC curve, from (0,0) to (1,1).
std::vector<std::pair<double, double>> roc_points(std::span<const ScoredEntry> scored);

struct ExperimentConfig {
    std::uint64_t seed = 1;
    int train_drives = 2000;
    int test_drives = 1000;
    double test_mix = 0.5;
    std::vector<TransformKind> transforms{TransformKind::EventId, TransformKind::Discrete};
    std::vector<int> states{5, 15, 20, 30};
    double split_fraction = 0.5;
    double tau_sigmas = 3.0;
    double calibration_fraction = 0.2;
    int restarts = 2;
    int max_iters = 200;
    double tol = 1e-5;
    std::string noise_profile = "default";
    BucketConfig buckets;  // discrete-transform bucket limits
    sim::SimConfig sim;  // duration/story-rate overrides; drive counts come from above
    std::optional<std::string> train_dataset;  // paths override simulation
    std::optional<std::string> test_dataset;
    std::string out_dir = "results";

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json(const std::string& text);
    std::string to_json() const;
};

struct GridCell {
    TransformKind transform = TransformKind::EventId;
    int states = 0;
    std::string technique;  // "avg" | "min" | "regression"
    std::string mode;       // "offline" | "online"
    double auc = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct EvaluationReport {
    std::vector<GridCell> cells;
    // key: "<transform>_<states>_<technique>_<mode>"
    std::map<std::string, std::vector<std::pair<double, double>>> roc_curves;
    std::uint64_t seed = 0;
    std::uint64_t train_digest = 0;
    std::uint64_t test_digest = 0;
    std::string config_echo;

    const GridCell* find(TransformKind t, int states, std::string_view technique,
                         std::string_view mode) const;
    std::string report_tsv() const;
};

EvaluationReport run_experiment(const ExperimentConfig& config);

// Writes report.tsv, roc_*.tsv and meta.txt under out_dir.
void write_report(const EvaluationReport& report, const std::string& out_dir);

}  // namespace fleetmon::eval
