// SPDX-License-Identifier: Apache-2.0
#include "fleetmon/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fleetmon/detector.hpp"

namespace fleetmon::eval {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct ClassCounts {
    std::size_t anomalous = 0;
    std::size_t benign = 0;
};

ClassCounts count_classes(std::span<const ScoredEntry> scored) {
    ClassCounts c;
    for (const auto& e : scored) (e.anomalous ? c.anomalous : c.benign)++;
    return c;
}

}  // namespace

double roc_auc(std::span<const ScoredEntry> scored) {
    const auto counts = count_classes(scored);
    if (counts.anomalous == 0 || counts.benign == 0)
        throw std::invalid_argument("roc_auc needs both classes");

    std::vector<const ScoredEntry*> order;
    order.reserve(scored.size());
    for (const auto& e : scored) order.push_back(&e);
    std::sort(order.begin(), order.end(),
              [](const ScoredEntry* a, const ScoredEntry* b) { return a->score < b->score; });

    // rank sum of the anomalous class, average ranks over ties
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && order[j]->score == order[i]->score) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (order[k]->anomalous) rank_sum += avg_rank;
        i = j;
    }
    const double na = static_cast<double>(counts.anomalous);
    const double nb = static_cast<double>(counts.benign);
    // pairs where the anomalous drive scores higher, ties half
    const double u_greater = rank_sum - na * (na + 1.0) / 2.0;
    return (na * nb - u_greater) / (na * nb);
}

FScore f_measure(std::span<const ScoredEntry> scored, double threshold) {
    if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& e : scored) {
        const bool predicted = e.score < threshold;
        if (predicted && e.anomalous) ++tp;
        else if (predicted && !e.anomalous) ++fp;
        else if (!predicted && e.anomalous) ++fn;
    }
    FScore out;
    out.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    out.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

double best_f1_threshold(std::span<const ScoredEntry> calibration) {
    if (calibration.empty()) throw std::invalid_argument("empty calibration set");
    std::vector<double> scores;
    scores.reserve(calibration.size());
    for (const auto& e : calibration) scores.push_back(e.score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

    std::vector<double> candidates;
    candidates.push_back(scores.front() - 1.0);
    for (std::size_t i = 0; i + 1 < scores.size(); ++i)
        candidates.push_back((scores[i] + scores[i + 1]) / 2.0);
    candidates.push_back(scores.back() + 1.0);

    double best_thr = candidates.front();
    double best_f1 = -1.0;
    for (double thr : candidates) {
        const double f1 = f_measure(calibration, thr).f1;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_thr = thr;
        }
    }
    return best_thr;
}

std::vector<std::pair<double, double>> roc_points(std::span<const ScoredEntry> scored) {
    const auto counts = count_classes(scored);
    if (counts.anomalous == 0 || counts.benign == 0)
        throw std::invalid_argument("roc_points needs both classes");
    std::vector<const ScoredEntry*> order;
    order.reserve(scored.size());
    for (const auto& e : scored) order.push_back(&e);
    std::sort(order.begin(), order.end(),
              [](const ScoredEntry* a, const ScoredEntry* b) { return a->score < b->score; });

    std::vector<std::pair<double, double>> pts;
    pts.emplace_back(0.0, 0.0);
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && order[j]->score == order[i]->score) ++j;
        for (std::size_t k = i; k < j; ++k) (order[k]->anomalous ? tp : fp)++;
        pts.emplace_back(static_cast<double>(fp) / static_cast<double>(counts.benign),
                         static_cast<double>(tp) / static_cast<double>(counts.anomalous));
        i = j;
    }
    return pts;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("experiment config: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("train_drives")) cfg.train_drives = j["train_drives"].get<int>();
        if (j.contains("test_drives")) cfg.test_drives = j["test_drives"].get<int>();
        if (j.contains("test_mix")) cfg.test_mix = j["test_mix"].get<double>();
        if (j.contains("transforms")) {
            cfg.transforms.clear();
            for (const auto& t : j["transforms"]) {
                auto kind = transform_kind_from_string(t.get<std::string>());
                if (!kind) throw SchemaError("unknown transform: " + t.get<std::string>());
                cfg.transforms.push_back(*kind);
            }
        }
        if (j.contains("states")) cfg.states = j["states"].get<std::vector<int>>();
        if (j.contains("split_fraction")) cfg.split_fraction = j["split_fraction"].get<double>();
        if (j.contains("tau_sigmas")) cfg.tau_sigmas = j["tau_sigmas"].get<double>();
        if (j.contains("calibration_fraction"))
            cfg.calibration_fraction = j["calibration_fraction"].get<double>();
        if (j.contains("restarts")) cfg.restarts = j["restarts"].get<int>();
        if (j.contains("max_iters")) cfg.max_iters = j["max_iters"].get<int>();
        if (j.contains("tol")) cfg.tol = j["tol"].get<double>();
        if (j.contains("noise_profile")) cfg.noise_profile = j["noise_profile"].get<std::string>();
        if (j.contains("velocity_edges"))
            cfg.buckets.velocity_edges = j["velocity_edges"].get<std::vector<double>>();
        if (j.contains("flows_low_max")) cfg.buckets.flows_low_max = j["flows_low_max"].get<int>();
        if (j.contains("flows_medium_max"))
            cfg.buckets.flows_medium_max = j["flows_medium_max"].get<int>();
        if (j.contains("duration_min")) cfg.sim.duration_min = j["duration_min"].get<double>();
        if (j.contains("duration_max")) cfg.sim.duration_max = j["duration_max"].get<double>();
        if (j.contains("story_rate")) cfg.sim.story_rate = j["story_rate"].get<double>();
        if (j.contains("train_dataset")) cfg.train_dataset = j["train_dataset"].get<std::string>();
        if (j.contains("test_dataset")) cfg.test_dataset = j["test_dataset"].get<std::string>();
        if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("experiment config: ") + e.what());
    }
    if (cfg.transforms.empty() || cfg.states.empty())
        throw SchemaError("experiment config: transforms and states must be non-empty");
    if (!(cfg.calibration_fraction > 0.0 && cfg.calibration_fraction < 1.0))
        throw SchemaError("experiment config: calibration_fraction must be in (0,1)");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open experiment config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

std::string ExperimentConfig::to_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["train_drives"] = train_drives;
    j["test_drives"] = test_drives;
    j["test_mix"] = test_mix;
    ordered_json transforms_j = ordered_json::array();
    for (auto t : transforms) transforms_j.push_back(std::string(to_string(t)));
    j["transforms"] = std::move(transforms_j);
    j["states"] = states;
    j["split_fraction"] = split_fraction;
    j["tau_sigmas"] = tau_sigmas;
    j["calibration_fraction"] = calibration_fraction;
    j["restarts"] = restarts;
    j["max_iters"] = max_iters;
    j["tol"] = tol;
    j["noise_profile"] = noise_profile;
    j["velocity_edges"] = buckets.velocity_edges;
    j["flows_low_max"] = buckets.flows_low_max;
    j["flows_medium_max"] = buckets.flows_medium_max;
    j["duration_min"] = sim.duration_min;
    j["duration_max"] = sim.duration_max;
    j["story_rate"] = sim.story_rate;
    if (train_dataset) j["train_dataset"] = *train_dataset;
    if (test_dataset) j["test_dataset"] = *test_dataset;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

const GridCell* EvaluationReport::find(TransformKind t, int states, std::string_view technique,
                                       std::string_view mode) const {
    for (const GridCell& c : cells)
        if (c.transform == t && c.states == states && c.technique == technique && c.mode == mode)
            return &c;
    return nullptr;
}

std::string EvaluationReport::report_tsv() const {
    std::ostringstream os;
    os << "transform\tstates\ttechnique\tmode\tauc\tf1\tprecision\trecall\n";
    for (const GridCell& c : cells)
        os << to_string(c.transform) << '\t' << c.states << '\t' << c.technique << '\t' << c.mode
           << '\t' << fmt6(c.auc) << '\t' << fmt6(c.f1) << '\t' << fmt6(c.precision) << '\t'
           << fmt6(c.recall) << '\n';
    return os.str();
}

EvaluationReport run_experiment(const ExperimentConfig& config) {
    // data
    std::vector<Drive> train;
    std::vector<Drive> test;
    if (config.train_dataset && config.test_dataset) {
        train = read_dataset(*config.train_dataset);
        test = read_dataset(*config.test_dataset);
    } else if (config.train_dataset || config.test_dataset) {
        throw std::invalid_argument("train_dataset and test_dataset must be given together");
    } else {
        sim::SimConfig sim_cfg = config.sim;
        sim_cfg.seed = config.seed;
        sim_cfg.noise = sim::noise_profile(config.noise_profile);
        sim_cfg.n_drives = config.train_drives + config.test_drives;
        std::vector<Drive> fleet = sim::generate_fleet(sim_cfg);
        train.assign(fleet.begin(), fleet.begin() + config.train_drives);
        std::vector<Drive> test_pool(fleet.begin() + config.train_drives, fleet.end());
        Rng attack_rng = Rng::stream(config.seed, 0xA77AC);
        test = attack::build_test_set(test_pool, config.test_mix, {}, attack_rng);
    }

    EvaluationReport report;
    report.seed = config.seed;
    report.train_digest = dataset_digest(train);
    report.test_digest = dataset_digest(test);
    report.config_echo = config.to_json();

    // deterministic calibration/holdout partition of the test set
    std::vector<std::size_t> test_order(test.size());
    for (std::size_t i = 0; i < test_order.size(); ++i) test_order[i] = i;
    Rng cal_rng = Rng::stream(config.seed, 0xCA1);
    cal_rng.shuffle(test_order);
    const auto n_cal = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.calibration_fraction *
                                                static_cast<double>(test.size()))));

    const auto split = detect::split_training(train, config.split_fraction, config.seed);

    for (TransformKind tkind : config.transforms) {
        const Alphabet alphabet = tkind == TransformKind::EventId
                                      ? Alphabet::event_id()
                                      : Alphabet::discrete(config.buckets, train);
        const auto p1 = transform_drives(split.p1, alphabet);
        const auto p2 = transform_drives(split.p2, alphabet);
        const auto test_seqs = transform_drives(test, alphabet);

        std::vector<std::vector<int>> p1_symbols;
        p1_symbols.reserve(p1.size());
        for (const auto& seq : p1)
            if (!seq.symbols.empty()) p1_symbols.push_back(seq.symbols);

        for (int n_states : config.states) {
            hmm::TrainConfig tcfg;
            tcfg.n_states = n_states;
            tcfg.n_symbols = alphabet.size();
            tcfg.n_restarts = config.restarts;
            tcfg.max_iters = config.max_iters;
            tcfg.tol = config.tol;
            tcfg.seed = mix_seed(config.seed,
                                 0x1000ULL * static_cast<std::uint64_t>(n_states) +
                                     (tkind == TransformKind::Discrete ? 1 : 0));
            const hmm::HmmModel model = hmm::train_hmm(p1_symbols, tcfg);
            detect::RegressorConfig rcfg;
            rcfg.tau_sigmas = config.tau_sigmas;
            const detect::RegressorModel reg = detect::build_regressor(model, p2, rcfg);
            const detect::StaticThresholds thresholds =
                detect::compute_static_thresholds(model, p2);

            std::vector<ScoredEntry> reg_off(test.size()), reg_on(test.size()),
                stat_off(test.size()), stat_on(test.size());
            for (std::size_t i = 0; i < test.size(); ++i) {
                const bool anom = !test[i].is_benign();
                const auto& seq = test_seqs[i];
                const auto online = detect::score_online(model, reg, seq);
                reg_off[i] = {seq.drive_id, online.residuals.back(), anom};
                reg_on[i] = {seq.drive_id, online.min_residual, anom};
                const auto st_on = detect::score_static_online(model, thresholds,
                                                               detect::StaticMode::Avg, seq);
                stat_off[i] = {seq.drive_id, st_on.norm_lls.back(), anom};
                stat_on[i] = {seq.drive_id, st_on.min_norm_ll, anom};
            }

            struct TechniqueScores {
                std::string technique;
                const std::vector<ScoredEntry>* offline;
                const std::vector<ScoredEntry>* online;
            };
            const TechniqueScores all[] = {{"avg", &stat_off, &stat_on},
                                           {"min", &stat_off, &stat_on},
                                           {"regression", &reg_off, &reg_on}};
            for (const auto& tech : all) {
                for (const char* mode : {"offline", "online"}) {
                    const auto& scores =
                        std::string_view(mode) == "offline" ? *tech.offline : *tech.online;
                    std::vector<ScoredEntry> cal, holdout;
                    cal.reserve(n_cal);
                    holdout.reserve(scores.size() - n_cal);
                    for (std::size_t pos = 0; pos < test_order.size(); ++pos)
                        (pos < n_cal ? cal : holdout).push_back(scores[test_order[pos]]);
                    const double thr = best_f1_threshold(cal);
                    const FScore f = f_measure(holdout, thr);
                    GridCell cell;
                    cell.transform = tkind;
                    cell.states = n_states;
                    cell.technique = tech.technique;
                    cell.mode = mode;
                    cell.auc = roc_auc(scores);
                    cell.f1 = f.f1;
                    cell.precision = f.precision;
                    cell.recall = f.recall;
                    report.cells.push_back(cell);
                    if (tech.technique != "min") {  // avg/min curves coincide
                        std::string key = std::string(to_string(tkind)) + "_" +
                                          std::to_string(n_states) + "_" + tech.technique + "_" +
                                          mode;
                        report.roc_curves.emplace(std::move(key), roc_points(scores));
                    }
                }
            }
        }
    }
    return report;
}

void write_report(const EvaluationReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "report.tsv", std::ios::binary);
        out << report.report_tsv();
    }
    for (const auto& [key, points] : report.roc_curves) {
        std::ofstream out(fs::path(out_dir) / ("roc_" + key + ".tsv"), std::ios::binary);
        out << "fpr\ttpr\n";
        for (const auto& [fpr, tpr] : points) out << fmt6(fpr) << '\t' << fmt6(tpr) << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "meta.txt", std::ios::binary);
        out << "seed\t" << report.seed << '\n';
        out << "train_digest\t" << report.train_digest << '\n';
        out << "test_digest\t" << report.test_digest << '\n';
        out << "f1_thresholds\tbest-F1 on a " << "calibration slice, scored on the remainder\n";
        out << "config\n" << report.config_echo << '\n';
    }
}

}  // namespace fleetmon::eval
