// SPDX-License-Identifier: Apache-2.0
//
// fleetmon: simulate connected-car event streams, inject attack variants,
// train per-vehicle detectors, score drives, evaluate the full grid, and
// run or feed the fleet ingestion service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "fleetmon/attacks.hpp"
#include "fleetmon/detector.hpp"
#include "fleetmon/eval.hpp"
#include "fleetmon/events.hpp"
#include "fleetmon/fleetd.hpp"
#include "fleetmon/fleetd_http.hpp"
#include "fleetmon/hmm.hpp"
#include "fleetmon/simulator.hpp"
#include "fleetmon/transform.hpp"

namespace {

using namespace fleetmon;

int cmd_simulate(const sim::SimConfig& cfg, const std::string& out_path) {
    const auto fleet = sim::generate_fleet(cfg);
    write_dataset(fleet, out_path);
    std::cout << "wrote " << fleet.size() << " drives to " << out_path << "\n";
    return 0;
}

int cmd_inject(const std::string& in_path, const std::string& out_path, double mix,
               const std::string& kinds_arg, std::uint64_t seed) {
    const auto benign = read_dataset(in_path);
    std::vector<double> weights;
    if (kinds_arg != "all") {
        weights.assign(attack::all_attack_kinds().size(), 0.0);
        std::stringstream ss(kinds_arg);
        std::string name;
        while (std::getline(ss, name, ',')) {
            auto kind = attack::attack_kind_from_string(name);
            if (!kind) throw SchemaError("unknown attack kind: " + name);
            weights[static_cast<std::size_t>(*kind)] = 1.0;
        }
    }
    Rng rng = Rng::stream(seed, 0xA77AC);
    const auto test_set = attack::build_test_set(benign, mix, weights, rng);
    write_dataset(test_set, out_path);
    std::size_t n_anom = 0;
    for (const auto& d : test_set) n_anom += d.is_benign() ? 0 : 1;
    std::cout << "wrote " << test_set.size() << " drives (" << n_anom << " anomalous) to "
              << out_path << "\n";
    return 0;
}

int cmd_train(const std::string& in_path, const std::string& transform_name,
              const std::vector<int>& states, int folds, double split_fraction,
              std::uint64_t seed, double tau_sigmas, int restarts, int max_iters, double tol,
              const std::string& out_path) {
    const auto drives = read_dataset(in_path);
    std::vector<Drive> benign;
    for (const auto& d : drives)
        if (d.is_benign()) benign.push_back(d);
    if (benign.empty()) throw SchemaError("training set has no benign drives");

    auto kind = transform_kind_from_string(transform_name);
    if (!kind) throw SchemaError("unknown transform: " + transform_name);

    const auto split = detect::split_training(benign, split_fraction, seed);
    const Alphabet alphabet = *kind == TransformKind::EventId
                                  ? Alphabet::event_id()
                                  : Alphabet::discrete(BucketConfig{}, benign);
    const auto p1 = transform_drives(split.p1, alphabet);
    const auto p2 = transform_drives(split.p2, alphabet);
    std::vector<std::vector<int>> p1_symbols;
    for (const auto& s : p1)
        if (!s.symbols.empty()) p1_symbols.push_back(s.symbols);

    hmm::TrainConfig tcfg;
    tcfg.n_restarts = restarts;
    tcfg.max_iters = max_iters;
    tcfg.tol = tol;
    tcfg.seed = seed;
    tcfg.n_symbols = alphabet.size();

    detect::DetectorBundle bundle;
    bundle.alphabet = alphabet;
    if (states.size() == 1 || folds < 2) {
        tcfg.n_states = states.front();
        bundle.model = hmm::train_hmm(p1_symbols, tcfg);
        std::cout << "trained " << tcfg.n_states << "-state model, train ll "
                  << bundle.model.meta.final_ll << "\n";
    } else {
        const auto selection = hmm::select_model(p1_symbols, states, folds, tcfg);
        bundle.model = selection.model;
        bundle.selection = selection.table;
        std::cout << "states\theld-out ll/event\n";
        for (const auto& row : selection.table)
            std::cout << row.n_states << '\t' << row.mean_heldout_ll_per_event << '\n';
        std::cout << "selected " << selection.selected_states << " states\n";
    }

    detect::RegressorConfig rcfg;
    rcfg.tau_sigmas = tau_sigmas;
    bundle.regressor = detect::build_regressor(bundle.model, p2, rcfg);
    bundle.thresholds = detect::compute_static_thresholds(bundle.model, p2);
    bundle.save(out_path);
    std::cout << "bundle written to " << out_path << " (tau " << bundle.regressor.tau
              << ", avg " << bundle.thresholds.avg_norm_ll << ", min "
              << bundle.thresholds.min_norm_ll << ")\n";
    return 0;
}

int cmd_detect(const std::string& bundle_path, const std::string& in_path,
               const std::string& mode, const std::string& out_path) {
    const auto bundle = detect::DetectorBundle::load(bundle_path);
    const auto drives = read_dataset(in_path);
    std::ostringstream out;
    out << "drive_id\tlabel";
    const bool offline = mode == "offline" || mode == "both";
    const bool online = mode == "online" || mode == "both";
    if (offline) out << "\toffline_residual\toffline_anomalous\tstatic_norm_ll\tstatic_avg_"
                        "anomalous\tstatic_min_anomalous";
    if (online) out << "\tonline_min_residual\tonline_first_alert";
    out << '\n';
    for (const auto& d : drives) {
        const auto seq = transform_drive(d, bundle.alphabet);
        out << d.drive_id << '\t' << d.label;
        if (offline) {
            const auto r = detect::score_offline(bundle.model, bundle.regressor, seq);
            const auto st_avg = detect::score_static_offline(bundle.model, bundle.thresholds,
                                                             detect::StaticMode::Avg, seq);
            const auto st_min = detect::score_static_offline(bundle.model, bundle.thresholds,
                                                             detect::StaticMode::Min, seq);
            out << '\t' << r.score << '\t' << (r.anomalous ? 1 : 0) << '\t' << st_avg.norm_ll
                << '\t' << (st_avg.anomalous ? 1 : 0) << '\t' << (st_min.anomalous ? 1 : 0);
        }
        if (online) {
            const auto r = detect::score_online(bundle.model, bundle.regressor, seq);
            out << '\t' << r.min_residual << '\t';
            if (r.first_alert)
                out << *r.first_alert;
            else
                out << "-";
        }
        out << '\n';
    }
    if (out_path == "-") {
        std::cout << out.str();
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw DatasetError("cannot open for writing: " + out_path);
        f << out.str();
        std::cout << "wrote scores for " << drives.size() << " drives to " << out_path << "\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& out_dir_override) {
    eval::ExperimentConfig cfg = eval::ExperimentConfig::from_json_file(config_path);
    if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
    const auto report = eval::run_experiment(cfg);
    eval::write_report(report, cfg.out_dir);
    std::cout << report.report_tsv();
    std::cout << "report written to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_serve(const std::string& store_dir, const std::string& listen) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw SchemaError("listen must be host:port");
    const std::string host = listen.substr(0, colon);
    const int port = std::stoi(listen.substr(colon + 1));
    fleetd::FleetService service(store_dir);
    fleetd::HttpServer server(service);
    if (!server.bind(host, port)) {
        std::cerr << "cannot bind " << listen << "\n";
        return 2;
    }
    std::cout << "fleetd listening on " << host << ":" << server.port() << ", store "
              << store_dir << "\n";
    server.serve();
    return 0;
}

int cmd_replay(const std::string& in_path, const std::string& to, int batch) {
    const auto colon = to.rfind(':');
    if (colon == std::string::npos) throw SchemaError("target must be host:port");
    const std::string host = to.substr(0, colon);
    const int port = std::stoi(to.substr(colon + 1));
    httplib::Client client(host, port);
    client.set_read_timeout(60, 0);

    const auto drives = read_dataset(in_path);
    std::size_t events_sent = 0, alerts = 0, errors = 0;
    for (const auto& d : drives) {
        for (std::size_t begin = 0; begin < d.events.size();
             begin += static_cast<std::size_t>(batch)) {
            const std::size_t chunk_end =
                std::min(d.events.size(), begin + static_cast<std::size_t>(batch));
            std::ostringstream body;
            for (std::size_t i = begin; i < chunk_end; ++i) {
                fleetd::WireRecord rec;
                rec.drive_id = d.drive_id;
                rec.start = i == 0;
                rec.end = i + 1 == d.events.size();
                rec.event = d.events[i];
                body << rec.to_json() << '\n';
            }
            auto res = client.Post("/vehicles/" + d.vehicle_id + "/events", body.str(),
                                   "application/x-ndjson");
            if (!res || res->status != 200)
                throw std::runtime_error("replay POST failed for " + d.drive_id);
            std::istringstream lines(res->body);
            std::string line;
            while (std::getline(lines, line)) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                ++events_sent;
                if (!j.at("ok").get<bool>()) ++errors;
                if (j.contains("alert")) ++alerts;
            }
        }
    }
    std::cout << "replayed " << events_sent << " events from " << drives.size() << " drives, "
              << alerts << " alerts, " << errors << " errors\n";
    return errors == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"connected-car anomaly detection pipeline"};
    app.require_subcommand(1);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a benign fleet dataset");
    sim::SimConfig sim_cfg;
    std::string sim_out = "fleet.nd";
    std::string noise_name = "default";
    simulate->add_option("--drives", sim_cfg.n_drives, "number of drives");
    simulate->add_option("--vehicles", sim_cfg.n_vehicles, "number of vehicles");
    simulate->add_option("--seed", sim_cfg.seed, "rng seed");
    simulate->add_option("--duration-min", sim_cfg.duration_min, "min drive seconds");
    simulate->add_option("--duration-max", sim_cfg.duration_max, "max drive seconds");
    simulate->add_option("--story-rate", sim_cfg.story_rate, "mean stories per minute");
    simulate->add_option("--noise-profile", noise_name, "default|quiet|heavy");
    simulate->add_option("--out", sim_out, "output dataset path")->required();

    // inject
    auto* inject = app.add_subcommand("inject", "inject attack variants into a benign dataset");
    std::string inject_in, inject_out, inject_kinds = "all";
    double inject_mix = 0.5;
    std::uint64_t inject_seed = 0;
    inject->add_option("--in", inject_in, "benign dataset")->required();
    inject->add_option("--out", inject_out, "output dataset")->required();
    inject->add_option("--mix", inject_mix, "anomalous fraction");
    inject->add_option("--kinds", inject_kinds, "all or comma-separated kind names");
    inject->add_option("--seed", inject_seed, "rng seed");

    // train
    auto* train = app.add_subcommand("train", "train a detector bundle from benign drives");
    std::string train_in, train_transform = "event_id", train_out = "bundle.json";
    std::vector<int> train_states{5, 15, 20, 30};
    int train_folds = 3, train_restarts = 3, train_iters = 200;
    double train_split = 0.5, train_tau_sigmas = 3.0, train_tol = 1e-5;
    std::uint64_t train_seed = 0;
    train->add_option("--in", train_in, "benign dataset")->required();
    train->add_option("--transform", train_transform, "event_id|discrete");
    train->add_option("--states", train_states, "candidate hidden-state counts")
        ->delimiter(',');
    train->add_option("--folds", train_folds, "cross-validation folds (<2 skips selection)");
    train->add_option("--split", train_split, "fraction of drives for HMM training");
    train->add_option("--seed", train_seed, "rng seed");
    train->add_option("--tau-sigmas", train_tau_sigmas, "alert threshold in residual sigmas");
    train->add_option("--restarts", train_restarts, "training restarts");
    train->add_option("--max-iters", train_iters, "max EM iterations");
    train->add_option("--tol", train_tol, "relative ll convergence tolerance");
    train->add_option("--out", train_out, "bundle output path");

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "score a dataset against a bundle");
    std::string det_bundle, det_in, det_mode = "both", det_out = "-";
    detect_cmd->add_option("--bundle", det_bundle, "detector bundle")->required();
    detect_cmd->add_option("--in", det_in, "dataset to score")->required();
    detect_cmd->add_option("--mode", det_mode, "offline|online|both");
    detect_cmd->add_option("--out", det_out, "scores tsv path, - for stdout");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "run the full experiment grid");
    std::string eval_config, eval_out_dir;
    evaluate->add_option("--config", eval_config, "experiment config json")->required();
    evaluate->add_option("--out-dir", eval_out_dir, "override output directory");

    // serve
    auto* serve = app.add_subcommand("serve", "run the fleet ingestion service");
    std::string serve_store = "fleet-store", serve_listen = "127.0.0.1:8088";
    serve->add_option("--store", serve_store, "bundle/alert store directory");
    serve->add_option("--listen", serve_listen, "host:port");

    // replay
    auto* replay = app.add_subcommand("replay", "stream a dataset into a running service");
    std::string replay_in, replay_to = "127.0.0.1:8088";
    int replay_batch = 500;
    replay->add_option("--in", replay_in, "dataset to stream")->required();
    replay->add_option("--to", replay_to, "host:port of the service");
    replay->add_option("--batch", replay_batch, "events per request");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (simulate->parsed()) {
            sim_cfg.noise = sim::noise_profile(noise_name);
            return cmd_simulate(sim_cfg, sim_out);
        }
        if (inject->parsed())
            return cmd_inject(inject_in, inject_out, inject_mix, inject_kinds, inject_seed);
        if (train->parsed())
            return cmd_train(train_in, train_transform, train_states, train_folds, train_split,
                             train_seed, train_tau_sigmas, train_restarts, train_iters, train_tol,
                             train_out);
        if (detect_cmd->parsed()) return cmd_detect(det_bundle, det_in, det_mode, det_out);
        if (evaluate->parsed()) return cmd_evaluate(eval_config, eval_out_dir);
        if (serve->parsed()) return cmd_serve(serve_store, serve_listen);
        if (replay->parsed()) return cmd_replay(replay_in, replay_to, replay_batch);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
