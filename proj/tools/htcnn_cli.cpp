// Command-line harness for the hierarchical-transfer CNN pipeline:
//   train-shallow    train the m donor nets and write their checkpoints
//   build-cloud      assemble a cloud-net init checkpoint (with or without transplant)
//   run-experiment   full paired transfer-vs-baseline experiment grid
//   metrics          recompute AAG/PBP from curve CSVs
//   split-data       write stratified CIFAR-format subset files
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "htcnn/htcnn.hpp"

namespace {

constexpr const char* kDataRootEnv = "HTCNN_DATA_ROOT";

htcnn::ExperimentConfig load_config(const std::string& path, const std::string& out_override,
                                    std::int64_t seed_override) {
    htcnn::ExperimentConfig cfg = htcnn::load_experiment_config(path);
    if (const char* env_root = std::getenv(kDataRootEnv); env_root && *env_root) {
        cfg.data_root = env_root;
    }
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_override >= 0) cfg.seeds = {seed_override};
    cfg.validate();
    return cfg;
}

int cmd_train_shallow(const std::string& config_path, const std::string& out_override,
                      std::int64_t seed_override) {
    namespace fs = std::filesystem;
    const htcnn::ExperimentConfig cfg = load_config(config_path, out_override, seed_override);
    const std::int64_t m = cfg.m_values.front();
    const std::int64_t seed = cfg.seeds.front();
    const htcnn::CifarData data = htcnn::resolve_dataset(cfg);
    const htcnn::DataAssignment assignment =
        htcnn::assign_training_data(data.train, cfg.mode, m, cfg.split_seed);

    const fs::path out_dir = fs::path(cfg.output_dir) / "shallow";
    fs::create_directories(out_dir);
    for (std::int64_t j = 0; j < m; ++j) {
        htcnn::ArchitectureConfig arch;
        arch.input_shape = data.train.item_shape();
        arch.num_classes = data.train.num_classes;
        arch.first_layer_filters = cfg.cloud_conv1_filters / m;
        arch.conv_keep = cfg.shallow.dropout_conv_keep;
        arch.fc_keep = cfg.shallow.dropout_fc_keep;
        htcnn::ModelGraph net = htcnn::build_shallow_cifar(arch);
        htcnn::Rng init_rng(htcnn::mix_seed(static_cast<std::uint64_t>(seed), "shallow-init", j));
        htcnn::init_random(net, init_rng);
        htcnn::TrainConfig tc = cfg.shallow;
        tc.seed = htcnn::mix_seed(static_cast<std::uint64_t>(seed), "shallow-net", j);
        htcnn::TrainOptions opts;
        opts.timing = cfg.timing;
        opts.abort_checkpoint_path =
            (out_dir / ("shallow_" + std::to_string(j + 1) + "_abort.ckpt")).string();
        htcnn::TrainResult r = htcnn::train(net, *assignment.shallow_train[j], data.test, tc, opts);
        const fs::path ckpt = out_dir / ("shallow_" + std::to_string(j + 1) + ".ckpt");
        htcnn::save_checkpoint(r.final_checkpoint, ckpt.string());
        htcnn::write_curve_csv(r.curve,
                               (out_dir / ("shallow_" + std::to_string(j + 1) + "_curve.csv")).string());
        std::printf("shallow %lld/%lld: final test accuracy %.4f, wall %.1fs -> %s\n",
                    static_cast<long long>(j + 1), static_cast<long long>(m),
                    r.curve.points.back().test_accuracy, r.wall_clock_s, ckpt.string().c_str());
    }
    return 0;
}

int cmd_build_cloud(const std::string& config_path, const std::string& out_override,
                    std::int64_t seed_override, const std::vector<std::string>& shallow_ckpts) {
    namespace fs = std::filesystem;
    const htcnn::ExperimentConfig cfg = load_config(config_path, out_override, seed_override);
    const std::int64_t m = cfg.m_values.front();
    const std::int64_t seed = cfg.seeds.front();

    htcnn::ArchitectureConfig arch;
    arch.cloud_filters[0] = cfg.cloud_conv1_filters;
    arch.conv_keep = cfg.cloud.dropout_conv_keep;
    arch.fc_keep = cfg.cloud.dropout_fc_keep;
    if (cfg.dataset == htcnn::DatasetKind::Synthetic) {
        arch.input_shape = {cfg.synthetic.channels, cfg.synthetic.height, cfg.synthetic.width};
        arch.num_classes = cfg.synthetic.classes;
    }
    htcnn::ModelGraph cloud = htcnn::build_cloud_cifar(arch);
    htcnn::Rng init_rng(htcnn::mix_seed(static_cast<std::uint64_t>(seed), "cloud-init", 0));
    htcnn::init_random(cloud, init_rng);

    const char* kind = "baseline (plain random init)";
    if (!shallow_ckpts.empty()) {
        if (static_cast<std::int64_t>(shallow_ckpts.size()) != m) {
            throw htcnn::config_error("config expects m=" + std::to_string(m) + " donors but " +
                                      std::to_string(shallow_ckpts.size()) +
                                      " shallow checkpoints were given");
        }
        htcnn::FilterBank bank;
        for (const std::string& path : shallow_ckpts) {
            bank.append(htcnn::first_layer_from_checkpoint(htcnn::load_checkpoint(path)));
        }
        htcnn::inject(cloud, bank, htcnn::make_partition_plan(cfg.cloud_conv1_filters, m));
        kind = "transfer-initialized";
    }

    htcnn::OptimizerState opt = htcnn::OptimizerState::for_params(
        cloud.params, static_cast<float>(cfg.cloud.learning_rate),
        static_cast<float>(cfg.cloud.momentum));
    htcnn::Rng train_rng(htcnn::mix_seed(static_cast<std::uint64_t>(seed), "dropout", 0));
    const htcnn::Checkpoint ckpt = htcnn::make_checkpoint(cloud, opt, 0, train_rng);
    fs::create_directories(cfg.output_dir);
    const fs::path out_path = fs::path(cfg.output_dir) /
                              (shallow_ckpts.empty() ? "ccnn_init.ckpt" : "htcnn_init.ckpt");
    htcnn::save_checkpoint(ckpt, out_path.string());
    std::printf("%s cloud checkpoint -> %s\n", kind, out_path.string().c_str());
    return 0;
}

int cmd_run_experiment(const std::string& config_path, const std::string& out_override,
                       std::int64_t seed_override) {
    const htcnn::ExperimentConfig cfg = load_config(config_path, out_override, seed_override);
    const htcnn::ExperimentOutcome outcome = htcnn::run_experiment(cfg);
    for (const htcnn::MRunOutcome& run : outcome.runs) {
        for (const htcnn::SeedOutcome& s : run.seeds) {
            if (s.ok) {
                std::printf("m=%lld seed %lld: AAG=%+.4f PBP=%.4f early-AAG=%+.4f\n",
                            static_cast<long long>(run.m), static_cast<long long>(s.seed),
                            s.aag_full, s.pbp_full, s.aag_early);
            } else {
                std::printf("m=%lld seed %lld: FAILED: %s\n", static_cast<long long>(run.m),
                            static_cast<long long>(s.seed), s.error.c_str());
            }
        }
    }
    std::printf("report: %s\n", (outcome.report_dir / "report.txt").string().c_str());
    return 0;
}

int cmd_metrics(const std::vector<std::string>& ht_paths, const std::vector<std::string>& cc_paths,
                std::int64_t early_points, const std::string& out_path) {
    if (ht_paths.size() != cc_paths.size() || ht_paths.empty()) {
        throw htcnn::config_error("need equally many --ht and --cc curve files (at least one pair)");
    }
    std::vector<double> aags, pbps, earlies;
    double first_epoch = 0, last_epoch = 0, early_end = 0;
    for (std::size_t i = 0; i < ht_paths.size(); ++i) {
        htcnn::PairedCurves paired{htcnn::read_curve_csv(ht_paths[i]),
                                   htcnn::read_curve_csv(cc_paths[i])};
        aags.push_back(htcnn::aag(paired));
        pbps.push_back(htcnn::pbp(paired));
        earlies.push_back(htcnn::early_aag(paired, static_cast<std::size_t>(early_points)));
        if (i == 0) {
            const auto& pts = paired.ht.points;
            first_epoch = pts.front().epoch;
            last_epoch = pts.back().epoch;
            early_end = pts[std::min(pts.size(), static_cast<std::size_t>(early_points)) - 1].epoch;
        }
    }
    std::vector<htcnn::MetricRow> rows;
    rows.push_back(htcnn::aggregate_metric("aag", first_epoch, last_epoch, aags));
    rows.push_back(htcnn::aggregate_metric("pbp", first_epoch, last_epoch, pbps));
    rows.push_back(htcnn::aggregate_metric("early_aag", first_epoch, early_end, earlies));
    const std::string csv = htcnn::metrics_to_csv(rows);
    if (out_path.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw htcnn::data_error("cannot write metrics CSV: " + out_path);
        out << csv;
        std::printf("metrics -> %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_split_data(std::string data_root, std::int64_t k, std::int64_t seed,
                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (const char* env_root = std::getenv(kDataRootEnv); env_root && *env_root && data_root.empty()) {
        data_root = env_root;
    }
    if (data_root.empty()) {
        throw htcnn::config_error("split-data needs --data-root or " + std::string(kDataRootEnv));
    }
    const htcnn::CifarData data = htcnn::load_cifar10(data_root);
    const std::vector<htcnn::Dataset> subsets =
        htcnn::stratified_split(data.train, k, static_cast<std::uint64_t>(seed));
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < subsets.size(); ++i) {
        const fs::path path = fs::path(out_dir) / ("subset_" + std::to_string(i + 1) + ".bin");
        htcnn::write_cifar_batch(subsets[i], path.string());
        const std::vector<std::int64_t> counts = htcnn::class_counts(subsets[i]);
        std::string line = "subset " + std::to_string(i + 1) + " (" +
                           std::to_string(subsets[i].size()) + " records):";
        for (std::int64_t c : counts) line += " " + std::to_string(c);
        std::printf("%s -> %s\n", line.c_str(), path.string().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical-transfer CNN experiment harness"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    std::int64_t seed_override = -1;

    auto add_common = [&](CLI::App* sub, bool config_required = true) {
        sub->add_option("--config", config_path, "experiment config file (key = value sections)")
            ->required(config_required);
        sub->add_option("--out", out_override, "override the configured output directory");
        sub->add_option("--seed-override", seed_override, "replace the configured seed list");
    };

    CLI::App* train_shallow = app.add_subcommand("train-shallow", "train the m donor nets");
    add_common(train_shallow);

    CLI::App* build_cloud =
        app.add_subcommand("build-cloud", "assemble a cloud-net initialization checkpoint");
    add_common(build_cloud);
    std::vector<std::string> shallow_ckpts;
    build_cloud->add_option("--shallow", shallow_ckpts,
                            "donor checkpoints in slot order (omit for the plain baseline)");

    CLI::App* run_exp = app.add_subcommand("run-experiment", "run the paired transfer experiment");
    add_common(run_exp);

    CLI::App* metrics = app.add_subcommand("metrics", "recompute curve metrics from CSVs");
    std::vector<std::string> ht_paths, cc_paths;
    std::string metrics_out;
    std::int64_t early_points = 3;
    metrics->add_option("--ht", ht_paths, "transfer-net curve CSV (repeat per seed)")->required();
    metrics->add_option("--cc", cc_paths, "baseline curve CSV (repeat per seed)")->required();
    metrics->add_option("--early-points", early_points, "points in the early window (default 3)");
    metrics->add_option("--out", metrics_out, "metrics CSV path (default: stdout)");

    CLI::App* split = app.add_subcommand("split-data", "write stratified CIFAR subset files");
    std::string data_root, split_out = "splits";
    std::int64_t split_k = 5, split_seed = 97;
    split->add_option("--data-root", data_root, "CIFAR-10 binary batch directory");
    split->add_option("--k", split_k, "number of subsets (default 5)");
    split->add_option("--seed", split_seed, "split seed (default 97)");
    split->add_option("--out", split_out, "output directory (default ./splits)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_shallow->parsed()) {
            return cmd_train_shallow(config_path, out_override, seed_override);
        }
        if (build_cloud->parsed()) {
            return cmd_build_cloud(config_path, out_override, seed_override, shallow_ckpts);
        }
        if (run_exp->parsed()) return cmd_run_experiment(config_path, out_override, seed_override);
        if (metrics->parsed()) return cmd_metrics(ht_paths, cc_paths, early_points, metrics_out);
        if (split->parsed()) return cmd_split_data(data_root, split_k, split_seed, split_out);
    } catch (const htcnn::config_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const htcnn::numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const htcnn::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
