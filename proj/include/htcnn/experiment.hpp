#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "htcnn/config.hpp"
#include "htcnn/data.hpp"
#include "htcnn/metrics.hpp"
#include "htcnn/train.hpp"
#include "htcnn/transfer.hpp"
#include "htcnn/zoo.hpp"

namespace htcnn {

// ---------------------------------------------------------------------------
// Experiment pipeline: per (m, seed), train m shallow nets, transplant their
// first layers into a partitioned cloud first layer, then train that net and
// an identically-initialized-elsewhere baseline on identical batch sequences.
// Report layout:
//   <output_dir>/config_snapshot.ini        effective config, defaults included
//   <output_dir>/paper_scale.ini            full-scale config, emitted not run
//   <output_dir>/report.txt                 human-readable summary
//   <output_dir>/m<k>/metrics.csv           AAG/PBP rows aggregated over seeds
//   <output_dir>/m<k>/plot.dat              curve columns for external plotting
//   <output_dir>/m<k>/seed_<s>/             checkpoints + curve CSVs
// ---------------------------------------------------------------------------

struct DataAssignment {
    std::vector<Dataset> storage;               // owns locality subsets
    const Dataset* cloud_train = nullptr;
    std::vector<const Dataset*> shallow_train;  // size m
};

// identical-data: everyone sees the whole training set. data-locality: split
// into m+1 disjoint stratified subsets; subset 1 trains the cloud net, subset
// j+1 trains shallow net j.
inline DataAssignment assign_training_data(const Dataset& train, DataMode mode, std::int64_t m,
                                           std::uint64_t split_seed) {
    DataAssignment a;
    if (mode == DataMode::IdenticalData) {
        a.cloud_train = &train;
        a.shallow_train.assign(static_cast<std::size_t>(m), &train);
    } else {
        a.storage = stratified_split(train, m + 1, split_seed);
        a.cloud_train = &a.storage[0];
        for (std::int64_t j = 0; j < m; ++j) a.shallow_train.push_back(&a.storage[j + 1]);
    }
    return a;
}

// Loads (or synthesizes) the train/test pair, applies the optional stratified
// training subset, then mean-image preprocessing.
inline CifarData resolve_dataset(const ExperimentConfig& e) {
    CifarData d;
    if (e.dataset == DatasetKind::Synthetic) {
        d = make_synthetic(e.synthetic);
    } else {
        if (e.data_root.empty()) {
            throw config_error(
                "dataset = cifar10 needs a data root (config data_root or HTCNN_DATA_ROOT)");
        }
        d = load_cifar10(e.data_root);
    }
    if (e.train_subset > 0) {
        d.train = stratified_subset(d.train, e.train_subset, e.split_seed);
    }
    preprocess_mean_subtract(d.train, d.test);
    return d;
}

struct SeedOutcome {
    std::int64_t seed = 0;
    bool ok = false;
    std::string error;
    PairedCurves curves;
    double aag_full = 0.0;
    double pbp_full = 0.0;
    double aag_early = 0.0;
    double shallow_wall_s = 0.0;   // all m shallow trainings
    double cc_wall_s = 0.0;
    double ht_wall_s = 0.0;
};

struct MRunOutcome {
    std::int64_t m = 0;
    std::vector<SeedOutcome> seeds;
    std::vector<MetricRow> metrics;
};

struct ExperimentOutcome {
    std::filesystem::path report_dir;
    std::vector<MRunOutcome> runs;

    bool all_seeds_ok() const {
        for (const MRunOutcome& r : runs) {
            for (const SeedOutcome& s : r.seeds) {
                if (!s.ok) return false;
            }
        }
        return true;
    }
};

namespace detail {

inline ArchitectureConfig arch_config_for(const ExperimentConfig& e, std::int64_t m,
                                          const Dataset& train, const TrainConfig& t,
                                          bool shallow) {
    ArchitectureConfig a;
    a.input_shape = train.item_shape();
    a.num_classes = train.num_classes;
    a.conv_keep = t.dropout_conv_keep;
    a.fc_keep = t.dropout_fc_keep;
    if (shallow) {
        a.first_layer_filters = e.cloud_conv1_filters / m;
    } else {
        a.cloud_filters[0] = e.cloud_conv1_filters;
    }
    return a;
}

inline SeedOutcome run_one_seed(const ExperimentConfig& e, std::int64_t m, std::int64_t seed,
                                const DataAssignment& data, const Dataset& test,
                                const std::filesystem::path& seed_dir) {
    namespace fs = std::filesystem;
    SeedOutcome out;
    out.seed = seed;
    fs::create_directories(seed_dir);
    TrainOptions opts;
    opts.timing = e.timing;

    // m donors
    FilterBank bank;
    for (std::int64_t j = 0; j < m; ++j) {
        ModelGraph net = build_shallow_cifar(
            arch_config_for(e, m, *data.shallow_train[j], e.shallow, true));
        Rng init_rng(mix_seed(static_cast<std::uint64_t>(seed), "shallow-init", j));
        init_random(net, init_rng);
        TrainConfig cfg = e.shallow;
        cfg.seed = mix_seed(static_cast<std::uint64_t>(seed), "shallow-net", j);
        opts.abort_checkpoint_path =
            (seed_dir / ("shallow_" + std::to_string(j + 1) + "_abort.ckpt")).string();
        TrainResult r = train(net, *data.shallow_train[j], test, cfg, opts);
        out.shallow_wall_s += r.wall_clock_s;
        save_checkpoint(r.final_checkpoint,
                        (seed_dir / ("shallow_" + std::to_string(j + 1) + ".ckpt")).string());
        write_curve_csv(r.curve,
                        (seed_dir / ("shallow_" + std::to_string(j + 1) + "_curve.csv")).string());
        bank.append(extract_first_layer(r.model));
    }

    // one random cloud init, shared by both nets; transplant only conv1
    ModelGraph base = build_cloud_cifar(arch_config_for(e, m, *data.cloud_train, e.cloud, false));
    Rng cloud_init_rng(mix_seed(static_cast<std::uint64_t>(seed), "cloud-init", 0));
    init_random(base, cloud_init_rng);
    ModelGraph cc_model = base;
    ModelGraph ht_model = base;
    inject(ht_model, bank, make_partition_plan(e.cloud_conv1_filters, m));

    TrainConfig cloud_cfg = e.cloud;
    cloud_cfg.seed = mix_seed(static_cast<std::uint64_t>(seed), "cloud-train", 0);

    opts.abort_checkpoint_path = (seed_dir / "ccnn_abort.ckpt").string();
    TrainResult cc = train(cc_model, *data.cloud_train, test, cloud_cfg, opts);
    out.cc_wall_s = cc.wall_clock_s;
    save_checkpoint(cc.final_checkpoint, (seed_dir / "ccnn.ckpt").string());
    write_curve_csv(cc.curve, (seed_dir / "ccnn_curve.csv").string());

    opts.abort_checkpoint_path = (seed_dir / "htcnn_abort.ckpt").string();
    TrainResult ht = train(ht_model, *data.cloud_train, test, cloud_cfg, opts);
    out.ht_wall_s = ht.wall_clock_s;
    save_checkpoint(ht.final_checkpoint, (seed_dir / "htcnn.ckpt").string());
    write_curve_csv(ht.curve, (seed_dir / "htcnn_curve.csv").string());

    out.curves = PairedCurves{std::move(ht.curve), std::move(cc.curve)};
    out.aag_full = aag(out.curves);
    out.pbp_full = pbp(out.curves);
    out.aag_early = early_aag(out.curves, static_cast<std::size_t>(e.early_window_points));
    out.ok = true;
    return out;
}

inline void write_plot_data(const MRunOutcome& run, const std::filesystem::path& path) {
    std::vector<const SeedOutcome*> good;
    for (const SeedOutcome& s : run.seeds) {
        if (s.ok) good.push_back(&s);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write plot data: " + path.string());
    out << "# iteration epoch ht_mean ht_min ht_max cc_mean cc_min cc_max gain_mean\n";
    if (good.empty()) return;
    const std::size_t npts = good[0]->curves.ht.points.size();
    char buf[400];
    for (std::size_t i = 0; i < npts; ++i) {
        double ht_sum = 0, ht_min = 1e300, ht_max = -1e300;
        double cc_sum = 0, cc_min = 1e300, cc_max = -1e300;
        for (const SeedOutcome* s : good) {
            const double h = s->curves.ht.points[i].test_accuracy;
            const double c = s->curves.cc.points[i].test_accuracy;
            ht_sum += h;
            ht_min = std::min(ht_min, h);
            ht_max = std::max(ht_max, h);
            cc_sum += c;
            cc_min = std::min(cc_min, c);
            cc_max = std::max(cc_max, c);
        }
        const double n = static_cast<double>(good.size());
        std::snprintf(buf, sizeof(buf), "%lld %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                      static_cast<long long>(good[0]->curves.ht.points[i].iteration),
                      good[0]->curves.ht.points[i].epoch, ht_sum / n, ht_min, ht_max, cc_sum / n,
                      cc_min, cc_max, (ht_sum - cc_sum) / n);
        out << buf;
    }
}

inline std::vector<MetricRow> aggregate_run_metrics(const ExperimentConfig& e,
                                                    const MRunOutcome& run) {
    std::vector<double> aags, pbps, earlies;
    double first_epoch = 0.0, last_epoch = 0.0, early_end = 0.0;
    bool have_window = false;
    for (const SeedOutcome& s : run.seeds) {
        if (!s.ok) continue;
        aags.push_back(s.aag_full);
        pbps.push_back(s.pbp_full);
        earlies.push_back(s.aag_early);
        if (!have_window) {
            const auto& pts = s.curves.ht.points;
            first_epoch = pts.front().epoch;
            last_epoch = pts.back().epoch;
            const std::size_t ei =
                std::min(pts.size(), static_cast<std::size_t>(e.early_window_points)) - 1;
            early_end = pts[ei].epoch;
            have_window = true;
        }
    }
    std::vector<MetricRow> rows;
    if (!aags.empty()) {
        rows.push_back(aggregate_metric("aag", first_epoch, last_epoch, aags));
        rows.push_back(aggregate_metric("pbp", first_epoch, last_epoch, pbps));
        rows.push_back(aggregate_metric("early_aag", first_epoch, early_end, earlies));
    }
    return rows;
}

}  // namespace detail

// The ready-to-run full-scale configuration (written into every report, never
// executed here): full CIFAR-10, m=4, nine seeds, 200 epochs of 1,000
// iterations at batch 100.
inline ExperimentConfig paper_scale_config(DataMode mode) {
    ExperimentConfig e;
    e.mode = mode;
    e.m_values = {4};
    e.dropout = false;
    e.dataset = DatasetKind::Cifar10;
    e.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    e.output_dir = "paper_scale_out";
    e.train_subset = 0;
    e.shallow.max_iterations = 10000;
    e.shallow.eval_every = 1000;
    e.shallow.batch_size = 100;
    e.cloud.max_iterations = 200000;
    e.cloud.eval_every = 1000;
    e.cloud.batch_size = 100;
    return e;
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& e) {
    namespace fs = std::filesystem;
    e.validate();
    ExperimentOutcome outcome;
    outcome.report_dir = fs::path(e.output_dir);
    fs::create_directories(outcome.report_dir);

    {
        std::ofstream snap(outcome.report_dir / "config_snapshot.ini", std::ios::trunc);
        snap << experiment_to_text(e);
    }
    {
        std::ofstream paper(outcome.report_dir / "paper_scale.ini", std::ios::trunc);
        paper << "# Full-scale configuration (200 epochs x 1,000 iterations, nine seeds,\n"
                 "# full CIFAR-10). Written for reference and external execution; this run\n"
                 "# did not execute it.\n";
        paper << experiment_to_text(paper_scale_config(e.mode));
    }

    const CifarData data = resolve_dataset(e);

    std::string report;
    report += "hierarchical transfer experiment report\n";
    report += "========================================\n";
    report += "mode: " + std::string(e.mode == DataMode::IdenticalData ? "identical-data"
                                                                       : "data-locality") + "\n";
    report += "dataset: " + data.train.name + " (" + std::to_string(data.train.size()) +
              " train / " + std::to_string(data.test.size()) + " test)\n";
    report += "dropout: " + std::string(e.dropout ? "on" : "off") + "\n\n";

    char buf[512];
    for (std::int64_t m : e.m_values) {
        MRunOutcome run;
        run.m = m;
        const fs::path m_dir = outcome.report_dir / ("m" + std::to_string(m));
        fs::create_directories(m_dir);
        const DataAssignment assignment =
            assign_training_data(data.train, e.mode, m, e.split_seed);

        report += "[m=" + std::to_string(m) + "] shallow first-layer width " +
                  std::to_string(e.cloud_conv1_filters / m) + ", cloud first layer " +
                  std::to_string(e.cloud_conv1_filters) + "\n";
        for (std::int64_t seed : e.seeds) {
            const fs::path seed_dir = m_dir / ("seed_" + std::to_string(seed));
            SeedOutcome s;
            try {
                s = detail::run_one_seed(e, m, seed, assignment, data.test, seed_dir);
            } catch (const std::exception& ex) {
                s.seed = seed;
                s.ok = false;
                s.error = ex.what();
            }
            if (s.ok) {
                std::snprintf(buf, sizeof(buf),
                              "  seed %lld: AAG=%+.4f PBP=%.4f early-AAG(first %lld pts)=%+.4f | "
                              "wall: shallow %.1fs, baseline %.1fs, transfer %.1fs\n",
                              static_cast<long long>(seed), s.aag_full, s.pbp_full,
                              static_cast<long long>(e.early_window_points), s.aag_early,
                              s.shallow_wall_s, s.cc_wall_s, s.ht_wall_s);
                report += buf;
            } else {
                report += "  seed " + std::to_string(seed) + ": FAILED: " + s.error + "\n";
            }
            run.seeds.push_back(std::move(s));
        }
        run.metrics = detail::aggregate_run_metrics(e, run);
        if (!run.metrics.empty()) {
            write_metrics_csv(run.metrics, (m_dir / "metrics.csv").string());
            for (const MetricRow& r : run.metrics) {
                std::snprintf(buf, sizeof(buf),
                              "  %s over epochs [%g,%g]: mean=%+.4f min=%+.4f max=%+.4f (%lld seeds)\n",
                              r.metric.c_str(), r.window_start, r.window_end, r.mean, r.min, r.max,
                              static_cast<long long>(r.seeds));
                report += buf;
            }
        }
        detail::write_plot_data(run, m_dir / "plot.dat");
        report += "\n";
        outcome.runs.push_back(std::move(run));
    }

    report += "notes:\n";
    report +=
        "- curve wall clocks cover cloud training only; shallow training time is listed\n"
        "  separately above, so either accounting (with or without donor training) can be read.\n";
    report += "- paper_scale.ini holds the full-scale configuration; it was not executed here.\n";
    std::ofstream rep(outcome.report_dir / "report.txt", std::ios::trunc);
    rep << report;
    return outcome;
}

}  // namespace htcnn
