#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "htcnn/data.hpp"
#include "htcnn/tensor.hpp"
#include "htcnn/train.hpp"

namespace htcnn {

// ---------------------------------------------------------------------------
// Flat key = value text with [section] headers and # comments. Strict: every
// key must be consumed by the schema below, so typos fail loudly.
// ---------------------------------------------------------------------------

struct ParsedConfig {
    // section -> key -> value; top-of-file keys live in section ""
    std::map<std::string, std::map<std::string, std::string>> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline ParsedConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
    ParsedConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = origin + " line " + std::to_string(line_no);
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw config_error(where + ": unterminated section header");
            section = detail::trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw config_error(where + ": empty section name");
            cfg.sections[section];
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw config_error(where + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) throw config_error(where + ": empty key");
        if (!cfg.sections[section].emplace(key, value).second) {
            throw config_error(where + ": duplicate key '" + key + "'");
        }
    }
    return cfg;
}

inline ParsedConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

namespace detail {

// Tracks which keys the schema consumed so leftovers can be reported.
class SectionReader {
public:
    SectionReader(const ParsedConfig& cfg, const std::string& section)
        : section_(section) {
        auto it = cfg.sections.find(section);
        if (it != cfg.sections.end()) kv_ = &it->second;
    }

    bool has(const std::string& key) const { return kv_ && kv_->count(key); }

    std::string str(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        used_.insert(key);
        return kv_->at(key);
    }

    double num(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        used_.insert(key);
        return parse_double(key, kv_->at(key));
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        if (!has(key)) return fallback;
        used_.insert(key);
        return parse_int(key, kv_->at(key));
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        used_.insert(key);
        const std::string v = kv_->at(key);
        if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
        if (v == "off" || v == "false" || v == "0" || v == "no") return false;
        throw config_error(where(key) + ": expected on/off, got '" + v + "'");
    }

    std::vector<std::int64_t> int_list(const std::string& key,
                                       const std::vector<std::int64_t>& fallback) {
        if (!has(key)) return fallback;
        used_.insert(key);
        std::vector<std::int64_t> out;
        std::string item;
        std::istringstream in(kv_->at(key));
        while (std::getline(in, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            out.push_back(parse_int(key, item));
        }
        if (out.empty()) throw config_error(where(key) + ": empty list");
        return out;
    }

    void finish() const {
        if (!kv_) return;
        for (const auto& [key, value] : *kv_) {
            if (!used_.count(key)) throw config_error(where(key) + ": unknown key");
        }
    }

private:
    std::string where(const std::string& key) const {
        return (section_.empty() ? std::string("config") : "config section [" + section_ + "]") +
               " key '" + key + "'";
    }
    double parse_double(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw config_error(where(key) + ": expected a number, got '" + v + "'");
        }
    }
    std::int64_t parse_int(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const std::int64_t i = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return i;
        } catch (const std::exception&) {
            throw config_error(where(key) + ": expected an integer, got '" + v + "'");
        }
    }

    std::string section_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::set<std::string> used_;
};

inline TrainConfig read_train_section(const ParsedConfig& cfg, const std::string& section,
                                      const TrainConfig& defaults, bool dropout_on) {
    SectionReader r(cfg, section);
    TrainConfig t = defaults;
    t.learning_rate = r.num("learning_rate", defaults.learning_rate);
    t.momentum = r.num("momentum", defaults.momentum);
    t.batch_size = r.integer("batch_size", defaults.batch_size);
    t.max_iterations = r.integer("max_iterations", defaults.max_iterations);
    t.eval_every = r.integer("eval_every", defaults.eval_every);
    const double conv_keep_default = dropout_on ? 0.8 : 1.0;
    const double fc_keep_default = dropout_on ? 0.5 : 1.0;
    t.dropout_conv_keep = r.num("dropout_conv_keep", conv_keep_default);
    t.dropout_fc_keep = r.num("dropout_fc_keep", fc_keep_default);
    r.finish();
    t.validate();
    return t;
}

}  // namespace detail

enum class DataMode { IdenticalData, DataLocality };
enum class DatasetKind { Cifar10, Synthetic };

// Everything one experiment run needs: the data regime, shallow-net count(s),
// both training configs, seeds, and output location. m values other than the
// stock {1,2,4,8,16} are accepted as long as they divide the first-layer width.
struct ExperimentConfig {
    DataMode mode = DataMode::IdenticalData;
    std::vector<std::int64_t> m_values{4};
    bool dropout = false;
    DatasetKind dataset = DatasetKind::Synthetic;
    std::vector<std::int64_t> seeds{1, 2, 3};
    std::string output_dir = "out";
    TimingMode timing = TimingMode::Wall;
    std::int64_t train_subset = 0;               // 0 = whole training set
    std::int64_t cloud_conv1_filters = 32;
    std::int64_t early_window_points = 3;
    std::uint64_t split_seed = 97;               // subset/locality partitions
    std::string data_root;                       // CIFAR-10 directory
    TrainConfig shallow;
    TrainConfig cloud;
    SyntheticSpec synthetic;

    void validate() const {
        static const std::set<std::int64_t> stock{1, 2, 4, 8, 16};
        for (std::int64_t m : m_values) {
            if (m < 1 || cloud_conv1_filters % m != 0) {
                throw config_error("m=" + std::to_string(m) + " does not divide the first-layer width " +
                                   std::to_string(cloud_conv1_filters) +
                                   (stock.count(m) ? "" : " (and is not one of 1,2,4,8,16)"));
            }
        }
        if (seeds.empty()) throw config_error("experiment needs at least one seed");
        if (early_window_points < 1) throw config_error("early window must cover >= 1 point");
        if (output_dir.empty()) throw config_error("experiment needs an output directory");
        shallow.validate();
        cloud.validate();
    }
};

inline ExperimentConfig experiment_from_parsed(const ParsedConfig& cfg) {
    detail::SectionReader r(cfg, "experiment");
    ExperimentConfig e;

    const std::string mode = r.str("mode", "identical-data");
    if (mode == "identical-data") e.mode = DataMode::IdenticalData;
    else if (mode == "data-locality") e.mode = DataMode::DataLocality;
    else throw config_error("mode must be identical-data or data-locality, got '" + mode + "'");

    e.m_values = r.int_list("m", {4});
    e.dropout = r.flag("dropout", false);

    const std::string ds = r.str("dataset", "synthetic");
    if (ds == "cifar10") e.dataset = DatasetKind::Cifar10;
    else if (ds == "synthetic") e.dataset = DatasetKind::Synthetic;
    else throw config_error("dataset must be cifar10 or synthetic, got '" + ds + "'");

    e.seeds = r.int_list("seeds", {1, 2, 3});
    e.output_dir = r.str("output_dir", "out");

    const std::string timing = r.str("timing", "wall");
    if (timing == "wall") e.timing = TimingMode::Wall;
    else if (timing == "logical") e.timing = TimingMode::Logical;
    else throw config_error("timing must be wall or logical, got '" + timing + "'");

    e.train_subset = r.integer("train_subset", 0);
    e.cloud_conv1_filters = r.integer("cloud_conv1_filters", 32);
    e.early_window_points = r.integer("early_window_points", 3);
    e.split_seed = static_cast<std::uint64_t>(r.integer("split_seed", 97));
    e.data_root = r.str("data_root", "");
    r.finish();

    TrainConfig shallow_defaults;
    shallow_defaults.max_iterations = 2000;
    shallow_defaults.eval_every = 500;
    e.shallow = detail::read_train_section(cfg, "shallow", shallow_defaults, e.dropout);
    TrainConfig cloud_defaults;   // paper values: lr 0.01, momentum 0.9, batch 100, 10k iters
    e.cloud = detail::read_train_section(cfg, "cloud", cloud_defaults, e.dropout);

    detail::SectionReader s(cfg, "synthetic");
    e.synthetic.num_train = s.integer("num_train", e.synthetic.num_train);
    e.synthetic.num_test = s.integer("num_test", e.synthetic.num_test);
    e.synthetic.classes = s.integer("classes", e.synthetic.classes);
    e.synthetic.blobs_per_class = s.integer("blobs_per_class", e.synthetic.blobs_per_class);
    e.synthetic.amplitude = s.num("amplitude", e.synthetic.amplitude);
    e.synthetic.noise = s.num("noise", e.synthetic.noise);
    e.synthetic.max_shift = s.integer("max_shift", e.synthetic.max_shift);
    e.synthetic.seed = static_cast<std::uint64_t>(s.integer("seed", static_cast<std::int64_t>(e.synthetic.seed)));
    s.finish();

    for (const auto& [name, kv] : cfg.sections) {
        if (name != "" && name != "experiment" && name != "shallow" && name != "cloud" &&
            name != "synthetic") {
            throw config_error("unknown config section [" + name + "]");
        }
        if (name == "" && !kv.empty()) {
            throw config_error("top-level key '" + kv.begin()->first +
                               "' must live inside a section");
        }
    }
    e.validate();
    return e;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    return experiment_from_parsed(parse_config_file(path));
}

// Full effective configuration, defaults included — written into every report
// so a run can be reproduced from its artifacts alone.
inline std::string experiment_to_text(const ExperimentConfig& e) {
    char buf[128];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    auto list = [](const std::vector<std::int64_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(v[i]);
        }
        return s;
    };
    std::string out;
    out += "[experiment]\n";
    out += "mode = " + std::string(e.mode == DataMode::IdenticalData ? "identical-data"
                                                                     : "data-locality") + "\n";
    out += "m = " + list(e.m_values) + "\n";
    out += "dropout = " + std::string(e.dropout ? "on" : "off") + "\n";
    out += "dataset = " + std::string(e.dataset == DatasetKind::Cifar10 ? "cifar10" : "synthetic") + "\n";
    out += "seeds = " + list(e.seeds) + "\n";
    out += "output_dir = " + e.output_dir + "\n";
    out += "timing = " + std::string(e.timing == TimingMode::Wall ? "wall" : "logical") + "\n";
    out += "train_subset = " + std::to_string(e.train_subset) + "\n";
    out += "cloud_conv1_filters = " + std::to_string(e.cloud_conv1_filters) + "\n";
    out += "early_window_points = " + std::to_string(e.early_window_points) + "\n";
    out += "split_seed = " + std::to_string(e.split_seed) + "\n";
    if (!e.data_root.empty()) out += "data_root = " + e.data_root + "\n";
    auto train_section = [&](const char* name, const TrainConfig& t) {
        out += std::string("\n[") + name + "]\n";
        out += "learning_rate = " + num(t.learning_rate) + "\n";
        out += "momentum = " + num(t.momentum) + "\n";
        out += "batch_size = " + std::to_string(t.batch_size) + "\n";
        out += "max_iterations = " + std::to_string(t.max_iterations) + "\n";
        out += "eval_every = " + std::to_string(t.eval_every) + "\n";
        out += "dropout_conv_keep = " + num(t.dropout_conv_keep) + "\n";
        out += "dropout_fc_keep = " + num(t.dropout_fc_keep) + "\n";
    };
    train_section("shallow", e.shallow);
    train_section("cloud", e.cloud);
    out += "\n[synthetic]\n";
    out += "num_train = " + std::to_string(e.synthetic.num_train) + "\n";
    out += "num_test = " + std::to_string(e.synthetic.num_test) + "\n";
    out += "classes = " + std::to_string(e.synthetic.classes) + "\n";
    out += "blobs_per_class = " + std::to_string(e.synthetic.blobs_per_class) + "\n";
    out += "amplitude = " + num(e.synthetic.amplitude) + "\n";
    out += "noise = " + num(e.synthetic.noise) + "\n";
    out += "max_shift = " + std::to_string(e.synthetic.max_shift) + "\n";
    out += "seed = " + std::to_string(e.synthetic.seed) + "\n";
    return out;
}

}  // namespace htcnn
