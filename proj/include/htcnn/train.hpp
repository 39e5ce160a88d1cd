#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "htcnn/data.hpp"
#include "htcnn/graph.hpp"
#include "htcnn/optim.hpp"
#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"
#include "htcnn/transfer.hpp"

namespace htcnn {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::int64_t batch_size = 100;
    std::int64_t max_iterations = 10000;
    std::int64_t eval_every = 1000;
    double dropout_conv_keep = 1.0;   // 1.0 = off
    double dropout_fc_keep = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw config_error("learning rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw config_error("momentum must be in [0,1)");
        if (batch_size < 1) throw config_error("batch size must be >= 1");
        if (max_iterations < 0) throw config_error("max iterations must be >= 0");
        if (eval_every < 1 || (max_iterations > 0 && eval_every > max_iterations)) {
            throw config_error("eval cadence must be in [1, max_iterations]");
        }
        if (!(dropout_conv_keep > 0.0) || dropout_conv_keep > 1.0 || !(dropout_fc_keep > 0.0) ||
            dropout_fc_keep > 1.0) {
            throw config_error("dropout keep probabilities must be in (0,1]");
        }
    }
};

struct CurvePoint {
    std::int64_t iteration = 0;
    double epoch = 0.0;            // paper-epochs: iteration / 1000
    double test_accuracy = 0.0;
    double train_loss = 0.0;
    double wall_clock_s = 0.0;
};

struct LearningCurve {
    std::vector<CurvePoint> points;

    void validate() const {
        for (std::size_t i = 1; i < points.size(); ++i) {
            if (points[i].iteration <= points[i - 1].iteration) {
                throw data_error("learning curve iterations must strictly increase (point " +
                                 std::to_string(i) + ")");
            }
        }
    }
};

constexpr double kIterationsPerEpoch = 1000.0;

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Binary container, little-endian throughout:
//   magic "HTCN" | version u16 | iteration u64 | record count u32 |
//   records: (name length u32, name bytes, rank u32, dims u32[rank], f32 payload) |
//   rng algorithm tag (u32 length + bytes) | rng state (u32 length + bytes)
// Records hold parameters under their model names and optimizer velocities
// under "velocity/<name>"; maps keep them sorted, so bytes are reproducible.
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[4] = {'H', 'T', 'C', 'N'};
constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t iteration = 0;
    std::map<std::string, Tensor> tensors;
    std::string rng_tag;
    std::string rng_state;
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct ByteReader {
    const std::string* bytes;
    std::size_t pos = 0;

    template <typename T>
    T get(const char* what) {
        if (pos + sizeof(T) > bytes->size()) {
            throw data_error(std::string("truncated checkpoint while reading ") + what);
        }
        T v;
        std::memcpy(&v, bytes->data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_bytes(std::size_t n, const char* what) {
        if (pos + n > bytes->size()) {
            throw data_error(std::string("truncated checkpoint while reading ") + what);
        }
        std::string s(bytes->data() + pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& cp) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put<std::uint16_t>(out, kCheckpointVersion);
    detail::put<std::uint64_t>(out, cp.iteration);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cp.tensors.size()));
    for (const auto& [name, t] : cp.tensors) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::int64_t d : t.shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        const std::size_t before = out.size();
        out.resize(before + sizeof(float) * t.data.size());
        std::memcpy(out.data() + before, t.data.data(), sizeof(float) * t.data.size());
    }
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cp.rng_tag.size()));
    out.append(cp.rng_tag);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cp.rng_state.size()));
    out.append(cp.rng_state);
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    detail::ByteReader r{&bytes};
    const std::string magic = r.get_bytes(4, "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
        throw data_error("bad checkpoint magic (not an HTCN container)");
    }
    const auto version = r.get<std::uint16_t>("version");
    if (version != kCheckpointVersion) {
        throw data_error("unsupported checkpoint version " + std::to_string(version) +
                         ", expected " + std::to_string(kCheckpointVersion));
    }
    Checkpoint cp;
    cp.iteration = r.get<std::uint64_t>("iteration counter");
    const auto count = r.get<std::uint32_t>("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>("record name length");
        const std::string name = r.get_bytes(name_len, "record name");
        const auto rank = r.get<std::uint32_t>("record rank");
        Shape shape(rank);
        std::int64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = r.get<std::uint32_t>("record dims");
            n *= shape[d];
        }
        Tensor t(shape);
        const std::string payload =
            r.get_bytes(sizeof(float) * static_cast<std::size_t>(n), "record payload");
        std::memcpy(t.data.data(), payload.data(), payload.size());
        cp.tensors.emplace(name, std::move(t));
    }
    const auto tag_len = r.get<std::uint32_t>("rng tag length");
    cp.rng_tag = r.get_bytes(tag_len, "rng tag");
    const auto state_len = r.get<std::uint32_t>("rng state length");
    cp.rng_state = r.get_bytes(state_len, "rng state");
    if (r.pos != bytes.size()) {
        throw data_error("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                         " trailing bytes");
    }
    return cp;
}

inline void save_checkpoint(const Checkpoint& cp, const std::string& path) {
    const std::string bytes = serialize_checkpoint(cp);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write checkpoint: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

inline Checkpoint make_checkpoint(const ModelGraph& model, const OptimizerState& opt,
                                  std::uint64_t iteration, const Rng& rng) {
    Checkpoint cp;
    cp.iteration = iteration;
    for (const auto& [name, t] : model.params) cp.tensors.emplace(name, t);
    for (const auto& [name, v] : opt.velocity) cp.tensors.emplace("velocity/" + name, v);
    cp.rng_tag = Rng::kAlgorithmTag;
    cp.rng_state = rng.serialize();
    return cp;
}

inline void restore_checkpoint(const Checkpoint& cp, ModelGraph& model, OptimizerState* opt,
                               Rng* rng) {
    for (auto& [name, t] : model.params) {
        auto it = cp.tensors.find(name);
        if (it == cp.tensors.end()) throw data_error("checkpoint lacks parameter '" + name + "'");
        if (!it->second.same_shape(t)) {
            throw data_error("checkpoint parameter '" + name + "' has shape " +
                             shape_str(it->second.shape) + ", model expects " + shape_str(t.shape));
        }
        t = it->second;
    }
    if (opt) {
        for (auto& [name, v] : opt->velocity) {
            auto it = cp.tensors.find("velocity/" + name);
            if (it == cp.tensors.end()) {
                throw data_error("checkpoint lacks velocity for '" + name + "'");
            }
            v = it->second;
        }
    }
    if (rng) {
        if (cp.rng_tag != Rng::kAlgorithmTag) {
            throw data_error("checkpoint RNG algorithm '" + cp.rng_tag + "' does not match '" +
                             Rng::kAlgorithmTag + "'");
        }
        rng->deserialize(cp.rng_state);
    }
}

// Shallow-net checkpoints feed filter banks directly, no model rebuild needed.
inline FirstLayer first_layer_from_checkpoint(const Checkpoint& cp) {
    auto w = cp.tensors.find("conv1");
    if (w != cp.tensors.end()) {
        auto b = cp.tensors.find("conv1.bias");
        if (b == cp.tensors.end()) throw data_error("checkpoint lacks 'conv1.bias'");
        return FirstLayer{w->second, b->second};
    }
    // split first layer: stack conv1.t0, conv1.t1, ... in tower order
    FirstLayer out;
    std::vector<const Tensor*> ws, bs;
    for (std::int64_t t = 0;; ++t) {
        auto wt = cp.tensors.find("conv1.t" + std::to_string(t));
        if (wt == cp.tensors.end()) break;
        auto bt = cp.tensors.find("conv1.t" + std::to_string(t) + ".bias");
        if (bt == cp.tensors.end()) {
            throw data_error("checkpoint lacks 'conv1.t" + std::to_string(t) + ".bias'");
        }
        ws.push_back(&wt->second);
        bs.push_back(&bt->second);
    }
    if (ws.empty()) throw data_error("checkpoint has no first-layer parameters under 'conv1'");
    std::int64_t total = 0;
    for (const Tensor* w0 : ws) total += w0->shape[0];
    out.filters = Tensor::zeros({total, ws[0]->shape[1], ws[0]->shape[2], ws[0]->shape[3]});
    out.biases = Tensor::zeros({total});
    std::int64_t row = 0;
    for (std::size_t t = 0; t < ws.size(); ++t) {
        const std::int64_t rows = ws[t]->shape[0];
        const std::int64_t fsize = ws[t]->size() / rows;
        std::memcpy(out.filters.ptr() + row * fsize, ws[t]->ptr(), sizeof(float) * ws[t]->size());
        std::memcpy(out.biases.ptr() + row, bs[t]->ptr(), sizeof(float) * rows);
        row += rows;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation and the training loop.
// ---------------------------------------------------------------------------

// Fraction of test items whose argmax logit matches the label; ties go to the
// lowest class index; dropout off. Never mutates the model.
inline double evaluate(const ModelGraph& model, const Dataset& test,
                       std::int64_t eval_batch = 250) {
    if (test.size() == 0) throw config_error("cannot evaluate on an empty test set");
    std::int64_t correct = 0;
    std::vector<std::int64_t> idx;
    for (std::int64_t start = 0; start < test.size(); start += eval_batch) {
        const std::int64_t stop = std::min(start + eval_batch, test.size());
        idx.resize(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Batch b = gather(test, idx);
        Tensor logits = forward(model, b.images);
        const std::int64_t k = logits.shape[1];
        for (std::int64_t i = 0; i < logits.shape[0]; ++i) {
            const float* row = logits.ptr() + i * k;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c) {
                if (row[c] > row[best]) best = c;
            }
            if (best == b.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

enum class TimingMode { Wall, Logical };

struct TrainOptions {
    TimingMode timing = TimingMode::Wall;
    std::string abort_checkpoint_path;    // where the last good state goes on NaN abort
    std::int64_t eval_batch = 250;
};

struct TrainResult {
    ModelGraph model;
    LearningCurve curve;
    Checkpoint final_checkpoint;
    double wall_clock_s = 0.0;
};

// Plain SGD-with-momentum loop: max_iterations steps over seeded shuffled
// minibatches (short tails dropped), an evaluation point at iteration 0 and
// then every eval_every iterations. train_loss at a point is the mean batch
// loss since the previous point (at iteration 0: the loss of a dropout-free
// forward pass on the first batch, before any update). A non-finite loss
// aborts with the last evaluated state saved for post-mortems.
inline TrainResult train(const ModelGraph& initial, const Dataset& train_set,
                         const Dataset& test_set, const TrainConfig& cfg,
                         const TrainOptions& opts = {}) {
    cfg.validate();
    train_set.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    TrainResult res;
    res.model = initial;
    OptimizerState opt = OptimizerState::for_params(res.model.params,
                                                    static_cast<float>(cfg.learning_rate),
                                                    static_cast<float>(cfg.momentum));
    Rng dropout_rng(mix_seed(cfg.seed, "dropout", 0));
    BatchStream stream(train_set, cfg.batch_size, mix_seed(cfg.seed, "data-order", 0));

    Checkpoint last_good;
    auto record_point = [&](std::int64_t iteration, double train_loss) {
        CurvePoint p;
        p.iteration = iteration;
        p.epoch = static_cast<double>(iteration) / kIterationsPerEpoch;
        p.test_accuracy = evaluate(res.model, test_set, opts.eval_batch);
        p.train_loss = train_loss;
        p.wall_clock_s =
            opts.timing == TimingMode::Wall ? elapsed() : static_cast<double>(iteration);
        res.curve.points.push_back(p);
        last_good = make_checkpoint(res.model, opt, static_cast<std::uint64_t>(iteration),
                                    dropout_rng);
    };

    {
        Batch first = gather(train_set, stream.peek_indices());
        Tensor logits = forward(res.model, first.images);
        record_point(0, softmax_cross_entropy(logits, first.labels).loss);
    }

    double loss_acc = 0.0;
    std::int64_t loss_n = 0;
    for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
        Batch b = stream.next();
        ForwardCache cache;
        Tensor logits = forward(res.model, b.images, true, &dropout_rng, &cache);
        SoftmaxLoss<float> sl = softmax_cross_entropy(logits, b.labels);
        if (!std::isfinite(sl.loss)) {
            if (!opts.abort_checkpoint_path.empty()) {
                save_checkpoint(last_good, opts.abort_checkpoint_path);
            }
            throw numeric_error(
                "non-finite training loss at iteration " + std::to_string(it) +
                "; last good state is iteration " + std::to_string(last_good.iteration) +
                (opts.abort_checkpoint_path.empty() ? "" : " at " + opts.abort_checkpoint_path));
        }
        auto grads = backward(res.model, cache, sl.grad_logits);
        sgd_momentum_step(res.model.params, grads, opt);
        loss_acc += sl.loss;
        ++loss_n;
        if (it % cfg.eval_every == 0) {
            record_point(it, loss_acc / static_cast<double>(loss_n));
            loss_acc = 0.0;
            loss_n = 0;
        }
    }

    res.curve.validate();
    res.final_checkpoint = make_checkpoint(
        res.model, opt, static_cast<std::uint64_t>(cfg.max_iterations), dropout_rng);
    res.wall_clock_s = elapsed();
    return res;
}

// ---------------------------------------------------------------------------
// Curve CSV: `iteration,epoch,test_accuracy,train_loss,wall_clock_s`.
// Doubles are printed with %.17g so a read-back reproduces them exactly.
// ---------------------------------------------------------------------------

inline std::string curve_to_csv(const LearningCurve& curve) {
    std::string out = "iteration,epoch,test_accuracy,train_loss,wall_clock_s\n";
    char buf[256];
    for (const CurvePoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(p.iteration), p.epoch, p.test_accuracy, p.train_loss,
                      p.wall_clock_s);
        out += buf;
    }
    return out;
}

inline void write_curve_csv(const LearningCurve& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write curve CSV: " + path);
    out << curve_to_csv(curve);
}

inline LearningCurve read_curve_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open curve CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("empty curve CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> want = {"iteration", "epoch", "test_accuracy", "train_loss",
                                           "wall_clock_s"};
    std::vector<std::string> cols;
    {
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cols.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    for (const std::string& name : want) {
        if (std::find(cols.begin(), cols.end(), name) == cols.end()) {
            throw data_error("curve CSV " + path + " is missing column '" + name + "'");
        }
    }
    std::vector<std::size_t> pos;
    for (const std::string& name : want) {
        pos.push_back(std::find(cols.begin(), cols.end(), name) - cols.begin());
    }
    LearningCurve curve;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            f.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (f.size() != cols.size()) {
            throw data_error("curve CSV " + path + " line " + std::to_string(line_no) + " has " +
                             std::to_string(f.size()) + " fields, header has " +
                             std::to_string(cols.size()));
        }
        try {
            CurvePoint p;
            p.iteration = std::stoll(f[pos[0]]);
            p.epoch = std::stod(f[pos[1]]);
            p.test_accuracy = std::stod(f[pos[2]]);
            p.train_loss = std::stod(f[pos[3]]);
            p.wall_clock_s = std::stod(f[pos[4]]);
            curve.points.push_back(p);
        } catch (const std::exception&) {
            throw data_error("curve CSV " + path + " line " + std::to_string(line_no) +
                             " has a malformed number");
        }
    }
    curve.validate();
    return curve;
}

}  // namespace htcnn
