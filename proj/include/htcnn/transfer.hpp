#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "htcnn/graph.hpp"
#include "htcnn/tensor.hpp"

namespace htcnn {

struct FirstLayer {
    Tensor filters;   // [F, C, fh, fw]
    Tensor biases;    // [F]
};

// Pulls the leading conv layer's parameters out of a model. For a split first
// layer the towers are stacked: rows [0,Ft) come from tower 0, [Ft,2Ft) from
// tower 1, so bank row offsets address towers uniformly.
inline FirstLayer extract_first_layer(const ModelGraph& model) {
    for (const LayerDesc& l : model.layers) {
        if (l.name != "conv1") continue;
        if (l.kind == LayerKind::Conv) {
            return FirstLayer{model.param(l.name), model.param(l.name + ".bias")};
        }
        if (l.kind == LayerKind::SplitConv) {
            const std::int64_t per_tower = l.conv.out_channels / l.towers;
            FirstLayer out;
            out.filters = Tensor::zeros({l.conv.out_channels, l.conv.in_channels, l.conv.filter_h,
                                         l.conv.filter_w});
            out.biases = Tensor::zeros({l.conv.out_channels});
            const std::int64_t block = per_tower * l.conv.in_channels * l.conv.filter_h * l.conv.filter_w;
            for (std::int64_t t = 0; t < l.towers; ++t) {
                const std::string tn = l.name + ".t" + std::to_string(t);
                std::memcpy(out.filters.ptr() + t * block, model.param(tn).ptr(),
                            sizeof(float) * static_cast<std::size_t>(block));
                std::memcpy(out.biases.ptr() + t * per_tower, model.param(tn + ".bias").ptr(),
                            sizeof(float) * static_cast<std::size_t>(per_tower));
            }
            return out;
        }
    }
    throw config_error("model has no convolutional layer named 'conv1' to extract");
}

// First-layer filters from several donor models, kept in donor order.
struct FilterBank {
    Tensor filters;                            // [total, C, fh, fw]
    Tensor biases;                             // [total]
    std::vector<std::int64_t> source_counts;   // filters contributed by each donor

    std::int64_t donors() const { return static_cast<std::int64_t>(source_counts.size()); }
    std::int64_t total() const {
        return std::accumulate(source_counts.begin(), source_counts.end(), std::int64_t{0});
    }
    std::int64_t donor_offset(std::int64_t d) const {
        std::int64_t off = 0;
        for (std::int64_t i = 0; i < d; ++i) off += source_counts[i];
        return off;
    }

    void append(const FirstLayer& layer) {
        if (layer.filters.rank() != 4 || layer.biases.rank() != 1 ||
            layer.filters.shape[0] != layer.biases.shape[0]) {
            throw config_error("filter bank contribution must pair [F,C,fh,fw] filters with [F] biases");
        }
        if (source_counts.empty()) {
            filters = layer.filters;
            biases = layer.biases;
        } else {
            if (Shape(filters.shape.begin() + 1, filters.shape.end()) !=
                Shape(layer.filters.shape.begin() + 1, layer.filters.shape.end())) {
                throw config_error("filter bank contribution shape " + shape_str(layer.filters.shape) +
                                   " does not match existing filters " + shape_str(filters.shape));
            }
            Tensor f({filters.shape[0] + layer.filters.shape[0], filters.shape[1], filters.shape[2],
                      filters.shape[3]});
            Tensor b({f.shape[0]});
            std::memcpy(f.ptr(), filters.ptr(), sizeof(float) * filters.size());
            std::memcpy(f.ptr() + filters.size(), layer.filters.ptr(),
                        sizeof(float) * layer.filters.size());
            std::memcpy(b.ptr(), biases.ptr(), sizeof(float) * biases.size());
            std::memcpy(b.ptr() + biases.size(), layer.biases.ptr(),
                        sizeof(float) * layer.biases.size());
            filters = std::move(f);
            biases = std::move(b);
        }
        source_counts.push_back(layer.filters.shape[0]);
    }
};

inline FilterBank make_filter_bank(const std::vector<ModelGraph>& donors) {
    FilterBank bank;
    for (const ModelGraph& d : donors) bank.append(extract_first_layer(d));
    return bank;
}

// One contiguous run of first-layer output channels in the target model,
// filled from one donor's contribution to the bank.
struct PartitionSlot {
    std::string target;          // target parameter name ("conv1", "conv1.t0", ...)
    std::int64_t target_start;   // first output channel written in the target
    std::int64_t width;          // number of filters
    std::int64_t source;         // donor index in the bank
    std::int64_t source_start;   // row offset inside that donor's contribution
};

struct PartitionPlan {
    std::vector<PartitionSlot> slots;

    std::int64_t total_width() const {
        std::int64_t w = 0;
        for (const PartitionSlot& s : slots) w += s.width;
        return w;
    }
};

// Evenly partitions a single first-layer conv of `total_filters` output
// channels among `num_donors` donors, donor d owning channels
// [d*width, (d+1)*width).
inline PartitionPlan make_partition_plan(std::int64_t total_filters, std::int64_t num_donors,
                                         const std::string& target = "conv1") {
    if (num_donors < 1) {
        throw config_error("partition plan needs at least one donor, got " +
                           std::to_string(num_donors));
    }
    if (total_filters < 1 || total_filters % num_donors != 0) {
        throw config_error("cannot split " + std::to_string(total_filters) + " filters evenly among " +
                           std::to_string(num_donors) + " donors");
    }
    const std::int64_t width = total_filters / num_donors;
    PartitionPlan plan;
    for (std::int64_t d = 0; d < num_donors; ++d) {
        plan.slots.push_back(PartitionSlot{target, d * width, width, d, 0});
    }
    return plan;
}

// Partition for a split first layer: each of the target's `towers` towers of
// `per_tower_filters` channels is divided among all donors, and donor d feeds
// tower t from the t-th tower block of its own (stacked) contribution — the
// upper half of a donor's split layer lands in the first target tower, the
// lower half in the second.
inline PartitionPlan make_tower_plan(std::int64_t towers, std::int64_t per_tower_filters,
                                     std::int64_t donors_per_tower,
                                     const std::string& target = "conv1") {
    if (towers < 1) throw config_error("tower plan needs at least one tower");
    if (donors_per_tower < 1 || per_tower_filters < 1 ||
        per_tower_filters % donors_per_tower != 0) {
        throw config_error("cannot split " + std::to_string(per_tower_filters) +
                           " filters per tower evenly among " + std::to_string(donors_per_tower) +
                           " donors");
    }
    const std::int64_t width = per_tower_filters / donors_per_tower;
    PartitionPlan plan;
    for (std::int64_t t = 0; t < towers; ++t) {
        for (std::int64_t d = 0; d < donors_per_tower; ++d) {
            plan.slots.push_back(PartitionSlot{target + ".t" + std::to_string(t), d * width, width,
                                               d, t * width});
        }
    }
    return plan;
}

// Copies bank filters into the target model's first-layer parameters as laid
// out by the plan. Only the addressed channel rows change; every other
// parameter of the model is untouched.
inline void inject(ModelGraph& model, const FilterBank& bank, const PartitionPlan& plan) {
    if (bank.donors() == 0) throw config_error("filter bank is empty");
    for (std::size_t i = 0; i < plan.slots.size(); ++i) {
        const PartitionSlot& s = plan.slots[i];
        const std::string where = "plan slot " + std::to_string(i) + " (target '" + s.target + "')";
        if (s.source < 0 || s.source >= bank.donors()) {
            throw config_error(where + ": donor index " + std::to_string(s.source) +
                               " outside bank of " + std::to_string(bank.donors()));
        }
        if (s.width < 1 || s.source_start < 0 ||
            s.source_start + s.width > bank.source_counts[s.source]) {
            throw config_error(where + ": rows [" + std::to_string(s.source_start) + "," +
                               std::to_string(s.source_start + s.width) + ") exceed donor " +
                               std::to_string(s.source) + "'s " +
                               std::to_string(bank.source_counts[s.source]) + " filters");
        }
        if (!model.has_param(s.target) || !model.has_param(s.target + ".bias")) {
            throw config_error(where + ": model has no such parameter");
        }
        Tensor& w = model.param(s.target);
        Tensor& b = model.param(s.target + ".bias");
        if (w.rank() != 4) throw config_error(where + ": target is not a conv weight");
        if (s.target_start < 0 || s.target_start + s.width > w.shape[0]) {
            throw config_error(where + ": channels [" + std::to_string(s.target_start) + "," +
                               std::to_string(s.target_start + s.width) + ") exceed target's " +
                               std::to_string(w.shape[0]) + " filters");
        }
        if (Shape(w.shape.begin() + 1, w.shape.end()) !=
            Shape(bank.filters.shape.begin() + 1, bank.filters.shape.end())) {
            throw config_error(where + ": target filter shape " + shape_str(w.shape) +
                               " does not match bank " + shape_str(bank.filters.shape));
        }
        const std::int64_t fsize = w.shape[1] * w.shape[2] * w.shape[3];
        const std::int64_t src = bank.donor_offset(s.source) + s.source_start;
        std::memcpy(w.ptr() + s.target_start * fsize, bank.filters.ptr() + src * fsize,
                    sizeof(float) * static_cast<std::size_t>(s.width * fsize));
        std::memcpy(b.ptr() + s.target_start, bank.biases.ptr() + src,
                    sizeof(float) * static_cast<std::size_t>(s.width));
    }
}

}  // namespace htcnn
