#pragma once
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crs/loss.hpp"
#include "crs/params.hpp"
#include "crs/rand_metrics.hpp"
#include "crs/segmenter.hpp"
#include "crs/synth.hpp"

namespace crs {

struct DatasetItem {
    std::string volume;
    std::string labels;
};

inline void to_json(nlohmann::json& j, const DatasetItem& d) {
    j = {{"volume", d.volume}, {"labels", d.labels}};
}

inline void from_json(const nlohmann::json& j, DatasetItem& d) {
    j.at("volume").get_to(d.volume);
    j.at("labels").get_to(d.labels);
}

struct TrainConfig {
    double learning_rate = 1e-6;
    int batch_size = 1;
    int epochs = 40;
    int teacher_forced_epochs = 10;
    std::uint64_t seed = 1;
    std::vector<DatasetItem> dataset;
    ModelConfig model;
    InferenceConfig infer;
    int checkpoint_every = 10;  // epochs
    int validate_every = 10;    // epochs
    double val_fraction = 0.2;  // trailing contiguous z-block per volume
    double grad_clip_norm = 10.0;
    std::string out_dir = "train_out";
    std::string resume;  // optional checkpoint to fine-tune from

    void validate() const {
        if (learning_rate < 0.0) throw config_error("train: learning_rate must be >= 0");
        if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
        if (teacher_forced_epochs < 0 || teacher_forced_epochs > epochs)
            throw config_error("train: need 0 <= teacher_forced_epochs <= epochs");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw config_error("train: need 0 <= val_fraction < 1");
        if (checkpoint_every < 1 || validate_every < 1)
            throw config_error("train: cadences must be >= 1");
        model.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"teacher_forced_epochs", c.teacher_forced_epochs},
         {"seed", c.seed},
         {"dataset", c.dataset},
         {"model", c.model},
         {"infer", c.infer},
         {"checkpoint_every", c.checkpoint_every},
         {"validate_every", c.validate_every},
         {"val_fraction", c.val_fraction},
         {"grad_clip_norm", c.grad_clip_norm},
         {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("teacher_forced_epochs"))
        c.teacher_forced_epochs = j.at("teacher_forced_epochs").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::vector<DatasetItem>>();
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("infer")) j.at("infer").get_to(c.infer);
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("validate_every")) c.validate_every = j.at("validate_every").get<int>();
    if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("grad_clip_norm")) c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("resume")) c.resume = j.at("resume").get<std::string>();
}

/// Adam with bias correction; optimizer state lives outside the ParamStore
/// so a store can be swapped for a checkpoint copy.
class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& store) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < store.size(); ++i) {
                const Tensor& v = store[static_cast<int>(i)].value;
                m_.emplace_back(v.c, v.h, v.w);
                v_.emplace_back(v.c, v.h, v.w);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& e = store[static_cast<int>(i)];
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (std::size_t j = 0; j < e.value.size(); ++j) {
                const double g = e.grad.data[j];
                m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * g;
                v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * g * g;
                e.value.data[j] -= lr_ * (m.data[j] / c1) / (std::sqrt(v.data[j] / c2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct VolumePair {
    Volume volume;
    LabelMap labels;
};

struct StepInfo {
    int epoch = 0;
    int step = 0;  // global, 1-based
    double loss = 0.0;
    bool teacher_forced = false;
    const ParamStore* params = nullptr;  // live parameters, read-only
};

using StepCallback = std::function<void(const StepInfo&)>;

/// Mean adapted Rand error of chunked inference over whole volumes, seeded
/// by each volume's first ground-truth slice.
inline std::vector<double> validate(const ParamStore& params, const ModelConfig& model,
                                    const InferenceConfig& icfg,
                                    const std::vector<VolumePair>& volumes) {
    std::vector<double> out;
    for (const auto& vp : volumes) {
        LabelMap pred = infer_volume(vp.volume, slice_labels(vp.labels, 0), params, model, icfg);
        out.push_back(adapted_rand_error(pred, vp.labels));
    }
    return out;
}

struct TrainResult {
    ParamStore params;
    std::vector<double> epoch_mean_loss;
    std::vector<std::optional<double>> epoch_val_ari;
    std::string final_checkpoint;
};

namespace detail {

struct TrainWindow {
    int volume = 0;
    int z_start = 0;
};

inline nlohmann::json checkpoint_meta(const TrainConfig& cfg, int epoch) {
    return {{"model", cfg.model}, {"epoch", epoch}};
}

} // namespace detail

/// Optimization loop: Hungarian-matched sIoU objective, Adam, gradient
/// clipping at a global norm, ground-truth mask feedback for the first
/// teacher_forced_epochs epochs and the model's own inferred masks after
/// that. Writes metrics.csv (one row per epoch: epoch, step, loss, val_ari,
/// wallclock_s) and checkpoints at the configured cadence into out_dir.
inline TrainResult train(const TrainConfig& cfg, const std::vector<VolumePair>& data,
                         std::optional<ParamStore> initial_params, const StepCallback& on_step = {}) {
    cfg.validate();
    if (data.empty()) throw config_error("train: empty dataset");
    const int n_seq = cfg.model.decoder.sequence_length;

    // Contiguous 80/20-style split along z, per volume.
    std::vector<VolumePair> val_volumes;
    std::vector<detail::TrainWindow> windows;
    for (std::size_t vi = 0; vi < data.size(); ++vi) {
        const int z = data[vi].volume.z;
        const int val_z = static_cast<int>(std::floor(cfg.val_fraction * z));
        const int train_z = z - val_z;
        if (train_z < n_seq)
            throw config_error("train: volume " + std::to_string(vi) + " keeps only " +
                               std::to_string(train_z) + " frames for training but sequences need " +
                               std::to_string(n_seq));
        for (int s = 0; s + n_seq <= train_z; s += n_seq)
            windows.push_back({static_cast<int>(vi), s});
        if (val_z >= 2) {
            VolumePair vp;
            vp.volume = Volume(val_z, data[vi].volume.y, data[vi].volume.x);
            vp.labels = LabelMap(val_z, data[vi].labels.y, data[vi].labels.x);
            const std::size_t off = static_cast<std::size_t>(train_z) * data[vi].volume.y *
                                    data[vi].volume.x;
            std::copy(data[vi].volume.data.begin() + static_cast<std::ptrdiff_t>(off),
                      data[vi].volume.data.end(), vp.volume.data.begin());
            std::copy(data[vi].labels.data.begin() + static_cast<std::ptrdiff_t>(off),
                      data[vi].labels.data.end(), vp.labels.data.begin());
            val_volumes.push_back(std::move(vp));
        }
    }
    if (windows.empty()) throw config_error("train: no training sequences");

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream metrics(cfg.out_dir + "/metrics.csv", std::ios::trunc);
    if (!metrics) throw storage_error("cannot write " + cfg.out_dir + "/metrics.csv");
    metrics << "epoch,step,loss,val_ari,wallclock_s\n";

    TrainResult result;
    result.params = init_model_params(cfg.model, cfg.seed);
    if (initial_params) {
        if (initial_params->size() != result.params.size())
            throw config_error("train: resume parameters do not match the configured model");
        for (std::size_t i = 0; i < result.params.size(); ++i) {
            auto& dst = result.params[static_cast<int>(i)];
            const auto& src = (*initial_params)[static_cast<int>(i)];
            if (src.name != dst.name || !src.value.same_shape(dst.value))
                throw config_error("train: resume parameter mismatch at " + dst.name);
            dst.value = src.value;
        }
    }
    AdamOptimizer adam(cfg.learning_rate);
    const auto t0 = std::chrono::steady_clock::now();
    int global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool teacher = epoch <= cfg.teacher_forced_epochs;
        double loss_sum = 0.0;
        int loss_count = 0;
        std::size_t wi = 0;
        while (wi < windows.size()) {
            const int batch = std::min<std::size_t>(cfg.batch_size, windows.size() - wi);
            result.params.zero_grads();
            double batch_loss = 0.0;
            for (int b = 0; b < batch; ++b, ++wi) {
                const auto& w = windows[wi];
                const auto& vp = data[static_cast<std::size_t>(w.volume)];
                SequenceView seq = extract_sequence(vp.volume, vp.labels, w.z_start, n_seq);
                std::vector<LabelMap2D> gt_slices;
                gt_slices.reserve(static_cast<std::size_t>(n_seq));
                for (int tf = 0; tf < n_seq; ++tf)
                    gt_slices.push_back(slice_labels(vp.labels, w.z_start + tf));

                Tape tape;
                ModelBinding binding = bind_model(tape, result.params, cfg.model);
                DecodeOptions opt;
                opt.teacher_forcing = teacher;
                opt.gt_labels = &gt_slices;
                MaskSequenceVars pred = decode_sequence(tape, binding, seq.frames, seq.reference, opt);
                auto abort_nonfinite = [&] {
                    nlohmann::json diag = {{"epoch", epoch},
                                           {"step", global_step + 1},
                                           {"volume", w.volume},
                                           {"z_start", w.z_start},
                                           {"teacher_forced", teacher}};
                    write_file_bytes(cfg.out_dir + "/nan_diagnostic.json", diag.dump(2) + "\n");
                    throw state_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", see " + cfg.out_dir + "/nan_diagnostic.json");
                };
                for (VarId mv : pred.masks)
                    if (!tape.val(mv).all_finite()) abort_nonfinite();
                MaskSequenceVars gt = ground_truth_masks(tape, gt_slices, pred.ids, pred.slots);
                SequenceLoss sl = sequence_loss(tape, pred, gt);
                const double loss = tape.val(sl.loss).item();
                if (!std::isfinite(loss)) abort_nonfinite();
                batch_loss += loss;
                tape.backward(sl.loss);
                accumulate_grads(tape, binding.bound, result.params);
            }
            batch_loss /= batch;
            result.params.scale_grads(1.0 / batch);
            const double norm = result.params.grad_norm();
            if (cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm)
                result.params.scale_grads(cfg.grad_clip_norm / norm);
            adam.step(result.params);
            ++global_step;
            loss_sum += batch_loss;
            ++loss_count;
            if (on_step) on_step({epoch, global_step, batch_loss, teacher, &result.params});
        }

        const double mean_loss = loss_sum / loss_count;
        result.epoch_mean_loss.push_back(mean_loss);

        std::optional<double> val_ari;
        if (!val_volumes.empty() && (epoch % cfg.validate_every == 0 || epoch == cfg.epochs)) {
            auto aris = validate(result.params, cfg.model, cfg.infer, val_volumes);
            double s = 0.0;
            for (double a : aris) s += a;
            val_ari = s / static_cast<double>(aris.size());
        }
        result.epoch_val_ari.push_back(val_ari);

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char row[160];
        if (val_ari)
            std::snprintf(row, sizeof(row), "%d,%d,%.9g,%.9g,%.3f\n", epoch, global_step, mean_loss,
                          *val_ari, wall);
        else
            std::snprintf(row, sizeof(row), "%d,%d,%.9g,,%.3f\n", epoch, global_step, mean_loss,
                          wall);
        metrics << row;
        metrics.flush();

        if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
            const std::string path =
                cfg.out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".ckpt";
            save_checkpoint(result.params, path, detail::checkpoint_meta(cfg, epoch));
            result.final_checkpoint = path;
        }
    }
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const std::vector<VolumePair>& data,
                         const StepCallback& on_step = {}) {
    return train(cfg, data, std::nullopt, on_step);
}

/// Path-based entry point: loads the VOL1 pairs named in cfg.dataset and the
/// resume checkpoint when one is configured.
inline TrainResult train(const TrainConfig& cfg, const StepCallback& on_step = {}) {
    if (cfg.dataset.empty()) throw config_error("train: config lists no dataset volumes");
    std::vector<VolumePair> data;
    for (const auto& item : cfg.dataset) {
        VolumePair vp;
        vp.volume = read_intensity_volume(item.volume);
        vp.labels = read_label_volume(item.labels);
        if (vp.volume.z != vp.labels.z || vp.volume.y != vp.labels.y || vp.volume.x != vp.labels.x)
            throw shape_error("train: volume/label shape mismatch for " + item.volume);
        data.push_back(std::move(vp));
    }
    std::optional<ParamStore> initial;
    if (!cfg.resume.empty()) initial = load_checkpoint(cfg.resume).store;
    return train(cfg, data, std::move(initial), on_step);
}

} // namespace crs
