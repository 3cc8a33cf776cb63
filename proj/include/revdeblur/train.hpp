#pragma once

#include <string>
#include <vector>

#include "revdeblur/config.hpp"
#include "revdeblur/model.hpp"
#include "revdeblur/policy.hpp"
#include "revdeblur/synth.hpp"

namespace rvd {

struct TrainConfig {
    double lr_init = 1e-3;
    double lr_final = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double weight_decay = 1e-3;
    int64_t patch = 256;
    int batch = 16;
    int64_t iters = 200000;
    double ema_decay = 0.999;
    uint64_t seed = 1;
    int64_t eval_every = 250;
    int64_t phase0_iters = 0;  // leading iterations with the encoder unfrozen
    bool reversible = true;
    bool frozen_encoder = true;

    static TrainConfig from_config(const Config& c);
    static std::vector<std::string> known_keys();
};

// Cosine decay from lr_init to lr_final over `total` steps; step is 0-based.
double cosine_lr(double lr_init, double lr_final, int64_t step, int64_t total);

// AdamW-style update with decoupled weight decay; enforces each parameter's
// min_abs bound after the step.
template <class S>
class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

    void step(std::vector<Parameter<S>*> params, double lr);

private:
    double beta1_, beta2_, weight_decay_, eps_;
    int64_t t_ = 0;
    std::map<Parameter<S>*, std::pair<Tensor<S>, Tensor<S>>> state_;
};

// Exponential moving average of the trainable parameters. swap_in installs
// the shadow values (remembering the raw ones); swap_out restores them.
template <class S>
class EmaState {
public:
    void init(std::vector<Parameter<S>*> params);
    void update(double decay);
    void swap_in();
    void swap_out();
    void copy_into_params();  // permanently adopt the shadow values

private:
    std::vector<Parameter<S>*> params_;
    std::vector<Tensor<S>> shadow_;
    std::vector<Tensor<S>> stash_;
    bool swapped_ = false;
};

struct TrainResult {
    int64_t iters_done = 0;
    bool aborted_on_nan = false;
    std::vector<std::string> metric_lines;  // "iter\tlr\tloss\tpsnr_dec1...\tpsnr_decJ"
};

// Phase-1 optimization: composite loss over all sub-decoder outputs,
// encoder frozen (after the optional phase-0 warmup), EMA maintained and
// adopted into the model at the end.
TrainResult train_decoder(Model<float>& model, const std::vector<CorpusPair>& train,
                          const std::vector<CorpusPair>& val, const TrainConfig& cfg);

// Phase-2 optimization: only classifier parameters move; labels come from
// the manifest's PSNR classes.
TrainResult train_classifier(Model<float>& model, const std::vector<CorpusPair>& corpus,
                             const std::vector<PatchRecord>& records, const TrainConfig& cfg);

// Per-patch PSNR of the blur input and every sub-decoder output (EMA-free,
// uses the weights as stored in the model).
std::vector<PatchEval> evaluate_patches(Model<float>& model, const std::vector<CorpusPair>& corpus,
                                        const std::vector<PatchRecord>& records);

// Classifier accuracy over manifest records.
double classifier_accuracy(Model<float>& model, const std::vector<CorpusPair>& corpus,
                           const std::vector<PatchRecord>& records);

// Mean PSNR of each column over whole corpus images.
std::vector<double> eval_column_psnr(Model<float>& model, const std::vector<CorpusPair>& corpus);

}  // namespace rvd
