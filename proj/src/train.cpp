#include "revdeblur/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "revdeblur/losses.hpp"
#include "revdeblur/metrics.hpp"

namespace rvd {

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.lr_init = c.get_double("lr_init", t.lr_init);
    t.lr_final = c.get_double("lr_final", t.lr_final);
    t.beta1 = c.get_double("beta1", t.beta1);
    t.beta2 = c.get_double("beta2", t.beta2);
    t.weight_decay = c.get_double("weight_decay", t.weight_decay);
    t.patch = c.get_int("patch", t.patch);
    t.batch = static_cast<int>(c.get_int("batch", t.batch));
    t.iters = c.get_int("iters", t.iters);
    t.ema_decay = c.get_double("ema_decay", t.ema_decay);
    t.seed = static_cast<uint64_t>(c.get_int("seed", static_cast<int64_t>(t.seed)));
    t.eval_every = c.get_int("eval_every", t.eval_every);
    t.phase0_iters = c.get_int("phase0_iters", t.phase0_iters);
    t.reversible = c.get_bool("reversible", t.reversible);
    t.frozen_encoder = c.get_bool("frozen_encoder", t.frozen_encoder);
    return t;
}

std::vector<std::string> TrainConfig::known_keys() {
    return {"lr_init",   "lr_final",   "beta1",      "beta2",        "weight_decay",
            "patch",     "batch",      "iters",      "ema_decay",    "seed",
            "eval_every", "phase0_iters", "reversible", "frozen_encoder"};
}

double cosine_lr(double lr_init, double lr_final, int64_t step, int64_t total) {
    if (total <= 0) return lr_init;
    double x = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(3.14159265358979323846 * x));
}

template <class S>
void AdamW<S>::step(std::vector<Parameter<S>*> params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter<S>* p : params) {
        if (p->frozen) continue;
        auto it = state_.find(p);
        if (it == state_.end())
            it = state_.emplace(p, std::make_pair(Tensor<S>(p->value.shape()), Tensor<S>(p->value.shape())))
                     .first;
        Tensor<S>& m = it->second.first;
        Tensor<S>& v = it->second.second;
        S* mp = m.mut();
        S* vp = v.mut();
        S* w = p->value.mut();
        const S* g = p->grad.ptr();
        for (int64_t i = 0, n = p->value.numel(); i < n; ++i) {
            double gi = g[i];
            double mi = beta1_ * mp[i] + (1 - beta1_) * gi;
            double vi = beta2_ * vp[i] + (1 - beta2_) * gi * gi;
            mp[i] = static_cast<S>(mi);
            vp[i] = static_cast<S>(vi);
            double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_) + weight_decay_ * w[i];
            w[i] = static_cast<S>(w[i] - lr * update);
        }
        if (p->min_abs > S(0)) {
            for (int64_t i = 0, n = p->value.numel(); i < n; ++i)
                if (std::abs(static_cast<double>(w[i])) < static_cast<double>(p->min_abs))
                    w[i] = w[i] < S(0) ? -p->min_abs : p->min_abs;
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

template <class S>
void EmaState<S>::init(std::vector<Parameter<S>*> params) {
    params_ = std::move(params);
    shadow_.clear();
    for (auto* p : params_) shadow_.push_back(p->value.clone());
}

template <class S>
void EmaState<S>::update(double decay) {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i]->frozen) continue;
        S* s = shadow_[i].mut();
        const S* w = params_[i]->value.ptr();
        for (int64_t k = 0, n = shadow_[i].numel(); k < n; ++k)
            s[k] = static_cast<S>(decay * s[k] + (1.0 - decay) * w[k]);
    }
}

template <class S>
void EmaState<S>::swap_in() {
    if (swapped_) throw std::runtime_error("EMA already swapped in");
    stash_.clear();
    for (size_t i = 0; i < params_.size(); ++i) {
        stash_.push_back(params_[i]->value);
        params_[i]->value = shadow_[i].clone();
    }
    swapped_ = true;
}

template <class S>
void EmaState<S>::swap_out() {
    if (!swapped_) throw std::runtime_error("EMA not swapped in");
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = stash_[i];
    stash_.clear();
    swapped_ = false;
}

template <class S>
void EmaState<S>::copy_into_params() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = shadow_[i].clone();
}

template class EmaState<float>;
template class EmaState<double>;

namespace {

void crop_flip_into(const Image& img, int64_t y0, int64_t x0, int64_t p, bool fh, bool fv,
                    Tensor<float>& batch, int64_t b) {
    const auto& s = batch.shape();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < p; ++y)
            for (int64_t x = 0; x < p; ++x) {
                int64_t sy = y0 + (fv ? p - 1 - y : y);
                int64_t sx = x0 + (fh ? p - 1 - x : x);
                batch.mut()[((b * s.c + c) * s.h + y) * s.w + x] = img.at(c, sy, sx);
            }
}

struct Snapshot {
    std::vector<Tensor<float>> values;

    static Snapshot take(Model<float>& m) {
        Snapshot s;
        for (auto* p : m.params.all()) s.values.push_back(p->value.clone());
        return s;
    }

    void restore(Model<float>& m) const {
        auto ps = m.params.all();
        for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i].clone();
    }
};

std::string format_metric_line(int64_t iter, double lr, double loss, const std::vector<double>& psnrs) {
    char buf[64];
    std::string line = std::to_string(iter);
    std::snprintf(buf, sizeof(buf), "%.9g", lr);
    line += std::string("\t") + buf;
    std::snprintf(buf, sizeof(buf), "%.9g", loss);
    line += std::string("\t") + buf;
    for (double p : psnrs) {
        std::snprintf(buf, sizeof(buf), "%.9g", p);
        line += std::string("\t") + buf;
    }
    return line;
}

}  // namespace

std::vector<double> eval_column_psnr(Model<float>& model, const std::vector<CorpusPair>& corpus) {
    int J = model.cfg.columns;
    std::vector<double> acc(static_cast<size_t>(J), 0.0);
    for (const auto& pair : corpus) {
        Tape<float> t(false);
        auto B = t.leaf(pair.blur.to_tensor());
        auto r = model.restore(t, B, J);
        for (int j = 0; j < J; ++j) {
            const Tensor<float>& out = t.val(r.s_hats[static_cast<size_t>(j)]);
            acc[static_cast<size_t>(j)] +=
                metrics::psnr(out.ptr(), pair.sharp.to_tensor().ptr(), out.numel());
        }
    }
    for (auto& v : acc) v /= static_cast<double>(corpus.size());
    return acc;
}

TrainResult train_decoder(Model<float>& model, const std::vector<CorpusPair>& train,
                          const std::vector<CorpusPair>& val, const TrainConfig& cfg) {
    if (train.empty()) throw std::runtime_error("train_decoder: empty training corpus");
    TrainResult res;
    Pcg32 rng(cfg.seed, 0x39cb94b95bdbULL);
    AdamW<float> opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
    EmaState<float> ema;
    ema.init(model.params.all());

    bool freeze_later = cfg.frozen_encoder && cfg.phase0_iters > 0;
    model.set_encoder_frozen(cfg.frozen_encoder && !freeze_later);

    Snapshot last_good = Snapshot::take(model);
    double last_loss = 0;

    for (int64_t iter = 0; iter < cfg.iters; ++iter) {
        if (freeze_later && iter == cfg.phase0_iters) model.set_encoder_frozen(true);
        double lr = cosine_lr(cfg.lr_init, cfg.lr_final, iter, cfg.iters);

        Tensor<float> blur_b(Shape4(cfg.batch, 3, cfg.patch, cfg.patch));
        Tensor<float> sharp_b(Shape4(cfg.batch, 3, cfg.patch, cfg.patch));
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& pair = train[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(train.size()) - 1))];
            int64_t y0 = rng.uniform_int(0, pair.blur.height - cfg.patch);
            int64_t x0 = rng.uniform_int(0, pair.blur.width - cfg.patch);
            bool fh = rng.uniform() < 0.5, fv = rng.uniform() < 0.5;
            crop_flip_into(pair.blur, y0, x0, cfg.patch, fh, fv, blur_b, b);
            crop_flip_into(pair.sharp, y0, x0, cfg.patch, fh, fv, sharp_b, b);
        }

        try {
            Tape<float> t(true, cfg.reversible);
            auto B = t.leaf(std::move(blur_b));
            auto Svar = t.leaf(std::move(sharp_b));
            auto r = model.restore(t, B, model.cfg.columns);
            auto loss = decoder_loss(t, r.s_hats, Svar);
            last_loss = static_cast<double>(t.val(loss).ptr()[0]);
            model.params.zero_grads();
            t.backward({{loss, Tensor<float>::scalar(1.f)}});
        } catch (const NumericError&) {
            last_good.restore(model);
            res.aborted_on_nan = true;
            res.iters_done = iter;
            return res;
        }

        opt.step(model.params.all(), lr);
        ema.update(cfg.ema_decay);

        if ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iters) {
            ema.swap_in();
            std::vector<double> psnrs = val.empty() ? std::vector<double>() : eval_column_psnr(model, val);
            ema.swap_out();
            res.metric_lines.push_back(format_metric_line(iter + 1, lr, last_loss, psnrs));
            last_good = Snapshot::take(model);
        }
        res.iters_done = iter + 1;
    }

    // Evaluation weights are the EMA shadow.
    ema.copy_into_params();
    return res;
}

namespace {

// Encoder features are grad-free in phase 2, so e_4 is computed off-tape and
// batched as a leaf.
Tensor<float> batch_e4(Model<float>& model, const std::vector<CorpusPair>& corpus,
                       const std::vector<const PatchRecord*>& batch,
                       const std::map<std::string, size_t>& by_blur_path) {
    Tensor<float> e4_batch;
    for (size_t b = 0; b < batch.size(); ++b) {
        const PatchRecord& rec = *batch[b];
        const CorpusPair& pair = corpus[by_blur_path.at(rec.blur_path)];
        Image patch = pair.blur.crop(rec.y, rec.x, rec.size, rec.size);
        Tape<float> t(false);
        auto e = model.encode(t, model.apply_head(t, t.leaf(patch.to_tensor())));
        const Tensor<float>& e4 = t.val(e[static_cast<size_t>(model.cfg.levels - 2)]);
        if (b == 0) {
            const auto& s = e4.shape();
            e4_batch = Tensor<float>(Shape4(static_cast<int64_t>(batch.size()), s.c, s.h, s.w));
        }
        std::memcpy(e4_batch.mut() + static_cast<int64_t>(b) * e4.numel(), e4.ptr(), e4.bytes());
    }
    return e4_batch;
}

std::map<std::string, size_t> index_by_blur_path(const std::vector<CorpusPair>& corpus) {
    std::map<std::string, size_t> out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        // manifest records use paths relative to the corpus dir
        std::string p = corpus[i].blur_path;
        auto pos = p.rfind("blur/");
        out[pos == std::string::npos ? p : p.substr(pos)] = i;
    }
    return out;
}

}  // namespace

TrainResult train_classifier(Model<float>& model, const std::vector<CorpusPair>& corpus,
                             const std::vector<PatchRecord>& records, const TrainConfig& cfg) {
    if (records.empty()) throw std::runtime_error("train_classifier: no patch records");
    TrainResult res;
    Pcg32 rng(cfg.seed, 0x6c078965ULL);
    auto by_path = index_by_blur_path(corpus);

    std::vector<bool> frozen_before;
    for (auto* p : model.params.all()) frozen_before.push_back(p->frozen);
    model.freeze_all_but_classifier();

    std::vector<Parameter<float>*> cls_params;
    for (auto* p : model.params.all())
        if (!p->frozen) cls_params.push_back(p);

    AdamW<float> opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
    EmaState<float> ema;
    ema.init(cls_params);

    for (int64_t iter = 0; iter < cfg.iters; ++iter) {
        double lr = cosine_lr(cfg.lr_init, cfg.lr_final, iter, cfg.iters);
        std::vector<const PatchRecord*> batch;
        std::vector<int> labels;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& rec = records[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(records.size()) - 1))];
            batch.push_back(&rec);
            labels.push_back(rec.cls);
        }
        Tensor<float> e4 = batch_e4(model, corpus, batch, by_path);

        try {
            Tape<float> t(true);
            auto logits = model.classify(t, t.leaf(std::move(e4)));
            auto loss = classifier_loss(logits, labels);
            double lval = static_cast<double>(t.val(loss).ptr()[0]);
            model.params.zero_grads();
            t.backward({{loss, Tensor<float>::scalar(1.f)}});
            opt.step(model.params.all(), lr);
            ema.update(cfg.ema_decay);
            if ((iter + 1) % cfg.eval_every == 0 || iter + 1 == cfg.iters)
                res.metric_lines.push_back(format_metric_line(iter + 1, lr, lval, {}));
        } catch (const NumericError&) {
            res.aborted_on_nan = true;
            res.iters_done = iter;
            break;
        }
        res.iters_done = iter + 1;
    }

    ema.copy_into_params();
    auto ps = model.params.all();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->frozen = frozen_before[i];
    return res;
}

std::vector<PatchEval> evaluate_patches(Model<float>& model, const std::vector<CorpusPair>& corpus,
                                        const std::vector<PatchRecord>& records) {
    auto by_path = index_by_blur_path(corpus);
    std::vector<PatchEval> out;
    int J = model.cfg.columns;
    for (const auto& rec : records) {
        const CorpusPair& pair = corpus.at(by_path.at(rec.blur_path));
        Image bp = pair.blur.crop(rec.y, rec.x, rec.size, rec.size);
        Image sp = pair.sharp.crop(rec.y, rec.x, rec.size, rec.size);
        Tensor<float> sharp_t = sp.to_tensor();
        PatchEval ev;
        ev.psnr_blur = metrics::psnr(bp, sp);
        Tape<float> t(false);
        auto r = model.restore(t, t.leaf(bp.to_tensor()), J);
        for (int j = 0; j < J; ++j) {
            const Tensor<float>& s_hat = t.val(r.s_hats[static_cast<size_t>(j)]);
            ev.psnr_columns.push_back(metrics::psnr(s_hat.ptr(), sharp_t.ptr(), s_hat.numel()));
        }
        out.push_back(std::move(ev));
    }
    return out;
}

double classifier_accuracy(Model<float>& model, const std::vector<CorpusPair>& corpus,
                           const std::vector<PatchRecord>& records) {
    auto by_path = index_by_blur_path(corpus);
    int64_t correct = 0;
    for (const auto& rec : records) {
        const CorpusPair& pair = corpus.at(by_path.at(rec.blur_path));
        Image patch = pair.blur.crop(rec.y, rec.x, rec.size, rec.size);
        Tape<float> t(false);
        auto e = model.encode(t, model.apply_head(t, t.leaf(patch.to_tensor())));
        auto logits = model.classify(t, e[static_cast<size_t>(model.cfg.levels - 2)]);
        int pred = Model<float>::predict_class(t.val(logits))[0];
        if (pred == rec.cls) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

}  // namespace rvd
