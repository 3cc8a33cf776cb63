#pragma once

#include <cmath>

#include "revdeblur/blocks.hpp"

namespace rvd {

// Architecture hyperparameters. Paper-scale values are much larger; the desk
// defaults keep a CPU training run in the minutes range.
struct ModelConfig {
    int64_t base_channels = 8;
    int levels = 5;  // N: encoder features e_1..e_N; decoder runs N-1 levels
    std::vector<int> enc_blocks = {1, 1, 1, 1, 1};
    int columns = 2;  // J sub-decoders: 2 / 4 / 8 presets
    int num_classes = 6;
    double alpha_min = 1e-3;

    int64_t channels_at(int level /*1-based*/) const { return base_channels << (level - 1); }
    int64_t scale_divisor() const { return int64_t(1) << (levels - 1); }

    void validate() const {
        if (levels < 2) throw ShapeError("model: levels must be >= 2");
        if (base_channels < 1) throw ShapeError("model: base_channels must be >= 1");
        if (columns < 1) throw ShapeError("model: columns must be >= 1");
        if (static_cast<int>(enc_blocks.size()) != levels)
            throw ShapeError("model: enc_blocks must list one count per level");
        for (int n : enc_blocks)
            if (n < 1) throw ShapeError("model: every level needs at least one encoder block");
    }
};

// One decoder level: fuse the neighbouring features, then decode with a
// Fourier-augmented NAF block.
template <class S>
struct LevelModule {
    FuseBlock<S> fuse;
    NafBlock<S> block;

    Var<S> apply(Tape<S>& t, Var<S> neighbor_up, const Var<S>* neighbor_down) const {
        return block.apply(t, fuse.apply(t, neighbor_up, neighbor_down));
    }
};

template <class S>
struct SubDecoder {
    std::vector<LevelModule<S>> levels;  // index 0 = level 1 (finest)
    std::vector<Parameter<S>*> alpha;    // per level, scalar, |alpha| >= alpha_min
};

template <class S>
struct Classifier {
    Conv<S> down;
    NafBlock<S> block;
    LayerNormParams<S> ln;
    Conv<S> fc1, fc2;  // 1x1 on pooled features
};

// Per-column multi-scale feature set d_1..d_{N-1}; shapes mirror e_1..e_{N-1}.
template <class S>
using ColumnVars = std::vector<Var<S>>;

template <class S>
class Model {
public:
    ModelConfig cfg;
    ParamStore<S> params;

    Conv<S> head;
    std::vector<std::vector<NafBlock<S>>> enc_levels;
    std::vector<Downsample<S>> enc_downs;
    std::vector<SubDecoder<S>> decoders;
    std::vector<Conv<S>> tails;
    Classifier<S> classifier;

    static std::unique_ptr<Model> create(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        auto m = std::make_unique<Model>();
        m->cfg = cfg;
        Pcg32 rng(seed);
        auto& ps = m->params;
        int64_t c = cfg.base_channels;

        m->head = Conv<S>::create(ps, "head", c, 3, 3, rng);
        for (int i = 1; i <= cfg.levels; ++i) {
            std::vector<NafBlock<S>> blocks;
            BlockConfig bc{cfg.channels_at(i), 2.0, 3};
            for (int k = 1; k <= cfg.enc_blocks[static_cast<size_t>(i - 1)]; ++k)
                blocks.push_back(NafBlock<S>::create(ps, "enc.level" + std::to_string(i) + ".block" +
                                                             std::to_string(k),
                                                     bc, rng, false));
            m->enc_levels.push_back(std::move(blocks));
            if (i < cfg.levels)
                m->enc_downs.push_back(
                    Downsample<S>::create(ps, "enc.down" + std::to_string(i), cfg.channels_at(i), rng));
        }

        for (int j = 1; j <= cfg.columns; ++j) {
            SubDecoder<S> dec;
            for (int i = 1; i < cfg.levels; ++i) {
                std::string prefix = "dec" + std::to_string(j) + ".level" + std::to_string(i);
                LevelModule<S> lm{
                    FuseBlock<S>::create(ps, prefix + ".fuse", cfg.channels_at(i), i > 1, rng),
                    NafBlock<S>::create(ps, prefix + ".fourier", BlockConfig{cfg.channels_at(i), 2.0, 3}, rng,
                                        true)};
                dec.levels.push_back(std::move(lm));
                auto& a = ps.add("alpha." + std::to_string(j) + "." + std::to_string(i),
                                 Tensor<S>::full(Shape4(1, 1, 1, 1), S(1)));
                a.min_abs = static_cast<S>(cfg.alpha_min);
                dec.alpha.push_back(&a);
            }
            m->decoders.push_back(std::move(dec));
            // Tails start at zero: the initial restored image equals the input.
            m->tails.push_back(Conv<S>::create(ps, "tail" + std::to_string(j), 3, c, 3, rng, 1, true));
        }

        int64_t c4 = cfg.channels_at(cfg.levels - 1);
        m->classifier.down = Conv<S>::create(ps, "cls.down", 2 * c4, c4, 2, rng);
        m->classifier.block =
            NafBlock<S>::create(ps, "cls.block", BlockConfig{2 * c4, 2.0, 3}, rng, false);
        m->classifier.ln = LayerNormParams<S>::create(ps, "cls.ln", 2 * c4);
        m->classifier.fc1 = Conv<S>::create(ps, "cls.fc1", 2 * c4, 2 * c4, 1, rng);
        m->classifier.fc2 = Conv<S>::create(ps, "cls.fc2", cfg.num_classes, 2 * c4, 1, rng);
        return m;
    }

    // ---- parameter groups ----

    bool is_encoder_param(const std::string& name) const {
        return name.rfind("head", 0) == 0 || name.rfind("enc.", 0) == 0;
    }
    bool is_classifier_param(const std::string& name) const { return name.rfind("cls.", 0) == 0; }

    void set_encoder_frozen(bool frozen) {
        for (auto* p : params.all())
            if (is_encoder_param(p->name)) p->frozen = frozen;
    }

    void freeze_all_but_classifier() {
        for (auto* p : params.all()) p->frozen = !is_classifier_param(p->name);
    }

    // ---- backbone ----

    Var<S> apply_head(Tape<S>& t, Var<S> image) const {
        if (image.shape().c != 3) throw ShapeError("head expects an RGB input, got " + image.shape().str());
        return head.same(t, image);
    }

    std::vector<Var<S>> encode(Tape<S>& t, Var<S> h) const {
        const auto& hs = h.shape();
        if (hs.h % cfg.scale_divisor() != 0 || hs.w % cfg.scale_divisor() != 0)
            throw ShapeError("encode: spatial dims " + hs.str() + " must be divisible by " +
                             std::to_string(cfg.scale_divisor()));
        std::vector<Var<S>> e;
        Var<S> x = h;
        for (int i = 1; i <= cfg.levels; ++i) {
            for (const auto& blk : enc_levels[static_cast<size_t>(i - 1)]) x = blk.apply(t, x);
            e.push_back(x);
            if (i < cfg.levels) x = enc_downs[static_cast<size_t>(i - 1)].apply(t, x);
        }
        return e;
    }

    Var<S> apply_tail(Tape<S>& t, Var<S> d1, Var<S> image, int column /*1-based*/) const {
        Var<S> residual = tails[static_cast<size_t>(column - 1)].same(t, d1);
        if (residual.shape() != image.shape())
            throw ShapeError("tail output " + residual.shape().str() + " does not match image " +
                             image.shape().str());
        return ops::add(image, residual);
    }

    // ---- reversible decoder ----

    // Coarse-to-fine pass of one column: d_i = Level_i(d_{i+1}, prev_{i-1}) + alpha_i * prev_i,
    // with d_N == e_N shared by every column.
    ColumnVars<S> column_forward(Tape<S>& t, const ColumnVars<S>& prev, Var<S> e_last,
                                 int column /*1-based*/) const {
        const SubDecoder<S>& dec = decoders[static_cast<size_t>(column - 1)];
        int n = cfg.levels - 1;
        if (static_cast<int>(prev.size()) != n)
            throw ShapeError("column_forward: expected " + std::to_string(n) + " level features");
        ColumnVars<S> next(static_cast<size_t>(n));
        for (int i = n; i >= 1; --i) {
            Var<S> up = (i == n) ? e_last : next[static_cast<size_t>(i)];
            const Var<S>* down = (i == 1) ? nullptr : &prev[static_cast<size_t>(i - 2)];
            Var<S> level_out = dec.levels[static_cast<size_t>(i - 1)].apply(t, up, down);
            Var<S> scaled = ops::cmul(prev[static_cast<size_t>(i - 1)],
                                      t.param(*dec.alpha[static_cast<size_t>(i - 1)]));
            next[static_cast<size_t>(i - 1)] = ops::add(level_out, scaled);
        }
        return next;
    }

    // Fine-to-coarse reconstruction of the previous column state:
    // prev_i = (d_i - Level_i(d_{i+1}, prev_{i-1})) / alpha_i.
    std::vector<Tensor<S>> column_inverse(const std::vector<Tensor<S>>& next, const Tensor<S>& e_last,
                                          int column /*1-based*/) const {
        const SubDecoder<S>& dec = decoders[static_cast<size_t>(column - 1)];
        int n = cfg.levels - 1;
        if (static_cast<int>(next.size()) != n)
            throw ShapeError("column_inverse: expected " + std::to_string(n) + " level features");
        Tape<S> t(false);
        std::vector<Var<S>> next_v;
        for (const auto& d : next) next_v.push_back(t.leaf(d));
        Var<S> e_v = t.leaf(e_last);
        std::vector<Tensor<S>> prev(static_cast<size_t>(n));
        std::vector<Var<S>> prev_v(static_cast<size_t>(n));
        for (int i = 1; i <= n; ++i) {
            S a = dec.alpha[static_cast<size_t>(i - 1)]->value.ptr()[0];
            if (std::abs(static_cast<double>(a)) < cfg.alpha_min)
                throw NumericError("column_inverse: |alpha| below " + std::to_string(cfg.alpha_min) +
                                   " at level " + std::to_string(i));
            Var<S> up = (i == n) ? e_v : next_v[static_cast<size_t>(i)];
            const Var<S>* down = (i == 1) ? nullptr : &prev_v[static_cast<size_t>(i - 2)];
            Var<S> level_out = dec.levels[static_cast<size_t>(i - 1)].apply(t, up, down);
            Var<S> rec = ops::scale(ops::sub(next_v[static_cast<size_t>(i - 1)], level_out),
                                    1.0 / static_cast<double>(a));
            prev_v[static_cast<size_t>(i - 1)] = rec;
            prev[static_cast<size_t>(i - 1)] = t.val(rec);
        }
        return prev;
    }

    // Runs columns 1..upto_j. Column 0 is the encoder feature set. In
    // reversible mode columns beyond the first are recorded as invertible
    // segments: their interiors are never taped and all but the latest
    // column state is released, then rebuilt during backward. Consumers of a
    // column's state (the tails) must record their reads inside on_column;
    // once the next column runs, that state may be gone until backward.
    std::vector<ColumnVars<S>> stack_forward(
        Tape<S>& t, const std::vector<Var<S>>& enc_features, int upto_j,
        const std::function<void(int, const ColumnVars<S>&)>& on_column = nullptr) const {
        if (upto_j < 0 || upto_j > cfg.columns)
            throw ShapeError("stack_forward: column count " + std::to_string(upto_j) + " out of range");
        int n = cfg.levels - 1;
        ColumnVars<S> state(enc_features.begin(), enc_features.begin() + n);
        Var<S> e_last = enc_features[static_cast<size_t>(n)];
        std::vector<ColumnVars<S>> all;
        for (int j = 1; j <= upto_j; ++j) {
            if (j >= 2) {
                auto body = [this, j](Tape<S>& tp, const std::vector<Var<S>>& rec,
                                      const std::vector<Var<S>>& aux) {
                    return column_forward(tp, rec, aux[0], j);
                };
                auto inverse = [this, j](const std::vector<Tensor<S>>& outs,
                                         const std::vector<Tensor<S>>& aux) {
                    return column_inverse(outs, aux[0], j);
                };
                state = t.segment("column", body, inverse, state, {e_last});
            } else {
                state = column_forward(t, state, e_last, j);
            }
            if (on_column) on_column(j, state);
            all.push_back(state);
        }
        return all;
    }

    // ---- classifier ----

    Var<S> classifier_feature(Tape<S>& t, Var<S> e4) const {
        Var<S> x = classifier.down.strided(t, e4, 2, 0);
        return classifier.block.apply(t, x);
    }

    Var<S> classify(Tape<S>& t, Var<S> e4) const {
        Var<S> x = classifier_feature(t, e4);
        x = classifier.ln.apply(t, x);
        x = ops::global_avg_pool(x);
        x = classifier.fc1.same(t, x);
        x = ops::gelu(x);
        return classifier.fc2.same(t, x);
    }

    // Ties resolve toward the lower class: misjudging downward only costs
    // compute, not quality.
    static std::vector<int> predict_class(const Tensor<S>& logits) {
        const auto& s = logits.shape();
        std::vector<int> out;
        for (int64_t b = 0; b < s.b; ++b) {
            int best = 0;
            for (int64_t c = 1; c < s.c; ++c)
                if (logits.ptr()[b * s.c + c] > logits.ptr()[b * s.c + best]) best = static_cast<int>(c);
            out.push_back(best + 1);  // classes are 1-based
        }
        return out;
    }

    // ---- full restoration pass (handles padding) ----

    struct Restored {
        std::vector<Var<S>> enc;        // e_1..e_N (padded domain)
        std::vector<ColumnVars<S>> states;
        std::vector<Var<S>> s_hats;     // one restored image per executed column (original size)
    };

    Restored restore(Tape<S>& t, Var<S> image, int upto_j) const {
        const auto& is = image.shape();
        if (is.h < 16 || is.w < 16) throw ShapeError("restore: image smaller than 16 px");
        int64_t div = cfg.scale_divisor();
        int64_t ph = (div - is.h % div) % div;
        int64_t pw = (div - is.w % div) % div;
        Var<S> padded = (ph || pw) ? ops::reflect_pad(image, 0, static_cast<int>(ph), 0, static_cast<int>(pw))
                                   : image;
        Restored r;
        r.enc = encode(t, apply_head(t, padded));
        r.states = stack_forward(t, r.enc, upto_j, [&](int j, const ColumnVars<S>& state) {
            Var<S> s_hat = apply_tail(t, state[0], padded, j);
            if (ph || pw) s_hat = ops::crop(s_hat, 0, 0, is.h, is.w);
            r.s_hats.push_back(s_hat);
        });
        return r;
    }
};

}  // namespace rvd
