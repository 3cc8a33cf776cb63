#pragma once

#include "revdeblur/ops.hpp"

namespace rvd {

// Composite restoration loss, averaged uniformly over the K predictions:
// mean L1 in image space plus 0.01 times the mean L1 over the real and
// imaginary components of the unnormalized half-spectrum difference.
template <class S>
Var<S> decoder_loss(Tape<S>& t, const std::vector<Var<S>>& s_hats, Var<S> sharp,
                    double frequency_weight = 0.01) {
    if (s_hats.empty()) throw ShapeError("decoder_loss: no predictions");
    Var<S> sharp_spec = ops::rfft2(sharp);
    Var<S> spatial, frequency;
    bool first = true;
    for (const Var<S>& s_hat : s_hats) {
        Var<S> l1 = ops::mean_abs(ops::sub(s_hat, sharp));
        Var<S> lf = ops::mean_abs(ops::sub(ops::rfft2(s_hat), sharp_spec));
        if (first) {
            spatial = l1;
            frequency = lf;
            first = false;
        } else {
            spatial = ops::add(spatial, l1);
            frequency = ops::add(frequency, lf);
        }
    }
    double inv_k = 1.0 / static_cast<double>(s_hats.size());
    return ops::add(ops::scale(spatial, inv_k), ops::scale(frequency, frequency_weight * inv_k));
}

// Cross-entropy over degradation classes; labels are 1-based.
template <class S>
Var<S> classifier_loss(Var<S> logits, const std::vector<int>& labels_1based) {
    std::vector<int> zero_based;
    zero_based.reserve(labels_1based.size());
    for (int c : labels_1based) zero_based.push_back(c - 1);
    return ops::softmax_cross_entropy(logits, std::move(zero_based));
}

}  // namespace rvd
