#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "revdeblur/tensor.hpp"

namespace rvd {

// Trainable tensor. Frozen parameters receive no gradient and are skipped by
// the optimizer. min_abs is enforced after every optimizer step (used by the
// per-level scaling factors, which must stay invertible).
template <class S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool frozen = false;
    S min_abs = S(0);

    Parameter() = default;
    Parameter(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor<S>(value.shape()); }
};

template <class S>
class ParamStore {
public:
    Parameter<S>& add(const std::string& name, Tensor<S> init) {
        if (by_name_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Parameter<S>>(name, std::move(init)));
        by_name_[name] = params_.back().get();
        return *params_.back();
    }

    Parameter<S>* find(const std::string& name) {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    std::vector<Parameter<S>*> all() {
        std::vector<Parameter<S>*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    size_t size() const { return params_.size(); }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter<S>>> params_;
    std::map<std::string, Parameter<S>*> by_name_;
};

struct SegmentMemory {
    size_t boundary_bytes = 0;       // values this segment keeps for backward
    size_t dropped_input_bytes = 0;  // values released at record time, rebuilt by inversion
};

struct MemoryReport {
    size_t interior_bytes = 0;  // saved-for-backward values of ordinary ops
    size_t boundary_bytes = 0;  // values retained only for reversible segments
    std::vector<SegmentMemory> segments;

    size_t total_retained() const { return interior_bytes + boundary_bytes; }
};

template <class S>
class Tape;

// Handle to a value slot on a tape.
template <class S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape4& shape() const;
};

// Reverse-mode tape over Tensor<S>. Ops append nodes whose `needs` lists the
// slots their backward reads; reversible segments record a single node and
// never tape the segment interior. In reversible mode a segment releases the
// values of inputs that were themselves produced by a segment; backward
// reconstructs them through the registered inverse in reverse column order.
template <class S>
class Tape {
public:
    struct Node {
        const char* op = "";
        std::vector<int> ins;
        std::vector<int> outs;
        std::vector<int> needs;
        std::function<void(Tape&, const Node&)> backward;
        // segment-only state
        bool is_segment = false;
        std::function<std::vector<Var<S>>(Tape&, const std::vector<Var<S>>&, const std::vector<Var<S>>&)> body;
        std::function<std::vector<Tensor<S>>(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&)> inverse;
        int n_rec = 0;  // ins[0..n_rec) reconstructable, rest auxiliary
        size_t dropped_bytes = 0;
        std::vector<std::pair<int, Tensor<S>>> debug_copies;
    };

    struct DebugOptions {
        bool keep_dropped = false;  // retain released values and verify reconstruction
        double recon_tol = sizeof(S) == 4 ? 1e-4 : 1e-9;
    };

    explicit Tape(bool recording = true, bool reversible = false)
        : recording_(recording), reversible_(reversible) {}

    bool recording() const { return recording_; }
    bool reversible() const { return reversible_; }
    void set_reversible(bool on) { reversible_ = on; }
    DebugOptions& debug() { return debug_; }

    // ---- slots ----

    Var<S> leaf(Tensor<S> v) { return Var<S>{this, new_slot(std::move(v), nullptr, false)}; }

    Var<S> param(Parameter<S>& p) {
        auto it = param_slots_.find(&p);
        if (it != param_slots_.end()) return Var<S>{this, it->second};
        int id = new_slot(p.value, &p, false);
        param_slots_[&p] = id;
        return Var<S>{this, id};
    }

    const Tensor<S>& val(int id) const {
        const Slot& s = slots_.at(static_cast<size_t>(id));
        if (!s.value.defined())
            throw std::runtime_error("tape slot " + std::to_string(id) + " read after release");
        return s.value;
    }

    const Tensor<S>& val(Var<S> v) const { return val(v.id); }
    const Shape4& shape_of(int id) const { return slots_.at(static_cast<size_t>(id)).value.shape(); }
    bool present(int id) const { return slots_.at(static_cast<size_t>(id)).value.defined(); }
    bool is_param_slot(int id) const { return slots_.at(static_cast<size_t>(id)).param != nullptr; }

    // ---- op recording (used by ops.hpp) ----

    Var<S> emit(const char* op, std::vector<int> ins, Tensor<S> out, std::vector<int> needs,
                std::function<void(Tape&, const Node&)> backward) {
        check_finite(op, out);
        int out_id = new_slot(std::move(out), nullptr, false);
        push_node(op, std::move(ins), {out_id}, std::move(needs), std::move(backward));
        return Var<S>{this, out_id};
    }

    std::pair<Var<S>, Var<S>> emit2(const char* op, std::vector<int> ins, Tensor<S> out_a, Tensor<S> out_b,
                                    std::vector<int> needs,
                                    std::function<void(Tape&, const Node&)> backward) {
        check_finite(op, out_a);
        check_finite(op, out_b);
        int a = new_slot(std::move(out_a), nullptr, false);
        int b = new_slot(std::move(out_b), nullptr, false);
        push_node(op, std::move(ins), {a, b}, std::move(needs), std::move(backward));
        return {Var<S>{this, a}, Var<S>{this, b}};
    }

    // ---- reversible segments ----

    std::vector<Var<S>> segment(
        const char* name,
        std::function<std::vector<Var<S>>(Tape&, const std::vector<Var<S>>&, const std::vector<Var<S>>&)> body,
        std::function<std::vector<Tensor<S>>(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&)> inverse,
        const std::vector<Var<S>>& rec_ins, const std::vector<Var<S>>& aux_ins) {
        if (!recording_ || !reversible_) return body(*this, rec_ins, aux_ins);

        // Forward on a scratch tape; interior activations die with it.
        Tape scratch(false, false);
        std::vector<Var<S>> srec, saux;
        for (const auto& v : rec_ins) srec.push_back(scratch.leaf(val(v.id)));
        for (const auto& v : aux_ins) saux.push_back(scratch.leaf(val(v.id)));
        std::vector<Var<S>> souts = body(scratch, srec, saux);

        Node node;
        node.op = name;
        node.is_segment = true;
        node.body = body;
        node.inverse = inverse;
        node.n_rec = static_cast<int>(rec_ins.size());
        for (const auto& v : rec_ins) node.ins.push_back(v.id);
        for (const auto& v : aux_ins) node.ins.push_back(v.id);

        std::vector<Var<S>> outs;
        for (const auto& sv : souts) {
            int id = new_slot(scratch.val(sv.id), nullptr, true);
            node.outs.push_back(id);
            outs.push_back(Var<S>{this, id});
        }
        node.needs = node.outs;
        for (const auto& v : aux_ins) node.needs.push_back(v.id);

        // Release reconstructable inputs that a segment produced. Plain
        // (non-segment) producers keep their values; their own backward
        // still needs them.
        for (const auto& v : rec_ins) {
            Slot& s = slots_[static_cast<size_t>(v.id)];
            if (!s.from_segment || s.param != nullptr) continue;
            node.dropped_bytes += s.value.bytes();
            if (debug_.keep_dropped) node.debug_copies.emplace_back(v.id, s.value.clone());
            s.value.release();
        }

        nodes_.push_back(std::move(node));
        return outs;
    }

    // ---- backward ----

    void backward(const std::vector<std::pair<Var<S>, Tensor<S>>>& seeds) {
        grads_.assign(slots_.size(), Tensor<S>());
        for (const auto& [v, g] : seeds) {
            if (g.shape() != shape_of(v.id))
                throw ShapeError("backward seed shape " + g.shape().str() + " does not match value " +
                                 shape_of(v.id).str());
            add_grad(v.id, g);
        }
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (n.is_segment) {
                segment_backward(n);
                continue;
            }
            bool any = false;
            for (int o : n.outs) any = any || has_grad(o);
            if (any) n.backward(*this, n);
        }
        for (auto& [p, id] : param_slots_) {
            if (p->frozen || !has_grad(id)) continue;
            accumulate(p->grad, grads_[static_cast<size_t>(id)]);
        }
    }

    bool has_grad(int id) const { return grads_[static_cast<size_t>(id)].defined(); }

    const Tensor<S>& grad_ref(int id) const { return grads_[static_cast<size_t>(id)]; }

    Tensor<S> grad(Var<S> v) const {
        if (grads_.empty() || !has_grad(v.id)) return Tensor<S>(shape_of(v.id));
        return grads_[static_cast<size_t>(v.id)];
    }

    void add_grad(int id, const Tensor<S>& g) {
        Tensor<S>& slot = grads_[static_cast<size_t>(id)];
        if (!slot.defined()) {
            slot = g.clone();
            return;
        }
        accumulate(slot, g);
    }

    // ---- memory accounting ----

    MemoryReport count_live_activations() const {
        std::set<int> by_ordinary, by_segment;
        for (const Node& n : nodes_)
            for (int id : n.needs) (n.is_segment ? by_segment : by_ordinary).insert(id);
        MemoryReport rep;
        for (int id : by_ordinary)
            if (present(id) && !is_param_slot(id)) rep.interior_bytes += slots_[static_cast<size_t>(id)].value.bytes();
        for (int id : by_segment)
            if (present(id) && !is_param_slot(id) && !by_ordinary.count(id))
                rep.boundary_bytes += slots_[static_cast<size_t>(id)].value.bytes();
        for (const Node& n : nodes_) {
            if (!n.is_segment) continue;
            SegmentMemory sm;
            sm.dropped_input_bytes = n.dropped_bytes;
            for (int id : n.needs)
                if (present(id) && !is_param_slot(id)) sm.boundary_bytes += slots_[static_cast<size_t>(id)].value.bytes();
            rep.segments.push_back(sm);
        }
        return rep;
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Slot {
        Tensor<S> value;
        Parameter<S>* param = nullptr;
        bool from_segment = false;
    };

    int new_slot(Tensor<S> v, Parameter<S>* p, bool from_segment) {
        slots_.push_back(Slot{std::move(v), p, from_segment});
        return static_cast<int>(slots_.size()) - 1;
    }

    void push_node(const char* op, std::vector<int> ins, std::vector<int> outs, std::vector<int> needs,
                   std::function<void(Tape&, const Node&)> backward) {
        if (!recording_) return;
        Node n;
        n.op = op;
        n.ins = std::move(ins);
        n.outs = std::move(outs);
        n.needs = std::move(needs);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
    }

    static void check_finite(const char* op, const Tensor<S>& t) {
        if (!t.all_finite()) throw NumericError(std::string("non-finite values produced by op '") + op + "'");
    }

    static void accumulate(Tensor<S>& dst, const Tensor<S>& src) {
        if (dst.shape() != src.shape())
            throw ShapeError("gradient accumulate shape mismatch " + dst.shape().str() + " vs " + src.shape().str());
        S* d = dst.mut();
        const S* s = src.ptr();
        for (int64_t i = 0, n = dst.numel(); i < n; ++i) d[i] += s[i];
    }

    void segment_backward(Node& n) {
        std::vector<Tensor<S>> out_vals, aux_vals;
        for (int id : n.outs) out_vals.push_back(val(id));
        for (size_t i = static_cast<size_t>(n.n_rec); i < n.ins.size(); ++i) aux_vals.push_back(val(n.ins[i]));

        bool all_present = true;
        for (int i = 0; i < n.n_rec; ++i) all_present = all_present && present(n.ins[i]);

        std::vector<Tensor<S>> rec_vals;
        if (all_present) {
            for (int i = 0; i < n.n_rec; ++i) rec_vals.push_back(val(n.ins[i]));
        } else {
            rec_vals = n.inverse(out_vals, aux_vals);
            if (static_cast<int>(rec_vals.size()) != n.n_rec)
                throw std::runtime_error(std::string("segment '") + n.op + "' inverse returned wrong arity");
            for (const auto& [id, stored] : n.debug_copies) {
                for (int i = 0; i < n.n_rec; ++i) {
                    if (n.ins[i] != id) continue;
                    double err = rel_linf(rec_vals[static_cast<size_t>(i)], stored);
                    if (err > debug_.recon_tol)
                        throw NumericError(std::string("segment '") + n.op + "' reconstruction error " +
                                           std::to_string(err) + " exceeds bound " + std::to_string(debug_.recon_tol));
                }
            }
            for (int i = 0; i < n.n_rec; ++i)
                slots_[static_cast<size_t>(n.ins[i])].value = rec_vals[static_cast<size_t>(i)];
        }

        bool any = false;
        for (int o : n.outs) any = any || has_grad(o);
        if (!any) return;

        // Re-execute the body on a local tape rooted at the (reconstructed)
        // inputs, then pull gradients through it.
        Tape local(true, false);
        std::vector<Var<S>> lrec, laux;
        for (int i = 0; i < n.n_rec; ++i) lrec.push_back(local.leaf(rec_vals[static_cast<size_t>(i)]));
        for (size_t i = 0; i < aux_vals.size(); ++i) laux.push_back(local.leaf(aux_vals[i]));
        std::vector<Var<S>> louts = n.body(local, lrec, laux);

        std::vector<std::pair<Var<S>, Tensor<S>>> seeds;
        for (size_t i = 0; i < n.outs.size(); ++i)
            if (has_grad(n.outs[static_cast<size_t>(i)]))
                seeds.emplace_back(louts[i], grads_[static_cast<size_t>(n.outs[i])]);
        local.backward(seeds);

        for (int i = 0; i < n.n_rec; ++i)
            if (local.has_grad(lrec[static_cast<size_t>(i)].id))
                add_grad(n.ins[i], local.grad_ref(lrec[static_cast<size_t>(i)].id));
        for (size_t i = 0; i < laux.size(); ++i)
            if (local.has_grad(laux[i].id))
                add_grad(n.ins[static_cast<size_t>(n.n_rec) + i], local.grad_ref(laux[i].id));
    }

    bool recording_;
    bool reversible_;
    DebugOptions debug_;
    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    std::vector<Tensor<S>> grads_;
    std::map<Parameter<S>*, int> param_slots_;
};

template <class S>
const Shape4& Var<S>::shape() const {
    return tape->shape_of(id);
}

}  // namespace rvd
