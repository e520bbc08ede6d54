#ifndef UGF_AUTODIFF_HPP
#define UGF_AUTODIFF_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ugforecast/tensor.hpp"

namespace ugf {

/// A named trainable tensor. The gradient buffer always matches the value
/// shape and accumulates additively across backward passes until zeroed.
struct Parameter {
    std::string id;
    Tensor value;
    Tensor gradient;

    Parameter(std::string id_, Tensor value_)
        : id(std::move(id_)), value(std::move(value_)), gradient(Tensor::zeros(value.shape())) {}

    void zero_grad() {
        for (std::size_t i = 0; i < gradient.numel(); ++i) gradient[i] = 0.0;
    }
};

namespace ad {

class Graph;

/// Lightweight handle to a node owned by a Graph.
class Var {
public:
    Var() : g_(nullptr), idx_(0) {}
    bool valid() const { return g_ != nullptr; }
    const Tensor& value() const;
    const Tensor& grad() const;

private:
    friend class Graph;
    Var(Graph* g, std::size_t i) : g_(g), idx_(i) {}
    Graph* g_;
    std::size_t idx_;
};

/// Eager reverse-mode tape. Every operation computes its value immediately
/// and records a backward closure; backward() sweeps the tape in reverse
/// creation order (a valid topological order by construction) and then
/// accumulates leaf gradients into their bound Parameters.
///
/// A graph is confined to one logical thread from first op through
/// backward(). Sampling ops take noise as constants, so gradients follow
/// the reparameterization path.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor v);
    Var scalar_const(double v) { return constant(Tensor::scalar(v)); }
    /// Leaf bound to a Parameter; repeated calls with the same Parameter
    /// return the same node, so reuse accumulates gradients naturally.
    Var param(Parameter& p);

    // elementwise (equal shapes unless noted)
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var smul(Var s, Var a);        // rank-0 s times tensor a
    Var ssub(Var a, Var s);        // a - s, rank-0 s broadcast
    Var exp_(Var a);
    Var log_(Var a);
    Var sqrt_(Var a);
    Var abs_(Var a);               // subgradient 0 at exactly 0
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var leaky_relu(Var a, double slope);
    Var clamp(Var a, double lo, double hi); // zero gradient outside [lo, hi]

    // shape
    Var reshape(Var a, std::vector<std::size_t> shape);
    Var slice0(Var a, std::size_t i);                  // (N, rest...) -> (rest...)
    Var stack0(const std::vector<Var>& parts);         // inverse of slice0
    Var concat_last(Var a, Var b);                     // (..., d1) ++ (..., d2)
    Var concat_axis1(Var a, Var b);                    // (N,Ta,D) ++ (N,Tb,D)
    Var slice_axis1(Var a, std::size_t t0, std::size_t t1); // (N,T,D) -> (N,t1-t0,D)
    Var transpose(Var a);                              // rank-2

    // linear algebra
    Var matmul(Var a, Var b);                          // (m,k) x (k,n)
    Var linear(Var x, Var w, Var b);                   // (...,C) @ (C,M) + (M,); b may be invalid
    Var conv1d_same(Var x, Var w, Var b);              // (N,L,Ci), (Co,k,Ci), (Co,)
    Var outer_add(Var u, Var v);                       // out[i,j] = u[i] + v[j]
    Var mul_axis0(Var a, Var s);                       // (N, rest...) * (N,)

    // reductions
    Var sum(Var a);                                    // -> rank-0
    Var mean(Var a);                                   // -> rank-0
    Var sum_last(Var a);                               // (..., d) -> (...)
    Var mean_last(Var a);                              // (..., d) -> (...)
    Var mean_axis1(Var a);                             // (N,L,d) -> (N,d)
    Var softmax_rows(Var a);                           // rank-2, rowwise
    Var first_diff_last(Var a);                        // (..., T) -> (..., T-1)

    /// Reverse sweep from a scalar loss; accumulates into bound Parameters.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Graph&)> back;
        bool needs_grad = false;
        bool grad_ready = false;
    };

    Var make(Tensor value, bool needs_grad, std::function<void(Graph&)> back);
    Tensor& grad_buf(std::size_t idx);
    bool needs(Var v) const { return nodes_[v.idx_].needs_grad; }
    const Tensor& val(Var v) const { return nodes_[v.idx_].value; }

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, std::size_t>> bindings_;
    std::unordered_map<const Parameter*, std::size_t> param_lookup_;
};

/// Pearson correlation of two flattened vars as a scalar node. Follows the
/// degenerate-input rule of ugf::pearson_correlation: if either side has
/// population std below 1e-12 the result is a constant 0 (gradient-free).
Var pearson_corr_flat(Graph& g, Var a, Var b);

} // namespace ad

/// Central finite differences (f(x+h) - f(x-h)) / 2h for every element of
/// every parameter. loss_fn must be deterministic (any noise re-seeded per
/// call); this is checked by evaluating it twice and comparing bit-exactly.
std::vector<Tensor> finite_difference_gradient(const std::function<double()>& loss_fn,
                                               const std::vector<Parameter*>& params,
                                               double step);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double gradient_max_rel_error(const Tensor& analytic, const Tensor& numeric,
                              double floor_scale = 1e-3);

} // namespace ugf

#endif
