#include "ugforecast/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ugforecast/numerics.hpp"

namespace ugf {
namespace ad {

const Tensor& Var::value() const {
    UGF_REQUIRE(g_ != nullptr, "use of an unbound Var");
    return g_->nodes_[idx_].value;
}

const Tensor& Var::grad() const {
    UGF_REQUIRE(g_ != nullptr, "use of an unbound Var");
    UGF_REQUIRE(g_->nodes_[idx_].grad_ready, "gradient read before backward()");
    return g_->nodes_[idx_].grad;
}

Var Graph::make(Tensor value, bool needs_grad, std::function<void(Graph&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = needs_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buf(std::size_t idx) {
    Node& n = nodes_[idx];
    if (!n.grad_ready) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_ready = true;
    }
    return n.grad;
}

Var Graph::constant(Tensor v) { return make(std::move(v), false, nullptr); }

Var Graph::param(Parameter& p) {
    auto it = param_lookup_.find(&p);
    if (it != param_lookup_.end()) return Var(this, it->second);
    Var v = make(p.value, true, nullptr);
    param_lookup_.emplace(&p, v.idx_);
    bindings_.emplace_back(&p, v.idx_);
    return v;
}

namespace {
inline void same_graph(const Graph* g, const Graph* o) {
    UGF_REQUIRE(o == g, "vars belong to different graphs");
}
} // namespace

// Each op creates its output node first, then installs a closure that knows
// the output index. Closures read values from the tape, never copy tensors.

Var Graph::add(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    UGF_REQUIRE(val(a).same_shape(val(b)),
                "add: shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += val(b)[i];
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i];
        }
    };
    return o;
}

Var Graph::sub(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    UGF_REQUIRE(val(a).same_shape(val(b)),
                "sub: shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= val(b)[i];
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
        }
    };
    return o;
}

Var Graph::mul(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    UGF_REQUIRE(val(a).same_shape(val(b)),
                "mul: shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= val(b)[i];
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        const Tensor& vb = g.nodes_[ib].value;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb[i];
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
        }
    };
    return o;
}

Var Graph::div(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    UGF_REQUIRE(val(a).same_shape(val(b)),
                "div: shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= val(b)[i];
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vo = g.nodes_[io].value;
        const Tensor& vb = g.nodes_[ib].value;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / vb[i];
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t i = 0; i < go.numel(); ++i) gb[i] -= go[i] * vo[i] / vb[i];
        }
    };
    return o;
}

Var Graph::neg(Var a) { return scale(a, -1.0); }

Var Graph::scale(Var a, double c) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += c * go[i];
    };
    return o;
}

Var Graph::add_scalar(Var a, double c) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    };
    return o;
}

Var Graph::smul(Var s, Var a) {
    same_graph(this, s.g_);
    same_graph(this, a.g_);
    UGF_REQUIRE(val(s).numel() == 1, "smul: s must be a scalar");
    double sv = val(s)[0];
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    Var o = make(std::move(out), needs(a) || needs(s), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t is = s.idx_, ia = a.idx_, io = o.idx_;
    bool ns = needs(s), na = needs(a);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        double svv = g.nodes_[is].value[0];
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += svv * go[i];
        }
        if (ns) {
            Tensor& gs = g.grad_buf(is);
            double acc = 0.0;
            for (std::size_t i = 0; i < go.numel(); ++i) acc += go[i] * va[i];
            gs[0] += acc;
        }
    };
    return o;
}

Var Graph::ssub(Var a, Var s) {
    same_graph(this, a.g_);
    same_graph(this, s.g_);
    UGF_REQUIRE(val(s).numel() == 1, "ssub: s must be a scalar");
    double sv = val(s)[0];
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= sv;
    Var o = make(std::move(out), needs(a) || needs(s), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, is = s.idx_, io = o.idx_;
    bool na = needs(a), ns = needs(s);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (ns) {
            Tensor& gs = g.grad_buf(is);
            double acc = 0.0;
            for (std::size_t i = 0; i < go.numel(); ++i) acc += go[i];
            gs[0] -= acc;
        }
    };
    return o;
}

Var Graph::exp_(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vo = g.nodes_[io].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vo[i];
    };
    return o;
}

Var Graph::log_(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / va[i];
    };
    return o;
}

Var Graph::sqrt_(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vo = g.nodes_[io].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / (2.0 * vo[i]);
    };
    return o;
}

Var Graph::abs_(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) {
            double s = (va[i] > 0.0) ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
            ga[i] += go[i] * s;
        }
    };
    return o;
}

Var Graph::sigmoid(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ugf::sigmoid(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vo = g.nodes_[io].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
    };
    return o;
}

Var Graph::softplus(Var a) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ugf::softplus(out[i]);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * ugf::sigmoid(va[i]);
    };
    return o;
}

Var Graph::leaky_relu(Var a, double slope) {
    same_graph(this, a.g_);
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i)
            ga[i] += go[i] * (va[i] >= 0.0 ? 1.0 : slope);
    };
    return o;
}

Var Graph::clamp(Var a, double lo, double hi) {
    same_graph(this, a.g_);
    UGF_REQUIRE(lo < hi, "clamp: lo must be < hi");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], lo, hi);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& va = g.nodes_[ia].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i)
            if (va[i] >= lo && va[i] <= hi) ga[i] += go[i];
    };
    return o;
}

Var Graph::reshape(Var a, std::vector<std::size_t> shape) {
    same_graph(this, a.g_);
    Tensor out(std::move(shape), val(a).vec());
    UGF_REQUIRE(out.numel() == val(a).numel(), "reshape: element count mismatch");
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    };
    return o;
}

Var Graph::slice0(Var a, std::size_t i) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() >= 1, "slice0 expects rank >= 1");
    UGF_REQUIRE(i < va.dim(0), "slice0 index out of range");
    std::vector<std::size_t> shape(va.shape().begin() + 1, va.shape().end());
    std::size_t block = va.numel() / va.dim(0);
    Tensor out(shape.empty() ? std::vector<std::size_t>{} : shape);
    for (std::size_t k = 0; k < block; ++k) out[k] = va[i * block + k];
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=, off = i * block](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t k = 0; k < go.numel(); ++k) ga[off + k] += go[k];
    };
    return o;
}

Var Graph::stack0(const std::vector<Var>& parts) {
    UGF_REQUIRE(!parts.empty(), "stack0 of zero parts");
    bool ng = false;
    for (Var p : parts) {
        same_graph(this, p.g_);
        UGF_REQUIRE(val(p).same_shape(val(parts[0])), "stack0: parts differ in shape");
        ng = ng || needs(p);
    }
    const Tensor& first = val(parts[0]);
    std::vector<std::size_t> shape{parts.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    std::size_t block = first.numel();
    Tensor out(shape);
    for (std::size_t p = 0; p < parts.size(); ++p)
        for (std::size_t k = 0; k < block; ++k) out[p * block + k] = val(parts[p])[k];
    Var o = make(std::move(out), ng, nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::vector<std::size_t> idxs;
    std::vector<bool> flags;
    for (Var p : parts) {
        idxs.push_back(p.idx_);
        flags.push_back(needs(p));
    }
    std::size_t io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        for (std::size_t p = 0; p < idxs.size(); ++p) {
            if (!flags[p]) continue;
            Tensor& gp = g.grad_buf(idxs[p]);
            for (std::size_t k = 0; k < block; ++k) gp[k] += go[p * block + k];
        }
    };
    return o;
}

Var Graph::concat_last(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    UGF_REQUIRE(va.rank() == vb.rank() && va.rank() >= 1, "concat_last: rank mismatch");
    for (std::size_t d = 0; d + 1 < va.rank(); ++d)
        UGF_REQUIRE(va.dim(d) == vb.dim(d), "concat_last: leading dims differ");
    std::size_t da = va.dim(va.rank() - 1), db = vb.dim(vb.rank() - 1);
    std::size_t rows = va.numel() / da;
    std::vector<std::size_t> shape = va.shape();
    shape.back() = da + db;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < da; ++j) out[r * (da + db) + j] = va[r * da + j];
        for (std::size_t j = 0; j < db; ++j) out[r * (da + db) + da + j] = vb[r * db + j];
    }
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        for (std::size_t r = 0; r < rows; ++r) {
            if (na) {
                Tensor& ga = g.grad_buf(ia);
                for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += go[r * (da + db) + j];
            }
            if (nb) {
                Tensor& gb = g.grad_buf(ib);
                for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += go[r * (da + db) + da + j];
            }
        }
    };
    return o;
}

Var Graph::concat_axis1(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    UGF_REQUIRE(va.rank() == 3 && vb.rank() == 3, "concat_axis1 expects rank-3 tensors");
    UGF_REQUIRE(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
                "concat_axis1: incompatible shapes");
    std::size_t n = va.dim(0), ta = va.dim(1), tb = vb.dim(1), d = va.dim(2);
    Tensor out({n, ta + tb, d});
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t t = 0; t < ta; ++t)
            for (std::size_t k = 0; k < d; ++k) out.at3(in, t, k) = va.at3(in, t, k);
        for (std::size_t t = 0; t < tb; ++t)
            for (std::size_t k = 0; k < d; ++k) out.at3(in, ta + t, k) = vb.at3(in, t, k);
    }
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t in = 0; in < n; ++in)
                for (std::size_t t = 0; t < ta; ++t)
                    for (std::size_t k = 0; k < d; ++k)
                        ga[(in * ta + t) * d + k] += go[(in * (ta + tb) + t) * d + k];
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t in = 0; in < n; ++in)
                for (std::size_t t = 0; t < tb; ++t)
                    for (std::size_t k = 0; k < d; ++k)
                        gb[(in * tb + t) * d + k] += go[(in * (ta + tb) + ta + t) * d + k];
        }
    };
    return o;
}

Var Graph::slice_axis1(Var a, std::size_t t0, std::size_t t1) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() == 3, "slice_axis1 expects a rank-3 tensor");
    UGF_REQUIRE(t0 < t1 && t1 <= va.dim(1), "slice_axis1: bad range");
    std::size_t n = va.dim(0), t = va.dim(1), d = va.dim(2), w = t1 - t0;
    Tensor out({n, w, d});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t tt = 0; tt < w; ++tt)
            for (std::size_t k = 0; k < d; ++k) out.at3(in, tt, k) = va.at3(in, t0 + tt, k);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t tt = 0; tt < w; ++tt)
                for (std::size_t k = 0; k < d; ++k)
                    ga[(in * t + t0 + tt) * d + k] += go[(in * w + tt) * d + k];
    };
    return o;
}

Var Graph::transpose(Var a) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() == 2, "transpose expects a rank-2 tensor");
    std::size_t m = va.dim(0), n = va.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = va.at2(i, j);
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    };
    return o;
}

Var Graph::matmul(Var a, Var b) {
    same_graph(this, a.g_);
    same_graph(this, b.g_);
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    UGF_REQUIRE(va.rank() == 2 && vb.rank() == 2, "matmul expects rank-2 tensors");
    UGF_REQUIRE(va.dim(1) == vb.dim(0), "matmul: inner dimensions differ");
    std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double aik = va[i * k + kk];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * vb[kk * n + j];
        }
    Var o = make(std::move(out), needs(a) || needs(b), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, ib = b.idx_, io = o.idx_;
    bool na = needs(a), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vva = g.nodes_[ia].value;
        const Tensor& vvb = g.nodes_[ib].value;
        if (na) { // ga += go . b^T
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double gij = go[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t kk = 0; kk < k; ++kk)
                        ga[i * k + kk] += gij * vvb[kk * n + j];
                }
        }
        if (nb) { // gb += a^T . go
            Tensor& gb = g.grad_buf(ib);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double aik = vva[i * k + kk];
                    if (aik == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        gb[kk * n + j] += aik * go[i * n + j];
                }
        }
    };
    return o;
}

Var Graph::linear(Var x, Var w, Var b) {
    same_graph(this, x.g_);
    same_graph(this, w.g_);
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    UGF_REQUIRE(vw.rank() == 2, "linear: weight must be rank-2");
    UGF_REQUIRE(vx.rank() >= 1, "linear: input must have rank >= 1");
    std::size_t c = vw.dim(0), mdim = vw.dim(1);
    UGF_REQUIRE(vx.dim(vx.rank() - 1) == c, "linear: input feature dim " +
                                                std::to_string(vx.dim(vx.rank() - 1)) +
                                                " != weight rows " + std::to_string(c));
    bool has_b = b.valid();
    if (has_b) {
        same_graph(this, b.g_);
        UGF_REQUIRE(val(b).rank() == 1 && val(b).dim(0) == mdim, "linear: bias shape mismatch");
    }
    std::size_t rows = vx.numel() / c;
    std::vector<std::size_t> shape = vx.shape();
    shape.back() = mdim;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t kk = 0; kk < c; ++kk) {
            double xv = vx[r * c + kk];
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < mdim; ++j) out[r * mdim + j] += xv * vw[kk * mdim + j];
        }
    if (has_b) {
        const Tensor& vb = val(b);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < mdim; ++j) out[r * mdim + j] += vb[j];
    }
    bool ng = needs(x) || needs(w) || (has_b && needs(b));
    Var o = make(std::move(out), ng, nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ix = x.idx_, iw = w.idx_, io = o.idx_;
    std::size_t ibn = has_b ? b.idx_ : 0;
    bool nx = needs(x), nw = needs(w), nb = has_b && needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vvx = g.nodes_[ix].value;
        const Tensor& vvw = g.nodes_[iw].value;
        if (nx) {
            Tensor& gx = g.grad_buf(ix);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < mdim; ++j) {
                    double gj = go[r * mdim + j];
                    if (gj == 0.0) continue;
                    for (std::size_t kk = 0; kk < c; ++kk)
                        gx[r * c + kk] += gj * vvw[kk * mdim + j];
                }
        }
        if (nw) {
            Tensor& gw = g.grad_buf(iw);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t kk = 0; kk < c; ++kk) {
                    double xv = vvx[r * c + kk];
                    if (xv == 0.0) continue;
                    for (std::size_t j = 0; j < mdim; ++j)
                        gw[kk * mdim + j] += xv * go[r * mdim + j];
                }
        }
        if (nb) {
            Tensor& gb = g.grad_buf(ibn);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < mdim; ++j) gb[j] += go[r * mdim + j];
        }
    };
    return o;
}

Var Graph::conv1d_same(Var x, Var w, Var b) {
    same_graph(this, x.g_);
    same_graph(this, w.g_);
    same_graph(this, b.g_);
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    UGF_REQUIRE(vx.rank() == 3, "conv1d_same: input must be (N,L,Cin)");
    UGF_REQUIRE(vw.rank() == 3, "conv1d_same: kernel must be (Cout,k,Cin)");
    std::size_t n = vx.dim(0), l = vx.dim(1), ci = vx.dim(2);
    std::size_t co = vw.dim(0), k = vw.dim(1);
    UGF_REQUIRE(vw.dim(2) == ci, "conv1d_same: kernel channel mismatch");
    UGF_REQUIRE(k <= l, "conv1d_same: kernel wider than sequence");
    UGF_REQUIRE(vb.rank() == 1 && vb.dim(0) == co, "conv1d_same: bias shape mismatch");
    std::size_t pad = (k - 1) / 2;
    Tensor out({n, l, co});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t t = 0; t < l; ++t)
            for (std::size_t oc = 0; oc < co; ++oc) {
                double acc = vb[oc];
                for (std::size_t dt = 0; dt < k; ++dt) {
                    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + dt) -
                                         static_cast<std::ptrdiff_t>(pad);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
                    for (std::size_t ic = 0; ic < ci; ++ic)
                        acc += vx.at3(in, static_cast<std::size_t>(src), ic) * vw.at3(oc, dt, ic);
                }
                out.at3(in, t, oc) = acc;
            }
    bool ng = needs(x) || needs(w) || needs(b);
    Var o = make(std::move(out), ng, nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ix = x.idx_, iw = w.idx_, ib = b.idx_, io = o.idx_;
    bool nx = needs(x), nw = needs(w), nb = needs(b);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vvx = g.nodes_[ix].value;
        const Tensor& vvw = g.nodes_[iw].value;
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t t = 0; t < l; ++t)
                for (std::size_t oc = 0; oc < co; ++oc) {
                    double gout = go[(in * l + t) * co + oc];
                    if (gout == 0.0) continue;
                    if (nb) g.grad_buf(ib)[oc] += gout;
                    for (std::size_t dt = 0; dt < k; ++dt) {
                        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + dt) -
                                             static_cast<std::ptrdiff_t>(pad);
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(l)) continue;
                        std::size_t s = static_cast<std::size_t>(src);
                        for (std::size_t ic = 0; ic < ci; ++ic) {
                            if (nx)
                                g.grad_buf(ix)[(in * l + s) * ci + ic] +=
                                    gout * vvw[(oc * k + dt) * ci + ic];
                            if (nw)
                                g.grad_buf(iw)[(oc * k + dt) * ci + ic] +=
                                    gout * vvx[(in * l + s) * ci + ic];
                        }
                    }
                }
    };
    return o;
}

Var Graph::outer_add(Var u, Var v) {
    same_graph(this, u.g_);
    same_graph(this, v.g_);
    const Tensor& vu = val(u);
    const Tensor& vv = val(v);
    UGF_REQUIRE(vu.rank() == 1 && vv.rank() == 1, "outer_add expects rank-1 tensors");
    std::size_t m = vu.dim(0), n = vv.dim(0);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at2(i, j) = vu[i] + vv[j];
    Var o = make(std::move(out), needs(u) || needs(v), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t iu = u.idx_, iv = v.idx_, io = o.idx_;
    bool nu = needs(u), nv = needs(v);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        if (nu) {
            Tensor& gu = g.grad_buf(iu);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gu[i] += go[i * n + j];
        }
        if (nv) {
            Tensor& gv = g.grad_buf(iv);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gv[j] += go[i * n + j];
        }
    };
    return o;
}

Var Graph::mul_axis0(Var a, Var s) {
    same_graph(this, a.g_);
    same_graph(this, s.g_);
    const Tensor& va = val(a);
    const Tensor& vs = val(s);
    UGF_REQUIRE(va.rank() >= 1 && vs.rank() == 1 && vs.dim(0) == va.dim(0),
                "mul_axis0: s must be (N,) matching a's leading dim");
    std::size_t n = va.dim(0), block = va.numel() / n;
    Tensor out = va;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < block; ++k) out[i * block + k] *= vs[i];
    Var o = make(std::move(out), needs(a) || needs(s), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, is = s.idx_, io = o.idx_;
    bool na = needs(a), ns = needs(s);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& vva = g.nodes_[ia].value;
        const Tensor& vvs = g.nodes_[is].value;
        if (na) {
            Tensor& ga = g.grad_buf(ia);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < block; ++k)
                    ga[i * block + k] += go[i * block + k] * vvs[i];
        }
        if (ns) {
            Tensor& gs = g.grad_buf(is);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t k = 0; k < block; ++k)
                    acc += go[i * block + k] * vva[i * block + k];
                gs[i] += acc;
            }
        }
    };
    return o;
}

Var Graph::sum(Var a) {
    same_graph(this, a.g_);
    Tensor out = Tensor::scalar(val(a).sum_value());
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        double go = g.nodes_[io].grad[0];
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go;
    };
    return o;
}

Var Graph::mean(Var a) {
    same_graph(this, a.g_);
    std::size_t n = val(a).numel();
    Tensor out = Tensor::scalar(val(a).sum_value() / static_cast<double>(n));
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        double go = g.nodes_[io].grad[0] / static_cast<double>(n);
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go;
    };
    return o;
}

Var Graph::sum_last(Var a) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() >= 1, "sum_last expects rank >= 1");
    std::size_t d = va.dim(va.rank() - 1), rows = va.numel() / d;
    std::vector<std::size_t> shape(va.shape().begin(), va.shape().end() - 1);
    Tensor out(shape.empty() ? std::vector<std::size_t>{} : shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += va[r * d + j];
        out[r] = acc;
    }
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += go[r];
    };
    return o;
}

Var Graph::mean_last(Var a) {
    std::size_t d = val(a).dim(val(a).rank() - 1);
    return scale(sum_last(a), 1.0 / static_cast<double>(d));
}

Var Graph::mean_axis1(Var a) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() == 3, "mean_axis1 expects (N,L,d)");
    std::size_t n = va.dim(0), l = va.dim(1), d = va.dim(2);
    Tensor out({n, d});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (std::size_t t = 0; t < l; ++t) acc += va.at3(in, t, k);
            out.at2(in, k) = acc / static_cast<double>(l);
        }
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        double inv = 1.0 / static_cast<double>(l);
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t t = 0; t < l; ++t)
                for (std::size_t k = 0; k < d; ++k)
                    ga[(in * l + t) * d + k] += go[in * d + k] * inv;
    };
    return o;
}

Var Graph::softmax_rows(Var a) {
    same_graph(this, a.g_);
    Tensor out = ugf::softmax_rows(val(a));
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    std::size_t rows = val(a).dim(0), cols = val(a).dim(1);
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        const Tensor& p = g.nodes_[io].value;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += go[i * cols + j] * p[i * cols + j];
            for (std::size_t j = 0; j < cols; ++j)
                ga[i * cols + j] += p[i * cols + j] * (go[i * cols + j] - dot);
        }
    };
    return o;
}

Var Graph::first_diff_last(Var a) {
    same_graph(this, a.g_);
    const Tensor& va = val(a);
    UGF_REQUIRE(va.rank() >= 1, "first_diff_last expects rank >= 1");
    std::size_t t = va.dim(va.rank() - 1);
    UGF_REQUIRE(t >= 2, "first_diff_last needs at least two steps");
    std::size_t rows = va.numel() / t;
    std::vector<std::size_t> shape = va.shape();
    shape.back() = t - 1;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j + 1 < t; ++j)
            out[r * (t - 1) + j] = va[r * t + j + 1] - va[r * t + j];
    Var o = make(std::move(out), needs(a), nullptr);
    if (!nodes_[o.idx_].needs_grad) return o;
    std::size_t ia = a.idx_, io = o.idx_;
    nodes_[io].back = [=](Graph& g) {
        const Tensor& go = g.nodes_[io].grad;
        Tensor& ga = g.grad_buf(ia);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j + 1 < t; ++j) {
                double gv = go[r * (t - 1) + j];
                ga[r * t + j + 1] += gv;
                ga[r * t + j] -= gv;
            }
    };
    return o;
}

void Graph::backward(Var loss) {
    same_graph(this, loss.g_);
    UGF_REQUIRE(val(loss).numel() == 1, "backward: loss must be a scalar");
    grad_buf(loss.idx_)[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.back && n.grad_ready) n.back(*this);
    }
    for (auto& [p, idx] : bindings_) {
        if (!nodes_[idx].grad_ready) continue;
        const Tensor& g = nodes_[idx].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) p->gradient[i] += g[i];
    }
}

Var pearson_corr_flat(Graph& g, Var a, Var b) {
    const std::size_t n = a.value().numel();
    UGF_REQUIRE(n == b.value().numel(), "pearson_corr_flat: length mismatch");
    UGF_REQUIRE(n >= 2, "pearson_corr_flat: need at least 2 elements");
    Var af = g.reshape(a, {n});
    Var bf = g.reshape(b, {n});
    Var ca = g.ssub(af, g.mean(af));
    Var cb = g.ssub(bf, g.mean(bf));
    Var va = g.mean(g.mul(ca, ca));
    Var vb = g.mean(g.mul(cb, cb));
    double sa = std::sqrt(va.value()[0]);
    double sb = std::sqrt(vb.value()[0]);
    if (sa < 1e-12 || sb < 1e-12) return g.scalar_const(0.0);
    Var cov = g.mean(g.mul(ca, cb));
    return g.div(cov, g.mul(g.sqrt_(va), g.sqrt_(vb)));
}

} // namespace ad

std::vector<Tensor> finite_difference_gradient(const std::function<double()>& loss_fn,
                                               const std::vector<Parameter*>& params,
                                               double step) {
    UGF_REQUIRE(step > 0.0, "finite_difference_gradient: step must be positive");
    double probe1 = loss_fn();
    double probe2 = loss_fn();
    UGF_REQUIRE(probe1 == probe2,
                "oracle-invalid: loss_fn is non-deterministic (two evaluations differ)");
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Parameter* p : params) {
        Tensor g = Tensor::zeros(p->value.shape());
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            double saved = p->value[i];
            p->value[i] = saved + step;
            double fp = loss_fn();
            p->value[i] = saved - step;
            double fm = loss_fn();
            p->value[i] = saved;
            g[i] = (fp - fm) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double gradient_max_rel_error(const Tensor& analytic, const Tensor& numeric,
                              double floor_scale) {
    UGF_REQUIRE(analytic.same_shape(numeric), "gradient_max_rel_error: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor_scale});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

} // namespace ugf
