#include "dfreg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dfreg::ad {

Tensor::Tensor(std::vector<int> s) : Tensor(std::move(s), 0.0) {}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    if (n != numel()) throw std::invalid_argument("Tensor: data length does not match shape " + shape_str());
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor::zeros(data.shape);
        grad_ready = true;
    }
}

Value make_leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->data = std::move(t);
    n->requires_grad = requires_grad;
    return n;
}

Value constant(Tensor t) { return make_leaf(std::move(t), false); }

namespace {

Value make_op(const char* op, Tensor out, std::vector<Value> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->data = std::move(out);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(bp);
    return n;
}

void require_same(const Value& a, const Value& b, const char* op) {
    if (a->data.shape != b->data.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->data.shape_str() + " vs " +
                                    b->data.shape_str());
}

int spatial_rank(const Tensor& t, const char* op) {
    int sd = t.rank() - 1;
    if (sd != 2 && sd != 3)
        throw std::invalid_argument(std::string(op) + ": expected [channels,spatial...] tensor, got " + t.shape_str());
    return sd;
}

inline void accumulate(Node& parent, std::int64_t i, double v) { parent.grad.data[static_cast<std::size_t>(i)] += v; }

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Value add(const Value& a, const Value& b) {
    require_same(a, b, "add");
    Tensor out = a->data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->data.data[i];
    return make_op("add", std::move(out), {a, b}, [](Node& n) {
        for (int p = 0; p < 2; ++p) {
            Node& par = *n.parents[static_cast<std::size_t>(p)];
            if (!par.requires_grad) continue;
            par.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) par.grad.data[i] += n.grad.data[i];
        }
    });
}

Value sub(const Value& a, const Value& b) {
    require_same(a, b, "sub");
    Tensor out = a->data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->data.data[i];
    return make_op("sub", std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) pa.grad.data[i] += n.grad.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) pb.grad.data[i] -= n.grad.data[i];
        }
    });
}

Value mul(const Value& a, const Value& b) {
    require_same(a, b, "mul");
    Tensor out = a->data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->data.data[i];
    return make_op("mul", std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) pa.grad.data[i] += n.grad.data[i] * pb.data.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) pb.grad.data[i] += n.grad.data[i] * pa.data.data[i];
        }
    });
}

Value divide(const Value& a, const Value& b) {
    require_same(a, b, "divide");
    Tensor out = a->data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b->data.data[i];
    return make_op("divide", std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) pa.grad.data[i] += n.grad.data[i] / pb.data.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                double bi = pb.data.data[i];
                pb.grad.data[i] -= n.grad.data[i] * pa.data.data[i] / (bi * bi);
            }
        }
    });
}

namespace {

template <typename Fwd, typename Bwd>
Value unary_op(const Value& a, const char* op, Fwd fwd, Bwd dfn) {
    Tensor out = a->data;
    for (double& v : out.data) v = fwd(v);
    return make_op(op, std::move(out), {a}, [dfn](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < n.grad.data.size(); ++i)
            pa.grad.data[i] += n.grad.data[i] * dfn(pa.data.data[i], n.data.data[i]);
    });
}

}  // namespace

Value scale(const Value& a, double c) {
    return unary_op(
        a, "scale", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Value add_const(const Value& a, double c) {
    return unary_op(
        a, "add_const", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value relu(const Value& a) {
    return unary_op(
        a, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value sigmoid(const Value& a) {
    return unary_op(
        a, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Value tanh_v(const Value& a) {
    return unary_op(
        a, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Value abs_v(const Value& a) {
    return unary_op(
        a, "abs", [](double v) { return std::abs(v); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value clamp_min(const Value& a, double floor) {
    return unary_op(
        a, "clamp_min", [floor](double v) { return v < floor ? floor : v; },
        [floor](double x, double) { return x >= floor ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Value sum_all(const Value& a) {
    double acc = 0.0;
    for (double v : a->data.data) acc += v;
    return make_op("sum", Tensor::scalar(acc), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        double g = n.grad.data[0];
        for (double& v : pa.grad.data) v += g;
    });
}

Value mean_all(const Value& a) {
    double acc = 0.0;
    for (double v : a->data.data) acc += v;
    double inv = 1.0 / static_cast<double>(a->data.numel());
    return make_op("mean", Tensor::scalar(acc * inv), {a}, [inv](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        double g = n.grad.data[0] * inv;
        for (double& v : pa.grad.data) v += g;
    });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Value concat_ch(std::span<const Value> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_ch: no inputs");
    const Tensor& first = parts[0]->data;
    std::vector<int> spatial(first.shape.begin() + 1, first.shape.end());
    int channels = 0;
    for (const auto& p : parts) {
        std::vector<int> sp(p->data.shape.begin() + 1, p->data.shape.end());
        if (sp != spatial)
            throw std::invalid_argument("concat_ch: shape mismatch " + first.shape_str() + " vs " +
                                        p->data.shape_str());
        channels += p->data.shape[0];
    }
    std::vector<int> oshape{channels};
    oshape.insert(oshape.end(), spatial.begin(), spatial.end());
    Tensor out(oshape);
    std::size_t pos = 0;
    for (const auto& p : parts) {
        std::copy(p->data.data.begin(), p->data.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(pos));
        pos += p->data.data.size();
    }
    return make_op("concat", std::move(out), std::vector<Value>(parts.begin(), parts.end()), [](Node& n) {
        std::size_t pos = 0;
        for (auto& pp : n.parents) {
            Node& pa = *pp;
            std::size_t len = pa.data.data.size();
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < len; ++i) pa.grad.data[i] += n.grad.data[pos + i];
            }
            pos += len;
        }
    });
}

Value concat_ch(std::initializer_list<Value> parts) {
    std::vector<Value> v(parts);
    return concat_ch(std::span<const Value>(v));
}

Value slice_ch(const Value& a, int c0, int c1) {
    const Tensor& t = a->data;
    if (c0 < 0 || c1 <= c0 || c1 > t.shape[0]) throw std::invalid_argument("slice_ch: bad channel range");
    std::int64_t per_ch = t.numel() / t.shape[0];
    std::vector<int> oshape = t.shape;
    oshape[0] = c1 - c0;
    Tensor out(oshape);
    std::copy(t.data.begin() + c0 * per_ch, t.data.begin() + c1 * per_ch, out.data.begin());
    return make_op("slice", std::move(out), {a}, [c0, per_ch](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        std::size_t base = static_cast<std::size_t>(c0 * per_ch);
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) pa.grad.data[base + i] += n.grad.data[i];
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int cin, cout;
    std::array<int, 3> in{1, 1, 1}, out{1, 1, 1}, k{1, 1, 1};
    int sd;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, const char* op) {
    ConvDims cd;
    cd.sd = spatial_rank(x, op);
    if (w.rank() != cd.sd + 2)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + x.shape_str() + " vs " + w.shape_str());
    cd.cout = w.shape[0];
    cd.cin = w.shape[1];
    if (x.shape[0] != cd.cin)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + x.shape_str() + " vs " + w.shape_str());
    if (stride != 1 && stride != 2) throw std::invalid_argument(std::string(op) + ": stride must be 1 or 2");
    for (int a = 0; a < cd.sd; ++a) {
        cd.in[static_cast<std::size_t>(a)] = x.shape[static_cast<std::size_t>(a + 1)];
        cd.k[static_cast<std::size_t>(a)] = w.shape[static_cast<std::size_t>(a + 2)];
        cd.out[static_cast<std::size_t>(a)] = (cd.in[static_cast<std::size_t>(a)] + 2 * pad - cd.k[static_cast<std::size_t>(a)]) / stride + 1;
        if (cd.out[static_cast<std::size_t>(a)] < 1)
            throw std::invalid_argument(std::string(op) + ": kernel larger than padded input");
    }
    return cd;
}

// Output-range clip for one kernel offset: valid oy with 0 <= oy*s + ky - pad < n.
inline std::pair<int, int> out_range(int k_off, int n_in, int n_out, int stride, int pad) {
    int lo = 0;
    while (lo * stride + k_off - pad < 0) ++lo;
    int hi = n_out - 1;
    while (hi >= 0 && hi * stride + k_off - pad >= n_in) --hi;
    return {lo, hi};
}

}  // namespace

Value conv_nd(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    ConvDims cd = conv_dims(x->data, w->data, stride, pad, "conv_nd");
    if (b && b->data.numel() != cd.cout)
        throw std::invalid_argument("conv_nd: bias shape mismatch " + b->data.shape_str());

    std::vector<int> oshape{cd.cout};
    for (int a = 0; a < cd.sd; ++a) oshape.push_back(cd.out[static_cast<std::size_t>(a)]);
    Tensor out(oshape);

    const double* X = x->data.data.data();
    const double* W = w->data.data.data();
    double* O = out.data.data();

    if (cd.sd == 2) {
        const int H = cd.in[0], Wd = cd.in[1], OH = cd.out[0], OW = cd.out[1], KH = cd.k[0], KW = cd.k[1];
        if (b) {
            for (int co = 0; co < cd.cout; ++co)
                std::fill(O + static_cast<std::int64_t>(co) * OH * OW, O + static_cast<std::int64_t>(co + 1) * OH * OW, b->data.data[static_cast<std::size_t>(co)]);
        }
        for (int co = 0; co < cd.cout; ++co)
            for (int ci = 0; ci < cd.cin; ++ci)
                for (int ky = 0; ky < KH; ++ky) {
                    auto [oy_lo, oy_hi] = out_range(ky, H, OH, stride, pad);
                    for (int kx = 0; kx < KW; ++kx) {
                        auto [ox_lo, ox_hi] = out_range(kx, Wd, OW, stride, pad);
                        double wv = W[((static_cast<std::int64_t>(co) * cd.cin + ci) * KH + ky) * KW + kx];
                        if (wv == 0.0) continue;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const double* xrow = X + (static_cast<std::int64_t>(ci) * H + (oy * stride + ky - pad)) * Wd;
                            double* orow = O + (static_cast<std::int64_t>(co) * OH + oy) * OW;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                orow[ox] += wv * xrow[ox * stride + kx - pad];
                        }
                    }
                }
    } else {
        const int D = cd.in[0], H = cd.in[1], Wd = cd.in[2];
        const int OD = cd.out[0], OH = cd.out[1], OW = cd.out[2];
        const int KD = cd.k[0], KH = cd.k[1], KW = cd.k[2];
        if (b) {
            for (int co = 0; co < cd.cout; ++co)
                std::fill(O + static_cast<std::int64_t>(co) * OD * OH * OW, O + static_cast<std::int64_t>(co + 1) * OD * OH * OW, b->data.data[static_cast<std::size_t>(co)]);
        }
        for (int co = 0; co < cd.cout; ++co)
            for (int ci = 0; ci < cd.cin; ++ci)
                for (int kz = 0; kz < KD; ++kz) {
                    auto [oz_lo, oz_hi] = out_range(kz, D, OD, stride, pad);
                    for (int ky = 0; ky < KH; ++ky) {
                        auto [oy_lo, oy_hi] = out_range(ky, H, OH, stride, pad);
                        for (int kx = 0; kx < KW; ++kx) {
                            auto [ox_lo, ox_hi] = out_range(kx, Wd, OW, stride, pad);
                            double wv = W[(((static_cast<std::int64_t>(co) * cd.cin + ci) * KD + kz) * KH + ky) * KW + kx];
                            if (wv == 0.0) continue;
                            for (int oz = oz_lo; oz <= oz_hi; ++oz)
                                for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                    const double* xrow = X + ((static_cast<std::int64_t>(ci) * D + (oz * stride + kz - pad)) * H + (oy * stride + ky - pad)) * Wd;
                                    double* orow = O + ((static_cast<std::int64_t>(co) * OD + oz) * OH + oy) * OW;
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                        orow[ox] += wv * xrow[ox * stride + kx - pad];
                                }
                        }
                    }
                }
    }

    std::vector<Value> parents{x, w};
    if (b) parents.push_back(b);
    return make_op("conv", std::move(out), std::move(parents), [cd, stride, pad](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        const double* G = n.grad.data.data();
        const double* X = px.data.data.data();
        const double* W = pw.data.data.data();
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        if (pb && pb->requires_grad) pb->ensure_grad();

        if (cd.sd == 2) {
            const int H = cd.in[0], Wd = cd.in[1], OH = cd.out[0], OW = cd.out[1], KH = cd.k[0], KW = cd.k[1];
            for (int co = 0; co < cd.cout; ++co) {
                if (pb && pb->requires_grad) {
                    double acc = 0.0;
                    const double* grow = G + static_cast<std::int64_t>(co) * OH * OW;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += grow[i];
                    pb->grad.data[static_cast<std::size_t>(co)] += acc;
                }
                for (int ci = 0; ci < cd.cin; ++ci)
                    for (int ky = 0; ky < KH; ++ky) {
                        auto [oy_lo, oy_hi] = out_range(ky, H, OH, stride, pad);
                        for (int kx = 0; kx < KW; ++kx) {
                            auto [ox_lo, ox_hi] = out_range(kx, Wd, OW, stride, pad);
                            std::int64_t widx = ((static_cast<std::int64_t>(co) * cd.cin + ci) * KH + ky) * KW + kx;
                            double wv = W[widx];
                            double wacc = 0.0;
                            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                const double* grow = G + (static_cast<std::int64_t>(co) * OH + oy) * OW;
                                const double* xrow = X + (static_cast<std::int64_t>(ci) * H + (oy * stride + ky - pad)) * Wd;
                                double* gxrow = px.requires_grad
                                                    ? px.grad.data.data() + (static_cast<std::int64_t>(ci) * H + (oy * stride + ky - pad)) * Wd
                                                    : nullptr;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    double g = grow[ox];
                                    wacc += g * xrow[ox * stride + kx - pad];
                                    if (gxrow) gxrow[ox * stride + kx - pad] += g * wv;
                                }
                            }
                            if (pw.requires_grad) pw.grad.data[static_cast<std::size_t>(widx)] += wacc;
                        }
                    }
            }
        } else {
            const int D = cd.in[0], H = cd.in[1], Wd = cd.in[2];
            const int OD = cd.out[0], OH = cd.out[1], OW = cd.out[2];
            const int KD = cd.k[0], KH = cd.k[1], KW = cd.k[2];
            for (int co = 0; co < cd.cout; ++co) {
                if (pb && pb->requires_grad) {
                    double acc = 0.0;
                    const double* grow = G + static_cast<std::int64_t>(co) * OD * OH * OW;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(OD) * OH * OW; ++i) acc += grow[i];
                    pb->grad.data[static_cast<std::size_t>(co)] += acc;
                }
                for (int ci = 0; ci < cd.cin; ++ci)
                    for (int kz = 0; kz < KD; ++kz) {
                        auto [oz_lo, oz_hi] = out_range(kz, D, OD, stride, pad);
                        for (int ky = 0; ky < KH; ++ky) {
                            auto [oy_lo, oy_hi] = out_range(ky, H, OH, stride, pad);
                            for (int kx = 0; kx < KW; ++kx) {
                                auto [ox_lo, ox_hi] = out_range(kx, Wd, OW, stride, pad);
                                std::int64_t widx = (((static_cast<std::int64_t>(co) * cd.cin + ci) * KD + kz) * KH + ky) * KW + kx;
                                double wv = W[widx];
                                double wacc = 0.0;
                                for (int oz = oz_lo; oz <= oz_hi; ++oz)
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const double* grow = G + ((static_cast<std::int64_t>(co) * OD + oz) * OH + oy) * OW;
                                        std::int64_t xoff = ((static_cast<std::int64_t>(ci) * D + (oz * stride + kz - pad)) * H + (oy * stride + ky - pad)) * Wd;
                                        const double* xrow = X + xoff;
                                        double* gxrow = px.requires_grad ? px.grad.data.data() + xoff : nullptr;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                            double g = grow[ox];
                                            wacc += g * xrow[ox * stride + kx - pad];
                                            if (gxrow) gxrow[ox * stride + kx - pad] += g * wv;
                                        }
                                    }
                                if (pw.requires_grad) pw.grad.data[static_cast<std::size_t>(widx)] += wacc;
                            }
                        }
                    }
            }
        }
    });
}

Value conv_transpose_nd(const Value& x, const Value& w, const Value& b, int stride) {
    const Tensor& xt = x->data;
    const Tensor& wt = w->data;
    int sd = spatial_rank(xt, "conv_transpose_nd");
    if (wt.rank() != sd + 2 || wt.shape[0] != xt.shape[0])
        throw std::invalid_argument("conv_transpose_nd: shape mismatch " + xt.shape_str() + " vs " + wt.shape_str());
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv_transpose_nd: stride must be 1 or 2");
    const int cin = wt.shape[0], cout = wt.shape[1];
    if (b && b->data.numel() != cout)
        throw std::invalid_argument("conv_transpose_nd: bias shape mismatch " + b->data.shape_str());

    std::array<int, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1};
    std::vector<int> oshape{cout};
    for (int a = 0; a < sd; ++a) {
        in[static_cast<std::size_t>(a)] = xt.shape[static_cast<std::size_t>(a + 1)];
        k[static_cast<std::size_t>(a)] = wt.shape[static_cast<std::size_t>(a + 2)];
        out[static_cast<std::size_t>(a)] = (in[static_cast<std::size_t>(a)] - 1) * stride + k[static_cast<std::size_t>(a)];
        oshape.push_back(out[static_cast<std::size_t>(a)]);
    }
    Tensor o(oshape);
    const double* X = xt.data.data();
    const double* W = wt.data.data();
    double* O = o.data.data();

    if (sd == 2) {
        const int H = in[0], Wd = in[1], OH = out[0], OW = out[1], KH = k[0], KW = k[1];
        if (b)
            for (int co = 0; co < cout; ++co)
                std::fill(O + static_cast<std::int64_t>(co) * OH * OW, O + static_cast<std::int64_t>(co + 1) * OH * OW, b->data.data[static_cast<std::size_t>(co)]);
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx) {
                        double wv = W[((static_cast<std::int64_t>(ci) * cout + co) * KH + ky) * KW + kx];
                        if (wv == 0.0) continue;
                        for (int iy = 0; iy < H; ++iy) {
                            const double* xrow = X + (static_cast<std::int64_t>(ci) * H + iy) * Wd;
                            double* orow = O + (static_cast<std::int64_t>(co) * OH + (iy * stride + ky)) * OW + kx;
                            for (int ix = 0; ix < Wd; ++ix) orow[ix * stride] += wv * xrow[ix];
                        }
                    }
    } else {
        const int D = in[0], H = in[1], Wd = in[2], OD = out[0], OH = out[1], OW = out[2];
        const int KD = k[0], KH = k[1], KW = k[2];
        if (b)
            for (int co = 0; co < cout; ++co)
                std::fill(O + static_cast<std::int64_t>(co) * OD * OH * OW, O + static_cast<std::int64_t>(co + 1) * OD * OH * OW, b->data.data[static_cast<std::size_t>(co)]);
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                for (int kz = 0; kz < KD; ++kz)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            double wv = W[(((static_cast<std::int64_t>(ci) * cout + co) * KD + kz) * KH + ky) * KW + kx];
                            if (wv == 0.0) continue;
                            for (int iz = 0; iz < D; ++iz)
                                for (int iy = 0; iy < H; ++iy) {
                                    const double* xrow = X + ((static_cast<std::int64_t>(ci) * D + iz) * H + iy) * Wd;
                                    double* orow = O + ((static_cast<std::int64_t>(co) * OD + (iz * stride + kz)) * OH + (iy * stride + ky)) * OW + kx;
                                    for (int ix = 0; ix < Wd; ++ix) orow[ix * stride] += wv * xrow[ix];
                                }
                        }
    }

    std::vector<Value> parents{x, w};
    if (b) parents.push_back(b);
    return make_op("conv_transpose", std::move(o), std::move(parents), [sd, stride, cin, cout, in, k, out](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        const double* G = n.grad.data.data();
        const double* X = px.data.data.data();
        const double* W = pw.data.data.data();
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        if (pb && pb->requires_grad) pb->ensure_grad();

        if (sd == 2) {
            const int H = in[0], Wd = in[1], OH = out[0], OW = out[1], KH = k[0], KW = k[1];
            if (pb && pb->requires_grad)
                for (int co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    const double* grow = G + static_cast<std::int64_t>(co) * OH * OW;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += grow[i];
                    pb->grad.data[static_cast<std::size_t>(co)] += acc;
                }
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            std::int64_t widx = ((static_cast<std::int64_t>(ci) * cout + co) * KH + ky) * KW + kx;
                            double wv = W[widx];
                            double wacc = 0.0;
                            for (int iy = 0; iy < H; ++iy) {
                                const double* grow = G + (static_cast<std::int64_t>(co) * OH + (iy * stride + ky)) * OW + kx;
                                const double* xrow = X + (static_cast<std::int64_t>(ci) * H + iy) * Wd;
                                double* gxrow = px.requires_grad ? px.grad.data.data() + (static_cast<std::int64_t>(ci) * H + iy) * Wd : nullptr;
                                for (int ix = 0; ix < Wd; ++ix) {
                                    double g = grow[ix * stride];
                                    wacc += g * xrow[ix];
                                    if (gxrow) gxrow[ix] += g * wv;
                                }
                            }
                            if (pw.requires_grad) pw.grad.data[static_cast<std::size_t>(widx)] += wacc;
                        }
        } else {
            const int D = in[0], H = in[1], Wd = in[2], OD = out[0], OH = out[1], OW = out[2];
            const int KD = k[0], KH = k[1], KW = k[2];
            if (pb && pb->requires_grad)
                for (int co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    const double* grow = G + static_cast<std::int64_t>(co) * OD * OH * OW;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(OD) * OH * OW; ++i) acc += grow[i];
                    pb->grad.data[static_cast<std::size_t>(co)] += acc;
                }
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    for (int kz = 0; kz < KD; ++kz)
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                std::int64_t widx = (((static_cast<std::int64_t>(ci) * cout + co) * KD + kz) * KH + ky) * KW + kx;
                                double wv = W[widx];
                                double wacc = 0.0;
                                for (int iz = 0; iz < D; ++iz)
                                    for (int iy = 0; iy < H; ++iy) {
                                        const double* grow = G + ((static_cast<std::int64_t>(co) * OD + (iz * stride + kz)) * OH + (iy * stride + ky)) * OW + kx;
                                        std::int64_t xoff = ((static_cast<std::int64_t>(ci) * D + iz) * H + iy) * Wd;
                                        const double* xrow = X + xoff;
                                        double* gxrow = px.requires_grad ? px.grad.data.data() + xoff : nullptr;
                                        for (int ix = 0; ix < Wd; ++ix) {
                                            double g = grow[ix * stride];
                                            wacc += g * xrow[ix];
                                            if (gxrow) gxrow[ix] += g * wv;
                                        }
                                    }
                                if (pw.requires_grad) pw.grad.data[static_cast<std::size_t>(widx)] += wacc;
                            }
        }
    });
}

// ---------------------------------------------------------------------------
// warp
// ---------------------------------------------------------------------------

namespace {

struct WarpAxis {
    int i0;
    double frac;
    bool clamped;
};

inline WarpAxis warp_axis(double p, int n) {
    bool clamped = (p < 0.0) || (p > static_cast<double>(n - 1));
    double t = std::clamp(p, 0.0, static_cast<double>(n - 1));
    int i0 = std::min(static_cast<int>(t), n - 2);
    return {i0, t - i0, clamped};
}

}  // namespace

Value warp_diff(const Value& img, const Value& disp) {
    const Tensor& it = img->data;
    const Tensor& dt = disp->data;
    int sd = spatial_rank(it, "warp_diff");
    if (dt.rank() != sd + 1 || dt.shape[0] != sd ||
        !std::equal(it.shape.begin() + 1, it.shape.end(), dt.shape.begin() + 1))
        throw std::invalid_argument("warp_diff: shape mismatch " + it.shape_str() + " vs " + dt.shape_str());

    const int C = it.shape[0];
    Tensor out(it.shape);

    if (sd == 2) {
        const int H = it.shape[1], W = it.shape[2];
        const std::int64_t plane = static_cast<std::int64_t>(H) * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                std::int64_t v = static_cast<std::int64_t>(y) * W + x;
                WarpAxis ay = warp_axis(y + dt.data[static_cast<std::size_t>(v)], H);
                WarpAxis ax = warp_axis(x + dt.data[static_cast<std::size_t>(plane + v)], W);
                std::int64_t base = static_cast<std::int64_t>(ay.i0) * W + ax.i0;
                for (int c = 0; c < C; ++c) {
                    const double* p = it.data.data() + c * plane + base;
                    out.data[static_cast<std::size_t>(c * plane + v)] =
                        (1 - ay.frac) * (1 - ax.frac) * p[0] + (1 - ay.frac) * ax.frac * p[1] +
                        ay.frac * (1 - ax.frac) * p[W] + ay.frac * ax.frac * p[W + 1];
                }
            }
    } else {
        const int D = it.shape[1], H = it.shape[2], W = it.shape[3];
        const std::int64_t plane = static_cast<std::int64_t>(D) * H * W;
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    std::int64_t v = (static_cast<std::int64_t>(z) * H + y) * W + x;
                    WarpAxis az = warp_axis(z + dt.data[static_cast<std::size_t>(v)], D);
                    WarpAxis ay = warp_axis(y + dt.data[static_cast<std::size_t>(plane + v)], H);
                    WarpAxis ax = warp_axis(x + dt.data[static_cast<std::size_t>(2 * plane + v)], W);
                    for (int c = 0; c < C; ++c) {
                        const double* p = it.data.data() + c * plane;
                        double acc = 0.0;
                        for (int dz = 0; dz <= 1; ++dz)
                            for (int dy = 0; dy <= 1; ++dy)
                                for (int dx = 0; dx <= 1; ++dx) {
                                    double w = (dz ? az.frac : 1 - az.frac) * (dy ? ay.frac : 1 - ay.frac) *
                                               (dx ? ax.frac : 1 - ax.frac);
                                    acc += w * p[((static_cast<std::int64_t>(az.i0 + dz)) * H + (ay.i0 + dy)) * W + (ax.i0 + dx)];
                                }
                        out.data[static_cast<std::size_t>(c * plane + v)] = acc;
                    }
                }
    }

    return make_op("warp", std::move(out), {img, disp}, [sd, C](Node& n) {
        Node& pimg = *n.parents[0];
        Node& pdisp = *n.parents[1];
        if (pimg.requires_grad) pimg.ensure_grad();
        if (pdisp.requires_grad) pdisp.ensure_grad();
        const Tensor& it = pimg.data;
        const Tensor& dt = pdisp.data;
        const double* G = n.grad.data.data();

        if (sd == 2) {
            const int H = it.shape[1], W = it.shape[2];
            const std::int64_t plane = static_cast<std::int64_t>(H) * W;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    std::int64_t v = static_cast<std::int64_t>(y) * W + x;
                    WarpAxis ay = warp_axis(y + dt.data[static_cast<std::size_t>(v)], H);
                    WarpAxis ax = warp_axis(x + dt.data[static_cast<std::size_t>(plane + v)], W);
                    std::int64_t base = static_cast<std::int64_t>(ay.i0) * W + ax.i0;
                    double gy = 0.0, gx = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double g = G[c * plane + v];
                        const double* p = it.data.data() + c * plane + base;
                        if (pimg.requires_grad) {
                            double* gp = pimg.grad.data.data() + c * plane + base;
                            gp[0] += g * (1 - ay.frac) * (1 - ax.frac);
                            gp[1] += g * (1 - ay.frac) * ax.frac;
                            gp[W] += g * ay.frac * (1 - ax.frac);
                            gp[W + 1] += g * ay.frac * ax.frac;
                        }
                        if (pdisp.requires_grad) {
                            gy += g * ((1 - ax.frac) * (p[W] - p[0]) + ax.frac * (p[W + 1] - p[1]));
                            gx += g * ((1 - ay.frac) * (p[1] - p[0]) + ay.frac * (p[W + 1] - p[W]));
                        }
                    }
                    if (pdisp.requires_grad) {
                        if (!ay.clamped) pdisp.grad.data[static_cast<std::size_t>(v)] += gy;
                        if (!ax.clamped) pdisp.grad.data[static_cast<std::size_t>(plane + v)] += gx;
                    }
                }
        } else {
            const int D = it.shape[1], H = it.shape[2], W = it.shape[3];
            const std::int64_t plane = static_cast<std::int64_t>(D) * H * W;
            for (int z = 0; z < D; ++z)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        std::int64_t v = (static_cast<std::int64_t>(z) * H + y) * W + x;
                        WarpAxis az = warp_axis(z + dt.data[static_cast<std::size_t>(v)], D);
                        WarpAxis ay = warp_axis(y + dt.data[static_cast<std::size_t>(plane + v)], H);
                        WarpAxis ax = warp_axis(x + dt.data[static_cast<std::size_t>(2 * plane + v)], W);
                        double gz = 0.0, gy = 0.0, gx = 0.0;
                        for (int c = 0; c < C; ++c) {
                            double g = G[c * plane + v];
                            const double* p = pimg.data.data.data() + c * plane;
                            double* gp = pimg.requires_grad ? pimg.grad.data.data() + c * plane : nullptr;
                            for (int dz = 0; dz <= 1; ++dz)
                                for (int dy = 0; dy <= 1; ++dy)
                                    for (int dx = 0; dx <= 1; ++dx) {
                                        double wz = dz ? az.frac : 1 - az.frac;
                                        double wy = dy ? ay.frac : 1 - ay.frac;
                                        double wx = dx ? ax.frac : 1 - ax.frac;
                                        std::int64_t idx = ((static_cast<std::int64_t>(az.i0 + dz)) * H + (ay.i0 + dy)) * W + (ax.i0 + dx);
                                        if (gp) gp[idx] += g * wz * wy * wx;
                                        double val = p[idx];
                                        double sz = dz ? 1.0 : -1.0, sy = dy ? 1.0 : -1.0, sx = dx ? 1.0 : -1.0;
                                        gz += g * sz * wy * wx * val;
                                        gy += g * wz * sy * wx * val;
                                        gx += g * wz * wy * sx * val;
                                    }
                        }
                        if (pdisp.requires_grad) {
                            if (!az.clamped) pdisp.grad.data[static_cast<std::size_t>(v)] += gz;
                            if (!ay.clamped) pdisp.grad.data[static_cast<std::size_t>(plane + v)] += gy;
                            if (!ax.clamped) pdisp.grad.data[static_cast<std::size_t>(2 * plane + v)] += gx;
                        }
                    }
        }
    });
}

// ---------------------------------------------------------------------------
// upsample / box sum / finite differences
// ---------------------------------------------------------------------------

Value upsample2x(const Value& a) {
    const Tensor& t = a->data;
    int sd = spatial_rank(t, "upsample2x");
    const int C = t.shape[0];
    std::vector<int> oshape{C};
    std::array<int, 3> in{1, 1, 1}, out{1, 1, 1};
    for (int ax = 0; ax < sd; ++ax) {
        in[static_cast<std::size_t>(ax)] = t.shape[static_cast<std::size_t>(ax + 1)];
        out[static_cast<std::size_t>(ax)] = 2 * in[static_cast<std::size_t>(ax)];
        oshape.push_back(out[static_cast<std::size_t>(ax)]);
    }
    auto src = [](int j, int n) {
        double p = static_cast<double>(j) * (n - 1) / (2 * n - 1);
        int i0 = std::min(static_cast<int>(p), n - 2);
        return std::pair<int, double>{i0, p - i0};
    };

    Tensor o(oshape);
    if (sd == 2) {
        const int H = in[0], W = in[1], OH = out[0], OW = out[1];
        for (int c = 0; c < C; ++c) {
            const double* p = t.data.data() + static_cast<std::int64_t>(c) * H * W;
            double* op = o.data.data() + static_cast<std::int64_t>(c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                auto [y0, fy] = src(oy, H);
                for (int ox = 0; ox < OW; ++ox) {
                    auto [x0, fx] = src(ox, W);
                    const double* q = p + static_cast<std::int64_t>(y0) * W + x0;
                    op[static_cast<std::int64_t>(oy) * OW + ox] = (1 - fy) * (1 - fx) * q[0] +
                                                                  (1 - fy) * fx * q[1] +
                                                                  fy * (1 - fx) * q[W] + fy * fx * q[W + 1];
                }
            }
        }
    } else {
        const int D = in[0], H = in[1], W = in[2], OD = out[0], OH = out[1], OW = out[2];
        for (int c = 0; c < C; ++c) {
            const double* p = t.data.data() + static_cast<std::int64_t>(c) * D * H * W;
            double* op = o.data.data() + static_cast<std::int64_t>(c) * OD * OH * OW;
            for (int oz = 0; oz < OD; ++oz) {
                auto [z0, fz] = src(oz, D);
                for (int oy = 0; oy < OH; ++oy) {
                    auto [y0, fy] = src(oy, H);
                    for (int ox = 0; ox < OW; ++ox) {
                        auto [x0, fx] = src(ox, W);
                        double acc = 0.0;
                        for (int dz = 0; dz <= 1; ++dz)
                            for (int dy = 0; dy <= 1; ++dy)
                                for (int dx = 0; dx <= 1; ++dx)
                                    acc += (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx) *
                                           p[((static_cast<std::int64_t>(z0 + dz)) * H + (y0 + dy)) * W + (x0 + dx)];
                        op[((static_cast<std::int64_t>(oz)) * OH + oy) * OW + ox] = acc;
                    }
                }
            }
        }
    }

    return make_op("upsample2x", std::move(o), {a}, [sd, C, in, out, src](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        const double* G = n.grad.data.data();
        if (sd == 2) {
            const int H = in[0], W = in[1], OH = out[0], OW = out[1];
            for (int c = 0; c < C; ++c) {
                double* gp = pa.grad.data.data() + static_cast<std::int64_t>(c) * H * W;
                const double* g = G + static_cast<std::int64_t>(c) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    auto [y0, fy] = src(oy, H);
                    for (int ox = 0; ox < OW; ++ox) {
                        auto [x0, fx] = src(ox, W);
                        double gv = g[static_cast<std::int64_t>(oy) * OW + ox];
                        double* q = gp + static_cast<std::int64_t>(y0) * W + x0;
                        q[0] += gv * (1 - fy) * (1 - fx);
                        q[1] += gv * (1 - fy) * fx;
                        q[W] += gv * fy * (1 - fx);
                        q[W + 1] += gv * fy * fx;
                    }
                }
            }
        } else {
            const int D = in[0], H = in[1], W = in[2], OD = out[0], OH = out[1], OW = out[2];
            for (int c = 0; c < C; ++c) {
                double* gp = pa.grad.data.data() + static_cast<std::int64_t>(c) * D * H * W;
                const double* g = G + static_cast<std::int64_t>(c) * OD * OH * OW;
                for (int oz = 0; oz < OD; ++oz) {
                    auto [z0, fz] = src(oz, D);
                    for (int oy = 0; oy < OH; ++oy) {
                        auto [y0, fy] = src(oy, H);
                        for (int ox = 0; ox < OW; ++ox) {
                            auto [x0, fx] = src(ox, W);
                            double gv = g[((static_cast<std::int64_t>(oz)) * OH + oy) * OW + ox];
                            for (int dz = 0; dz <= 1; ++dz)
                                for (int dy = 0; dy <= 1; ++dy)
                                    for (int dx = 0; dx <= 1; ++dx)
                                        gp[((static_cast<std::int64_t>(z0 + dz)) * H + (y0 + dy)) * W + (x0 + dx)] +=
                                            gv * (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                        }
                    }
                }
            }
        }
    });
}

namespace {

// line decomposition of a [C,S...] tensor along spatial axis `axis`
struct LineIter {
    std::int64_t lines, stride;
    int n;
};

LineIter line_iter(const Tensor& t, int axis) {
    int sd = t.rank() - 1;
    LineIter li;
    li.n = t.shape[static_cast<std::size_t>(axis + 1)];
    li.stride = 1;
    for (int a = axis + 1; a < sd; ++a) li.stride *= t.shape[static_cast<std::size_t>(a + 1)];
    li.lines = t.numel() / li.n;
    return li;
}

template <typename Fn>
void for_each_line(const LineIter& li, Fn&& fn) {
    for (std::int64_t l = 0; l < li.lines; ++l) {
        std::int64_t block = l / li.stride, rem = l % li.stride;
        fn(block * li.stride * li.n + rem);
    }
}

void box_sum_axis(const Tensor& in, Tensor& out, int axis, int radius) {
    LineIter li = line_iter(in, axis);
    std::vector<double> prefix(static_cast<std::size_t>(li.n + 1));
    for_each_line(li, [&](std::int64_t base) {
        prefix[0] = 0.0;
        for (int i = 0; i < li.n; ++i)
            prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] + in.data[static_cast<std::size_t>(base + i * li.stride)];
        for (int i = 0; i < li.n; ++i) {
            int lo = std::max(0, i - radius), hi = std::min(li.n - 1, i + radius);
            out.data[static_cast<std::size_t>(base + i * li.stride)] = prefix[static_cast<std::size_t>(hi + 1)] - prefix[static_cast<std::size_t>(lo)];
        }
    });
}

Tensor box_sum_all(const Tensor& t, int radius) {
    int sd = t.rank() - 1;
    Tensor cur = t;
    Tensor tmp(t.shape);
    for (int a = 0; a < sd; ++a) {
        box_sum_axis(cur, tmp, a, radius);
        std::swap(cur, tmp);
    }
    return cur;
}

}  // namespace

Value box_sum(const Value& a, int radius) {
    if (radius < 1) throw std::invalid_argument("box_sum: radius must be >= 1");
    spatial_rank(a->data, "box_sum");
    Tensor out = box_sum_all(a->data, radius);
    return make_op("box_sum", std::move(out), {a}, [radius](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        Tensor g = box_sum_all(n.grad, radius);
        for (std::size_t i = 0; i < g.data.size(); ++i) pa.grad.data[i] += g.data[i];
    });
}

Value grad_axis(const Value& a, int axis) {
    const Tensor& t = a->data;
    int sd = spatial_rank(t, "grad_axis");
    if (axis < 0 || axis >= sd) throw std::invalid_argument("grad_axis: bad axis");
    LineIter li = line_iter(t, axis);
    if (li.n < 2) throw std::invalid_argument("grad_axis: extent too small");

    Tensor out(t.shape);
    for_each_line(li, [&](std::int64_t base) {
        auto atl = [&](int i) { return t.data[static_cast<std::size_t>(base + i * li.stride)]; };
        out.data[static_cast<std::size_t>(base)] = atl(1) - atl(0);
        out.data[static_cast<std::size_t>(base + (li.n - 1) * li.stride)] = atl(li.n - 1) - atl(li.n - 2);
        for (int i = 1; i < li.n - 1; ++i)
            out.data[static_cast<std::size_t>(base + i * li.stride)] = 0.5 * (atl(i + 1) - atl(i - 1));
    });
    return make_op("grad_axis", std::move(out), {a}, [axis](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        LineIter li = line_iter(pa.data, axis);
        for_each_line(li, [&](std::int64_t base) {
            auto g = [&](int i) { return n.grad.data[static_cast<std::size_t>(base + i * li.stride)]; };
            auto acc = [&](int i, double v) { pa.grad.data[static_cast<std::size_t>(base + i * li.stride)] += v; };
            acc(1, g(0));
            acc(0, -g(0));
            acc(li.n - 1, g(li.n - 1));
            acc(li.n - 2, -g(li.n - 1));
            for (int i = 1; i < li.n - 1; ++i) {
                acc(i + 1, 0.5 * g(i));
                acc(i - 1, -0.5 * g(i));
            }
        });
    });
}

Value fd_forward(const Value& a, int axis) {
    const Tensor& t = a->data;
    int sd = spatial_rank(t, "fd_forward");
    if (axis < 0 || axis >= sd) throw std::invalid_argument("fd_forward: bad axis");
    LineIter li = line_iter(t, axis);

    Tensor out(t.shape);
    for_each_line(li, [&](std::int64_t base) {
        for (int i = 0; i < li.n - 1; ++i)
            out.data[static_cast<std::size_t>(base + i * li.stride)] =
                t.data[static_cast<std::size_t>(base + (i + 1) * li.stride)] - t.data[static_cast<std::size_t>(base + i * li.stride)];
        out.data[static_cast<std::size_t>(base + (li.n - 1) * li.stride)] = 0.0;
    });
    return make_op("fd_forward", std::move(out), {a}, [axis](Node& n) {
        Node& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        LineIter li = line_iter(pa.data, axis);
        for_each_line(li, [&](std::int64_t base) {
            for (int i = 0; i < li.n - 1; ++i) {
                double g = n.grad.data[static_cast<std::size_t>(base + i * li.stride)];
                pa.grad.data[static_cast<std::size_t>(base + (i + 1) * li.stride)] += g;
                pa.grad.data[static_cast<std::size_t>(base + i * li.stride)] -= g;
            }
        });
    });
}

Value divergence_nd(const Value& a) {
    int sd = spatial_rank(a->data, "divergence_nd");
    if (a->data.shape[0] != sd)
        throw std::invalid_argument("divergence_nd: channels must equal spatial rank, got " + a->data.shape_str());
    Value acc;
    for (int i = 0; i < sd; ++i) {
        Value term = grad_axis(slice_ch(a, i, i + 1), i);
        acc = acc ? add(acc, term) : term;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

void backward(const Value& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->data.numel() != 1) throw std::invalid_argument("backward: non-scalar root");

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad_ready) n->backprop(*n);
    }
}

void zero_grad(std::span<const Value> params) {
    for (const auto& p : params) {
        p->grad_ready = false;
        p->grad = Tensor();
    }
}

double gradcheck(const std::function<Value()>& f, std::span<const Value> params, double eps) {
    Value root = f();
    zero_grad(params);
    backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad_ready ? p->grad : Tensor::zeros(p->data.shape));
    root.reset();

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Node& p = *params[pi];
        for (std::size_t i = 0; i < p.data.data.size(); ++i) {
            double orig = p.data.data[i];
            p.data.data[i] = orig + eps;
            double fp = f()->scalar();
            p.data.data[i] = orig - eps;
            double fm = f()->scalar();
            p.data.data[i] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[pi].data[i];
            double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
            max_rel = std::max(max_rel, rel);
        }
    }
    zero_grad(params);
    return max_rel;
}

void adam_step(std::span<const Value> params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros(p->data.shape));
            state.v.push_back(Tensor::zeros(p->data.shape));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state size mismatch");
    state.t += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Node& p = *params[pi];
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        for (std::size_t i = 0; i < p.data.data.size(); ++i) {
            double g = p.grad_ready ? p.grad.data[i] : 0.0;
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace dfreg::ad
