#include "dfreg/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "dfreg/bridge.hpp"

namespace dfreg {

LossWeights LossWeights::defaults(int scales) {
    LossWeights w;
    w.lambda1.assign(static_cast<std::size_t>(scales), 0.8);
    return w;
}

void LossWeights::validate(int scales) const {
    if (static_cast<int>(lambda1.size()) != scales)
        throw std::invalid_argument("LossWeights: need one lambda1 per scale");
    for (double l : lambda1)
        if (l < 0) throw std::invalid_argument("LossWeights: negative lambda1");
    if (lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || lambda5 < 0)
        throw std::invalid_argument("LossWeights: negative weight");
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

ad::Value ncc_loss(const ad::Value& x, const ad::Value& y, int window) {
    if (x->data.shape != y->data.shape)
        throw std::invalid_argument("ncc_loss: shape mismatch " + x->data.shape_str() + " vs " +
                                    y->data.shape_str());
    if (window % 2 == 0 || window < 3) throw std::invalid_argument("ncc_loss: window must be odd and >= 3");
    const int r = (window - 1) / 2;

    ad::Value ones = ad::constant(ad::Tensor(x->data.shape, 1.0));
    ad::Value cnt = ad::box_sum(ones, r);
    ad::Value sx = ad::box_sum(x, r);
    ad::Value sy = ad::box_sum(y, r);
    ad::Value sxx = ad::box_sum(ad::mul(x, x), r);
    ad::Value syy = ad::box_sum(ad::mul(y, y), r);
    ad::Value sxy = ad::box_sum(ad::mul(x, y), r);

    ad::Value cross = ad::sub(sxy, ad::divide(ad::mul(sx, sy), cnt));
    ad::Value varx = ad::sub(sxx, ad::divide(ad::mul(sx, sx), cnt));
    ad::Value vary = ad::sub(syy, ad::divide(ad::mul(sy, sy), cnt));
    ad::Value cc = ad::divide(ad::mul(cross, cross), ad::add_const(ad::mul(varx, vary), 1e-5));
    return ad::neg(ad::mean_all(cc));
}

ad::Value smooth_loss(const ad::Value& disp) {
    int sd = disp->data.rank() - 1;
    ad::Value acc;
    for (int a = 0; a < sd; ++a) {
        ad::Value df = ad::fd_forward(disp, a);
        ad::Value term = ad::sum_all(ad::mul(df, df));
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

ad::Value jdet_field(const ad::Value& disp) {
    int sd = disp->data.rank() - 1;
    if (disp->data.shape[0] != sd)
        throw std::invalid_argument("jdet_field: channels must equal spatial rank, got " +
                                    disp->data.shape_str());
    auto g = [&](int i, int j) { return ad::grad_axis(ad::slice_ch(disp, i, i + 1), j); };
    if (sd == 2) {
        ad::Value a00 = ad::add_const(g(0, 0), 1.0);
        ad::Value a11 = ad::add_const(g(1, 1), 1.0);
        return ad::sub(ad::mul(a00, a11), ad::mul(g(0, 1), g(1, 0)));
    }
    ad::Value a00 = ad::add_const(g(0, 0), 1.0);
    ad::Value a11 = ad::add_const(g(1, 1), 1.0);
    ad::Value a22 = ad::add_const(g(2, 2), 1.0);
    ad::Value g01 = g(0, 1), g02 = g(0, 2), g10 = g(1, 0), g12 = g(1, 2), g20 = g(2, 0), g21 = g(2, 1);
    ad::Value m0 = ad::mul(a00, ad::sub(ad::mul(a11, a22), ad::mul(g12, g21)));
    ad::Value m1 = ad::mul(g01, ad::sub(ad::mul(g10, a22), ad::mul(g12, g20)));
    ad::Value m2 = ad::mul(g02, ad::sub(ad::mul(g10, g21), ad::mul(a11, g20)));
    return ad::add(ad::sub(m0, m1), m2);
}

ad::Value jdet_loss(const ad::Value& disp) {
    return ad::sum_all(ad::relu(ad::neg(jdet_field(disp))));
}

ad::Value compose_disp(const ad::Value& outer, const ad::Value& inner) {
    return ad::add(inner, ad::warp_diff(outer, inner));
}

ad::Value cycle_loss(const ad::Value& x, const ad::Value& y, const ad::Value& phi,
                     const ad::Value& phi_inv, int window) {
    ad::Value fwd_cycle = compose_disp(phi, phi_inv);
    ad::Value bwd_cycle = compose_disp(phi_inv, phi);
    ad::Value term1 = ncc_loss(x, ad::warp_diff(x, fwd_cycle), window);
    ad::Value term2 = ncc_loss(y, ad::warp_diff(y, bwd_cycle), window);
    return ad::add(term1, term2);
}

namespace {

ad::Tensor boundary_mask(const std::vector<int>& shape) {
    // [1,S...] tensor, 1 on face voxels
    ad::Tensor m(std::vector<int>(shape.begin(), shape.end()));
    int sd = static_cast<int>(shape.size()) - 1;
    if (sd == 2) {
        const int H = shape[1], W = shape[2];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (y == 0 || y == H - 1 || x == 0 || x == W - 1)
                    m.data[static_cast<std::size_t>(y * W + x)] = 1.0;
    } else {
        const int D = shape[1], H = shape[2], W = shape[3];
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 || x == W - 1)
                        m.data[static_cast<std::size_t>((z * H + y) * W + x)] = 1.0;
    }
    return m;
}

ad::Value l1_channels(const ad::Value& u) {
    int sd = u->data.rank() - 1;
    ad::Value acc;
    for (int i = 0; i < sd; ++i) {
        ad::Value t = ad::abs_v(ad::slice_ch(u, i, i + 1));
        acc = acc ? ad::add(acc, t) : t;
    }
    return acc;
}

}  // namespace

ad::Value cic_step_residual(const ad::Value& u, const ad::Value& h_prev, const ad::Value& h_curr,
                            double dt) {
    ad::Value res = ad::add(ad::divergence_nd(u), ad::scale(ad::sub(h_curr, h_prev), 1.0 / dt));
    std::vector<int> mshape = u->data.shape;
    mshape[0] = 1;
    ad::Value mask = ad::constant(boundary_mask(mshape));
    return ad::add(res, ad::mul(mask, l1_channels(u)));
}

ad::Value cic_loss(const net::SrResult& result, double dt) {
    ad::Value acc;
    int count = 0;
    for (const auto& sc : result.scales) {
        for (const net::PathTrace* path : {&sc.fwd, &sc.bwd}) {
            ad::Value h_prev = path->h_initial;
            for (const auto& step : path->steps) {
                ad::Value res = cic_step_residual(step.u, h_prev, step.h, dt);
                ad::Value term = ad::mean_all(ad::abs_v(res));
                acc = acc ? ad::add(acc, term) : term;
                ++count;
                h_prev = step.h;
            }
        }
    }
    if (!acc) throw std::invalid_argument("cic_loss: empty trace");
    return ad::scale(acc, 1.0 / count);
}

namespace {

ad::Value upsample_to_full(const ad::Value& disp, int levels_up) {
    ad::Value cur = disp;
    for (int i = 0; i < levels_up; ++i) cur = ad::scale(ad::upsample2x(cur), 2.0);
    return cur;
}

}  // namespace

LossBreakdown total_loss(const ad::Value& x, const ad::Value& y, const net::SrResult& result,
                         const LossWeights& weights, int ncc_window) {
    const int L = static_cast<int>(result.scales.size());
    weights.validate(L);

    LossBreakdown out;
    for (int lev = 0; lev < L; ++lev) {
        const auto& sc = result.scales[static_cast<std::size_t>(lev)];
        int up = L - 1 - lev;
        ad::Value phi_f = upsample_to_full(sc.phi_fwd(), up);
        ad::Value phi_b = upsample_to_full(sc.phi_bwd(), up);

        ad::Value sim_term = ad::add(ncc_loss(ad::warp_diff(x, phi_f), y, ncc_window),
                                     ncc_loss(x, ad::warp_diff(y, phi_b), ncc_window));
        sim_term = ad::scale(sim_term, weights.lambda1[static_cast<std::size_t>(lev)]);
        out.sim = out.sim ? ad::add(out.sim, sim_term) : sim_term;

        ad::Value jd = ad::add(jdet_loss(sc.phi_fwd()), jdet_loss(sc.phi_bwd()));
        out.jdet = out.jdet ? ad::add(out.jdet, jd) : jd;

        ad::Value sm = ad::add(smooth_loss(sc.phi_fwd()), smooth_loss(sc.phi_bwd()));
        out.smooth = out.smooth ? ad::add(out.smooth, sm) : sm;
    }
    out.cycle = cycle_loss(x, y, result.phi_fwd, result.phi_bwd, ncc_window);
    double dt = result.scales[0].fwd.steps.empty()
                    ? 1.0
                    : result.scales[0].fwd.steps[0].t;  // t_1 = dt by construction
    out.cic = cic_loss(result, dt);

    out.total = ad::add(out.sim, ad::scale(out.jdet, weights.lambda2));
    out.total = ad::add(out.total, ad::scale(out.smooth, weights.lambda3));
    out.total = ad::add(out.total, ad::scale(out.cycle, weights.lambda4));
    out.total = ad::add(out.total, ad::scale(out.cic, weights.lambda5));
    return out;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

namespace {

inline bool has_label(double v, int label) { return static_cast<int>(std::lround(v)) == label; }

std::vector<std::array<int, 3>> boundary_voxels(const ScalarField& mask, int label) {
    const auto& dims = mask.shape().dims;
    const int d = mask.shape().rank();
    std::vector<std::array<int, 3>> out;

    auto labelled = [&](std::array<int, 3> idx) {
        for (int a = 0; a < d; ++a)
            if (idx[static_cast<std::size_t>(a)] < 0 || idx[static_cast<std::size_t>(a)] >= dims[static_cast<std::size_t>(a)]) return false;
        return has_label(mask.at(std::span<const int>(idx.data(), static_cast<std::size_t>(d))), label);
    };
    auto visit = [&](std::array<int, 3> idx) {
        if (!labelled(idx)) return;
        for (int a = 0; a < d; ++a)
            for (int s = -1; s <= 1; s += 2) {
                auto nb = idx;
                nb[static_cast<std::size_t>(a)] += s;
                if (!labelled(nb)) {
                    out.push_back(idx);
                    return;
                }
            }
    };

    if (d == 2) {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j) visit({i, j, 0});
    } else {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k) visit({i, j, k});
    }
    return out;
}

double directed_hausdorff(const std::vector<std::array<int, 3>>& from,
                          const std::vector<std::array<int, 3>>& to, int d) {
    double worst = 0.0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            double s = 0.0;
            for (int ax = 0; ax < d; ++ax) {
                double diff = a[static_cast<std::size_t>(ax)] - b[static_cast<std::size_t>(ax)];
                s += diff * diff;
            }
            best = std::min(best, s);
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

}  // namespace

double dice(const ScalarField& a, const ScalarField& b, int label) {
    if (!(a.shape() == b.shape())) throw std::invalid_argument("dice: shape mismatch");
    std::int64_t na = 0, nb = 0, ni = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        bool la = has_label(a[i], label), lb = has_label(b[i], label);
        na += la;
        nb += lb;
        ni += la && lb;
    }
    if (na + nb == 0) return 1.0;  // absent from both
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

double hausdorff(const ScalarField& a, const ScalarField& b, int label) {
    if (!(a.shape() == b.shape())) throw std::invalid_argument("hausdorff: shape mismatch");
    const int d = a.shape().rank();
    auto ba = boundary_voxels(a, label);
    auto bb = boundary_voxels(b, label);
    if (ba.empty() && bb.empty()) return 0.0;
    if (ba.empty() || bb.empty()) {
        // label present on one side only: report the grid diagonal
        double s = 0.0;
        for (int ax = 0; ax < d; ++ax) {
            double e = a.shape().dims[static_cast<std::size_t>(ax)] - 1;
            s += e * e;
        }
        return std::sqrt(s);
    }
    return std::max(directed_hausdorff(ba, bb, d), directed_hausdorff(bb, ba, d));
}

std::vector<int> labels_of(const ScalarField& a, const ScalarField& b) {
    std::set<int> s;
    for (std::int64_t i = 0; i < a.size(); ++i) s.insert(static_cast<int>(std::lround(a[i])));
    for (std::int64_t i = 0; i < b.size(); ++i) s.insert(static_cast<int>(std::lround(b[i])));
    s.erase(0);
    return std::vector<int>(s.begin(), s.end());
}

double dice_mean(const ScalarField& a, const ScalarField& b) {
    auto labels = labels_of(a, b);
    if (labels.empty()) return 1.0;
    double acc = 0.0;
    for (int l : labels) acc += dice(a, b, l);
    return acc / static_cast<double>(labels.size());
}

double hausdorff_mean(const ScalarField& a, const ScalarField& b) {
    auto labels = labels_of(a, b);
    if (labels.empty()) return 0.0;
    double acc = 0.0;
    for (int l : labels) acc += hausdorff(a, b, l);
    return acc / static_cast<double>(labels.size());
}

namespace {

// moving sums over a window of [-3, +4] per axis (8 taps), truncated
void window_sum_axis(const std::vector<double>& in, std::vector<double>& out, const GridShape& shape,
                     int axis) {
    const auto& dims = shape.dims;
    const int d = shape.rank();
    const int n = dims[static_cast<std::size_t>(axis)];
    std::int64_t stride = 1;
    for (int a = axis + 1; a < d; ++a) stride *= dims[static_cast<std::size_t>(a)];
    std::int64_t lines = static_cast<std::int64_t>(in.size()) / n;
    std::vector<double> prefix(static_cast<std::size_t>(n + 1));
    for (std::int64_t l = 0; l < lines; ++l) {
        std::int64_t block = l / stride, rem = l % stride;
        std::int64_t base = block * stride * n + rem;
        prefix[0] = 0.0;
        for (int i = 0; i < n; ++i) prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] + in[static_cast<std::size_t>(base + i * stride)];
        for (int i = 0; i < n; ++i) {
            int lo = std::max(0, i - 3), hi = std::min(n - 1, i + 4);
            out[static_cast<std::size_t>(base + i * stride)] = prefix[static_cast<std::size_t>(hi + 1)] - prefix[static_cast<std::size_t>(lo)];
        }
    }
}

std::vector<double> window_sum(const std::vector<double>& in, const GridShape& shape) {
    std::vector<double> cur = in, tmp(in.size());
    for (int a = 0; a < shape.rank(); ++a) {
        window_sum_axis(cur, tmp, shape, a);
        std::swap(cur, tmp);
    }
    return cur;
}

}  // namespace

double ssim(const ScalarField& x, const ScalarField& y) {
    if (!(x.shape() == y.shape())) throw std::invalid_argument("ssim: shape mismatch");
    const std::size_t n = x.data().size();

    double mn = x.data()[0], mx = x.data()[0];
    for (double v : x.data()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    for (double v : y.data()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    double range = std::max(mx - mn, 1e-12);
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);

    std::vector<double> ones(n, 1.0), xy(n), xx(n), yy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xy[i] = x.data()[i] * y.data()[i];
        xx[i] = x.data()[i] * x.data()[i];
        yy[i] = y.data()[i] * y.data()[i];
    }
    auto cnt = window_sum(ones, x.shape());
    auto sx = window_sum(x.data(), x.shape());
    auto sy = window_sum(y.data(), x.shape());
    auto sxx = window_sum(xx, x.shape());
    auto syy = window_sum(yy, x.shape());
    auto sxy = window_sum(xy, x.shape());

    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = cnt[i];
        double mux = sx[i] / m, muy = sy[i] / m;
        double vx = sxx[i] / m - mux * mux;
        double vy = syy[i] / m - muy * muy;
        double cov = sxy[i] / m - mux * muy;
        acc += ((2 * mux * muy + c1) * (2 * cov + c2)) / ((mux * mux + muy * muy + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(n);
}

}  // namespace dfreg
