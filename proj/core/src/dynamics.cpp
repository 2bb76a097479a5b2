#include "dfreg/dynamics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace dfreg {

HomotopyState HomotopyState::make(const GridShape& shape, double sigma, double h_min) {
    if (!(sigma > 0.0)) throw std::invalid_argument("HomotopyState: invalid sigma");
    if (!(h_min > 0.0)) throw std::invalid_argument("HomotopyState: h_min must be positive");
    HomotopyState s;
    s.smoothed_h0 = gaussian_smooth(ScalarField(shape, 1.0), sigma);
    s.sigma = sigma;
    s.h_min = h_min;
    return s;
}

ScalarField homotopy_eval(const HomotopyState& state, const DeformationField& phi) {
    if (!(state.smoothed_h0.shape() == phi.shape))
        throw std::invalid_argument("homotopy_eval: shape mismatch " + state.smoothed_h0.shape().str() +
                                    " vs " + phi.shape.str());
    ScalarField h = warp(state.smoothed_h0, phi);
    for (std::int64_t i = 0; i < h.size(); ++i) h[i] = std::max(state.h_min, h[i]);
    return h;
}

DeformationField euler_step(const DeformationField& phi, const VectorField& u, const ScalarField& h,
                            double dt, double h_min) {
    if (!(u.shape() == phi.shape) || !(h.shape() == phi.shape))
        throw std::invalid_argument("euler_step: shape mismatch");
    if (!(dt > 0.0 && dt <= 1.0)) throw std::invalid_argument("euler_step: dt must be in (0,1]");
    for (std::int64_t i = 0; i < h.size(); ++i)
        if (h[i] < h_min) throw std::runtime_error("euler_step: homotopy underflow");

    DeformationField out = phi;
    const int d = phi.shape.rank();
    for (int a = 0; a < d; ++a) {
        auto& dst = out.displacement.comp(a);
        const auto& inc = u.comp(a);
        for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += dt * inc[i] / h[i];
    }
    return out;
}

namespace {

// forward/central/backward difference of f along axis at linear offset
double fd_line(const ScalarField& f, std::int64_t off, int i, int n, std::int64_t stride) {
    if (i == 0) return f[off + stride] - f[off];
    if (i == n - 1) return f[off] - f[off - stride];
    return 0.5 * (f[off + stride] - f[off - stride]);
}

}  // namespace

ScalarField divergence(const VectorField& u) {
    const auto& dims = u.shape().dims;
    const int d = u.rank();
    ScalarField out(u.shape());

    for (int axis = 0; axis < d; ++axis) {
        std::int64_t stride = 1;
        for (int a = axis + 1; a < d; ++a) stride *= dims[static_cast<std::size_t>(a)];
        const int n = dims[static_cast<std::size_t>(axis)];
        const auto& comp = u.comp(axis);

        if (d == 2) {
            std::int64_t off = 0;
            for (int i = 0; i < dims[0]; ++i)
                for (int j = 0; j < dims[1]; ++j, ++off)
                    out[off] += fd_line(comp, off, axis == 0 ? i : j, n, stride);
        } else {
            std::int64_t off = 0;
            for (int i = 0; i < dims[0]; ++i)
                for (int j = 0; j < dims[1]; ++j)
                    for (int k = 0; k < dims[2]; ++k, ++off)
                        out[off] += fd_line(comp, off, axis == 0 ? i : (axis == 1 ? j : k), n, stride);
        }
    }
    return out;
}

ScalarField cic_residual(const VectorField& u, const ScalarField& h_prev, const ScalarField& h_curr,
                         double dt) {
    if (!(u.shape() == h_prev.shape()) || !(u.shape() == h_curr.shape()))
        throw std::invalid_argument("cic_residual: shape mismatch");
    ScalarField out = divergence(u);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += (h_curr[i] - h_prev[i]) / dt;

    const auto& dims = u.shape().dims;
    const int d = u.rank();
    auto on_face = [&](const std::array<int, 3>& idx) {
        for (int a = 0; a < d; ++a)
            if (idx[static_cast<std::size_t>(a)] == 0 || idx[static_cast<std::size_t>(a)] == dims[static_cast<std::size_t>(a)] - 1) return true;
        return false;
    };

    if (d == 2) {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j, ++off)
                if (on_face({i, j, 0}))
                    for (int a = 0; a < d; ++a) out[off] += std::abs(u.comp(a)[off]);
    } else {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k, ++off)
                    if (on_face({i, j, k}))
                        for (int a = 0; a < d; ++a) out[off] += std::abs(u.comp(a)[off]);
    }
    return out;
}

DeformationField scaling_and_squaring(const VectorField& v, int T) {
    if (T < 1) throw std::invalid_argument("scaling_and_squaring: T must be >= 1");
    const double scale = std::ldexp(1.0, -T);  // 1 / 2^T
    DeformationField phi(v.shape());
    for (int a = 0; a < v.rank(); ++a) {
        auto& dst = phi.displacement.comp(a);
        const auto& src = v.comp(a);
        for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * scale;
    }
    for (int t = 0; t < T; ++t) phi = compose(phi, phi);
    return phi;
}

double det_identity_gap(const DeformationField& phi, const HomotopyState& state) {
    JacobianReport jac = jacobian_det(phi);
    ScalarField h0 = homotopy_eval(state, identity(phi.shape));
    ScalarField h_phi = homotopy_eval(state, phi);

    const auto& dims = phi.shape.dims;
    const int d = phi.shape.rank();
    double acc = 0.0;
    std::int64_t count = 0;

    auto interior = [&](const std::array<int, 3>& idx) {
        for (int a = 0; a < d; ++a)
            if (idx[static_cast<std::size_t>(a)] == 0 || idx[static_cast<std::size_t>(a)] == dims[static_cast<std::size_t>(a)] - 1) return false;
        return true;
    };

    if (d == 2) {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j, ++off)
                if (interior({i, j, 0})) {
                    acc += std::abs(jac.det_field[off] - h0[off] / h_phi[off]);
                    ++count;
                }
    } else {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k, ++off)
                    if (interior({i, j, k})) {
                        acc += std::abs(jac.det_field[off] - h0[off] / h_phi[off]);
                        ++count;
                    }
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace dfreg
