#include "dfreg/deformation.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace dfreg {

DeformationField::DeformationField(GridShape s, VectorField d) : shape(std::move(s)), displacement(std::move(d)) {
    if (!(displacement.shape() == shape))
        throw std::invalid_argument("DeformationField: displacement shape mismatch");
}

DeformationField identity(const GridShape& shape) { return DeformationField(shape); }

namespace {

template <typename Fn>
void for_each_voxel(const GridShape& shape, Fn&& fn) {
    const auto& dims = shape.dims;
    if (shape.rank() == 2) {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j, ++off) {
                std::array<int, 3> idx{i, j, 0};
                fn(idx, off);
            }
    } else {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k, ++off) {
                    std::array<int, 3> idx{i, j, k};
                    fn(idx, off);
                }
    }
}

void require_same_shape(const GridShape& a, const GridShape& b, const char* what) {
    if (!(a == b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

ScalarField warp(const ScalarField& img, const DeformationField& phi) {
    require_same_shape(img.shape(), phi.shape, "warp");
    const int d = phi.shape.rank();
    ScalarField out(img.shape());
    for_each_voxel(phi.shape, [&](const std::array<int, 3>& idx, std::int64_t off) {
        std::array<double, 3> p;
        for (int a = 0; a < d; ++a) p[static_cast<std::size_t>(a)] = idx[static_cast<std::size_t>(a)] + phi.displacement.comp(a)[off];
        out[off] = sample_linear(img, std::span<const double>(p.data(), static_cast<std::size_t>(d)));
    });
    return out;
}

ScalarField warp_nearest(const ScalarField& labels, const DeformationField& phi) {
    require_same_shape(labels.shape(), phi.shape, "warp_nearest");
    const int d = phi.shape.rank();
    ScalarField out(labels.shape());
    for_each_voxel(phi.shape, [&](const std::array<int, 3>& idx, std::int64_t off) {
        std::array<double, 3> p;
        for (int a = 0; a < d; ++a) p[static_cast<std::size_t>(a)] = idx[static_cast<std::size_t>(a)] + phi.displacement.comp(a)[off];
        out[off] = sample_nearest(labels, std::span<const double>(p.data(), static_cast<std::size_t>(d)));
    });
    return out;
}

DeformationField compose(const DeformationField& outer, const DeformationField& inner) {
    require_same_shape(outer.shape, inner.shape, "compose");
    const int d = outer.shape.rank();
    DeformationField out(outer.shape);
    for_each_voxel(outer.shape, [&](const std::array<int, 3>& idx, std::int64_t off) {
        std::array<double, 3> p;
        for (int a = 0; a < d; ++a) p[static_cast<std::size_t>(a)] = idx[static_cast<std::size_t>(a)] + inner.displacement.comp(a)[off];
        std::span<const double> ps(p.data(), static_cast<std::size_t>(d));
        for (int a = 0; a < d; ++a)
            out.displacement.comp(a)[off] = inner.displacement.comp(a)[off] + sample_linear(outer.displacement.comp(a), ps);
    });
    return out;
}

namespace {

// d(phi_c)/d(axis) at idx: central interior, one-sided on faces.
inline double fd_axis(const ScalarField& f, std::array<int, 3> idx, int axis, int n) {
    int i = idx[static_cast<std::size_t>(axis)];
    if (i == 0) {
        auto hi = idx;
        hi[static_cast<std::size_t>(axis)] = 1;
        return f.at(std::span<const int>(hi.data(), static_cast<std::size_t>(f.shape().rank()))) -
               f.at(std::span<const int>(idx.data(), static_cast<std::size_t>(f.shape().rank())));
    }
    if (i == n - 1) {
        auto lo = idx;
        lo[static_cast<std::size_t>(axis)] = n - 2;
        return f.at(std::span<const int>(idx.data(), static_cast<std::size_t>(f.shape().rank()))) -
               f.at(std::span<const int>(lo.data(), static_cast<std::size_t>(f.shape().rank())));
    }
    auto lo = idx, hi = idx;
    lo[static_cast<std::size_t>(axis)] = i - 1;
    hi[static_cast<std::size_t>(axis)] = i + 1;
    return 0.5 * (f.at(std::span<const int>(hi.data(), static_cast<std::size_t>(f.shape().rank()))) -
                  f.at(std::span<const int>(lo.data(), static_cast<std::size_t>(f.shape().rank()))));
}

}  // namespace

JacobianReport jacobian_det(const DeformationField& phi) {
    const int d = phi.shape.rank();
    const auto& dims = phi.shape.dims;
    JacobianReport report;
    report.det_field = ScalarField(phi.shape);
    report.min_det = std::numeric_limits<double>::infinity();
    std::int64_t folds = 0;

    for_each_voxel(phi.shape, [&](const std::array<int, 3>& idx, std::int64_t off) {
        double J[3][3] = {};
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                J[i][j] = (i == j ? 1.0 : 0.0) + fd_axis(phi.displacement.comp(i), idx, j, dims[static_cast<std::size_t>(j)]);
        double det;
        if (d == 2) {
            det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
        } else {
            det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                  J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                  J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
        }
        report.det_field[off] = det;
        if (det <= 0.0) ++folds;
        report.min_det = std::min(report.min_det, det);
    });
    report.fold_fraction = static_cast<double>(folds) / static_cast<double>(phi.shape.voxels());
    return report;
}

DeformationField upsample_field(const DeformationField& phi) {
    std::vector<int> dbl(phi.shape.dims.size());
    for (std::size_t a = 0; a < dbl.size(); ++a) dbl[a] = phi.shape.dims[a] * 2;
    DeformationField out{GridShape(dbl)};
    for (int a = 0; a < phi.shape.rank(); ++a) {
        ScalarField up = upsample2(phi.displacement.comp(a));
        for (std::int64_t i = 0; i < up.size(); ++i) up[i] *= 2.0;
        out.displacement.comp(a) = std::move(up);
    }
    return out;
}

}  // namespace dfreg
