#pragma once

#include "dfreg/field.hpp"

namespace dfreg {

/// Displacement-backed transformation phi(x) = x + displacement(x).
struct DeformationField {
    GridShape shape;
    VectorField displacement;

    DeformationField() = default;
    explicit DeformationField(GridShape s) : shape(s), displacement(s) {}
    DeformationField(GridShape s, VectorField d);
};

struct JacobianReport {
    ScalarField det_field;
    double fold_fraction = 0.0;  // voxels with det <= 0, over all voxels
    double min_det = 0.0;
};

DeformationField identity(const GridShape& shape);

/// output(x) = sample_linear(img, x + displacement(x)); clamp-to-edge.
ScalarField warp(const ScalarField& img, const DeformationField& phi);

/// Nearest-neighbour variant for label maps.
ScalarField warp_nearest(const ScalarField& labels, const DeformationField& phi);

/// result(x) = outer(inner(x)).
DeformationField compose(const DeformationField& outer, const DeformationField& inner);

/// Jacobian of phi per voxel, central differences interior and one-sided on
/// the faces; fold counting uses det <= 0 (non-strict).
JacobianReport jacobian_det(const DeformationField& phi);

/// Transfer to the factor-2 finer grid: components upsampled and scaled by 2.
DeformationField upsample_field(const DeformationField& phi);

}  // namespace dfreg
