#pragma once

#include <stdexcept>

#include "dfreg/autodiff.hpp"
#include "dfreg/deformation.hpp"
#include "dfreg/field.hpp"

namespace dfreg {

// Adapters between plain fields and channel-first autodiff tensors.

inline ad::Tensor tensor_from_scalar(const ScalarField& f) {
    std::vector<int> shape{1};
    shape.insert(shape.end(), f.shape().dims.begin(), f.shape().dims.end());
    return ad::Tensor(std::move(shape), f.data());
}

inline ad::Tensor tensor_from_vector(const VectorField& v) {
    std::vector<int> shape{v.rank()};
    shape.insert(shape.end(), v.shape().dims.begin(), v.shape().dims.end());
    ad::Tensor t(std::move(shape));
    std::size_t per = v.comp(0).data().size();
    for (int a = 0; a < v.rank(); ++a)
        std::copy(v.comp(a).data().begin(), v.comp(a).data().end(),
                  t.data.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(a)));
    return t;
}

inline GridShape grid_from_tensor(const ad::Tensor& t) {
    return GridShape(std::vector<int>(t.shape.begin() + 1, t.shape.end()));
}

inline ScalarField scalar_from_tensor(const ad::Tensor& t) {
    if (t.shape.empty() || t.shape[0] != 1)
        throw std::invalid_argument("scalar_from_tensor: expected single channel, got " + t.shape_str());
    return ScalarField(grid_from_tensor(t), t.data);
}

inline VectorField vector_from_tensor(const ad::Tensor& t) {
    GridShape grid = grid_from_tensor(t);
    if (t.shape[0] != grid.rank())
        throw std::invalid_argument("vector_from_tensor: channels must equal rank, got " + t.shape_str());
    std::vector<ScalarField> comps;
    std::size_t per = static_cast<std::size_t>(grid.voxels());
    for (int a = 0; a < grid.rank(); ++a)
        comps.emplace_back(grid, std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(a)),
                                                     t.data.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(a + 1))));
    return VectorField(grid, std::move(comps));
}

inline DeformationField deformation_from_tensor(const ad::Tensor& t) {
    VectorField v = vector_from_tensor(t);
    GridShape g = v.shape();
    return DeformationField(g, std::move(v));
}

}  // namespace dfreg
