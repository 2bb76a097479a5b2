#pragma once

#include <cstdint>
#include <string>

#include "dfreg/deformation.hpp"
#include "dfreg/field.hpp"

namespace dfreg {

struct SyntheticPair {
    ScalarField x, y;
    ScalarField mask_x, mask_y;  // >= 2 integer labels
    DeformationField gt_phi;     // fold-free ground truth, Y = X o gt_phi
};

/// Deterministic synthetic pair: X from parametric shapes, Y the warp of X by
/// a random fold-free smooth displacement plus Gaussian intensity noise.
/// kind is one of blob, c-shape, multi-organ.
SyntheticPair make_synthetic_pair(std::uint64_t seed, const std::string& kind, const GridShape& shape,
                                  double amplitude = 6.0, double noise_sigma = 0.02);

/// Distinct deterministic seed streams for training and held-out evaluation.
std::uint64_t pair_seed(std::uint64_t run_seed, std::uint64_t stream, std::uint64_t index);

}  // namespace dfreg
