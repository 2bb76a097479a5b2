#pragma once

#include <vector>

#include "dfreg/autodiff.hpp"
#include "dfreg/field.hpp"
#include "dfreg/network.hpp"

namespace dfreg {

struct LossWeights {
    std::vector<double> lambda1;  // similarity weight per scale
    double lambda2 = 1e5;         // Jacobian
    double lambda3 = 1.0;         // smoothness
    double lambda4 = 0.1;         // cycle consistency
    double lambda5 = 0.1;         // control-increment constraint

    static LossWeights defaults(int scales);
    void validate(int scales) const;
};

struct MetricReport {
    double dsc = 0.0;
    double hd = 0.0;
    double ssim = 0.0;
    double fold_fraction = 0.0;
};

// ---- differentiable losses (channel-first value tensors) ----

/// Local windowed NCC, truncated windows at the boundary, eps 1e-5 in the
/// denominator; returns -mean(cc). Window must be odd.
ad::Value ncc_loss(const ad::Value& x, const ad::Value& y, int window = 9);

/// Sum of squared forward-difference gradients of the displacement.
ad::Value smooth_loss(const ad::Value& disp);

/// det(grad phi) per voxel of a displacement tensor, same stencil as
/// jacobian_det (central interior, one-sided faces).
ad::Value jdet_field(const ad::Value& disp);

/// Sum of relu(-det) over voxels.
ad::Value jdet_loss(const ad::Value& disp);

/// displacement of outer(inner(x)) built from differentiable warping.
ad::Value compose_disp(const ad::Value& outer, const ad::Value& inner);

/// -NCC(X, X o (phi o phi_inv)) - NCC(Y, Y o (phi_inv o phi)).
ad::Value cycle_loss(const ad::Value& x, const ad::Value& y, const ad::Value& phi,
                     const ad::Value& phi_inv, int window = 9);

/// Continuity residual of one cascade step, matching dynamics::cic_residual:
/// div(u) + (h_curr - h_prev)/dt everywhere plus sum_i |u_i| on face voxels.
ad::Value cic_step_residual(const ad::Value& u, const ad::Value& h_prev, const ad::Value& h_curr,
                            double dt);

/// Mean of |cic_step_residual| over every step, scale and path of the trace.
ad::Value cic_loss(const net::SrResult& result, double dt);

struct LossBreakdown {
    ad::Value total, sim, jdet, smooth, cycle, cic;
};

/// Weighted sum of the five losses; coarse-scale deformations are upsampled
/// to the full grid before the similarity terms.
LossBreakdown total_loss(const ad::Value& x, const ad::Value& y, const net::SrResult& result,
                         const LossWeights& weights, int ncc_window);

// ---- evaluation metrics (plain fields) ----

/// 2|A and B| / (|A| + |B|) for one label; 1 when the label is absent from
/// both (and hd 0, by convention).
double dice(const ScalarField& a, const ScalarField& b, int label);

/// Max of the two directed max-min Euclidean distances between label
/// boundary voxel sets.
double hausdorff(const ScalarField& a, const ScalarField& b, int label);

/// Labels present in either mask (zero excluded).
std::vector<int> labels_of(const ScalarField& a, const ScalarField& b);

double dice_mean(const ScalarField& a, const ScalarField& b);
double hausdorff_mean(const ScalarField& a, const ScalarField& b);

/// SSIM with K1=0.01, K2=0.03, dynamic range = observed max-min, uniform
/// 8-per-axis window means (truncated at the boundary).
double ssim(const ScalarField& x, const ScalarField& y);

}  // namespace dfreg
