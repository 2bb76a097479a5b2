#pragma once

#include <vector>

#include "dfreg/deformation.hpp"
#include "dfreg/field.hpp"

namespace dfreg {

/// Positive continuation map h embedding the deformation over t in [0,1].
/// smoothed_h0 is the Gaussian-smoothed indicator of the domain (ones field,
/// zero-padded smoothing), so h falls toward 1/2 at the faces and stays at 1
/// across the interior; h_min floors every evaluation.
struct HomotopyState {
    ScalarField smoothed_h0;
    double sigma = 2.0;
    double h_min = 1e-3;
    double t = 0.0;

    static HomotopyState make(const GridShape& shape, double sigma = 2.0, double h_min = 1e-3);
};

/// h(x) = max(h_min, sample_linear(smoothed_h0, x + displacement(x))).
ScalarField homotopy_eval(const HomotopyState& state, const DeformationField& phi);

/// displacement_new = displacement_old + dt * u / h, componentwise.
/// Throws "homotopy underflow" if any h value sits below the configured floor.
DeformationField euler_step(const DeformationField& phi, const VectorField& u, const ScalarField& h,
                            double dt, double h_min = 1e-3);

/// Sum of d(u_i)/d(x_i); central differences interior, one-sided at faces.
ScalarField divergence(const VectorField& u);

/// Control-increment continuity residual:
///   residual(x) = div(u)(x) + (h_curr(x) - h_prev(x)) / dt,
/// with the boundary condition u = 0 on the domain faces added as
/// sum_i |u_i(x)| on every face voxel.
ScalarField cic_residual(const VectorField& u, const ScalarField& h_prev, const ScalarField& h_curr,
                         double dt);

/// Flow of a stationary velocity field: phi_{1/2^T} = id + v/2^T followed by
/// T recursive self-compositions.
DeformationField scaling_and_squaring(const VectorField& v, int T);

/// Mean over interior voxels of |det grad phi - h0 / h(phi)|; a diagnostic of
/// the determinant identity, not a loss.
double det_identity_gap(const DeformationField& phi, const HomotopyState& state);

struct IntegrationStep {
    double t = 0.0;
    VectorField u;
    ScalarField h;        // evaluated at the post-step field
    DeformationField phi; // post-step snapshot
};

struct IntegrationTrace {
    double dt = 0.0;
    ScalarField h_initial;  // h at the field the first step departed from
    std::vector<IntegrationStep> steps;
};

}  // namespace dfreg
