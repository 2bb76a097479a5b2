#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dfreg/config.hpp"
#include "dfreg/deformation.hpp"
#include "dfreg/dynamics.hpp"
#include "dfreg/network.hpp"
#include "dfreg/objectives.hpp"
#include "dfreg/synthetic.hpp"

namespace dfreg {

struct LossValues {
    double total = 0, sim = 0, jdet = 0, smooth = 0, cycle = 0, cic = 0;
};

struct ScaleSnapshot {
    GridShape grid;
    DeformationField phi_fwd, phi_bwd;
    IntegrationTrace fwd, bwd;
};

struct RegistrationResult {
    DeformationField phi, phi_inv;
    ScalarField warped_xy;  // X o phi, aligned to Y
    ScalarField warped_yx;  // Y o phi_inv, aligned to X
    std::vector<ScaleSnapshot> scales;
    LossValues losses;
    MetricReport forward, backward;
};

struct HistoryRow {
    int iteration = 0;
    LossValues losses;
};

struct TrainOutput {
    RegistrationModel model;
    std::vector<HistoryRow> history;
};

/// Batch-size-1 training on synthetic pairs: forward cascade, total loss,
/// reverse sweep, Adam step. Aborts with the component breakdown if the loss
/// goes non-finite.
TrainOutput train(const RunConfig& cfg, std::ostream* log = nullptr);

/// No-grad forward pass; emits both deformations, both warped images, the
/// loss breakdown and metrics in both directions (label metrics only when
/// masks are given).
RegistrationResult register_pair(const ScalarField& x, const ScalarField& y, const RegistrationModel& model,
                                 const LossWeights& weights, int ncc_window,
                                 const ScalarField* mask_x = nullptr, const ScalarField* mask_y = nullptr);

struct EvalRow {
    int pair = 0;
    MetricReport fwd, bwd;
    double pre_dice = 0.0;   // before registration
    double cycle_err = 0.0;  // mean |compose(phi, phi_inv) - id| in voxels
};

struct EvalTable {
    std::vector<EvalRow> rows;
    MetricReport fwd_mean, fwd_std, bwd_mean, bwd_std;
    double pre_dice_mean = 0.0, cycle_err_mean = 0.0;
    std::string text;  // deterministic formatted table
};

EvalTable evaluate(const RunConfig& cfg, const RegistrationModel& model);

/// mean over voxels of ||compose(phi, phi_inv)(x) - x|| in voxels.
double cycle_displacement_error(const DeformationField& phi, const DeformationField& phi_inv);

struct IntegratorReport {
    double max_err_ss = 0.0, max_err_ci = 0.0;  // interior, voxels
    double fold_ss = 0.0, fold_ci = 0.0;
    int interpolation_passes_ss = 0, interpolation_passes_ci = 0;
    std::string text;
};

/// Scaling-and-squaring vs control-increment Euler stepping on an analytic
/// stationary velocity field (linear, radial or vortex), compared against the
/// matrix-exponential closed form.
IntegratorReport compare_integrators(const RunConfig& cfg);

/// Closed-form flow of v(x) = A (x - c): phi(x) = c + expm(A)(x - c).
DeformationField linear_flow_closed_form(const GridShape& shape, const std::vector<double>& a_matrix,
                                         const std::vector<double>& center, double time = 1.0);

/// The analytic velocity matrix behind a velocity spec.
std::vector<double> velocity_matrix(const std::string& kind, double amplitude, int dims);
VectorField velocity_on_grid(const GridShape& shape, const std::vector<double>& a_matrix,
                             const std::vector<double>& center);

/// Gradcheck and invariant sweep; prints one line per check.
bool selftest(std::ostream& os);

}  // namespace dfreg
