#include "dfreg/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dfreg/bridge.hpp"

namespace dfreg {

namespace {

LossValues loss_values(const LossBreakdown& lb) {
    LossValues v;
    v.total = lb.total->scalar();
    v.sim = lb.sim->scalar();
    v.jdet = lb.jdet->scalar();
    v.smooth = lb.smooth->scalar();
    v.cycle = lb.cycle->scalar();
    v.cic = lb.cic->scalar();
    return v;
}

bool finite(const LossValues& v) {
    return std::isfinite(v.total) && std::isfinite(v.sim) && std::isfinite(v.jdet) &&
           std::isfinite(v.smooth) && std::isfinite(v.cycle) && std::isfinite(v.cic);
}

std::string breakdown_str(const LossValues& v) {
    std::ostringstream os;
    os << "total=" << v.total << " sim=" << v.sim << " jdet=" << v.jdet << " smooth=" << v.smooth
       << " cycle=" << v.cycle << " cic=" << v.cic;
    return os.str();
}

struct ForwardPass {
    net::SrResult sr;
    LossBreakdown losses;
};

ForwardPass run_forward(const ad::Value& x, const ad::Value& y, const RegistrationModel& model,
                        const LossWeights& weights, int ncc_window) {
    auto pyr_x = unet_features(x, model.params.unet, model.config);
    auto pyr_y = unet_features(y, model.params.unet, model.config);
    ForwardPass fp;
    fp.sr = sr_module(pyr_x, pyr_y, model.config, model.params);
    fp.losses = total_loss(x, y, fp.sr, weights, ncc_window);
    return fp;
}

}  // namespace

TrainOutput train(const RunConfig& cfg, std::ostream* log) {
    RegistrationModel model = RegistrationModel::init(cfg.model, cfg.seed);
    ad::AdamState adam;
    std::vector<HistoryRow> history;
    history.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        SyntheticPair pair = make_synthetic_pair(pair_seed(cfg.seed, 1, static_cast<std::uint64_t>(it)),
                                                 cfg.dataset, cfg.shape, cfg.warp_amplitude, cfg.noise_sigma);
        ad::Value x = ad::constant(tensor_from_scalar(pair.x));
        ad::Value y = ad::constant(tensor_from_scalar(pair.y));
        ForwardPass fp = run_forward(x, y, model, cfg.weights, cfg.ncc_window);
        LossValues lv = loss_values(fp.losses);
        if (!finite(lv))
            throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it) + ": " +
                                     breakdown_str(lv));
        ad::zero_grad(model.values);
        ad::backward(fp.losses.total);
        ad::adam_step(model.values, adam, cfg.lr);
        history.push_back({it, lv});
        if (log && cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations))
            (*log) << "iter " << it << "  " << breakdown_str(lv) << "\n";
    }
    return {std::move(model), std::move(history)};
}

namespace {

IntegrationTrace pure_trace(const net::PathTrace& path, double dt) {
    IntegrationTrace tr;
    tr.dt = dt;
    tr.h_initial = scalar_from_tensor(path.h_initial->data);
    for (const auto& st : path.steps) {
        IntegrationStep step;
        step.t = st.t;
        step.u = vector_from_tensor(st.u->data);
        step.h = scalar_from_tensor(st.h->data);
        step.phi = deformation_from_tensor(st.phi->data);
        tr.steps.push_back(std::move(step));
    }
    return tr;
}

}  // namespace

RegistrationResult register_pair(const ScalarField& x, const ScalarField& y, const RegistrationModel& model,
                                 const LossWeights& weights, int ncc_window,
                                 const ScalarField* mask_x, const ScalarField* mask_y) {
    if (!(x.shape() == y.shape()))
        throw std::invalid_argument("register: shape mismatch, expected " + x.shape().str() + ", got " +
                                    y.shape().str());

    ad::Value xv = ad::constant(tensor_from_scalar(x));
    ad::Value yv = ad::constant(tensor_from_scalar(y));
    ForwardPass fp = run_forward(xv, yv, model, weights, ncc_window);

    RegistrationResult res;
    res.phi = deformation_from_tensor(fp.sr.phi_fwd->data);
    res.phi_inv = deformation_from_tensor(fp.sr.phi_bwd->data);
    res.warped_xy = scalar_from_tensor(ad::warp_diff(xv, fp.sr.phi_fwd)->data);
    res.warped_yx = scalar_from_tensor(ad::warp_diff(yv, fp.sr.phi_bwd)->data);
    res.losses = loss_values(fp.losses);

    const double dt = model.config.dt();
    for (const auto& sc : fp.sr.scales) {
        ScaleSnapshot snap;
        snap.grid = sc.grid;
        snap.phi_fwd = deformation_from_tensor(sc.phi_fwd()->data);
        snap.phi_bwd = deformation_from_tensor(sc.phi_bwd()->data);
        snap.fwd = pure_trace(sc.fwd, dt);
        snap.bwd = pure_trace(sc.bwd, dt);
        res.scales.push_back(std::move(snap));
    }

    res.forward.ssim = ssim(res.warped_xy, y);
    res.backward.ssim = ssim(res.warped_yx, x);
    res.forward.fold_fraction = jacobian_det(res.phi).fold_fraction;
    res.backward.fold_fraction = jacobian_det(res.phi_inv).fold_fraction;
    if (mask_x && mask_y) {
        ScalarField wx = warp_nearest(*mask_x, res.phi);
        ScalarField wy = warp_nearest(*mask_y, res.phi_inv);
        res.forward.dsc = dice_mean(wx, *mask_y);
        res.forward.hd = hausdorff_mean(wx, *mask_y);
        res.backward.dsc = dice_mean(wy, *mask_x);
        res.backward.hd = hausdorff_mean(wy, *mask_x);
    }
    return res;
}

double cycle_displacement_error(const DeformationField& phi, const DeformationField& phi_inv) {
    DeformationField comp = compose(phi, phi_inv);
    const int d = comp.shape.rank();
    double acc = 0.0;
    for (std::int64_t i = 0; i < comp.shape.voxels(); ++i) {
        double s = 0.0;
        for (int a = 0; a < d; ++a) {
            double v = comp.displacement.comp(a)[i];
            s += v * v;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(comp.shape.voxels());
}

namespace {

struct Stats {
    double mean = 0.0, std = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
    Stats s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
    return s;
}

}  // namespace

EvalTable evaluate(const RunConfig& cfg, const RegistrationModel& model) {
    if (cfg.eval_pairs < 1) throw std::invalid_argument("evaluate: empty dataset");
    EvalTable table;
    std::vector<double> fd, fh, fs, ff, bd, bh, bs, bf, pre, cyc;

    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << "pair  fwd_dsc   fwd_hd    fwd_ssim  fwd_fold  bwd_dsc   bwd_hd    bwd_ssim  bwd_fold  pre_dsc   cycle_err\n";

    for (int i = 0; i < cfg.eval_pairs; ++i) {
        SyntheticPair pair = make_synthetic_pair(pair_seed(cfg.seed, 2, static_cast<std::uint64_t>(i)),
                                                 cfg.dataset, cfg.shape, cfg.warp_amplitude, cfg.noise_sigma);
        RegistrationResult res = register_pair(pair.x, pair.y, model, cfg.weights, cfg.ncc_window,
                                               &pair.mask_x, &pair.mask_y);
        EvalRow row;
        row.pair = i;
        row.fwd = res.forward;
        row.bwd = res.backward;
        row.pre_dice = dice_mean(pair.mask_x, pair.mask_y);
        row.cycle_err = cycle_displacement_error(res.phi, res.phi_inv);
        table.rows.push_back(row);

        fd.push_back(row.fwd.dsc);
        fh.push_back(row.fwd.hd);
        fs.push_back(row.fwd.ssim);
        ff.push_back(row.fwd.fold_fraction);
        bd.push_back(row.bwd.dsc);
        bh.push_back(row.bwd.hd);
        bs.push_back(row.bwd.ssim);
        bf.push_back(row.bwd.fold_fraction);
        pre.push_back(row.pre_dice);
        cyc.push_back(row.cycle_err);

        os << std::setw(4) << i << "  " << row.fwd.dsc << "  " << row.fwd.hd << "  " << row.fwd.ssim << "  "
           << row.fwd.fold_fraction << "  " << row.bwd.dsc << "  " << row.bwd.hd << "  " << row.bwd.ssim
           << "  " << row.bwd.fold_fraction << "  " << row.pre_dice << "  " << row.cycle_err << "\n";
    }

    auto fill = [](MetricReport& mean, MetricReport& stdr, const std::vector<double>& d,
                   const std::vector<double>& h, const std::vector<double>& s, const std::vector<double>& f) {
        Stats sd = stats_of(d), sh = stats_of(h), ss_ = stats_of(s), sf = stats_of(f);
        mean.dsc = sd.mean;
        mean.hd = sh.mean;
        mean.ssim = ss_.mean;
        mean.fold_fraction = sf.mean;
        stdr.dsc = sd.std;
        stdr.hd = sh.std;
        stdr.ssim = ss_.std;
        stdr.fold_fraction = sf.std;
    };
    fill(table.fwd_mean, table.fwd_std, fd, fh, fs, ff);
    fill(table.bwd_mean, table.bwd_std, bd, bh, bs, bf);
    table.pre_dice_mean = stats_of(pre).mean;
    table.cycle_err_mean = stats_of(cyc).mean;

    os << "mean  " << table.fwd_mean.dsc << "  " << table.fwd_mean.hd << "  " << table.fwd_mean.ssim << "  "
       << table.fwd_mean.fold_fraction << "  " << table.bwd_mean.dsc << "  " << table.bwd_mean.hd << "  "
       << table.bwd_mean.ssim << "  " << table.bwd_mean.fold_fraction << "  " << table.pre_dice_mean << "  "
       << table.cycle_err_mean << "\n";
    os << "std   " << table.fwd_std.dsc << "  " << table.fwd_std.hd << "  " << table.fwd_std.ssim << "  "
       << table.fwd_std.fold_fraction << "  " << table.bwd_std.dsc << "  " << table.bwd_std.hd << "  "
       << table.bwd_std.ssim << "  " << table.bwd_std.fold_fraction << "\n";
    table.text = os.str();
    return table;
}

// ---------------------------------------------------------------------------
// integrator comparison
// ---------------------------------------------------------------------------

namespace {

// exp of a dense d x d matrix, scaling-and-squaring Taylor series
std::vector<double> expm(std::vector<double> a, int d) {
    double norm = 0.0;
    for (double v : a) norm = std::max(norm, std::abs(v));
    int squarings = 0;
    while (norm > 0.5) {
        norm *= 0.5;
        ++squarings;
    }
    double s = std::ldexp(1.0, -squarings);
    for (double& v : a) v *= s;

    auto matmul = [d](const std::vector<double>& x, const std::vector<double>& y) {
        std::vector<double> r(static_cast<std::size_t>(d * d), 0.0);
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < d; ++k) {
                double xv = x[static_cast<std::size_t>(i * d + k)];
                for (int j = 0; j < d; ++j) r[static_cast<std::size_t>(i * d + j)] += xv * y[static_cast<std::size_t>(k * d + j)];
            }
        return r;
    };

    std::vector<double> result(static_cast<std::size_t>(d * d), 0.0);
    for (int i = 0; i < d; ++i) result[static_cast<std::size_t>(i * d + i)] = 1.0;
    std::vector<double> term = result;
    for (int k = 1; k <= 24; ++k) {
        term = matmul(term, a);
        for (double& v : term) v /= k;
        for (std::size_t i = 0; i < result.size(); ++i) result[i] += term[i];
    }
    for (int i = 0; i < squarings; ++i) result = matmul(result, result);
    return result;
}

std::vector<double> grid_center(const GridShape& shape) {
    std::vector<double> c;
    for (int e : shape.dims) c.push_back(0.5 * (e - 1));
    return c;
}

}  // namespace

std::vector<double> velocity_matrix(const std::string& kind, double amplitude, int dims) {
    std::vector<double> m(static_cast<std::size_t>(dims * dims), 0.0);
    auto at = [&](int i, int j) -> double& { return m[static_cast<std::size_t>(i * dims + j)]; };
    if (kind == "linear") {
        at(0, 0) = 0.25;
        at(0, 1) = -1.0;
        at(1, 0) = 1.0;
        at(1, 1) = 0.25;
        if (dims == 3) at(2, 2) = 0.2;
    } else if (kind == "radial") {
        for (int i = 0; i < dims; ++i) at(i, i) = 1.0;
    } else if (kind == "vortex") {
        at(0, 1) = -1.0;
        at(1, 0) = 1.0;
    } else {
        throw std::invalid_argument("velocity_matrix: unknown kind '" + kind + "'");
    }
    for (double& v : m) v *= amplitude;
    return m;
}

VectorField velocity_on_grid(const GridShape& shape, const std::vector<double>& a_matrix,
                             const std::vector<double>& center) {
    const int d = shape.rank();
    VectorField v(shape);
    const auto& dims = shape.dims;
    auto eval = [&](const std::array<double, 3>& p, int comp) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += a_matrix[static_cast<std::size_t>(comp * d + j)] * (p[static_cast<std::size_t>(j)] - center[static_cast<std::size_t>(j)]);
        return acc;
    };
    if (d == 2) {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int a = 0; a < d; ++a) v.comp(a)(i, j) = eval({double(i), double(j), 0.0}, a);
    } else {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k)
                    for (int a = 0; a < d; ++a) v.comp(a)(i, j, k) = eval({double(i), double(j), double(k)}, a);
    }
    return v;
}

DeformationField linear_flow_closed_form(const GridShape& shape, const std::vector<double>& a_matrix,
                                         const std::vector<double>& center, double time) {
    const int d = shape.rank();
    std::vector<double> at = a_matrix;
    for (double& v : at) v *= time;
    std::vector<double> e = expm(at, d);

    DeformationField phi(shape);
    const auto& dims = shape.dims;
    auto disp = [&](const std::array<double, 3>& p, int comp) {
        double acc = -(p[static_cast<std::size_t>(comp)] - center[static_cast<std::size_t>(comp)]);
        for (int j = 0; j < d; ++j) acc += e[static_cast<std::size_t>(comp * d + j)] * (p[static_cast<std::size_t>(j)] - center[static_cast<std::size_t>(j)]);
        return acc;
    };
    if (d == 2) {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int a = 0; a < d; ++a) phi.displacement.comp(a)(i, j) = disp({double(i), double(j), 0.0}, a);
    } else {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k)
                    for (int a = 0; a < d; ++a)
                        phi.displacement.comp(a)(i, j, k) = disp({double(i), double(j), double(k)}, a);
    }
    return phi;
}

namespace {

double interior_max_error(const DeformationField& a, const DeformationField& b, int margin) {
    const auto& dims = a.shape.dims;
    const int d = a.shape.rank();
    double worst = 0.0;
    auto consider = [&](std::int64_t off, const std::array<int, 3>& idx) {
        for (int ax = 0; ax < d; ++ax)
            if (idx[static_cast<std::size_t>(ax)] < margin || idx[static_cast<std::size_t>(ax)] >= dims[static_cast<std::size_t>(ax)] - margin) return;
        for (int ax = 0; ax < d; ++ax)
            worst = std::max(worst, std::abs(a.displacement.comp(ax)[off] - b.displacement.comp(ax)[off]));
    };
    if (d == 2) {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j, ++off) consider(off, {i, j, 0});
    } else {
        std::int64_t off = 0;
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k, ++off) consider(off, {i, j, k});
    }
    return worst;
}

}  // namespace

IntegratorReport compare_integrators(const RunConfig& cfg) {
    const GridShape& shape = cfg.shape;
    const int d = shape.rank();
    std::vector<double> a_matrix = velocity_matrix(cfg.velocity, cfg.velocity_amplitude, d);
    std::vector<double> center = grid_center(shape);

    VectorField v = velocity_on_grid(shape, a_matrix, center);
    DeformationField closed = linear_flow_closed_form(shape, a_matrix, center);

    DeformationField phi_ss = scaling_and_squaring(v, cfg.ss_steps);

    // control-increment route: u = v(phi) * h(phi), analytic velocity lookup,
    // so the only field interpolation is the homotopy evaluation
    HomotopyState hstate = HomotopyState::make(shape, cfg.model.sigma_h, cfg.model.h_min);
    DeformationField phi_ci = identity(shape);
    const int N = cfg.integration_steps;
    const double dt = 1.0 / N;
    for (int n = 0; n < N; ++n) {
        ScalarField h = homotopy_eval(hstate, phi_ci);
        VectorField u(shape);
        const auto& dims = shape.dims;
        std::int64_t off = 0;
        auto fill = [&](const std::array<double, 3>& idx) {
            std::array<double, 3> pos{};
            for (int ax = 0; ax < d; ++ax) pos[static_cast<std::size_t>(ax)] = idx[static_cast<std::size_t>(ax)] + phi_ci.displacement.comp(ax)[off];
            for (int ax = 0; ax < d; ++ax) {
                double vel = 0.0;
                for (int j = 0; j < d; ++j)
                    vel += a_matrix[static_cast<std::size_t>(ax * d + j)] * (pos[static_cast<std::size_t>(j)] - center[static_cast<std::size_t>(j)]);
                u.comp(ax)[off] = vel * h[off];
            }
        };
        if (d == 2) {
            off = 0;
            for (int i = 0; i < dims[0]; ++i)
                for (int j = 0; j < dims[1]; ++j, ++off) fill({double(i), double(j), 0.0});
        } else {
            off = 0;
            for (int i = 0; i < dims[0]; ++i)
                for (int j = 0; j < dims[1]; ++j)
                    for (int k = 0; k < dims[2]; ++k, ++off) fill({double(i), double(j), double(k)});
        }
        phi_ci = euler_step(phi_ci, u, h, dt, cfg.model.h_min);
    }

    double max_disp = 0.0;
    for (int ax = 0; ax < d; ++ax)
        for (std::int64_t i = 0; i < shape.voxels(); ++i)
            max_disp = std::max(max_disp, std::abs(closed.displacement.comp(ax)[i]));
    int margin = static_cast<int>(std::ceil(max_disp)) + 2;

    IntegratorReport rep;
    rep.max_err_ss = interior_max_error(phi_ss, closed, margin);
    rep.max_err_ci = interior_max_error(phi_ci, closed, margin);
    rep.fold_ss = jacobian_det(phi_ss).fold_fraction;
    rep.fold_ci = jacobian_det(phi_ci).fold_fraction;
    rep.interpolation_passes_ss = cfg.ss_steps;
    rep.interpolation_passes_ci = N;

    std::ostringstream os;
    os << "velocity " << cfg.velocity << " amplitude " << cfg.velocity_amplitude << " on " << shape.str()
       << "\n";
    os << "scaling-and-squaring  T=" << cfg.ss_steps << "  interior max err " << rep.max_err_ss
       << " voxels, fold fraction " << rep.fold_ss << ", field interpolation passes "
       << rep.interpolation_passes_ss << " (one compose per squaring)\n";
    os << "control-increment     N=" << N << "  interior max err " << rep.max_err_ci
       << " voxels, fold fraction " << rep.fold_ci << ", field interpolation passes "
       << rep.interpolation_passes_ci << " (homotopy evaluation only; velocity is analytic)\n";
    rep.text = os.str();
    return rep;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

namespace {

struct Check {
    std::ostream& os;
    bool all_ok = true;

    void run(const std::string& name, double err, double tol) {
        bool ok = err < tol;
        all_ok = all_ok && ok;
        os << (ok ? "[ok]   " : "[FAIL] ") << name << "  err " << err << " (tol " << tol << ")\n";
    }
    void expect(const std::string& name, bool ok) {
        all_ok = all_ok && ok;
        os << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
    }
};

ad::Value smooth_leaf(std::mt19937_64& rng, std::vector<int> shape, double lo = 0.2, double hi = 1.0) {
    ad::Tensor t(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return ad::make_leaf(std::move(t), true);
}

}  // namespace

bool selftest(std::ostream& os) {
    Check ck{os};
    std::mt19937_64 rng(20240807);

    {  // elementwise and reductions
        ad::Value a = smooth_leaf(rng, {2, 5, 6}, -1.0, 1.0);
        ad::Value b = smooth_leaf(rng, {2, 5, 6}, 0.5, 1.5);
        std::vector<ad::Value> ps{a, b};
        ck.run("gradcheck add/mul/divide", ad::gradcheck([&] {
                   return ad::mean_all(ad::divide(ad::mul(ad::add(a, b), a), b));
               }, ps), 1e-4);
        ck.run("gradcheck sigmoid/tanh", ad::gradcheck([&] {
                   return ad::mean_all(ad::mul(ad::sigmoid(a), ad::tanh_v(b)));
               }, ps), 1e-4);
        ck.run("gradcheck relu (inputs off the kink)", ad::gradcheck([&] {
                   return ad::mean_all(ad::relu(ad::add_const(a, 2.0)));
               }, ps), 1e-4);
        ck.run("gradcheck abs/clamp_min", ad::gradcheck([&] {
                   return ad::mean_all(ad::add(ad::abs_v(ad::add_const(a, 3.0)), ad::clamp_min(b, 0.7)));
               }, ps), 1e-4);
        ck.run("gradcheck sum/scale", ad::gradcheck([&] {
                   return ad::scale(ad::sum_all(ad::mul(a, a)), 0.25);
               }, ps), 1e-4);
    }
    {  // shape ops
        ad::Value a = smooth_leaf(rng, {2, 4, 4});
        ad::Value b = smooth_leaf(rng, {1, 4, 4});
        std::vector<ad::Value> ps{a, b};
        ck.run("gradcheck concat/slice", ad::gradcheck([&] {
                   ad::Value c = ad::concat_ch({a, b});
                   return ad::mean_all(ad::mul(ad::slice_ch(c, 1, 3), ad::slice_ch(c, 0, 2)));
               }, ps), 1e-4);
    }
    {  // convolutions
        ad::Value x = smooth_leaf(rng, {2, 6, 6});
        ad::Value w = smooth_leaf(rng, {3, 2, 3, 3}, -0.5, 0.5);
        ad::Value b = smooth_leaf(rng, {3}, -0.2, 0.2);
        std::vector<ad::Value> ps{x, w, b};
        ck.run("gradcheck conv2d s1", ad::gradcheck([&] {
                   return ad::mean_all(ad::conv_nd(x, w, b, 1, 1));
               }, ps), 1e-4);
        ad::Value w2 = smooth_leaf(rng, {3, 2, 2, 2}, -0.5, 0.5);
        std::vector<ad::Value> ps2{x, w2, b};
        ck.run("gradcheck conv2d s2", ad::gradcheck([&] {
                   return ad::mean_all(ad::conv_nd(x, w2, b, 2, 0));
               }, ps2), 1e-4);
        ad::Value wt = smooth_leaf(rng, {2, 3, 2, 2}, -0.5, 0.5);
        std::vector<ad::Value> ps3{x, wt, b};
        ck.run("gradcheck conv_transpose2d", ad::gradcheck([&] {
                   return ad::mean_all(ad::conv_transpose_nd(x, wt, b, 2));
               }, ps3), 1e-4);
        ad::Value x3 = smooth_leaf(rng, {1, 4, 4, 4});
        ad::Value w3 = smooth_leaf(rng, {2, 1, 3, 3, 3}, -0.5, 0.5);
        ad::Value b3 = smooth_leaf(rng, {2}, -0.2, 0.2);
        std::vector<ad::Value> ps4{x3, w3, b3};
        ck.run("gradcheck conv3d s1", ad::gradcheck([&] {
                   return ad::mean_all(ad::conv_nd(x3, w3, b3, 1, 1));
               }, ps4), 1e-4);
    }
    {  // warp, upsample, box sum, stencils
        ad::Value img = smooth_leaf(rng, {2, 6, 6});
        ad::Value disp = smooth_leaf(rng, {2, 6, 6}, -0.4, 0.4);
        std::vector<ad::Value> ps{img, disp};
        ck.run("gradcheck warp_diff", ad::gradcheck([&] {
                   return ad::mean_all(ad::warp_diff(img, disp));
               }, ps), 1e-4);
        ad::Value a = smooth_leaf(rng, {2, 5, 5});
        std::vector<ad::Value> ps2{a};
        ck.run("gradcheck upsample2x", ad::gradcheck([&] {
                   return ad::mean_all(ad::mul(ad::upsample2x(a), ad::upsample2x(a)));
               }, ps2), 1e-4);
        ck.run("gradcheck box_sum", ad::gradcheck([&] {
                   ad::Value s = ad::box_sum(a, 2);
                   return ad::mean_all(ad::mul(s, s));
               }, ps2), 1e-4);
        ck.run("gradcheck grad_axis/fd_forward", ad::gradcheck([&] {
                   ad::Value g = ad::grad_axis(a, 0);
                   ad::Value f = ad::fd_forward(a, 1);
                   return ad::mean_all(ad::add(ad::mul(g, g), ad::mul(f, f)));
               }, ps2), 1e-4);
        ad::Value u = smooth_leaf(rng, {2, 6, 6}, -0.5, 0.5);
        std::vector<ad::Value> ps3{u};
        ck.run("gradcheck divergence", ad::gradcheck([&] {
                   ad::Value dv = ad::divergence_nd(u);
                   return ad::mean_all(ad::mul(dv, dv));
               }, ps3), 1e-4);
    }
    {  // field invariants
        std::mt19937_64 frng(7);
        GridShape g({8, 8});
        ScalarField f(g);
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        for (auto& v : f.data()) v = dist(frng);
        bool exact = true;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                std::array<double, 2> p{double(i), double(j)};
                exact = exact && f(i, j) == sample_linear(f, p);
            }
        ck.expect("sample_linear exact at voxels", exact);

        ScalarField c(g, 3.5);
        ck.expect("upsample/downsample preserve constants",
                  downsample2(upsample2(c)).data() == c.data());

        DeformationField id = identity(g);
        JacobianReport rep = jacobian_det(id);
        ck.expect("identity jacobian", rep.fold_fraction == 0.0 && std::abs(rep.min_det - 1.0) < 1e-12);
    }
    {  // euler telescoping and ncc self-similarity
        GridShape g({8, 8});
        DeformationField phi = identity(g);
        VectorField u(g);
        for (int a = 0; a < 2; ++a)
            for (auto& v : u.comp(a).data()) v = a ? -0.75 : 0.5;
        ScalarField h(g, 1.0);
        for (int n = 0; n < 4; ++n) phi = euler_step(phi, u, h, 0.25);
        bool ok = true;
        for (std::int64_t i = 0; i < g.voxels(); ++i)
            ok = ok && std::abs(phi.displacement.comp(0)[i] - 0.5) < 1e-12 &&
                 std::abs(phi.displacement.comp(1)[i] + 0.75) < 1e-12;
        ck.expect("euler_step telescopes", ok);

        std::mt19937_64 frng(11);
        ad::Tensor t({1, 12, 12});
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data) v = dist(frng);
        ad::Value x = ad::constant(t);
        double self = ad::neg(ncc_loss(x, x, 5))->scalar();
        ck.run("ncc self-correlation", std::abs(self - 1.0), 1e-4);
    }
    return ck.all_ok;
}

}  // namespace dfreg
