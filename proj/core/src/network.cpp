#include "dfreg/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "dfreg/bridge.hpp"
#include "dfreg/dynamics.hpp"

namespace dfreg {

void SrConfig::validate() const {
    if (dims != 2 && dims != 3) throw std::invalid_argument("SrConfig: dims must be 2 or 3");
    if (scales < 1) throw std::invalid_argument("SrConfig: scales must be >= 1");
    if (cascades < 1) throw std::invalid_argument("SrConfig: cascades must be >= 1");
    if (static_cast<int>(channels.size()) != scales)
        throw std::invalid_argument("SrConfig: need one channel count per scale");
    for (int c : channels)
        if (c < 1) throw std::invalid_argument("SrConfig: channel counts must be positive");
    if (!(sigma_h > 0.0)) throw std::invalid_argument("SrConfig: sigma_h must be positive");
    if (!(h_min > 0.0)) throw std::invalid_argument("SrConfig: h_min must be positive");
}

namespace {

std::vector<int> kernel_shape(int cout, int cin, int k, int sd) {
    std::vector<int> s{cout, cin};
    for (int a = 0; a < sd; ++a) s.push_back(k);
    return s;
}

struct ParamBuilder {
    std::mt19937_64 rng;
    std::vector<std::string>* names;
    std::vector<ad::Value>* values;

    ad::Value uniform(const std::string& name, std::vector<int> shape, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        ad::Tensor t(shape);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.data) v = dist(rng);
        return track(name, std::move(t));
    }

    ad::Value zeros(const std::string& name, std::vector<int> shape) {
        return track(name, ad::Tensor::zeros(std::move(shape)));
    }

    ad::Value track(const std::string& name, ad::Tensor t) {
        ad::Value v = ad::make_leaf(std::move(t), true);
        names->push_back(name);
        values->push_back(v);
        return v;
    }
};

int kpow(int k, int sd) {
    int r = 1;
    for (int a = 0; a < sd; ++a) r *= k;
    return r;
}

}  // namespace

RegistrationModel RegistrationModel::init(const SrConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RegistrationModel m;
    m.config = cfg;
    ParamBuilder pb{std::mt19937_64(seed), &m.names, &m.values};

    const int d = cfg.dims;
    const int L = cfg.scales;
    const auto& ch = cfg.channels;

    auto& unet = m.params.unet;
    unet.enc_in.w = pb.uniform("unet.enc_in.w", kernel_shape(ch[static_cast<std::size_t>(L - 1)], 1, 3, d), 1 * kpow(3, d));
    unet.enc_in.b = pb.uniform("unet.enc_in.b", {ch[static_cast<std::size_t>(L - 1)]}, 1 * kpow(3, d));
    for (int i = 0; i < L - 1; ++i) {
        int cin = ch[static_cast<std::size_t>(L - 1 - i)];
        int cout = ch[static_cast<std::size_t>(L - 2 - i)];
        std::string base = "unet.enc_down" + std::to_string(i);
        net::ConvParams cp;
        cp.w = pb.uniform(base + ".w", kernel_shape(cout, cin, 2, d), cin * kpow(2, d));
        cp.b = pb.uniform(base + ".b", {cout}, cin * kpow(2, d));
        unet.enc_down.push_back(cp);
    }
    for (int lev = 1; lev < L; ++lev) {
        int cin = ch[static_cast<std::size_t>(lev - 1)];
        int cout = ch[static_cast<std::size_t>(lev)];
        std::string base = "unet.dec" + std::to_string(lev - 1);
        net::UnetParams::DecoderStage st;
        // transposed kernels are stored [cin, cout, k...]
        std::vector<int> tshape{cin, cout};
        for (int a = 0; a < d; ++a) tshape.push_back(2);
        st.up.w = pb.uniform(base + ".up.w", tshape, cin * kpow(2, d));
        st.up.b = pb.uniform(base + ".up.b", {cout}, cin * kpow(2, d));
        st.fuse.w = pb.uniform(base + ".fuse.w", kernel_shape(cout, 2 * cout, 3, d), 2 * cout * kpow(3, d));
        st.fuse.b = pb.uniform(base + ".fuse.b", {cout}, 2 * cout * kpow(3, d));
        unet.dec.push_back(st);
    }

    // gate convolutions start at zero so the untrained cascade is the
    // identity transformation
    m.params.gates.resize(static_cast<std::size_t>(L));
    for (int lev = 0; lev < L; ++lev)
        for (int n = 0; n < cfg.cascades; ++n) {
            int cin = 2 * ch[static_cast<std::size_t>(lev)] + d;
            std::string base = "sr.s" + std::to_string(lev) + ".n" + std::to_string(n) + ".gate";
            net::GateParams gp;
            gp.w = pb.zeros(base + ".w", kernel_shape(4 * d, cin, 3, d));
            gp.b = pb.zeros(base + ".b", {4 * d});
            m.params.gates[static_cast<std::size_t>(lev)].push_back(gp);
        }
    return m;
}

ad::Value RegistrationModel::param(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::invalid_argument("RegistrationModel: unknown parameter " + name);
}

std::int64_t RegistrationModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& v : values) n += v->data.numel();
    return n;
}

std::vector<ad::Value> unet_features(const ad::Value& img, const net::UnetParams& p, const SrConfig& cfg) {
    const int L = cfg.scales;
    const int div = 1 << (L - 1);
    for (int a = 1; a < img->data.rank(); ++a)
        if (img->data.shape[static_cast<std::size_t>(a)] % div != 0)
            throw std::invalid_argument("unet_features: axis " + std::to_string(a - 1) + " extent " +
                                        std::to_string(img->data.shape[static_cast<std::size_t>(a)]) +
                                        " not divisible by " + std::to_string(div));

    std::vector<ad::Value> enc(static_cast<std::size_t>(L));
    enc[static_cast<std::size_t>(L - 1)] = ad::relu(ad::conv_nd(img, p.enc_in.w, p.enc_in.b, 1, 1));
    for (int i = 0; i < L - 1; ++i)
        enc[static_cast<std::size_t>(L - 2 - i)] = ad::relu(ad::conv_nd(enc[static_cast<std::size_t>(L - 1 - i)], p.enc_down[static_cast<std::size_t>(i)].w,
                                                                        p.enc_down[static_cast<std::size_t>(i)].b, 2, 0));

    std::vector<ad::Value> pyr(static_cast<std::size_t>(L));
    pyr[0] = enc[0];
    for (int lev = 1; lev < L; ++lev) {
        const auto& st = p.dec[static_cast<std::size_t>(lev - 1)];
        ad::Value up = ad::relu(ad::conv_transpose_nd(pyr[static_cast<std::size_t>(lev - 1)], st.up.w, st.up.b, 2));
        ad::Value cat = ad::concat_ch({up, enc[static_cast<std::size_t>(lev)]});
        pyr[static_cast<std::size_t>(lev)] = ad::relu(ad::conv_nd(cat, st.fuse.w, st.fuse.b, 1, 1));
    }
    return pyr;
}

net::BlockOut cnn_lstm_block(const ad::Value& fx_warped, const ad::Value& fy, const ad::Value& phi_disp,
                             const ad::Value& c_state, const net::GateParams& gp, int dims) {
    ad::Value x = ad::concat_ch({fx_warped, fy, phi_disp});
    ad::Value z = ad::conv_nd(x, gp.w, gp.b, 1, 1);
    ad::Value f = ad::slice_ch(z, 0, dims);
    ad::Value i = ad::slice_ch(z, dims, 2 * dims);
    ad::Value g = ad::slice_ch(z, 2 * dims, 3 * dims);
    ad::Value o = ad::slice_ch(z, 3 * dims, 4 * dims);
    ad::Value c_next = ad::add(ad::mul(ad::sigmoid(f), c_state), ad::mul(ad::sigmoid(i), ad::tanh_v(g)));
    ad::Value u = ad::mul(ad::sigmoid(o), ad::tanh_v(c_next));
    return {u, c_next};
}

namespace {

ad::Value replicate_channels(const ad::Value& h, int d) {
    if (d == 2) return ad::concat_ch({h, h});
    return ad::concat_ch({h, h, h});
}

struct PathState {
    ad::Value phi;  // [d,S...]
    ad::Value c;    // memory
    ad::Value h;    // h at current phi
};

}  // namespace

net::SrResult sr_module(const std::vector<ad::Value>& pyr_x, const std::vector<ad::Value>& pyr_y,
                        const SrConfig& cfg, const net::ModelParams& params) {
    cfg.validate();
    if (pyr_x.size() != static_cast<std::size_t>(cfg.scales) || pyr_y.size() != pyr_x.size())
        throw std::invalid_argument("sr_module: pyramid level count mismatch");

    const int d = cfg.dims;
    const int N = cfg.cascades;
    const double dt = cfg.dt();

    net::SrResult res;
    ad::Value phi_f, phi_b;

    for (int lev = 0; lev < cfg.scales; ++lev) {
        const ad::Value& fx = pyr_x[static_cast<std::size_t>(lev)];
        const ad::Value& fy = pyr_y[static_cast<std::size_t>(lev)];
        if (fx->data.shape != fy->data.shape)
            throw std::invalid_argument("sr_module: pyramid shape mismatch " + fx->data.shape_str() + " vs " +
                                        fy->data.shape_str());
        GridShape grid = grid_from_tensor(fx->data);

        std::vector<int> dshape{d};
        dshape.insert(dshape.end(), grid.dims.begin(), grid.dims.end());

        if (lev == 0) {
            phi_f = ad::constant(ad::Tensor::zeros(dshape));
            phi_b = ad::constant(ad::Tensor::zeros(dshape));
        } else {
            phi_f = ad::scale(ad::upsample2x(phi_f), 2.0);
            phi_b = ad::scale(ad::upsample2x(phi_b), 2.0);
        }

        HomotopyState hstate = HomotopyState::make(grid, cfg.sigma_h, cfg.h_min);
        ad::Value h0 = ad::constant(tensor_from_scalar(hstate.smoothed_h0));

        PathState fwd{phi_f, ad::constant(ad::Tensor::zeros(dshape)),
                      ad::clamp_min(ad::warp_diff(h0, phi_f), cfg.h_min)};
        PathState bwd{phi_b, ad::constant(ad::Tensor::zeros(dshape)),
                      ad::clamp_min(ad::warp_diff(h0, phi_b), cfg.h_min)};

        net::ScaleTrace tr;
        tr.grid = grid;
        tr.fwd.h_initial = fwd.h;
        tr.bwd.h_initial = bwd.h;

        auto advance = [&](PathState& st, const ad::Value& fa, const ad::Value& fb, const net::GateParams& gp,
                           net::PathTrace& trace, double t) {
            ad::Value fa_in = cfg.prealign ? ad::warp_diff(fa, st.phi) : fa;
            net::BlockOut out = cnn_lstm_block(fa_in, fb, st.phi, st.c, gp, d);
            st.c = out.c;
            ad::Value step = ad::scale(ad::divide(out.u, replicate_channels(st.h, d)), dt);
            st.phi = ad::add(st.phi, step);
            st.h = ad::clamp_min(ad::warp_diff(h0, st.phi), cfg.h_min);
            trace.steps.push_back({t, out.u, st.h, st.phi});
        };

        for (int n = 0; n < N; ++n) {
            const net::GateParams& gp = params.gates[static_cast<std::size_t>(lev)][static_cast<std::size_t>(n)];
            double t = static_cast<double>(n + 1) * dt;
            advance(fwd, fx, fy, gp, tr.fwd, t);
            advance(bwd, fy, fx, gp, tr.bwd, t);
        }
        phi_f = fwd.phi;
        phi_b = bwd.phi;
        res.scales.push_back(std::move(tr));
    }

    res.phi_fwd = phi_f;
    res.phi_bwd = phi_b;
    return res;
}

}  // namespace dfreg
