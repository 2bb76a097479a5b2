#include "dfreg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dfreg {

std::uint64_t pair_seed(std::uint64_t run_seed, std::uint64_t stream, std::uint64_t index) {
    // splitmix64 over the combined words
    std::uint64_t z = run_seed + 0x9E3779B97F4A7C15ULL * (stream + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

template <typename Fn>
void fill_field(ScalarField& f, Fn&& fn) {
    const auto& dims = f.shape().dims;
    if (f.shape().rank() == 2) {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j) f(i, j) = fn(std::array<double, 3>{double(i), double(j), 0.0});
    } else {
        for (int i = 0; i < dims[0]; ++i)
            for (int j = 0; j < dims[1]; ++j)
                for (int k = 0; k < dims[2]; ++k)
                    f(i, j, k) = fn(std::array<double, 3>{double(i), double(j), double(k)});
    }
}

double sq_dist(const std::array<double, 3>& p, const std::array<double, 3>& c, int d) {
    double s = 0.0;
    for (int a = 0; a < d; ++a) s += (p[static_cast<std::size_t>(a)] - c[static_cast<std::size_t>(a)]) * (p[static_cast<std::size_t>(a)] - c[static_cast<std::size_t>(a)]);
    return s;
}

// Fold-free random smooth displacement: smoothed white noise, tapered to zero
// at the faces, rescaled down until the Jacobian stays positive.
DeformationField random_diffeo(std::mt19937_64& rng, const GridShape& shape, double amplitude) {
    const int d = shape.rank();
    const double sigma = std::max(3.0, *std::min_element(shape.dims.begin(), shape.dims.end()) / 6.0);

    VectorField noise(shape);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int a = 0; a < d; ++a)
        for (auto& v : noise.comp(a).data()) v = gauss(rng);
    VectorField smooth = gaussian_smooth(noise, sigma);

    // boundary taper over a fixed margin
    const double margin = 6.0;
    ScalarField taper(shape, 1.0);
    fill_field(taper, [&](const std::array<double, 3>& p) {
        double w = 1.0;
        for (int a = 0; a < d; ++a) {
            double t = std::min(p[static_cast<std::size_t>(a)], shape.dims[static_cast<std::size_t>(a)] - 1 - p[static_cast<std::size_t>(a)]) / margin;
            w *= std::clamp(t, 0.0, 1.0);
        }
        return w;
    });

    double peak = 0.0;
    for (int a = 0; a < d; ++a) {
        auto& c = smooth.comp(a).data();
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] *= taper[static_cast<std::int64_t>(i)];
            peak = std::max(peak, std::abs(c[i]));
        }
    }
    if (peak < 1e-12) peak = 1.0;
    double scale = amplitude / peak;

    DeformationField phi(shape);
    for (int attempt = 0; attempt < 32; ++attempt) {
        for (int a = 0; a < d; ++a) {
            auto& dst = phi.displacement.comp(a).data();
            const auto& src = smooth.comp(a).data();
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * scale;
        }
        if (jacobian_det(phi).fold_fraction == 0.0) return phi;
        scale *= 0.8;
    }
    throw std::runtime_error("random_diffeo: could not reach a fold-free field");
}

struct Scene {
    ScalarField image;
    ScalarField mask;
};

Scene build_scene(std::mt19937_64& rng, const std::string& kind, const GridShape& shape) {
    const int d = shape.rank();
    const double n_min = *std::min_element(shape.dims.begin(), shape.dims.end());
    std::uniform_real_distribution<double> jitter(-0.08 * n_min, 0.08 * n_min);

    std::array<double, 3> center{};
    for (int a = 0; a < d; ++a) center[static_cast<std::size_t>(a)] = 0.5 * (shape.dims[static_cast<std::size_t>(a)] - 1) + jitter(rng);

    Scene sc{ScalarField(shape), ScalarField(shape)};

    std::uniform_real_distribution<double> unit01(0.0, 1.0);
    if (kind == "blob") {
        double r1 = (0.10 + 0.03 * unit01(rng)) * n_min;
        std::array<double, 3> c2 = center;
        c2[0] += 0.24 * n_min;
        c2[1] += 0.10 * n_min;
        double r2 = 0.06 * n_min;
        fill_field(sc.image, [&](const std::array<double, 3>& p) {
            double f1 = std::exp(-sq_dist(p, center, d) / (r1 * r1));
            double f2 = std::exp(-sq_dist(p, c2, d) / (r2 * r2));
            return 0.9 * f1 + 0.6 * f2;
        });
        fill_field(sc.mask, [&](const std::array<double, 3>& p) {
            if (sq_dist(p, center, d) < r1 * r1) return 1.0;
            if (sq_dist(p, c2, d) < r2 * r2) return 2.0;
            return 0.0;
        });
    } else if (kind == "c-shape") {
        double rad = 0.30 * n_min, thick = 0.10 * n_min;
        fill_field(sc.image, [&](const std::array<double, 3>& p) {
            double r = std::sqrt(sq_dist(p, center, d));
            double ang = std::atan2(p[1] - center[1], p[0] - center[0]);
            bool ring = std::abs(r - rad) < thick && std::abs(ang) > 0.6;  // open toward +axis0
            bool core = r < 0.12 * n_min;
            return (ring ? 0.9 : 0.0) + (core ? 0.5 : 0.0);
        });
        fill_field(sc.mask, [&](const std::array<double, 3>& p) {
            double r = std::sqrt(sq_dist(p, center, d));
            double ang = std::atan2(p[1] - center[1], p[0] - center[0]);
            if (std::abs(r - rad) < thick && std::abs(ang) > 0.6) return 1.0;
            if (r < 0.12 * n_min) return 2.0;
            return 0.0;
        });
        sc.image = gaussian_smooth(sc.image, 1.0);
    } else if (kind == "multi-organ") {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<std::array<double, 3>> centers;
        std::vector<double> radii, intensities;
        for (int k = 0; k < 3; ++k) {
            std::array<double, 3> c = center;
            double ang = 2.0 * 3.14159265358979323846 * (k / 3.0 + 0.1 * unit(rng));
            c[0] += 0.22 * n_min * std::cos(ang);
            c[1] += 0.22 * n_min * std::sin(ang);
            centers.push_back(c);
            radii.push_back((0.09 + 0.05 * unit(rng)) * n_min);
            intensities.push_back(0.5 + 0.4 * unit(rng));
        }
        fill_field(sc.image, [&](const std::array<double, 3>& p) {
            double v = 0.0;
            for (std::size_t k = 0; k < centers.size(); ++k)
                v += intensities[k] * std::exp(-sq_dist(p, centers[k], d) / (radii[k] * radii[k]));
            return v;
        });
        fill_field(sc.mask, [&](const std::array<double, 3>& p) {
            for (std::size_t k = 0; k < centers.size(); ++k)
                if (sq_dist(p, centers[k], d) < radii[k] * radii[k]) return static_cast<double>(k + 1);
            return 0.0;
        });
    } else {
        throw std::invalid_argument("make_synthetic_pair: unknown kind '" + kind + "'");
    }
    return sc;
}

}  // namespace

SyntheticPair make_synthetic_pair(std::uint64_t seed, const std::string& kind, const GridShape& shape,
                                  double amplitude, double noise_sigma) {
    std::mt19937_64 rng(seed);
    Scene sc = build_scene(rng, kind, shape);
    DeformationField gt = random_diffeo(rng, shape, amplitude);

    SyntheticPair out;
    out.x = sc.image;
    out.mask_x = sc.mask;
    out.y = warp(sc.image, gt);
    out.mask_y = warp_nearest(sc.mask, gt);
    out.gt_phi = std::move(gt);

    if (noise_sigma > 0.0) {
        std::normal_distribution<double> gauss(0.0, noise_sigma);
        for (auto& v : out.y.data()) v += gauss(rng);
    }
    return out;
}

}  // namespace dfreg
