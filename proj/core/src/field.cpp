#include "dfreg/field.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dfreg {

GridShape::GridShape(std::vector<int> extents) : dims(std::move(extents)) {
    if (dims.size() != 2 && dims.size() != 3)
        throw std::invalid_argument("GridShape: dimensionality must be 2 or 3, got " +
                                    std::to_string(dims.size()));
    for (int n : dims)
        if (n < 2) throw std::invalid_argument("GridShape: every extent must be >= 2, got " + str());
}

std::int64_t GridShape::voxels() const {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

std::string GridShape::str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    return os.str();
}

ScalarField::ScalarField(GridShape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.voxels()), fill) {}

ScalarField::ScalarField(GridShape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.voxels())
        throw std::invalid_argument("ScalarField: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_.str());
    for (double v : data_)
        if (!std::isfinite(v)) throw std::invalid_argument("ScalarField: non-finite value");
}

std::int64_t ScalarField::offset(std::span<const int> idx) const {
    std::int64_t off = 0;
    for (int a = 0; a < shape_.rank(); ++a) off = off * shape_.dims[static_cast<std::size_t>(a)] + idx[static_cast<std::size_t>(a)];
    return off;
}

double ScalarField::operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i * shape_.dims[1] + j)];
}
double& ScalarField::operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i * shape_.dims[1] + j)];
}
double ScalarField::operator()(int i, int j, int k) const {
    return data_[static_cast<std::size_t>((i * shape_.dims[1] + j) * static_cast<std::int64_t>(shape_.dims[2]) + k)];
}
double& ScalarField::operator()(int i, int j, int k) {
    return data_[static_cast<std::size_t>((i * shape_.dims[1] + j) * static_cast<std::int64_t>(shape_.dims[2]) + k)];
}

VectorField::VectorField(GridShape shape) : shape_(shape) {
    comps_.reserve(static_cast<std::size_t>(shape_.rank()));
    for (int a = 0; a < shape_.rank(); ++a) comps_.emplace_back(shape_);
}

VectorField::VectorField(GridShape shape, std::vector<ScalarField> components)
    : shape_(std::move(shape)), comps_(std::move(components)) {
    if (static_cast<int>(comps_.size()) != shape_.rank())
        throw std::invalid_argument("VectorField: need one component per axis");
    for (const auto& c : comps_)
        if (!(c.shape() == shape_)) throw std::invalid_argument("VectorField: component shape mismatch");
}

namespace {

struct SampleAxis {
    int i0;        // lower stencil index, in [0, n-2]
    double frac;   // weight of the upper neighbour, in [0, 1]
};

inline SampleAxis clampled_axis(double p, int n) {
    double t = std::clamp(p, 0.0, static_cast<double>(n - 1));
    int i0 = std::min(static_cast<int>(t), n - 2);
    return {i0, t - i0};
}

}  // namespace

double sample_linear(const ScalarField& f, std::span<const double> p) {
    const auto& dims = f.shape().dims;
    const int d = f.shape().rank();
    if (static_cast<int>(p.size()) != d)
        throw std::invalid_argument("sample_linear: coordinate rank mismatch");
    for (double c : p)
        if (!std::isfinite(c)) throw std::invalid_argument("sample_linear: invalid coordinate");

    if (d == 2) {
        auto [i0, fi] = clampled_axis(p[0], dims[0]);
        auto [j0, fj] = clampled_axis(p[1], dims[1]);
        // weighted-sum form: exact at integer coordinates
        return (1 - fi) * (1 - fj) * f(i0, j0) + (1 - fi) * fj * f(i0, j0 + 1) +
               fi * (1 - fj) * f(i0 + 1, j0) + fi * fj * f(i0 + 1, j0 + 1);
    }
    auto [i0, fi] = clampled_axis(p[0], dims[0]);
    auto [j0, fj] = clampled_axis(p[1], dims[1]);
    auto [k0, fk] = clampled_axis(p[2], dims[2]);
    double acc = 0.0;
    for (int di = 0; di <= 1; ++di)
        for (int dj = 0; dj <= 1; ++dj)
            for (int dk = 0; dk <= 1; ++dk) {
                double w = (di ? fi : 1 - fi) * (dj ? fj : 1 - fj) * (dk ? fk : 1 - fk);
                acc += w * f(i0 + di, j0 + dj, k0 + dk);
            }
    return acc;
}

double sample_nearest(const ScalarField& f, std::span<const double> p) {
    const auto& dims = f.shape().dims;
    const int d = f.shape().rank();
    if (static_cast<int>(p.size()) != d)
        throw std::invalid_argument("sample_nearest: coordinate rank mismatch");
    std::array<int, 3> idx{};
    for (int a = 0; a < d; ++a) {
        if (!std::isfinite(p[static_cast<std::size_t>(a)])) throw std::invalid_argument("sample_nearest: invalid coordinate");
        double t = std::clamp(p[static_cast<std::size_t>(a)], 0.0, static_cast<double>(dims[static_cast<std::size_t>(a)] - 1));
        idx[static_cast<std::size_t>(a)] = static_cast<int>(std::lround(t));
    }
    return f.at(std::span<const int>(idx.data(), static_cast<std::size_t>(d)));
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * (i / sigma) * (i / sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

// One separable pass along `axis`; taps outside the grid contribute zero.
ScalarField smooth_axis(const ScalarField& f, const std::vector<double>& kernel, int axis) {
    const auto& dims = f.shape().dims;
    const int d = f.shape().rank();
    const int radius = static_cast<int>(kernel.size() / 2);
    const int n = dims[static_cast<std::size_t>(axis)];

    // stride of `axis` and number of lines
    std::int64_t stride = 1;
    for (int a = axis + 1; a < d; ++a) stride *= dims[static_cast<std::size_t>(a)];
    std::int64_t lines = f.size() / n;

    ScalarField out(f.shape());
    std::vector<double> line(static_cast<std::size_t>(n));
    for (std::int64_t l = 0; l < lines; ++l) {
        // base offset of this line
        std::int64_t block = l / stride, rem = l % stride;
        std::int64_t base = block * stride * n + rem;
        for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = f[base + i * stride];
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            int lo = std::max(-radius, -i), hi = std::min(radius, n - 1 - i);
            for (int k = lo; k <= hi; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(i + k)];
            out[base + i * stride] = acc;
        }
    }
    return out;
}

}  // namespace

ScalarField gaussian_smooth(const ScalarField& f, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_smooth: invalid sigma");
    auto kernel = gaussian_kernel(sigma);
    ScalarField out = f;
    for (int a = 0; a < f.shape().rank(); ++a) out = smooth_axis(out, kernel, a);
    return out;
}

VectorField gaussian_smooth(const VectorField& f, double sigma) {
    VectorField out(f.shape());
    for (int a = 0; a < f.rank(); ++a) out.comp(a) = gaussian_smooth(f.comp(a), sigma);
    return out;
}

ScalarField downsample2(const ScalarField& f) {
    const auto& dims = f.shape().dims;
    const int d = f.shape().rank();
    for (int n : dims)
        if (n % 2 != 0) throw std::invalid_argument("downsample2: odd extent in " + f.shape().str());

    std::vector<int> half(dims.size());
    for (std::size_t a = 0; a < dims.size(); ++a) half[a] = dims[a] / 2;
    ScalarField out{GridShape(half)};

    if (d == 2) {
        for (int i = 0; i < half[0]; ++i)
            for (int j = 0; j < half[1]; ++j)
                out(i, j) = 0.25 * (f(2 * i, 2 * j) + f(2 * i, 2 * j + 1) +
                                    f(2 * i + 1, 2 * j) + f(2 * i + 1, 2 * j + 1));
        return out;
    }
    for (int i = 0; i < half[0]; ++i)
        for (int j = 0; j < half[1]; ++j)
            for (int k = 0; k < half[2]; ++k) {
                double acc = 0.0;
                for (int di = 0; di <= 1; ++di)
                    for (int dj = 0; dj <= 1; ++dj)
                        for (int dk = 0; dk <= 1; ++dk)
                            acc += f(2 * i + di, 2 * j + dj, 2 * k + dk);
                out(i, j, k) = acc / 8.0;
            }
    return out;
}

ScalarField upsample2(const ScalarField& f) {
    const auto& dims = f.shape().dims;
    const int d = f.shape().rank();
    std::vector<int> dbl(dims.size());
    for (std::size_t a = 0; a < dims.size(); ++a) dbl[a] = dims[a] * 2;
    ScalarField out{GridShape(dbl)};

    // align corners: output j maps to input j*(n-1)/(2n-1)
    auto src = [&](int j, int n) { return static_cast<double>(j) * (n - 1) / (2 * n - 1); };

    if (d == 2) {
        for (int i = 0; i < dbl[0]; ++i)
            for (int j = 0; j < dbl[1]; ++j) {
                std::array<double, 2> p{src(i, dims[0]), src(j, dims[1])};
                out(i, j) = sample_linear(f, p);
            }
        return out;
    }
    for (int i = 0; i < dbl[0]; ++i)
        for (int j = 0; j < dbl[1]; ++j)
            for (int k = 0; k < dbl[2]; ++k) {
                std::array<double, 3> p{src(i, dims[0]), src(j, dims[1]), src(k, dims[2])};
                out(i, j, k) = sample_linear(f, p);
            }
    return out;
}

}  // namespace dfreg
