#include "dfreg/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace dfreg {

namespace {

namespace fs = std::filesystem;

std::vector<unsigned char> to_bytes(const ScalarField& f) {
    double mn = f[0], mx = f[0];
    for (double v : f.data()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    double range = mx - mn;
    if (range < 1e-12) range = 1.0;
    std::vector<unsigned char> out(f.data().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<unsigned char>(std::lround(255.0 * (f.data()[i] - mn) / range));
    return out;
}

ScalarField mid_slice(const ScalarField& f, int axis) {
    const auto& dims = f.shape().dims;
    int mid = dims[static_cast<std::size_t>(axis)] / 2;
    std::vector<int> keep;
    for (int a = 0; a < 3; ++a)
        if (a != axis) keep.push_back(dims[static_cast<std::size_t>(a)]);
    ScalarField out{GridShape(keep)};
    std::array<int, 3> idx{};
    idx[static_cast<std::size_t>(axis)] = mid;
    int rows = keep[0], cols = keep[1];
    int ra = axis == 0 ? 1 : 0;
    int ca = axis == 2 ? 1 : 2;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            idx[static_cast<std::size_t>(ra)] = r;
            idx[static_cast<std::size_t>(ca)] = c;
            out(r, c) = f.at(std::span<const int>(idx.data(), 3));
        }
    return out;
}

}  // namespace

void write_pgm(const std::string& path, const ScalarField& f) {
    if (f.shape().rank() != 2) throw std::invalid_argument("write_pgm: 2-D fields only");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    const int h = f.shape().dims[0], w = f.shape().dims[1];
    os << "P5\n" << w << " " << h << "\n255\n";
    auto bytes = to_bytes(f);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

void write_grid_ppm(const std::string& path, const ScalarField& bg, const DeformationField& phi,
                    int line_spacing) {
    if (bg.shape().rank() != 2 || phi.shape.rank() != 2)
        throw std::invalid_argument("write_grid_ppm: 2-D fields only");
    const int h = bg.shape().dims[0], w = bg.shape().dims[1];
    auto gray = to_bytes(bg);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) rgb[static_cast<std::size_t>(3 * i)] = rgb[static_cast<std::size_t>(3 * i + 1)] = rgb[static_cast<std::size_t>(3 * i + 2)] = gray[static_cast<std::size_t>(i)];

    auto plot = [&](double py, double px) {
        int iy = static_cast<int>(std::lround(py));
        int ix = static_cast<int>(std::lround(px));
        if (iy < 0 || iy >= h || ix < 0 || ix >= w) return;
        std::size_t o = static_cast<std::size_t>(3 * (iy * w + ix));
        rgb[o] = 255;
        rgb[o + 1] = 40;
        rgb[o + 2] = 40;
    };
    auto deformed = [&](double y, double x, double& py, double& px) {
        std::array<double, 2> p{y, x};
        py = y + sample_linear(phi.displacement.comp(0), p);
        px = x + sample_linear(phi.displacement.comp(1), p);
    };

    const double step = 0.2;
    for (int y = 0; y < h; y += line_spacing)
        for (double x = 0.0; x <= w - 1 + 1e-9; x += step) {
            double py, px;
            deformed(y, x, py, px);
            plot(py, px);
        }
    for (int x = 0; x < w; x += line_spacing)
        for (double y = 0.0; y <= h - 1 + 1e-9; y += step) {
            double py, px;
            deformed(y, x, py, px);
            plot(py, px);
        }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_grid_ppm: cannot open " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw std::runtime_error("write_grid_ppm: write failed for " + path);
}

namespace {

DeformationField slice_field(const DeformationField& phi, int axis) {
    // mid-slice of the two in-plane displacement components
    const auto& dims = phi.shape.dims;
    int mid = dims[static_cast<std::size_t>(axis)] / 2;
    std::vector<int> keep_axes;
    for (int a = 0; a < 3; ++a)
        if (a != axis) keep_axes.push_back(a);
    GridShape g({dims[static_cast<std::size_t>(keep_axes[0])], dims[static_cast<std::size_t>(keep_axes[1])]});
    DeformationField out(g);
    std::array<int, 3> idx{};
    idx[static_cast<std::size_t>(axis)] = mid;
    for (int r = 0; r < g.dims[0]; ++r)
        for (int c = 0; c < g.dims[1]; ++c) {
            idx[static_cast<std::size_t>(keep_axes[0])] = r;
            idx[static_cast<std::size_t>(keep_axes[1])] = c;
            std::span<const int> is(idx.data(), 3);
            out.displacement.comp(0)(r, c) = phi.displacement.comp(keep_axes[0]).at(is);
            out.displacement.comp(1)(r, c) = phi.displacement.comp(keep_axes[1]).at(is);
        }
    return out;
}

void render2d(const RegistrationResult& res, const ScalarField& moving, const ScalarField& fixed,
              const fs::path& dir, const std::string& suffix) {
    write_pgm((dir / ("moving" + suffix + ".pgm")).string(), moving);
    write_pgm((dir / ("fixed" + suffix + ".pgm")).string(), fixed);

    if (res.phi.shape.rank() == 2) {
        write_pgm((dir / ("warped_forward" + suffix + ".pgm")).string(), res.warped_xy);
        write_pgm((dir / ("warped_backward" + suffix + ".pgm")).string(), res.warped_yx);
        write_pgm((dir / ("jacobian_forward" + suffix + ".pgm")).string(), jacobian_det(res.phi).det_field);
        write_pgm((dir / ("jacobian_backward" + suffix + ".pgm")).string(), jacobian_det(res.phi_inv).det_field);
        write_grid_ppm((dir / ("grid_forward" + suffix + ".ppm")).string(), res.warped_xy, res.phi);
        write_grid_ppm((dir / ("grid_backward" + suffix + ".ppm")).string(), res.warped_yx, res.phi_inv);
    }
}

}  // namespace

void render(const RegistrationResult& result, const ScalarField& moving, const ScalarField& fixed,
            const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    if (result.phi.shape.rank() == 2) {
        render2d(result, moving, fixed, dir, "");
        return;
    }
    // 3-D: mid-slice per axis
    for (int axis = 0; axis < 3; ++axis) {
        std::string suffix = "_axis" + std::to_string(axis);
        write_pgm((dir / ("moving" + suffix + ".pgm")).string(), mid_slice(moving, axis));
        write_pgm((dir / ("fixed" + suffix + ".pgm")).string(), mid_slice(fixed, axis));
        write_pgm((dir / ("warped_forward" + suffix + ".pgm")).string(), mid_slice(result.warped_xy, axis));
        write_pgm((dir / ("warped_backward" + suffix + ".pgm")).string(), mid_slice(result.warped_yx, axis));
        write_pgm((dir / ("jacobian_forward" + suffix + ".pgm")).string(),
                  mid_slice(jacobian_det(result.phi).det_field, axis));
        write_grid_ppm((dir / ("grid_forward" + suffix + ".ppm")).string(),
                       mid_slice(result.warped_xy, axis), slice_field(result.phi, axis));
    }
}

}  // namespace dfreg
