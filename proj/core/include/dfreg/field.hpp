#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dfreg {

/// Regular rectangular grid, 2-D or 3-D, extents in voxels.
/// All coordinates throughout the library are in voxel units, row-major
/// storage with the last axis fastest.
struct GridShape {
    std::vector<int> dims;

    GridShape() = default;
    explicit GridShape(std::vector<int> extents);

    int rank() const { return static_cast<int>(dims.size()); }
    std::int64_t voxels() const;
    bool operator==(const GridShape&) const = default;
    std::string str() const;  // "64x64"
};

class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(GridShape shape, double fill = 0.0);
    ScalarField(GridShape shape, std::vector<double> values);

    const GridShape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    double at(std::span<const int> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }
    double& at(std::span<const int> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }

    double operator()(int i, int j) const;
    double& operator()(int i, int j);
    double operator()(int i, int j, int k) const;
    double& operator()(int i, int j, int k);

    std::int64_t offset(std::span<const int> idx) const;

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

private:
    GridShape shape_;
    std::vector<double> data_;
};

class VectorField {
public:
    VectorField() = default;
    explicit VectorField(GridShape shape);
    VectorField(GridShape shape, std::vector<ScalarField> components);

    const GridShape& shape() const { return shape_; }
    int rank() const { return shape_.rank(); }

    ScalarField& comp(int axis) { return comps_[static_cast<std::size_t>(axis)]; }
    const ScalarField& comp(int axis) const { return comps_[static_cast<std::size_t>(axis)]; }

private:
    GridShape shape_;
    std::vector<ScalarField> comps_;
};

/// Multilinear interpolation at continuous voxel coordinate p (size = rank).
/// Out-of-grid coordinates clamp to the boundary; exact at integer coordinates.
/// Throws on non-finite coordinates ("invalid coordinate").
double sample_linear(const ScalarField& f, std::span<const double> p);

/// Nearest-voxel lookup with the same clamp-to-edge rule. Used for label maps.
double sample_nearest(const ScalarField& f, std::span<const double> p);

/// Separable Gaussian convolution, kernel truncated at radius ceil(3*sigma)
/// and normalized to unit sum per axis. Values outside the grid contribute 0
/// (zero padding), so the output decays toward the domain boundary.
ScalarField gaussian_smooth(const ScalarField& f, double sigma);
VectorField gaussian_smooth(const VectorField& f, double sigma);

/// Block-average over non-overlapping 2^d blocks. Every extent must be even
/// ("odd extent" otherwise).
ScalarField downsample2(const ScalarField& f);

/// Multilinear interpolation to doubled extents, align-corners convention
/// (corner voxels map to corner voxels).
ScalarField upsample2(const ScalarField& f);

}  // namespace dfreg
