#pragma once

#include <string>

#include "dfreg/pipeline.hpp"

namespace dfreg {

/// Emit registration renders into a directory: P5 graymaps for the images,
/// warped results and Jacobian-determinant heat maps, P6 pixmaps for the
/// deformed-grid overlays (every 4th grid line). 3-D results render the
/// mid-slice per axis.
void render(const RegistrationResult& result, const ScalarField& moving, const ScalarField& fixed,
            const std::string& out_dir);

// low-level writers, exposed for tests
void write_pgm(const std::string& path, const ScalarField& slice2d);
void write_grid_ppm(const std::string& path, const ScalarField& background2d, const DeformationField& phi2d,
                    int line_spacing = 4);

}  // namespace dfreg
