#pragma once

#include <string>

#include "dfreg/autodiff.hpp"
#include "dfreg/field.hpp"
#include "dfreg/network.hpp"

namespace dfreg {

/// Binary tensor container, bit-exact round trip:
///   magic "DFT1" | dtype u8 (0 = 32-bit float LE) | ndim u8 |
///   extents u64 LE each | payload row-major float32 LE.
void write_tensor_file(const std::string& path, const ad::Tensor& t);
ad::Tensor read_tensor_file(const std::string& path);

void write_scalar_field(const std::string& path, const ScalarField& f);
ScalarField read_scalar_field(const std::string& path);

/// Vector fields serialize with a leading component axis of extent d.
void write_vector_field(const std::string& path, const VectorField& v);
VectorField read_vector_field(const std::string& path);

/// Checkpoint directory: config.txt (full run configuration), manifest.txt
/// (one `name<TAB>file<TAB>shape` row per parameter) and one TensorFile per
/// parameter.
void save_checkpoint(const std::string& dir, const RegistrationModel& model, const std::string& config_text);
RegistrationModel load_checkpoint(const std::string& dir);
std::string checkpoint_config_text(const std::string& dir);

}  // namespace dfreg
