#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace aime::io {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

/// One named tensor inside the container. Values are held as doubles in
/// memory regardless of the on-disk dtype (double holds every float and
/// every |int| < 2^53 exactly).
struct NamedArray {
    std::string name;
    Dtype dtype = Dtype::F64;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;  // row-major

    std::size_t count() const;
};

/// Self-describing little-endian container: magic, entry count, then per
/// entry name/dtype/rank/dims and raw row-major data.
void write_arrays(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(const std::string& path);

// Conversions between NamedArray and Eigen types (row-major serialisation).
NamedArray from_matrix(const std::string& name, const Eigen::MatrixXd& m,
                       Dtype dtype = Dtype::F64);
NamedArray from_matrix(const std::string& name, const Eigen::MatrixXf& m);
NamedArray from_vector(const std::string& name, const Eigen::VectorXf& v);
Eigen::MatrixXd to_matrix(const NamedArray& a);
Eigen::MatrixXf to_matrix_f(const NamedArray& a);
Eigen::VectorXf to_vector_f(const NamedArray& a);

}  // namespace aime::io
