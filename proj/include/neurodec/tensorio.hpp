#pragma once

#include "neurodec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neurodec::io {

enum class Dtype { F32, F64 };

std::string dtype_tag(Dtype d);
Dtype parse_dtype(const std::string& tag);
std::size_t dtype_size(Dtype d);

/// One named tensor: row-major values plus shape. Values are held as doubles
/// in memory; the on-disk dtype decides the file encoding.
struct Tensor {
    std::vector<std::int64_t> shape;
    Dtype dtype = Dtype::F64;
    std::vector<double> values;

    std::int64_t numel() const;

    static Tensor from_matrix(const Matrix& m, Dtype d = Dtype::F64);
    Matrix as_matrix() const;  // requires 2-D shape
};

/// Directory container: manifest.json plus one little-endian raw binary file
/// per tensor. Round trips are bit-exact for f64 tensors.
class TensorContainer {
public:
    std::map<std::string, Tensor> tensors;

    void write(const std::filesystem::path& dir) const;
    static TensorContainer read(const std::filesystem::path& dir);

    const Tensor& at(const std::string& name) const;
};

/// Provenance record written next to every CLI output.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::uint64_t config_hash = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> input_paths;
    std::string version;
    double wall_time_s = 0.0;

    void write(const std::filesystem::path& dir) const;
};

std::uint64_t fnv1a_hash(const std::string& text);
std::string build_version();

/// Minimal CSV helpers shared by the tabular outputs.
void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file,
                                               std::vector<std::string>* header = nullptr);

}  // namespace neurodec::io
