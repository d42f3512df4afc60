#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace adlfusion {

std::string shape_string(const std::vector<std::size_t>& shape);

// Dense row-major float64 tensor.  Deliberately minimal: shape plus a flat
// buffer, no views, no strides.  Model code slices by raw offset where it
// needs per-frame matrices.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(std::vector<std::size_t> shape);
    DenseTensor(std::vector<std::size_t> shape, std::vector<double> values);

    static DenseTensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    // Checked multi-index access; throws DimensionError on rank or bounds
    // violations.  Convenience for tests and low-rate paths.
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

    // Same data, new shape; element count must be preserved.
    DenseTensor reshaped(std::vector<std::size_t> shape) const;

    void fill(double value);
    bool all_finite() const;

    bool operator==(const DenseTensor& other) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Throws NumericError naming `context` if any element is NaN or infinite.
void ensure_finite(const DenseTensor& t, const std::string& context);

// "TNSR" tensor file format: magic "TNSR", u32 little-endian rank, rank u64
// little-endian dims, float32 little-endian row-major payload.  Values pass
// through float32, so a write/read round trip is bit-exact at single
// precision.
void write_tnsr(std::ostream& out, const DenseTensor& t);
void write_tnsr(const std::filesystem::path& path, const DenseTensor& t);
DenseTensor read_tnsr(std::istream& in, const std::string& origin = "<stream>");
DenseTensor read_tnsr(const std::filesystem::path& path);

// A learnable tensor with its gradient accumulator and Adam state.
struct Parameter {
    std::string name;
    DenseTensor value;
    DenseTensor grad;
    DenseTensor adam_m;
    DenseTensor adam_v;
    std::size_t step_count = 0;

    Parameter() = default;
    Parameter(std::string name, std::vector<std::size_t> shape);

    void zero_grad() { grad.fill(0.0); }
    void reset_adam_state();
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const; // throws ConfigError
};

} // namespace adlfusion
