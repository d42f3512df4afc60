#include "adlfusion/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "adlfusion/errors.hpp"

namespace adlfusion {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d)
            throw DimensionError("tensor shape overflows size_t: " + shape_string(shape));
        n *= d;
    }
    return n;
}

} // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != data_.size())
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
}

DenseTensor DenseTensor::full(std::vector<std::size_t> shape, double value) {
    DenseTensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::size_t DenseTensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(shape_));
    return shape_[axis];
}

namespace {

std::size_t flat_index(const std::vector<std::size_t>& shape,
                       std::initializer_list<std::size_t> idx) {
    if (idx.size() != shape.size())
        throw DimensionError("index rank " + std::to_string(idx.size()) +
                             " does not match tensor rank " + std::to_string(shape.size()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape[axis])
            throw DimensionError("index " + std::to_string(i) + " out of bounds on axis " +
                                 std::to_string(axis) + " for shape " + shape_string(shape));
        flat = flat * shape[axis] + i;
        ++axis;
    }
    return flat;
}

} // namespace

double& DenseTensor::at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(shape_, idx)];
}

double DenseTensor::at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(shape_, idx)];
}

DenseTensor DenseTensor::reshaped(std::vector<std::size_t> shape) const {
    DenseTensor out;
    out.shape_ = std::move(shape);
    if (checked_numel(out.shape_) != data_.size())
        throw DimensionError("cannot reshape " + shape_string(shape_) + " (" +
                             std::to_string(data_.size()) + " values) to " +
                             shape_string(out.shape_));
    out.data_ = data_;
    return out;
}

void DenseTensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool DenseTensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void ensure_finite(const DenseTensor& t, const std::string& context) {
    if (!t.all_finite())
        throw NumericError("non-finite value in " + context);
}

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& origin) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError("truncated tensor header in " + origin);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& origin) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw DataError("truncated tensor header in " + origin);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

} // namespace

void write_tnsr(std::ostream& out, const DenseTensor& t) {
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    static_assert(sizeof(float) == 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    if (!out) throw DataError("tensor write failed");
}

void write_tnsr(const std::filesystem::path& path, const DenseTensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    write_tnsr(out, t);
    out.flush();
    if (!out) throw DataError("tensor write failed: " + path.string());
}

DenseTensor read_tnsr(std::istream& in, const std::string& origin) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad tensor magic in " + origin + " (expected \"TNSR\")");
    std::uint32_t rank = get_u32(in, origin);
    if (rank > 16) throw DataError("implausible tensor rank " + std::to_string(rank) + " in " + origin);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
        std::uint64_t v = get_u64(in, origin);
        d = static_cast<std::size_t>(v);
        if (d != 0 && numel > (std::size_t(1) << 40) / d)
            throw DataError("tensor too large in " + origin);
        numel *= d;
    }
    DenseTensor t(shape);
    for (std::size_t i = 0; i < numel; ++i) {
        std::uint32_t bits = get_u32(in, origin);
        float f;
        std::memcpy(&f, &bits, 4);
        t[i] = static_cast<double>(f);
    }
    return t;
}

DenseTensor read_tnsr(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open tensor file " + path.string());
    return read_tnsr(in, path.string());
}

Parameter::Parameter(std::string name_, std::vector<std::size_t> shape)
    : name(std::move(name_)),
      value(shape),
      grad(shape),
      adam_m(shape),
      adam_v(std::move(shape)) {}

void Parameter::reset_adam_state() {
    adam_m.fill(0.0);
    adam_v.fill(0.0);
    step_count = 0;
}

void AdamConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

} // namespace adlfusion
