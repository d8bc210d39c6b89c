#include "aime/io/arrays.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace aime::io {

namespace {
constexpr char kMagic[8] = {'A', 'R', 'R', 'P', 'A', 'K', '0', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("array file: truncated");
    return v;
}
}  // namespace

std::size_t NamedArray::count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.values.size() != a.count())
            throw std::invalid_argument("array '" + a.name + "': dims/value mismatch");
        put<std::uint16_t>(os, static_cast<std::uint16_t>(a.name.size()));
        os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(a.dtype));
        put<std::uint8_t>(os, static_cast<std::uint8_t>(a.dims.size()));
        for (auto d : a.dims) put<std::uint32_t>(os, d);
        switch (a.dtype) {
            case Dtype::F32:
                for (double v : a.values) put<float>(os, static_cast<float>(v));
                break;
            case Dtype::F64:
                for (double v : a.values) put<double>(os, v);
                break;
            case Dtype::I64:
                for (double v : a.values) put<std::int64_t>(os, static_cast<std::int64_t>(v));
                break;
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedArray> read_arrays(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("array file: bad magic in " + path);
    auto n = get<std::uint32_t>(is);
    std::vector<NamedArray> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedArray a;
        auto name_len = get<std::uint16_t>(is);
        a.name.resize(name_len);
        is.read(a.name.data(), name_len);
        a.dtype = static_cast<Dtype>(get<std::uint8_t>(is));
        auto rank = get<std::uint8_t>(is);
        a.dims.resize(rank);
        for (auto& d : a.dims) d = get<std::uint32_t>(is);
        a.values.resize(a.count());
        switch (a.dtype) {
            case Dtype::F32:
                for (auto& v : a.values) v = static_cast<double>(get<float>(is));
                break;
            case Dtype::F64:
                for (auto& v : a.values) v = get<double>(is);
                break;
            case Dtype::I64:
                for (auto& v : a.values) v = static_cast<double>(get<std::int64_t>(is));
                break;
        }
        out.push_back(std::move(a));
    }
    return out;
}

NamedArray from_matrix(const std::string& name, const Eigen::MatrixXd& m, Dtype dtype) {
    NamedArray a;
    a.name = name;
    a.dtype = dtype;
    a.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.values.push_back(m(r, c));
    return a;
}

NamedArray from_matrix(const std::string& name, const Eigen::MatrixXf& m) {
    NamedArray a;
    a.name = name;
    a.dtype = Dtype::F32;
    a.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            a.values.push_back(static_cast<double>(m(r, c)));
    return a;
}

NamedArray from_vector(const std::string& name, const Eigen::VectorXf& v) {
    NamedArray a;
    a.name = name;
    a.dtype = Dtype::F32;
    a.dims = {static_cast<std::uint32_t>(v.size())};
    a.values.reserve(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.values.push_back(static_cast<double>(v(i)));
    return a;
}

Eigen::MatrixXd to_matrix(const NamedArray& a) {
    if (a.dims.size() != 2)
        throw std::runtime_error("array '" + a.name + "': expected rank 2");
    Eigen::MatrixXd m(a.dims[0], a.dims[1]);
    std::size_t k = 0;
    for (std::uint32_t r = 0; r < a.dims[0]; ++r)
        for (std::uint32_t c = 0; c < a.dims[1]; ++c) m(r, c) = a.values[k++];
    return m;
}

Eigen::MatrixXf to_matrix_f(const NamedArray& a) {
    return to_matrix(a).cast<float>();
}

Eigen::VectorXf to_vector_f(const NamedArray& a) {
    if (a.dims.size() != 1)
        throw std::runtime_error("array '" + a.name + "': expected rank 1");
    Eigen::VectorXf v(a.dims[0]);
    for (std::uint32_t i = 0; i < a.dims[0]; ++i)
        v(i) = static_cast<float>(a.values[i]);
    return v;
}

}  // namespace aime::io
