// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/numerics.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "hft/error.hpp"

namespace hft {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    require<ShapeError>(m_data.size() == rows * cols, "matrix data length ", m_data.size(), " != ", rows, "x",
                        cols);
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        require<ShapeError>(row.size() == c, "ragged rows in Matrix::from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_block(std::size_t first, std::size_t count) const {
    require<ShapeError>(first + count <= m_rows, "row block [", first, ", ", first + count, ") out of ", m_rows);
    Matrix out(count, m_cols);
    std::copy_n(m_data.begin() + static_cast<std::ptrdiff_t>(first * m_cols), count * m_cols, out.m_data.begin());
    return out;
}

Matrix Matrix::col_block(std::size_t first, std::size_t count) const {
    require<ShapeError>(first + count <= m_cols, "col block [", first, ", ", first + count, ") out of ", m_cols);
    Matrix out(m_rows, count);
    for (std::size_t r = 0; r < m_rows; ++r) {
        std::copy_n(m_data.begin() + static_cast<std::ptrdiff_t>(r * m_cols + first), count, out.row(r).begin());
    }
    return out;
}

void Matrix::set_col_block(std::size_t first, const Matrix& src) {
    require<ShapeError>(src.m_rows == m_rows && first + src.m_cols <= m_cols, "set_col_block shape mismatch");
    for (std::size_t r = 0; r < m_rows; ++r) {
        std::copy(src.row(r).begin(), src.row(r).end(), row(r).begin() + static_cast<std::ptrdiff_t>(first));
    }
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require<ShapeError>(m_rows == other.m_rows && m_cols == other.m_cols, "elementwise add shape mismatch");
    for (std::size_t i = 0; i < m_data.size(); ++i) {
        m_data[i] += other.m_data[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require<ShapeError>(m_rows == other.m_rows && m_cols == other.m_cols, "elementwise sub shape mismatch");
    for (std::size_t i = 0; i < m_data.size(); ++i) {
        m_data[i] -= other.m_data[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : m_data) {
        v *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    require<ShapeError>(a.cols() == b.rows(), "matmul: ", a.rows(), "x", a.cols(), " times ", b.rows(), "x",
                        b.cols());
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* __restrict dst = po + i * n;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = pa[i * a.cols() + k];
            const double* __restrict src = pb + k * n;
            for (std::size_t j = 0; j < n; ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    require<ShapeError>(a.cols() == b.cols(), "matmul_transposed: inner dims ", a.cols(), " vs ", b.cols());
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto br = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) {
                acc += ar[k] * br[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) {
        return {};
    }
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require<ShapeError>(p.cols() == cols, "vstack: column count ", p.cols(), " != ", cols);
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) {
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    return Matrix(rows, cols, std::move(data));
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        auto dst = out.row(r);
        if (src.empty()) {
            continue;
        }
        const double mx = *std::max_element(src.begin(), src.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = std::exp(src[c] - mx);
            sum += dst[c];
        }
        for (double& v : dst) {
            v /= sum;
        }
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data()) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require<ShapeError>(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff shape mismatch: ", a.rows(), "x",
                        a.cols(), " vs ", b.rows(), "x", b.cols());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t SeededRng::next_u64() {
    m_state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = m_state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::normal() {
    if (m_has_spare) {
        m_has_spare = false;
        return m_spare;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    m_spare = r * std::sin(theta);
    m_has_spare = true;
    return r * std::cos(theta);
}

std::size_t SeededRng::uniform_index(std::size_t n) {
    require<ContractError>(n > 0, "uniform_index requires n > 0");
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

Matrix gaussian_sample(SeededRng& rng, std::size_t n) {
    if (n == 0) {
        return {};
    }
    return gaussian_matrix(rng, 1, n);
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
    Matrix out(rows, cols);
    for (double& v : out.data()) {
        v = rng.normal();
    }
    return out;
}

namespace {

constexpr std::array<char, 4> kMagic{'H', 'F', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
    }
}

std::uint32_t get_u32(std::span<const std::byte> bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

std::size_t shape_product(std::span<const std::uint32_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        require<FormatError>(d == 0 || n <= std::numeric_limits<std::size_t>::max() / d, "tensor shape overflows");
        n *= d;
    }
    return n;
}

}  // namespace

std::size_t Tensor::element_count() const { return shape_product(shape); }

std::vector<std::byte> encode_tensor(std::span<const std::uint32_t> shape, std::span<const float> data) {
    require<ShapeError>(shape.size() <= kMaxRank, "tensor rank ", shape.size(), " exceeds ", kMaxRank);
    require<ShapeError>(shape_product(shape) == data.size(), "tensor shape product ", shape_product(shape),
                        " != payload length ", data.size());
    std::vector<std::byte> out;
    out.reserve(8 + 4 * shape.size() + 4 * data.size());
    for (char c : kMagic) {
        out.push_back(static_cast<std::byte>(c));
    }
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) {
        put_u32(out, d);
    }
    for (float f : data) {
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Tensor decode_tensor(std::span<const std::byte> bytes, std::size_t* consumed) {
    require<FormatError>(bytes.size() >= 8, "tensor record shorter than its header");
    for (std::size_t i = 0; i < kMagic.size(); ++i) {
        require<FormatError>(bytes[i] == static_cast<std::byte>(kMagic[i]), "bad tensor magic");
    }
    const std::uint32_t rank = get_u32(bytes, 4);
    require<FormatError>(rank <= kMaxRank, "tensor rank ", rank, " exceeds ", kMaxRank);
    const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
    require<FormatError>(bytes.size() >= header, "tensor header truncated");

    Tensor t;
    t.shape.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.shape[i] = get_u32(bytes, 8 + 4 * static_cast<std::size_t>(i));
    }
    const std::size_t count = shape_product(t.shape);
    const std::size_t available = (bytes.size() - header) / 4;
    require<LengthError>(available >= count, "tensor payload has ", available, " values, header claims ", count);
    const std::size_t total = header + 4 * count;
    if (consumed == nullptr) {
        require<LengthError>(bytes.size() == total, "tensor payload has trailing bytes: ", bytes.size() - total);
    } else {
        *consumed = total;
    }
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        t.data[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
    }
    return t;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require<IoError>(static_cast<bool>(in), "cannot open ", path.string(), " for reading");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    require<IoError>(static_cast<bool>(in), "short read from ", path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require<IoError>(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require<IoError>(static_cast<bool>(out), "write to ", path.string(), " failed");
}

void write_tensor(const std::filesystem::path& path, std::span<const std::uint32_t> shape,
                  std::span<const float> data) {
    write_file_bytes(path, encode_tensor(shape, data));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

Tensor to_tensor(const Matrix& m) {
    Tensor t;
    t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.reserve(m.size());
    for (double v : m.data()) {
        t.data.push_back(static_cast<float>(v));
    }
    return t;
}

Matrix to_matrix(const Tensor& t) {
    require<ShapeError>(t.shape.size() == 1 || t.shape.size() == 2, "to_matrix needs rank 1 or 2, got ",
                        t.shape.size());
    const std::size_t rows = t.shape.size() == 2 ? t.shape[0] : 1;
    const std::size_t cols = t.shape.back();
    std::vector<double> data(t.data.begin(), t.data.end());
    return Matrix(rows, cols, std::move(data));
}

}  // namespace hft
