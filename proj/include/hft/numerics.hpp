// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <vector>

namespace hft {

/**
 * Dense row-major matrix of doubles. All attention math in the project runs
 * on this type; the reference path is 64-bit throughout.
 */
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws ShapeError unless data.size() == rows * cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    std::size_t size() const { return m_data.size(); }
    bool empty() const { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    std::span<double> data() { return m_data; }
    std::span<const double> data() const { return m_data; }

    /// Rows [first, first + count).
    Matrix row_block(std::size_t first, std::size_t count) const;
    /// Columns [first, first + count).
    Matrix col_block(std::size_t first, std::size_t count) const;
    /// Overwrites columns starting at `first` with `src`.
    void set_col_block(std::size_t first, const Matrix& src);

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// Exact dense product; ShapeError when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
/// Stacks matrices with equal column counts on top of each other.
Matrix vstack(std::span<const Matrix> parts);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

/**
 * SplitMix64 generator with a Box-Muller normal transform.
 *
 * Uniform stream: state += 0x9E3779B97F4A7C15, then the SplitMix64 finalizer
 * (xor-shift 30, * 0xBF58476D1CE4E5B9, xor-shift 27, * 0x94D049BB133111EB,
 * xor-shift 31). uniform() takes the top 53 bits times 2^-53, giving [0, 1).
 *
 * Normals come in pairs: u1 = 1 - uniform(), u2 = uniform(),
 * r = sqrt(-2 ln u1), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2). z0 is
 * returned first and z1 is held for the next call.
 */
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : m_state(seed) {}

    std::uint64_t next_u64();
    double uniform();
    double normal();
    /// Uniform integer in [0, n). Uses the top bits of one draw (n must be > 0).
    std::size_t uniform_index(std::size_t n);

private:
    std::uint64_t m_state;
    double m_spare = 0.0;
    bool m_has_spare = false;
};

/// 1 x n row of standard normals; n == 0 yields an empty matrix.
Matrix gaussian_sample(SeededRng& rng, std::size_t n);
Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols);

/// Shape plus f32 payload, the in-memory form of an HFT1 record.
struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

/// "HFT1", u32 rank, rank x u32 dims, then f32 payload, all little-endian.
std::vector<std::byte> encode_tensor(std::span<const std::uint32_t> shape, std::span<const float> data);
/**
 * Parses one record at the front of `bytes`. When `consumed` is null the
 * record must span the whole buffer; otherwise trailing bytes are allowed and
 * the record length is reported through it.
 */
Tensor decode_tensor(std::span<const std::byte> bytes, std::size_t* consumed = nullptr);

void write_tensor(const std::filesystem::path& path, std::span<const std::uint32_t> shape,
                  std::span<const float> data);
Tensor read_tensor(const std::filesystem::path& path);

Tensor to_tensor(const Matrix& m);
/// Rank-2 tensors map directly; rank-1 becomes a single row.
Matrix to_matrix(const Tensor& t);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace hft
