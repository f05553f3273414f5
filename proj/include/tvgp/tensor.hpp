#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tvgp {

/// Dense order-M tensor of 64-bit floats.
///
/// Storage convention: one flat row-major buffer in which the LAST mode
/// index varies fastest, i.e. the element (i_1, ..., i_M) lives at offset
/// i_M + D_M * (i_{M-1} + D_{M-1} * (...)). Modes are numbered 1..M as is
/// conventional in multilinear algebra; element indices are 0-based.
/// An order-0 tensor is a scalar: empty dims, length-1 buffer.
///
/// Values are immutable-by-convention after construction in library code;
/// all free operations below return fresh tensors.
class Tensor {
public:
    /// Order-0 zero scalar.
    Tensor() : dims_(), data_(1, 0.0) {}

    /// Zero tensor with the given dims. Every dim must be positive.
    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_size(dims_), 0.0) {}

    Tensor(std::vector<std::size_t> dims, std::vector<double> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (data_.size() != checked_size(dims_)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match dims product " +
                                        std::to_string(checked_size(dims_)));
        }
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor vector(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor filled(std::vector<std::size_t> dims, double v) {
        Tensor t(std::move(dims));
        for (double& x : t.data_) x = v;
        return t;
    }

    std::size_t order() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    /// Extent of a mode, 1-based: dim(1) is D_1.
    std::size_t dim(std::size_t mode) const {
        check_mode(mode);
        return dims_[mode - 1];
    }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    /// Unchecked flat access in storage (row-major) order.
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// Bounds-checked element access; indices are 0-based.
    double at(std::span<const std::size_t> idx) const { return data_[flat_index(idx)]; }
    double& at(std::span<const std::size_t> idx) { return data_[flat_index(idx)]; }
    double at(std::initializer_list<std::size_t> idx) const {
        return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }
    double& at(std::initializer_list<std::size_t> idx) {
        return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }

    /// Row-major offset of a multi-index; throws on rank or range violation.
    std::size_t flat_index(std::span<const std::size_t> idx) const {
        if (idx.size() != dims_.size()) {
            throw std::out_of_range("Tensor: index of rank " + std::to_string(idx.size()) +
                                    " against order-" + std::to_string(dims_.size()) + " tensor");
        }
        std::size_t off = 0;
        for (std::size_t m = 0; m < dims_.size(); ++m) {
            if (idx[m] >= dims_[m]) {
                throw std::out_of_range("Tensor: index " + std::to_string(idx[m]) +
                                        " out of range for mode extent " + std::to_string(dims_[m]));
            }
            off = off * dims_[m] + idx[m];
        }
        return off;
    }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

    void check_mode(std::size_t mode) const {
        if (mode < 1 || mode > dims_.size()) {
            throw std::invalid_argument("Tensor: mode " + std::to_string(mode) +
                                        " invalid for order-" + std::to_string(dims_.size()) +
                                        " tensor");
        }
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw std::invalid_argument("Tensor: zero-sized mode");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

/// Dense row-major matrix of 64-bit floats.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
        if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: zero extent");
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: zero extent");
        if (data_.size() != rows * cols) {
            throw std::invalid_argument("Matrix: data length does not match rows*cols");
        }
    }

    /// Build from rows, e.g. Matrix::from_rows({{1,2},{3,4}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        if (r == 0) throw std::invalid_argument("Matrix: no rows");
        std::size_t c = rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw std::invalid_argument("Matrix: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    double at(std::size_t r, std::size_t c) const {
        check_index(r, c);
        return (*this)(r, c);
    }
    double& at(std::size_t r, std::size_t c) {
        check_index(r, c);
        return (*this)(r, c);
    }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

private:
    void check_index(std::size_t r, std::size_t c) const {
        if (r >= rows_ || c >= cols_) {
            throw std::out_of_range("Matrix: index (" + std::to_string(r) + "," +
                                    std::to_string(c) + ") out of range for " +
                                    std::to_string(rows_) + "x" + std::to_string(cols_));
        }
    }

    std::size_t rows_, cols_;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner extents " + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw std::invalid_argument("matvec: extent mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

/// Mode-m unfolding (matricization). The result has D_m rows; its columns
/// enumerate the remaining modes in increasing mode order with the last of
/// them varying fastest, matching the tensor's own row-major convention.
/// fold() below is the exact inverse.
inline Matrix unfold(const Tensor& t, std::size_t mode) {
    t.check_mode(mode);
    const auto& dims = t.dims();
    const std::size_t m = mode - 1;
    const std::size_t n_rows = dims[m];
    const std::size_t n_cols = t.size() / n_rows;
    Matrix out(n_rows, n_cols);

    // row-major strides of the input
    std::vector<std::size_t> stride(dims.size(), 1);
    for (std::size_t j = dims.size(); j-- > 1;) stride[j - 1] = stride[j] * dims[j];

    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t col = 0; col < n_cols; ++col) {
        // decode col into the remaining modes, last varying fastest
        std::size_t rem = col;
        for (std::size_t j = dims.size(); j-- > 0;) {
            if (j == m) continue;
            idx[j] = rem % dims[j];
            rem /= dims[j];
        }
        std::size_t base = 0;
        for (std::size_t j = 0; j < dims.size(); ++j)
            if (j != m) base += idx[j] * stride[j];
        for (std::size_t r = 0; r < n_rows; ++r) out(r, col) = t[base + r * stride[m]];
    }
    return out;
}

/// Inverse of unfold(): rebuilds a tensor with the given dims from its
/// mode-m unfolding.
inline Tensor fold(const Matrix& mat, std::size_t mode, const std::vector<std::size_t>& dims) {
    Tensor t(dims);
    t.check_mode(mode);
    const std::size_t m = mode - 1;
    if (mat.rows() != dims[m] || mat.cols() != t.size() / dims[m]) {
        throw std::invalid_argument("fold: matrix " + std::to_string(mat.rows()) + "x" +
                                    std::to_string(mat.cols()) + " does not match dims");
    }

    std::vector<std::size_t> stride(dims.size(), 1);
    for (std::size_t j = dims.size(); j-- > 1;) stride[j - 1] = stride[j] * dims[j];

    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t col = 0; col < mat.cols(); ++col) {
        std::size_t rem = col;
        for (std::size_t j = dims.size(); j-- > 0;) {
            if (j == m) continue;
            idx[j] = rem % dims[j];
            rem /= dims[j];
        }
        std::size_t base = 0;
        for (std::size_t j = 0; j < dims.size(); ++j)
            if (j != m) base += idx[j] * stride[j];
        for (std::size_t r = 0; r < mat.rows(); ++r) t[base + r * stride[m]] = mat(r, col);
    }
    return t;
}

/// Mode-m product t x_m a: contracts a.cols against mode m of t, so the
/// result replaces D_m by a.rows. Equals fold(a * unfold(t, m)).
inline Tensor mode_product(const Tensor& t, const Matrix& a, std::size_t mode) {
    t.check_mode(mode);
    if (a.cols() != t.dim(mode)) {
        throw std::invalid_argument("mode_product: matrix cols " + std::to_string(a.cols()) +
                                    " vs mode-" + std::to_string(mode) + " extent " +
                                    std::to_string(t.dim(mode)));
    }
    std::vector<std::size_t> out_dims = t.dims();
    out_dims[mode - 1] = a.rows();
    return fold(matmul(a, unfold(t, mode)), mode, out_dims);
}

/// Vectorization. The output ordering makes the FIRST mode index vary
/// fastest, which is exactly the ordering under which
///   vec(t x_1 A_1 ... x_M A_M) = (A_M kron ... kron A_1) vec(t)
/// holds with Kronecker factors in descending mode order. Note this is a
/// permutation of the tensor's own (last-fastest) storage order.
inline Tensor vec(const Tensor& t) {
    const auto& dims = t.dims();
    const std::size_t n = t.size();
    Tensor out({n});
    if (dims.empty()) {
        out[0] = t[0];
        return out;
    }
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t src = 0; src < n; ++src) {
        // src enumerates storage order (last index fastest); compute the
        // first-index-fastest rank of the same multi-index.
        std::size_t dst = 0;
        for (std::size_t j = dims.size(); j-- > 0;) dst = dst * dims[j] + idx[j];
        out[dst] = t[src];
        for (std::size_t j = dims.size(); j-- > 0;) {
            if (++idx[j] < dims[j]) break;
            idx[j] = 0;
        }
    }
    return out;
}

/// Inverse of vec(): rebuilds a tensor with the given dims.
inline Tensor unvec(const Tensor& v, const std::vector<std::size_t>& dims) {
    if (v.order() != 1) throw std::invalid_argument("unvec: input must be order-1");
    Tensor out(dims);
    if (v.size() != out.size()) throw std::invalid_argument("unvec: length does not match dims");
    if (dims.empty()) {
        out[0] = v[0];
        return out;
    }
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t dst = 0; dst < out.size(); ++dst) {
        std::size_t src = 0;
        for (std::size_t j = dims.size(); j-- > 0;) src = src * dims[j] + idx[j];
        out[dst] = v[src];
        for (std::size_t j = dims.size(); j-- > 0;) {
            if (++idx[j] < dims[j]) break;
            idx[j] = 0;
        }
    }
    return out;
}

/// Outer product of order-1 tensors: element (i_1,...,i_M) is the product
/// of the factor entries v_m[i_m].
inline Tensor outer(const std::vector<Tensor>& vectors) {
    if (vectors.empty()) throw std::invalid_argument("outer: empty factor list");
    std::vector<std::size_t> dims;
    dims.reserve(vectors.size());
    for (const Tensor& v : vectors) {
        if (v.order() != 1) throw std::invalid_argument("outer: factors must be order-1");
        dims.push_back(v.dim(1));
    }
    Tensor out(dims);
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t pos = 0; pos < out.size(); ++pos) {
        double p = 1.0;
        for (std::size_t j = 0; j < dims.size(); ++j) p *= vectors[j][idx[j]];
        out[pos] = p;
        for (std::size_t j = dims.size(); j-- > 0;) {
            if (++idx[j] < dims[j]) break;
            idx[j] = 0;
        }
    }
    return out;
}

/// Kronecker product, (a.rows*b.rows) x (a.cols*b.cols).
inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double aij = a(i, j);
            for (std::size_t r = 0; r < b.rows(); ++r)
                for (std::size_t c = 0; c < b.cols(); ++c)
                    out(i * b.rows() + r, j * b.cols() + c) = aij * b(r, c);
        }
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("dot: dims mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("add: dims mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("sub: dims mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= c;
    return r;
}

}  // namespace tvgp
