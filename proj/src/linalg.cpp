#include "spn/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "spn/error.hpp"

namespace spn {

namespace {

void require_same_size(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": size mismatch (" << a.size() << " vs " << b.size() << ")";
    throw DimensionError(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Vector

Vector Vector::segment(std::size_t offset, std::size_t count) const {
  if (offset + count > data_.size()) throw DimensionError("Vector::segment out of range");
  return Vector(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(offset),
                                    data_.begin() + static_cast<std::ptrdiff_t>(offset + count)));
}

void Vector::set_segment(std::size_t offset, const Vector& v) {
  if (offset + v.size() > data_.size()) throw DimensionError("Vector::set_segment out of range");
  std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(offset));
}

Vector& Vector::operator+=(const Vector& other) {
  require_same_size(*this, other, "Vector::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_size(*this, other, "Vector::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double a) noexcept {
  for (double& d : data_) d *= a;
  return *this;
}

Vector operator+(Vector a, const Vector& b) { return a += b; }
Vector operator-(Vector a, const Vector& b) { return a -= b; }
Vector operator-(Vector a) { return a *= -1.0; }
Vector operator*(double s, Vector a) { return a *= s; }

double dot(const Vector& a, const Vector& b) {
  require_same_size(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& a) {
  // Scaled accumulation keeps tiny/huge entries from under/overflowing.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : a) {
    if (v == 0.0) continue;
    const double av = std::abs(v);
    if (scale < av) {
      ssq = 1.0 + ssq * (scale / av) * (scale / av);
      scale = av;
    } else {
      ssq += (av / scale) * (av / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

void axpy(double a, const Vector& x, Vector& y) {
  require_same_size(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

Vector hadamard(const Vector& a, const Vector& b) {
  require_same_size(a, b, "hadamard");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Vector concat(std::initializer_list<const Vector*> parts) {
  std::size_t n = 0;
  for (const Vector* p : parts) n += p->size();
  Vector out(n);
  std::size_t off = 0;
  for (const Vector* p : parts) {
    out.set_segment(off, *p);
    off += p->size();
  }
  return out;
}

bool all_finite(const Vector& v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

// ---------------------------------------------------------------------------
// CsrMatrix

CsrMatrix::CsrMatrix(std::size_t nrows, std::size_t ncols, std::vector<std::size_t> row_ptr,
                     std::vector<std::size_t> col_idx, std::vector<double> values)
    : nrows_(nrows),
      ncols_(ncols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (row_ptr_.size() != nrows_ + 1) throw DimensionError("CsrMatrix: row_ptr length != nrows+1");
  if (col_idx_.size() != values_.size()) throw DimensionError("CsrMatrix: col_idx/values length");
  if (row_ptr_.front() != 0 || row_ptr_.back() != values_.size()) {
    throw DimensionError("CsrMatrix: row_ptr must start at 0 and end at nnz");
  }
  for (std::size_t i = 0; i < nrows_; ++i) {
    if (row_ptr_[i] > row_ptr_[i + 1]) throw DimensionError("CsrMatrix: row_ptr decreasing");
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      if (col_idx_[k] >= ncols_) throw DimensionError("CsrMatrix: column index out of range");
      if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1]) {
        throw DimensionError("CsrMatrix: column indices not strictly increasing");
      }
    }
  }
}

CsrMatrix CsrMatrix::from_triplets(std::size_t nrows, std::size_t ncols,
                                   std::vector<Triplet> triplets, bool keep_zeros) {
  std::stable_sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::size_t> row_ptr(nrows + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  cols.reserve(triplets.size());
  vals.reserve(triplets.size());
  std::size_t k = 0;
  while (k < triplets.size()) {
    const auto [r, c, v0] = triplets[k];
    if (r >= nrows || c >= ncols) throw DimensionError("from_triplets: index out of range");
    double v = v0;
    std::size_t j = k + 1;
    while (j < triplets.size() && triplets[j].row == r && triplets[j].col == c) {
      v += triplets[j].value;
      ++j;
    }
    if (v != 0.0 || keep_zeros) {
      cols.push_back(c);
      vals.push_back(v);
      ++row_ptr[r + 1];
    }
    k = j;
  }
  std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
  return CsrMatrix(nrows, ncols, std::move(row_ptr), std::move(cols), std::move(vals));
}

CsrMatrix CsrMatrix::identity(std::size_t n) {
  std::vector<std::size_t> row_ptr(n + 1);
  std::iota(row_ptr.begin(), row_ptr.end(), std::size_t{0});
  std::vector<std::size_t> cols(n);
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  return CsrMatrix(n, n, std::move(row_ptr), std::move(cols), std::vector<double>(n, 1.0));
}

CsrMatrix CsrMatrix::from_dense(std::size_t nrows, std::size_t ncols,
                                std::span<const double> row_major) {
  if (row_major.size() != nrows * ncols) throw DimensionError("from_dense: size mismatch");
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = 0; j < ncols; ++j)
      if (row_major[i * ncols + j] != 0.0) t.push_back({i, j, row_major[i * ncols + j]});
  return from_triplets(nrows, ncols, std::move(t));
}

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= nrows_ || j >= ncols_) throw DimensionError("CsrMatrix::at out of range");
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
  const auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

std::vector<double> CsrMatrix::to_dense() const {
  std::vector<double> d(nrows_ * ncols_, 0.0);
  for (std::size_t i = 0; i < nrows_; ++i)
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d[i * ncols_ + col_idx_[k]] = values_[k];
  return d;
}

double CsrMatrix::frobenius_norm() const { return norm2(Vector(values_)); }

CsrMatrix CsrMatrix::transpose() const {
  std::vector<std::size_t> row_ptr(ncols_ + 1, 0);
  for (std::size_t c : col_idx_) ++row_ptr[c + 1];
  std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
  std::vector<std::size_t> next(row_ptr.begin(), row_ptr.end() - 1);
  std::vector<std::size_t> cols(nnz());
  std::vector<double> vals(nnz());
  // Walking rows in order keeps the transposed column indices sorted.
  for (std::size_t i = 0; i < nrows_; ++i) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      const std::size_t dst = next[col_idx_[k]]++;
      cols[dst] = i;
      vals[dst] = values_[k];
    }
  }
  return CsrMatrix(ncols_, nrows_, std::move(row_ptr), std::move(cols), std::move(vals));
}

// ---------------------------------------------------------------------------
// Products

Vector csr_matvec(const CsrMatrix& a, const Vector& v) {
  if (v.size() != a.cols()) {
    throw DimensionError("csr_matvec: vector length " + std::to_string(v.size()) +
                         " != matrix cols " + std::to_string(a.cols()));
  }
  Vector out(a.rows());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  const auto& va = a.values();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) s += va[k] * v[ci[k]];
    out[i] = s;
  }
  return out;
}

Vector csr_matvec_transpose(const CsrMatrix& a, const Vector& v) {
  if (v.size() != a.rows()) {
    throw DimensionError("csr_matvec_transpose: vector length " + std::to_string(v.size()) +
                         " != matrix rows " + std::to_string(a.rows()));
  }
  Vector out(a.cols());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  const auto& va = a.values();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) out[ci[k]] += va[k] * vi;
  }
  return out;
}

CsrMatrix csr_multiply(const CsrMatrix& a, const CsrMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("csr_multiply: inner dimensions differ");
  std::vector<std::size_t> row_ptr(a.rows() + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  std::vector<double> acc(b.cols(), 0.0);
  std::vector<char> used(b.cols(), 0);
  std::vector<std::size_t> pattern;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    pattern.clear();
    for (std::size_t ka = a.row_ptr()[i]; ka < a.row_ptr()[i + 1]; ++ka) {
      const std::size_t j = a.col_idx()[ka];
      const double av = a.values()[ka];
      for (std::size_t kb = b.row_ptr()[j]; kb < b.row_ptr()[j + 1]; ++kb) {
        const std::size_t c = b.col_idx()[kb];
        if (!used[c]) {
          used[c] = 1;
          pattern.push_back(c);
        }
        acc[c] += av * b.values()[kb];
      }
    }
    std::sort(pattern.begin(), pattern.end());
    for (std::size_t c : pattern) {
      if (acc[c] != 0.0) {
        cols.push_back(c);
        vals.push_back(acc[c]);
      }
      acc[c] = 0.0;
      used[c] = 0;
    }
    row_ptr[i + 1] = cols.size();
  }
  return CsrMatrix(a.rows(), b.cols(), std::move(row_ptr), std::move(cols), std::move(vals));
}

CsrMatrix weighted_gram(const CsrMatrix& a, const Vector& w) {
  if (w.size() != a.rows()) throw DimensionError("weighted_gram: weight length != rows");
  const CsrMatrix at = a.transpose();
  // Scale the columns of A^T (rows of A) by w, then multiply.
  std::vector<double> scaled = at.values();
  for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] *= w[at.col_idx()[k]];
  const CsrMatrix atw(at.rows(), at.cols(), at.row_ptr(), at.col_idx(), std::move(scaled));
  return csr_multiply(atw, a);
}

Vector weighted_gram_diagonal(const CsrMatrix& a, const Vector& w) {
  if (w.size() != a.rows()) throw DimensionError("weighted_gram_diagonal: weight length != rows");
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k) {
      const double v = a.values()[k];
      out[a.col_idx()[k]] += w[i] * v * v;
    }
  }
  return out;
}

CsrMatrix csr_add(const CsrMatrix& a, const CsrMatrix& b, double beta) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("csr_add: shape mismatch");
  std::vector<std::size_t> row_ptr(a.rows() + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::size_t ka = a.row_ptr()[i];
    std::size_t kb = b.row_ptr()[i];
    const std::size_t ea = a.row_ptr()[i + 1];
    const std::size_t eb = b.row_ptr()[i + 1];
    while (ka < ea || kb < eb) {
      const std::size_t ca = ka < ea ? a.col_idx()[ka] : a.cols();
      const std::size_t cb = kb < eb ? b.col_idx()[kb] : b.cols();
      if (ca < cb) {
        cols.push_back(ca);
        vals.push_back(a.values()[ka++]);
      } else if (cb < ca) {
        cols.push_back(cb);
        vals.push_back(beta * b.values()[kb++]);
      } else {
        cols.push_back(ca);
        vals.push_back(a.values()[ka++] + beta * b.values()[kb++]);
      }
    }
    row_ptr[i + 1] = cols.size();
  }
  return CsrMatrix(a.rows(), a.cols(), std::move(row_ptr), std::move(cols), std::move(vals));
}

// ---------------------------------------------------------------------------
// Structured builders

CsrMatrix kron(const CsrMatrix& a, const CsrMatrix& b) {
  const std::size_t nr = a.rows() * b.rows();
  const std::size_t nc = a.cols() * b.cols();
  std::vector<std::size_t> row_ptr(nr + 1, 0);
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  cols.reserve(a.nnz() * b.nnz());
  vals.reserve(a.nnz() * b.nnz());
  for (std::size_t ia = 0; ia < a.rows(); ++ia) {
    for (std::size_t ib = 0; ib < b.rows(); ++ib) {
      // Column blocks ordered by a's columns, inner order by b's: sorted.
      for (std::size_t ka = a.row_ptr()[ia]; ka < a.row_ptr()[ia + 1]; ++ka) {
        for (std::size_t kb = b.row_ptr()[ib]; kb < b.row_ptr()[ib + 1]; ++kb) {
          cols.push_back(a.col_idx()[ka] * b.cols() + b.col_idx()[kb]);
          vals.push_back(a.values()[ka] * b.values()[kb]);
        }
      }
      row_ptr[ia * b.rows() + ib + 1] = cols.size();
    }
  }
  return CsrMatrix(nr, nc, std::move(row_ptr), std::move(cols), std::move(vals));
}

CsrMatrix block_diag(std::span<const CsrMatrix> blocks) {
  std::size_t nr = 0;
  std::size_t nc = 0;
  for (const auto& b : blocks) {
    nr += b.rows();
    nc += b.cols();
  }
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  std::size_t col_off = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.rows(); ++i) {
      for (std::size_t k = b.row_ptr()[i]; k < b.row_ptr()[i + 1]; ++k) {
        cols.push_back(b.col_idx()[k] + col_off);
        vals.push_back(b.values()[k]);
      }
      row_ptr.push_back(cols.size());
    }
    col_off += b.cols();
  }
  return CsrMatrix(nr, nc, std::move(row_ptr), std::move(cols), std::move(vals));
}

CsrMatrix vstack(std::span<const CsrMatrix> blocks) {
  if (blocks.empty()) return CsrMatrix();
  const std::size_t nc = blocks.front().cols();
  std::size_t nr = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  for (const auto& b : blocks) {
    if (b.cols() != nc) throw DimensionError("vstack: column counts differ");
    nr += b.rows();
    const std::size_t base = cols.size();
    cols.insert(cols.end(), b.col_idx().begin(), b.col_idx().end());
    vals.insert(vals.end(), b.values().begin(), b.values().end());
    for (std::size_t i = 1; i <= b.rows(); ++i) row_ptr.push_back(base + b.row_ptr()[i]);
  }
  return CsrMatrix(nr, nc, std::move(row_ptr), std::move(cols), std::move(vals));
}

CsrMatrix diff_matrix_1d(std::size_t n) {
  if (n < 2) throw DimensionError("diff_matrix_1d: need N >= 2, got " + std::to_string(n));
  std::vector<CsrMatrix::Triplet> t;
  t.reserve(2 * (n - 1));
  for (std::size_t i = 0; i + 1 < n; ++i) {
    t.push_back({i, i, 1.0});
    t.push_back({i, i + 1, -1.0});
  }
  return CsrMatrix::from_triplets(n - 1, n, std::move(t));
}

CsrMatrix phase_step_diff_matrix(std::size_t npix, std::size_t nangles) {
  std::vector<CsrMatrix::Triplet> t;
  for (std::size_t i = 0; i < npix; ++i) {
    t.push_back({i, i, -1.0});
    if (i + 1 < npix) t.push_back({i, i + 1, 1.0});
  }
  const CsrMatrix d1 = CsrMatrix::from_triplets(npix, npix, std::move(t));
  return kron(CsrMatrix::identity(nangles), d1);
}

// ---------------------------------------------------------------------------
// Conjugate gradients

namespace {

CgResult conjugate_gradients(const LinearOperator& op, const Vector& rhs, const Vector* inv_diag,
                             double rel_tol, int max_iter, const char* name) {
  const std::string who(name);
  if (op.rows() != op.cols()) throw DimensionError(who + ": operator must be square");
  if (rhs.size() != op.rows()) throw DimensionError(who + ": rhs length mismatch");
  if (inv_diag != nullptr && inv_diag->size() != rhs.size()) {
    throw DimensionError(who + ": preconditioner length mismatch");
  }
  if (!(rel_tol > 0.0)) throw NumericalError(who + ": rel_tol must be positive");

  CgResult res;
  res.x = Vector(rhs.size());
  const double rhs_norm = norm2(rhs);
  if (!std::isfinite(rhs_norm)) throw NumericalError(who + ": non-finite right-hand side");
  if (rhs_norm == 0.0) {
    res.converged = true;
    return res;
  }

  Vector r = rhs;
  Vector z = inv_diag != nullptr ? hadamard(*inv_diag, r) : r;
  Vector d = z;
  double rz = dot(r, z);
  double r_norm = rhs_norm;
  const double target = rel_tol * rhs_norm;
  while (res.iterations < max_iter) {
    const Vector ad = op.apply(d);
    const double dad = dot(d, ad);
    if (!std::isfinite(dad)) throw NumericalError(who + ": non-finite value in iteration");
    if (dad <= 0.0) {
      throw NumericalError(who + ": operator not positive definite (d'Ad = " +
                           std::to_string(dad) + ")");
    }
    const double step = rz / dad;
    axpy(step, d, res.x);
    axpy(-step, ad, r);
    ++res.iterations;
    r_norm = norm2(r);
    if (!std::isfinite(r_norm)) throw NumericalError(who + ": non-finite residual");
    if (r_norm <= target) {
      res.converged = true;
      break;
    }
    if (inv_diag != nullptr) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = (*inv_diag)[i] * r[i];
    } else {
      z = r;
    }
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = z[i] + beta * d[i];
  }
  res.relative_residual = r_norm / rhs_norm;
  return res;
}

}  // namespace

CgResult cg_solve(const LinearOperator& op, const Vector& rhs, double rel_tol, int max_iter) {
  return conjugate_gradients(op, rhs, nullptr, rel_tol, max_iter, "cg_solve");
}

CgResult pcg_solve(const LinearOperator& op, const Vector& rhs, const Vector& inv_diag,
                   double rel_tol, int max_iter) {
  return conjugate_gradients(op, rhs, &inv_diag, rel_tol, max_iter, "pcg_solve");
}

// ---------------------------------------------------------------------------
// Binary I/O

namespace {

constexpr char kCsrMagic[4] = {'C', 'S', 'R', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), 8);
}

template <typename T>
T get_le(std::istream& in) {
  static_assert(sizeof(T) == 8);
  std::uint64_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), 8);
  if (!in) throw Error("read_csr: truncated input");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  T value;
  std::memcpy(&value, &bits, 8);
  return value;
}

}  // namespace

void write_csr(std::ostream& out, const CsrMatrix& a) {
  out.write(kCsrMagic, 4);
  put_le<std::uint64_t>(out, a.rows());
  put_le<std::uint64_t>(out, a.cols());
  put_le<std::uint64_t>(out, a.nnz());
  for (std::size_t v : a.row_ptr()) put_le<std::uint64_t>(out, v);
  for (std::size_t v : a.col_idx()) put_le<std::uint64_t>(out, v);
  for (double v : a.values()) put_le<double>(out, v);
  if (!out) throw Error("write_csr: stream failure");
}

CsrMatrix read_csr(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCsrMagic, 4) != 0) throw Error("read_csr: bad magic");
  const auto nrows = get_le<std::uint64_t>(in);
  const auto ncols = get_le<std::uint64_t>(in);
  const auto nnz = get_le<std::uint64_t>(in);
  std::vector<std::size_t> row_ptr(nrows + 1);
  for (auto& v : row_ptr) v = get_le<std::uint64_t>(in);
  std::vector<std::size_t> cols(nnz);
  for (auto& v : cols) v = get_le<std::uint64_t>(in);
  std::vector<double> vals(nnz);
  for (auto& v : vals) v = get_le<double>(in);
  return CsrMatrix(nrows, ncols, std::move(row_ptr), std::move(cols), std::move(vals));
}

void write_csr_file(const std::string& path, const CsrMatrix& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_csr(out, a);
}

CsrMatrix read_csr_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_csr(in);
}

}  // namespace spn
