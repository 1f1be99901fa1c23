// Dense row-major float64 arrays and the handful of kernels the attention
// code needs: batched matmul, last-dim softmax, threshold fills, slicing.
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atnt {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Row-major array of doubles with 1 to 4 dimensions. Copies are deep.
class DenseArray {
 public:
  DenseArray() = default;

  explicit DenseArray(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_numel(shape_), fill);
  }

  DenseArray(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("DenseArray: shape " + shape_str(shape_) + " needs " +
                           std::to_string(shape_numel(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static DenseArray identity(std::size_t n) {
    DenseArray out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t dim) const { return shape_.at(dim); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  template <typename... I>
  double& operator()(I... idx) {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }
  template <typename... I>
  double operator()(I... idx) const {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }

  /// Contiguous view of the trailing-dim row that starts at `leading` indices.
  template <typename... I>
  std::span<double> row(I... leading) {
    return {data_.data() + offset(static_cast<std::size_t>(leading)..., std::size_t{0}),
            shape_.back()};
  }
  template <typename... I>
  std::span<const double> row(I... leading) const {
    return {data_.data() + offset(static_cast<std::size_t>(leading)..., std::size_t{0}),
            shape_.back()};
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  DenseArray reshaped(Shape shape) const { return DenseArray(std::move(shape), data_); }

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw DimensionError("DenseArray: rank must be 1..4, got shape " + shape_str(shape_));
    }
  }

  template <typename... I>
  std::size_t offset(I... idx) const {
    constexpr std::size_t n = sizeof...(I);
    assert(n == shape_.size());
    const std::size_t ix[n] = {idx...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < n; ++d) {
      assert(ix[d] < shape_[d]);
      off = off * shape_[d] + ix[d];
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Batched product over the trailing two dims. `b` may be rank 2 and is then
/// shared across all of `a`'s leading batch entries.
inline DenseArray matmul(const DenseArray& a, const DenseArray& b) {
  const auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs && a.rank() != b.rank()) throw mismatch();
  if (!shared_rhs && !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
    throw mismatch();

  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  if (b.shape()[b.rank() - 2] != k) throw mismatch();

  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  DenseArray out(out_shape);

  const std::size_t batch = a.size() / (m * k);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = pa + t * m * k;
    const double* B = shared_rhs ? pb : pb + t * k * n;
    double* C = po + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
      }
    }
  }
  return out;
}

/// Swaps the trailing two dims.
inline DenseArray transpose_last2(const DenseArray& a) {
  if (a.rank() < 2) throw DimensionError("transpose_last2: rank < 2 " + shape_str(a.shape()));
  Shape s = a.shape();
  const std::size_t r = s[s.size() - 2], c = s.back();
  std::swap(s[s.size() - 2], s.back());
  DenseArray out(s);
  const std::size_t batch = a.size() / (r * c);
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out.data()[t * r * c + j * r + i] = a.data()[t * r * c + i * c + j];
  return out;
}

/// Softmax over every last-dim slice, with max subtraction. -inf entries get
/// weight 0; a slice that is entirely -inf has no distribution.
inline DenseArray softmax_lastdim(const DenseArray& a) {
  DenseArray out = a;
  const std::size_t w = a.shape().back();
  if (w == 0) throw DimensionError("softmax_lastdim: empty last dim");
  auto d = out.data();
  for (std::size_t off = 0; off < d.size(); off += w) {
    auto row = d.subspan(off, w);
    const double mx = *std::max_element(row.begin(), row.end());
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DomainError("softmax_lastdim: slice is entirely -inf");
    }
    if (!std::isfinite(mx)) throw DomainError("softmax_lastdim: non-finite input");
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

enum class Cmp { kGreaterEqual, kLess };

/// Elementwise keep-predicate `x >= bound` or `x < bound`.
struct Threshold {
  Cmp cmp;
  double bound;

  bool keeps(double x) const { return cmp == Cmp::kGreaterEqual ? x >= bound : x < bound; }
};

/// Elements failing `keep` become `value`; the rest are untouched.
inline DenseArray masked_fill(const DenseArray& a, Threshold keep, double value) {
  DenseArray out = a;
  for (double& v : out.data())
    if (!keep.keeps(v)) v = value;
  return out;
}

/// `if_true` where `pred` holds, `if_false` elsewhere.
inline DenseArray select(const DenseArray& a, Threshold pred, double if_true, double if_false) {
  DenseArray out = a;
  for (double& v : out.data()) v = pred.keeps(v) ? if_true : if_false;
  return out;
}

/// Half-open range along one dim. Negative offsets count back from the
/// extent; `SliceRange::all()` covers the whole dim.
struct SliceRange {
  static constexpr std::ptrdiff_t kEnd = std::numeric_limits<std::ptrdiff_t>::max();

  std::ptrdiff_t start = 0;
  std::ptrdiff_t end = kEnd;

  static constexpr SliceRange all() { return {0, kEnd}; }
};

namespace detail {

struct ResolvedRange {
  std::size_t start;
  std::size_t end;
};

inline std::vector<ResolvedRange> resolve_ranges(const Shape& shape,
                                                 std::span<const SliceRange> ranges) {
  if (ranges.size() > shape.size()) {
    throw DimensionError("slice: " + std::to_string(ranges.size()) + " ranges for shape " +
                         shape_str(shape));
  }
  std::vector<ResolvedRange> out;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    const auto ext = static_cast<std::ptrdiff_t>(shape[d]);
    SliceRange r = d < ranges.size() ? ranges[d] : SliceRange::all();
    std::ptrdiff_t s = r.start < 0 ? r.start + ext : r.start;
    std::ptrdiff_t e = r.end == SliceRange::kEnd ? ext : (r.end < 0 ? r.end + ext : r.end);
    if (s < 0 || s > e || e > ext) {
      throw IndexError("slice: range [" + std::to_string(r.start) + ", " +
                       (r.end == SliceRange::kEnd ? std::string("end") : std::to_string(r.end)) +
                       ") out of bounds on dim " + std::to_string(d) + " with extent " +
                       std::to_string(ext));
    }
    out.push_back({static_cast<std::size_t>(s), static_cast<std::size_t>(e)});
  }
  return out;
}

// Visits every (source offset, slice offset) pair of the resolved window.
template <typename F>
void for_each_in_window(const Shape& shape, const std::vector<ResolvedRange>& rr, F&& f) {
  const std::size_t rank = shape.size();
  Shape win(rank);
  for (std::size_t d = 0; d < rank; ++d) win[d] = rr[d].end - rr[d].start;
  if (shape_numel(win) == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t flat = 0;
  while (true) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) off = off * shape[d] + rr[d].start + idx[d];
    f(off, flat++);
    std::size_t d = rank;
    while (d > 0) {
      --d;
      if (++idx[d] < win[d]) break;
      idx[d] = 0;
      if (d == 0) return;
    }
  }
}

}  // namespace detail

/// Copy of the window selected by `ranges` (missing trailing ranges mean all).
inline DenseArray slice(const DenseArray& a, std::span<const SliceRange> ranges) {
  const auto rr = detail::resolve_ranges(a.shape(), ranges);
  Shape win;
  for (const auto& r : rr) win.push_back(r.end - r.start);
  DenseArray out(win);
  detail::for_each_in_window(a.shape(), rr, [&](std::size_t src, std::size_t dst) {
    out.data()[dst] = a.data()[src];
  });
  return out;
}

inline DenseArray slice(const DenseArray& a, std::initializer_list<SliceRange> ranges) {
  return slice(a, std::span<const SliceRange>(ranges.begin(), ranges.size()));
}

/// Writes `src` into the window of `a` selected by `ranges`.
inline void assign_slice(DenseArray& a, std::span<const SliceRange> ranges, const DenseArray& src) {
  const auto rr = detail::resolve_ranges(a.shape(), ranges);
  Shape win;
  for (const auto& r : rr) win.push_back(r.end - r.start);
  if (win != src.shape()) {
    throw DimensionError("assign_slice: window " + shape_str(win) + " vs source " +
                         shape_str(src.shape()));
  }
  detail::for_each_in_window(a.shape(), rr, [&](std::size_t dst, std::size_t s) {
    a.data()[dst] = src.data()[s];
  });
}

inline void assign_slice(DenseArray& a, std::initializer_list<SliceRange> ranges,
                         const DenseArray& src) {
  assign_slice(a, std::span<const SliceRange>(ranges.begin(), ranges.size()), src);
}

/// Sum over the last dim; rank-1 input yields shape [1].
inline DenseArray sum_lastdim(const DenseArray& a) {
  const std::size_t w = a.shape().back();
  Shape s(a.shape().begin(), a.shape().end() - 1);
  if (s.empty()) s.push_back(1);
  DenseArray out(s);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) acc += a.data()[r * w + j];
    out.data()[r] = acc;
  }
  return out;
}

/// Repeats each value of `a` `width` times along a new trailing dim.
inline DenseArray broadcast_lastdim(const DenseArray& a, std::size_t width) {
  Shape s = a.shape();
  if (s.size() == 4) throw DimensionError("broadcast_lastdim: rank-4 input");
  s.push_back(width);
  DenseArray out(s);
  for (std::size_t r = 0; r < a.size(); ++r)
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(r * width), width, a.data()[r]);
  return out;
}

namespace detail {
template <typename Op>
DenseArray zip(const DenseArray& a, const DenseArray& b, Op op, const char* name) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  DenseArray out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = op(a.data()[i], b.data()[i]);
  return out;
}
}  // namespace detail

inline DenseArray operator+(const DenseArray& a, const DenseArray& b) {
  return detail::zip(a, b, std::plus<>(), "add");
}
inline DenseArray operator-(const DenseArray& a, const DenseArray& b) {
  return detail::zip(a, b, std::minus<>(), "sub");
}
inline DenseArray hadamard(const DenseArray& a, const DenseArray& b) {
  return detail::zip(a, b, std::multiplies<>(), "hadamard");
}
inline DenseArray operator/(const DenseArray& a, const DenseArray& b) {
  return detail::zip(a, b, std::divides<>(), "div");
}
inline DenseArray operator*(const DenseArray& a, double s) {
  DenseArray out = a;
  for (double& v : out.data()) v *= s;
  return out;
}
inline DenseArray operator*(double s, const DenseArray& a) { return a * s; }

inline double max_abs_diff(const DenseArray& a, const DenseArray& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace atnt
