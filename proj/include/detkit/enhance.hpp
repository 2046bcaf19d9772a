#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "detkit/io.hpp"
#include "detkit/matrix.hpp"
#include "detkit/memory.hpp"
#include "detkit/rng.hpp"

namespace detkit {

/// Parameters of the feature-enhancement forward pass. Shapes, with F the
/// flattened input width (channel-major, then row-major spatial), D the
/// embedding width and C the number of foreground categories:
///   w_embed F x D, b_embed 1 x D, w_cls D x (C+1), b_cls 1 x (C+1),
///   w_q / w_k / w_v D x D, w_fuse 2D x D, b_fuse 1 x D.
/// attn_scale <= 0 means the default 1/sqrt(D/heads).
struct EnhanceParams {
  Matrix w_embed;
  Matrix b_embed;
  Matrix w_cls;
  Matrix b_cls;
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  Matrix w_fuse;
  Matrix b_fuse;
  double attn_scale = 0.0;
  int heads = 1;

  std::size_t flat_dim() const { return w_embed.rows; }
  std::size_t dim() const { return w_embed.cols; }
  std::size_t num_classes_with_background() const { return w_cls.cols; }

  double effective_attn_scale() const {
    if (attn_scale > 0.0) return attn_scale;
    return 1.0 / std::sqrt(static_cast<double>(dim()) / heads);
  }

  void validate() const {
    const std::size_t d = dim();
    auto expect = [&](const Matrix& m, std::size_t r, std::size_t c,
                      const char* name) {
      if (m.rows != r || m.cols != c)
        throw std::invalid_argument(
            std::string("EnhanceParams: ") + name + " is " + std::to_string(m.rows) +
            "x" + std::to_string(m.cols) + ", expected " + std::to_string(r) + "x" +
            std::to_string(c));
    };
    expect(b_embed, 1, d, "b_embed");
    expect(w_cls, d, w_cls.cols, "w_cls");
    expect(b_cls, 1, w_cls.cols, "b_cls");
    expect(w_q, d, d, "w_q");
    expect(w_k, d, d, "w_k");
    expect(w_v, d, d, "w_v");
    expect(w_fuse, 2 * d, d, "w_fuse");
    expect(b_fuse, 1, d, "b_fuse");
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
      throw std::invalid_argument("EnhanceParams: heads must divide D");
  }
};

namespace detail {

inline Matrix add_row_bias(Matrix m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) row[j] += bias(0, j);
  }
  return m;
}

}  // namespace detail

/// Embedding of flattened box features: ReLU(r_hat * w_embed + b_embed).
inline Matrix embed(const Matrix& r_hat, const EnhanceParams& p) {
  if (r_hat.cols != p.w_embed.rows)
    throw std::invalid_argument("embed: input width " + std::to_string(r_hat.cols) +
                                " != w_embed rows " + std::to_string(p.w_embed.rows));
  Matrix r = detail::add_row_bias(matmul(r_hat, p.w_embed), p.b_embed);
  for (double& v : r.data) v = std::max(v, 0.0);
  return r;
}

/// Linear classifier over embedded features, softmax-normalized per row so
/// each row is a probability vector over the C+1 categories.
inline Matrix classify(const Matrix& r, const EnhanceParams& p) {
  if (r.cols != p.w_cls.rows)
    throw std::invalid_argument("classify: feature width != w_cls rows");
  return softmax_rows(detail::add_row_bias(matmul(r, p.w_cls), p.b_cls));
}

/// Scaled dot-product cross-attention with r as queries and f_c as keys and
/// values, attending across the candidate-box axis. With heads > 1 the
/// projected width splits evenly per head and outputs concatenate back to D.
inline Matrix cross_attention(const Matrix& r, const Matrix& f_c,
                              const EnhanceParams& p) {
  if (!r.same_shape(f_c))
    throw std::invalid_argument("cross_attention: r and f_c shapes differ");
  if (r.cols != p.dim())
    throw std::invalid_argument("cross_attention: feature width != D");
  const std::size_t n = r.rows;
  Matrix out(n, r.cols);
  if (n == 0) return out;

  const Matrix q = matmul(r, p.w_q);
  const Matrix k = matmul(f_c, p.w_k);
  const Matrix v = matmul(f_c, p.w_v);
  const double scale = p.effective_attn_scale();
  const std::size_t head_dim = r.cols / static_cast<std::size_t>(p.heads);

  for (int h = 0; h < p.heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * head_dim;
    Matrix scores(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < head_dim; ++d)
          s += q(i, off + d) * k(j, off + d);
        scores(i, j) = s * scale;
      }
    const Matrix attn = softmax_rows(scores);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double a = attn(i, j);
        for (std::size_t d = 0; d < head_dim; ++d)
          out(i, off + d) += a * v(j, off + d);
      }
  }
  return out;
}

/// Fusion back to the original width: [r | attended] * w_fuse + b_fuse.
inline Matrix fuse(const Matrix& r, const Matrix& attended, const EnhanceParams& p) {
  if (!r.same_shape(attended))
    throw std::invalid_argument("fuse: r and attended shapes differ");
  if (2 * r.cols != p.w_fuse.rows)
    throw std::invalid_argument("fuse: concatenated width != w_fuse rows");
  Matrix cat(r.rows, 2 * r.cols);
  for (std::size_t i = 0; i < r.rows; ++i) {
    auto dst = cat.row(i);
    const auto a = r.row(i);
    const auto b = attended.row(i);
    std::copy(a.begin(), a.end(), dst.begin());
    std::copy(b.begin(), b.end(), dst.begin() + static_cast<std::ptrdiff_t>(r.cols));
  }
  return detail::add_row_bias(matmul(cat, p.w_fuse), p.b_fuse);
}

struct EnhanceOutputs {
  Matrix r;      // N x D embedded features
  Matrix p;      // N x (C+1) class probabilities
  Matrix f_c;    // N x D category-aware features
  Matrix r_enh;  // N x D enhanced features
};

/// Full forward pass: embed, classify, mix memory rows by the class
/// probabilities, cross-attend, fuse. All intermediates are returned.
inline EnhanceOutputs enhance_pipeline(const Matrix& r_hat, const CategoryMemory& mem,
                                       const EnhanceParams& params) {
  params.validate();
  if (params.num_classes_with_background() != mem.rows.rows)
    throw std::invalid_argument(
        "enhance_pipeline: classifier width != memory row count");
  if (mem.rows.cols != params.dim())
    throw std::invalid_argument("enhance_pipeline: memory dim != embedding dim");
  EnhanceOutputs out;
  out.r = embed(r_hat, params);
  out.p = classify(out.r, params);
  out.f_c = generate_category_feature(out.p, mem);
  out.r_enh = fuse(out.r, cross_attention(out.r, out.f_c, params), params);
  return out;
}

/// Seeded random parameter set (entries normal with 1/sqrt(fan-in) scale),
/// for fixtures and simulation; real parameter sets come from files.
inline EnhanceParams init_enhance_params(std::size_t flat_dim, std::size_t d,
                                         std::size_t num_categories,
                                         std::uint64_t seed) {
  Rng rng(seed, 7);
  auto randmat = [&](std::size_t r, std::size_t c, std::size_t fan_in) {
    Matrix m(r, c);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.data) v = rng.normal(0.0, scale);
    return m;
  };
  EnhanceParams p;
  p.w_embed = randmat(flat_dim, d, flat_dim);
  p.b_embed = randmat(1, d, d);
  p.w_cls = randmat(d, num_categories + 1, d);
  p.b_cls = randmat(1, num_categories + 1, d);
  p.w_q = randmat(d, d, d);
  p.w_k = randmat(d, d, d);
  p.w_v = randmat(d, d, d);
  p.w_fuse = randmat(2 * d, d, 2 * d);
  p.b_fuse = randmat(1, d, d);
  return p;
}

inline void save_enhance_params(const EnhanceParams& p, const std::string& path) {
  std::map<std::string, Matrix> m;
  m["w_embed"] = p.w_embed;
  m["b_embed"] = p.b_embed;
  m["w_cls"] = p.w_cls;
  m["b_cls"] = p.b_cls;
  m["w_q"] = p.w_q;
  m["w_k"] = p.w_k;
  m["w_v"] = p.w_v;
  m["w_fuse"] = p.w_fuse;
  m["b_fuse"] = p.b_fuse;
  m["attn_scale"] = Matrix(1, 1, {p.attn_scale});
  m["heads"] = Matrix(1, 1, {static_cast<double>(p.heads)});
  save_matrices(m, path);
}

inline EnhanceParams load_enhance_params(const std::string& path) {
  const auto m = load_matrices(path);
  EnhanceParams p;
  p.w_embed = require_matrix(m, "w_embed", path);
  p.b_embed = require_matrix(m, "b_embed", path);
  p.w_cls = require_matrix(m, "w_cls", path);
  p.b_cls = require_matrix(m, "b_cls", path);
  p.w_q = require_matrix(m, "w_q", path);
  p.w_k = require_matrix(m, "w_k", path);
  p.w_v = require_matrix(m, "w_v", path);
  p.w_fuse = require_matrix(m, "w_fuse", path);
  p.b_fuse = require_matrix(m, "b_fuse", path);
  if (auto it = m.find("attn_scale"); it != m.end()) p.attn_scale = it->second(0, 0);
  if (auto it = m.find("heads"); it != m.end())
    p.heads = static_cast<int>(it->second(0, 0));
  p.validate();
  return p;
}

}  // namespace detkit
