#include "embalign/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "embalign/errors.hpp"

namespace embalign::ops {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using BackwardFn = std::function<void(Node&)>;

// Wraps a freshly computed value; attaches the tape entry only when needed.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<std::shared_ptr<Node>> parents,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

// Accumulation target for parent i, or an empty span when that parent is constant.
std::span<Real> parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.grad_buffer();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<Real> out(m * n);
  MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    CMapMat g(self.grad.data(), m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      CMapMat bv(self.parents[1]->value.data(), k, n);
      MapMat(ga.data(), m, k).noalias() += g * bv.transpose();
    }
    if (auto gb = parent_grad(self, 1); !gb.empty()) {
      CMapMat av(self.parents[0]->value.data(), m, k);
      MapMat(gb.data(), k, n).noalias() += av.transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Real> out(m * n);
  MapMat(out.data(), n, m) = CMapMat(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    auto ga = parent_grad(self, 0);
    MapMat(ga.data(), m, n) += CMapMat(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto g = parent_grad(self, p); !g.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a.node()}, [factor](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not fit rows of " +
                         shape_string(a.shape()));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return make_result(a.shape(), std::move(out), {a.node(), bias.node()}, [m, n](Node& self) {
    if (auto g = parent_grad(self, 0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (auto g = parent_grad(self, 1); !g.empty()) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<Real> out(m * n);
  auto xv = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    const Real* row = xv.data() + r * n;
    Real* o = out.data() + r * n;
    Real mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      double e = std::exp(static_cast<double>(row[c]) - mx);
      o[c] = static_cast<Real>(e);
      total += e;
    }
    for (std::size_t c = 0; c < n; ++c) o[c] = static_cast<Real>(o[c] / total);
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [m, n](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t r = 0; r < m; ++r) {
      const Real* y = self.value.data() + r * n;
      const Real* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += static_cast<double>(y[c]) * gy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += static_cast<Real>(y[c] * (gy[c] - dot));
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  std::vector<Real> out(m * d);
  // Normalized values and inverse std per row, kept for the reverse pass.
  auto xhat = std::make_shared<std::vector<Real>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::size_t r = 0; r < m; ++r) {
    const Real* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      Real h = static_cast<Real>((row[c] - mu) * is);
      (*xhat)[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                     [m, d, xhat, inv_std](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       auto gx = parent_grad(self, 0);
                       auto gg = parent_grad(self, 1);
                       auto gb = parent_grad(self, 2);
                       for (std::size_t r = 0; r < m; ++r) {
                         const Real* gy = self.grad.data() + r * d;
                         const Real* h = xhat->data() + r * d;
                         if (!gg.empty()) {
                           for (std::size_t c = 0; c < d; ++c) gg[c] += gy[c] * h[c];
                         }
                         if (!gb.empty()) {
                           for (std::size_t c = 0; c < d; ++c) gb[c] += gy[c];
                         }
                         if (gx.empty()) continue;
                         double mean_g = 0.0, mean_gh = 0.0;
                         for (std::size_t c = 0; c < d; ++c) {
                           double gh = static_cast<double>(gy[c]) * gv[c];
                           mean_g += gh;
                           mean_gh += gh * h[c];
                         }
                         mean_g /= static_cast<double>(d);
                         mean_gh /= static_cast<double>(d);
                         double is = (*inv_std)[r];
                         for (std::size_t c = 0; c < d; ++c) {
                           double gh = static_cast<double>(gy[c]) * gv[c];
                           gx[r * d + c] += static_cast<Real>(is * (gh - mean_g - h[c] * mean_gh));
                         }
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<Real> out(m * n);
  auto norms = std::make_shared<std::vector<double>>(m);
  auto xv = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < n; ++c) ss += static_cast<double>(xv[r * n + c]) * xv[r * n + c];
    double nrm = std::sqrt(ss);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) {
      throw DegenerateEmbeddingError("cannot normalize a zero or non-finite vector");
    }
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = static_cast<Real>(xv[r * n + c] / nrm);
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [m, n, norms](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t r = 0; r < m; ++r) {
      const Real* y = self.value.data() + r * n;
      const Real* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += static_cast<double>(y[c]) * gy[c];
      double inv = 1.0 / (*norms)[r];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += static_cast<Real>((gy[c] - y[c] * dot) * inv);
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (Real v : x.data()) total += v;
  return make_result({}, {static_cast<Real>(total)}, {x.node()}, [](Node& self) {
    auto g = parent_grad(self, 0);
    const Real gy = self.grad[0];
    for (auto& v : g) v += gy;
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double total = 0.0;
  for (Real v : x.data()) total += v;
  return make_result({}, {static_cast<Real>(total * inv)}, {x.node()}, [inv](Node& self) {
    auto g = parent_grad(self, 0);
    const Real gy = static_cast<Real>(self.grad[0] * inv);
    for (auto& v : g) v += gy;
  });
}

Tensor mean_rows(const Tensor& x) {
  require_matrix(x, "mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> acc(n, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) acc[c] += xv[r * n + c];
  }
  std::vector<Real> out(n);
  for (std::size_t c = 0; c < n; ++c) out[c] = static_cast<Real>(acc[c] / static_cast<double>(m));
  return make_result({1, n}, std::move(out), {x.node()}, [m, n](Node& self) {
    auto g = parent_grad(self, 0);
    const Real inv = 1.0 / static_cast<Real>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] * inv;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const std::size_t n = x.cols();
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(x.shape()));
  }
  auto xv = x.data();
  std::vector<Real> out(xv.begin() + begin * n, xv.begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {x.node()}, [begin, n](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<Real> out(m * w);
  auto xv = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xv.begin() + r * n + begin, w, out.begin() + r * w);
  }
  return make_result({m, w}, std::move(out), {x.node()}, [m, n, w, begin](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column mismatch " + shape_string(p.shape()));
    offsets.push_back(m * n);
    m += p.rows();
    parents.push_back(p.node());
  }
  std::vector<Real> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({m, n}, std::move(out), std::move(parents), [offsets](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      auto g = parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> col0, widths;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row mismatch " + shape_string(p.shape()));
    col0.push_back(n);
    widths.push_back(p.cols());
    n += p.cols();
    parents.push_back(p.node());
  }
  std::vector<Real> out(m * n);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].data();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(v.begin() + r * widths[p], widths[p], out.begin() + r * n + col0[p]);
    }
  }
  return make_result({m, n}, std::move(out), std::move(parents), [m, n, col0, widths](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      auto g = parent_grad(self, p);
      if (g.empty()) continue;
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < widths[p]; ++c) g[r * widths[p] + c] += self.grad[r * n + col0[p] + c];
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  const std::size_t v = table.rows(), n = table.cols();
  std::vector<Real> out(ids.size() * n);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " +
                           shape_string(table.shape()));
    }
    std::copy_n(tv.begin() + ids[i] * n, n, out.begin() + i * n);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_result({ids.size(), n}, std::move(out), {table.node()}, [idv, n](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      for (std::size_t c = 0; c < n; ++c) g[idv[i] * n + c] += self.grad[i * n + c];
    }
  });
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.shape()[2] != 3 || image.shape()[0] != image.shape()[1]) {
    throw DimensionError("patchify: expected an S x S x 3 image, got " + shape_string(image.shape()));
  }
  const std::size_t s = image.shape()[0];
  if (patch == 0 || s % patch != 0) {
    throw ConfigError("patchify: image size " + std::to_string(s) + " is not divisible by patch " +
                      std::to_string(patch));
  }
  const std::size_t grid = s / patch, width = 3 * patch * patch;
  // source[k] = flat image index feeding output element k.
  auto source = std::make_shared<std::vector<std::size_t>>(grid * grid * width);
  std::size_t k = 0;
  for (std::size_t py = 0; py < grid; ++py) {
    for (std::size_t px = 0; px < grid; ++px) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            (*source)[k++] = ((py * patch + y) * s + (px * patch + x)) * 3 + ch;
          }
        }
      }
    }
  }
  auto iv = image.data();
  std::vector<Real> out(source->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = iv[(*source)[i]];
  return make_result({grid * grid, width}, std::move(out), {image.node()}, [source](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < source->size(); ++i) g[(*source)[i]] += self.grad[i];
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy_rows");
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) throw DimensionError("cross_entropy_rows: one target per row required");
  auto probs = std::make_shared<std::vector<double>>(m * n);
  auto lv = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= n) throw ContractError("cross_entropy_rows: target outside class range");
    const Real* row = lv.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - mx);
    double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) (*probs)[r * n + c] = std::exp(row[c] - log_z);
    total += log_z - row[targets[r]];
  }
  std::vector<std::size_t> tv(targets.begin(), targets.end());
  return make_result({}, {static_cast<Real>(total / static_cast<double>(m))}, {logits.node()},
                     [m, n, probs, tv](Node& self) {
                       auto g = parent_grad(self, 0);
                       const double gy = self.grad[0] / static_cast<double>(m);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t c = 0; c < n; ++c) {
                           double d = (*probs)[r * n + c] - (c == tv[r] ? 1.0 : 0.0);
                           g[r * n + c] += static_cast<Real>(gy * d);
                         }
                       }
                     });
}

}  // namespace embalign::ops
