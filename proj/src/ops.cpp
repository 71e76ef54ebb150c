#include "crisp/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace crisp {

namespace {

using detail::TensorData;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Gradient buffer of a parent, or nullptr when the parent is a constant.
double* gbuf(const std::shared_ptr<TensorData>& p) {
    return p->requires_grad ? p->grad.data() : nullptr;
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
    int r = static_cast<int>(rank);
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit sp;
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

// Index maps from each output element to the (possibly broadcast) input
// element. Empty maps mean identity.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const Shape& sa, const Shape& sb, const char* op) {
    Broadcast bc;
    if (sa == sb) {
        bc.out = sa;
        return bc;
    }
    std::size_t nd = std::max(sa.size(), sb.size());
    bc.out.assign(nd, 1);
    std::vector<std::size_t> da(nd, 1), db(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        if (i < sa.size()) da[nd - 1 - i] = sa[sa.size() - 1 - i];
        if (i < sb.size()) db[nd - 1 - i] = sb[sb.size() - 1 - i];
    }
    for (std::size_t d = 0; d < nd; ++d) {
        if (da[d] == db[d] || db[d] == 1) {
            bc.out[d] = da[d];
        } else if (da[d] == 1) {
            bc.out[d] = db[d];
        } else {
            throw DimensionError(std::string(op) + ": cannot broadcast shapes " + shape_str(sa) +
                                 " and " + shape_str(sb));
        }
    }
    std::vector<std::size_t> stride_a(nd, 0), stride_b(nd, 0);
    std::size_t sa_acc = 1, sb_acc = 1;
    for (std::size_t d = nd; d-- > 0;) {
        stride_a[d] = (da[d] == 1) ? 0 : sa_acc;
        stride_b[d] = (db[d] == 1) ? 0 : sb_acc;
        sa_acc *= da[d];
        sb_acc *= db[d];
    }
    std::size_t n = shape_numel(bc.out);
    bc.ia.resize(n);
    bc.ib.resize(n);
    std::vector<std::size_t> counter(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t k = 0; k < n; ++k) {
        bc.ia[k] = ia;
        bc.ib[k] = ib;
        for (std::size_t d = nd; d-- > 0;) {
            ++counter[d];
            ia += stride_a[d];
            ib += stride_b[d];
            if (counter[d] < bc.out[d]) break;
            ia -= stride_a[d] * counter[d];
            ib -= stride_b[d] * counter[d];
            counter[d] = 0;
        }
    }
    return bc;
}

// f(x, y) -> value; dfx/dfy(x, y, out) -> partial derivative.
template <class F, class DX, class DY>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DX dfx, DY dfy) {
    auto bc = plan_broadcast(a.shape(), b.shape(), name);
    std::size_t n = shape_numel(bc.out);
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(n);
    bool identity = bc.ia.empty();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = identity ? k : bc.ia[k];
        std::size_t j = identity ? k : bc.ib[k];
        out[k] = f(av[i], bv[j]);
    }
    auto pa = a.data();
    auto pb = b.data();
    auto ia = std::make_shared<std::vector<std::size_t>>(std::move(bc.ia));
    auto ib = std::make_shared<std::vector<std::size_t>>(std::move(bc.ib));
    return make_op(name, bc.out, std::move(out), {a, b},
                   [pa, pb, ia, ib, dfx, dfy](TensorData& o) {
                       double* ga = gbuf(pa);
                       double* gb = gbuf(pb);
                       bool id = ia->empty();
                       for (std::size_t k = 0; k < o.values.size(); ++k) {
                           std::size_t i = id ? k : (*ia)[k];
                           std::size_t j = id ? k : (*ib)[k];
                           double g = o.grad[k];
                           if (g == 0.0) continue;
                           double x = pa->values[i];
                           double y = pb->values[j];
                           if (ga) ga[i] += g * dfx(x, y, o.values[k]);
                           if (gb) gb[j] += g * dfy(x, y, o.values[k]);
                       }
                   });
}

// f(x) -> value; df(x, y) -> derivative given input x and output y.
template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
    auto px = x.data();
    return make_op(name, x.shape(), std::move(out), {x}, [px, df](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t k = 0; k < o.values.size(); ++k) {
            g[k] += o.grad[k] * df(px->values[k], o.values[k]);
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || b.dim() < 2) {
        throw DimensionError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.size(-2), k = a.size(-1);
    const std::size_t kb = b.size(-2), n = b.size(-1);
    if (k != kb) {
        throw DimensionError("matmul: inner dimensions differ for shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const bool shared = b.dim() == 2;
    if (!shared) {
        bool same_batch = a.dim() == b.dim() &&
                          std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
        if (!same_batch) {
            throw DimensionError("matmul: batch dimensions differ for shapes " +
                                 shape_str(a.shape()) + " and " + shape_str(b.shape()));
        }
    }
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(batch * m * n);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    if (shared) {
        MutMap(out.data(), batch * m, n).noalias() = ConstMap(av, batch * m, k) * ConstMap(bv, k, n);
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            // lazyProduct skips GEMM packing, which dominates at attention sizes.
            MutMap(out.data() + s * m * n, m, n).noalias() =
                ConstMap(av + s * m * k, m, k).lazyProduct(ConstMap(bv + s * k * n, k, n));
        }
    }
    auto pa = a.data();
    auto pb = b.data();
    return make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                   [pa, pb, shared, batch, m, k, n](TensorData& o) {
                       double* ga = gbuf(pa);
                       double* gb = gbuf(pb);
                       const double* g = o.grad.data();
                       if (shared) {
                           ConstMap G(g, batch * m, n);
                           if (ga) {
                               MutMap(ga, batch * m, k).noalias() +=
                                   G * ConstMap(pb->values.data(), k, n).transpose();
                           }
                           if (gb) {
                               MutMap(gb, k, n).noalias() +=
                                   ConstMap(pa->values.data(), batch * m, k).transpose() * G;
                           }
                           return;
                       }
                       for (std::size_t s = 0; s < batch; ++s) {
                           ConstMap G(g + s * m * n, m, n);
                           if (ga) {
                               MutMap(ga + s * m * k, m, k).noalias() += G.lazyProduct(
                                   ConstMap(pb->values.data() + s * k * n, k, n).transpose());
                           }
                           if (gb) {
                               MutMap(gb + s * k * n, k, n).noalias() +=
                                   ConstMap(pa->values.data() + s * m * k, m, k)
                                       .transpose()
                                       .lazyProduct(G);
                           }
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double c) {
    return unary(
        "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double c) {
    return unary(
        "mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    // Subgradient 0 at the origin keeps zero-variance batches finite.
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& x) {
    return unary(
        "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
    return unary(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary(
        "leaky_relu", x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor softmax(const Tensor& x, int axis, double temperature) {
    if (!(temperature > 0.0)) {
        throw ContractError("softmax: temperature must be positive, got " +
                            std::to_string(temperature));
    }
    std::size_t ax = norm_axis(axis, x.dim(), "softmax");
    auto sp = split_axis(x.shape(), ax);
    auto xv = x.values();
    std::vector<double> out(xv.size());
    const double inv_t = 1.0 / temperature;
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t base = o * sp.len * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < sp.len; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < sp.len; ++j) {
                double e = std::exp((xv[base + j * sp.inner] - mx) * inv_t);
                out[base + j * sp.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < sp.len; ++j) out[base + j * sp.inner] /= total;
        }
    }
    auto px = x.data();
    return make_op("softmax", x.shape(), std::move(out), {x}, [px, sp, inv_t](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t oi = 0; oi < sp.outer; ++oi) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                std::size_t base = oi * sp.len * sp.inner + i;
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.len; ++j) {
                    dot += o.grad[base + j * sp.inner] * o.values[base + j * sp.inner];
                }
                for (std::size_t j = 0; j < sp.len; ++j) {
                    std::size_t idx = base + j * sp.inner;
                    g[idx] += o.values[idx] * (o.grad[idx] - dot) * inv_t;
                }
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    auto xv = x.values();
    double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    auto px = x.data();
    return make_op("sum", {}, {total}, {x}, [px](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t k = 0; k < px->values.size(); ++k) g[k] += o.grad[0];
    });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    std::size_t ax = norm_axis(axis, x.dim(), "sum");
    auto sp = split_axis(x.shape(), ax);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[ax] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    }
    auto xv = x.values();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.len; ++j) {
            const double* row = xv.data() + (o * sp.len + j) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
        }
    }
    auto px = x.data();
    return make_op("sum_axis", std::move(out_shape), std::move(out), {x}, [px, sp](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t oi = 0; oi < sp.outer; ++oi) {
            for (std::size_t j = 0; j < sp.len; ++j) {
                double* dst = g + (oi * sp.len + j) * sp.inner;
                const double* src = o.grad.data() + oi * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor mean(const Tensor& x) {
    return mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    std::size_t len = x.size(axis);
    return mul(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& s0 = parts.front().shape();
    std::size_t ax = norm_axis(axis, s0.size(), "concat");
    Shape out_shape = s0;
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) {
            if (d != ax && s[d] != s0[d]) ok = false;
        }
        if (!ok) {
            throw DimensionError("concat: incompatible shapes " + shape_str(s0) + " and " +
                                 shape_str(s));
        }
        out_shape[ax] += s[ax];
    }
    auto sp = split_axis(out_shape, ax);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> chunk(parts.size()), offset(parts.size());
    std::size_t acc = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        chunk[p] = parts[p].shape()[ax] * sp.inner;
        offset[p] = acc;
        acc += chunk[p];
    }
    const std::size_t row = acc;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto v = parts[p].values();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(v.data() + o * chunk[p], chunk[p], out.data() + o * row + offset[p]);
        }
    }
    std::vector<std::shared_ptr<TensorData>> ps;
    for (const auto& p : parts) ps.push_back(p.data());
    const std::size_t outer = sp.outer;
    return make_op("concat", std::move(out_shape), std::move(out), parts,
                   [ps, chunk, offset, outer, row](TensorData& o) {
                       for (std::size_t p = 0; p < ps.size(); ++p) {
                           double* g = gbuf(ps[p]);
                           if (!g) continue;
                           for (std::size_t oi = 0; oi < outer; ++oi) {
                               const double* src = o.grad.data() + oi * row + offset[p];
                               double* dst = g + oi * chunk[p];
                               for (std::size_t i = 0; i < chunk[p]; ++i) dst[i] += src[i];
                           }
                       }
                   });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    std::size_t ax = norm_axis(axis, x.dim(), "slice");
    if (start + length > x.shape()[ax]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") exceeds axis of shape " +
                             shape_str(x.shape()));
    }
    auto sp = split_axis(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    const std::size_t src_row = sp.len * sp.inner;
    const std::size_t dst_row = length * sp.inner;
    const std::size_t src_off = start * sp.inner;
    auto xv = x.values();
    std::vector<double> out(sp.outer * dst_row);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(xv.data() + o * src_row + src_off, dst_row, out.data() + o * dst_row);
    }
    auto px = x.data();
    const std::size_t outer = sp.outer;
    return make_op("slice", std::move(out_shape), std::move(out), {x},
                   [px, outer, src_row, dst_row, src_off](TensorData& o) {
                       double* g = gbuf(px);
                       if (!g) return;
                       for (std::size_t oi = 0; oi < outer; ++oi) {
                           const double* src = o.grad.data() + oi * dst_row;
                           double* dst = g + oi * src_row + src_off;
                           for (std::size_t i = 0; i < dst_row; ++i) dst[i] += src[i];
                       }
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    auto xv = x.values();
    auto px = x.data();
    return make_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                   [px](TensorData& o) {
                       double* g = gbuf(px);
                       if (!g) return;
                       for (std::size_t k = 0; k < o.grad.size(); ++k) g[k] += o.grad[k];
                   });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    if (perm.size() != s.size()) {
        throw DimensionError("permute: permutation rank differs from shape " + shape_str(s));
    }
    std::vector<bool> seen(s.size(), false);
    for (auto p : perm) {
        if (p >= s.size() || seen[p]) throw DimensionError("permute: invalid permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) in_stride[d - 1] = in_stride[d] * s[d];
    Shape out_shape(s.size());
    std::vector<std::size_t> stride(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) {
        out_shape[d] = s[perm[d]];
        stride[d] = in_stride[perm[d]];
    }
    const std::size_t n = x.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(s.size(), 0);
    std::size_t src = 0;
    for (std::size_t k = 0; k < n; ++k) {
        (*map)[k] = src;
        for (std::size_t d = s.size(); d-- > 0;) {
            ++counter[d];
            src += stride[d];
            if (counter[d] < out_shape[d]) break;
            src -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    auto xv = x.values();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = xv[(*map)[k]];
    auto px = x.data();
    return make_op("permute", std::move(out_shape), std::move(out), {x}, [px, map](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t k = 0; k < o.grad.size(); ++k) g[(*map)[k]] += o.grad[k];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.dim() < 2) throw DimensionError("transpose: need rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> perm(x.dim());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return permute(x, perm);
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices) {
    auto xv = x.values();
    std::vector<double> out(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= xv.size()) throw DimensionError("index_select: index out of range");
        out[k] = xv[indices[k]];
    }
    auto px = x.data();
    auto idx = std::make_shared<std::vector<std::size_t>>(indices);
    return make_op("index_select", {indices.size()}, std::move(out), {x}, [px, idx](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t k = 0; k < idx->size(); ++k) g[(*idx)[k]] += o.grad[k];
    });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    for (auto& m : *mask) m = keep(rng) ? scale : 0.0;
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t k = 0; k < xv.size(); ++k) out[k] = xv[k] * (*mask)[k];
    auto px = x.data();
    return make_op("dropout", x.shape(), std::move(out), {x}, [px, mask](TensorData& o) {
        double* g = gbuf(px);
        if (!g) return;
        for (std::size_t k = 0; k < o.grad.size(); ++k) g[k] += o.grad[k] * (*mask)[k];
    });
}

Tensor clip(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ContractError("clip: lower bound exceeds upper bound");
    return unary(
        "clip", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

}  // namespace crisp
