// SPDX-License-Identifier: Apache-2.0
#include "degfuse/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace degfuse::ag {

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.empty()) return Tensor(node_->value.shape());
    return node_->grad;
}

void Var::zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var leaf(Tensor value) { return Var(std::move(value), true); }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    Var out(std::move(value), false);
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Var& p) { return p.requires_grad(); });
    if (any) {
        auto& node = *out.node();
        node.requires_grad = true;
        node.parents.reserve(parents.size());
        for (auto& p : parents) node.parents.push_back(p.node());
        node.backward_fn = std::move(fn);
    }
    return out;
}

void backward(const Var& root, double seed) {
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().fill(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_fn || node->grad.empty()) continue;
        node->backward_fn(*node);
        node->grad = Tensor();  // intermediate gradients are not kept
    }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.shape().size() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got " + shape_string(a.shape()));
    }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> back) {
    Tensor out(a.shape());
    auto src = a.value().data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(src[i]);
    return make_result(std::move(out), {a}, std::move(back));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto x = a.value().data(), y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& in = parent(self, p);
            if (!in.requires_grad) continue;
            auto g = in.grad_buffer().data();
            auto go = self.grad.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto x = a.value().data(), y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        auto go = self.grad.data();
        if (Node& in = parent(self, 0); in.requires_grad) {
            auto g = in.grad_buffer().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
        }
        if (Node& in = parent(self, 1); in.requires_grad) {
            auto g = in.grad_buffer().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto x = a.value().data(), y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        auto go = self.grad.data();
        if (na.requires_grad) {
            auto g = na.grad_buffer().data();
            auto y = nb.value.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
        }
        if (nb.requires_grad) {
            auto g = nb.grad_buffer().data();
            auto x = na.value.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * s;
    });
}

Var scale_by(const Var& a, const Var& s) {
    if (s.size() != 1) throw std::invalid_argument("scale_by: scalar must have one element");
    const double k = s.value()[0];
    Tensor out(a.shape());
    auto x = a.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * k;
    return make_result(std::move(out), {a, s}, [](Node& self) {
        Node& na = parent(self, 0);
        Node& ns = parent(self, 1);
        auto go = self.grad.data();
        if (na.requires_grad) {
            auto g = na.grad_buffer().data();
            const double k = ns.value[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * k;
        }
        if (ns.requires_grad) {
            auto x = na.value.data();
            double acc = 0.0;
            for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * x[i];
            ns.grad_buffer()[0] += acc;
        }
    });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(a, [slope](double v) { return v > 0 ? v : v * slope; }, [slope](Node& self) {
        Node& in = parent(self, 0);
        auto g = in.grad_buffer().data();
        auto x = in.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * (x[i] > 0 ? 1.0 : slope);
    });
}

namespace {
double stable_sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
    return unary(a, stable_sigmoid, [](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto y = self.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i] * (1.0 - y[i]);
    });
}

Var abs(const Var& a) {
    return unary(a, [](double v) { return std::abs(v); }, [](Node& self) {
        Node& in = parent(self, 0);
        auto g = in.grad_buffer().data();
        auto x = in.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double sign = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
            g[i] += go[i] * sign;
        }
    });
}

Var maximum(const Var& a, const Var& b) {
    require_same_shape(a, b, "maximum");
    Tensor out(a.shape());
    auto x = a.value().data(), y = b.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] >= y[i] ? x[i] : y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        auto x = na.value.data(), y = nb.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < go.size(); ++i) {
            Node& dst = x[i] >= y[i] ? na : nb;
            if (dst.requires_grad) dst.grad_buffer()[i] += go[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return make_result(Tensor(Shape{1}, acc), {a}, [](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        const double go = self.grad[0];
        for (double& v : g) v += go;
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.size());
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return make_result(Tensor(Shape{1}, acc / n), {a}, [n](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        const double go = self.grad[0] / n;
        for (double& v : g) v += go;
    });
}

// ---------------------------------------------------------------------------
// Shape

Var reshape(const Var& a, Shape shape) {
    return make_result(a.value().reshaped(std::move(shape)), {a}, [](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    });
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (p.shape().empty() || t != tail) {
            throw std::invalid_argument("concat: trailing shapes differ: " +
                                        shape_string(parts[0].shape()) + " vs " +
                                        shape_string(p.shape()));
        }
        rows += p.shape()[0];
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    Tensor out(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        auto src = p.value().data();
        std::copy(src.begin(), src.end(), out.data().begin() + offset);
        offset += src.size();
    }
    return make_result(std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        auto go = self.grad.data();
        for (auto& p : self.parents) {
            std::size_t n = p->value.size();
            if (p->requires_grad) {
                auto g = p->grad_buffer().data();
                for (std::size_t i = 0; i < n; ++i) g[i] += go[offset + i];
            }
            offset += n;
        }
    });
}

Var slice(const Var& a, std::size_t begin, std::size_t count) {
    if (a.shape().empty() || begin + count > a.shape()[0]) {
        throw std::invalid_argument("slice: range out of bounds for " + shape_string(a.shape()));
    }
    Shape shape = a.shape();
    shape[0] = count;
    const std::size_t stride = a.size() / a.shape()[0];
    auto src = a.value().data().subspan(begin * stride, count * stride);
    Tensor out(shape, std::vector<double>(src.begin(), src.end()));
    return make_result(std::move(out), {a}, [begin, stride](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < go.size(); ++i) g[begin * stride + i] += go[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) +
                                    " x " + shape_string(b.shape()));
    }
    Tensor out(Shape{m, n});
    auto A = a.value().data(), B = b.value().data();
    auto C = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
        }
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        auto G = self.grad.data();
        if (na.requires_grad) {
            auto GA = na.grad_buffer().data();
            auto B = nb.value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                    GA[i * k + p] += acc;
                }
        }
        if (nb.requires_grad) {
            auto GB = nb.grad_buffer().data();
            auto A = na.value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(Shape{c, r});
    auto src = a.value().data();
    auto dst = out.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    return make_result(std::move(out), {a}, [r, c](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[j * r + i];
    });
}

Var softmax_rows(const Var& a) {
    require_rank(a, 2, "softmax_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(a.shape());
    auto x = a.value().data();
    auto y = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        double mx = x[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (y[i * c + j] = std::exp(x[i * c + j] - mx));
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] /= z;
    }
    return make_result(std::move(out), {a}, [r, c](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto y = self.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
        }
    });
}

Var l2_normalize_rows(const Var& a, double eps) {
    require_rank(a, 2, "l2_normalize_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(a.shape());
    std::vector<double> norms(r);
    auto x = a.value().data();
    auto y = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        double ss = eps;
        for (std::size_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
        norms[i] = std::sqrt(ss);
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] / norms[i];
    }
    return make_result(std::move(out), {a}, [r, c, norms = std::move(norms)](Node& self) {
        auto g = parent(self, 0).grad_buffer().data();
        auto y = self.value.data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                g[i * c + j] += (go[i * c + j] - y[i * c + j] * dot) / norms[i];
        }
    });
}

Var linear(const Var& x, const Var& w, const std::optional<Var>& b) {
    require_rank(x, 1, "linear");
    require_rank(w, 2, "linear");
    const std::size_t out_dim = w.shape()[0], in_dim = w.shape()[1];
    if (x.shape()[0] != in_dim) {
        throw std::invalid_argument("linear: input " + shape_string(x.shape()) +
                                    " does not match weight " + shape_string(w.shape()));
    }
    if (b && b->shape() != Shape{out_dim}) throw std::invalid_argument("linear: bias shape");
    Tensor out(Shape{out_dim});
    auto X = x.value().data(), W = w.value().data();
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b ? b->value()[o] : 0.0;
        for (std::size_t d = 0; d < in_dim; ++d) acc += W[o * in_dim + d] * X[d];
        out[o] = acc;
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(*b);
    return make_result(std::move(out), parents, [out_dim, in_dim](Node& self) {
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        auto go = self.grad.data();
        if (nx.requires_grad) {
            auto gx = nx.grad_buffer().data();
            auto W = nw.value.data();
            for (std::size_t o = 0; o < out_dim; ++o)
                for (std::size_t d = 0; d < in_dim; ++d) gx[d] += go[o] * W[o * in_dim + d];
        }
        if (nw.requires_grad) {
            auto gw = nw.grad_buffer().data();
            auto X = nx.value.data();
            for (std::size_t o = 0; o < out_dim; ++o)
                for (std::size_t d = 0; d < in_dim; ++d) gw[o * in_dim + d] += go[o] * X[d];
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto gb = self.parents[2]->grad_buffer().data();
            for (std::size_t o = 0; o < out_dim; ++o) gb[o] += go[o];
        }
    });
}

// ---------------------------------------------------------------------------
// Feature maps

namespace {

struct ConvGeom {
    std::size_t C, H, W, O, K, Ho, Wo, stride, pad, groups, cin_per_group, cout_per_group;

    // Output columns ox whose input column ox*stride + kx - pad lies inside [0, W).
    std::pair<std::size_t, std::size_t> ox_range(std::size_t kx) const {
        long lo_num = static_cast<long>(pad) - static_cast<long>(kx);
        long s = static_cast<long>(stride);
        long lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
        long hi_num = static_cast<long>(W) - 1 + static_cast<long>(pad) - static_cast<long>(kx);
        long hi = hi_num < 0 ? -1 : hi_num / s;
        hi = std::min(hi, static_cast<long>(Wo) - 1);
        if (hi < lo) return {0, 0};
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
    }
};

}  // namespace

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b, int stride, int groups) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    ConvGeom g{};
    g.C = x.shape()[0];
    g.H = x.shape()[1];
    g.W = x.shape()[2];
    g.O = w.shape()[0];
    g.K = w.shape()[2];
    g.stride = static_cast<std::size_t>(stride);
    g.groups = static_cast<std::size_t>(groups);
    g.pad = g.K / 2;
    if (w.shape()[3] != g.K || g.K % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd and square");
    if (groups < 1 || g.C % g.groups != 0 || g.O % g.groups != 0) {
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    }
    g.cin_per_group = g.C / g.groups;
    g.cout_per_group = g.O / g.groups;
    if (w.shape()[1] != g.cin_per_group) {
        throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) +
                                    " does not match input " + shape_string(x.shape()));
    }
    if (b && b->shape() != Shape{g.O}) throw std::invalid_argument("conv2d: bias shape");
    g.Ho = (g.H + 2 * g.pad - g.K) / g.stride + 1;
    g.Wo = (g.W + 2 * g.pad - g.K) / g.stride + 1;

    Tensor out(Shape{g.O, g.Ho, g.Wo});
    {
        auto X = x.value().data(), Wt = w.value().data();
        auto Y = out.data();
        for (std::size_t o = 0; o < g.O; ++o) {
            double* yo = Y.data() + o * g.Ho * g.Wo;
            if (b) std::fill(yo, yo + g.Ho * g.Wo, b->value()[o]);
            const std::size_t grp = o / g.cout_per_group;
            for (std::size_t ci = 0; ci < g.cin_per_group; ++ci) {
                const double* xc = X.data() + (grp * g.cin_per_group + ci) * g.H * g.W;
                const double* wk = Wt.data() + (o * g.cin_per_group + ci) * g.K * g.K;
                for (std::size_t ky = 0; ky < g.K; ++ky)
                    for (std::size_t kx = 0; kx < g.K; ++kx) {
                        const double wv = wk[ky * g.K + kx];
                        auto [lo, hi] = g.ox_range(kx);
                        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                            if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
                            const long off = iy * static_cast<long>(g.W) - static_cast<long>(g.pad) +
                                             static_cast<long>(kx);
                            double* yr = yo + oy * g.Wo;
                            for (std::size_t ox = lo; ox < hi; ++ox)
                                yr[ox] += wv * xc[off + static_cast<long>(ox * g.stride)];
                        }
                    }
            }
        }
    }

    std::vector<Var> parents{x, w};
    if (b) parents.push_back(*b);
    return make_result(std::move(out), parents, [g](Node& self) {
        Node& nx = parent(self, 0);
        Node& nw = parent(self, 1);
        auto GY = self.grad.data();
        auto X = nx.value.data(), Wt = nw.value.data();
        double* GX = nx.requires_grad ? nx.grad_buffer().data().data() : nullptr;
        double* GW = nw.requires_grad ? nw.grad_buffer().data().data() : nullptr;
        for (std::size_t o = 0; o < g.O; ++o) {
            const double* go = GY.data() + o * g.Ho * g.Wo;
            const std::size_t grp = o / g.cout_per_group;
            for (std::size_t ci = 0; ci < g.cin_per_group; ++ci) {
                const std::size_t c = grp * g.cin_per_group + ci;
                const double* xc = X.data() + c * g.H * g.W;
                double* gxc = GX ? GX + c * g.H * g.W : nullptr;
                const std::size_t wbase = (o * g.cin_per_group + ci) * g.K * g.K;
                for (std::size_t ky = 0; ky < g.K; ++ky)
                    for (std::size_t kx = 0; kx < g.K; ++kx) {
                        const double wv = Wt[wbase + ky * g.K + kx];
                        auto [lo, hi] = g.ox_range(kx);
                        double wacc = 0.0;
                        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                            if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
                            const long off = iy * static_cast<long>(g.W) - static_cast<long>(g.pad) +
                                             static_cast<long>(kx);
                            const double* gr = go + oy * g.Wo;
                            if (gxc) {
                                for (std::size_t ox = lo; ox < hi; ++ox)
                                    gxc[off + static_cast<long>(ox * g.stride)] += wv * gr[ox];
                            }
                            if (GW) {
                                for (std::size_t ox = lo; ox < hi; ++ox)
                                    wacc += gr[ox] * xc[off + static_cast<long>(ox * g.stride)];
                            }
                        }
                        if (GW) GW[wbase + ky * g.K + kx] += wacc;
                    }
            }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto gb = self.parents[2]->grad_buffer().data();
            for (std::size_t o = 0; o < g.O; ++o) {
                const double* go = GY.data() + o * g.Ho * g.Wo;
                double acc = 0.0;
                for (std::size_t i = 0; i < g.Ho * g.Wo; ++i) acc += go[i];
                gb[o] += acc;
            }
        }
    });
}

namespace {
void require_channel_vector(const Var& x, const Var& v, const char* op) {
    if (x.shape().empty() || v.shape() != Shape{x.shape()[0]}) {
        throw std::invalid_argument(std::string(op) + ": expected a length-" +
                                    std::to_string(x.shape().empty() ? 0 : x.shape()[0]) +
                                    " channel vector, got " + shape_string(v.shape()));
    }
}
}  // namespace

Var channel_scale(const Var& x, const Var& s) {
    require_channel_vector(x, s, "channel_scale");
    const std::size_t C = x.shape()[0], P = x.size() / C;
    Tensor out(x.shape());
    auto X = x.value().data(), S = s.value().data();
    auto Y = out.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) Y[c * P + i] = X[c * P + i] * S[c];
    return make_result(std::move(out), {x, s}, [C, P](Node& self) {
        Node& nx = parent(self, 0);
        Node& ns = parent(self, 1);
        auto go = self.grad.data();
        if (nx.requires_grad) {
            auto gx = nx.grad_buffer().data();
            auto S = ns.value.data();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) gx[c * P + i] += go[c * P + i] * S[c];
        }
        if (ns.requires_grad) {
            auto gs = ns.grad_buffer().data();
            auto X = nx.value.data();
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < P; ++i) acc += go[c * P + i] * X[c * P + i];
                gs[c] += acc;
            }
        }
    });
}

Var channel_shift(const Var& x, const Var& b) {
    require_channel_vector(x, b, "channel_shift");
    const std::size_t C = x.shape()[0], P = x.size() / C;
    Tensor out(x.shape());
    auto X = x.value().data(), B = b.value().data();
    auto Y = out.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) Y[c * P + i] = X[c * P + i] + B[c];
    return make_result(std::move(out), {x, b}, [C, P](Node& self) {
        Node& nx = parent(self, 0);
        Node& nb = parent(self, 1);
        auto go = self.grad.data();
        if (nx.requires_grad) {
            auto gx = nx.grad_buffer().data();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
        if (nb.requires_grad) {
            auto gb = nb.grad_buffer().data();
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < P; ++i) acc += go[c * P + i];
                gb[c] += acc;
            }
        }
    });
}

Var spatial_scale(const Var& x, const Var& m) {
    require_rank(x, 3, "spatial_scale");
    const std::size_t C = x.shape()[0], P = x.shape()[1] * x.shape()[2];
    if (m.shape() != Shape{1, x.shape()[1], x.shape()[2]}) {
        throw std::invalid_argument("spatial_scale: mask shape " + shape_string(m.shape()));
    }
    Tensor out(x.shape());
    auto X = x.value().data(), M = m.value().data();
    auto Y = out.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) Y[c * P + i] = X[c * P + i] * M[i];
    return make_result(std::move(out), {x, m}, [C, P](Node& self) {
        Node& nx = parent(self, 0);
        Node& nm = parent(self, 1);
        auto go = self.grad.data();
        if (nx.requires_grad) {
            auto gx = nx.grad_buffer().data();
            auto M = nm.value.data();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) gx[c * P + i] += go[c * P + i] * M[i];
        }
        if (nm.requires_grad) {
            auto gm = nm.grad_buffer().data();
            auto X = nx.value.data();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) gm[i] += go[c * P + i] * X[c * P + i];
        }
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x, 3, "global_avg_pool");
    const std::size_t C = x.shape()[0], P = x.shape()[1] * x.shape()[2];
    Tensor out(Shape{C});
    auto X = x.value().data();
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) acc += X[c * P + i];
        out[c] = acc / static_cast<double>(P);
    }
    return make_result(std::move(out), {x}, [C, P](Node& self) {
        auto gx = parent(self, 0).grad_buffer().data();
        for (std::size_t c = 0; c < C; ++c) {
            const double g = self.grad[c] / static_cast<double>(P);
            for (std::size_t i = 0; i < P; ++i) gx[c * P + i] += g;
        }
    });
}

Var channel_mean_max(const Var& x) {
    require_rank(x, 3, "channel_mean_max");
    const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2], P = H * W;
    Tensor out(Shape{2, H, W});
    std::vector<std::size_t> argmax(P, 0);
    auto X = x.value().data();
    for (std::size_t i = 0; i < P; ++i) {
        double acc = 0.0, mx = X[i];
        for (std::size_t c = 0; c < C; ++c) {
            const double v = X[c * P + i];
            acc += v;
            if (v > mx) {
                mx = v;
                argmax[i] = c;
            }
        }
        out[i] = acc / static_cast<double>(C);
        out[P + i] = mx;
    }
    return make_result(std::move(out), {x}, [C, P, argmax = std::move(argmax)](Node& self) {
        auto gx = parent(self, 0).grad_buffer().data();
        auto go = self.grad.data();
        for (std::size_t i = 0; i < P; ++i) {
            const double gm = go[i] / static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) gx[c * P + i] += gm;
            gx[argmax[i] * P + i] += go[P + i];
        }
    });
}

Var upsample_nearest2(const Var& x) {
    require_rank(x, 3, "upsample_nearest2");
    const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    Tensor out(Shape{C, 2 * H, 2 * W});
    auto X = x.value().data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx)
                out.at(c, y, xx) = X[(c * H + y / 2) * W + xx / 2];
    return make_result(std::move(out), {x}, [C, H, W](Node& self) {
        auto gx = parent(self, 0).grad_buffer().data();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < 2 * H; ++y)
                for (std::size_t xx = 0; xx < 2 * W; ++xx)
                    gx[(c * H + y / 2) * W + xx / 2] += self.grad.at(c, y, xx);
    });
}

namespace {

// Shared by group and layer norm: normalize `count` sets of `n` elements, the
// j-th element of set s living at index(s, j); gamma/beta are per channel(s, j).
template <class Index, class Channel>
Var normalize_sets(const Var& x, const Var& gamma, const Var& beta, double eps,
                   std::size_t sets, std::size_t n, Index index, Channel channel) {
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(sets);
    auto X = x.value().data(), G = gamma.value().data(), B = beta.value().data();
    for (std::size_t s = 0; s < sets; ++s) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += X[index(s, j)];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = X[index(s, j)] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[s] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = index(s, j);
            xhat[i] = (X[i] - mu) * inv_std[s];
            const std::size_t c = channel(s, j);
            out[i] = xhat[i] * G[c] + B[c];
        }
    }
    return make_result(
        std::move(out), {x, gamma, beta},
        [sets, n, index, channel, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& nx = parent(self, 0);
            Node& ng = parent(self, 1);
            Node& nb = parent(self, 2);
            auto go = self.grad.data();
            auto G = ng.value.data();
            double* gg = ng.requires_grad ? ng.grad_buffer().data().data() : nullptr;
            double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
            double* gx = nx.requires_grad ? nx.grad_buffer().data().data() : nullptr;
            for (std::size_t s = 0; s < sets; ++s) {
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = index(s, j);
                    const std::size_t c = channel(s, j);
                    if (gg) gg[c] += go[i] * xhat[i];
                    if (gb) gb[c] += go[i];
                    const double gh = go[i] * G[c];
                    mean_g += gh;
                    mean_gx += gh * xhat[i];
                }
                if (!gx) continue;
                mean_g /= static_cast<double>(n);
                mean_gx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = index(s, j);
                    const double gh = go[i] * G[channel(s, j)];
                    gx[i] += inv_std[s] * (gh - mean_g - xhat[i] * mean_gx);
                }
            }
        });
}

}  // namespace

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 3, "group_norm");
    const std::size_t C = x.shape()[0], P = x.shape()[1] * x.shape()[2];
    if (groups == 0 || C % groups != 0) throw std::invalid_argument("group_norm: bad group count");
    require_channel_vector(x, gamma, "group_norm");
    require_channel_vector(x, beta, "group_norm");
    const std::size_t per = C / groups;
    // Channels of a group are contiguous, so set s spans [s*per*P, (s+1)*per*P).
    return normalize_sets(
        x, gamma, beta, eps, groups, per * P,
        [per, P](std::size_t s, std::size_t j) { return s * per * P + j; },
        [per, P](std::size_t s, std::size_t j) { return s * per + j / P; });
}

Var channel_layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 3, "channel_layer_norm");
    const std::size_t C = x.shape()[0], P = x.shape()[1] * x.shape()[2];
    require_channel_vector(x, gamma, "channel_layer_norm");
    require_channel_vector(x, beta, "channel_layer_norm");
    return normalize_sets(
        x, gamma, beta, eps, P, C, [P](std::size_t s, std::size_t j) { return j * P + s; },
        [](std::size_t, std::size_t j) { return j; });
}

}  // namespace degfuse::ag
