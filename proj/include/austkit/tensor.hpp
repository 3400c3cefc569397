#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace austkit {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e <= 0) throw TensorError("tensor shape has non-positive extent " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad; // sized on first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

inline std::atomic<std::uint64_t> node_counter{0};

inline std::vector<double>& grad_of(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

// ---- small dense GEMM kernels (row-major, accumulate into C) ----

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn_acc(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * K;
        double* c = C + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B^T, with B stored as [N,K]
inline void gemm_nt_acc(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * K;
        double* c = C + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<std::size_t>(j) * K;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A^T * B, with A stored as [K,M]
inline void gemm_tn_acc(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int k = 0; k < K; ++k) {
        const double* a = A + static_cast<std::size_t>(k) * M;
        const double* b = B + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const double aki = a[i];
            double* c = C + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += aki * b[j];
        }
    }
}

} // namespace detail

// Thread-local switch; when off, ops produce constants (no tape is recorded).
namespace detail {
inline thread_local bool grad_mode_enabled = true;
}

inline bool grad_mode() { return detail::grad_mode_enabled; }

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = saved; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense n-dimensional array of doubles with tape-based reverse-mode
/// differentiation. A Tensor is a shared handle to an immutable node; ops
/// build the tape eagerly and backward() replays it in reverse creation
/// order, which is always a valid topological order.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(std::vector<double> data, std::vector<int> shape,
                            bool requires_grad = false) {
        if (detail::shape_numel(shape) != data.size())
            throw TensorError("from_data: " + std::to_string(data.size()) +
                              " values do not fill shape " + detail::shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->id = detail::node_counter.fetch_add(1, std::memory_order_relaxed);
        return Tensor(std::move(n));
    }

    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
        const std::size_t n = detail::shape_numel(shape);
        return from_data(std::vector<double>(n, v), std::move(shape), requires_grad);
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({v}, {1}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return node().shape; }
    int dim(int i) const { return node().shape.at(static_cast<std::size_t>(i)); }
    std::size_t ndim() const { return node().shape.size(); }
    std::size_t numel() const { return node().value.size(); }
    bool requires_grad() const { return node().requires_grad; }
    std::uint64_t node_id() const { return node().id; }

    const std::vector<double>& values() const { return node().value; }
    const std::vector<double>& grad() const { return node().grad; }
    bool has_grad() const { return !node().grad.empty(); }

    // In-place access for leaves (parameter init / optimizer updates).
    std::vector<double>& mutable_values() { return node().value; }
    std::vector<double>& mutable_grad() { return detail::grad_of(node()); }
    void zero_grad() { node().grad.assign(node().value.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw TensorError("item: tensor has " + std::to_string(numel()) + " elements");
        return node().value[0];
    }

    double at(std::initializer_list<int> idx) const {
        const auto& s = shape();
        if (idx.size() != s.size()) throw TensorError("at: rank mismatch");
        std::size_t flat = 0, i = 0;
        for (int v : idx) {
            if (v < 0 || v >= s[i]) throw TensorError("at: index out of range");
            flat = flat * static_cast<std::size_t>(s[i]) + static_cast<std::size_t>(v);
            ++i;
        }
        return node().value[flat];
    }

    detail::Node& node() const {
        if (!n_) throw TensorError("use of undefined tensor");
        return *n_;
    }
    const std::shared_ptr<detail::Node>& handle() const { return n_; }

    // Internal: build a result node wired to its inputs. The backward
    // function is only retained when some input participates in the tape.
    static Tensor make(std::vector<int> shape, std::vector<double> value,
                       std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward_fn) {
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        bool rg = false;
        if (detail::grad_mode_enabled)
            for (const auto& in : inputs) rg = rg || in.requires_grad();
        n->requires_grad = rg;
        if (rg) {
            n->parents.reserve(inputs.size());
            for (auto& in : inputs) n->parents.push_back(in.handle());
            n->backward_fn = std::move(backward_fn);
        }
        n->id = detail::node_counter.fetch_add(1, std::memory_order_relaxed);
        return Tensor(std::move(n));
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;
};

/// Reverse-mode sweep from a scalar root. Gradients accumulate into the
/// grad buffers of every requires_grad leaf reachable from `loss`; leaf
/// grads are not reset here, so consecutive backward calls sum (used for
/// batch accumulation).
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw TensorError("backward: root must be scalar, got shape " +
                          detail::shape_str(loss.shape()));
    detail::Node* root = &loss.node();
    if (!root->requires_grad) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    // Reverse creation order is a topological order of the tape.
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    detail::grad_of(*root)[0] += 1.0;
    for (detail::Node* n : order)
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}
} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        const auto& g = n.grad;
        for (int s = 0; s < 2; ++s) {
            auto& p = *n.parents[s];
            if (!p.requires_grad) continue;
            auto& pg = detail::grad_of(p);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        const auto& g = n.grad;
        if (n.parents[0]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        const auto& g = n.grad;
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * av[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        const auto& g = n.grad;
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] / bv[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
    });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return Tensor::make(a.shape(), std::move(out), {a}, [s](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * s;
    });
}

/// s - a, elementwise against a constant.
inline Tensor rsub_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - av[i];
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] -= n.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (xv[i] > 0.0) pg[i] += n.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        const auto& y = n.value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * y[i] * (1.0 - y[i]);
    });
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] / xv[i];
    });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        const auto& y = n.value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * y[i];
    });
}

inline Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(av[i]);
    return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        const auto& y = n.value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * 0.5 / y[i];
    });
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
    return Tensor::make(a.shape(), std::move(out), {a}, [lo, hi](detail::Node& n) {
        const auto& xv = n.parents[0]->value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (xv[i] > lo && xv[i] < hi) pg[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// reductions and reshaping
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Tensor::make({1}, {s}, {a}, [](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        const double g = n.grad[0];
        for (double& v : pg) v += g;
    });
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Tensor::make({1}, {s * inv}, {a}, [inv](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        const double g = n.grad[0] * inv;
        for (double& v : pg) v += g;
    });
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (detail::shape_numel(shape) != a.numel())
        throw TensorError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                          detail::shape_str(shape));
    return Tensor::make(std::move(shape), a.values(), {a}, [](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw TensorError("transpose: expected 2-d, got " + detail::shape_str(a.shape()));
    const int m = a.dim(0), k = a.dim(1);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
            out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * k + j];
    return Tensor::make({k, m}, std::move(out), {a}, [m, k](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (int j = 0; j < k; ++j)
            for (int i = 0; i < m; ++i)
                pg[static_cast<std::size_t>(i) * k + j] += n.grad[static_cast<std::size_t>(j) * m + i];
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw TensorError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                          detail::shape_str(b.shape()) + " (inner dimensions must agree)");
    const int m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n2, 0.0);
    detail::gemm_nn_acc(m, k, n2, a.values().data(), b.values().data(), out.data());
    return Tensor::make({m, n2}, std::move(out), {a, b}, [m, k, n2](detail::Node& n) {
        const auto& g = n.grad;
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[0]);
            detail::gemm_nt_acc(m, n2, k, g.data(), bv.data(), pg.data()); // gA += g * B^T
        }
        if (n.parents[1]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[1]);
            detail::gemm_tn_acc(k, m, n2, av.data(), g.data(), pg.data()); // gB += A^T * g
        }
    });
}

// ---------------------------------------------------------------------------
// NCHW ops
// ---------------------------------------------------------------------------

namespace detail {
inline void expect_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.ndim() != r)
        throw TensorError(std::string(op) + ": expected " + std::to_string(r) + "-d tensor, got " +
                          shape_str(t.shape()));
}
} // namespace detail

/// Concatenate [N,C_i,H,W] tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_channels: no inputs");
    detail::expect_rank(parts[0], 4, "concat_channels");
    const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    int Ctot = 0;
    for (const auto& p : parts) {
        detail::expect_rank(p, 4, "concat_channels");
        if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw TensorError("concat_channels: mismatched N/H/W between " +
                              detail::shape_str(parts[0].shape()) + " and " +
                              detail::shape_str(p.shape()));
        Ctot += p.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> out(static_cast<std::size_t>(N) * Ctot * plane);
    std::vector<int> offsets;
    int c0 = 0;
    for (const auto& p : parts) {
        offsets.push_back(c0);
        const auto& pv = p.values();
        const int C = p.dim(1);
        for (int n = 0; n < N; ++n)
            std::copy(pv.begin() + static_cast<std::ptrdiff_t>(n) * C * plane,
                      pv.begin() + static_cast<std::ptrdiff_t>(n + 1) * C * plane,
                      out.begin() + (static_cast<std::size_t>(n) * Ctot + c0) * plane);
        c0 += C;
    }
    return Tensor::make({N, Ctot, H, W}, std::move(out), parts,
                        [N, Ctot, plane, offsets](detail::Node& n) {
                            for (std::size_t s = 0; s < n.parents.size(); ++s) {
                                auto& p = *n.parents[s];
                                if (!p.requires_grad) continue;
                                auto& pg = detail::grad_of(p);
                                const int C = p.shape[1];
                                for (int b = 0; b < N; ++b) {
                                    const double* src =
                                        n.grad.data() +
                                        (static_cast<std::size_t>(b) * Ctot + offsets[s]) * plane;
                                    double* dst = pg.data() + static_cast<std::size_t>(b) * C * plane;
                                    for (std::size_t i = 0; i < static_cast<std::size_t>(C) * plane; ++i)
                                        dst[i] += src[i];
                                }
                            }
                        });
}

/// Channels [c0, c1) of a [N,C,H,W] tensor.
inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
    detail::expect_rank(a, 4, "slice_channels");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw TensorError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") invalid for C=" + std::to_string(C));
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const int Cs = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(N) * Cs * plane);
    const auto& av = a.values();
    for (int n = 0; n < N; ++n)
        std::copy(av.begin() + (static_cast<std::size_t>(n) * C + c0) * plane,
                  av.begin() + (static_cast<std::size_t>(n) * C + c1) * plane,
                  out.begin() + static_cast<std::size_t>(n) * Cs * plane);
    return Tensor::make({N, Cs, H, W}, std::move(out), {a}, [N, C, c0, Cs, plane](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        for (int b = 0; b < N; ++b) {
            const double* src = n.grad.data() + static_cast<std::size_t>(b) * Cs * plane;
            double* dst = pg.data() + (static_cast<std::size_t>(b) * C + c0) * plane;
            for (std::size_t i = 0; i < static_cast<std::size_t>(Cs) * plane; ++i) dst[i] += src[i];
        }
    });
}

/// Learned 2-d cross-correlation parameters.
struct Conv2dParams {
    Tensor kernel; // [outC, inC, kH, kW]
    Tensor bias;   // [outC]
    int stride = 1;
    int padding = 0;
};

namespace detail {

struct ConvPlan {
    int N, C, H, W, O, kh, kw, stride, pad, OH, OW;
};

inline ConvPlan conv_plan(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    expect_rank(x, 4, "conv2d(input)");
    expect_rank(k, 4, "conv2d(kernel)");
    if (b.ndim() != 1)
        throw TensorError("conv2d: bias must be 1-d [outC], got " + shape_str(b.shape()));
    ConvPlan p{};
    p.N = x.dim(0);
    p.C = x.dim(1);
    p.H = x.dim(2);
    p.W = x.dim(3);
    p.O = k.dim(0);
    p.kh = k.dim(2);
    p.kw = k.dim(3);
    p.stride = stride;
    p.pad = pad;
    if (k.dim(1) != p.C)
        throw TensorError("conv2d: input channels C=" + std::to_string(p.C) +
                          " != kernel channels C=" + std::to_string(k.dim(1)));
    if (b.dim(0) != p.O)
        throw TensorError("conv2d: bias extent " + std::to_string(b.dim(0)) +
                          " != output channels O=" + std::to_string(p.O));
    if (stride < 1) throw TensorError("conv2d: stride must be positive");
    if (pad < 0) throw TensorError("conv2d: padding must be non-negative");
    p.OH = (p.H + 2 * pad - p.kh) / stride + 1;
    p.OW = (p.W + 2 * pad - p.kw) / stride + 1;
    if (p.H + 2 * pad < p.kh || p.W + 2 * pad < p.kw)
        throw TensorError("conv2d: kernel " + std::to_string(p.kh) + "x" + std::to_string(p.kw) +
                          " larger than padded input " + std::to_string(p.H + 2 * pad) + "x" +
                          std::to_string(p.W + 2 * pad));
    return p;
}

// Unpack one sample's receptive fields into cols[C*kh*kw, OH*OW].
inline void im2col(const ConvPlan& p, const double* x, double* cols) {
    const int T = p.OH * p.OW;
    for (int c = 0; c < p.C; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * p.H * p.W;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj) {
                double* row = cols + (static_cast<std::size_t>(c) * p.kh * p.kw +
                                      static_cast<std::size_t>(ki) * p.kw + kj) * T;
                for (int oy = 0; oy < p.OH; ++oy) {
                    const int iy = oy * p.stride - p.pad + ki;
                    double* dst = row + static_cast<std::size_t>(oy) * p.OW;
                    if (iy < 0 || iy >= p.H) {
                        std::fill(dst, dst + p.OW, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * p.W;
                    for (int ox = 0; ox < p.OW; ++ox) {
                        const int ix = ox * p.stride - p.pad + kj;
                        dst[ox] = (ix >= 0 && ix < p.W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add cols gradients back onto one sample's input gradient.
inline void col2im_acc(const ConvPlan& p, const double* cols, double* gx) {
    const int T = p.OH * p.OW;
    for (int c = 0; c < p.C; ++c) {
        double* gc = gx + static_cast<std::size_t>(c) * p.H * p.W;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj) {
                const double* row = cols + (static_cast<std::size_t>(c) * p.kh * p.kw +
                                            static_cast<std::size_t>(ki) * p.kw + kj) * T;
                for (int oy = 0; oy < p.OH; ++oy) {
                    const int iy = oy * p.stride - p.pad + ki;
                    if (iy < 0 || iy >= p.H) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * p.OW;
                    double* dst = gc + static_cast<std::size_t>(iy) * p.W;
                    for (int ox = 0; ox < p.OW; ++ox) {
                        const int ix = ox * p.stride - p.pad + kj;
                        if (ix >= 0 && ix < p.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// 2-d cross-correlation (deep-learning convolution, no kernel flip),
/// differentiable w.r.t. input, kernel, and bias. im2col + GEMM; the column
/// matrix is recomputed in backward rather than stored.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                     int padding) {
    const auto p = detail::conv_plan(x, kernel, bias, stride, padding);
    const int R = p.C * p.kh * p.kw;
    const int T = p.OH * p.OW;
    std::vector<double> cols(static_cast<std::size_t>(R) * T);
    std::vector<double> out(static_cast<std::size_t>(p.N) * p.O * T);
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    const auto& bv = bias.values();
    for (int n = 0; n < p.N; ++n) {
        detail::im2col(p, xv.data() + static_cast<std::size_t>(n) * p.C * p.H * p.W, cols.data());
        double* om = out.data() + static_cast<std::size_t>(n) * p.O * T;
        for (int o = 0; o < p.O; ++o)
            std::fill(om + static_cast<std::size_t>(o) * T, om + static_cast<std::size_t>(o + 1) * T,
                      bv[o]);
        detail::gemm_nn_acc(p.O, R, T, kv.data(), cols.data(), om);
    }
    return Tensor::make(
        {p.N, p.O, p.OH, p.OW}, std::move(out), {x, kernel, bias}, [p, R, T](detail::Node& n) {
            auto& xn = *n.parents[0];
            auto& kn = *n.parents[1];
            auto& bn = *n.parents[2];
            const auto& g = n.grad;
            std::vector<double> cols;
            std::vector<double> gcols;
            if (kn.requires_grad || xn.requires_grad) cols.resize(static_cast<std::size_t>(R) * T);
            if (xn.requires_grad) gcols.resize(static_cast<std::size_t>(R) * T);
            for (int b = 0; b < p.N; ++b) {
                const double* gm = g.data() + static_cast<std::size_t>(b) * p.O * T;
                if (bn.requires_grad) {
                    auto& bg = detail::grad_of(bn);
                    for (int o = 0; o < p.O; ++o) {
                        double acc = 0.0;
                        const double* row = gm + static_cast<std::size_t>(o) * T;
                        for (int t = 0; t < T; ++t) acc += row[t];
                        bg[o] += acc;
                    }
                }
                if (kn.requires_grad || xn.requires_grad)
                    detail::im2col(p, xn.value.data() + static_cast<std::size_t>(b) * p.C * p.H * p.W,
                                   cols.data());
                if (kn.requires_grad) {
                    auto& kg = detail::grad_of(kn);
                    detail::gemm_nt_acc(p.O, T, R, gm, cols.data(), kg.data()); // gK += g * cols^T
                }
                if (xn.requires_grad) {
                    std::fill(gcols.begin(), gcols.end(), 0.0);
                    detail::gemm_tn_acc(R, p.O, T, kn.value.data(), gm, gcols.data()); // K^T * g
                    auto& xg = detail::grad_of(xn);
                    detail::col2im_acc(p, gcols.data(),
                                       xg.data() + static_cast<std::size_t>(b) * p.C * p.H * p.W);
                }
            }
        });
}

inline Tensor conv2d(const Tensor& x, const Conv2dParams& params) {
    return conv2d(x, params.kernel, params.bias, params.stride, params.padding);
}

/// Non-padded average pooling with window k and step `stride`; windows always
/// lie fully inside the input.
inline Tensor avg_pool2d(const Tensor& x, int k, int stride) {
    detail::expect_rank(x, 4, "avg_pool2d");
    if (k < 1 || stride < 1) throw TensorError("avg_pool2d: window and stride must be positive");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < k || W < k)
        throw TensorError("avg_pool2d: window " + std::to_string(k) + " exceeds input " +
                          std::to_string(H) + "x" + std::to_string(W));
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    const double inv = 1.0 / (static_cast<double>(k) * k);
    std::vector<double> out(static_cast<std::size_t>(N) * C * OH * OW);
    const auto& xv = x.values();
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane = xv.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = 0.0;
                    for (int i = 0; i < k; ++i) {
                        const double* row = plane + static_cast<std::size_t>(oy * stride + i) * W +
                                            ox * stride;
                        for (int j = 0; j < k; ++j) acc += row[j];
                    }
                    out[oi++] = acc * inv;
                }
        }
    return Tensor::make({N, C, OH, OW}, std::move(out), {x},
                        [N, C, H, W, OH, OW, k, stride, inv](detail::Node& n) {
                            auto& pg = detail::grad_of(*n.parents[0]);
                            std::size_t gi = 0;
                            for (int b = 0; b < N; ++b)
                                for (int c = 0; c < C; ++c) {
                                    double* plane =
                                        pg.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                                    for (int oy = 0; oy < OH; ++oy)
                                        for (int ox = 0; ox < OW; ++ox) {
                                            const double g = n.grad[gi++] * inv;
                                            for (int i = 0; i < k; ++i) {
                                                double* row =
                                                    plane +
                                                    static_cast<std::size_t>(oy * stride + i) * W +
                                                    ox * stride;
                                                for (int j = 0; j < k; ++j) row[j] += g;
                                            }
                                        }
                                }
                        });
}

namespace detail {
struct LerpTap {
    int i0, i1;
    double w0, w1;
};

// align_corners=false sampling grid, clamped to the valid range.
inline std::vector<LerpTap> bilinear_taps(int in, int out) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > in - 1) src = in - 1;
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const double w1 = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
}
} // namespace detail

/// Bilinear resampling (align_corners=false). Resizing to the input size is
/// the identity.
inline Tensor resize_bilinear(const Tensor& x, int outH, int outW) {
    detail::expect_rank(x, 4, "resize_bilinear");
    if (outH < 1 || outW < 1)
        throw TensorError("resize_bilinear: target extent " + std::to_string(outH) + "x" +
                          std::to_string(outW) + " must be at least 1x1");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = detail::bilinear_taps(H, outH);
    const auto tx = detail::bilinear_taps(W, outW);
    std::vector<double> out(static_cast<std::size_t>(N) * C * outH * outW);
    const auto& xv = x.values();
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane = xv.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < outH; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < outW; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    out[oi++] = a.w0 * (b.w0 * plane[static_cast<std::size_t>(a.i0) * W + b.i0] +
                                        b.w1 * plane[static_cast<std::size_t>(a.i0) * W + b.i1]) +
                                a.w1 * (b.w0 * plane[static_cast<std::size_t>(a.i1) * W + b.i0] +
                                        b.w1 * plane[static_cast<std::size_t>(a.i1) * W + b.i1]);
                }
            }
        }
    return Tensor::make({N, C, outH, outW}, std::move(out), {x},
                        [N, C, H, W, outH, outW, ty, tx](detail::Node& n) {
                            auto& pg = detail::grad_of(*n.parents[0]);
                            std::size_t gi = 0;
                            for (int b = 0; b < N; ++b)
                                for (int c = 0; c < C; ++c) {
                                    double* plane =
                                        pg.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                                    for (int oy = 0; oy < outH; ++oy) {
                                        const auto& a = ty[static_cast<std::size_t>(oy)];
                                        for (int ox = 0; ox < outW; ++ox) {
                                            const auto& t = tx[static_cast<std::size_t>(ox)];
                                            const double g = n.grad[gi++];
                                            plane[static_cast<std::size_t>(a.i0) * W + t.i0] +=
                                                g * a.w0 * t.w0;
                                            plane[static_cast<std::size_t>(a.i0) * W + t.i1] +=
                                                g * a.w0 * t.w1;
                                            plane[static_cast<std::size_t>(a.i1) * W + t.i0] +=
                                                g * a.w1 * t.w0;
                                            plane[static_cast<std::size_t>(a.i1) * W + t.i1] +=
                                                g * a.w1 * t.w1;
                                        }
                                    }
                                }
                        });
}

// ---------------------------------------------------------------------------
// similarity ops
// ---------------------------------------------------------------------------

/// Cosine similarity over the trailing axis. Zero vectors are guarded by
/// eps: denom = max(|a|,eps) * max(|b|,eps).
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-8) {
    detail::check_same_shape(a, b, "cosine_similarity");
    if (eps <= 0.0) throw TensorError("cosine_similarity: eps must be positive");
    const auto& s = a.shape();
    const int C = s.back();
    const std::size_t rows = a.numel() / static_cast<std::size_t>(C);
    std::vector<int> out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(rows);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* pa = av.data() + r * C;
        const double* pb = bv.data() + r * C;
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (int c = 0; c < C; ++c) {
            dot += pa[c] * pb[c];
            na2 += pa[c] * pa[c];
            nb2 += pb[c] * pb[c];
        }
        out[r] = dot / (std::max(std::sqrt(na2), eps) * std::max(std::sqrt(nb2), eps));
    }
    return Tensor::make(std::move(out_shape), std::move(out), {a, b}, [C, rows, eps](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        const bool ga = n.parents[0]->requires_grad;
        const bool gb = n.parents[1]->requires_grad;
        auto* pga = ga ? &detail::grad_of(*n.parents[0]) : nullptr;
        auto* pgb = gb ? &detail::grad_of(*n.parents[1]) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = n.grad[r];
            if (g == 0.0) continue;
            const double* pa = av.data() + r * C;
            const double* pb = bv.data() + r * C;
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (int c = 0; c < C; ++c) {
                dot += pa[c] * pb[c];
                na2 += pa[c] * pa[c];
                nb2 += pb[c] * pb[c];
            }
            const double na_raw = std::sqrt(na2), nb_raw = std::sqrt(nb2);
            const double na = std::max(na_raw, eps), nb = std::max(nb_raw, eps);
            const double inv = 1.0 / (na * nb);
            if (ga) {
                double* d = pga->data() + r * C;
                // d/da of |a| vanishes when the norm is clamped at eps
                const double t = na_raw > eps ? dot / (na2 * na * nb) : 0.0;
                for (int c = 0; c < C; ++c) d[c] += g * (pb[c] * inv - t * pa[c]);
            }
            if (gb) {
                double* d = pgb->data() + r * C;
                const double t = nb_raw > eps ? dot / (nb2 * nb * na) : 0.0;
                for (int c = 0; c < C; ++c) d[c] += g * (pa[c] * inv - t * pb[c]);
            }
        }
    });
}

/// Row-wise L2 normalization of an [n,C] matrix: row / max(|row|, eps).
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-8) {
    detail::expect_rank(a, 2, "l2_normalize_rows");
    if (eps <= 0.0) throw TensorError("l2_normalize_rows: eps must be positive");
    const int rows = a.dim(0), C = a.dim(1);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (int r = 0; r < rows; ++r) {
        const double* p = av.data() + static_cast<std::size_t>(r) * C;
        double n2 = 0.0;
        for (int c = 0; c < C; ++c) n2 += p[c] * p[c];
        const double inv = 1.0 / std::max(std::sqrt(n2), eps);
        double* o = out.data() + static_cast<std::size_t>(r) * C;
        for (int c = 0; c < C; ++c) o[c] = p[c] * inv;
    }
    return Tensor::make(a.shape(), std::move(out), {a}, [rows, C, eps](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        auto& pg = detail::grad_of(*n.parents[0]);
        for (int r = 0; r < rows; ++r) {
            const double* p = av.data() + static_cast<std::size_t>(r) * C;
            const double* g = n.grad.data() + static_cast<std::size_t>(r) * C;
            double* d = pg.data() + static_cast<std::size_t>(r) * C;
            double n2 = 0.0, dotg = 0.0;
            for (int c = 0; c < C; ++c) {
                n2 += p[c] * p[c];
                dotg += p[c] * g[c];
            }
            const double nr = std::sqrt(n2);
            if (nr > eps) {
                const double inv = 1.0 / nr, inv3 = inv * inv * inv;
                for (int c = 0; c < C; ++c) d[c] += g[c] * inv - p[c] * dotg * inv3;
            } else {
                const double inv = 1.0 / eps; // below eps the map is linear
                for (int c = 0; c < C; ++c) d[c] += g[c] * inv;
            }
        }
    });
}

/// Multiply every element by a 1-element tensor (broadcast scalar).
inline Tensor mul_bscalar(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1)
        throw TensorError("mul_bscalar: scalar operand has shape " + detail::shape_str(s.shape()));
    const double sv = s.values()[0];
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sv;
    return Tensor::make(a.shape(), std::move(out), {a, s}, [sv](detail::Node& n) {
        const auto& av = n.parents[0]->value;
        if (n.parents[0]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] * sv;
        }
        if (n.parents[1]->requires_grad) {
            auto& pg = detail::grad_of(*n.parents[1]);
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * av[i];
            pg[0] += acc;
        }
    });
}

/// 1/x on a 1-element tensor.
inline Tensor reciprocal(const Tensor& s) {
    if (s.numel() != 1)
        throw TensorError("reciprocal: expected scalar, got " + detail::shape_str(s.shape()));
    const double v = s.values()[0];
    return Tensor::make(s.shape(), {1.0 / v}, {s}, [v](detail::Node& n) {
        auto& pg = detail::grad_of(*n.parents[0]);
        pg[0] -= n.grad[0] / (v * v);
    });
}

} // namespace austkit
