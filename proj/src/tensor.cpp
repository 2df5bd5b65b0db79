#include "grit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grit/errors.hpp"

namespace grit {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void ensure_grad(TensorNode& n) {
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
}

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape, std::vector<double> data) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void attach(const std::shared_ptr<TensorNode>& out, std::initializer_list<const Tensor*> inputs,
            std::function<void(TensorNode&)> fn) {
    if (!track(inputs)) return;
    out->requires_grad = true;
    for (const Tensor* t : inputs) out->parents.push_back(t->node());
    out->backward_fn = std::move(fn);
}

}  // namespace

std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(n, 0.0));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (numel(shape) != data.size())
        throw shape_error("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto node = make_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (n_->shape.size() != 2) throw shape_error("rows() requires a 2-D tensor");
    return n_->shape[0];
}

std::size_t Tensor::cols() const {
    if (n_->shape.size() != 2) throw shape_error("cols() requires a 2-D tensor");
    return n_->shape[1];
}

double Tensor::item() const {
    if (n_->data.size() != 1) throw usage_error("item() requires a single-element tensor");
    return n_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return n_->data[r * cols() + c]; }

const std::vector<double>& Tensor::grad() const {
    if (n_->grad.empty()) throw usage_error("tensor has no gradient; call backward first");
    return n_->grad;
}

std::vector<double>& Tensor::grad_mut() {
    ensure_grad(*n_);
    return n_->grad;
}

void Tensor::zero_grad() {
    n_->grad.assign(n_->data.size(), 0.0);
    n_->backward_ran = false;
}

Tensor Tensor::detach() const {
    return Tensor(make_node(n_->shape, n_->data));
}

void Tensor::backward() const {
    if (n_->data.size() != 1)
        throw usage_error("backward requires a scalar root, got shape " + shape_str(n_->shape));
    if (n_->backward_ran)
        throw usage_error("backward called twice on the same root without zero_grad");
    n_->backward_ran = true;

    // Iterative post-order DFS; fixed visiting order keeps backward
    // bit-deterministic.
    std::vector<TensorNode*> topo;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    n_->topo_mark = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->topo_mark == 0) {
                p->topo_mark = 1;
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorNode* node : topo) node->topo_mark = 0;

    ensure_grad(*n_);
    n_->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) {
            for (auto& p : node->parents)
                if (p->requires_grad) ensure_grad(*p);
            node->backward_fn(*node);
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto node = make_node(a.shape(), std::move(out));
    auto pa = a.node(), pb = b.node();
    attach(node, {&a, &b}, [pa, pb](TensorNode& self) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    });
    return Tensor(node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto node = make_node(a.shape(), std::move(out));
    auto pa = a.node(), pb = b.node();
    attach(node, {&a, &b}, [pa, pb](TensorNode& self) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    });
    return Tensor(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto node = make_node(a.shape(), std::move(out));
    auto pa = a.node(), pb = b.node();
    attach(node, {&a, &b}, [pa, pb](TensorNode& self) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->data[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->data[i];
    });
    return Tensor(node);
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto node = make_node(a.shape(), std::move(out));
    auto pa = a.node();
    attach(node, {&a}, [pa, c](TensorNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
    });
    return Tensor(node);
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    auto node = make_node(a.shape(), std::move(out));
    auto pa = a.node();
    attach(node, {&a}, [pa](TensorNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double x = pa->data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// 2-D linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = a.data()[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.data()[p * n + j];
        }
    auto node = make_node({m, n}, std::move(out));
    auto pa = a.node(), pb = b.node();
    attach(node, {&a, &b}, [pa, pb, m, k, n](TensorNode& self) {
        if (pa->requires_grad) {
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += self.grad[i * n + j] * pb->data[p * n + j];
                    pa->grad[i * k + p] += acc;
                }
        }
        if (pb->requires_grad) {
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double av = pa->data[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        pb->grad[p * n + j] += av * self.grad[i * n + j];
                }
        }
    });
    return Tensor(node);
}

Tensor transpose(const Tensor& a) {
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto node = make_node({n, m}, std::move(out));
    auto pa = a.node();
    attach(node, {&a}, [pa, m, n](TensorNode& self) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
    });
    return Tensor(node);
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    std::size_t m = a.rows(), n = a.cols();
    if (r0 > r1 || r1 > m) throw shape_error("slice_rows: bad range");
    std::vector<double> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
    auto node = make_node({r1 - r0, n}, std::move(out));
    auto pa = a.node();
    attach(node, {&a}, [pa, r0, n](TensorNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[r0 * n + i] += self.grad[i];
    });
    return Tensor(node);
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    std::size_t m = a.rows(), n = a.cols();
    if (c0 > c1 || c1 > n) throw shape_error("slice_cols: bad range");
    std::size_t w = c1 - c0;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * n + c0 + j];
    auto node = make_node({m, w}, std::move(out));
    auto pa = a.node();
    attach(node, {&a}, [pa, m, n, c0, w](TensorNode& self) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                pa->grad[i * n + c0 + j] += self.grad[i * w + j];
    });
    return Tensor(node);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: empty input");
    std::size_t n = parts[0].cols(), m = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) throw shape_error("concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto node = make_node({m, n}, std::move(out));

    bool any = false;
    if (g_grad_enabled)
        for (const Tensor& p : parts) any = any || p.requires_grad();
    if (any) {
        node->requires_grad = true;
        std::vector<std::shared_ptr<TensorNode>> ps;
        for (const Tensor& p : parts) {
            node->parents.push_back(p.node());
            ps.push_back(p.node());
        }
        node->backward_fn = [ps](TensorNode& self) {
            std::size_t off = 0;
            for (auto& p : ps) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->data.size(); ++i)
                        p->grad[i] += self.grad[off + i];
                off += p->data.size();
            }
        };
    }
    return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: empty input");
    std::size_t m = parts[0].rows(), n = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) throw shape_error("concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p.data()[i * w + j];
        off += w;
    }
    auto node = make_node({m, n}, std::move(out));

    bool any = false;
    if (g_grad_enabled)
        for (const Tensor& p : parts) any = any || p.requires_grad();
    if (any) {
        node->requires_grad = true;
        std::vector<std::shared_ptr<TensorNode>> ps;
        std::vector<std::size_t> widths;
        for (const Tensor& p : parts) {
            node->parents.push_back(p.node());
            ps.push_back(p.node());
            widths.push_back(p.cols());
        }
        node->backward_fn = [ps, widths, m, n](TensorNode& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < ps.size(); ++k) {
                std::size_t w = widths[k];
                if (ps[k]->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            ps[k]->grad[i * w + j] += self.grad[i * n + off + j];
                off += w;
            }
        };
    }
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Softmax family (last axis)

namespace {

std::pair<std::size_t, std::size_t> row_view(const Tensor& x) {
    if (x.shape().empty()) throw shape_error("softmax/logsumexp: scalar input");
    std::size_t last = x.shape().back();
    return {x.size() / last, last};
}

}  // namespace

Tensor softmax(const Tensor& x) {
    auto [rows, cols] = row_view(x);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double mx = in[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            out[r * cols + j] = std::exp(in[j] - mx);
            sum += out[r * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= sum;
    }
    auto node = make_node(x.shape(), std::move(out));
    auto px = x.node();
    std::size_t R = rows, C = cols;
    attach(node, {&x}, [px, R, C](TensorNode& self) {
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < C; ++j)
                dot += self.grad[r * C + j] * self.data[r * C + j];
            for (std::size_t j = 0; j < C; ++j)
                px->grad[r * C + j] += self.data[r * C + j] * (self.grad[r * C + j] - dot);
        }
    });
    return Tensor(node);
}

Tensor logsumexp(const Tensor& x) {
    auto [rows, cols] = row_view(x);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double mx = in[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) sum += std::exp(in[j] - mx);
        out[r] = mx + std::log(sum);
    }
    std::vector<std::size_t> oshape(x.shape().begin(), x.shape().end() - 1);
    auto node = make_node(std::move(oshape), std::move(out));
    auto px = x.node();
    std::size_t R = rows, C = cols;
    attach(node, {&x}, [px, R, C](TensorNode& self) {
        for (std::size_t r = 0; r < R; ++r) {
            double lse = self.data[r];
            for (std::size_t j = 0; j < C; ++j)
                px->grad[r * C + j] += self.grad[r] * std::exp(px->data[r * C + j] - lse);
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Normalization, rotary embedding

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    if (eps < 0.0) throw config_error("rms_norm: eps must be nonnegative");
    std::size_t m = x.rows(), n = x.cols();
    if (gain.size() != n) throw shape_error("rms_norm: gain length must equal last extent");
    std::vector<double> out(m * n), rinv(m);
    for (std::size_t i = 0; i < m; ++i) {
        long double ms = 0.0L;
        for (std::size_t j = 0; j < n; ++j) {
            long double v = x.data()[i * n + j];
            ms += v * v;
        }
        double r = 1.0 / std::sqrt(static_cast<double>(ms / n) + eps);
        rinv[i] = r;
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = x.data()[i * n + j] * r * gain.data()[j];
    }
    auto node = make_node({m, n}, std::move(out));
    auto px = x.node(), pg = gain.node();
    attach(node, {&x, &gain}, [px, pg, m, n, rinv](TensorNode& self) {
        for (std::size_t i = 0; i < m; ++i) {
            double r = rinv[i];
            double dot = 0.0;  // sum_j dy_j * g_j * x_j
            for (std::size_t j = 0; j < n; ++j)
                dot += self.grad[i * n + j] * pg->data[j] * px->data[i * n + j];
            if (px->requires_grad) {
                double c = r * r * r * dot / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j)
                    px->grad[i * n + j] +=
                        r * pg->data[j] * self.grad[i * n + j] - c * px->data[i * n + j];
            }
            if (pg->requires_grad)
                for (std::size_t j = 0; j < n; ++j)
                    pg->grad[j] += self.grad[i * n + j] * px->data[i * n + j] * r;
        }
    });
    return Tensor(node);
}

Tensor rope(const Tensor& x, std::size_t start_pos, double base) {
    std::size_t t = x.rows(), d = x.cols();
    if (d % 2 != 0) throw shape_error("rope: head dimension must be even");
    std::size_t half = d / 2;
    std::vector<double> cs(t * half), sn(t * half);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t i = 0; i < half; ++i) {
            double theta = static_cast<double>(start_pos + r) *
                           std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            cs[r * half + i] = std::cos(theta);
            sn[r * half + i] = std::sin(theta);
        }
    std::vector<double> out(t * d);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t i = 0; i < half; ++i) {
            double x1 = x.data()[r * d + 2 * i], x2 = x.data()[r * d + 2 * i + 1];
            double c = cs[r * half + i], s = sn[r * half + i];
            out[r * d + 2 * i] = x1 * c - x2 * s;
            out[r * d + 2 * i + 1] = x1 * s + x2 * c;
        }
    auto node = make_node({t, d}, std::move(out));
    auto px = x.node();
    attach(node, {&x}, [px, t, d, half, cs, sn](TensorNode& self) {
        // Rotation is orthonormal; backward rotates the gradient by -theta.
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t i = 0; i < half; ++i) {
                double g1 = self.grad[r * d + 2 * i], g2 = self.grad[r * d + 2 * i + 1];
                double c = cs[r * half + i], s = sn[r * half + i];
                px->grad[r * d + 2 * i] += g1 * c + g2 * s;
                px->grad[r * d + 2 * i + 1] += -g1 * s + g2 * c;
            }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// Lookup, losses, reductions

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw index_error("embedding_rows: token id " + std::to_string(ids[i]) +
                              " out of vocabulary " + std::to_string(v));
        std::copy_n(table.data().begin() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.begin() + i * d);
    }
    auto node = make_node({ids.size(), d}, std::move(out));
    auto pt = table.node();
    attach(node, {&table}, [pt, ids, d](TensorNode& self) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                pt->grad[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
    });
    return Tensor(node);
}

Tensor cross_entropy_per_token(const Tensor& logits, const std::vector<int>& targets) {
    std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t) throw shape_error("cross_entropy_per_token: target count mismatch");
    std::vector<double> out(t), lse(t);
    for (std::size_t r = 0; r < t; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
            throw index_error("cross_entropy_per_token: target " + std::to_string(targets[r]) +
                              " out of vocabulary " + std::to_string(v));
        const double* in = logits.data().data() + r * v;
        double mx = in[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < v; ++j) sum += std::exp(in[j] - mx);
        lse[r] = mx + std::log(sum);
        out[r] = lse[r] - in[static_cast<std::size_t>(targets[r])];
    }
    auto node = make_node({t}, std::move(out));
    auto pl = logits.node();
    attach(node, {&logits}, [pl, targets, t, v, lse](TensorNode& self) {
        for (std::size_t r = 0; r < t; ++r) {
            double g = self.grad[r];
            if (g == 0.0) continue;
            for (std::size_t j = 0; j < v; ++j) {
                double p = std::exp(pl->data[r * v + j] - lse[r]);
                pl->grad[r * v + j] += g * (p - (j == static_cast<std::size_t>(targets[r]) ? 1.0 : 0.0));
            }
        }
    });
    return Tensor(node);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size() || a.size() == 0)
        throw shape_error("cosine_similarity: vectors must have equal nonzero length");
    long double dot = 0.0L, na2 = 0.0L, nb2 = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) {
        long double av = a.data()[i], bv = b.data()[i];
        dot += av * bv;
        na2 += av * av;
        nb2 += bv * bv;
    }
    if (na2 == 0.0L || nb2 == 0.0L)
        throw degenerate_input_error("cosine_similarity: zero vector");
    double na = std::sqrt(static_cast<double>(na2)), nb = std::sqrt(static_cast<double>(nb2));
    double c = static_cast<double>(dot) / (na * nb);
    auto node = make_node({}, {c});
    auto pa = a.node(), pb = b.node();
    attach(node, {&a, &b}, [pa, pb, na, nb, c](TensorNode& self) {
        double g = self.grad[0];
        std::size_t n = pa->data.size();
        if (pa->requires_grad)
            for (std::size_t i = 0; i < n; ++i)
                pa->grad[i] += g * (pb->data[i] / (na * nb) - c * pa->data[i] / (na * na));
        if (pb->requires_grad)
            for (std::size_t i = 0; i < n; ++i)
                pb->grad[i] += g * (pa->data[i] / (na * nb) - c * pb->data[i] / (nb * nb));
    });
    return Tensor(node);
}

Tensor pool_rows(const Tensor& hidden, const std::vector<double>& weights) {
    std::size_t t = hidden.rows(), d = hidden.cols();
    if (weights.size() != t) throw shape_error("pool_rows: weight count must equal row count");
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) {
        long double acc = 0.0L;
        for (std::size_t r = 0; r < t; ++r)
            acc += static_cast<long double>(weights[r]) * hidden.data()[r * d + j];
        out[j] = static_cast<double>(acc);
    }
    auto node = make_node({d}, std::move(out));
    auto ph = hidden.node();
    attach(node, {&hidden}, [ph, weights, t, d](TensorNode& self) {
        for (std::size_t r = 0; r < t; ++r) {
            if (weights[r] == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j)
                ph->grad[r * d + j] += weights[r] * self.grad[j];
        }
    });
    return Tensor(node);
}

Tensor weighted_sum(const Tensor& x, const std::vector<double>& weights) {
    if (weights.size() != x.size()) throw shape_error("weighted_sum: weight count mismatch");
    long double acc = 0.0L;
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += static_cast<long double>(weights[i]) * x.data()[i];
    auto node = make_node({}, {static_cast<double>(acc)});
    auto px = x.node();
    attach(node, {&x}, [px, weights](TensorNode& self) {
        for (std::size_t i = 0; i < weights.size(); ++i)
            px->grad[i] += weights[i] * self.grad[0];
    });
    return Tensor(node);
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw shape_error("stack_scalars: empty input");
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].item();
    auto node = make_node({xs.size()}, std::move(out));
    bool any = false;
    if (g_grad_enabled)
        for (const Tensor& x : xs) any = any || x.requires_grad();
    if (any) {
        node->requires_grad = true;
        std::vector<std::shared_ptr<TensorNode>> ps;
        for (const Tensor& x : xs) {
            node->parents.push_back(x.node());
            ps.push_back(x.node());
        }
        node->backward_fn = [ps](TensorNode& self) {
            for (std::size_t i = 0; i < ps.size(); ++i)
                if (ps[i]->requires_grad) ps[i]->grad[0] += self.grad[i];
        };
    }
    return Tensor(node);
}

Tensor sum_all(const Tensor& a) {
    long double acc = 0.0L;
    for (double v : a.data()) acc += v;
    auto node = make_node({}, {static_cast<double>(acc)});
    auto pa = a.node();
    attach(node, {&a}, [pa](TensorNode& self) {
        for (std::size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += self.grad[0];
    });
    return Tensor(node);
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (numel(shape) != a.size())
        throw shape_error("reshape: element count mismatch");
    auto node = make_node(std::move(shape), a.data());
    auto pa = a.node();
    attach(node, {&a}, [pa](TensorNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
    return Tensor(node);
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.size()) throw index_error("gather: index out of range");
        out[i] = x.data()[idx[i]];
    }
    auto node = make_node({idx.size()}, std::move(out));
    auto px = x.node();
    attach(node, {&x}, [px, idx](TensorNode& self) {
        for (std::size_t i = 0; i < idx.size(); ++i) px->grad[idx[i]] += self.grad[i];
    });
    return Tensor(node);
}

}  // namespace grit
