#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace grit {

// Reverse-mode autodiff over dense row-major double tensors. Graphs are
// built eagerly by the free-function ops below; backward() on a scalar root
// walks the graph once in reverse topological order. Single-threaded per
// graph; completed values may be read concurrently.

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily during backward / accumulation
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this->grad, accumulates into parents' grads.
    std::function<void(TensorNode&)> backward_fn;
    bool backward_ran = false;
    int topo_mark = 0;  // scratch for traversal
};

std::size_t numel(const std::vector<std::size_t>& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t size() const { return n_->data.size(); }
    std::size_t rows() const;  // first extent of a 2-D tensor
    std::size_t cols() const;  // second extent of a 2-D tensor

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_mut();

    // Backpropagate from a scalar root. Throws usage_error on a non-scalar
    // root or when called twice on the same root without zero_grad.
    void backward() const;
    void zero_grad();

    // Value-only copy detached from the graph.
    Tensor detach() const;

    const std::shared_ptr<TensorNode>& node() const { return n_; }

private:
    std::shared_ptr<TensorNode> n_;
};

// Thread-local grad-mode switch. Ops record no graph while disabled.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Elementwise (shapes must match exactly; no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);

// Linear algebra on 2-D tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Softmax / log-sum-exp along the last axis (leading axes treated as rows).
Tensor softmax(const Tensor& x);
Tensor logsumexp(const Tensor& x);

// RMS normalization of each row of x by 1/sqrt(mean(x^2)+eps), times gain.
// Mean-square accumulated in long double.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

// Rotary position embedding over the rows of a T x d_head block; row t gets
// position start_pos + t. d_head must be even.
Tensor rope(const Tensor& x, std::size_t start_pos, double base = 10000.0);

// Row gather from an embedding table with scatter-add backward.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Per-position -log softmax(logits)[target]; aggregation is the caller's.
Tensor cross_entropy_per_token(const Tensor& logits, const std::vector<int>& targets);

// cos(a, b) over 1-D tensors, accumulated in long double. Rejects zero vectors.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Weighted reductions against constant weights.
Tensor pool_rows(const Tensor& hidden, const std::vector<double>& weights);   // -> [d]
Tensor weighted_sum(const Tensor& x, const std::vector<double>& weights);     // -> scalar

Tensor stack_scalars(const std::vector<Tensor>& xs);
Tensor sum_all(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor gather(const Tensor& x, const std::vector<std::size_t>& idx);  // 1-D gather

}  // namespace grit
