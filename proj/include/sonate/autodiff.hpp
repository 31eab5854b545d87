#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <vector>

#include "sonate/errors.hpp"
#include "sonate/linalg.hpp"

// Minimal reverse-mode automatic differentiation over dense matrices.
// Each op allocates a Node holding its value and a closure that pushes the
// incoming adjoint to its parents. backward() walks reachable nodes in
// reverse creation order, which is a valid topological order because parents
// are always created before children.
namespace sonate::ad {

class Node;
using Value = std::shared_ptr<Node>;

class Node {
public:
    Mat val;
    Mat grad;  // empty until touched by backward()
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents
    std::uint64_t id = 0;

    void ensure_grad() {
        if (grad.rows() != val.rows() || grad.cols() != val.cols())
            grad = Mat::Zero(val.rows(), val.cols());
    }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

inline Value make_node(Mat value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    n->id = next_node_id();
    return n;
}

// Leaf that never receives gradient.
inline Value constant(Mat value) { return make_node(std::move(value), false); }

// Trainable leaf; persists across steps, grad accumulates until zeroed.
inline Value param(Mat value) { return make_node(std::move(value), true); }

inline Value make_op(Mat value, std::vector<Value> parents, std::function<void(Node&)> backprop) {
    bool needs = false;
    for (const auto& p : parents) needs |= p->requires_grad;
    auto n = make_node(std::move(value), needs);
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
    require(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), Errc::ShapeMismatch,
            "add: operand shapes differ");
    return make_op(a->val + b->val, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad;
        }
    });
}

inline Value sub(const Value& a, const Value& b) {
    require(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), Errc::ShapeMismatch,
            "sub: operand shapes differ");
    return make_op(a->val - b->val, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad -= n.grad;
        }
    });
}

inline Value mul(const Value& a, const Value& b) {
    require(a->val.rows() == b->val.rows() && a->val.cols() == b->val.cols(), Errc::ShapeMismatch,
            "mul: operand shapes differ");
    return make_op(a->val.cwiseProduct(b->val), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->val);
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->val);
        }
    });
}

inline Value scale(const Value& a, double s) {
    return make_op(a->val * s, {a}, [s](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad * s;
        }
    });
}

// Adds a 1 x D row vector to every row of a (L x D).
inline Value add_row(const Value& a, const Value& row) {
    require(row->val.rows() == 1 && row->val.cols() == a->val.cols(), Errc::ShapeMismatch,
            "add_row: row must be 1 x cols(a)");
    Mat out = a->val;
    out.rowwise() += row->val.row(0);
    return make_op(std::move(out), {a, row}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

// ---------------------------------------------------------------------------
// matmul with optional transposes
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b, bool trans_a = false, bool trans_b = false) {
    const Eigen::Index inner_a = trans_a ? a->val.rows() : a->val.cols();
    const Eigen::Index inner_b = trans_b ? b->val.cols() : b->val.rows();
    require(inner_a == inner_b, Errc::ShapeMismatch, "matmul: inner dimensions differ");
    Mat out;
    if (!trans_a && !trans_b) out = a->val * b->val;
    else if (trans_a && !trans_b) out = a->val.transpose() * b->val;
    else if (!trans_a && trans_b) out = a->val * b->val.transpose();
    else out = a->val.transpose() * b->val.transpose();
    return make_op(std::move(out), {a, b}, [trans_a, trans_b](Node& n) {
        const Mat& g = n.grad;
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            if (!trans_a && !trans_b) pa.grad += g * pb.val.transpose();
            else if (trans_a && !trans_b) pa.grad += pb.val * g.transpose();
            else if (!trans_a && trans_b) pa.grad += g * pb.val;
            else pa.grad += pb.val.transpose() * g.transpose();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            if (!trans_a && !trans_b) pb.grad += pa.val.transpose() * g;
            else if (trans_a && !trans_b) pb.grad += pa.val * g;
            else if (!trans_a && trans_b) pb.grad += g.transpose() * pa.val;
            else pb.grad += g.transpose() * pa.val.transpose();
        }
    });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

inline Value concat_rows(const std::vector<Value>& parts) {
    require(!parts.empty(), Errc::EmptyInput, "concat_rows: no parts");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front()->val.cols();
    for (const auto& p : parts) {
        require(p->val.cols() == cols, Errc::ShapeMismatch, "concat_rows: column widths differ");
        rows += p->val.rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p->val.rows()) = p->val;
        r += p->val.rows();
    }
    return make_op(std::move(out), parts, [](Node& n) {
        Eigen::Index r = 0;
        for (auto& p : n.parents) {
            const Eigen::Index h = p->val.rows();
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(r, h);
            }
            r += h;
        }
    });
}

inline Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a->val.rows(), Errc::ShapeMismatch,
            "slice_rows: range out of bounds");
    return make_op(a->val.middleRows(start, count), {a}, [start, count](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.middleRows(start, count) += n.grad;
        }
    });
}

inline Value slice_cols(const Value& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a->val.cols(), Errc::ShapeMismatch,
            "slice_cols: range out of bounds");
    return make_op(a->val.middleCols(start, count), {a}, [start, count](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.middleCols(start, count) += n.grad;
        }
    });
}

inline Value concat_cols(const std::vector<Value>& parts) {
    require(!parts.empty(), Errc::EmptyInput, "concat_cols: no parts");
    const Eigen::Index rows = parts.front()->val.rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        require(p->val.rows() == rows, Errc::ShapeMismatch, "concat_cols: row counts differ");
        cols += p->val.cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p->val.cols()) = p->val;
        c += p->val.cols();
    }
    return make_op(std::move(out), parts, [](Node& n) {
        Eigen::Index c = 0;
        for (auto& p : n.parents) {
            const Eigen::Index w = p->val.cols();
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(c, w);
            }
            c += w;
        }
    });
}

// Selects rows of an embedding table; gradient scatter-adds back.
inline Value gather_rows(const Value& table, const std::vector<int>& ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), table->val.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < table->val.rows(), Errc::ShapeMismatch,
                "gather_rows: id out of range");
        out.row(static_cast<Eigen::Index>(i)) = table->val.row(ids[i]);
    }
    return make_op(std::move(out), {table}, [ids](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            n.parents[0]->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization
// ---------------------------------------------------------------------------

// Exact GELU: x * Phi(x).
inline Value gelu(const Value& a) {
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    Mat out = a->val.unaryExpr([inv_sqrt2](double x) {
        return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    });
    return make_op(std::move(out), {a}, [inv_sqrt2](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const Mat& x = n.parents[0]->val;
        Mat d = x.unaryExpr([inv_sqrt2, inv_sqrt2pi](double v) {
            const double phi_cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double phi_pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return phi_cdf + v * phi_pdf;
        });
        n.parents[0]->grad += n.grad.cwiseProduct(d);
    });
}

inline Value tanh_op(const Value& a) {
    Mat out = a->val.array().tanh();
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.array() += n.grad.array() * (1.0 - n.val.array().square());
    });
}

// Row-wise softmax with max subtraction.
inline Value softmax_rows(const Value& a) {
    Mat out = a->val;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double m = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        for (Eigen::Index i = 0; i < n.val.rows(); ++i) {
            const auto y = n.val.row(i).array();
            const auto g = n.grad.row(i).array();
            const double dot = (g * y).sum();
            n.parents[0]->grad.row(i).array() += (g - dot) * y;
        }
    });
}

// Per-row layer norm with learnable gain/bias (1 x D each).
inline Value layer_norm(const Value& a, const Value& gain, const Value& bias, double eps = 1e-5) {
    const Eigen::Index cols = a->val.cols();
    require(gain->val.rows() == 1 && gain->val.cols() == cols, Errc::ShapeMismatch, "layer_norm gain");
    require(bias->val.rows() == 1 && bias->val.cols() == cols, Errc::ShapeMismatch, "layer_norm bias");
    Mat xhat(a->val.rows(), cols);
    std::vector<double> inv_std(static_cast<std::size_t>(a->val.rows()));
    for (Eigen::Index i = 0; i < a->val.rows(); ++i) {
        const double mean = a->val.row(i).mean();
        const double var = (a->val.row(i).array() - mean).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        xhat.row(i) = (a->val.row(i).array() - mean) * is;
    }
    Mat out = xhat;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        out.row(i) = out.row(i).cwiseProduct(gain->val.row(0)) + bias->val.row(0);
    return make_op(std::move(out), {a, gain, bias},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        Node& pa = *n.parents[0];
        Node& pg = *n.parents[1];
        Node& pb = *n.parents[2];
        const Eigen::Index d = pa.val.cols();
        if (pg.requires_grad) {
            pg.ensure_grad();
            pg.grad.row(0) += (n.grad.cwiseProduct(xhat)).colwise().sum();
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            pb.grad.row(0) += n.grad.colwise().sum();
        }
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (Eigen::Index i = 0; i < pa.val.rows(); ++i) {
                // d xhat pulled through gain, then standard layernorm backward.
                const auto gy = (n.grad.row(i).cwiseProduct(pg.val.row(0))).array();
                const auto xh = xhat.row(i).array();
                const double mean_gy = gy.mean();
                const double mean_gy_xh = (gy * xh).mean();
                pa.grad.row(i).array() +=
                    inv_std[static_cast<std::size_t>(i)] * (gy - mean_gy - xh * mean_gy_xh);
                (void)d;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// rotary position embedding
// ---------------------------------------------------------------------------

// Rotates consecutive coordinate pairs (x[2k], x[2k+1]) of each row by
// angle position * theta_k, theta_k = base^(-2k / width). Linear and
// orthogonal, so the backward pass is rotation by the negated angle.
inline Mat rope_rotate_mat(const Mat& x, const std::vector<long>& positions, double base,
                           bool invert = false) {
    require(x.cols() % 2 == 0, Errc::OddHeadWidth, "rope: head width must be even");
    require(static_cast<Eigen::Index>(positions.size()) == x.rows(), Errc::ShapeMismatch,
            "rope: positions size must equal row count");
    const Eigen::Index half = x.cols() / 2;
    Mat out(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < half; ++k) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(x.cols()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double angle = static_cast<double>(positions[static_cast<std::size_t>(i)]) * theta;
            if (invert) angle = -angle;
            const double c = std::cos(angle), s = std::sin(angle);
            const double x0 = x(i, 2 * k), x1 = x(i, 2 * k + 1);
            out(i, 2 * k) = c * x0 - s * x1;
            out(i, 2 * k + 1) = s * x0 + c * x1;
        }
    }
    return out;
}

inline Value rope(const Value& a, std::vector<long> positions, double base) {
    Mat out = rope_rotate_mat(a->val, positions, base);
    return make_op(std::move(out), {a}, [positions = std::move(positions), base](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += rope_rotate_mat(n.grad, positions, base, /*invert=*/true);
    });
}

// ---------------------------------------------------------------------------
// reductions and losses (all produce 1 x 1 nodes)
// ---------------------------------------------------------------------------

inline Value mean_rows(const Value& a) {
    require(a->val.rows() > 0, Errc::EmptyInput, "mean_rows: empty input");
    Mat out = a->val.colwise().mean();
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(n.parents[0]->val.rows());
        n.parents[0]->grad += inv * (Mat::Ones(n.parents[0]->val.rows(), 1) * n.grad.row(0));
    });
}

// mean((a - target)^2) over all elements.
inline Value mse_against(const Value& a, const Mat& target) {
    require(a->val.rows() == target.rows() && a->val.cols() == target.cols(), Errc::ShapeMismatch,
            "mse_against: shapes differ");
    Mat out(1, 1);
    out(0, 0) = (a->val - target).array().square().mean();
    return make_op(std::move(out), {a}, [target](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        const double inv = 2.0 / static_cast<double>(target.size());
        n.parents[0]->grad += n.grad(0, 0) * inv * (n.parents[0]->val - target);
    });
}

// Cross-entropy of a 1 x K logit row against class index `target`.
inline Value softmax_xent(const Value& logits, int target) {
    require(logits->val.rows() == 1, Errc::ShapeMismatch, "softmax_xent: expects a single row");
    require(target >= 0 && target < logits->val.cols(), Errc::ShapeMismatch, "softmax_xent: bad target");
    const double m = logits->val.row(0).maxCoeff();
    const double lse = m + std::log((logits->val.row(0).array() - m).exp().sum());
    Mat out(1, 1);
    out(0, 0) = lse - logits->val(0, target);
    return make_op(std::move(out), {logits}, [target, lse](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        Mat p = (n.parents[0]->val.row(0).array() - lse).exp();
        p(0, target) -= 1.0;
        n.parents[0]->grad.row(0) += n.grad(0, 0) * p.row(0);
    });
}

// Normalizes a 1 x D row to unit Euclidean norm.
inline Value l2_normalize_row(const Value& a) {
    require(a->val.rows() == 1, Errc::ShapeMismatch, "l2_normalize_row: expects a single row");
    const double norm = a->val.row(0).norm();
    require(norm > 0.0, Errc::ZeroVector, "l2_normalize_row: zero vector");
    Mat out = a->val / norm;
    return make_op(std::move(out), {a}, [norm](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->ensure_grad();
        const auto y = n.val.row(0);
        const double dot = n.grad.row(0).dot(y);
        n.parents[0]->grad.row(0) += (n.grad.row(0) - dot * y) / norm;
    });
}

inline Value add_scalars(const std::vector<Value>& terms) {
    require(!terms.empty(), Errc::EmptyInput, "add_scalars: no terms");
    Mat out = Mat::Zero(1, 1);
    for (const auto& t : terms) {
        require(t->val.rows() == 1 && t->val.cols() == 1, Errc::ShapeMismatch, "add_scalars: non-scalar");
        out(0, 0) += t->val(0, 0);
    }
    return make_op(std::move(out), terms, [](Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad(0, 0) += n.grad(0, 0);
        }
    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
// root must be 1 x 1; its seed gradient is 1.
inline void backward(const Value& root) {
    require(root->val.rows() == 1 && root->val.cols() == 1, Errc::ShapeMismatch,
            "backward: root must be scalar");
    // Collect reachable grad-requiring nodes; reverse creation order is a
    // topological order since parents predate children.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad(0, 0) += 1.0;
    for (Node* n : order) {
        if (!n->backprop) continue;
        n->ensure_grad();
        n->backprop(*n);
    }
}

inline void zero_grad(const std::vector<Value>& params) {
    for (const auto& p : params) p->grad = Mat();
}

}  // namespace sonate::ad
