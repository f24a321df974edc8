#include "mates/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kernel.hpp"
#include "mates/error.hpp"

namespace mates {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;

std::int64_t product(const std::vector<std::int64_t>& shape) {
    std::int64_t p = 1;
    for (auto d : shape) p *= d;
    return p;
}

void require_matrix(const Tensor& t, const char* op) {
    if (!t.is_matrix())
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t));
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape_, double fill)
    : shape(std::move(shape_)), data(static_cast<std::size_t>(product(shape)), fill) {
    for (auto d : shape)
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(*this));
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::vec(std::int64_t n, double fill) { return Tensor({n}, fill); }

Tensor Tensor::matrix(std::int64_t r, std::int64_t c, double fill) { return Tensor({r, c}, fill); }

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

std::int64_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return shape[0];
}

std::int64_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return shape[1];
}

double& Tensor::at(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
}

double Tensor::at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "x" : "") << t.shape[i];
    os << "]";
    return os.str();
}

void Node::ensure_grad() {
    if (grad.data.empty()) grad = Tensor(value.shape, 0.0);
}

NodeRef Tape::leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    nodes_.push_back(node);
    return node;
}

NodeRef Tape::emplace(Tensor value, std::vector<NodeRef> inputs,
                      std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
    nodes_.push_back(node);
    return node;
}

void Tape::backward(const NodeRef& root) {
    if (root->value.numel() != 1)
        throw ContractError("backward: root must be a scalar, got shape " + shape_str(root->value));
    root->ensure_grad();
    root->grad.data[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.grad.data.empty() || !node.backprop) continue;
        for (auto& in : node.inputs) in->ensure_grad();
        node.backprop(node);
    }
}

namespace {

// Shared transpose scratch; tapes are single-threaded per context, so one
// buffer per thread suffices.
thread_local std::vector<double> tl_scratch_a;
thread_local std::vector<double> tl_scratch_b;
thread_local std::vector<double> tl_scratch_acc;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
}

}  // namespace

NodeRef matmul(Tape& tape, const NodeRef& a, const NodeRef& b) {
    require_matrix(a->value, "matmul");
    require_matrix(b->value, "matmul");
    const std::int64_t m = a->value.shape[0], k = a->value.shape[1];
    const std::int64_t k2 = b->value.shape[0], n = b->value.shape[1];
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a->value) + " vs " +
                             shape_str(b->value));
    Tensor out({m, n});
    kernel::mm(a->value.data.data(), b->value.data.data(), out.data.data(), m, k, n);
    return tape.emplace(std::move(out), {a, b}, [m, k, n](Node& node) {
        const Tensor& g = node.grad;
        Node& na = *node.inputs[0];
        Node& nb = *node.inputs[1];
        // da += g·bᵀ
        tl_scratch_a.resize(static_cast<std::size_t>(n) * k);
        kernel::transpose(nb.value.data.data(), tl_scratch_a.data(), k, n);
        kernel::mm_acc(g.data.data(), tl_scratch_a.data(), na.grad.data.data(), m, n, k,
                       tl_scratch_acc);
        // db += aᵀ·g
        tl_scratch_b.resize(static_cast<std::size_t>(k) * m);
        kernel::transpose(na.value.data.data(), tl_scratch_b.data(), m, k);
        kernel::mm_acc(tl_scratch_b.data(), g.data.data(), nb.grad.data.data(), k, m, n,
                       tl_scratch_acc);
    });
}

NodeRef matmul_nt(Tape& tape, const NodeRef& a, const NodeRef& b) {
    require_matrix(a->value, "matmul_nt");
    require_matrix(b->value, "matmul_nt");
    const std::int64_t m = a->value.shape[0], k = a->value.shape[1];
    const std::int64_t n = b->value.shape[0], k2 = b->value.shape[1];
    if (k != k2)
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a->value) +
                             " vs " + shape_str(b->value) + " transposed");
    Tensor out({m, n});
    tl_scratch_a.resize(static_cast<std::size_t>(k) * n);
    kernel::transpose(b->value.data.data(), tl_scratch_a.data(), n, k);
    kernel::mm(a->value.data.data(), tl_scratch_a.data(), out.data.data(), m, k, n);
    return tape.emplace(std::move(out), {a, b}, [m, k, n](Node& node) {
        const Tensor& g = node.grad;
        Node& na = *node.inputs[0];
        Node& nb = *node.inputs[1];
        // da += g·b
        kernel::mm_acc(g.data.data(), nb.value.data.data(), na.grad.data.data(), m, n, k,
                       tl_scratch_acc);
        // db += gᵀ·a
        tl_scratch_b.resize(static_cast<std::size_t>(n) * m);
        kernel::transpose(g.data.data(), tl_scratch_b.data(), m, n);
        kernel::mm_acc(tl_scratch_b.data(), na.value.data.data(), nb.grad.data.data(), n, m, k,
                       tl_scratch_acc);
    });
}

NodeRef add(Tape& tape, const NodeRef& a, const NodeRef& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return tape.emplace(std::move(out), {a, b}, [](Node& node) {
        for (std::size_t i = 0; i < node.grad.data.size(); ++i) {
            node.inputs[0]->grad.data[i] += node.grad.data[i];
            node.inputs[1]->grad.data[i] += node.grad.data[i];
        }
    });
}

NodeRef add_rowwise(Tape& tape, const NodeRef& a, const NodeRef& bias) {
    require_matrix(a->value, "add_rowwise");
    if (bias->value.shape.size() != 1 || bias->value.shape[0] != a->value.shape[1])
        throw DimensionError("add_rowwise: bias " + shape_str(bias->value) +
                             " does not match row width of " + shape_str(a->value));
    const std::int64_t m = a->value.shape[0], n = a->value.shape[1];
    Tensor out = a->value;
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += bias->value.data[j];
    return tape.emplace(std::move(out), {a, bias}, [m, n](Node& node) {
        for (std::size_t i = 0; i < node.grad.data.size(); ++i)
            node.inputs[0]->grad.data[i] += node.grad.data[i];
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                node.inputs[1]->grad.data[j] += node.grad.at(i, j);
    });
}

NodeRef mul(Tape& tape, const NodeRef& a, const NodeRef& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return tape.emplace(std::move(out), {a, b}, [](Node& node) {
        for (std::size_t i = 0; i < node.grad.data.size(); ++i) {
            node.inputs[0]->grad.data[i] += node.grad.data[i] * node.inputs[1]->value.data[i];
            node.inputs[1]->grad.data[i] += node.grad.data[i] * node.inputs[0]->value.data[i];
        }
    });
}

NodeRef scale(Tape& tape, const NodeRef& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    return tape.emplace(std::move(out), {a}, [c](Node& node) {
        for (std::size_t i = 0; i < node.grad.data.size(); ++i)
            node.inputs[0]->grad.data[i] += c * node.grad.data[i];
    });
}

NodeRef softmax_rows(Tape& tape, const NodeRef& a) {
    require_matrix(a->value, "softmax_rows");
    const std::int64_t m = a->value.shape[0], n = a->value.shape[1];
    Tensor out({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        double mx = -kInf;
        for (std::int64_t j = 0; j < n; ++j) mx = std::max(mx, a->value.at(i, j));
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double e = std::exp(a->value.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    auto probs = std::make_shared<Tensor>(out);
    return tape.emplace(std::move(out), {a}, [m, n, probs](Node& node) {
        for (std::int64_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < n; ++j) dot += node.grad.at(i, j) * probs->at(i, j);
            for (std::int64_t j = 0; j < n; ++j)
                node.inputs[0]->grad.at(i, j) += probs->at(i, j) * (node.grad.at(i, j) - dot);
        }
    });
}

NodeRef layernorm(Tape& tape, const NodeRef& a, const NodeRef& gain, const NodeRef& bias) {
    require_matrix(a->value, "layernorm");
    const std::int64_t m = a->value.shape[0], n = a->value.shape[1];
    if (gain->value.shape.size() != 1 || gain->value.shape[0] != n ||
        bias->value.shape.size() != 1 || bias->value.shape[0] != n)
        throw DimensionError("layernorm: gain/bias must be vectors of width " +
                             std::to_string(n));
    Tensor out({m, n});
    auto xhat = std::make_shared<Tensor>(Tensor({m, n}));
    auto inv_sd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < n; ++j) mean += a->value.at(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double d = a->value.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kLayernormEps);
        (*inv_sd)[static_cast<std::size_t>(i)] = inv;
        for (std::int64_t j = 0; j < n; ++j) {
            const double h = (a->value.at(i, j) - mean) * inv;
            xhat->at(i, j) = h;
            out.at(i, j) = gain->value.data[j] * h + bias->value.data[j];
        }
    }
    return tape.emplace(std::move(out), {a, gain, bias}, [m, n, xhat, inv_sd](Node& node) {
        Node& na = *node.inputs[0];
        Node& ng = *node.inputs[1];
        Node& nb = *node.inputs[2];
        for (std::int64_t i = 0; i < m; ++i) {
            double sum_gdy = 0.0, sum_gdy_xhat = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                const double gdy = ng.value.data[j] * node.grad.at(i, j);
                sum_gdy += gdy;
                sum_gdy_xhat += gdy * xhat->at(i, j);
                ng.grad.data[j] += node.grad.at(i, j) * xhat->at(i, j);
                nb.grad.data[j] += node.grad.at(i, j);
            }
            const double inv = (*inv_sd)[static_cast<std::size_t>(i)];
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::int64_t j = 0; j < n; ++j) {
                const double gdy = ng.value.data[j] * node.grad.at(i, j);
                na.grad.at(i, j) +=
                    inv * (gdy - inv_n * sum_gdy - xhat->at(i, j) * inv_n * sum_gdy_xhat);
            }
        }
    });
}

NodeRef gelu(Tape& tape, const NodeRef& a) {
    Tensor out = a->value;
    for (double& v : out.data) {
        const double u = kSqrt2OverPi * (v + kGeluCubicCoeff * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    return tape.emplace(std::move(out), {a}, [](Node& node) {
        const Tensor& x = node.inputs[0]->value;
        for (std::size_t i = 0; i < node.grad.data.size(); ++i) {
            const double v = x.data[i];
            const double u = kSqrt2OverPi * (v + kGeluCubicCoeff * v * v * v);
            const double t = std::tanh(u);
            const double sech2 = 1.0 - t * t;
            const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubicCoeff * v * v);
            node.inputs[0]->grad.data[i] +=
                node.grad.data[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
        }
    });
}

NodeRef causal_mask(Tape& tape, const NodeRef& scores) {
    require_matrix(scores->value, "causal_mask");
    const std::int64_t m = scores->value.shape[0], n = scores->value.shape[1];
    if (m != n)
        throw DimensionError("causal_mask: score matrix must be square, got " +
                             shape_str(scores->value));
    Tensor out = scores->value;
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) out.at(i, j) = -kInf;
    return tape.emplace(std::move(out), {scores}, [m, n](Node& node) {
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j <= std::min(i, n - 1); ++j)
                node.inputs[0]->grad.at(i, j) += node.grad.at(i, j);
    });
}

NodeRef mean_all(Tape& tape, const NodeRef& a) {
    double sum = 0.0;
    for (double v : a->value.data) sum += v;
    const double inv_n = 1.0 / static_cast<double>(a->value.numel());
    return tape.emplace(Tensor::scalar(sum * inv_n), {a}, [inv_n](Node& node) {
        const double g = node.grad.data[0] * inv_n;
        for (double& v : node.inputs[0]->grad.data) v += g;
    });
}

NodeRef sum_all(Tape& tape, const NodeRef& a) {
    double sum = 0.0;
    for (double v : a->value.data) sum += v;
    return tape.emplace(Tensor::scalar(sum), {a}, [](Node& node) {
        const double g = node.grad.data[0];
        for (double& v : node.inputs[0]->grad.data) v += g;
    });
}

NodeRef embedding_gather(Tape& tape, const NodeRef& table, const std::vector<std::int32_t>& ids) {
    require_matrix(table->value, "embedding_gather");
    const std::int64_t v = table->value.shape[0], d = table->value.shape[1];
    for (std::int32_t id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding_gather: id " + std::to_string(id) +
                             " out of range [0, " + std::to_string(v) + ")");
    const std::int64_t len = static_cast<std::int64_t>(ids.size());
    Tensor out({len, d});
    for (std::int64_t i = 0; i < len; ++i) {
        const double* src = table->value.data.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.data.data() + static_cast<std::size_t>(i) * d);
    }
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
    return tape.emplace(std::move(out), {table}, [d, ids_copy](Node& node) {
        for (std::size_t i = 0; i < ids_copy->size(); ++i) {
            double* dst =
                node.inputs[0]->grad.data.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
            const double* src = node.grad.data.data() + i * static_cast<std::size_t>(d);
            for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

NodeRef softmax_cross_entropy(Tape& tape, const NodeRef& logits,
                              const std::vector<std::int32_t>& targets) {
    require_matrix(logits->value, "softmax_cross_entropy");
    const std::int64_t n = logits->value.shape[0], v = logits->value.shape[1];
    if (static_cast<std::int64_t>(targets.size()) != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(n) + " rows");
    for (std::int32_t t : targets)
        if (t < 0 || t >= v)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                             " out of range [0, " + std::to_string(v) + ")");
    auto probs = std::make_shared<Tensor>(Tensor({n, v}));
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = -kInf;
        for (std::int64_t j = 0; j < v; ++j) mx = std::max(mx, logits->value.at(i, j));
        double sum = 0.0;
        for (std::int64_t j = 0; j < v; ++j) {
            const double e = std::exp(logits->value.at(i, j) - mx);
            probs->at(i, j) = e;
            sum += e;
        }
        for (std::int64_t j = 0; j < v; ++j) probs->at(i, j) /= sum;
        loss -= std::log(probs->at(i, targets[static_cast<std::size_t>(i)]));
    }
    loss /= static_cast<double>(n);
    auto targets_copy = std::make_shared<std::vector<std::int32_t>>(targets);
    return tape.emplace(Tensor::scalar(loss), {logits}, [n, v, probs, targets_copy](Node& node) {
        const double g = node.grad.data[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int32_t t = (*targets_copy)[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < v; ++j) {
                const double onehot = (j == t) ? 1.0 : 0.0;
                node.inputs[0]->grad.at(i, j) += g * (probs->at(i, j) - onehot);
            }
        }
    });
}

NodeRef slice_block(Tape& tape, const NodeRef& a, std::int64_t r0, std::int64_t r1,
                    std::int64_t c0, std::int64_t c1) {
    require_matrix(a->value, "slice_block");
    const std::int64_t m = a->value.shape[0], n = a->value.shape[1];
    if (r0 < 0 || r1 > m || c0 < 0 || c1 > n || r0 >= r1 || c0 >= c1)
        throw IndexError("slice_block: rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of bounds for " + shape_str(a->value));
    Tensor out({r1 - r0, c1 - c0});
    for (std::int64_t i = r0; i < r1; ++i)
        std::copy(a->value.data.data() + static_cast<std::size_t>(i) * n + c0,
                  a->value.data.data() + static_cast<std::size_t>(i) * n + c1,
                  out.data.data() + static_cast<std::size_t>(i - r0) * (c1 - c0));
    return tape.emplace(std::move(out), {a}, [r0, r1, c0, c1, n](Node& node) {
        const std::int64_t w = c1 - c0;
        for (std::int64_t i = r0; i < r1; ++i)
            for (std::int64_t j = 0; j < w; ++j)
                node.inputs[0]->grad.data[static_cast<std::size_t>(i) * n + c0 + j] +=
                    node.grad.at(i - r0, j);
    });
}

NodeRef concat_cols(Tape& tape, const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const std::int64_t m = parts[0]->value.rows();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != m)
            throw DimensionError("concat_cols: row count mismatch, " +
                                 shape_str(parts[0]->value) + " vs " + shape_str(p->value));
        total += p->value.cols();
    }
    Tensor out({m, total});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p->value.cols();
        for (std::int64_t i = 0; i < m; ++i)
            std::copy(p->value.data.data() + static_cast<std::size_t>(i) * w,
                      p->value.data.data() + static_cast<std::size_t>(i) * w + w,
                      out.data.data() + static_cast<std::size_t>(i) * total + off);
        off += w;
    }
    return tape.emplace(std::move(out), parts, [m, total](Node& node) {
        std::int64_t off = 0;
        for (auto& in : node.inputs) {
            const std::int64_t w = in->value.cols();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    in->grad.at(i, j) +=
                        node.grad.data[static_cast<std::size_t>(i) * total + off + j];
            off += w;
        }
    });
}

NodeRef concat_rows(Tape& tape, const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const std::int64_t n = parts[0]->value.cols();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != n)
            throw DimensionError("concat_rows: column count mismatch, " +
                                 shape_str(parts[0]->value) + " vs " + shape_str(p->value));
        total += p->value.rows();
    }
    Tensor out({total, n});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(),
                  out.data.begin() + static_cast<std::size_t>(off) * n);
        off += p->value.rows();
    }
    return tape.emplace(std::move(out), parts, [n](Node& node) {
        std::int64_t off = 0;
        for (auto& in : node.inputs) {
            const std::size_t count = in->grad.data.size();
            const double* src = node.grad.data.data() + static_cast<std::size_t>(off) * n;
            for (std::size_t i = 0; i < count; ++i) in->grad.data[i] += src[i];
            off += in->value.rows();
        }
    });
}

}  // namespace mates
