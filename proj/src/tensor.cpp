#include "mga/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mga/error.hpp"
#include "mga/kernels.hpp"

namespace mga {

namespace {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

void check_positive_extents(const Shape& s, const char* where) {
    for (std::size_t e : s) {
        if (e == 0) {
            throw ShapeError(std::string(where) + ": zero extent in shape " + shape_str(s));
        }
    }
}

// Finds the tape shared by all recorded inputs, or nullptr when every input
// is a constant.
Tape* common_tape(const std::vector<const Tensor*>& inputs, const char* op) {
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
        if (t->node() < 0) continue;
        if (tape == nullptr) {
            tape = t->tape();
        } else if (tape != t->tape()) {
            throw ContractError(std::string(op) + ": inputs recorded on different tapes");
        }
    }
    return tape;
}

Tensor finish(Tape* tape, Shape shape, std::vector<double> values, Tape::PullFn pull) {
    if (tape == nullptr) {
        return Tensor(std::move(shape), std::move(values));
    }
    auto storage = std::make_shared<std::vector<double>>(std::move(values));
    return tape->record(std::move(shape), std::move(storage), std::move(pull));
}

// Iteration pattern for per-slice ops (softmax, l2-normalize, axis reductions):
// `lines` independent 1-D slices of length `len` with the given stride.
struct LineLayout {
    std::size_t lines;
    std::size_t len;
    std::size_t stride;      // step between consecutive elements of a line
    std::size_t line_step;   // step between line starts
};

LineLayout line_layout(const Shape& shape, std::size_t axis, const char* op) {
    if (shape.empty() || shape.size() > 2 || axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(shape));
    }
    if (shape.size() == 1) {
        return {1, shape[0], 1, 0};
    }
    if (axis == 1) {
        return {shape[0], shape[1], 1, shape[1]};
    }
    return {shape[1], shape[0], shape[1], 1};
}

} // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out << ", ";
        out << s[i];
    }
    out << "]";
    return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

const std::vector<double>& Tensor::empty_values() {
    static const std::vector<double> kEmpty;
    return kEmpty;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_positive_extents(shape_, "Tensor");
    values_ = std::make_shared<std::vector<double>>(numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    check_positive_extents(shape_, "Tensor");
    if (values.size() != numel(shape_)) {
        throw ShapeError("Tensor: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape_));
    }
    values_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    auto& vals = *t.values_;
    for (double& x : vals) x = v;
    return t;
}

std::size_t Tensor::size() const { return values_ ? values_->size() : 0; }

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("Tensor::extent: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

const std::vector<double>& Tensor::values() const {
    return values_ ? *values_ : empty_values();
}

std::vector<double>& Tensor::mutable_values() {
    if (!values_) {
        values_ = std::make_shared<std::vector<double>>();
    } else if (values_.use_count() > 1) {
        values_ = std::make_shared<std::vector<double>>(*values_);
    }
    return *values_;
}

double Tensor::at2(std::size_t row, std::size_t col) const {
    if (rank() != 2) {
        throw ShapeError("Tensor::at2 on shape " + shape_str(shape_));
    }
    return values()[row * shape_[1] + col];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    }
    return values()[0];
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::watch(const Tensor& value) {
    Tensor out = value;
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.shape(), nullptr});
    return out;
}

Tensor Tape::record(Shape shape, std::shared_ptr<std::vector<double>> values, PullFn pull) {
    Tensor out;
    out.shape_ = std::move(shape);
    out.values_ = std::move(values);
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.shape_, std::move(pull)});
    return out;
}

std::vector<double>& Tape::grad_buffer(int node) {
    auto idx = static_cast<std::size_t>(node);
    if (grads_[idx].empty()) {
        grads_[idx].assign(numel(nodes_[idx].shape), 0.0);
    }
    touched_[idx] = 1;
    return grads_[idx];
}

void Tape::accumulate(int node, const double* grad, std::size_t count) {
    auto& buf = grad_buffer(node);
    for (std::size_t i = 0; i < count; ++i) buf[i] += grad[i];
}

void Tape::accumulate_scaled(int node, const double* grad, std::size_t count, double scale) {
    auto& buf = grad_buffer(node);
    for (std::size_t i = 0; i < count; ++i) buf[i] += scale * grad[i];
}

std::unordered_map<int, Tensor> Tape::backward(const Tensor& loss) {
    if (loss.tape() != this || loss.node() < 0) {
        throw ContractError("backward: loss is not recorded on this tape");
    }
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    grads_.assign(nodes_.size(), {});
    touched_.assign(nodes_.size(), 0);
    grad_buffer(loss.node())[0] = 1.0;

    for (int id = loss.node(); id >= 0; --id) {
        auto idx = static_cast<std::size_t>(id);
        if (!touched_[idx] || !nodes_[idx].pull) continue;
        nodes_[idx].pull(grads_[idx], *this);
    }

    std::unordered_map<int, Tensor> out;
    out.reserve(nodes_.size());
    for (std::size_t idx = 0; idx < nodes_.size(); ++idx) {
        if (!touched_[idx]) continue;
        out.emplace(static_cast<int>(idx), Tensor(nodes_[idx].shape, std::move(grads_[idx])));
    }
    grads_.clear();
    touched_.clear();
    return out;
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<double> out(m * n);
    kernels::matmul_nn(a.values().data(), b.values().data(), out.data(), m, k, n);

    Tape* tape = common_tape({&a, &b}, "matmul");
    Tensor av = a, bv = b; // share storage for the pull closure
    return finish(tape, {m, n}, std::move(out),
                  [av, bv, m, k, n](const std::vector<double>& g, Tape& t) {
                      if (av.node() >= 0) {
                          std::vector<double> da(m * k);
                          kernels::matmul_nt(g.data(), bv.values().data(), da.data(), m, n, k);
                          t.accumulate(av.node(), da.data(), da.size());
                      }
                      if (bv.node() >= 0) {
                          std::vector<double> db(k * n);
                          kernels::matmul_tn(av.values().data(), g.data(), db.data(), k, m, n);
                          t.accumulate(bv.node(), db.data(), db.size());
                      }
                  });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];

    Tape* tape = common_tape({&a, &b}, "add");
    int na = a.node(), nb = b.node();
    return finish(tape, a.shape(), std::move(out),
                  [na, nb](const std::vector<double>& g, Tape& t) {
                      if (na >= 0) t.accumulate(na, g.data(), g.size());
                      if (nb >= 0) t.accumulate(nb, g.data(), g.size());
                  });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "subtract");
    std::vector<double> out(a.size());
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];

    Tape* tape = common_tape({&a, &b}, "subtract");
    int na = a.node(), nb = b.node();
    return finish(tape, a.shape(), std::move(out),
                  [na, nb](const std::vector<double>& g, Tape& t) {
                      if (na >= 0) t.accumulate(na, g.data(), g.size());
                      if (nb >= 0) t.accumulate_scaled(nb, g.data(), g.size(), -1.0);
                  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "multiply");
    std::vector<double> out(a.size());
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];

    Tape* tape = common_tape({&a, &b}, "multiply");
    Tensor av = a, bv = b;
    return finish(tape, a.shape(), std::move(out),
                  [av, bv](const std::vector<double>& g, Tape& t) {
                      if (av.node() >= 0) {
                          auto& buf = t.grad_buffer(av.node());
                          const auto& vb = bv.values();
                          for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * vb[i];
                      }
                      if (bv.node() >= 0) {
                          auto& buf = t.grad_buffer(bv.node());
                          const auto& va = av.values();
                          for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * va[i];
                      }
                  });
}

Tensor scalar_multiply(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& va = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * va[i];

    Tape* tape = common_tape({&a}, "scalar_multiply");
    int na = a.node();
    return finish(tape, a.shape(), std::move(out),
                  [na, s](const std::vector<double>& g, Tape& t) {
                      if (na >= 0) t.accumulate_scaled(na, g.data(), g.size(), s);
                  });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& va = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(va[i]);

    Tape* tape = common_tape({&a}, "exp");
    int na = a.node();
    auto outp = std::make_shared<std::vector<double>>(std::move(out));
    if (!tape) return Tensor(a.shape(), std::move(*outp));
    return tape->record(a.shape(), outp,
                        [na, outp](const std::vector<double>& g, Tape& t) {
                            auto& buf = t.grad_buffer(na);
                            const auto& y = *outp;
                            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * y[i];
                        });
}

Tensor log(const Tensor& a) {
    const auto& va = a.values();
    for (std::size_t i = 0; i < va.size(); ++i) {
        if (!(va[i] > 0.0)) {
            throw DomainError("log: non-positive input at index " + std::to_string(i) +
                              ": " + std::to_string(va[i]));
        }
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(va[i]);

    Tape* tape = common_tape({&a}, "log");
    Tensor av = a;
    return finish(tape, a.shape(), std::move(out),
                  [av](const std::vector<double>& g, Tape& t) {
                      if (av.node() < 0) return;
                      auto& buf = t.grad_buffer(av.node());
                      const auto& x = av.values();
                      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] / x[i];
                  });
}

Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& va = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);

    Tape* tape = common_tape({&a}, "tanh");
    int na = a.node();
    auto outp = std::make_shared<std::vector<double>>(std::move(out));
    if (!tape) return Tensor(a.shape(), std::move(*outp));
    return tape->record(a.shape(), outp,
                        [na, outp](const std::vector<double>& g, Tape& t) {
                            auto& buf = t.grad_buffer(na);
                            const auto& y = *outp;
                            for (std::size_t i = 0; i < g.size(); ++i) {
                                buf[i] += g[i] * (1.0 - y[i] * y[i]);
                            }
                        });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;

    Tape* tape = common_tape({&a}, "sum");
    int na = a.node();
    std::size_t count = a.size();
    return finish(tape, {1}, {acc},
                  [na, count](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      for (std::size_t i = 0; i < count; ++i) buf[i] += g[0];
                  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    LineLayout ll = line_layout(a.shape(), axis, "sum");
    std::vector<double> out(ll.lines, 0.0);
    const auto& va = a.values();
    for (std::size_t l = 0; l < ll.lines; ++l) {
        const double* base = va.data() + l * ll.line_step;
        double acc = 0.0;
        for (std::size_t i = 0; i < ll.len; ++i) acc += base[i * ll.stride];
        out[l] = acc;
    }

    Tape* tape = common_tape({&a}, "sum");
    int na = a.node();
    return finish(tape, {ll.lines}, std::move(out),
                  [na, ll](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      for (std::size_t l = 0; l < ll.lines; ++l) {
                          double* base = buf.data() + l * ll.line_step;
                          for (std::size_t i = 0; i < ll.len; ++i) base[i * ll.stride] += g[l];
                      }
                  });
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    double inv = 1.0 / static_cast<double>(a.size());

    Tape* tape = common_tape({&a}, "mean");
    int na = a.node();
    std::size_t count = a.size();
    return finish(tape, {1}, {acc * inv},
                  [na, count, inv](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      double gv = g[0] * inv;
                      for (std::size_t i = 0; i < count; ++i) buf[i] += gv;
                  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    LineLayout ll = line_layout(a.shape(), axis, "mean");
    double inv = 1.0 / static_cast<double>(ll.len);
    std::vector<double> out(ll.lines, 0.0);
    const auto& va = a.values();
    for (std::size_t l = 0; l < ll.lines; ++l) {
        const double* base = va.data() + l * ll.line_step;
        double acc = 0.0;
        for (std::size_t i = 0; i < ll.len; ++i) acc += base[i * ll.stride];
        out[l] = acc * inv;
    }

    Tape* tape = common_tape({&a}, "mean");
    int na = a.node();
    return finish(tape, {ll.lines}, std::move(out),
                  [na, ll, inv](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      for (std::size_t l = 0; l < ll.lines; ++l) {
                          double* base = buf.data() + l * ll.line_step;
                          double gv = g[l] * inv;
                          for (std::size_t i = 0; i < ll.len; ++i) base[i * ll.stride] += gv;
                      }
                  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    LineLayout ll = line_layout(a.shape(), axis, "softmax");
    std::vector<double> out(a.size());
    const auto& va = a.values();
    for (std::size_t l = 0; l < ll.lines; ++l) {
        const double* src = va.data() + l * ll.line_step;
        double* dst = out.data() + l * ll.line_step;
        double mx = src[0];
        for (std::size_t i = 1; i < ll.len; ++i) {
            double v = src[i * ll.stride];
            if (v > mx) mx = v;
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < ll.len; ++i) {
            double e = std::exp(src[i * ll.stride] - mx);
            dst[i * ll.stride] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < ll.len; ++i) dst[i * ll.stride] /= denom;
    }

    Tape* tape = common_tape({&a}, "softmax");
    int na = a.node();
    auto outp = std::make_shared<std::vector<double>>(std::move(out));
    if (!tape) return Tensor(a.shape(), std::move(*outp));
    return tape->record(a.shape(), outp,
                        [na, outp, ll](const std::vector<double>& g, Tape& t) {
                            auto& buf = t.grad_buffer(na);
                            const auto& y = *outp;
                            for (std::size_t l = 0; l < ll.lines; ++l) {
                                std::size_t base = l * ll.line_step;
                                double dot = 0.0;
                                for (std::size_t i = 0; i < ll.len; ++i) {
                                    std::size_t idx = base + i * ll.stride;
                                    dot += g[idx] * y[idx];
                                }
                                for (std::size_t i = 0; i < ll.len; ++i) {
                                    std::size_t idx = base + i * ll.stride;
                                    buf[idx] += y[idx] * (g[idx] - dot);
                                }
                            }
                        });
}

// The norm is floored at 1e-12 so zero vectors (blank padded sentences) stay
// finite in both passes.
Tensor l2_normalize(const Tensor& a, std::size_t axis) {
    constexpr double kFloor = 1e-12;
    LineLayout ll = line_layout(a.shape(), axis, "l2_normalize");
    std::vector<double> out(a.size());
    std::vector<double> norms(ll.lines);
    const auto& va = a.values();
    for (std::size_t l = 0; l < ll.lines; ++l) {
        const double* src = va.data() + l * ll.line_step;
        double sq = 0.0;
        for (std::size_t i = 0; i < ll.len; ++i) {
            double v = src[i * ll.stride];
            sq += v * v;
        }
        double norm = std::sqrt(sq);
        double denom = norm < kFloor ? kFloor : norm;
        norms[l] = denom;
        double* dst = out.data() + l * ll.line_step;
        for (std::size_t i = 0; i < ll.len; ++i) dst[i * ll.stride] = src[i * ll.stride] / denom;
    }

    Tape* tape = common_tape({&a}, "l2_normalize");
    int na = a.node();
    auto outp = std::make_shared<std::vector<double>>(std::move(out));
    if (!tape) return Tensor(a.shape(), std::move(*outp));
    auto normp = std::make_shared<std::vector<double>>(std::move(norms));
    return tape->record(a.shape(), outp,
                        [na, outp, normp, ll](const std::vector<double>& g, Tape& t) {
                            auto& buf = t.grad_buffer(na);
                            const auto& y = *outp;
                            const auto& nrm = *normp;
                            for (std::size_t l = 0; l < ll.lines; ++l) {
                                std::size_t base = l * ll.line_step;
                                double inv = 1.0 / nrm[l];
                                if (nrm[l] <= kFloor) {
                                    // floored line: the denominator is a constant
                                    for (std::size_t i = 0; i < ll.len; ++i) {
                                        std::size_t idx = base + i * ll.stride;
                                        buf[idx] += g[idx] * inv;
                                    }
                                    continue;
                                }
                                double dot = 0.0;
                                for (std::size_t i = 0; i < ll.len; ++i) {
                                    std::size_t idx = base + i * ll.stride;
                                    dot += g[idx] * y[idx];
                                }
                                for (std::size_t i = 0; i < ll.len; ++i) {
                                    std::size_t idx = base + i * ll.stride;
                                    buf[idx] += (g[idx] - y[idx] * dot) * inv;
                                }
                            }
                        });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose: expected rank 2, got shape " + shape_str(a.shape()));
    }
    const std::size_t r = a.extent(0), c = a.extent(1);
    std::vector<double> out(a.size());
    const auto& va = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = va[i * c + j];
        }
    }

    Tape* tape = common_tape({&a}, "transpose");
    int na = a.node();
    return finish(tape, {c, r}, std::move(out),
                  [na, r, c](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      for (std::size_t i = 0; i < r; ++i) {
                          for (std::size_t j = 0; j < c; ++j) {
                              buf[i * c + j] += g[j * r + i];
                          }
                      }
                  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    if (axis > 1) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " unsupported");
    }
    const std::size_t rank = parts[0].rank();
    if (rank == 0 || rank > 2 || axis >= rank) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(parts[0].shape()));
    }
    for (const Tensor& p : parts) {
        if (p.rank() != rank) {
            throw ShapeError("concat: rank mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        for (std::size_t d = 0; d < rank; ++d) {
            if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
                throw ShapeError("concat: extent mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
            }
        }
    }

    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const Tensor& p : parts) out_shape[axis] += p.shape()[axis];

    std::vector<double> out(numel(out_shape));
    std::vector<std::size_t> offsets(parts.size()); // along the concat axis
    {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            offsets[pi] = off;
            off += parts[pi].shape()[axis];
        }
    }
    const std::size_t out_cols = rank == 2 ? out_shape[1] : out_shape[0];
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& vp = parts[pi].values();
        if (rank == 1 || axis == 0) {
            std::size_t start = (rank == 2) ? offsets[pi] * out_cols : offsets[pi];
            for (std::size_t i = 0; i < vp.size(); ++i) out[start + i] = vp[i];
        } else {
            const std::size_t rows = parts[pi].shape()[0];
            const std::size_t cols = parts[pi].shape()[1];
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    out[i * out_cols + offsets[pi] + j] = vp[i * cols + j];
                }
            }
        }
    }

    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    for (const Tensor& p : parts) ptrs.push_back(&p);
    Tape* tape = common_tape(ptrs, "concat");
    if (!tape) return Tensor(std::move(out_shape), std::move(out));

    struct Piece {
        int node;
        std::size_t offset;
        std::size_t rows, cols;
    };
    std::vector<Piece> pieces;
    pieces.reserve(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Shape& s = parts[pi].shape();
        pieces.push_back(Piece{parts[pi].node(), offsets[pi],
                               s[0], rank == 2 ? s[1] : 1});
    }
    bool along_rows = (rank == 1 || axis == 0);
    auto storage = std::make_shared<std::vector<double>>(std::move(out));
    return tape->record(std::move(out_shape), storage,
                        [pieces, along_rows, out_cols, rank](const std::vector<double>& g, Tape& t) {
                            for (const Piece& p : pieces) {
                                if (p.node < 0) continue;
                                auto& buf = t.grad_buffer(p.node);
                                if (along_rows) {
                                    std::size_t start =
                                        (rank == 2) ? p.offset * out_cols : p.offset;
                                    for (std::size_t i = 0; i < buf.size(); ++i) {
                                        buf[i] += g[start + i];
                                    }
                                } else {
                                    for (std::size_t i = 0; i < p.rows; ++i) {
                                        for (std::size_t j = 0; j < p.cols; ++j) {
                                            buf[i * p.cols + j] += g[i * out_cols + p.offset + j];
                                        }
                                    }
                                }
                            }
                        });
}

Tensor mask_fill(const Tensor& a, const Tensor& mask, double fill) {
    check_same_shape(a, mask, "mask_fill");
    if (mask.node() >= 0) {
        throw ContractError("mask_fill: mask must be a constant tensor");
    }
    std::vector<double> out(a.size());
    const auto& va = a.values();
    const auto& vm = mask.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = vm[i] != 0.0 ? va[i] : fill;
    }

    Tape* tape = common_tape({&a}, "mask_fill");
    int na = a.node();
    Tensor maskv = mask;
    return finish(tape, a.shape(), std::move(out),
                  [na, maskv](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      const auto& vm = maskv.values();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                          if (vm[i] != 0.0) buf[i] += g[i];
                      }
                  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.rank() == 0 || a.rank() > 2) {
        throw ShapeError("slice_rows: expected rank 1 or 2, got " + shape_str(a.shape()));
    }
    const std::size_t rows = a.extent(0);
    if (count == 0 || begin + count > rows) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") invalid for shape " +
                         shape_str(a.shape()));
    }
    const std::size_t cols = a.rank() == 2 ? a.extent(1) : 1;
    Shape out_shape = a.shape();
    out_shape[0] = count;
    std::vector<double> out(count * cols);
    const auto& va = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[begin * cols + i];

    Tape* tape = common_tape({&a}, "slice_rows");
    int na = a.node();
    return finish(tape, std::move(out_shape), std::move(out),
                  [na, begin, cols](const std::vector<double>& g, Tape& t) {
                      if (na < 0) return;
                      auto& buf = t.grad_buffer(na);
                      std::size_t start = begin * cols;
                      for (std::size_t i = 0; i < g.size(); ++i) buf[start + i] += g[i];
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_positive_extents(shape, "reshape");
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<double> out(a.values());

    Tape* tape = common_tape({&a}, "reshape");
    int na = a.node();
    return finish(tape, std::move(shape), std::move(out),
                  [na](const std::vector<double>& g, Tape& t) {
                      if (na >= 0) t.accumulate(na, g.data(), g.size());
                  });
}

// ---------------------------------------------------------------------------
// Dispatcher

const std::vector<Op>& all_op_kinds() {
    static const std::vector<Op> kinds = {
        Op::Matmul,    Op::Add,       Op::Subtract,  Op::Multiply, Op::ScalarMultiply,
        Op::Exp,       Op::Log,       Op::Tanh,      Op::Sum,      Op::Mean,
        Op::Softmax,   Op::L2Normalize, Op::Transpose, Op::Concat, Op::MaskFill,
        Op::SliceRows, Op::Reshape,
    };
    return kinds;
}

std::string op_name(Op kind) {
    switch (kind) {
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Subtract: return "subtract";
        case Op::Multiply: return "multiply";
        case Op::ScalarMultiply: return "scalar-multiply";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Tanh: return "tanh";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Softmax: return "softmax-over-axis";
        case Op::L2Normalize: return "l2-normalize-over-axis";
        case Op::Transpose: return "transpose";
        case Op::Concat: return "concat";
        case Op::MaskFill: return "mask-fill";
        case Op::SliceRows: return "slice-rows";
        case Op::Reshape: return "reshape";
    }
    return "unknown";
}

namespace {

void need_inputs(Op kind, const std::vector<Tensor>& inputs, std::size_t n) {
    if (inputs.size() != n) {
        throw ContractError("forward(" + op_name(kind) + "): expected " + std::to_string(n) +
                            " inputs, got " + std::to_string(inputs.size()));
    }
}

} // namespace

Tensor forward(Op kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
    switch (kind) {
        case Op::Matmul:
            need_inputs(kind, inputs, 2);
            return matmul(inputs[0], inputs[1]);
        case Op::Add:
            need_inputs(kind, inputs, 2);
            return add(inputs[0], inputs[1]);
        case Op::Subtract:
            need_inputs(kind, inputs, 2);
            return subtract(inputs[0], inputs[1]);
        case Op::Multiply:
            need_inputs(kind, inputs, 2);
            return multiply(inputs[0], inputs[1]);
        case Op::ScalarMultiply:
            need_inputs(kind, inputs, 1);
            return scalar_multiply(inputs[0], attrs.scalar);
        case Op::Exp:
            need_inputs(kind, inputs, 1);
            return exp(inputs[0]);
        case Op::Log:
            need_inputs(kind, inputs, 1);
            return log(inputs[0]);
        case Op::Tanh:
            need_inputs(kind, inputs, 1);
            return tanh(inputs[0]);
        case Op::Sum:
            need_inputs(kind, inputs, 1);
            return attrs.axis ? sum(inputs[0], *attrs.axis) : sum(inputs[0]);
        case Op::Mean:
            need_inputs(kind, inputs, 1);
            return attrs.axis ? mean(inputs[0], *attrs.axis) : mean(inputs[0]);
        case Op::Softmax:
            need_inputs(kind, inputs, 1);
            return softmax(inputs[0], attrs.axis.value_or(inputs[0].rank() - 1));
        case Op::L2Normalize:
            need_inputs(kind, inputs, 1);
            return l2_normalize(inputs[0], attrs.axis.value_or(inputs[0].rank() - 1));
        case Op::Transpose:
            need_inputs(kind, inputs, 1);
            return transpose(inputs[0]);
        case Op::Concat:
            return concat(inputs, attrs.axis.value_or(0));
        case Op::MaskFill:
            need_inputs(kind, inputs, 2);
            return mask_fill(inputs[0], inputs[1], attrs.scalar);
        case Op::SliceRows:
            need_inputs(kind, inputs, 1);
            return slice_rows(inputs[0], attrs.begin, attrs.count);
        case Op::Reshape:
            need_inputs(kind, inputs, 1);
            return reshape(inputs[0], attrs.shape);
    }
    throw ContractError("forward: unknown operation kind");
}

// ---------------------------------------------------------------------------
// Gradient check

double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double eps) {
    if (!(eps > 0.0)) {
        throw ContractError("grad_check: eps must be positive");
    }

    auto eval = [&f](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Tensor> watched;
        watched.reserve(xs.size());
        for (const Tensor& x : xs) watched.push_back(tape.watch(x));
        Tensor loss = f(tape, watched);
        if (loss.size() != 1) {
            throw ContractError("grad_check: f must return a scalar");
        }
        return loss.item();
    };

    // Analytic gradients.
    Tape tape;
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const Tensor& x : inputs) watched.push_back(tape.watch(x));
    Tensor loss = f(tape, watched);
    if (loss.size() != 1) {
        throw ContractError("grad_check: f must return a scalar");
    }
    auto grads = tape.backward(loss);

    double max_err = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t xi = 0; xi < inputs.size(); ++xi) {
        const Tensor* analytic = nullptr;
        auto it = grads.find(watched[xi].node());
        if (it != grads.end()) analytic = &it->second;

        for (std::size_t j = 0; j < inputs[xi].size(); ++j) {
            double orig = probe[xi].values()[j];
            probe[xi].mutable_values()[j] = orig + eps;
            double up = eval(probe);
            probe[xi].mutable_values()[j] = orig - eps;
            double down = eval(probe);
            probe[xi].mutable_values()[j] = orig;

            double fd = (up - down) / (2.0 * eps);
            double an = analytic ? analytic->at(j) : 0.0;
            if (!std::isfinite(fd) || !std::isfinite(an)) {
                throw DomainError("grad_check: non-finite value at input " + std::to_string(xi) +
                                  " coordinate " + std::to_string(j));
            }
            double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
            if (err > max_err) max_err = err;
        }
    }
    return max_err;
}

} // namespace mga
