#pragma once

// Scalar-graph differentiation engine: records expressions as flat tapes,
// evaluates them (scalar or lane-batched), and differentiates them in
// reverse mode. First-derivative expressions can be re-recorded as new
// tapes (forward-mode transform), so reverse mode over those yields the
// second-order compositions the PDE losses need.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnfrom::ad {

enum class Op : std::uint8_t {
    Const,
    Input,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sqrt,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Tanh: return "tanh";
        case Op::Sqrt: return "sqrt";
    }
    return "?";
}

/// Thrown when evaluation or a derivative pass produces a non-finite value.
/// Carries the offending node so training can report where the graph blew up.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::size_t node, Op op, std::size_t lane)
        : std::runtime_error("non-finite value at node " + std::to_string(node) +
                             " (" + op_name(op) + ", lane " + std::to_string(lane) + ")"),
          node_(node), op_(op), lane_(lane) {}
    std::size_t node() const { return node_; }
    Op op() const { return op_; }
    std::size_t lane() const { return lane_; }

private:
    std::size_t node_;
    Op op_;
    std::size_t lane_;
};

class Tape;

/// Handle to a node of a Tape during recording. Arithmetic on Values appends
/// nodes to the owning tape; mixing tapes is an error.
class Value {
public:
    Value() = default;
    Tape* tape() const { return tape_; }
    std::uint32_t id() const { return id_; }

private:
    friend class Tape;
    Value(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

constexpr std::uint32_t kNoNode = std::numeric_limits<std::uint32_t>::max();

/// Recording context: an append-only, topologically ordered operation log
/// with dedicated input and parameter slots. Derivative transforms copy the
/// log; they never mutate a tape they read.
class Tape {
public:
    Tape(int num_inputs, int num_params)
        : num_inputs_(num_inputs), num_params_(num_params),
          input_node_(static_cast<std::size_t>(num_inputs), kNoNode),
          param_node_(static_cast<std::size_t>(num_params), kNoNode) {}

    int num_inputs() const { return num_inputs_; }
    int num_params() const { return num_params_; }
    std::size_t size() const { return op_.size(); }
    std::size_t num_outputs() const { return outputs_.size(); }
    std::span<const std::uint32_t> outputs() const { return outputs_; }

    Value input(int slot) {
        if (slot < 0 || slot >= num_inputs_) throw std::invalid_argument("input slot out of range");
        auto& cached = input_node_[static_cast<std::size_t>(slot)];
        if (cached == kNoNode) cached = push(Op::Input, static_cast<std::uint32_t>(slot), kNoNode, 0.0);
        return Value(this, cached);
    }

    Value param(int slot) {
        if (slot < 0 || slot >= num_params_) throw std::invalid_argument("param slot out of range");
        auto& cached = param_node_[static_cast<std::size_t>(slot)];
        if (cached == kNoNode) cached = push(Op::Param, static_cast<std::uint32_t>(slot), kNoNode, 0.0);
        return Value(this, cached);
    }

    Value constant(double c) { return Value(this, push(Op::Const, kNoNode, kNoNode, c)); }

    void mark_output(Value v) {
        check_owned(v);
        outputs_.push_back(v.id());
        index_.clear();
    }

    void set_outputs(std::vector<std::uint32_t> ids) {
        for (auto id : ids)
            if (id >= size()) throw std::invalid_argument("output id out of range");
        outputs_ = std::move(ids);
    }

    // --- node builders with light algebraic simplification -------------------

    Value add(Value x, Value y) {
        check_pair(x, y);
        if (is_const(x) && is_const(y)) return constant(const_val(x) + const_val(y));
        if (is_zero(x)) return y;
        if (is_zero(y)) return x;
        return Value(this, push(Op::Add, x.id(), y.id(), 0.0));
    }

    Value sub(Value x, Value y) {
        check_pair(x, y);
        if (is_const(x) && is_const(y)) return constant(const_val(x) - const_val(y));
        if (is_zero(y)) return x;
        if (is_zero(x)) return neg(y);
        return Value(this, push(Op::Sub, x.id(), y.id(), 0.0));
    }

    Value mul(Value x, Value y) {
        check_pair(x, y);
        if (is_const(x) && is_const(y)) return constant(const_val(x) * const_val(y));
        if (is_zero(x) || is_zero(y)) return constant(0.0);
        if (is_one(x)) return y;
        if (is_one(y)) return x;
        return Value(this, push(Op::Mul, x.id(), y.id(), 0.0));
    }

    Value div(Value x, Value y) {
        check_pair(x, y);
        if (is_const(x) && is_const(y)) return constant(const_val(x) / const_val(y));
        if (is_one(y)) return x;
        return Value(this, push(Op::Div, x.id(), y.id(), 0.0));
    }

    Value neg(Value x) {
        check_owned(x);
        if (is_const(x)) return constant(-const_val(x));
        return Value(this, push(Op::Neg, x.id(), kNoNode, 0.0));
    }

    Value unary(Op op, Value x) {
        check_owned(x);
        if (is_const(x)) return constant(apply_unary(op, const_val(x)));
        return Value(this, push(op, x.id(), kNoNode, 0.0));
    }

    // --- raw log access (evaluation/backward/transforms) ----------------------

    Op node_op(std::size_t i) const { return op_[i]; }
    std::uint32_t node_a(std::size_t i) const { return a_[i]; }
    std::uint32_t node_b(std::size_t i) const { return b_[i]; }
    double node_imm(std::size_t i) const { return imm_[i]; }

    Value handle(std::uint32_t id) { return Value(this, id); }

    /// Builds the consumer index used by the pull-mode reverse pass. Safe to
    /// call once before sharing the tape across threads; backward passes build
    /// it lazily otherwise.
    void build_index() const {
        if (!index_.empty() || op_.empty()) return;
        const std::size_t n = op_.size();
        std::vector<std::uint32_t> degree(n, 0);
        auto count = [&](std::size_t i) {
            if (a_[i] != kNoNode && op_[i] != Op::Input && op_[i] != Op::Param) ++degree[a_[i]];
            if (b_[i] != kNoNode) ++degree[b_[i]];
        };
        for (std::size_t i = 0; i < n; ++i) count(i);
        index_offsets_.assign(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) index_offsets_[i + 1] = index_offsets_[i] + degree[i];
        index_.resize(index_offsets_[n]);
        std::vector<std::uint32_t> cursor(index_offsets_.begin(), index_offsets_.end() - 1);
        for (std::size_t i = 0; i < n; ++i) {
            if (a_[i] != kNoNode && op_[i] != Op::Input && op_[i] != Op::Param)
                index_[cursor[a_[i]]++] = static_cast<std::uint32_t>(i << 1);
            if (b_[i] != kNoNode)
                index_[cursor[b_[i]]++] = static_cast<std::uint32_t>((i << 1) | 1u);
        }
    }

    bool index_built() const { return !index_.empty() || op_.empty(); }
    std::span<const std::uint32_t> consumers(std::size_t i) const {
        return {index_.data() + index_offsets_[i], index_offsets_[i + 1] - index_offsets_[i]};
    }

private:
    friend Tape forward_derivative_extend(const Tape&, int, bool);

    static double apply_unary(Op op, double v) {
        switch (op) {
            case Op::Sin: return std::sin(v);
            case Op::Cos: return std::cos(v);
            case Op::Exp: return std::exp(v);
            case Op::Log: return std::log(v);
            case Op::Tanh: return std::tanh(v);
            case Op::Sqrt: return std::sqrt(v);
            default: throw std::logic_error("not a unary op");
        }
    }

    bool is_const(Value v) const { return op_[v.id()] == Op::Const; }
    double const_val(Value v) const { return imm_[v.id()]; }
    bool is_zero(Value v) const { return is_const(v) && const_val(v) == 0.0; }
    bool is_one(Value v) const { return is_const(v) && const_val(v) == 1.0; }

    void check_owned(Value v) const {
        if (v.tape() != this)
            throw std::invalid_argument("value belongs to a different recording context");
    }
    void check_pair(Value x, Value y) const {
        check_owned(x);
        check_owned(y);
    }

    std::uint32_t push(Op op, std::uint32_t a, std::uint32_t b, double imm) {
        op_.push_back(op);
        a_.push_back(a);
        b_.push_back(b);
        imm_.push_back(imm);
        index_.clear();
        return static_cast<std::uint32_t>(op_.size() - 1);
    }

    int num_inputs_;
    int num_params_;
    std::vector<Op> op_;
    std::vector<std::uint32_t> a_, b_;
    std::vector<double> imm_;
    std::vector<std::uint32_t> input_node_, param_node_;
    std::vector<std::uint32_t> outputs_;
    // consumer index (CSR): entry = (node << 1) | operand_slot
    mutable std::vector<std::uint32_t> index_offsets_;
    mutable std::vector<std::uint32_t> index_;
};

// --- Value operator sugar ----------------------------------------------------

inline Value operator+(Value x, Value y) { return x.tape()->add(x, y); }
inline Value operator-(Value x, Value y) { return x.tape()->sub(x, y); }
inline Value operator*(Value x, Value y) { return x.tape()->mul(x, y); }
inline Value operator/(Value x, Value y) { return x.tape()->div(x, y); }
inline Value operator-(Value x) { return x.tape()->neg(x); }
inline Value operator+(Value x, double c) { return x + x.tape()->constant(c); }
inline Value operator+(double c, Value x) { return x.tape()->constant(c) + x; }
inline Value operator-(Value x, double c) { return x - x.tape()->constant(c); }
inline Value operator-(double c, Value x) { return x.tape()->constant(c) - x; }
inline Value operator*(Value x, double c) { return x * x.tape()->constant(c); }
inline Value operator*(double c, Value x) { return x.tape()->constant(c) * x; }
inline Value operator/(Value x, double c) { return x / x.tape()->constant(c); }
inline Value operator/(double c, Value x) { return x.tape()->constant(c) / x; }
inline Value sin(Value x) { return x.tape()->unary(Op::Sin, x); }
inline Value cos(Value x) { return x.tape()->unary(Op::Cos, x); }
inline Value exp(Value x) { return x.tape()->unary(Op::Exp, x); }
inline Value log(Value x) { return x.tape()->unary(Op::Log, x); }
inline Value tanh(Value x) { return x.tape()->unary(Op::Tanh, x); }
inline Value sqrt(Value x) { return x.tape()->unary(Op::Sqrt, x); }

// --- evaluation ---------------------------------------------------------------

struct EvalOptions {
    bool check_finite = true;
};

/// Reusable buffers; one per thread of execution.
struct Workspace {
    std::vector<double> values;
    std::vector<double> adjoints;
};

namespace detail {

inline void check_arity(const Tape& t, std::size_t inputs, std::size_t params, std::size_t lanes) {
    if (inputs != static_cast<std::size_t>(t.num_inputs()) * lanes)
        throw std::invalid_argument("input arity mismatch: expected " +
                                    std::to_string(t.num_inputs() * lanes) + " values, got " +
                                    std::to_string(inputs));
    if (params != static_cast<std::size_t>(t.num_params()))
        throw std::invalid_argument("param arity mismatch: expected " +
                                    std::to_string(t.num_params()) + " values, got " +
                                    std::to_string(params));
}

} // namespace detail

/// Evaluates nodes [0, node_limit) over `lanes` lanes. Inputs are per-lane
/// (layout [slot][lane]); params are shared across lanes. Values for node i,
/// lane l land at ws.values[i*lanes + l].
inline void eval_batch(const Tape& t, std::size_t lanes, std::span<const double> inputs,
                       std::span<const double> params, Workspace& ws,
                       const EvalOptions& opts = {}, std::size_t node_limit = SIZE_MAX) {
    detail::check_arity(t, inputs.size(), params.size(), lanes);
    const std::size_t n = std::min(node_limit, t.size());
    ws.values.resize(t.size() * lanes);
    double* v = ws.values.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* out = v + i * lanes;
        const Op op = t.node_op(i);
        const std::uint32_t a = t.node_a(i), b = t.node_b(i);
        switch (op) {
            case Op::Const: {
                const double c = t.node_imm(i);
                for (std::size_t l = 0; l < lanes; ++l) out[l] = c;
                break;
            }
            case Op::Input: {
                const double* src = inputs.data() + static_cast<std::size_t>(a) * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = src[l];
                break;
            }
            case Op::Param: {
                const double c = params[a];
                for (std::size_t l = 0; l < lanes; ++l) out[l] = c;
                break;
            }
            case Op::Add: {
                const double* xa = v + std::size_t{a} * lanes;
                const double* xb = v + std::size_t{b} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = xa[l] + xb[l];
                break;
            }
            case Op::Sub: {
                const double* xa = v + std::size_t{a} * lanes;
                const double* xb = v + std::size_t{b} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = xa[l] - xb[l];
                break;
            }
            case Op::Mul: {
                const double* xa = v + std::size_t{a} * lanes;
                const double* xb = v + std::size_t{b} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = xa[l] * xb[l];
                break;
            }
            case Op::Div: {
                const double* xa = v + std::size_t{a} * lanes;
                const double* xb = v + std::size_t{b} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = xa[l] / xb[l];
                break;
            }
            case Op::Neg: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = -xa[l];
                break;
            }
            case Op::Sin: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::sin(xa[l]);
                break;
            }
            case Op::Cos: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::cos(xa[l]);
                break;
            }
            case Op::Exp: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::exp(xa[l]);
                break;
            }
            case Op::Log: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::log(xa[l]);
                break;
            }
            case Op::Tanh: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::tanh(xa[l]);
                break;
            }
            case Op::Sqrt: {
                const double* xa = v + std::size_t{a} * lanes;
                for (std::size_t l = 0; l < lanes; ++l) out[l] = std::sqrt(xa[l]);
                break;
            }
        }
        if (opts.check_finite) {
            for (std::size_t l = 0; l < lanes; ++l)
                if (!std::isfinite(out[l])) throw NonFiniteError(i, op, l);
        }
    }
}

/// Reverse pass (pull mode) over nodes [0, node_limit) of `t`, reading values
/// from a prior eval_batch whose tape had `t` as a prefix. Output cotangents
/// are per output per lane ([output][lane]). Results: per-lane input adjoints
/// ([slot][lane]) and lane-reduced param adjoints, ACCUMULATED into the spans.
inline void backward_batch(const Tape& t, std::size_t lanes, std::span<const double> values,
                           std::span<const double> output_cotangents,
                           std::span<double> input_adjoints, std::span<double> param_adjoints,
                           Workspace& ws, const EvalOptions& opts = {}) {
    const std::size_t n = t.size();
    if (values.size() < n * lanes) throw std::invalid_argument("values buffer too small for backward");
    if (output_cotangents.size() != t.num_outputs() * lanes)
        throw std::invalid_argument("cotangent arity mismatch");
    if (!input_adjoints.empty() && input_adjoints.size() != static_cast<std::size_t>(t.num_inputs()) * lanes)
        throw std::invalid_argument("input adjoint size mismatch");
    if (!param_adjoints.empty() && param_adjoints.size() != static_cast<std::size_t>(t.num_params()))
        throw std::invalid_argument("param adjoint size mismatch");
    t.build_index();

    ws.adjoints.resize(n * lanes);
    double* adj = ws.adjoints.data();
    const double* v = values.data();

    for (std::size_t ii = n; ii-- > 0;) {
        double* ai = adj + ii * lanes;
        for (std::size_t l = 0; l < lanes; ++l) ai[l] = 0.0;
        // direct cotangents on outputs
        const auto outs = t.outputs();
        for (std::size_t o = 0; o < outs.size(); ++o) {
            if (outs[o] == ii) {
                const double* c = output_cotangents.data() + o * lanes;
                for (std::size_t l = 0; l < lanes; ++l) ai[l] += c[l];
            }
        }
        // pull from consumers
        for (std::uint32_t entry : t.consumers(ii)) {
            const std::size_t c = entry >> 1;
            const bool second = entry & 1u;
            const double* ac = adj + c * lanes;
            const Op cop = t.node_op(c);
            const std::uint32_t ca = t.node_a(c), cb = t.node_b(c);
            switch (cop) {
                case Op::Add:
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l];
                    break;
                case Op::Sub:
                    if (second)
                        for (std::size_t l = 0; l < lanes; ++l) ai[l] -= ac[l];
                    else
                        for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l];
                    break;
                case Op::Mul: {
                    const double* other = v + std::size_t{second ? ca : cb} * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] * other[l];
                    break;
                }
                case Op::Div: {
                    const double* xb = v + std::size_t{cb} * lanes;
                    if (second) {
                        const double* q = v + c * lanes; // c holds a/b
                        for (std::size_t l = 0; l < lanes; ++l) ai[l] -= ac[l] * q[l] / xb[l];
                    } else {
                        for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] / xb[l];
                    }
                    break;
                }
                case Op::Neg:
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] -= ac[l];
                    break;
                case Op::Sin: {
                    const double* xa = v + std::size_t{ca} * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] * std::cos(xa[l]);
                    break;
                }
                case Op::Cos: {
                    const double* xa = v + std::size_t{ca} * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] -= ac[l] * std::sin(xa[l]);
                    break;
                }
                case Op::Exp: {
                    const double* e = v + c * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] * e[l];
                    break;
                }
                case Op::Log: {
                    const double* xa = v + std::size_t{ca} * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] / xa[l];
                    break;
                }
                case Op::Tanh: {
                    const double* th = v + c * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] * (1.0 - th[l] * th[l]);
                    break;
                }
                case Op::Sqrt: {
                    const double* s = v + c * lanes;
                    for (std::size_t l = 0; l < lanes; ++l) ai[l] += ac[l] / (2.0 * s[l]);
                    break;
                }
                default:
                    throw std::logic_error("leaf node cannot consume");
            }
        }
        if (opts.check_finite) {
            for (std::size_t l = 0; l < lanes; ++l)
                if (!std::isfinite(ai[l])) throw NonFiniteError(ii, t.node_op(ii), l);
        }
        const Op op = t.node_op(ii);
        if (op == Op::Input && !input_adjoints.empty()) {
            double* dst = input_adjoints.data() + std::size_t{t.node_a(ii)} * lanes;
            for (std::size_t l = 0; l < lanes; ++l) dst[l] += ai[l];
        } else if (op == Op::Param && !param_adjoints.empty()) {
            double acc = 0.0;
            for (std::size_t l = 0; l < lanes; ++l) acc += ai[l];
            param_adjoints[t.node_a(ii)] += acc;
        }
    }
}

// --- scalar convenience wrappers ----------------------------------------------

inline std::vector<double> evaluate(const Tape& t, std::span<const double> inputs,
                                    std::span<const double> params, const EvalOptions& opts = {}) {
    Workspace ws;
    eval_batch(t, 1, inputs, params, ws, opts);
    std::vector<double> out(t.num_outputs());
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = ws.values[t.outputs()[o]];
    return out;
}

struct Gradients {
    std::vector<double> inputs;
    std::vector<double> params;
};

inline Gradients backward(const Tape& t, std::span<const double> inputs,
                          std::span<const double> params,
                          std::span<const double> output_cotangents,
                          const EvalOptions& opts = {}) {
    Workspace ws;
    eval_batch(t, 1, inputs, params, ws, opts);
    Gradients g;
    g.inputs.assign(static_cast<std::size_t>(t.num_inputs()), 0.0);
    g.params.assign(static_cast<std::size_t>(t.num_params()), 0.0);
    Workspace ws2;
    backward_batch(t, 1, ws.values, output_cotangents, g.inputs, g.params, ws2, opts);
    return g;
}

/// Reverse-mode derivative of output `output_index` w.r.t. every input slot.
inline std::vector<double> grad_inputs(const Tape& t, std::span<const double> inputs,
                                       std::span<const double> params, std::size_t output_index,
                                       const EvalOptions& opts = {}) {
    if (output_index >= t.num_outputs()) throw std::invalid_argument("output index out of range");
    std::vector<double> cot(t.num_outputs(), 0.0);
    cot[output_index] = 1.0;
    return backward(t, inputs, params, cot, opts).inputs;
}

/// Reverse-mode derivative w.r.t. every parameter slot, seeded by a cotangent
/// per output.
inline std::vector<double> grad_params(const Tape& t, std::span<const double> inputs,
                                       std::span<const double> params,
                                       std::span<const double> output_cotangents,
                                       const EvalOptions& opts = {}) {
    return backward(t, inputs, params, output_cotangents, opts).params;
}

// --- forward-mode transform -----------------------------------------------------

/// Copies `src` and appends the forward-mode tangent of every node, seeded
/// either on one input slot (param_direction == false, seed baked to 1) or on
/// a runtime parameter direction (param_direction == true; one extra param
/// slot per original param carries the direction, so the new param layout is
/// [original params..., direction...]).
///
/// The returned tape's outputs are [original outputs..., their tangents...].
/// The original tape is an exact node-for-node prefix, so values buffers and
/// prefix backward passes are interchangeable between the two.
inline Tape forward_derivative_extend(const Tape& src, int wrt_input, bool param_direction = false) {
    if (!param_direction && (wrt_input < 0 || wrt_input >= src.num_inputs()))
        throw std::invalid_argument("derivative input slot out of range");
    Tape ext = src;
    ext.index_.clear();
    ext.index_offsets_.clear();
    if (param_direction) {
        ext.num_params_ = 2 * src.num_params();
        ext.param_node_.resize(static_cast<std::size_t>(ext.num_params_), kNoNode);
    }

    const std::size_t n = src.size();
    std::vector<std::uint32_t> dot(n, kNoNode); // kNoNode = structurally zero tangent
    auto dval = [&](std::uint32_t id) { return ext.handle(id); };

    for (std::size_t i = 0; i < n; ++i) {
        const Op op = src.node_op(i);
        const std::uint32_t a = src.node_a(i), b = src.node_b(i);
        const std::uint32_t da = (a == kNoNode || op == Op::Input || op == Op::Param) ? kNoNode : dot[a];
        const std::uint32_t db = b == kNoNode ? kNoNode : dot[b];
        std::uint32_t d = kNoNode;
        switch (op) {
            case Op::Const:
                break;
            case Op::Input:
                if (!param_direction && static_cast<int>(a) == wrt_input)
                    d = ext.constant(1.0).id();
                break;
            case Op::Param:
                if (param_direction)
                    d = ext.param(static_cast<int>(a) + src.num_params()).id();
                break;
            case Op::Add:
                if (da != kNoNode && db != kNoNode) d = (dval(da) + dval(db)).id();
                else if (da != kNoNode) d = da;
                else if (db != kNoNode) d = db;
                break;
            case Op::Sub:
                if (da != kNoNode && db != kNoNode) d = (dval(da) - dval(db)).id();
                else if (da != kNoNode) d = da;
                else if (db != kNoNode) d = ext.neg(dval(db)).id();
                break;
            case Op::Mul: {
                std::uint32_t t1 = kNoNode, t2 = kNoNode;
                if (da != kNoNode) t1 = (dval(da) * dval(b)).id();
                if (db != kNoNode) t2 = (dval(a) * dval(db)).id();
                if (t1 != kNoNode && t2 != kNoNode) d = (dval(t1) + dval(t2)).id();
                else d = t1 != kNoNode ? t1 : t2;
                break;
            }
            case Op::Div: {
                // d(a/b) = (da - (a/b)*db) / b, reusing the primal quotient node
                Value q = ext.handle(static_cast<std::uint32_t>(i));
                if (da != kNoNode && db != kNoNode) d = ((dval(da) - q * dval(db)) / dval(b)).id();
                else if (da != kNoNode) d = (dval(da) / dval(b)).id();
                else if (db != kNoNode) d = (ext.neg(q * dval(db)) / dval(b)).id();
                break;
            }
            case Op::Neg:
                if (da != kNoNode) d = ext.neg(dval(da)).id();
                break;
            case Op::Sin:
                if (da != kNoNode) d = (cos(dval(a)) * dval(da)).id();
                break;
            case Op::Cos:
                if (da != kNoNode) d = ext.neg(sin(dval(a)) * dval(da)).id();
                break;
            case Op::Exp:
                if (da != kNoNode) d = (ext.handle(static_cast<std::uint32_t>(i)) * dval(da)).id();
                break;
            case Op::Log:
                if (da != kNoNode) d = (dval(da) / dval(a)).id();
                break;
            case Op::Tanh:
                if (da != kNoNode) {
                    Value th = ext.handle(static_cast<std::uint32_t>(i));
                    d = ((1.0 - th * th) * dval(da)).id();
                }
                break;
            case Op::Sqrt:
                if (da != kNoNode) {
                    Value s = ext.handle(static_cast<std::uint32_t>(i));
                    d = (dval(da) / (2.0 * s)).id();
                }
                break;
        }
        dot[i] = d;
    }

    for (std::uint32_t out : src.outputs()) {
        std::uint32_t d = dot[out];
        if (d == kNoNode) d = ext.constant(0.0).id();
        ext.mark_output(ext.handle(d));
    }
    return ext;
}

/// Spec-shaped derivative: a fresh differentiable expression whose outputs are
/// the derivatives of `src`'s outputs with respect to one input. The result is
/// a plain tape, so it composes with grad_params/grad_inputs (reverse over
/// forward).
inline Tape derivative(const Tape& src, int wrt_input) {
    Tape ext = forward_derivative_extend(src, wrt_input);
    auto outs = ext.outputs();
    std::vector<std::uint32_t> tangents(outs.begin() + static_cast<std::ptrdiff_t>(src.num_outputs()),
                                        outs.end());
    ext.set_outputs(std::move(tangents));
    return ext;
}

} // namespace cnfrom::ad
