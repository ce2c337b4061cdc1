#include "ivtf/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "ivtf/errors.hpp"
#include "ivtf/estimators.hpp"
#include "ivtf/format.hpp"
#include "ivtf/kernels.hpp"

namespace ivtf {

namespace {

using SparseRow = CompiledAttention::SparseRow;

std::vector<SparseRow> sparse_rows(const Matrix& m) {
    std::vector<SparseRow> rows;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        SparseRow sr{r, {}};
        const auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            if (row[c] != 0.0) sr.entries.emplace_back(c, row[c]);
        if (!sr.entries.empty()) rows.push_back(std::move(sr));
    }
    return rows;
}

// out[r * N + i] = Σ_c M(row_r, c) H(c, i) for each stored row.
void apply_rows(const std::vector<SparseRow>& rows, const Matrix& H, std::vector<double>& out) {
    const std::size_t N = H.cols();
    out.assign(rows.size() * N, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::span<double> dst(out.data() + r * N, N);
        for (const auto& [c, v] : rows[r].entries) kernels::axpy(v, H.row(c), dst);
    }
}

bool columns_identical(const std::vector<double>& a, std::size_t rows, std::size_t N) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * N;
        for (std::size_t i = 1; i < N; ++i)
            if (row[i] != row[0]) return false;
    }
    return true;
}

double relu(double v) noexcept { return v > 0.0 ? v : 0.0; }

bool embedding_diverged(const Matrix& H) {
    for (double v : H.data())
        if (!std::isfinite(v) || std::abs(v) > kDivergenceMagnitude) return true;
    return false;
}

void check_square(const Matrix& m, std::size_t D, const char* what) {
    if (m.rows() != D || m.cols() != D) throw DimensionError(std::string("attention ") + what + " must be D x D");
}

}  // namespace

CompiledAttention::CompiledAttention(const AttentionLayerParams& layer) : dim_(layer.dim()) {
    if (layer.heads.empty()) throw std::invalid_argument("attention layer needs at least one head");
    heads_.reserve(layer.heads.size());
    for (const auto& h : layer.heads) {
        check_square(h.Q, dim_, "Q");
        check_square(h.K, dim_, "K");
        check_square(h.V, dim_, "V");
        Head c;
        auto q = sparse_rows(h.Q);
        auto k = sparse_rows(h.K);
        // a score only involves rows that are nonzero in both Q and K
        std::size_t a = 0, b = 0;
        while (a < q.size() && b < k.size()) {
            if (q[a].row < k[b].row) {
                ++a;
            } else if (k[b].row < q[a].row) {
                ++b;
            } else {
                c.q.push_back(std::move(q[a++]));
                c.k.push_back(std::move(k[b++]));
            }
        }
        c.v = sparse_rows(h.V);
        heads_.push_back(std::move(c));
    }
}

Matrix attention_forward(const Matrix& H, const AttentionLayerParams& layer) {
    return attention_forward(H, CompiledAttention(layer));
}

Matrix attention_forward(const Matrix& H, const CompiledAttention& layer) {
    if (H.rows() != layer.dim()) throw DimensionError("attention input has the wrong embedding dimension");
    const std::size_t N = H.cols();
    if (N == 0) throw DimensionError("attention input has no columns");
    Matrix out = H;
    const double inv_n = 1.0 / static_cast<double>(N);
    std::vector<double> qh, kh, vh, w(N), scores;

    for (const auto& head : layer.heads()) {
        if (head.q.empty() || head.v.empty()) continue;
        const std::size_t r = head.q.size();
        apply_rows(head.q, H, qh);
        apply_rows(head.k, H, kh);
        apply_rows(head.v, H, vh);

        if (columns_identical(qh, r, N)) {
            // every query sees the same weights; one row of scores serves all columns
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t d = 0; d < r; ++d) kernels::axpy(qh[d * N], {kh.data() + d * N, N}, w);
            for (auto& x : w) x = relu(x);
            for (std::size_t v = 0; v < head.v.size(); ++v) {
                const double add = kernels::dot(w, {vh.data() + v * N, N}) * inv_n;
                auto dst = out.row(head.v[v].row);
                for (std::size_t i = 0; i < N; ++i) dst[i] += add;
            }
        } else if (columns_identical(kh, r, N)) {
            // the weight depends on the query only, so values can be summed once
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t d = 0; d < r; ++d) kernels::axpy(kh[d * N], {qh.data() + d * N, N}, w);
            for (auto& x : w) x = relu(x);
            for (std::size_t v = 0; v < head.v.size(); ++v) {
                double total = 0.0;
                for (std::size_t j = 0; j < N; ++j) total += vh[v * N + j];
                const double scaled = total * inv_n;
                auto dst = out.row(head.v[v].row);
                for (std::size_t i = 0; i < N; ++i) dst[i] += w[i] * scaled;
            }
        } else {
            scores.assign(N * N, 0.0);  // scores[i * N + j]
            for (std::size_t i = 0; i < N; ++i) {
                std::span<double> si(scores.data() + i * N, N);
                for (std::size_t d = 0; d < r; ++d) kernels::axpy(qh[d * N + i], {kh.data() + d * N, N}, si);
                kernels::relu(si, si);
            }
            for (std::size_t v = 0; v < head.v.size(); ++v) {
                auto dst = out.row(head.v[v].row);
                std::span<const double> vals(vh.data() + v * N, N);
                for (std::size_t i = 0; i < N; ++i) dst[i] += kernels::dot({scores.data() + i * N, N}, vals) * inv_n;
            }
        }
    }
    return out;
}

Matrix mlp_forward(const Matrix& H, const MlpLayerParams& layer) {
    if (layer.W1.rows() == 0) {
        if (layer.W2.cols() != 0) throw DimensionError("MLP hidden widths disagree");
        return H;
    }
    if (layer.W1.cols() != H.rows() || layer.W2.rows() != H.rows() || layer.W2.cols() != layer.W1.rows()) {
        throw DimensionError("MLP weight shapes do not match the embedding");
    }
    Matrix hidden = matmul(layer.W1, H);
    kernels::relu(hidden.data(), hidden.data());
    return H + matmul(layer.W2, hidden);
}

Matrix transformer_forward(const Matrix& H, const std::vector<TransformerLayerParams>& layers, double clip_radius) {
    Matrix cur = H;
    for (const auto& layer : layers) {
        cur = mlp_forward(attention_forward(cur, layer.attention), layer.mlp);
        if (std::isfinite(clip_radius)) {
            for (std::size_t j = 0; j < cur.cols(); ++j) cur.set_column(j, clip(cur.column(j), clip_radius));
        }
    }
    return cur;
}

EmbeddedPrompt embed(const Dataset& data, const GDState& init) {
    data.validate();
    const std::size_t n = data.n(), p = data.p(), q = data.q();
    if (init.theta.rows() != q || init.theta.cols() != p || init.beta.size() != p) {
        throw DimensionError("embed: initial state does not match the dataset dimensions");
    }
    const Layout L{p, q};
    EmbeddedPrompt e{Matrix(L.dim(), n + 1), p, q, n};
    Matrix& H = e.H;
    for (std::size_t i = 0; i <= n; ++i) {
        const bool train = i < n;
        for (std::size_t l = 0; l < q; ++l) H(L.z(l), i) = train ? data.Z(i, l) : data.z_query[l];
        for (std::size_t k = 0; k < p; ++k) H(L.x(k), i) = train ? data.X(i, k) : data.x_query[k];
        H(L.y(), i) = train ? data.Y[i] : 0.0;
        for (std::size_t k = 0; k < p; ++k) {
            for (std::size_t l = 0; l < q; ++l) H(L.theta(l, k), i) = init.theta(l, k);
            H(L.beta(k), i) = init.beta[k];
        }
        H(L.one(), i) = 1.0;
        H(L.t(), i) = train ? 1.0 : 0.0;
    }
    return e;
}

ExtractedState extract_state(const EmbeddedPrompt& prompt) {
    const Layout L = prompt.layout();
    const Matrix& H = prompt.H;
    if (H.rows() != L.dim() || H.cols() != prompt.n + 1) throw DimensionError("extract_state: embedding shape mismatch");
    ExtractedState s{GDState::zeros(prompt.p, prompt.q), Matrix(prompt.n + 1, prompt.p)};
    auto replicated = [&](std::size_t row) {
        const double ref = H(row, 0);
        const double tol = 1e-9 * std::max(1.0, std::abs(ref));
        for (std::size_t j = 1; j < H.cols(); ++j) {
            if (!(std::abs(H(row, j) - ref) <= tol)) {
                throw CorruptedStateError("embedded state row " + std::to_string(row) + " differs in column " +
                                          std::to_string(j));
            }
        }
        return ref;
    };
    for (std::size_t k = 0; k < prompt.p; ++k) {
        for (std::size_t l = 0; l < prompt.q; ++l) s.state.theta(l, k) = replicated(L.theta(l, k));
        s.state.beta[k] = replicated(L.beta(k));
        for (std::size_t i = 0; i <= prompt.n; ++i) s.xhat(i, k) = H(L.xhat(k), i);
    }
    return s;
}

double read_y(const EmbeddedPrompt& prompt) { return prompt.H(prompt.layout().y(), prompt.n); }

namespace {

AttentionLayerParams first_layer(const Layout& L) {
    const std::size_t D = L.dim();
    AttentionLayerParams layer;
    for (std::size_t k = 0; k < L.p; ++k) {
        for (double sign : {1.0, -1.0}) {
            AttentionHead h{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
            for (std::size_t l = 0; l < L.q; ++l) {
                h.Q(l, L.z(l)) = sign;
                h.K(l, L.theta(l, k)) = 1.0;
            }
            h.Q(L.q, L.xhat(k)) = 1.0;
            h.K(L.q, L.one()) = -sign;
            h.V(L.xhat(k), L.one()) = sign;
            layer.heads.push_back(std::move(h));
        }
    }
    return layer;
}

AttentionLayerParams second_layer(const Layout& L, std::size_t n, const LearningRates& rates, const MaskBounds& b) {
    const std::size_t D = L.dim();
    const double scale = static_cast<double>(n + 1);
    AttentionLayerParams layer;
    for (std::size_t k = 0; k < L.p; ++k) {
        for (double sign : {1.0, -1.0}) {
            AttentionHead h{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
            for (std::size_t l = 0; l < L.q; ++l) {
                h.Q(l, L.theta(l, k)) = sign;
                h.K(l, L.z(l)) = 1.0;
                h.V(L.theta(l, k), L.z(l)) = -sign * scale * rates.eta;
            }
            h.Q(L.q, L.one()) = -sign;
            h.Q(L.q + 1, L.one()) = -1.0;
            h.K(L.q, L.x(k)) = 1.0;
            h.K(L.q + 1, L.one()) = b.R;
            h.K(L.q + 1, L.t()) = -b.R;
            layer.heads.push_back(std::move(h));
        }
    }
    for (double sign : {1.0, -1.0}) {
        AttentionHead h{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
        for (std::size_t l = 0; l < L.p; ++l) {
            h.Q(l, L.beta(l)) = sign;
            h.K(l, L.xhat(l)) = 1.0;
            h.V(L.beta(l), L.xhat(l)) = -sign * scale * rates.alpha;
        }
        h.Q(L.p, L.one()) = -sign;
        h.Q(L.p + 1, L.one()) = -1.0;
        h.K(L.p, L.y()) = 1.0;
        h.K(L.p + 1, L.one()) = b.R_prime;
        h.K(L.p + 1, L.t()) = -b.R_prime;
        layer.heads.push_back(std::move(h));
    }
    return layer;
}

AttentionHead constant_head(std::size_t D, std::size_t one_row) {
    AttentionHead h{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
    h.Q(0, one_row) = 1.0;
    h.K(0, one_row) = 1.0;
    return h;
}

void validate_block_inputs(std::size_t p, std::size_t q, std::size_t n, const LearningRates& rates,
                           const MaskBounds& b) {
    if (p == 0 || q == 0 || n == 0) throw std::invalid_argument("build_block: p, q and n must be positive");
    if (!std::isfinite(rates.alpha) || !std::isfinite(rates.eta)) {
        throw std::invalid_argument("build_block: learning rates must be finite");
    }
    if (!(b.R > 0.0) || !(b.R_prime > 0.0) || !std::isfinite(b.R) || !std::isfinite(b.R_prime)) {
        throw std::invalid_argument("build_block: mask bounds must be positive and finite");
    }
}

}  // namespace

BlockParams build_block(std::size_t p, std::size_t q, std::size_t n, const LearningRates& rates,
                        const MaskBounds& bounds) {
    validate_block_inputs(p, q, n, rates, bounds);
    const Layout L{p, q};
    BlockParams b;
    b.p = p;
    b.q = q;
    b.n = n;
    b.rates = rates;
    b.bounds = bounds;
    b.layer1 = first_layer(L);
    b.layer2 = second_layer(L, n, rates, bounds);
    b.compiled1 = CompiledAttention(b.layer1);
    b.compiled2 = CompiledAttention(b.layer2);
    return b;
}

BlockParams build_ridge_block(std::size_t p, std::size_t q, std::size_t n, const LearningRates& rates,
                              const MaskBounds& bounds, double lambda, double tau) {
    if (!(lambda >= 0.0) || !(tau >= 0.0)) throw std::invalid_argument("build_ridge_block: lambda and tau must be >= 0");
    validate_block_inputs(p, q, n, rates, bounds);
    const Layout L{p, q};
    BlockParams b;
    b.p = p;
    b.q = q;
    b.n = n;
    b.rates = rates;
    b.bounds = bounds;
    b.ridge = true;
    b.lambda = lambda;
    b.tau = tau;
    b.layer1 = first_layer(L);
    b.layer2 = second_layer(L, n, rates, bounds);
    const std::size_t D = L.dim();
    for (std::size_t k = 0; k < p; ++k) {
        AttentionHead h = constant_head(D, L.one());
        for (std::size_t l = 0; l < q; ++l) h.V(L.theta(l, k), L.theta(l, k)) = -rates.eta * tau;
        b.layer2.heads.push_back(std::move(h));
    }
    AttentionHead hb = constant_head(D, L.one());
    for (std::size_t l = 0; l < p; ++l) hb.V(L.beta(l), L.beta(l)) = -rates.alpha * lambda;
    b.layer2.heads.push_back(std::move(hb));
    b.compiled1 = CompiledAttention(b.layer1);
    b.compiled2 = CompiledAttention(b.layer2);
    return b;
}

namespace {

MaskBounds bounds_from(const Dataset& data, const Trajectory& tr) {
    const std::size_t n = data.n(), p = data.p();
    double r = 0.0, r_prime = 0.0;
    for (const auto& s : tr.states) {
        const Matrix fitted = matmul(data.Z, s.theta);  // rows Θᵀz_i
        const Vector fitted_q = matvec_t(s.theta, data.z_query);
        for (std::size_t i = 0; i < n; ++i) {
            r = std::max(r, norm2(fitted.row(i)));
            r_prime = std::max({r_prime, std::abs(dot(s.beta, data.X.row(i))), std::abs(dot(s.beta, fitted.row(i)))});
        }
        r = std::max(r, norm2(fitted_q));
        for (std::size_t k = 0; k < p; ++k) r = std::max(r, std::abs(fitted_q[k] - data.x_query[k]));
        r_prime = std::max({r_prime, std::abs(dot(s.beta, data.x_query)), std::abs(dot(s.beta, fitted_q))});
    }
    return {std::max(1.0, 10.0 * r), std::max(1.0, 10.0 * r_prime)};
}

}  // namespace

MaskBounds compute_mask_bounds(const Dataset& data, const LearningRates& rates, std::size_t loops) {
    if (loops < 1) throw std::invalid_argument("compute_mask_bounds: loops must be >= 1");
    return bounds_from(data, run_gd(data, rates, loops));
}

MaskBounds compute_ridge_mask_bounds(const Dataset& data, const LearningRates& rates, std::size_t loops,
                                     double lambda, double tau) {
    if (loops < 1) throw std::invalid_argument("compute_mask_bounds: loops must be >= 1");
    return bounds_from(data, run_ridge_gd(data, rates, loops, lambda, tau));
}

AttentionLayerParams build_readout(std::size_t p, std::size_t q) {
    if (p == 0 || q == 0) throw std::invalid_argument("build_readout: p and q must be positive");
    const Layout L{p, q};
    const std::size_t D = L.dim();
    AttentionLayerParams layer;
    for (double sign : {1.0, -1.0}) {
        AttentionHead h{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
        for (std::size_t k = 0; k < p; ++k) {
            h.Q(k, L.x(k)) = sign;
            h.K(k, L.beta(k)) = 1.0;
        }
        h.V(L.y(), L.one()) = sign;
        layer.heads.push_back(std::move(h));
    }
    return layer;
}

LoopedModel make_looped_model(std::shared_ptr<const BlockParams> block, std::size_t loops) {
    if (!block) throw std::invalid_argument("make_looped_model: block is null");
    if (loops < 1) throw std::invalid_argument("make_looped_model: loops must be >= 1");
    LoopedModel m;
    m.readout = build_readout(block->p, block->q);
    m.compiled_readout = CompiledAttention(m.readout);
    m.block = std::move(block);
    m.loops = loops;
    return m;
}

EmbeddedPrompt block_forward(const BlockParams& block, const EmbeddedPrompt& prompt) {
    if (prompt.p != block.p || prompt.q != block.q || prompt.n != block.n) {
        throw DimensionError("block was built for a different (p, q, n)");
    }
    EmbeddedPrompt next{attention_forward(attention_forward(prompt.H, block.compiled1), block.compiled2), prompt.p,
                        prompt.q, prompt.n};
    return next;
}

EmbeddedPrompt looped_forward(const LoopedModel& model, const EmbeddedPrompt& prompt,
                              const std::function<void(std::size_t, const EmbeddedPrompt&)>& on_loop) {
    if (!model.block) throw std::invalid_argument("looped_forward: model has no block");
    EmbeddedPrompt cur = prompt;
    for (std::size_t l = 1; l <= model.loops; ++l) {
        cur = block_forward(*model.block, cur);
        if (embedding_diverged(cur.H)) throw LoopDivergenceError(l);
        if (on_loop) on_loop(l, cur);
    }
    cur.H = attention_forward(cur.H, model.compiled_readout);
    if (embedding_diverged(cur.H)) throw LoopDivergenceError(model.loops);
    return cur;
}

Vector extract_coefficients(const Predictor& predictor, const Dataset& data, double delta) {
    if (delta == 0.0 || !std::isfinite(delta)) throw std::invalid_argument("extract_coefficients: delta must be nonzero");
    auto eval = [&](const Dataset& d) {
        const double v = predictor(d);
        if (!std::isfinite(v)) throw NonFiniteError("extract_coefficients: predictor returned a non-finite value");
        return v;
    };
    const double base = eval(data);
    Vector beta(data.p());
    Dataset shifted = data;
    for (std::size_t k = 0; k < data.p(); ++k) {
        shifted.x_query[k] = data.x_query[k] + delta;
        beta[k] = (eval(shifted) - base) / delta;
        shifted.x_query[k] = data.x_query[k];
    }
    return beta;
}

double tf_predict(const Dataset& data, const TfPredictorOptions& o) {
    data.validate();
    LearningRates rates;
    if (o.explicit_rates) {
        rates = *o.explicit_rates;
    } else {
        rates = o.ridge ? ridge_safe_rates(data, o.lambda, o.tau, o.rate_fraction) : safe_rates(data, o.rate_fraction);
    }
    const MaskBounds bounds = o.ridge ? compute_ridge_mask_bounds(data, rates, o.loops, o.lambda, o.tau)
                                      : compute_mask_bounds(data, rates, o.loops);
    auto block = std::make_shared<const BlockParams>(
        o.ridge ? build_ridge_block(data.p(), data.q(), data.n(), rates, bounds, o.lambda, o.tau)
                : build_block(data.p(), data.q(), data.n(), rates, bounds));
    const LoopedModel model = make_looped_model(std::move(block), o.loops);
    const EmbeddedPrompt out = looped_forward(model, embed(data, GDState::zeros(data.p(), data.q())));
    return read_y(out);
}

Predictor tf_predictor(TfPredictorOptions options) {
    if (options.explicit_rates) {
        // keep the rates alive inside the closure
        auto rates = std::make_shared<LearningRates>(*options.explicit_rates);
        return [options, rates](const Dataset& d) mutable {
            options.explicit_rates = rates.get();
            return tf_predict(d, options);
        };
    }
    return [options](const Dataset& d) { return tf_predict(d, options); };
}

namespace {

void write_matrix(std::ostream& out, const Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << format_double(m(r, c));
        }
        out << '\n';
    }
}

struct LineReader {
    std::istream& in;
    std::size_t line = 0;

    std::vector<std::string> next() {
        std::string s;
        if (!std::getline(in, s)) throw ParseError("model dump ended early", line + 1, 0);
        ++line;
        if (!s.empty() && s.back() == '\r') s.pop_back();
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    }

    std::vector<double> numbers(std::size_t expected) {
        const auto cells = next();
        if (cells.size() != expected) throw ParseError("expected " + std::to_string(expected) + " fields", line, 0);
        std::vector<double> v(expected);
        for (std::size_t i = 0; i < expected; ++i)
            if (!parse_double(cells[i], v[i])) throw ParseError("not a number: '" + cells[i] + "'", line, i + 1);
        return v;
    }
};

std::size_t as_count(double v, std::size_t line, std::size_t col) {
    if (!(v >= 0.0) || v != std::floor(v)) throw ParseError("expected a nonnegative integer", line, col);
    return static_cast<std::size_t>(v);
}

}  // namespace

void dump_model(std::ostream& out, const LoopedModel& model) {
    if (!model.block) throw std::invalid_argument("dump_model: model has no block");
    const BlockParams& b = *model.block;
    const std::size_t D = Layout{b.p, b.q}.dim();
    const std::size_t M = b.layer1.heads.size() + b.layer2.heads.size() + model.readout.heads.size();
    out << "p,q,n,M,D\n" << b.p << ',' << b.q << ',' << b.n << ',' << M << ',' << D << '\n';
    out << "loops,alpha,eta,R,R_prime,lambda,tau\n"
        << model.loops << ',' << format_double(b.rates.alpha) << ',' << format_double(b.rates.eta) << ','
        << format_double(b.bounds.R) << ',' << format_double(b.bounds.R_prime) << ',' << format_double(b.lambda)
        << ',' << format_double(b.tau) << '\n';
    const AttentionLayerParams* layers[] = {&b.layer1, &b.layer2, &model.readout};
    for (std::size_t li = 0; li < 3; ++li) {
        for (std::size_t h = 0; h < layers[li]->heads.size(); ++h) {
            const AttentionHead& head = layers[li]->heads[h];
            const Matrix* mats[] = {&head.Q, &head.K, &head.V};
            const char names[] = {'Q', 'K', 'V'};
            for (std::size_t m = 0; m < 3; ++m) {
                out << li + 1 << ',' << h + 1 << ',' << names[m] << '\n';
                write_matrix(out, *mats[m]);
            }
        }
    }
}

LoopedModel load_model(std::istream& in) {
    LineReader rd{in};
    rd.next();  // header
    const auto dims = rd.numbers(5);
    const std::size_t line = rd.line;
    const std::size_t p = as_count(dims[0], line, 1), q = as_count(dims[1], line, 2), n = as_count(dims[2], line, 3);
    const std::size_t M = as_count(dims[3], line, 4), D = as_count(dims[4], line, 5);
    if (p == 0 || q == 0 || D != Layout{p, q}.dim()) throw ParseError("inconsistent model dimensions", line, 0);
    rd.next();
    const auto meta = rd.numbers(7);
    auto block = std::make_shared<BlockParams>();
    block->p = p;
    block->q = q;
    block->n = n;
    block->rates = {meta[1], meta[2]};
    block->bounds = {meta[3], meta[4]};
    block->lambda = meta[5];
    block->tau = meta[6];
    const std::size_t loops = as_count(meta[0], rd.line, 1);

    AttentionLayerParams layers[3];
    for (std::size_t h = 0; h < M; ++h) {
        AttentionHead head{Matrix(D, D), Matrix(D, D), Matrix(D, D)};
        std::size_t layer_idx = 0;
        for (Matrix* mat : {&head.Q, &head.K, &head.V}) {
            const auto tag = rd.next();
            if (tag.size() != 3) throw ParseError("expected a head tag 'layer,head,matrix'", rd.line, 0);
            double li = 0.0;
            if (!parse_double(tag[0], li) || li < 1.0 || li > 3.0) throw ParseError("bad layer index", rd.line, 1);
            layer_idx = static_cast<std::size_t>(li) - 1;
            for (std::size_t r = 0; r < D; ++r) {
                const auto row = rd.numbers(D);
                std::copy(row.begin(), row.end(), mat->row(r).begin());
            }
        }
        layers[layer_idx].heads.push_back(std::move(head));
    }
    block->ridge = layers[1].heads.size() == 3 * p + 3;
    block->layer1 = std::move(layers[0]);
    block->layer2 = std::move(layers[1]);
    block->compiled1 = CompiledAttention(block->layer1);
    block->compiled2 = CompiledAttention(block->layer2);

    LoopedModel m;
    m.loops = loops;
    m.readout = std::move(layers[2]);
    m.compiled_readout = CompiledAttention(m.readout);
    m.block = std::move(block);
    return m;
}

}  // namespace ivtf
