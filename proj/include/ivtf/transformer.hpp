#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivtf/datagen.hpp"
#include "ivtf/gd2sls.hpp"
#include "ivtf/matrix.hpp"

namespace ivtf {

/// Row indices (0-based) of the embedding used by the constructed models.
struct Layout {
    std::size_t p = 0;
    std::size_t q = 0;

    std::size_t dim() const noexcept { return q * p + 3 * p + q + 3; }
    std::size_t d0() const noexcept { return q + p + 1; }
    std::size_t z(std::size_t l) const noexcept { return l; }
    std::size_t x(std::size_t k) const noexcept { return q + k; }
    std::size_t y() const noexcept { return q + p; }
    std::size_t theta(std::size_t l, std::size_t k) const noexcept { return d0() + k * q + l; }
    std::size_t beta(std::size_t k) const noexcept { return d0() + q * p + k; }
    std::size_t xhat(std::size_t k) const noexcept { return d0() + q * p + p + k; }
    std::size_t one() const noexcept { return dim() - 2; }
    std::size_t t() const noexcept { return dim() - 1; }
};

struct EmbeddedPrompt {
    Matrix H;  // D x (n+1); the last column is the query
    std::size_t p = 0;
    std::size_t q = 0;
    std::size_t n = 0;

    Layout layout() const noexcept { return {p, q}; }
};

struct AttentionHead {
    Matrix Q, K, V;
};

struct AttentionLayerParams {
    std::vector<AttentionHead> heads;
    std::size_t dim() const noexcept { return heads.empty() ? 0 : heads.front().Q.rows(); }
};

/// Sparse form of an attention layer. Only nonzero rows of Q, K and V are
/// stored, which keeps the structured constructed heads cheap to apply.
class CompiledAttention {
public:
    CompiledAttention() = default;
    explicit CompiledAttention(const AttentionLayerParams& layer);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t head_count() const noexcept { return heads_.size(); }

    struct SparseRow {
        std::size_t row;
        std::vector<std::pair<std::size_t, double>> entries;
    };
    struct Head {
        std::vector<SparseRow> q, k;  // restricted to rows present in both
        std::vector<SparseRow> v;
    };
    const std::vector<Head>& heads() const noexcept { return heads_; }

private:
    std::size_t dim_ = 0;
    std::vector<Head> heads_;
};

struct MlpLayerParams {
    Matrix W1;  // D' x D
    Matrix W2;  // D x D'
};

/// One layer of the general stack; an MLP with zero hidden width is skipped.
struct TransformerLayerParams {
    AttentionLayerParams attention;
    MlpLayerParams mlp;
};

/// H + (1/N) Σ_m Σ_j σ(⟨Q_m h_i, K_m h_j⟩) V_m h_j with N = cols(H) and σ = ReLU.
Matrix attention_forward(const Matrix& H, const AttentionLayerParams& layer);
Matrix attention_forward(const Matrix& H, const CompiledAttention& layer);

/// H + W₂ σ(W₁ H).
Matrix mlp_forward(const Matrix& H, const MlpLayerParams& layer);

/// Attention then MLP per layer. Columns are rescaled onto the radius-`clip`
/// ball after each layer when `clip` is finite.
Matrix transformer_forward(const Matrix& H, const std::vector<TransformerLayerParams>& layers,
                           double clip = kUnbounded);

struct MaskBounds {
    double R = 1.0;
    double R_prime = 1.0;
};

struct BlockParams {
    std::size_t p = 0, q = 0, n = 0;
    LearningRates rates;
    MaskBounds bounds;
    bool ridge = false;
    double lambda = 0.0, tau = 0.0;
    AttentionLayerParams layer1;  // 2p heads
    AttentionLayerParams layer2;  // 2p+2 heads, or 3p+3 in ridge mode
    CompiledAttention compiled1;
    CompiledAttention compiled2;
};

struct LoopedModel {
    std::shared_ptr<const BlockParams> block;
    std::size_t loops = 1;
    AttentionLayerParams readout;
    CompiledAttention compiled_readout;
};

/// Raised by looped_forward when an intermediate embedding is not finite or exceeds 1e30.
class LoopDivergenceError : public std::runtime_error {
public:
    explicit LoopDivergenceError(std::size_t loop)
        : std::runtime_error("looped forward diverged at loop " + std::to_string(loop)), loop_(loop) {}
    std::size_t loop() const noexcept { return loop_; }

private:
    std::size_t loop_;
};

EmbeddedPrompt embed(const Dataset& data, const GDState& init);

/// State of column 0 plus the x̂ rows of every column (as an (n+1) x p matrix).
struct ExtractedState {
    GDState state;
    Matrix xhat;
};

/// Throws CorruptedStateError when Θ or β differ across columns by more than 1e-9.
ExtractedState extract_state(const EmbeddedPrompt& prompt);

double read_y(const EmbeddedPrompt& prompt);

BlockParams build_block(std::size_t p, std::size_t q, std::size_t n, const LearningRates& rates,
                        const MaskBounds& bounds);
BlockParams build_ridge_block(std::size_t p, std::size_t q, std::size_t n, const LearningRates& rates,
                              const MaskBounds& bounds, double lambda, double tau);

/// Ten times the largest score each mask must dominate along the reference
/// trajectory of `loops` steps, floored at 1.
MaskBounds compute_mask_bounds(const Dataset& data, const LearningRates& rates, std::size_t loops);
MaskBounds compute_ridge_mask_bounds(const Dataset& data, const LearningRates& rates, std::size_t loops,
                                     double lambda, double tau);

AttentionLayerParams build_readout(std::size_t p, std::size_t q);

LoopedModel make_looped_model(std::shared_ptr<const BlockParams> block, std::size_t loops);

/// One application of the two-layer block.
EmbeddedPrompt block_forward(const BlockParams& block, const EmbeddedPrompt& prompt);

/// `loops` block applications followed by the readout layer. When `on_loop`
/// is set it observes the embedding after each loop (1-based index).
EmbeddedPrompt looped_forward(const LoopedModel& model, const EmbeddedPrompt& prompt,
                              const std::function<void(std::size_t, const EmbeddedPrompt&)>& on_loop = {});

using Predictor = std::function<double(const Dataset&)>;

/// β̂_k = (f(x_query + Δ e_k) − f(x_query)) / Δ.
Vector extract_coefficients(const Predictor& predictor, const Dataset& data, double delta);

struct TfPredictorOptions {
    std::size_t loops = 60;
    double rate_fraction = 0.75;     // of the per-prompt thresholds; ignored when explicit rates are set
    const LearningRates* explicit_rates = nullptr;
    bool ridge = false;
    double lambda = 0.0, tau = 0.0;
};

/// Builds the constructed model for a prompt (rates and mask bounds from its
/// training columns) and returns the query prediction.
double tf_predict(const Dataset& data, const TfPredictorOptions& options);
Predictor tf_predictor(TfPredictorOptions options);

/// Flat CSV dump: a header line "p,q,n,M,D", one value line, then each head
/// as "layer,head,matrix" followed by D rows.
void dump_model(std::ostream& out, const LoopedModel& model);
LoopedModel load_model(std::istream& in);

}  // namespace ivtf
