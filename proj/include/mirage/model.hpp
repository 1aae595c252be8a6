#ifndef MIRAGE_MODEL_HPP
#define MIRAGE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mirage/error.hpp"
#include "mirage/matrix.hpp"
#include "mirage/rng.hpp"
#include "mirage/scene.hpp"
#include "mirage/vocab.hpp"

namespace mirage {

// Toy frozen-backbone captioner.
//
// Pipeline per cell/token:
//   visual:  e_c = Encoder * (onehot(cell class) ++ poscode(cell)) + noise
//   project: h_c = Projection * e_c
//   text:    h_t = Embeddings[token]
//   layers:  u_i = s_i + mean(s_1..s_i)        (parameter-free causal pooling)
//            v_i = u_i / (|u_i| + eps)
//            s'_i = tanh(MixingMatrix_l * v_i)
//   head:    logits_i = LmHead * s^L_i + bias
//
// Everything except Embeddings and the LM head is a pure function of the
// backbone seed and is never updated.

constexpr double kNormEps = 1e-8;
constexpr int kPosCodeDims = 3;

struct ModelDims {
    int grid = 8;      // G; n = G*G visual tokens
    int classes = 16;  // C
    int visual_dim = 32;   // d
    int hidden_dim = 24;   // m
    int layers = 3;        // L
    int vocab = 0;         // V, derived from the vocabulary

    int image_tokens() const { return grid * grid; }
    int onehot_dims() const { return classes + 2; }  // classes + EMPTY + MASK
    int encoder_in() const { return onehot_dims() + kPosCodeDims; }
};

struct BackboneParams {
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    std::string nonlinearity = "tanh";
    Matrix encoder;               // d x encoder_in
    Matrix projection;            // m x d
    std::vector<Matrix> mixing;   // L matrices, m x m
};

struct HeadParams {
    Matrix embeddings;          // V x m
    Matrix lm_head;             // V x m (logit_v = lm_head.row(v) . h + bias[v])
    std::vector<double> bias;   // V
};

struct CheckpointMeta {
    std::string stage = "init";
    std::int64_t step_count = 0;
    std::string config_hash;
};

struct Checkpoint {
    ModelDims dims;
    Vocabulary vocab;
    BackboneParams backbone;
    HeadParams head;
    CheckpointMeta meta;
};

inline Checkpoint init_checkpoint(const CooccurrenceSpec& spec, int visual_dim, int hidden_dim,
                                  int layers, std::uint64_t seed) {
    if (visual_dim < 1 || hidden_dim < 1 || layers < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    Checkpoint ckpt;
    ckpt.vocab = Vocabulary(spec.class_names);
    ckpt.dims = ModelDims{spec.grid_size, spec.class_count(), visual_dim, hidden_dim, layers,
                          ckpt.vocab.size()};

    auto fill_gauss = [](Matrix& m, Rng& rng, double scale) {
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_gauss() * scale;
    };

    BackboneParams& bb = ckpt.backbone;
    bb.seed = seed;
    bb.noise_sigma = spec.noise_sigma;
    Rng enc_rng(Rng::mix(stream::kBackbone, Rng::mix(seed, 1)));
    bb.encoder = Matrix(ckpt.dims.visual_dim, ckpt.dims.encoder_in());
    fill_gauss(bb.encoder, enc_rng, 1.0 / std::sqrt(static_cast<double>(ckpt.dims.encoder_in())));
    Rng proj_rng(Rng::mix(stream::kBackbone, Rng::mix(seed, 2)));
    bb.projection = Matrix(ckpt.dims.hidden_dim, ckpt.dims.visual_dim);
    fill_gauss(bb.projection, proj_rng, 1.0 / std::sqrt(static_cast<double>(ckpt.dims.visual_dim)));
    for (int l = 0; l < layers; ++l) {
        Rng layer_rng(Rng::mix(stream::kBackbone, Rng::mix(seed, 16 + static_cast<std::uint64_t>(l))));
        Matrix a(ckpt.dims.hidden_dim, ckpt.dims.hidden_dim);
        fill_gauss(a, layer_rng, 1.4 / std::sqrt(static_cast<double>(ckpt.dims.hidden_dim)));
        bb.mixing.push_back(std::move(a));
    }

    HeadParams& head = ckpt.head;
    Rng emb_rng(Rng::mix(stream::kHead, Rng::mix(seed, 1)));
    head.embeddings = Matrix(ckpt.dims.vocab, ckpt.dims.hidden_dim);
    fill_gauss(head.embeddings, emb_rng, 1.0 / std::sqrt(static_cast<double>(ckpt.dims.hidden_dim)));
    head.lm_head = Matrix(ckpt.dims.vocab, ckpt.dims.hidden_dim);  // zero: uniform initial logits
    head.bias.assign(static_cast<std::size_t>(ckpt.dims.vocab), 0.0);
    return ckpt;
}

// ---------------------------------------------------------------------------
// Visual encoding

inline void poscode(int row, int col, int grid, double* out) {
    out[0] = (row + 0.5) / grid;
    out[1] = (col + 0.5) / grid;
    out[2] = 1.0;
}

// n x d visual features. Noise is a pure function of (scene.seed, cell), so a
// counterfactual scene shares the original's noise outside the masked block.
inline Matrix encode_visual(const Scene& scene, const ModelDims& dims, const BackboneParams& bb) {
    if (scene.grid != dims.grid) {
        throw ConfigError("scene grid " + std::to_string(scene.grid) +
                          " does not match model grid " + std::to_string(dims.grid));
    }
    const int n = dims.image_tokens();
    Matrix features(static_cast<std::size_t>(n), static_cast<std::size_t>(dims.visual_dim));
    std::vector<double> input(static_cast<std::size_t>(dims.encoder_in()), 0.0);
    for (int idx = 0; idx < n; ++idx) {
        std::fill(input.begin(), input.end(), 0.0);
        const std::int16_t cell = scene.cells[static_cast<std::size_t>(idx)];
        int onehot;
        if (cell == kEmptyCell) onehot = dims.classes;
        else if (cell == kMaskCell) onehot = dims.classes + 1;
        else if (cell >= 0 && cell < dims.classes) onehot = cell;
        else throw DataError("scene cell value out of range: " + std::to_string(cell));
        input[static_cast<std::size_t>(onehot)] = 1.0;
        poscode(idx / dims.grid, idx % dims.grid, dims.grid, input.data() + dims.onehot_dims());
        matvec(bb.encoder, input.data(), features.row(static_cast<std::size_t>(idx)));
        if (bb.noise_sigma > 0.0) {
            Rng noise(Rng::mix(stream::kNoise, Rng::mix(scene.seed, static_cast<std::uint64_t>(idx))));
            double* row = features.row(static_cast<std::size_t>(idx));
            for (int k = 0; k < dims.visual_dim; ++k) row[k] += bb.noise_sigma * noise.next_gauss();
        }
    }
    return features;
}

// ---------------------------------------------------------------------------
// Forward pass

// Hidden states captured for probing and for reverse accumulation.
struct TapSet {
    int image_len = 0;
    int text_len = 0;
    Matrix visual;                    // n x d      (E_I tap)
    Matrix projected;                 // n x m      (H0 tap)
    std::vector<Matrix> layer_states; // L of T x m (H^l, image rows then text rows)
};

namespace detail {

// One causal mixing layer applied in place over the full sequence. Prefix
// sums are accumulated position by position in increasing order; the
// incremental decoder replays exactly this arithmetic, so batch and
// incremental paths agree bitwise.
struct LayerScratch {
    Matrix v;               // T x m, normalized pooled inputs
    std::vector<double> r;  // T, pre-normalization norms
};

inline void apply_layer(const Matrix& a, const Matrix& input, Matrix& output, LayerScratch* scratch) {
    const std::size_t t_len = input.rows();
    const std::size_t m = input.cols();
    std::vector<double> prefix(m, 0.0);
    std::vector<double> u(m), v(m);
    for (std::size_t i = 0; i < t_len; ++i) {
        const double* s = input.row(i);
        for (std::size_t k = 0; k < m; ++k) prefix[k] += s[k];
        const double inv_count = 1.0 / static_cast<double>(i + 1);
        for (std::size_t k = 0; k < m; ++k) u[k] = s[k] + prefix[k] * inv_count;
        const double r = norm2(u.data(), m);
        const double inv_norm = 1.0 / (r + kNormEps);
        for (std::size_t k = 0; k < m; ++k) v[k] = u[k] * inv_norm;
        double* out = output.row(i);
        matvec(a, v.data(), out);
        for (std::size_t k = 0; k < m; ++k) out[k] = std::tanh(out[k]);
        if (scratch) {
            std::copy(v.begin(), v.end(), scratch->v.row(i));
            scratch->r[i] = r;
        }
    }
}

}  // namespace detail

// Full activation record of one forward pass; enough for gradients.
struct ForwardTrace {
    int image_len = 0;
    int text_len = 0;
    Matrix states0;                      // T x m (projected image rows, then embedded text rows)
    std::vector<Matrix> layer_outputs;   // L of T x m
    std::vector<detail::LayerScratch> scratch;  // per layer
    const Matrix& final_states() const { return layer_outputs.back(); }
    int total_len() const { return image_len + text_len; }
};

inline ForwardTrace run_backbone(const Scene& scene, std::span<const int> prompt,
                                 const Checkpoint& ckpt, TapSet* taps = nullptr) {
    if (prompt.empty()) throw ConfigError("prompt must contain at least one token");
    for (int id : prompt) {
        if (id < 0 || id >= ckpt.dims.vocab) {
            throw DataError("token id out of vocabulary range: " + std::to_string(id));
        }
    }
    const ModelDims& dims = ckpt.dims;
    const int n = dims.image_tokens();
    const int t_len = n + static_cast<int>(prompt.size());
    const std::size_t m = static_cast<std::size_t>(dims.hidden_dim);

    Matrix visual = encode_visual(scene, dims, ckpt.backbone);

    ForwardTrace trace;
    trace.image_len = n;
    trace.text_len = static_cast<int>(prompt.size());
    trace.states0 = Matrix(static_cast<std::size_t>(t_len), m);
    for (int i = 0; i < n; ++i) {
        matvec(ckpt.backbone.projection, visual.row(static_cast<std::size_t>(i)),
               trace.states0.row(static_cast<std::size_t>(i)));
    }
    for (std::size_t j = 0; j < prompt.size(); ++j) {
        const double* emb = ckpt.head.embeddings.row(static_cast<std::size_t>(prompt[j]));
        std::copy(emb, emb + m, trace.states0.row(static_cast<std::size_t>(n) + j));
    }

    if (taps) {
        taps->image_len = n;
        taps->text_len = trace.text_len;
        taps->visual = visual;
        taps->projected = Matrix(static_cast<std::size_t>(n), m);
        for (int i = 0; i < n; ++i) {
            const double* src = trace.states0.row(static_cast<std::size_t>(i));
            std::copy(src, src + m, taps->projected.row(static_cast<std::size_t>(i)));
        }
        taps->layer_states.clear();
    }

    const Matrix* current = &trace.states0;
    for (int l = 0; l < dims.layers; ++l) {
        trace.scratch.push_back({Matrix(static_cast<std::size_t>(t_len), m),
                                 std::vector<double>(static_cast<std::size_t>(t_len), 0.0)});
        Matrix out(static_cast<std::size_t>(t_len), m);
        detail::apply_layer(ckpt.backbone.mixing[static_cast<std::size_t>(l)], *current, out,
                            &trace.scratch.back());
        trace.layer_outputs.push_back(std::move(out));
        current = &trace.layer_outputs.back();
        if (taps) taps->layer_states.push_back(*current);
    }
    return trace;
}

inline void head_logits(const HeadParams& head, const double* state, double* logits_out) {
    matvec(head.lm_head, state, logits_out);
    for (std::size_t v = 0; v < head.bias.size(); ++v) logits_out[v] += head.bias[v];
}

// Per-position logits over the vocabulary (T x V) plus, optionally, the taps.
inline Matrix forward(const Scene& scene, std::span<const int> prompt, const Checkpoint& ckpt,
                      TapSet* taps = nullptr) {
    ForwardTrace trace = run_backbone(scene, prompt, ckpt, taps);
    const std::size_t t_len = static_cast<std::size_t>(trace.total_len());
    Matrix logits(t_len, static_cast<std::size_t>(ckpt.dims.vocab));
    for (std::size_t i = 0; i < t_len; ++i) {
        head_logits(ckpt.head, trace.final_states().row(i), logits.row(i));
    }
    return logits;
}

inline void softmax_inplace(double* logits, std::size_t n) {
    double mx = logits[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] = std::exp(logits[i] - mx);
        sum += logits[i];
    }
    for (std::size_t i = 0; i < n; ++i) logits[i] /= sum;
}

// ---------------------------------------------------------------------------
// Incremental decoding

// Replays the forward arithmetic one position at a time, carrying per-layer
// prefix sums. Produces bit-identical states to run_backbone.
class IncrementalDecoder {
  public:
    explicit IncrementalDecoder(const Checkpoint& ckpt) : ckpt_(&ckpt) {
        const std::size_t m = static_cast<std::size_t>(ckpt.dims.hidden_dim);
        prefix_.assign(static_cast<std::size_t>(ckpt.dims.layers), std::vector<double>(m, 0.0));
    }

    void start(const Scene& scene) {
        for (auto& p : prefix_) std::fill(p.begin(), p.end(), 0.0);
        count_ = 0;
        const ModelDims& dims = ckpt_->dims;
        Matrix visual = encode_visual(scene, dims, ckpt_->backbone);
        std::vector<double> h0(static_cast<std::size_t>(dims.hidden_dim));
        for (int i = 0; i < dims.image_tokens(); ++i) {
            matvec(ckpt_->backbone.projection, visual.row(static_cast<std::size_t>(i)), h0.data());
            push_state(h0.data());
        }
    }

    void push_token(int token_id) {
        if (token_id < 0 || token_id >= ckpt_->dims.vocab) {
            throw DataError("token id out of vocabulary range: " + std::to_string(token_id));
        }
        push_state(ckpt_->head.embeddings.row(static_cast<std::size_t>(token_id)));
    }

    // Logits over V at the current last position.
    std::vector<double> logits() const {
        std::vector<double> out(static_cast<std::size_t>(ckpt_->dims.vocab));
        head_logits(ckpt_->head, last_state_.data(), out.data());
        return out;
    }

  private:
    void push_state(const double* state_in) {
        const std::size_t m = static_cast<std::size_t>(ckpt_->dims.hidden_dim);
        ++count_;
        const double inv_count = 1.0 / static_cast<double>(count_);
        std::vector<double> s(state_in, state_in + m), u(m), v(m), out(m);
        for (int l = 0; l < ckpt_->dims.layers; ++l) {
            std::vector<double>& prefix = prefix_[static_cast<std::size_t>(l)];
            for (std::size_t k = 0; k < m; ++k) prefix[k] += s[k];
            for (std::size_t k = 0; k < m; ++k) u[k] = s[k] + prefix[k] * inv_count;
            const double r = norm2(u.data(), m);
            const double inv_norm = 1.0 / (r + kNormEps);
            for (std::size_t k = 0; k < m; ++k) v[k] = u[k] * inv_norm;
            matvec(ckpt_->backbone.mixing[static_cast<std::size_t>(l)], v.data(), out.data());
            for (std::size_t k = 0; k < m; ++k) out[k] = std::tanh(out[k]);
            s = out;
        }
        last_state_ = s;
    }

    const Checkpoint* ckpt_;
    std::vector<std::vector<double>> prefix_;
    std::vector<double> last_state_;
    int count_ = 0;
};

inline int argmax_index(const std::vector<double>& values) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

// Greedy decoding: append the argmax token until the end token appears or
// max_len tokens were generated. The end token is not part of the output.
inline std::vector<int> decode_greedy(const Scene& scene, std::span<const int> prompt,
                                      const Checkpoint& ckpt, int max_len) {
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (prompt.empty()) throw ConfigError("prompt must contain at least one token");
    IncrementalDecoder dec(ckpt);
    dec.start(scene);
    for (int id : prompt) dec.push_token(id);
    std::vector<int> out;
    const int eos = ckpt.vocab.eos();
    for (int step = 0; step < max_len; ++step) {
        const int next = argmax_index(dec.logits());
        if (next == eos) break;
        out.push_back(next);
        dec.push_token(next);
    }
    return out;
}

// Softmax over the full vocabulary at the first answer position, then
// renormalized over {yes, no}.
inline std::pair<double, double> yes_no_prob(const Scene& scene, std::span<const int> question,
                                             const Checkpoint& ckpt) {
    IncrementalDecoder dec(ckpt);
    dec.start(scene);
    for (int id : question) dec.push_token(id);
    std::vector<double> probs = dec.logits();
    softmax_inplace(probs.data(), probs.size());
    const double py = probs[static_cast<std::size_t>(ckpt.vocab.yes())];
    const double pn = probs[static_cast<std::size_t>(ckpt.vocab.no())];
    return {py / (py + pn), pn / (py + pn)};
}

// ---------------------------------------------------------------------------
// Logit trace (per-class mean logit over caption-generating steps)

struct LogitTrace {
    std::vector<int> generated;
    std::vector<double> mean_logit;  // one per watched class; NaN when no steps
};

inline LogitTrace token_logit_trace(const Scene& scene, std::span<const int> prompt,
                                    const Checkpoint& ckpt, std::span<const int> watch_classes,
                                    int max_len) {
    if (watch_classes.empty()) throw ConfigError("watch_classes must be nonempty");
    IncrementalDecoder dec(ckpt);
    dec.start(scene);
    for (int id : prompt) dec.push_token(id);
    std::vector<double> sums(watch_classes.size(), 0.0);
    LogitTrace trace;
    const int eos = ckpt.vocab.eos();
    for (int step = 0; step < max_len; ++step) {
        const std::vector<double> logits = dec.logits();
        const int next = argmax_index(logits);
        if (next == eos) break;
        for (std::size_t w = 0; w < watch_classes.size(); ++w) {
            sums[w] += logits[static_cast<std::size_t>(ckpt.vocab.class_token(watch_classes[w]))];
        }
        trace.generated.push_back(next);
        dec.push_token(next);
    }
    trace.mean_logit.assign(watch_classes.size(), std::numeric_limits<double>::quiet_NaN());
    if (!trace.generated.empty()) {
        for (std::size_t w = 0; w < watch_classes.size(); ++w) {
            trace.mean_logit[w] = sums[w] / static_cast<double>(trace.generated.size());
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Loss and gradients

// One supervised example: the text is instruction ++ target tokens;
// target_positions are the indices (into `text`) of tokens that incur loss.
struct TrainExample {
    const Scene* scene = nullptr;
    std::vector<int> text;
    std::vector<int> target_positions;
};

struct TrainableMask {
    bool embeddings = true;
    bool lm_head = true;
};

struct Gradients {
    Matrix d_embeddings;
    Matrix d_lm_head;
    std::vector<double> d_bias;

    static Gradients zeros(const ModelDims& dims) {
        Gradients g;
        g.d_embeddings = Matrix(static_cast<std::size_t>(dims.vocab),
                                static_cast<std::size_t>(dims.hidden_dim));
        g.d_lm_head = Matrix(static_cast<std::size_t>(dims.vocab),
                             static_cast<std::size_t>(dims.hidden_dim));
        g.d_bias.assign(static_cast<std::size_t>(dims.vocab), 0.0);
        return g;
    }
};

struct LossResult {
    double loss = 0.0;          // mean NLL per target token
    std::size_t token_count = 0;
    Gradients grads;
};

namespace detail {

// Backward through one layer. d_out is the gradient at the layer output;
// returns the gradient at the layer input.
inline Matrix layer_backward(const Matrix& a, const Matrix& layer_out, const LayerScratch& scratch,
                             const Matrix& d_out) {
    const std::size_t t_len = layer_out.rows();
    const std::size_t m = layer_out.cols();
    Matrix du(t_len, m);
    std::vector<double> da(m), dv(m);
    for (std::size_t i = 0; i < t_len; ++i) {
        const double* out = layer_out.row(i);
        const double* g = d_out.row(i);
        for (std::size_t k = 0; k < m; ++k) da[k] = g[k] * (1.0 - out[k] * out[k]);
        matvec_transposed(a, da.data(), dv.data());
        const double* v = scratch.v.row(i);
        const double r = scratch.r[i];
        const double inv_norm = 1.0 / (r + kNormEps);
        double* du_row = du.row(i);
        if (r > 0.0) {
            const double vdv = dot(v, dv.data(), m);
            for (std::size_t k = 0; k < m; ++k) du_row[k] = dv[k] * inv_norm - v[k] * vdv / r;
        } else {
            for (std::size_t k = 0; k < m; ++k) du_row[k] = dv[k] * inv_norm;
        }
    }
    // u_i = s_i + (1/i) sum_{j<=i} s_j, so ds_j = du_j + sum_{i>=j} du_i / i.
    Matrix d_in(t_len, m);
    std::vector<double> suffix(m, 0.0);
    for (std::size_t i = t_len; i-- > 0;) {
        const double inv_count = 1.0 / static_cast<double>(i + 1);
        const double* du_row = du.row(i);
        for (std::size_t k = 0; k < m; ++k) suffix[k] += du_row[k] * inv_count;
        double* out = d_in.row(i);
        for (std::size_t k = 0; k < m; ++k) out[k] = du_row[k] + suffix[k];
    }
    return d_in;
}

}  // namespace detail

// Mean per-token negative log-likelihood over the batch's target positions,
// with reverse-accumulated gradients for the unmasked trainable blocks.
// Softmax cross-entropy at the head is analytic: softmax(z) - onehot(target).
inline LossResult loss_and_grads(std::span<const TrainExample> batch, const Checkpoint& ckpt,
                                 TrainableMask mask) {
    if (batch.empty()) throw TrainingError("empty training batch");
    std::size_t total_targets = 0;
    for (const auto& ex : batch) {
        if (ex.target_positions.empty()) {
            throw TrainingError("degenerate batch: example has an empty target span");
        }
        total_targets += ex.target_positions.size();
    }

    LossResult result;
    result.token_count = total_targets;
    result.grads = Gradients::zeros(ckpt.dims);
    const double inv_total = 1.0 / static_cast<double>(total_targets);
    const std::size_t m = static_cast<std::size_t>(ckpt.dims.hidden_dim);
    const std::size_t vocab = static_cast<std::size_t>(ckpt.dims.vocab);
    std::vector<double> probs(vocab);

    for (const auto& ex : batch) {
        if (!ex.scene) throw TrainingError("training example lacks a scene");
        ForwardTrace trace = run_backbone(*ex.scene, ex.text, ckpt);
        const int n = trace.image_len;
        const std::size_t t_len = static_cast<std::size_t>(trace.total_len());

        // d(loss)/d(final state), dense over the sequence; populated only at
        // positions that predict a target token.
        Matrix d_final;
        if (mask.embeddings) d_final = Matrix(t_len, m);

        for (int t : ex.target_positions) {
            if (t < 1 || t >= trace.text_len) {
                throw TrainingError("target position out of range: " + std::to_string(t));
            }
            const int target = ex.text[static_cast<std::size_t>(t)];
            const std::size_t pos = static_cast<std::size_t>(n + t - 1);
            const double* state = trace.final_states().row(pos);
            head_logits(ckpt.head, state, probs.data());
            softmax_inplace(probs.data(), vocab);
            const double p_target = probs[static_cast<std::size_t>(target)];
            result.loss += -std::log(std::max(p_target, 1e-300)) * inv_total;

            // dlogits = (softmax - onehot) / total_targets
            probs[static_cast<std::size_t>(target)] -= 1.0;
            if (mask.lm_head) {
                for (std::size_t v = 0; v < vocab; ++v) {
                    const double dv = probs[v] * inv_total;
                    if (dv == 0.0) continue;
                    result.grads.d_bias[v] += dv;
                    axpy(dv, state, result.grads.d_lm_head.row(v), m);
                }
            }
            if (mask.embeddings) {
                double* df = d_final.row(pos);
                for (std::size_t v = 0; v < vocab; ++v) {
                    const double dv = probs[v] * inv_total;
                    if (dv == 0.0) continue;
                    axpy(dv, ckpt.head.lm_head.row(v), df, m);
                }
            }
        }

        if (mask.embeddings) {
            Matrix d_state = std::move(d_final);
            for (int l = ckpt.dims.layers - 1; l >= 0; --l) {
                d_state = detail::layer_backward(
                    ckpt.backbone.mixing[static_cast<std::size_t>(l)],
                    trace.layer_outputs[static_cast<std::size_t>(l)],
                    trace.scratch[static_cast<std::size_t>(l)], d_state);
            }
            for (int j = 0; j < trace.text_len; ++j) {
                const int token = ex.text[static_cast<std::size_t>(j)];
                axpy(1.0, d_state.row(static_cast<std::size_t>(n + j)),
                     result.grads.d_embeddings.row(static_cast<std::size_t>(token)), m);
            }
        }
    }
    return result;
}

}  // namespace mirage

#endif  // MIRAGE_MODEL_HPP
