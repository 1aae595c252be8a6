#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mirage/checkpoint_io.hpp"
#include "mirage/model.hpp"
#include "mirage/scene.hpp"

#include "helpers.hpp"

using namespace mirage;
using testutil::blank_scene;
using testutil::fill_block;
using testutil::small_spec;

namespace {

// init_checkpoint leaves the head zeroed; give it generic values so logits
// actually depend on the hidden state.
Checkpoint random_head_checkpoint(const CooccurrenceSpec& spec, int d, int m, int layers,
                                  std::uint64_t seed) {
    Checkpoint ckpt = init_checkpoint(spec, d, m, layers, seed);
    Rng rng(Rng::mix(4242, seed));
    for (std::size_t i = 0; i < ckpt.head.lm_head.size(); ++i) {
        ckpt.head.lm_head.data()[i] = 0.5 * rng.next_gauss();
    }
    for (auto& b : ckpt.head.bias) b = 0.1 * rng.next_gauss();
    return ckpt;
}

Scene nonempty_scene(const CooccurrenceSpec& spec, std::uint64_t seed) {
    for (std::uint64_t next = seed;; ++next) {
        try {
            Scene s = gen_scene(spec, next);
            if (!s.present_classes().empty()) return s;
        } catch (const GenerationError&) {
            // small grids can fill up entirely; try the next seed
        }
    }
}

}  // namespace

TEST_CASE("encode_visual matches a direct per-cell oracle") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.0);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 31);
    const ModelDims& dims = ckpt.dims;

    Scene s = blank_scene(4, 9);
    fill_block(s, 2, 1, 1, 2, 2);
    s.cell(0, 3) = kMaskCell;
    const Matrix feats = encode_visual(s, dims, ckpt.backbone);
    REQUIRE(feats.rows() == 16);
    REQUIRE(feats.cols() == 6);

    std::vector<double> input(static_cast<std::size_t>(dims.encoder_in()), 0.0);
    std::vector<double> expect(static_cast<std::size_t>(dims.visual_dim), 0.0);
    for (int idx = 0; idx < dims.image_tokens(); ++idx) {
        std::fill(input.begin(), input.end(), 0.0);
        const auto cell = s.cells[static_cast<std::size_t>(idx)];
        const int hot = cell == kEmptyCell ? dims.classes
                      : cell == kMaskCell  ? dims.classes + 1
                                           : cell;
        input[static_cast<std::size_t>(hot)] = 1.0;
        const int row = idx / dims.grid, col = idx % dims.grid;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 0] = (row + 0.5) / dims.grid;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 1] = (col + 0.5) / dims.grid;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 2] = 1.0;
        matvec(ckpt.backbone.encoder, input.data(), expect.data());
        for (int k = 0; k < dims.visual_dim; ++k) {
            REQUIRE(feats.at(static_cast<std::size_t>(idx), static_cast<std::size_t>(k)) ==
                    expect[static_cast<std::size_t>(k)]);
        }
    }
}

TEST_CASE("per-cell noise is local and shared with the counterfactual") {
    CooccurrenceSpec spec = small_spec(4, 8, 0.3, 0.05);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 77);

    Scene s = blank_scene(8, 1234);
    fill_block(s, 1, 2, 2, 2, 2);
    const Scene cf = mask_object(s, 1);
    const Matrix a = encode_visual(s, ckpt.dims, ckpt.backbone);
    const Matrix b = encode_visual(cf, ckpt.dims, ckpt.backbone);
    int changed = 0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        bool same = true;
        for (std::size_t k = 0; k < a.cols(); ++k) same = same && a.at(i, k) == b.at(i, k);
        const bool masked = cf.cells[i] == kMaskCell;
        CHECK(same == !masked);
        changed += masked ? 1 : 0;
    }
    CHECK(changed == 4);

    CHECK(encode_visual(s, ckpt.dims, ckpt.backbone) == a);  // deterministic
    Scene other = s;
    other.seed = 1235;  // fresh noise everywhere
    const Matrix c = encode_visual(other, ckpt.dims, ckpt.backbone);
    int unchanged = 0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (a.at(i, 0) == c.at(i, 0)) ++unchanged;
    }
    CHECK(unchanged == 0);
}

TEST_CASE("encode_visual validates grid and cell values") {
    CooccurrenceSpec spec = small_spec(4, 4);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 1);
    CHECK_THROWS_AS(encode_visual(blank_scene(8), ckpt.dims, ckpt.backbone), ConfigError);
    Scene bad = blank_scene(4);
    bad.cells[3] = 99;
    CHECK_THROWS_AS(encode_visual(bad, ckpt.dims, ckpt.backbone), DataError);
}

TEST_CASE("freshly initialized head produces uniform next-token probabilities") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.05);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 5);
    const Scene s = nonempty_scene(spec, 3);
    const std::vector<int> prompt = ckpt.vocab.encode({"describe", "the", "image"});

    Matrix logits = forward(s, prompt, ckpt);
    std::vector<double> last(logits.row(logits.rows() - 1),
                             logits.row(logits.rows() - 1) + logits.cols());
    for (double z : last) CHECK(z == 0.0);
    softmax_inplace(last.data(), last.size());
    for (double p : last) CHECK(p == Catch::Approx(1.0 / ckpt.dims.vocab).epsilon(1e-12));

    // Zero logits argmax to token 0, which is <eos>: the untrained model
    // ends its caption immediately.
    CHECK(ckpt.vocab.eos() == 0);
    CHECK(decode_greedy(s, prompt, ckpt, 8).empty());
}

TEST_CASE("forward is causal: earlier positions ignore later tokens") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 3, 21);
    const Scene s = nonempty_scene(spec, 8);
    const std::vector<int> prompt{15, 4, 16, 9, 2};
    const Matrix full = forward(s, prompt, ckpt);
    const int n = ckpt.dims.image_tokens();
    for (std::size_t k = 1; k <= prompt.size(); ++k) {
        const std::vector<int> head_prompt(prompt.begin(), prompt.begin() + static_cast<long>(k));
        const Matrix part = forward(s, head_prompt, ckpt);
        REQUIRE(part.rows() == static_cast<std::size_t>(n) + k);
        for (std::size_t i = 0; i < part.rows(); ++i) {
            for (std::size_t j = 0; j < part.cols(); ++j) {
                REQUIRE(part.at(i, j) == full.at(i, j));
            }
        }
    }
}

TEST_CASE("forward agrees with an independent extended-precision reimplementation") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 77);
    const ModelDims& dims = ckpt.dims;
    const Scene s = nonempty_scene(spec, 12);
    const std::vector<int> prompt{15, 12, 13, 16, 9, 0};

    const Matrix got = forward(s, prompt, ckpt);

    // Straight-line long-double replay: onehot -> encoder -> noise ->
    // projection / embeddings -> L mixing layers -> head.
    const int n = dims.image_tokens();
    const std::size_t m = static_cast<std::size_t>(dims.hidden_dim);
    const std::size_t t_len = static_cast<std::size_t>(n) + prompt.size();
    std::vector<std::vector<long double>> states(t_len, std::vector<long double>(m, 0.0L));
    for (int idx = 0; idx < n; ++idx) {
        std::vector<long double> input(static_cast<std::size_t>(dims.encoder_in()), 0.0L);
        const auto cell = s.cells[static_cast<std::size_t>(idx)];
        const int hot = cell == kEmptyCell ? dims.classes
                      : cell == kMaskCell  ? dims.classes + 1
                                           : cell;
        input[static_cast<std::size_t>(hot)] = 1.0L;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 0] =
            (idx / dims.grid + 0.5L) / dims.grid;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 1] =
            (idx % dims.grid + 0.5L) / dims.grid;
        input[static_cast<std::size_t>(dims.onehot_dims()) + 2] = 1.0L;
        std::vector<long double> feat(static_cast<std::size_t>(dims.visual_dim), 0.0L);
        for (int r = 0; r < dims.visual_dim; ++r) {
            long double acc = 0.0L;
            for (int c = 0; c < dims.encoder_in(); ++c) {
                acc += static_cast<long double>(
                           ckpt.backbone.encoder.at(static_cast<std::size_t>(r),
                                                    static_cast<std::size_t>(c))) *
                       input[static_cast<std::size_t>(c)];
            }
            feat[static_cast<std::size_t>(r)] = acc;
        }
        Rng noise(Rng::mix(stream::kNoise, Rng::mix(s.seed, static_cast<std::uint64_t>(idx))));
        for (int r = 0; r < dims.visual_dim; ++r) {
            feat[static_cast<std::size_t>(r)] +=
                static_cast<long double>(ckpt.backbone.noise_sigma) *
                static_cast<long double>(noise.next_gauss());
        }
        for (std::size_t r = 0; r < m; ++r) {
            long double acc = 0.0L;
            for (int c = 0; c < dims.visual_dim; ++c) {
                acc += static_cast<long double>(
                           ckpt.backbone.projection.at(r, static_cast<std::size_t>(c))) *
                       feat[static_cast<std::size_t>(c)];
            }
            states[static_cast<std::size_t>(idx)][r] = acc;
        }
    }
    for (std::size_t t = 0; t < prompt.size(); ++t) {
        const double* row =
            ckpt.head.embeddings.row(static_cast<std::size_t>(prompt[t]));
        for (std::size_t k = 0; k < m; ++k) {
            states[static_cast<std::size_t>(n) + t][k] = row[k];
        }
    }
    for (int l = 0; l < dims.layers; ++l) {
        const Matrix& a = ckpt.backbone.mixing[static_cast<std::size_t>(l)];
        std::vector<long double> prefix(m, 0.0L);
        std::vector<std::vector<long double>> next(t_len, std::vector<long double>(m, 0.0L));
        for (std::size_t i = 0; i < t_len; ++i) {
            for (std::size_t k = 0; k < m; ++k) prefix[k] += states[i][k];
            std::vector<long double> u(m);
            long double sq = 0.0L;
            for (std::size_t k = 0; k < m; ++k) {
                u[k] = states[i][k] + prefix[k] / static_cast<long double>(i + 1);
                sq += u[k] * u[k];
            }
            const long double r = sqrtl(sq);
            for (std::size_t k = 0; k < m; ++k) u[k] /= (r + 1e-8L);
            for (std::size_t k = 0; k < m; ++k) {
                long double acc = 0.0L;
                for (std::size_t j = 0; j < m; ++j) {
                    acc += static_cast<long double>(a.at(k, j)) * u[j];
                }
                next[i][k] = tanhl(acc);
            }
        }
        states.swap(next);
    }
    for (std::size_t i = 0; i < t_len; ++i) {
        for (int vtok = 0; vtok < dims.vocab; ++vtok) {
            long double acc =
                static_cast<long double>(ckpt.head.bias[static_cast<std::size_t>(vtok)]);
            const double* w = ckpt.head.lm_head.row(static_cast<std::size_t>(vtok));
            for (std::size_t k = 0; k < m; ++k) acc += static_cast<long double>(w[k]) * states[i][k];
            const double want = static_cast<double>(acc);
            const double have = got.at(i, static_cast<std::size_t>(vtok));
            REQUIRE(std::abs(have - want) <= 1e-10 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("incremental decoding reproduces batch-forward logits bitwise") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 3, 55);
    const Scene s = nonempty_scene(spec, 4);
    const std::vector<int> prompt{15, 9, 10, 4, 16, 14};
    const Matrix full = forward(s, prompt, ckpt);
    const int n = ckpt.dims.image_tokens();

    IncrementalDecoder dec(ckpt);
    dec.start(s);
    std::vector<double> z = dec.logits();
    for (std::size_t j = 0; j < z.size(); ++j) {
        REQUIRE(z[j] == full.at(static_cast<std::size_t>(n - 1), j));
    }
    for (std::size_t t = 0; t < prompt.size(); ++t) {
        dec.push_token(prompt[t]);
        z = dec.logits();
        for (std::size_t j = 0; j < z.size(); ++j) {
            REQUIRE(z[j] == full.at(static_cast<std::size_t>(n) + t, j));
        }
    }
    CHECK_THROWS_AS(dec.push_token(ckpt.dims.vocab), DataError);
}

TEST_CASE("greedy decoding follows the stepwise argmax of batch forward") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 91);
    const Scene s = nonempty_scene(spec, 17);
    const std::vector<int> prompt = ckpt.vocab.encode({"describe", "the", "image"});
    const int max_len = 6;

    const std::vector<int> got = decode_greedy(s, prompt, ckpt, max_len);
    CHECK(decode_greedy(s, prompt, ckpt, max_len) == got);

    std::vector<int> ctx = prompt;
    std::vector<int> want;
    for (int step = 0; step < max_len; ++step) {
        const Matrix logits = forward(s, ctx, ckpt);
        std::vector<double> last(logits.row(logits.rows() - 1),
                                 logits.row(logits.rows() - 1) + logits.cols());
        const int pick = argmax_index(last);
        if (pick == ckpt.vocab.eos()) break;
        want.push_back(pick);
        ctx.push_back(pick);
    }
    CHECK(got == want);
    CHECK(static_cast<int>(got.size()) <= max_len);

    Checkpoint ends = ckpt;
    ends.head.bias[static_cast<std::size_t>(ends.vocab.eos())] += 50.0;
    CHECK(decode_greedy(s, prompt, ends, max_len).empty());

    CHECK_THROWS_AS(decode_greedy(s, prompt, ckpt, 0), ConfigError);
    CHECK_THROWS_AS(decode_greedy(s, std::vector<int>{}, ckpt, 4), ConfigError);
}

TEST_CASE("argmax takes the first maximum") {
    CHECK(argmax_index({1.0, 3.0, 3.0, 2.0}) == 1);
    CHECK(argmax_index({-2.0}) == 0);
    CHECK(argmax_index({0.0, 0.0}) == 0);
}

TEST_CASE("yes/no probability renormalizes the two answer tokens") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.05);
    const Scene s = nonempty_scene(spec, 2);
    const Checkpoint zero = init_checkpoint(spec, 6, 8, 2, 3);
    const std::vector<int> q = zero.vocab.encode(question_tokens("tv"));

    auto [py0, pn0] = yes_no_prob(s, q, zero);
    CHECK(py0 == 0.5);
    CHECK(pn0 == 0.5);

    Checkpoint yes_ckpt = zero;
    yes_ckpt.head.bias[static_cast<std::size_t>(zero.vocab.yes())] = 10.0;
    auto [py1, pn1] = yes_no_prob(s, q, yes_ckpt);
    CHECK(py1 == Catch::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
    CHECK(py1 + pn1 == Catch::Approx(1.0).epsilon(1e-12));

    Checkpoint stronger = yes_ckpt;
    stronger.head.bias[static_cast<std::size_t>(zero.vocab.yes())] = 12.0;
    auto [py2, pn2] = yes_no_prob(s, q, stronger);
    CHECK(py2 > py1);
    CHECK(pn2 < pn1);
}

TEST_CASE("two-way softmax of equal logits has the textbook gradient") {
    std::vector<double> p{0.0, 0.0};
    softmax_inplace(p.data(), p.size());
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
    // Cross-entropy gradient at the logits, target = index 0.
    const double g0 = p[0] - 1.0, g1 = p[1];
    CHECK(g0 == -0.5);
    CHECK(g1 == 0.5);
}

TEST_CASE("bias gradient equals softmax minus one-hot for a single target") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 13);
    const Scene s = nonempty_scene(spec, 6);

    TrainExample ex;
    ex.scene = &s;
    ex.text = ckpt.vocab.encode({"describe", "the", "image", "a", "tv", ".", "<eos>"});
    ex.target_positions = {4};  // predict "tv" from "... a"
    const LossResult res = loss_and_grads(std::vector<TrainExample>{ex}, ckpt, TrainableMask{});
    REQUIRE(res.token_count == 1);

    const Matrix logits = forward(s, ex.text, ckpt);
    const std::size_t pos = static_cast<std::size_t>(ckpt.dims.image_tokens()) + 3;
    std::vector<double> p(logits.row(pos), logits.row(pos) + logits.cols());
    softmax_inplace(p.data(), p.size());
    const int target = ex.text[4];
    CHECK(res.loss == Catch::Approx(-std::log(p[static_cast<std::size_t>(target)])).epsilon(1e-12));
    for (int vtok = 0; vtok < ckpt.dims.vocab; ++vtok) {
        const double want =
            p[static_cast<std::size_t>(vtok)] - (vtok == target ? 1.0 : 0.0);
        CHECK(res.grads.d_bias[static_cast<std::size_t>(vtok)] ==
              Catch::Approx(want).margin(1e-15));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 5, 6, 2, 29);
    const Scene s1 = nonempty_scene(spec, 44);
    const Scene s2 = nonempty_scene(spec, 45);

    std::vector<TrainExample> batch(2);
    batch[0].scene = &s1;
    batch[0].text = ckpt.vocab.encode({"describe", "the", "image", "a", "remote", ".", "<eos>"});
    batch[0].target_positions = {3, 4, 5, 6};
    batch[1].scene = &s2;
    batch[1].text = ckpt.vocab.encode(question_tokens("laptop"));
    batch[1].text.push_back(ckpt.vocab.yes());
    batch[1].target_positions = {static_cast<int>(batch[1].text.size()) - 1};

    const LossResult res = loss_and_grads(batch, ckpt, TrainableMask{});
    REQUIRE(res.token_count == 5);

    const double h = 1e-4;
    Rng pick(606);
    auto fd_check = [&](auto&& get_param, auto&& get_grad, std::size_t count) {
        for (int trial = 0; trial < 12; ++trial) {
            const std::size_t i = static_cast<std::size_t>(pick.next_below(count));
            Checkpoint plus = ckpt, minus = ckpt;
            get_param(plus)[i] += h;
            get_param(minus)[i] -= h;
            const double lp = loss_and_grads(batch, plus, TrainableMask{}).loss;
            const double lm = loss_and_grads(batch, minus, TrainableMask{}).loss;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = get_grad(res.grads)[i];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
            INFO("coordinate " << i << " analytic " << an << " fd " << fd);
            REQUIRE(rel <= 1e-5);
        }
    };
    fd_check([](Checkpoint& c) { return c.head.embeddings.data(); },
             [](const Gradients& g) { return g.d_embeddings.data(); },
             ckpt.head.embeddings.size());
    fd_check([](Checkpoint& c) { return c.head.lm_head.data(); },
             [](const Gradients& g) { return g.d_lm_head.data(); }, ckpt.head.lm_head.size());
    fd_check([](Checkpoint& c) { return c.head.bias.data(); },
             [](const Gradients& g) { return g.d_bias.data(); }, ckpt.head.bias.size());
}

TEST_CASE("trainable mask zeroes exactly the frozen blocks") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 71);
    const Scene s = nonempty_scene(spec, 3);
    TrainExample ex;
    ex.scene = &s;
    ex.text = ckpt.vocab.encode({"describe", "the", "image", "a", "keyboard", ".", "<eos>"});
    ex.target_positions = {3, 4, 5, 6};
    const std::vector<TrainExample> batch{ex};

    auto sum_abs = [](const Matrix& m) {
        double t = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) t += std::abs(m.data()[i]);
        return t;
    };
    const LossResult head_only =
        loss_and_grads(batch, ckpt, TrainableMask{.embeddings = false, .lm_head = true});
    CHECK(sum_abs(head_only.grads.d_embeddings) == 0.0);
    CHECK(sum_abs(head_only.grads.d_lm_head) > 0.0);

    const LossResult emb_only =
        loss_and_grads(batch, ckpt, TrainableMask{.embeddings = true, .lm_head = false});
    CHECK(sum_abs(emb_only.grads.d_embeddings) > 0.0);
    CHECK(sum_abs(emb_only.grads.d_lm_head) == 0.0);
    for (double b : emb_only.grads.d_bias) CHECK(b == 0.0);

    // Loss itself is mask-independent.
    CHECK(head_only.loss == emb_only.loss);
}

TEST_CASE("loss_and_grads validates batches and positions") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.05);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 1);
    const Scene s = nonempty_scene(spec, 1);
    CHECK_THROWS_AS(loss_and_grads(std::vector<TrainExample>{}, ckpt, TrainableMask{}),
                    TrainingError);

    TrainExample empty_span;
    empty_span.scene = &s;
    empty_span.text = {15, 12, 13};
    CHECK_THROWS_AS(loss_and_grads(std::vector<TrainExample>{empty_span}, ckpt, TrainableMask{}),
                    TrainingError);

    TrainExample bad_pos = empty_span;
    bad_pos.target_positions = {0};  // position 0 has no preceding context
    CHECK_THROWS_AS(loss_and_grads(std::vector<TrainExample>{bad_pos}, ckpt, TrainableMask{}),
                    TrainingError);
    bad_pos.target_positions = {3};  // one past the end
    CHECK_THROWS_AS(loss_and_grads(std::vector<TrainExample>{bad_pos}, ckpt, TrainableMask{}),
                    TrainingError);
}

TEST_CASE("logit trace averages the watched class over generated steps") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.35, 0.05);
    const Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 19);
    const Scene s = nonempty_scene(spec, 23);
    const std::vector<int> prompt = ckpt.vocab.encode({"describe", "the", "image"});
    const std::vector<int> watch{0, 2};
    const int max_len = 6;

    const LogitTrace trace = token_logit_trace(s, prompt, ckpt, watch, max_len);
    CHECK(trace.generated == decode_greedy(s, prompt, ckpt, max_len));

    // Replay: accumulate the watched logits over exactly the steps that
    // produced a non-eos token.
    IncrementalDecoder dec(ckpt);
    dec.start(s);
    for (int id : prompt) dec.push_token(id);
    std::vector<double> sums(watch.size(), 0.0);
    int steps = 0;
    for (int step = 0; step < max_len; ++step) {
        const std::vector<double> z = dec.logits();
        const int pick = argmax_index(z);
        if (pick == ckpt.vocab.eos()) break;
        for (std::size_t w = 0; w < watch.size(); ++w) {
            sums[w] += z[static_cast<std::size_t>(
                ckpt.vocab.class_token(watch[static_cast<std::size_t>(w)]))];
        }
        ++steps;
        dec.push_token(pick);
    }
    REQUIRE(steps == static_cast<int>(trace.generated.size()));
    if (steps > 0) {
        for (std::size_t w = 0; w < watch.size(); ++w) {
            CHECK(trace.mean_logit[w] == Catch::Approx(sums[w] / steps).epsilon(1e-12));
        }
    }

    SECTION("instant eos leaves the trace empty with NaN means") {
        Checkpoint ends = ckpt;
        ends.head.bias[static_cast<std::size_t>(ends.vocab.eos())] += 50.0;
        const LogitTrace t2 = token_logit_trace(s, prompt, ends, watch, max_len);
        CHECK(t2.generated.empty());
        for (double v : t2.mean_logit) CHECK(std::isnan(v));
    }

    SECTION("lowering a non-generated class's bias shifts its mean logit exactly") {
        REQUIRE_FALSE(trace.generated.empty());
        int cls = -1;
        for (int c = 0; c < spec.class_count(); ++c) {
            const int tokid = ckpt.vocab.class_token(c);
            if (std::find(trace.generated.begin(), trace.generated.end(), tokid) ==
                trace.generated.end()) {
                cls = c;
                break;
            }
        }
        REQUIRE(cls >= 0);
        Checkpoint shifted = ckpt;
        shifted.head.bias[static_cast<std::size_t>(ckpt.vocab.class_token(cls))] -= 2.5;
        const std::vector<int> watch_one{cls};
        const LogitTrace before = token_logit_trace(s, prompt, ckpt, watch_one, max_len);
        const LogitTrace after = token_logit_trace(s, prompt, shifted, watch_one, max_len);
        REQUIRE(after.generated == before.generated);
        CHECK(after.mean_logit[0] ==
              Catch::Approx(before.mean_logit[0] - 2.5).epsilon(1e-9));
    }

    CHECK_THROWS_AS(token_logit_trace(s, prompt, ckpt, std::vector<int>{}, 4), ConfigError);
}

TEST_CASE("checkpoints serialize to stable bytes and round-trip exactly") {
    CooccurrenceSpec spec = small_spec(5, 4, 0.3, 0.05);
    Checkpoint ckpt = random_head_checkpoint(spec, 6, 8, 2, 99);
    ckpt.meta.stage = "base";
    ckpt.meta.step_count = 123;
    ckpt.meta.config_hash = std::string(64, 'a');

    const std::string bytes = serialize_checkpoint(ckpt);
    CHECK(bytes.substr(0, 8) == "MIRAGECK");
    const Checkpoint back = parse_checkpoint(bytes, "mem");
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.meta.stage == "base");
    CHECK(back.meta.step_count == 123);
    CHECK(back.meta.config_hash == ckpt.meta.config_hash);
    CHECK(back.dims.vocab == ckpt.dims.vocab);
    CHECK(back.head.lm_head == ckpt.head.lm_head);
    CHECK(back.head.embeddings == ckpt.head.embeddings);
    CHECK(back.backbone.encoder == ckpt.backbone.encoder);
    CHECK(back.backbone.noise_sigma == ckpt.backbone.noise_sigma);
    CHECK(back.vocab.class_names() == ckpt.vocab.class_names());

    testutil::TempDir dir("ckpt_rt");
    save_checkpoint(ckpt, dir.str("m.ckpt"));
    const Checkpoint loaded = load_checkpoint(dir.str("m.ckpt"));
    CHECK(serialize_checkpoint(loaded) == bytes);

    SECTION("identical seeds initialize identically, different seeds differ") {
        const std::string a = serialize_checkpoint(init_checkpoint(spec, 6, 8, 2, 7));
        const std::string b = serialize_checkpoint(init_checkpoint(spec, 6, 8, 2, 7));
        const std::string c = serialize_checkpoint(init_checkpoint(spec, 6, 8, 2, 8));
        CHECK(a == b);
        CHECK(a != c);
    }
    SECTION("corruption is rejected") {
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(parse_checkpoint(bad, "mem"), DataError);

        CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 10), "mem"), DataError);
        CHECK_THROWS_AS(parse_checkpoint(bytes + "z", "mem"), DataError);

        std::string vbad = bytes;
        vbad[8] = 2;  // unsupported version
        CHECK_THROWS_AS(parse_checkpoint(vbad, "mem"), DataError);
    }
}

TEST_CASE("run_backbone validates its prompt") {
    CooccurrenceSpec spec = small_spec(4, 4, 0.3, 0.05);
    const Checkpoint ckpt = init_checkpoint(spec, 6, 8, 2, 1);
    const Scene s = nonempty_scene(spec, 1);
    CHECK_THROWS_AS(run_backbone(s, std::vector<int>{}, ckpt), ConfigError);
    CHECK_THROWS_AS(run_backbone(s, std::vector<int>{ckpt.dims.vocab}, ckpt), DataError);
    CHECK_THROWS_AS(run_backbone(s, std::vector<int>{-1}, ckpt), DataError);
}
