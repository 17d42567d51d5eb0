#include <doctest.h>

#include "coda/model.hpp"
#include "coda/model_text.hpp"
#include "testutil.hpp"

using namespace coda;
using testutil::finite_diff;
using testutil::grad_close;
using testutil::random_tensor;

namespace {

ModelGraph small_graph(bool with_bn = false) {
    ModelGraph g;
    g.name = "t";
    g.in_c = 1;
    g.in_h = 8;
    g.in_w = 8;
    g.classes = 3;
    g.layers.emplace_back(ConvSpec{3, 3, 1, 1, true});
    if (with_bn) g.layers.emplace_back(BatchNormSpec{});
    g.layers.emplace_back(ReluSpec{});
    g.layers.emplace_back(MaxPoolSpec{2, 2, 0});
    g.layers.emplace_back(ConvSpec{5, 3, 1, 0, true});
    g.layers.emplace_back(ReluSpec{});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{3});
    return g;
}

// Counts every multiply the naive-loop forward would execute, layer by layer.
// Independent of count_macs: walks the actual loop nests.
int64_t counted_macs(const ModelGraph& g) {
    const auto io = shape_inference(g);
    int64_t total = 0;
    for (size_t l = 0; l < g.layers.size(); ++l) {
        if (const auto* c = std::get_if<ConvSpec>(&g.layers[l])) {
            for (int o = 0; o < c->out_channels; ++o)
                for (int y = 0; y < io[l].out.h; ++y)
                    for (int x = 0; x < io[l].out.w; ++x)
                        for (int ic = 0; ic < io[l].in.c; ++ic)
                            for (int kh = 0; kh < c->kernel; ++kh)
                                for (int kw = 0; kw < c->kernel; ++kw) {
                                    (void)o; (void)y; (void)x; (void)ic;
                                    (void)kh; (void)kw;
                                    ++total;
                                }
        } else if (const auto* f = std::get_if<FcSpec>(&g.layers[l])) {
            for (int o = 0; o < f->out_features; ++o)
                for (int64_t i = 0; i < io[l].in.len(); ++i) {
                    (void)o; (void)i;
                    ++total;
                }
        }
    }
    return total;
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("shape inference follows the dimension formulas") {
    ModelGraph g;
    g.name = "s";
    g.in_c = 1;
    g.in_h = 16;
    g.in_w = 16;
    g.classes = 10;
    g.layers.emplace_back(ConvSpec{4, 3, 1, 0, true});
    g.layers.emplace_back(MaxPoolSpec{2, 2, 0});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{10});
    auto io = shape_inference(g);
    CHECK(io[0].out.c == 4);
    CHECK(io[0].out.h == 14);
    CHECK(io[0].out.w == 14);
    CHECK(io[1].out.h == 7);
    CHECK(io[1].out.w == 7);
    CHECK(io[2].out.len() == 196);
    CHECK(io[3].out.c == 10);
}

TEST_CASE("structural validation rejects malformed chains") {
    ModelGraph g = small_graph();
    SUBCASE("fc before flatten") {
        g.layers[1] = FcSpec{4};
        CHECK_THROWS_AS(validate(g), ValidationError);
    }
    SUBCASE("wrong class count") {
        g.layers.back() = FcSpec{7};
        CHECK_THROWS_AS(validate(g), ValidationError);
    }
    SUBCASE("first layer not conv") {
        g.layers[0] = ReluSpec{};
        CHECK_THROWS_AS(validate(g), ValidationError);
    }
}

TEST_CASE("whole-network gradients match finite differences") {
    ModelGraph g = small_graph(true);
    init_params(g, 99);
    Rng rng(5);
    Tensor img = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f);
    const int label = 1;
    auto loss = [&]() {
        return double(softmax_xent(forward(g, img), label).loss);
    };
    LayerCache cache;
    Tensor logits = forward(g, img, &cache);
    SoftmaxXent sx = softmax_xent(logits, label);
    Gradients grads = backward(g, cache, sx.grad_logits);

    // Input gradient, both routes.
    Tensor gi = backward_input(g, cache, sx.grad_logits);
    for (size_t i = 0; i < img.data.size(); i += 9) {
        const double fd = finite_diff(img, i, loss);
        CHECK(grad_close(grads.input.data[i], fd));
        CHECK(gi.data[i] == doctest::Approx(grads.input.data[i]).epsilon(1e-6));
    }
    // Spot-check parameter gradients in every parametric layer.
    for (size_t l = 0; l < g.layers.size(); ++l) {
        if (grads.params[l].tensors.empty()) continue;
        Tensor& w = g.params[l].tensors[0];
        for (size_t i = 0; i < w.data.size(); i += 11)
            CHECK(grad_close(grads.params[l].tensors[0].data[i],
                             finite_diff(w, i, loss)));
    }
}

TEST_CASE("prune conv feeding conv removes row and input slice") {
    ModelGraph g;
    g.name = "p";
    g.in_c = 1;
    g.in_h = 10;
    g.in_w = 10;
    g.classes = 2;
    g.layers.emplace_back(ConvSpec{3, 3, 1, 1, true});
    g.layers.emplace_back(ConvSpec{5, 3, 1, 1, true});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{2});
    init_params(g, 1);
    ModelGraph p = prune_channel(g, {0, 1});
    CHECK(p.weight(0).shape == std::vector<int>{2, 1, 3, 3});
    CHECK(p.weight(1).shape == std::vector<int>{5, 2, 3, 3});
    // Middle input slice removed: remaining slices are the old 0 and 2.
    for (int o = 0; o < 5; ++o)
        for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw) {
                CHECK(p.weight(1).at4(o, 0, kh, kw) == g.weight(1).at4(o, 0, kh, kw));
                CHECK(p.weight(1).at4(o, 1, kh, kw) == g.weight(1).at4(o, 2, kh, kw));
            }
}

TEST_CASE("prune conv feeding fc removes the channel's flatten block") {
    ModelGraph g;
    g.name = "p2";
    g.in_c = 1;
    g.in_h = 4;
    g.in_w = 4;
    g.classes = 2;
    g.layers.emplace_back(ConvSpec{3, 3, 1, 0, true}); // out 3 x 2 x 2
    g.layers.emplace_back(FlattenSpec{});              // 12
    g.layers.emplace_back(FcSpec{2});
    init_params(g, 2);
    ModelGraph p = prune_channel(g, {0, 1});
    CHECK(p.weight(2).shape == std::vector<int>{2, 8});
    // Columns 4..7 removed: survivors are old columns 0..3 and 8..11.
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 4; ++i) {
            CHECK(p.weight(2).at2(o, i) == g.weight(2).at2(o, i));
            CHECK(p.weight(2).at2(o, i + 4) == g.weight(2).at2(o, i + 8));
        }
}

TEST_CASE("pruning the final fc or a last channel is rejected") {
    ModelGraph g = small_graph();
    init_params(g, 3);
    CHECK_THROWS_AS(prune_channel(g, {int(g.layers.size()) - 1, 0}), ValidationError);
    ModelGraph shrunk = g;
    // Reduce layer 0 to a single channel, then try to prune it.
    shrunk = prune_channel(shrunk, {0, 0});
    shrunk = prune_channel(shrunk, {0, 0});
    CHECK_THROWS_AS(prune_channel(shrunk, {0, 0}), ValidationError);
}

TEST_CASE("pruned channel with zero weights is forward-equivalent to pruning") {
    // conv -> relu -> conv -> relu -> flatten -> fc, no bias on the pruned
    // channel: zeroing its weights must equal removing it.
    ModelGraph g;
    g.name = "z";
    g.in_c = 1;
    g.in_h = 6;
    g.in_w = 6;
    g.classes = 2;
    g.layers.emplace_back(ConvSpec{3, 3, 1, 1, true});
    g.layers.emplace_back(ReluSpec{});
    g.layers.emplace_back(ConvSpec{4, 3, 1, 1, true});
    g.layers.emplace_back(ReluSpec{});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{2});
    init_params(g, 4);
    const int victim = 2;
    ModelGraph masked = g;
    for (int i = 0; i < masked.weight(0).dim(1); ++i)
        for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw) masked.weight(0).at4(victim, i, kh, kw) = 0.0f;
    masked.bias(0).data[victim] = 0.0f;
    ModelGraph pruned = prune_channel(masked, {0, victim});

    Rng rng(6);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor img = random_tensor({1, 6, 6}, rng, 0.0f, 1.0f);
        Tensor a = forward(masked, img);
        Tensor b = forward(pruned, img);
        for (size_t i = 0; i < a.data.size(); ++i)
            CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-5f);
    }
}

TEST_CASE("count_macs direct formulas") {
    ModelGraph g;
    g.name = "m";
    g.in_c = 2;
    g.in_h = 6;
    g.in_w = 6;
    g.classes = 10;
    g.layers.emplace_back(ConvSpec{4, 3, 1, 1, true}); // 2*4*9*36 = 2592
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{10});
    auto macs = count_macs(g);
    CHECK(macs.per_layer[0] == 2592);
    CHECK(macs.per_layer[2] == int64_t(4 * 36) * 10);

    ModelGraph g2 = small_graph();
    auto got = count_macs(g2);
    CHECK(got.total == counted_macs(g2));
}

TEST_CASE("fc 196->10 is 1960 MACs") {
    ModelGraph g;
    g.name = "m2";
    g.in_c = 1;
    g.in_h = 16;
    g.in_w = 16;
    g.classes = 10;
    g.layers.emplace_back(ConvSpec{4, 3, 1, 0, true});
    g.layers.emplace_back(MaxPoolSpec{2, 2, 0});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{10});
    auto macs = count_macs(g);
    CHECK(macs.per_layer[3] == 1960);
}

TEST_CASE("prune strictly decreases MACs and keeps shapes valid") {
    ModelGraph g = small_graph(true);
    init_params(g, 8);
    const int64_t before = count_macs(g).total;
    for (int l = 0; l < g.layer_count(); ++l) {
        if (!is_prunable_layer(g, l)) continue;
        ModelGraph p = prune_channel(g, {l, 0});
        CHECK(count_macs(p).total < before);
        CHECK_NOTHROW(validate(p));
    }
}

TEST_CASE("channel-gain formula for conv feeding conv") {
    ModelGraph g;
    g.name = "cg";
    g.in_c = 1;
    g.in_h = 12;
    g.in_w = 12;
    g.classes = 2;
    g.layers.emplace_back(ConvSpec{6, 3, 1, 1, true});
    g.layers.emplace_back(ConvSpec{4, 3, 1, 1, true});
    g.layers.emplace_back(FlattenSpec{});
    g.layers.emplace_back(FcSpec{2});
    init_params(g, 9);
    auto io = shape_inference(g);
    const int64_t before = count_macs(g).total;
    const int64_t after = count_macs(prune_channel(g, {0, 3})).total;
    const int64_t own = int64_t(io[0].in.c) * 9 * io[0].out.h * io[0].out.w;
    const int64_t downstream = int64_t(9) * 4 * io[1].out.h * io[1].out.w;
    CHECK(before - after == own + downstream);
}

TEST_CASE("serialize/deserialize round-trips bit-exactly") {
    ModelGraph g = small_graph(true);
    init_params(g, 10);
    g.trained = true;
    auto bytes = serialize(g);
    ModelGraph back = deserialize(bytes);
    CHECK(back.name == g.name);
    CHECK(back.classes == g.classes);
    CHECK(back.trained == g.trained);
    REQUIRE(back.layers.size() == g.layers.size());
    REQUIRE(back.params.size() == g.params.size());
    for (size_t l = 0; l < g.params.size(); ++l) {
        REQUIRE(back.params[l].tensors.size() == g.params[l].tensors.size());
        for (size_t t = 0; t < g.params[l].tensors.size(); ++t) {
            const auto& a = g.params[l].tensors[t];
            const auto& b = back.params[l].tensors[t];
            REQUIRE(a.shape == b.shape);
            for (size_t i = 0; i < a.data.size(); ++i) {
                uint32_t ba, bb;
                std::memcpy(&ba, &a.data[i], 4);
                std::memcpy(&bb, &b.data[i], 4);
                CHECK(ba == bb);
            }
        }
    }
    // A second serialization is byte-identical.
    CHECK(serialize(back) == bytes);
}

TEST_CASE("text model spec parses and rejects unknown fields") {
    const std::string good = R"({
      "name": "small4",
      "input": [1, 16, 16],
      "classes": 4,
      "layers": [
        {"conv": {"out": 8, "k": 3, "stride": 1, "pad": 1}},
        {"batchnorm": {}},
        {"relu": {}},
        {"maxpool": {"k": 2, "stride": 2}},
        {"flatten": {}},
        {"fc": {"out": 4}}
      ]
    })";
    ModelGraph g = parse_model_spec(good);
    CHECK(g.name == "small4");
    CHECK(g.classes == 4);
    CHECK(g.layers.size() == 6);

    CHECK_THROWS_AS(parse_model_spec(R"({"name":"x","input":[1,8,8],"classes":2,
        "layers":[{"conv":{"out":4,"k":3,"dilation":2}},{"flatten":{}},{"fc":{"out":2}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_model_spec(R"({"name":"x","input":[1,8,8],"classes":2,"extra":1,
        "layers":[{"conv":{"out":4,"k":3}},{"flatten":{}},{"fc":{"out":2}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_model_spec(R"({"name":"x","input":[1,8,8],"classes":2,
        "layers":[{"residual":{}},{"flatten":{}},{"fc":{"out":2}}]})"),
                    ValidationError);
}

TEST_SUITE_END();
