#include <doctest.h>

#include <cmath>

#include "coda/adversarial.hpp"
#include "coda/model_text.hpp"
#include "coda/quantization.hpp"
#include "testutil.hpp"

using namespace coda;
using testutil::random_tensor;

namespace {

ModelGraph quant_test_model(uint64_t seed, bool with_bn = true) {
    ModelGraph g = parse_model_spec(std::string(R"({
      "name": "q",
      "input": [1, 12, 12],
      "classes": 3,
      "layers": [
        {"conv": {"out": 5, "k": 3, "stride": 1, "pad": 1}},)") +
        (with_bn ? R"({"batchnorm": {}},)" : "") + R"(
        {"relu": {}},
        {"maxpool": {"k": 2, "stride": 2}},
        {"conv": {"out": 6, "k": 3, "stride": 1, "pad": 1}},
        {"relu": {}},
        {"flatten": {}},
        {"fc": {"out": 3}}
      ]
    })");
    init_params(g, seed);
    g.trained = true; // synthetic weights stand in for a trained model
    return g;
}

} // namespace

TEST_SUITE_BEGIN("quantization");

TEST_CASE("round-half-even ties to even") {
    CHECK(round_half_even(0.5) == 0.0);
    CHECK(round_half_even(1.5) == 2.0);
    CHECK(round_half_even(2.5) == 2.0);
    CHECK(round_half_even(-0.5) == 0.0);
    CHECK(round_half_even(-1.5) == -2.0);
    CHECK(round_half_even(-2.5) == -2.0);
    CHECK(round_half_even(-3.5) == -4.0);
    CHECK(round_half_even(2.4999) == 2.0);
    CHECK(round_half_even(2.5001) == 3.0);
}

TEST_CASE("weight quantization hand values") {
    Tensor w({3}, {-2.54f, 1.0f, 0.0f});
    QuantizedWeights q = quantize_weights(w);
    CHECK(q.scale == doctest::Approx(0.02).epsilon(1e-6));
    CHECK(q.data[0] == -127);
    CHECK(q.data[1] == 50);
    CHECK(q.data[2] == 0);
}

TEST_CASE("all-zero weights fall back to unit scale") {
    Tensor w = Tensor::zeros({4});
    QuantizedWeights q = quantize_weights(w);
    CHECK(q.scale == 1.0f);
    for (int8_t v : q.data) CHECK(v == 0);
}

TEST_CASE("dequantized weights stay within half a scale step") {
    Rng rng(3);
    Tensor w = random_tensor({2, 3, 3, 3}, rng, -2.0f, 2.0f);
    QuantizedWeights q = quantize_weights(w);
    for (size_t i = 0; i < w.data.size(); ++i)
        CHECK(std::abs(double(q.data[i]) * q.scale - w.data[i]) <=
              double(q.scale) / 2 + 1e-7);
}

TEST_CASE("activation calibration hand values") {
    QuantParams p = activation_params(0.0f, 5.1f);
    CHECK(p.scale == doctest::Approx(0.02).epsilon(1e-6));
    CHECK(p.zero_point == -128);
    CHECK(quantize_value(1.0f, p) == -78);

    QuantParams c = activation_params(-3.0f, -3.0f); // constant activation
    CHECK(c.scale == 1.0f);
    CHECK(c.zero_point == -125); // round(-128 + 3)
    CHECK(activation_params(3.0f, 3.0f).zero_point == -128); // clamped

    QuantParams sym = activation_params(-2.0f, 2.0f);
    CHECK(sym.zero_point == 0); // round(-128 + 127.5) half-even
}

TEST_CASE("fused graph drops batchnorm and preserves eval outputs") {
    ModelGraph g = quant_test_model(7);
    ModelGraph fused = fuse_graph(g);
    for (const LayerSpec& s : fused.layers)
        CHECK(!std::holds_alternative<BatchNormSpec>(s));
    Rng rng(8);
    for (int t = 0; t < 3; ++t) {
        Tensor img = random_tensor({1, 12, 12}, rng, 0.0f, 1.0f);
        Tensor a = forward(g, img);
        Tensor b = forward(fused, img);
        for (size_t i = 0; i < a.data.size(); ++i)
            CHECK(std::abs(a.data[i] - b.data[i]) <= 2e-5f);
    }
}

TEST_CASE("batchnorm not preceded by conv cannot be fused") {
    ModelGraph g = parse_model_spec(R"({
      "name": "bad", "input": [1, 8, 8], "classes": 2,
      "layers": [
        {"conv": {"out": 3, "k": 3, "pad": 1}},
        {"relu": {}},
        {"batchnorm": {}},
        {"flatten": {}},
        {"fc": {"out": 2}}
      ]
    })");
    init_params(g, 1);
    CHECK_THROWS_AS(fuse_graph(g), ValidationError);
}

TEST_CASE("unit-scale 1x1 station reproduces the integer identity") {
    QuantStation st;
    st.is_conv = true;
    st.conv = ConvSpec{1, 1, 1, 0, true};
    st.in_c = st.in_h = st.in_w = 1;
    st.weight = {3};
    st.bias = {0};
    st.weight_scale = 1.0f;
    st.in_q = {1.0f, 0};
    st.out_q = {1.0f, 0};
    st.requant_mult = 1.0;
    std::vector<int8_t> out = quant_station_forward(st, {5});
    REQUIRE(out.size() == 1);
    CHECK(out[0] == 15);
}

TEST_CASE("zero image with zero biases propagates zero points") {
    ModelGraph g = quant_test_model(11, false);
    for (auto& lp : g.params)
        if (lp.tensors.size() == 2 && !lp.tensors[1].data.empty())
            for (float& v : lp.tensors[1].data) v = 0.0f;
    Dataset calib = generate_synthetic(3, 8, 12, 5);
    QuantModel qm = quantize_model(g, calib);
    Tensor zero = Tensor::zeros({1, 12, 12});
    std::vector<int8_t> cur = quantize_image(zero, qm.input_q);
    for (int8_t v : cur) CHECK(int(v) == qm.input_q.zero_point);
    for (const QuantStation& st : qm.stations) {
        if (st.final_station) break;
        cur = quant_station_forward(st, cur);
        for (int8_t v : cur) CHECK(int(v) == st.out_q.zero_point);
    }
    Tensor logits = quant_infer(qm, zero);
    for (size_t i = 1; i < logits.data.size(); ++i)
        CHECK(logits.data[i] == logits.data[0]);
}

TEST_CASE("quant_infer is bit-deterministic") {
    ModelGraph g = quant_test_model(13);
    Dataset calib = generate_synthetic(3, 8, 12, 6);
    QuantModel qm = quantize_model(g, calib);
    Tensor img = calib.images[2];
    Tensor a = quant_infer(qm, img);
    Tensor b = quant_infer(qm, img);
    for (size_t i = 0; i < a.data.size(); ++i) {
        uint32_t ba, bb;
        std::memcpy(&ba, &a.data[i], 4);
        std::memcpy(&bb, &b.data[i], 4);
        CHECK(ba == bb);
    }
}

TEST_CASE("quantized inference tracks the float model after a short training") {
    Dataset train = generate_synthetic(3, 16, 12, 31);
    ModelGraph g = quant_test_model(17);
    g.trained = false;
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch = 12;
    tc.attack.epsilon = 0.0f; // plain training is enough for agreement
    tc.attack.step = 0.0f;
    tc.attack.iters = 0;
    tc.seed = 3;
    adv_train(g, train, tc);
    QuantModel qm = quantize_model(g, train);
    int agree = 0;
    for (size_t i = 0; i < train.size(); ++i) {
        Tensor fl = forward(fuse_graph(g), train.images[i]);
        Tensor qi = quant_infer(qm, train.images[i]);
        int fa = 0, qa = 0;
        for (int k = 1; k < int(fl.size()); ++k) {
            if (fl.data[size_t(k)] > fl.data[size_t(fa)]) fa = k;
            if (qi.data[size_t(k)] > qi.data[size_t(qa)]) qa = k;
        }
        if (fa == qa) ++agree;
    }
    CHECK(double(agree) / double(train.size()) >= 0.9);
}

TEST_CASE("reduction widths beyond 32-bit accumulation are rejected") {
    ModelGraph g = parse_model_spec(R"({
      "name": "wide", "input": [1, 200, 200], "classes": 2,
      "layers": [
        {"conv": {"out": 1, "k": 1}},
        {"flatten": {}},
        {"fc": {"out": 2}}
      ]
    })");
    init_params(g, 1);
    g.trained = true;
    Dataset calib;
    calib.classes = 2;
    calib.height = calib.width = 200;
    calib.images.push_back(Tensor::zeros({1, 200, 200}));
    calib.labels.push_back(0);
    CHECK_THROWS_AS(quantize_model(g, calib), ValidationError);
}

TEST_CASE("quantized model container round-trips") {
    ModelGraph g = quant_test_model(19);
    Dataset calib = generate_synthetic(3, 6, 12, 7);
    QuantModel qm = quantize_model(g, calib);
    auto bytes = serialize_qmodel(qm);
    QuantModel back = deserialize_qmodel(bytes);
    CHECK(serialize_qmodel(back) == bytes);
    Tensor img = calib.images[0];
    Tensor a = quant_infer(qm, img);
    Tensor b = quant_infer(back, img);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_SUITE_END();
