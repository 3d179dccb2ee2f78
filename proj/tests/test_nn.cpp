#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "sca/nn.hpp"

using namespace sca;

namespace {

// Two well-separated Gaussian blobs along the first axis.
DataSplit make_blob_split(std::size_t n_train, std::size_t n_val, std::size_t d, double margin,
                          std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](std::size_t n, Tensor& x, std::vector<int>& y) {
        x = Tensor(Shape{n, d});
        y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int label = static_cast<int>(rng.below(2));
            for (std::size_t j = 0; j < d; ++j) {
                double v = rng.normal();
                if (j == 0) v += label ? margin / 2 : -margin / 2;
                x.at2(i, j) = v;
            }
            y[i] = label;
        }
    };
    DataSplit split;
    fill(n_train, split.train_x, split.train_y);
    fill(n_val, split.val_x, split.val_y);
    return split;
}

ModelSpec blob_spec(std::size_t d) {
    ModelSpec spec;
    spec.preset = "mlp";
    spec.input_dim = d;
    spec.n_classes = 2;
    spec.hidden = {16};
    spec.dropout_p = 0.1;
    spec.norm_offset = 0.0;
    spec.norm_scale = 1.0;
    return spec;
}

} // namespace

TEST_CASE("normalize layer maps pixel range to [-1, 1]") {
    NormalizeLayer norm(0.5, 0.5);
    Tensor x = Tensor::matrix(1, 3, {0.0, 0.5, 1.0});
    Tensor y = norm.forward(x, {});
    CHECK(y.values() == std::vector<double>{-1, 0, 1});
    CHECK_THROWS_AS(NormalizeLayer(0.5, 0.0), ValueError);
}

TEST_CASE("affine layer computes x W^T + b") {
    AffineLayer layer(2, 2);
    auto ps = layer.params();
    ps[0]->values() = {1, 2, 3, 4}; // W rows: [1,2], [3,4]
    ps[1]->values() = {1, -1};
    Tensor x = Tensor::matrix(1, 2, {1, 1});
    Tensor y = layer.forward(x, {});
    CHECK(y.values() == std::vector<double>{4, 6});
}

TEST_CASE("affine init draws inside the fan-in bound") {
    AffineLayer layer(100, 5);
    Rng rng(3);
    layer.init(rng);
    const double bound = 0.1; // 1/sqrt(100)
    for (Tensor* p : layer.params()) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            CHECK(std::abs(p->at(i)) <= bound);
        }
    }
}

TEST_CASE("dropout: identity in eval mode and at p=0, inverted scaling in training") {
    DropoutLayer drop(0.5);
    Tensor x(Shape{64, 64}, 1.0);
    Tensor eval_out = drop.forward(x, {});
    CHECK(eval_out.values() == x.values());

    DropoutLayer none(0.0);
    Rng rng(5);
    ForwardOptions train_opts{true, &rng};
    CHECK(none.forward(x, train_opts).values() == x.values());

    Tensor out = drop.forward(x, train_opts);
    std::size_t zeros = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = out.at(i);
        CHECK((v == 0.0 || v == 2.0)); // survivors scaled by 1/(1-p)
        if (v == 0.0) ++zeros;
        total += v;
    }
    const double drop_rate = static_cast<double>(zeros) / static_cast<double>(out.size());
    CHECK(drop_rate == doctest::Approx(0.5).epsilon(0.05));
    CHECK(total / static_cast<double>(out.size()) == doctest::Approx(1.0).epsilon(0.05));

    CHECK_THROWS_AS(drop.forward(x, ForwardOptions{true, nullptr}), ValueError);
    CHECK_THROWS_AS(DropoutLayer(1.0), ValueError);
    CHECK_THROWS_AS(DropoutLayer(-0.1), ValueError);
}

TEST_CASE("dropout mask keeps gradients flowing only through kept units") {
    DropoutLayer drop(0.5);
    Rng rng(7);
    Tensor x(Shape{1, 32}, 1.0);
    TapeScope scope;
    scope.tape().watch(x);
    Tensor y = sum(drop.forward(x, {true, &rng}));
    Gradients g = scope.tape().backward(y);
    Tensor gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
        CHECK((gx.at(i) == 0.0 || gx.at(i) == 2.0));
    }
}

TEST_CASE("model presets: layer layout, penultimate tags, parameter counts") {
    ModelSpec mlp;
    mlp.preset = "mlp";
    Model m = build_model(mlp);
    CHECK(m.n_layers() == 8);
    CHECK(m.penultimate() == 5);
    CHECK(m.n_params() == 453130);
    const auto kinds = m.describe()["layers"];
    CHECK(kinds[0]["kind"] == "normalize");
    CHECK(kinds[1]["kind"] == "affine");
    CHECK(kinds[2]["kind"] == "relu");
    CHECK(kinds[3]["kind"] == "dropout");
    CHECK(kinds[7]["kind"] == "affine");

    ModelSpec sca_spec;
    sca_spec.preset = "sca";
    Model s = build_model(sca_spec);
    CHECK(s.n_layers() == 6);
    CHECK(s.penultimate() == 4);
    CHECK(s.describe()["layers"][4]["kind"] == "sca");
    CHECK(s.n_params() == 301440 + 3 * 147840 + 3850);

    ModelSpec mlp5;
    mlp5.preset = "mlp5";
    Model deep = build_model(mlp5);
    CHECK(deep.n_layers() == 14);
    CHECK(deep.penultimate() == 11);
    // 784->512->256->128->64->10 with biases
    CHECK(deep.n_params() == (784 * 512 + 512) + (512 * 256 + 256) + (256 * 128 + 128) +
                                 (128 * 64 + 64) + (64 * 10 + 10));
}

TEST_CASE("model spec validation") {
    ModelSpec bad;
    bad.preset = "transformer";
    CHECK_THROWS_AS(build_model(bad), ValueError);
    bad = ModelSpec{};
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(build_model(bad), ValueError);
    bad = ModelSpec{};
    bad.preset = "sca";
    bad.hidden = {8, 8, 8};
    CHECK_THROWS_AS(build_model(bad), ValueError);
    bad = ModelSpec{};
    bad.n_classes = 1;
    CHECK_THROWS_AS(build_model(bad), ValueError);
    // round trip
    ModelSpec spec;
    spec.preset = "sca";
    spec.hidden = {32, 24};
    spec.steps = 4;
    ModelSpec back = ModelSpec::from_json(spec.to_json());
    CHECK(back.preset == "sca");
    CHECK(back.hidden == std::vector<std::size_t>{32, 24});
    CHECK(back.steps == 4);
}

TEST_CASE("penultimate capture returns the last hidden activation") {
    ModelSpec spec = blob_spec(4);
    Model m = build_model(spec);
    m.init(1);
    Rng rng(2);
    Tensor x(Shape{3, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = rng.normal();
    Tensor penult;
    Tensor logits = m.forward(x, {}, &penult);
    CHECK(penult.rows() == 3);
    CHECK(penult.cols() == 16);
    CHECK(logits.cols() == 2);
    for (std::size_t i = 0; i < penult.size(); ++i) CHECK(penult.at(i) >= 0.0); // relu output

    Model untagged;
    untagged.add(std::make_unique<ReluLayer>());
    Tensor out;
    CHECK_THROWS_AS(untagged.forward(x, {}, &out), ValueError);
}

TEST_CASE("model clone copies parameters deeply") {
    Model m = build_model(blob_spec(4));
    m.init(7);
    Model c = m.clone();
    auto pm = m.params();
    auto pc = c.params();
    REQUIRE(pm.size() == pc.size());
    for (std::size_t i = 0; i < pm.size(); ++i) {
        CHECK(pm[i]->values() == pc[i]->values());
    }
    pc[0]->at(0) += 1.0;
    CHECK(pm[0]->at(0) != pc[0]->at(0));
}

TEST_CASE("adam: first step matches the closed form") {
    Tensor p = Tensor::vector({1.0});
    Adam adam({&p}, AdamConfig{0.001, 0.9, 0.999, 1e-8});
    adam.step({Tensor::vector({1.0})});
    // m-hat and v-hat are exactly 1 after one step with unit gradient, so the
    // update is lr / (1 + eps).
    CHECK(p.at(0) == doctest::Approx(1.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
    adam.step({Tensor::vector({1.0})});
    CHECK(p.at(0) == doctest::Approx(1.0 - 2 * 0.001).epsilon(1e-6));
    CHECK(adam.steps_taken() == 2);
}

TEST_CASE("adam: constant gradients move each coordinate by about lr per step") {
    Tensor p = Tensor::vector({0.0, 5.0});
    Adam adam({&p}, AdamConfig{});
    for (int i = 0; i < 100; ++i) adam.step({Tensor::vector({1.0, -2.0})});
    CHECK(p.at(0) == doctest::Approx(-0.1).epsilon(1e-3));
    CHECK(p.at(1) == doctest::Approx(5.1).epsilon(1e-3));
}

TEST_CASE("adam: validation errors") {
    Tensor p = Tensor::vector({1.0});
    CHECK_THROWS_AS(Adam({&p}, AdamConfig{-1.0, 0.9, 0.999, 1e-8}), ValueError);
    CHECK_THROWS_AS(Adam({&p}, AdamConfig{0.001, 1.0, 0.999, 1e-8}), ValueError);
    Adam adam({&p}, AdamConfig{});
    CHECK_THROWS_AS(adam.step({}), ValueError);
    CHECK_THROWS_AS(adam.step({Tensor::vector({1.0, 2.0})}), ShapeError);
    CHECK_THROWS_AS(adam.set_lr(-0.5), ValueError);
}

TEST_CASE("plateau schedule: halving and early stop bookkeeping") {
    PlateauSchedule sched({5, 20});
    CHECK(sched.observe(1.0).improved);
    CHECK(sched.observe(0.9).improved);
    for (int i = 1; i <= 4; ++i) {
        auto d = sched.observe(0.95);
        CHECK(!d.improved);
        CHECK(!d.halve);
        CHECK(!d.stop);
    }
    auto fifth = sched.observe(0.95);
    CHECK(fifth.halve); // 5 epochs without improvement
    CHECK(!fifth.stop);
    // equal loss is not an improvement
    auto tie = sched.observe(0.9);
    CHECK(!tie.improved);
    for (int i = 7; i <= 9; ++i) sched.observe(0.95);
    CHECK(sched.observe(0.95).halve); // counter reached 10
    for (int i = 11; i <= 19; ++i) {
        CHECK(!sched.observe(0.95).stop);
    }
    auto last = sched.observe(0.95);
    CHECK(last.stop); // counter reached 20
    CHECK(last.halve); // 20 is also a halving multiple

    // improvement resets everything
    PlateauSchedule s2({5, 20});
    s2.observe(1.0);
    for (int i = 0; i < 4; ++i) s2.observe(2.0);
    CHECK(s2.observe(0.5).improved);
    CHECK(s2.epochs_since_best() == 0);

    CHECK_THROWS_AS(PlateauSchedule({0, 20}), ValueError);
    CHECK_THROWS_AS(PlateauSchedule({5, 4}), ValueError);
}

TEST_CASE("accuracy and ce_loss on a fixed linear model") {
    Model m;
    m.add(std::make_unique<AffineLayer>(2, 2));
    auto ps = m.params();
    ps[0]->values() = {1, 0, 0, 1}; // identity: logits = inputs
    ps[1]->values() = {0, 0};
    Tensor x = Tensor::matrix(4, 2, {2, 0, 0, 2, 3, 1, 0.5, 1.0});
    std::vector<int> y = {0, 1, 0, 0}; // last one is wrong on purpose
    CHECK(accuracy(m, x, y) == doctest::Approx(0.75));
    // manual mean cross entropy
    double expect = 0.0;
    Tensor probs = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
        expect += -std::log(probs.at2(i, static_cast<std::size_t>(y[i])));
    }
    expect /= 4.0;
    CHECK(ce_loss(m, x, y) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(accuracy(m, Tensor(Shape{0, 2}), {}), ValueError);
}

TEST_CASE("training separates two blobs and is reproducible bit for bit") {
    DataSplit data = make_blob_split(256, 64, 4, 6.0, 11);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 40;
    cfg.seed = 5;

    auto run = [&]() {
        Model m = build_model(blob_spec(4));
        m.init(5);
        TrainResult r = train(m, data, cfg);
        return std::make_pair(std::move(m), std::move(r));
    };
    auto [m1, r1] = run();
    CHECK(r1.best_epoch >= 1);
    CHECK(r1.best_val_loss < 0.2);
    CHECK(accuracy(m1, data.val_x, data.val_y) >= 0.95);
    CHECK(static_cast<int>(r1.history.size()) <= cfg.max_epochs);
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].epoch == static_cast<int>(i) + 1);
    }

    auto [m2, r2] = run();
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
    }
    auto p1 = m1.params(), p2 = m2.params();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->values() == p2[i]->values());
    }

    // a different seed must lead elsewhere
    Model m3 = build_model(blob_spec(4));
    m3.init(6);
    TrainConfig cfg3 = cfg;
    cfg3.seed = 6;
    TrainResult r3 = train(m3, data, cfg3);
    CHECK(r3.history[0].train_loss != r1.history[0].train_loss);
}

TEST_CASE("zero learning rate trains nothing and stops early") {
    DataSplit data = make_blob_split(64, 32, 3, 4.0, 21);
    Model m = build_model(blob_spec(3));
    m.init(9);
    std::vector<std::vector<double>> before;
    for (Tensor* p : m.params()) before.push_back(p->values());

    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.max_epochs = 100;
    cfg.lr = 0.0;
    cfg.seed = 1;
    TrainResult r = train(m, data, cfg);
    // constant validation loss: first epoch improves over infinity, then the
    // plateau counter runs to the early-stop patience
    CHECK(static_cast<int>(r.history.size()) == 1 + cfg.early_stop_patience);
    CHECK(r.best_epoch == 1);
    auto params = m.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i]->values() == before[i]);
    }
    // learning-rate column reflects the halvings on the plateau
    CHECK(r.history.back().lr == 0.0);
}

TEST_CASE("the best-epoch parameters are restored at the end of training") {
    DataSplit data = make_blob_split(128, 48, 3, 5.0, 33);
    Model m = build_model(blob_spec(3));
    m.init(4);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 25;
    cfg.seed = 2;
    TrainResult r = train(m, data, cfg);
    const double val_loss_now = ce_loss(m, data.val_x, data.val_y);
    CHECK(val_loss_now == doctest::Approx(r.best_val_loss).epsilon(1e-12));
    double min_seen = 1e300;
    for (const auto& e : r.history) min_seen = std::min(min_seen, e.val_loss);
    CHECK(r.best_val_loss == doctest::Approx(min_seen));
}

TEST_CASE("an identity adversary reproduces clean training exactly") {
    DataSplit data = make_blob_split(96, 32, 3, 5.0, 44);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 8;
    cfg.seed = 3;

    Model clean = build_model(blob_spec(3));
    clean.init(8);
    TrainResult rc = train(clean, data, cfg);

    Model adv = build_model(blob_spec(3));
    adv.init(8);
    BatchAdversary identity = [](const Model&, const Tensor& x, const std::vector<int>&) {
        return x;
    };
    TrainResult ra = train(adv, data, cfg, identity);

    REQUIRE(rc.history.size() == ra.history.size());
    for (std::size_t i = 0; i < rc.history.size(); ++i) {
        CHECK(rc.history[i].train_loss == ra.history[i].train_loss);
        CHECK(rc.history[i].val_loss == ra.history[i].val_loss);
    }
    auto pc = clean.params(), pa = adv.params();
    for (std::size_t i = 0; i < pc.size(); ++i) {
        CHECK(pc[i]->values() == pa[i]->values());
    }

    // a perturbing adversary must change the run
    Model shifted = build_model(blob_spec(3));
    shifted.init(8);
    BatchAdversary shove = [](const Model&, const Tensor& x, const std::vector<int>&) {
        return shift(x, 0.25);
    };
    TrainResult rs = train(shifted, data, cfg, shove);
    CHECK(rs.history[0].train_loss != rc.history[0].train_loss);
}

TEST_CASE("train validates its configuration and data") {
    DataSplit data = make_blob_split(32, 16, 3, 4.0, 50);
    Model m = build_model(blob_spec(3));
    m.init(1);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(m, data, cfg), ValueError);
    cfg = TrainConfig{};
    cfg.max_epochs = 0;
    CHECK_THROWS_AS(train(m, data, cfg), ValueError);
    cfg = TrainConfig{};
    DataSplit bad = data;
    bad.val_y.pop_back();
    CHECK_THROWS_AS(train(m, bad, cfg), ValueError);
}

TEST_CASE("checkpoint round trip preserves everything bit for bit") {
    Model m = build_model(blob_spec(5));
    m.init(12);
    nlohmann::json meta = {{"seed", 12}, {"dataset", "blobs"}, {"note", "round trip"}};
    const std::string path = "test_checkpoint_roundtrip.bin";
    save_checkpoint(path, m, meta);

    LoadedModel loaded = load_checkpoint(path);
    CHECK(loaded.metadata == meta);
    auto pm = m.params();
    auto pl = loaded.model.params();
    REQUIRE(pm.size() == pl.size());
    for (std::size_t i = 0; i < pm.size(); ++i) {
        CHECK(pm[i]->values() == pl[i]->values());
    }
    Rng rng(1);
    Tensor x(Shape{4, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = rng.normal();
    CHECK(m.forward(x).values() == loaded.model.forward(x).values());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects garbage, truncation, and mismatched shapes") {
    const std::string path = "test_checkpoint_bad.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "this is not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    CHECK_THROWS_AS(load_checkpoint("no_such_file.bin"), DataError);

    Model m;
    m.add(std::make_unique<AffineLayer>(8, 3));
    m.set_penultimate(-1);
    m.init(1);
    save_checkpoint(path, m, {});
    // truncate the parameter payload
    {
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    // tamper with the declared architecture so shapes disagree
    save_checkpoint(path, m, {});
    {
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        const std::string needle = "\"out\":3";
        const auto pos = bytes.find(needle);
        REQUIRE(pos != std::string::npos);
        bytes[pos + needle.size() - 1] = '4';
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::remove(path.c_str());
}
