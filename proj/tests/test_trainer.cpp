#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "hnll/corpus.hpp"
#include "hnll/error.hpp"
#include "hnll/io_util.hpp"
#include "hnll/rng.hpp"
#include "hnll/trainer.hpp"

using namespace hnll;
namespace fs = std::filesystem;

namespace {

struct TinyCorpus {
    fs::path dir;
    std::vector<Utterance> train, val, test;

    TinyCorpus() : dir(fs::temp_directory_path() / "hnll_test_trainer") {
        CorpusConfig c;
        c.n_train = 8;
        c.n_val = 2;
        c.n_test = 3;
        c.duration_s = 0.25;
        c.seed = 4;
        build_corpus(c, dir);
        const auto m = resolve_manifest(dir);
        train = load_split(m, "train");
        val = load_split(m, "val");
        test = load_split(m, "test");
    }
    ~TinyCorpus() { fs::remove_all(dir); }
};

const TinyCorpus& corpus() {
    static TinyCorpus c;
    return c;
}

TrainConfig tiny_train(LossKind loss) {
    TrainConfig t;
    t.loss = loss;
    t.epochs = 4;
    t.batch_size = 4;
    t.lr = 1e-3;
    t.model.hidden_sizes = {16};
    t.model.diag_transform = DiagTransform::Clamp;
    return t;
}

}  // namespace

TEST_CASE("Adam update") {
    std::vector<double> p{1.0, -2.0};
    AdamState s;
    adam_step(p, {0.5, -0.1}, s, 0.1);
    // First bias-corrected step moves each coordinate by lr * sign(g).
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-7));
    CHECK(s.step == 1);
    CHECK(s.m[0] == doctest::Approx(0.05));
    CHECK(s.v[0] == doctest::Approx(0.00025));

    const double p1 = p[0];
    adam_step(p, {0.5, 0.0}, s, 0.1);
    const double m = 0.9 * 0.05 + 0.1 * 0.5, v = 0.999 * 0.00025 + 0.001 * 0.25;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    CHECK(p[0] == doctest::Approx(p1 - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));

    const auto before = p;
    try {
        adam_step(p, {std::numeric_limits<double>::quiet_NaN(), 0.0}, s, 0.1, 17);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.index() == 17);
    }
    CHECK(p == before);
    CHECK_THROWS_AS(adam_step(p, {1.0}, s, 0.1), ShapeError);
}

TEST_CASE("Adam edge cases and a direct reimplementation") {
    std::vector<double> p{0.3, -0.7};
    AdamState s;
    adam_step(p, {0.0, 0.0}, s, 4e-4);
    CHECK(p == std::vector<double>{0.3, -0.7});

    std::vector<double> q{0.0};
    AdamState s1;
    adam_step(q, {1.0}, s1, 4e-4);
    CHECK(q[0] == doctest::Approx(-0.0004 / (1.0 + 1e-8)).epsilon(1e-15));

    // Published recurrence, written out independently.
    Rng rng(8);
    std::vector<double> a(50), b, m(50, 0.0), v(50, 0.0);
    for (auto& x : a) x = rng.normal();
    b = a;
    AdamState st;
    double worst = 0.0;
    for (int t = 1; t <= 40; ++t) {
        std::vector<double> g(50);
        for (auto& x : g) x = rng.normal();
        adam_step(a, g, st, 1e-3);
        for (std::size_t i = 0; i < 50; ++i) {
            m[i] = 0.9 * m[i] + (1 - 0.9) * g[i];
            v[i] = 0.999 * v[i] + (1 - 0.999) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.999, t));
            b[i] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
        }
        for (std::size_t i = 0; i < 50; ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / std::abs(b[i]));
    }
    CHECK(worst <= 1e-15);
}

TEST_CASE("global norm clipping") {
    std::vector<double> g{3.0, 4.0};
    CHECK(clip_global_norm(g, 1.0));
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
    CHECK_FALSE(clip_global_norm(g, 10.0));
    CHECK_FALSE(clip_global_norm(g, 0.0));
}

TEST_CASE("loss names and resolved model") {
    for (auto k : {LossKind::Mae, LossKind::Mse, LossKind::SiSdr, LossKind::NllDiag, LossKind::NllBlock,
                   LossKind::Hybrid})
        CHECK(parse_loss(to_string(k)) == k);
    CHECK_THROWS_AS(parse_loss("l1"), ConfigError);
    CHECK_FALSE(uses_covariance(LossKind::SiSdr));
    CHECK(uses_covariance(LossKind::Hybrid));

    TrainConfig t;
    t.loss = LossKind::NllDiag;
    t.delta = 0.05;
    CHECK(t.resolved_model().layout == CovLayout::Diagonal);
    CHECK(t.resolved_model().delta == 0.05);
    CHECK(t.resolved_model().bins == 161);
    t.loss = LossKind::Hybrid;
    CHECK(t.resolved_model().layout == CovLayout::Block2);
}

TEST_CASE("train config JSON round trip and validation") {
    TrainConfig t = tiny_train(LossKind::NllBlock);
    t.delta = 1e-4;
    t.beta = 0.0;
    t.seed = 77;
    t.diag_weighting = DiagWeighting::PerBinMin;
    const TrainConfig back = train_config_from_json(to_json(t));
    CHECK(to_json(back) == to_json(t));

    TrainConfig bad = t;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = t;
    bad.hop = 100;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"loss", "nope"}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"lr", "fast"}}), ConfigError);
}

TEST_CASE("mean-only losses leave the covariance head untouched") {
    const auto& c = corpus();
    const TrainConfig t = tiny_train(LossKind::Mse);
    ModelConfig mc = t.resolved_model();
    const ModelParams p = init_params(mc);
    const ItemResult r = item_loss_and_grad(t, p, mc, c.train[0]);
    for (std::size_t i = p.head_boundary; i < p.size(); ++i) REQUIRE(r.grad[i] == 0.0);
    CHECK(item_loss_and_grad(t, p, mc, c.train[0], false).grad.empty());
}

TEST_CASE("training lowers the loss and is reproducible") {
    const auto& c = corpus();
    for (auto loss : {LossKind::Mse, LossKind::NllBlock}) {
        const TrainConfig t = tiny_train(loss);
        std::vector<double> seen;
        const TrainResult a = train(t, c.train, c.val, [&](const EpochRecord& r) { seen.push_back(r.train_loss); });
        REQUIRE(a.history.size() == 4);
        CHECK(seen.size() == 4);
        CHECK(a.history.back().train_loss < a.history.front().train_loss);
        CHECK(a.best_epoch >= 1);
        CHECK(a.best.meta["best_epoch"] == a.best_epoch);

        const TrainResult b = train(t, c.train, c.val);
        CHECK(a.best.params.values == b.best.params.values);
        CHECK(history_csv(a.history) == history_csv(b.history));
    }
}

TEST_CASE("zero epochs returns the initialization") {
    const auto& c = corpus();
    TrainConfig t = tiny_train(LossKind::Mse);
    t.epochs = 0;
    const TrainResult r = train(t, c.train, c.val);
    CHECK(r.best_epoch == 0);
    CHECK(r.history.empty());
    CHECK(r.best.params.values == init_params(r.best.config).values);
    CHECK_THROWS_AS(train(tiny_train(LossKind::Mse), {}, c.val), ConfigError);
}

TEST_CASE("evaluation buckets and output files") {
    const auto& c = corpus();
    const TrainConfig t = tiny_train(LossKind::NllBlock);
    const TrainResult r = train(t, c.train, c.val);
    const EvalReport e = evaluate(r.best, c.test);
    REQUIRE(e.items.size() == 3);
    REQUIRE(e.buckets.size() == 3);
    CHECK(e.buckets[0].snr_db == -5.0);
    CHECK(e.buckets[2].snr_db == 5.0);
    for (const auto& b : e.buckets) {
        CHECK(b.count == 1);
        CHECK(b.improvement == doctest::Approx(b.si_sdr_enhanced - b.si_sdr_noisy));
    }
    CHECK(std::isfinite(e.mean_nll));
    CHECK(eval_items_csv(e).rfind("id,snr_db,si_sdr_noisy,si_sdr_enhanced,improvement,nll\n", 0) == 0);
    CHECK(eval_summary_csv(e).rfind("snr_db,count,", 0) == 0);

    const fs::path out = fs::temp_directory_path() / "hnll_test_trainer_out";
    write_train_outputs(out, t, r);
    CHECK(fs::exists(out / "config.json"));
    CHECK(read_file(out / "history.csv") == history_csv(r.history));
    const Checkpoint back = load_checkpoint(out / "model.ckpt");
    CHECK(back.params.values == r.best.params.values);
    CHECK(back.config.feature_norm == r.best.config.feature_norm);
    fs::remove_all(out);
}

TEST_CASE("unprocessed SI-SDR bucket means sit at the mixing SNR") {
    const fs::path dir = fs::temp_directory_path() / "hnll_test_trainer_buckets";
    CorpusConfig cc;
    cc.n_train = 1;
    cc.n_val = 1;
    cc.n_test = 60;
    cc.seed = 11;
    build_corpus(cc, dir);
    const auto te = load_split(resolve_manifest(dir), "test");
    ModelConfig mc;
    mc.hidden_sizes = {4};
    mc.residual_mean = true;
    Checkpoint ck{mc, init_params(mc), {}};
    const EvalReport e = evaluate(ck, te);
    REQUIRE(e.buckets.size() == 3);
    for (const auto& b : e.buckets) {
        CHECK(b.count == 20);
        CHECK(std::abs(b.si_sdr_noisy - b.snr_db) <= 0.2);
    }
    fs::remove_all(dir);
}

TEST_CASE("a pass-through checkpoint scores like the unprocessed input") {
    const auto& c = corpus();
    Checkpoint ck;
    ck.config.bins = 161;
    ck.config.context_frames = 0;
    ck.config.hidden_sizes = {322};
    ck.params = make_layout(ck.config);
    // tanh(eps x) / eps == x to far below the SI-SDR resolution.
    const double eps = 1e-8;
    const auto& trunk = ck.params.layers[0];
    const auto& head = ck.params.mean_head();
    for (std::size_t i = 0; i < 322; ++i) {
        ck.params.values[trunk.offset + i * 322 + i] = eps;
        ck.params.values[head.offset + i * 322 + i] = 1.0 / eps;
    }
    for (std::size_t o = 0; o < ck.params.chol_head().out; ++o)
        ck.params.values[ck.params.chol_head().bias_offset() + o] = o < 161 || o >= 322 ? 1.0 : 0.0;
    const EvalReport e = evaluate(ck, c.test);
    for (const auto& it : e.items) CHECK(std::abs(it.si_sdr_enhanced - it.si_sdr_noisy) < 1e-9);
}

TEST_CASE("best checkpoint is the validation maximum") {
    const auto& c = corpus();
    TrainConfig t = tiny_train(LossKind::SiSdr);
    t.epochs = 5;
    const TrainResult r = train(t, c.train, c.val);
    double best = -1e300;
    std::size_t arg = 0;
    for (const auto& h : r.history)
        if (h.val_si_sdr > best) {
            best = h.val_si_sdr;
            arg = h.epoch;
        }
    CHECK(r.best_epoch == arg);
    CHECK(r.best.meta["best_val_si_sdr"].get<double>() == best);
    // The stored parameters reproduce the recorded validation score.
    double sum = 0.0;
    for (const auto& u : c.val) sum += si_sdr(istft(enhance(r.best.params, r.best.config, u.noisy_spec)).samples,
                                              u.clean.samples);
    CHECK(sum / static_cast<double>(c.val.size()) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("tiny MSE run on twenty utterances") {
    const fs::path dir = fs::temp_directory_path() / "hnll_test_trainer_20";
    CorpusConfig cc;
    cc.n_train = 20;
    cc.n_val = 4;
    cc.n_test = 6;
    cc.seed = 5;
    build_corpus(cc, dir);
    const auto m = resolve_manifest(dir);
    const auto tr = load_split(m, "train"), va = load_split(m, "val"), te = load_split(m, "test");

    TrainConfig t;
    t.loss = LossKind::Mse;
    t.epochs = 2;
    const TrainResult two = train(t, tr, va);
    CHECK(two.history[1].train_loss < two.history[0].train_loss);

    const EvalReport e = evaluate(two.best, te);
    double noisy = 0.0;
    for (const auto& it : e.items) noisy += it.si_sdr_noisy / static_cast<double>(e.items.size());
    CHECK(e.mean_si_sdr > noisy);
    fs::remove_all(dir);
}

TEST_CASE("unreadable items are skipped only on request") {
    const fs::path dir = fs::temp_directory_path() / "hnll_test_trainer_missing";
    CorpusConfig cc;
    cc.n_train = 2;
    cc.n_val = 0;
    cc.n_test = 3;
    cc.duration_s = 0.25;
    const auto man = build_corpus(cc, dir);
    fs::remove(dir / man[3].noisy_path);
    const auto m = resolve_manifest(dir);
    CHECK_THROWS_AS(load_split(m, "test"), RuntimeError);
    std::vector<std::string> missing;
    const auto got = load_split(m, "test", 320, 160, &missing);
    CHECK(got.size() == 2);
    REQUIRE(missing.size() == 1);
    CHECK(missing[0].rfind(man[3].id + ": ", 0) == 0);
    fs::remove_all(dir);
}
