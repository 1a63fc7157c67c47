#include <glosmo/pvqvae.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace glosmo;

namespace {

PvqVaeConfig tiny_cfg() {
  PvqVaeConfig c;
  c.hidden = 16;
  c.d = 8;
  c.K = 16;
  return c;
}

MatF random_motion(Rng& rng, int frames, int channels) {
  MatF m(frames, channels);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return m;
}

}  // namespace

TEST_CASE("encoder output length is floor(L / r)") {
  SkeletonSpec sk;
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 1);
  Rng rng(2);
  for (auto [L, want] : {std::pair{32, 8}, std::pair{33, 8}, std::pair{35, 8}, std::pair{4, 1},
                         std::pair{7, 1}}) {
    MatF x = random_motion(rng, L, sk.total_channels());
    Mat<float> z = pvqvae_encode(m, Part::body, m.part_slice(x, Part::body));
    REQUIRE(z.rows() == want);
    REQUIRE(z.cols() == 8);
  }
  Mat<float> too_short = Mat<float>::Zero(3, sk.channels(Part::body));
  REQUIRE_THROWS_AS(pvqvae_encode(m, Part::body, too_short), std::invalid_argument);
}

TEST_CASE("decoder expands the latent length by r") {
  SkeletonSpec sk;
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 3);
  Mat<float> zq = Mat<float>::Zero(8, 8);
  Mat<float> x = pvqvae_decode(m, Part::lhand, zq);
  REQUIRE(x.rows() == 32);
  REQUIRE(x.cols() == sk.channels(Part::lhand));
  REQUIRE(all_finite(x));
}

TEST_CASE("all-zero input yields finite latents") {
  SkeletonSpec sk;
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 4);
  Mat<float> zeros = Mat<float>::Zero(20, sk.channels(Part::face));
  Mat<float> z = pvqvae_encode(m, Part::face, zeros);
  REQUIRE(all_finite(z));
}

TEST_CASE("quantize matches a double-precision brute-force scan") {
  Rng rng(5);
  Mat<float> cb(32, 6);
  for (int i = 0; i < cb.size(); ++i) cb.data()[i] = static_cast<float>(rng.gaussian());
  Mat<float> z(200, 6);
  for (int i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.gaussian());

  auto [tokens, zq] = quantize(z, cb);
  for (int i = 0; i < 200; ++i) {
    int best = -1;
    float best_d = std::numeric_limits<float>::max();
    for (int k = 0; k < 32; ++k) {
      float d = 0;
      for (int c = 0; c < 6; ++c) {
        float diff = z(i, c) - cb(k, c);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    REQUIRE(tokens[static_cast<std::size_t>(i)] == best);
    REQUIRE(zq.row(i) == cb.row(best));
  }
}

TEST_CASE("quantize is idempotent and breaks ties toward smaller indices") {
  Rng rng(6);
  Mat<float> cb(8, 4);
  for (int i = 0; i < cb.size(); ++i) cb.data()[i] = static_cast<float>(rng.gaussian());
  cb.row(5) = cb.row(2);  // duplicate row: any hit must resolve to 2
  Mat<float> z(16, 4);
  for (int i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.gaussian());
  auto [t1, q1] = quantize(z, cb);
  auto [t2, q2] = quantize(q1, cb);
  REQUIRE(t1 == t2);
  REQUIRE(q1 == q2);
  for (int tok : t1) REQUIRE(tok != 5);
  Mat<float> probe = cb.row(2);
  auto [t3, q3] = quantize(probe, cb);
  REQUIRE(t3[0] == 2);
  Mat<float> wrong_width = Mat<float>::Zero(2, 5);
  REQUIRE_THROWS_AS(quantize(wrong_width, cb), std::invalid_argument);
}

TEST_CASE("straight-through estimator copies gradients onto the encoder output") {
  Rng rng(7);
  MatD ze(6, 4), zq(6, 4), w(6, 4);
  for (int i = 0; i < ze.size(); ++i) {
    ze.data()[i] = rng.gaussian();
    zq.data()[i] = rng.gaussian();
    w.data()[i] = rng.gaussian();
  }
  ag::Graph<double> g;
  auto ze_v = g.input(ze, true);
  auto st = g.add(ze_v, g.constant(zq - ze));
  REQUIRE((g.value(st) - zq).cwiseAbs().maxCoeff() < 1e-12);
  g.backward(g.sum_weighted(st, w));
  REQUIRE(g.grad(ze_v) == w);  // exact copy, no scaling
}

TEST_CASE("vq loss values follow the three-term formula") {
  MatD x(2, 2), xh(2, 2), ze(1, 2), zq(1, 2);
  x << 1, 0, 0, 1;
  xh << 0, 0, 0, 1;
  ze << 2, 0;
  zq << 0, 0;
  auto v = vq_loss_values<double>(x, xh, ze, zq, 0.25);
  REQUIRE(v.recon == Catch::Approx(1.0));
  REQUIRE(v.codebook == Catch::Approx(4.0));
  REQUIRE(v.commit == Catch::Approx(4.0));
  REQUIRE(v.total == Catch::Approx(1.0 + 4.0 + 0.25 * 4.0));
  auto z = vq_loss_values<double>(x, x, zq, zq, 0.25);
  REQUIRE(z.total == 0.0);
}

TEST_CASE("commitment gradient matches finite differences with zq frozen") {
  Rng rng(8);
  MatD ze(5, 3), zq(5, 3);
  for (int i = 0; i < ze.size(); ++i) {
    ze.data()[i] = rng.gaussian();
    zq.data()[i] = rng.gaussian();
  }
  double beta = 0.25;
  auto eval = [&](const MatD& z) {
    ag::Graph<double> g;
    auto zv = g.input(z, false);
    auto cm = g.sub(zv, g.constant(zq));
    return beta * g.value(g.sum(g.mul(cm, cm)))(0, 0);
  };
  ag::Graph<double> g;
  auto zv = g.input(ze, true);
  auto cm = g.sub(zv, g.constant(zq));
  g.backward(g.scale(g.sum(g.mul(cm, cm)), beta));
  const MatD& analytic = g.grad(zv);
  double h = 1e-6;
  for (int i = 0; i < ze.size(); ++i) {
    MatD p = ze, q = ze;
    p.data()[i] += h;
    q.data()[i] -= h;
    double fd = (eval(p) - eval(q)) / (2 * h);
    REQUIRE(std::abs(fd - analytic.data()[i]) /
                std::max({std::abs(fd), std::abs(analytic.data()[i]), 1.0}) <
            1e-4);
    // the closed form is 2*beta*(ze - zq)
    REQUIRE(analytic.data()[i] ==
            Catch::Approx(2 * beta * (ze.data()[i] - zq.data()[i])).margin(1e-12));
  }
}

TEST_CASE("straight-through reconstruction gradient matches finite differences") {
  // FD over the encoder output with the quantization offset frozen: this is
  // exactly the path the straight-through trick exposes to the encoder.
  SkeletonSpec sk;
  PvqVaeConfig cfg = tiny_cfg();
  auto m = PvqVae<double>::create(cfg, sk, 9);
  Rng rng(10);
  MatF motion = random_motion(rng, 12, sk.total_channels());
  Mat<double> x = m.part_slice(motion, Part::face);
  Mat<double> ze = pvqvae_encode(m, Part::face, x);
  auto [tokens, zq] = quantize(ze, m.store.value(m.coder(Part::face).codebook));
  Mat<double> offset = zq - ze;

  auto eval = [&](const Mat<double>& z) {
    ag::Graph<double> g;
    nn::Binder<double> ctx(g, m.store);
    auto st = g.add(g.input(z, false), g.constant(offset));
    auto xh = m.coder(Part::face).decode(ctx, st);
    auto d = g.sub(g.constant(x), xh);
    return g.value(g.sum(g.mul(d, d)))(0, 0);
  };

  ag::Graph<double> g;
  nn::Binder<double> ctx(g, m.store);
  auto ze_v = g.input(ze, true);
  auto st = g.add(ze_v, g.constant(offset));
  auto xh = m.coder(Part::face).decode(ctx, st);
  auto d = g.sub(g.constant(x), xh);
  g.backward(g.sum(g.mul(d, d)));
  const MatD& analytic = g.grad(ze_v);

  double h = 1e-5;
  for (int i = 0; i < ze.size(); ++i) {
    Mat<double> p = ze, q = ze;
    p.data()[i] += h;
    q.data()[i] -= h;
    double fd = (eval(p) - eval(q)) / (2 * h);
    REQUIRE(std::abs(fd - analytic.data()[i]) /
                std::max({std::abs(fd), std::abs(analytic.data()[i]), 1.0}) <
            1e-4);
  }
}

TEST_CASE("parts are fully independent") {
  SkeletonSpec sk;
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 11);
  Rng rng(12);
  MatF motion = random_motion(rng, 16, sk.total_channels());
  Mat<float> before = pvqvae_encode(m, Part::lhand, m.part_slice(motion, Part::lhand));
  // scramble every body parameter
  for (int id = 0; id < m.store.size(); ++id)
    if (m.store.name(id).rfind("body.", 0) == 0) m.store.value(id).array() += 3.0f;
  Mat<float> after = pvqvae_encode(m, Part::lhand, m.part_slice(motion, Part::lhand));
  REQUIRE(before == after);
}

TEST_CASE("training on a toy corpus reduces the loss deterministically") {
  SkeletonSpec sk;
  GlossVocab vocab = make_vocab(4, sk, 13);
  CorpusParams cp;
  cp.n_samples = 24;
  cp.min_glosses = 1;
  cp.max_glosses = 2;
  cp.min_span = 8;
  cp.max_span = 12;
  cp.render.min_span = 8;
  auto samples = generate_corpus(vocab, cp, 14);

  PvqVaeTrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.lr = 1e-3f;
  tc.seed = 15;

  auto m1 = PvqVae<float>::create(tiny_cfg(), sk, 16);
  auto s1 = train_pvqvae(m1, samples, tc);
  REQUIRE(s1.epoch_loss.size() == 4);
  REQUIRE(s1.epoch_loss.back() < s1.epoch_loss.front());

  auto m2 = PvqVae<float>::create(tiny_cfg(), sk, 16);
  auto s2 = train_pvqvae(m2, samples, tc);
  REQUIRE(s1.epoch_loss == s2.epoch_loss);
  for (Part p : kParts)
    REQUIRE(m1.store.value(m1.coder(p).codebook) == m2.store.value(m2.coder(p).codebook));
}

TEST_CASE("codebook rows unused for enough batches are re-seeded") {
  SkeletonSpec sk;
  GlossVocab vocab = make_vocab(2, sk, 17);
  RenderParams rp;
  auto rec = render_sample(vocab, {0, 1}, {12, 12}, 18, rp);
  std::vector<SampleRecord> samples{rec, rec, rec, rec};

  auto m = PvqVae<float>::create(tiny_cfg(), sk, 19);
  // plant a code far away from anything the encoder can produce
  Mat<float>& cb = m.store.value(m.coder(Part::body).codebook);
  cb.row(7).setConstant(100.0f);

  PvqVaeTrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.seed = 20;
  tc.dead_code_batches = 3;
  train_pvqvae(m, samples, tc);
  // the planted row must have been replaced by a real encoder output
  REQUIRE(m.store.value(m.coder(Part::body).codebook).row(7).cwiseAbs().maxCoeff() < 50.0f);
}

TEST_CASE("diverging training reports a training error") {
  SkeletonSpec sk;
  GlossVocab vocab = make_vocab(2, sk, 21);
  auto rec = render_sample(vocab, {0, 1}, {12, 12}, 22);
  std::vector<SampleRecord> samples{rec};
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 23);
  m.store.value(m.coder(Part::body).enc_in.w).setConstant(std::numeric_limits<float>::quiet_NaN());
  PvqVaeTrainConfig tc;
  tc.epochs = 1;
  REQUIRE_THROWS_AS(train_pvqvae(m, samples, tc), training_error);
}

TEST_CASE("tokenize produces latent spans under the shared boundary rule") {
  SkeletonSpec sk;
  GlossVocab vocab = make_vocab(3, sk, 24);
  RenderParams rp;
  rp.noise_scale = 0.0;
  auto rec = render_sample(vocab, {0, 1}, {10, 6}, 25, rp);
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 26);
  TokenizedSample ts = tokenize_sample(m, rec);
  REQUIRE(ts.latent_len == 4);
  REQUIRE(ts.latent_spans == std::vector<Span>{{0, 2}, {2, 4}});
  REQUIRE(ts.frame_len == 16);
  REQUIRE(ts.glosses == rec.glosses);
  for (Part p : kParts) {
    const auto& toks = ts.tokens[static_cast<std::size_t>(p)];
    REQUIRE(toks.size() == 4);
    for (int t : toks) {
      REQUIRE(t >= 0);
      REQUIRE(t < 16);
    }
  }
}

TEST_CASE("checkpoints round-trip bitwise and reject tampering") {
  SkeletonSpec sk;
  auto m = PvqVae<float>::create(tiny_cfg(), sk, 27);
  auto dir = (std::filesystem::temp_directory_path() / "glosmo_test_pvq_ckpt").string();
  save_pvqvae(m, dir);
  auto loaded = load_pvqvae<float>(dir);
  REQUIRE(loaded.store.size() == m.store.size());
  for (int i = 0; i < m.store.size(); ++i) REQUIRE(loaded.store.value(i) == m.store.value(i));

  Rng rng(28);
  MatF motion = random_motion(rng, 16, sk.total_channels());
  REQUIRE(pvqvae_encode(loaded, Part::body, loaded.part_slice(motion, Part::body)) ==
          pvqvae_encode(m, Part::body, m.part_slice(motion, Part::body)));

  auto ckpt = read_json_file(dir + "/checkpoint.json");
  ckpt["config"]["K"] = 999;
  write_json_file(dir + "/checkpoint.json", ckpt);
  REQUIRE_THROWS_AS(load_pvqvae<float>(dir), corruption_error);
  ckpt["format"] = "other";
  write_json_file(dir + "/checkpoint.json", ckpt);
  REQUIRE_THROWS_AS(load_pvqvae<float>(dir), format_error);
  std::filesystem::remove_all(dir);
  REQUIRE_THROWS_AS(load_pvqvae<float>(dir), dependency_error);
}
