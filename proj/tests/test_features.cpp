#include "doctest.h"

#include <cmath>
#include <complex>
#include <cstdio>

#include "sbs/features.hpp"

using namespace sbs;

namespace {

Waveform sine_wave(double freq_hz, double seconds, int rate = 16000,
                   double amplitude = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  const Index n = static_cast<Index>(seconds * rate);
  w.samples.resize(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t)
    w.samples[static_cast<std::size_t>(t)] =
        amplitude * std::sin(2.0 * 3.14159265358979323846 * freq_hz * t / rate);
  return w;
}

Waveform noisy_tone(std::uint64_t seed, double seconds = 1.0) {
  Waveform w = sine_wave(700.0, seconds);
  RandomStream rng(seed);
  for (auto& s : w.samples) s = 0.6 * s + 0.05 * rng.normal();
  return w;
}

}  // namespace

TEST_CASE("wav files round-trip") {
  Waveform w = noisy_tone(4);
  const std::string p1 = "/tmp/sbs_wav_a.wav", p2 = "/tmp/sbs_wav_b.wav";
  write_wav(p1, w);
  Waveform r1 = read_wav(p1);
  CHECK(r1.sample_rate == w.sample_rate);
  REQUIRE(r1.samples.size() == w.samples.size());
  // second pass is exact: values already sit on the PCM grid
  write_wav(p2, r1);
  Waveform r2 = read_wav(p2);
  for (std::size_t i = 0; i < r1.samples.size(); ++i)
    CHECK(r1.samples[i] == r2.samples[i]);
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  CHECK_THROWS_AS(read_wav("/tmp/sbs_missing.wav"), IoError);
}

TEST_CASE("spectrogram: one second at 16 kHz yields 98 frames of 257 bins") {
  Waveform w = sine_wave(440.0, 1.0);
  auto spec = spectrogram(w);
  CHECK(spec.dims() == Dims{98, 257});
}

TEST_CASE("spectrogram: silence hits the log floor everywhere") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  auto spec = spectrogram(w);
  const double expect = std::log(1e-10);
  for (Index i = 0; i < spec.size(); ++i)
    CHECK(spec[i] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("spectrogram: a 1 kHz sine peaks at bin 32") {
  Waveform w = sine_wave(1000.0, 0.5);
  auto spec = spectrogram(w);
  for (Index t = 0; t < spec.dim(0); ++t) {
    Index argmax = 0;
    for (Index k = 1; k < 257; ++k)
      if (spec.at({t, k}) > spec.at({t, argmax})) argmax = k;
    CHECK(argmax == 32);  // round(1000 * 512 / 16000)
  }
}

TEST_CASE("spectrogram agrees with a reference DFT loop") {
  Waveform w = noisy_tone(9, 0.1);
  auto spec = spectrogram(w);

  // frame 3, recomputed with an explicit windowed DFT
  const Index t = 3, window = 400, hop = 160, fft = 512;
  for (Index k : {0, 1, 17, 32, 100, 256}) {
    std::complex<double> acc(0.0, 0.0);
    for (Index n = 0; n < window; ++n) {
      const double ham =
          0.54 - 0.46 * std::cos(2.0 * 3.14159265358979323846 * n / double(window - 1));
      const double x = w.samples[static_cast<std::size_t>(t * hop + n)] * ham;
      const double ang = -2.0 * 3.14159265358979323846 * double(k) * double(n) / double(fft);
      acc += x * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    const double expect = std::log(std::abs(acc) + 1e-10);
    CHECK(spec.at({t, k}) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("spectrogram: too-short waveform names the minimum length") {
  Waveform w = sine_wave(440.0, 0.01);  // 160 samples < one 400-sample window
  try {
    spectrogram(w);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("400") != std::string::npos);
  }
}

TEST_CASE("cmvn normalizes every bin") {
  RandomStream rng(12);
  auto spec = Tensor<double>::randn({50, 7}, rng);
  spec.raw() += 3.0;
  auto out = cmvn(spec);
  for (Index f = 0; f < 7; ++f) {
    double mean = 0.0, var = 0.0;
    for (Index t = 0; t < 50; ++t) mean += out.at({t, f});
    mean /= 50.0;
    for (Index t = 0; t < 50; ++t) {
      const double d = out.at({t, f}) - mean;
      var += d * d;
    }
    const double stddev = std::sqrt(var / 50.0);
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(stddev - 1.0) <= 1e-6);
  }
}

TEST_CASE("cmvn: constant bins collapse to zero") {
  auto spec = Tensor<double>::full({10, 3}, 2.5);
  auto out = cmvn(spec);
  CHECK((out.raw() == 0.0).all());
}

TEST_CASE("cmvn is idempotent") {
  RandomStream rng(13);
  auto spec = Tensor<double>::randn({40, 5}, rng);
  auto once = cmvn(spec);
  auto twice = cmvn(once);
  for (Index i = 0; i < once.size(); ++i)
    CHECK(std::abs(once[i] - twice[i]) <= 1e-6);
}

TEST_CASE("cmvn rejects single-frame utterances") {
  CHECK_THROWS_AS(cmvn(Tensor<double>::zeros({1, 257})), ValueError);
}

TEST_CASE("splice: 10 left + self + 5 right context with edge replication") {
  // ramp spectrogram: frame t holds the constant t
  const Index T = 30, F = 4;
  auto spec = Tensor<double>::zeros({T, F});
  for (Index t = 0; t < T; ++t)
    for (Index f = 0; f < F; ++f) spec.at({t, f}) = double(t);

  auto out = splice(spec);
  CHECK(out.dims() == Dims{T, 16, F});
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < 16; ++j) {
      const Index src = std::min(T - 1, std::max(Index(0), t - 10 + j));
      CHECK(out.at({t, j, 0}) == double(src));
    }

  auto single = splice(Tensor<double>::full({1, F}, 3.5));
  CHECK(single.dims() == Dims{1, 16, F});
  CHECK((single.raw() == 3.5).all());
}

TEST_CASE("downsample keeps every eighth spliced frame") {
  RandomStream rng(14);
  auto seq = Tensor<double>::randn({98, 2, 3}, rng);
  auto kept = downsample_frames(seq, 8);
  CHECK(kept.dim(0) == 13);  // ceil(98/8)
  for (Index i = 0; i < 13; ++i)
    for (Index j = 0; j < 6; ++j)
      CHECK(kept[i * 6 + j] == seq[i * 8 * 6 + j]);

  auto same = downsample_frames(seq, 1);
  CHECK((same.raw() == seq.raw()).all());
  CHECK_THROWS_AS(downsample_frames(seq, 0), ValueError);
}

TEST_CASE("full pipeline: shapes, determinism, scale invariance") {
  Waveform w = noisy_tone(21);
  FeatureSequence a = make_features(w);
  CHECK(a.frames.dim(0) == 13);
  CHECK(a.frames.dim(1) == 16);
  CHECK(a.frames.dim(2) == 257);
  CHECK(a.frame_period == doctest::Approx(0.08));

  FeatureSequence b = make_features(w);
  CHECK((a.frames.raw() == b.frames.raw()).all());  // bitwise determinism

  Waveform scaled = w;
  for (auto& s : scaled.samples) s *= 3.7;
  FeatureSequence c = make_features(scaled);
  for (Index i = 0; i < a.frames.size(); ++i)
    CHECK(std::abs(a.frames[i] - c.frames[i]) <= 1e-6);
}

TEST_CASE("feature files are rank-3 f32 containers") {
  Waveform w = noisy_tone(22);
  FeatureSequence fs = make_features(w);
  const std::string path = "/tmp/sbs_feat_test.feat";
  save_features(path, fs);
  auto back = load_features(path);
  CHECK(back.dims() == fs.frames.dims());
  for (Index i = 0; i < back.size(); ++i)
    CHECK(back[i] == static_cast<float>(fs.frames[i]));
  std::remove(path.c_str());

  write_tensor("/tmp/sbs_feat_bad.feat", Tensor<float>::zeros({4, 4}));
  CHECK_THROWS_AS(load_features("/tmp/sbs_feat_bad.feat"), IoError);
  std::remove("/tmp/sbs_feat_bad.feat");
}
