#include "sbs/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace sbs {

namespace {

constexpr double kLogFloor = 1e-10;

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (is.gcount() != 4) throw IoError(str("truncated WAV: ", path));
  return v;
}

std::uint16_t read_u16(std::istream& is, const std::string& path) {
  std::uint16_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 2);
  if (is.gcount() != 2) throw IoError(str("truncated WAV: ", path));
  return v;
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open for reading: ", path));

  char tag[4];
  is.read(tag, 4);
  if (is.gcount() != 4 || std::memcmp(tag, "RIFF", 4) != 0)
    throw IoError(str("not a RIFF file: ", path));
  read_u32(is, path);  // riff size
  is.read(tag, 4);
  if (is.gcount() != 4 || std::memcmp(tag, "WAVE", 4) != 0)
    throw IoError(str("not a WAVE file: ", path));

  Waveform w;
  bool have_fmt = false;
  std::vector<std::int16_t> pcm;
  while (is.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(is, path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const std::uint16_t format = read_u16(is, path);
      const std::uint16_t channels = read_u16(is, path);
      const std::uint32_t rate = read_u32(is, path);
      read_u32(is, path);  // byte rate
      read_u16(is, path);  // block align
      const std::uint16_t bits = read_u16(is, path);
      if (format != 1 || channels != 1 || bits != 16)
        throw IoError(str("unsupported WAV encoding in ", path,
                          " (need 16-bit PCM mono, got format=", format,
                          " channels=", channels, " bits=", bits, ")"));
      w.sample_rate = static_cast<int>(rate);
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      pcm.resize(chunk_size / 2);
      is.read(reinterpret_cast<char*>(pcm.data()),
              static_cast<std::streamsize>(pcm.size() * 2));
      if (is.gcount() != static_cast<std::streamsize>(pcm.size() * 2))
        throw IoError(str("truncated WAV data in ", path));
      if (chunk_size % 2) is.seekg(1, std::ios::cur);
    } else {
      is.seekg(chunk_size + (chunk_size % 2), std::ios::cur);
    }
  }
  if (!have_fmt || pcm.empty())
    throw IoError(str("missing fmt/data chunk in ", path));
  w.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) w.samples[i] = pcm[i] / 32768.0;
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str("cannot open for writing: ", path));

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };

  os.write("RIFF", 4);
  u32(36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(static_cast<std::uint32_t>(w.sample_rate));
  u32(static_cast<std::uint32_t>(w.sample_rate * 2));
  u16(2);
  u16(16);
  os.write("data", 4);
  u32(data_bytes);
  for (double s : w.samples) {
    // mirror the decoder's /32768 scale so decode-encode is a fixed point
    long v = std::lrint(std::min(1.0, std::max(-1.0, s)) * 32768.0);
    v = std::min(32767L, std::max(-32768L, v));
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  if (!os) throw IoError(str("short write to ", path));
}

Tensor<double> spectrogram(const Waveform& w, double window_ms, double hop_ms,
                           Index fft_size) {
  if (w.sample_rate <= 0) throw ValueError("spectrogram: sample rate must be positive");
  const Index window = static_cast<Index>(std::lround(w.sample_rate * window_ms / 1000.0));
  const Index hop = static_cast<Index>(std::lround(w.sample_rate * hop_ms / 1000.0));
  if (window < 2 || hop < 1)
    throw ValueError("spectrogram: window and hop too small at this sample rate");
  if (window > fft_size)
    throw ValueError(str("spectrogram: window of ", window,
                         " samples exceeds fft size ", fft_size));
  const Index len = static_cast<Index>(w.samples.size());
  if (len < window)
    throw ValueError(str("spectrogram: waveform of ", len,
                         " samples is shorter than one window (minimum ", window,
                         " samples)"));

  const Index frames = 1 + (len - window) / hop;
  const Index bins = fft_size / 2 + 1;

  std::vector<double> hamming(static_cast<std::size_t>(window));
  for (Index n = 0; n < window; ++n)
    hamming[static_cast<std::size_t>(n)] =
        0.54 - 0.46 * std::cos(2.0 * 3.14159265358979323846 * double(n) / double(window - 1));

  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(fft_size));
  std::vector<std::complex<double>> spec_line;

  Tensor<double> out = Tensor<double>::zeros({frames, bins});
  for (Index t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const double* src = w.samples.data() + t * hop;
    for (Index n = 0; n < window; ++n)
      buf[static_cast<std::size_t>(n)] = src[n] * hamming[static_cast<std::size_t>(n)];
    fft.fwd(spec_line, buf);
    for (Index k = 0; k < bins; ++k)
      out.at({t, k}) = std::log(std::abs(spec_line[static_cast<std::size_t>(k)]) + kLogFloor);
  }
  return out;
}

Tensor<double> cmvn(const Tensor<double>& spec) {
  if (spec.rank() != 2)
    throw ShapeError(str("cmvn: expected [T,F], got ", dims_to_string(spec.dims())));
  const Index T = spec.dim(0), F = spec.dim(1);
  if (T < 2)
    throw ValueError(str("cmvn: degenerate utterance with ", T,
                         " frame(s); need at least 2"));
  Tensor<double> out = Tensor<double>::zeros(spec.dims());
  for (Index f = 0; f < F; ++f) {
    double sum = 0.0, sq = 0.0;
    for (Index t = 0; t < T; ++t) sum += spec.at({t, f});
    const double mean = sum / double(T);
    for (Index t = 0; t < T; ++t) {
      const double d = spec.at({t, f}) - mean;
      sq += d * d;
    }
    const double stddev = std::sqrt(sq / double(T));
    for (Index t = 0; t < T; ++t)
      out.at({t, f}) = (spec.at({t, f}) - mean) / (stddev + kLogFloor);
  }
  return out;
}

Tensor<double> splice(const Tensor<double>& spec, Index left, Index right) {
  if (spec.rank() != 2)
    throw ShapeError(str("splice: expected [T,F], got ", dims_to_string(spec.dims())));
  if (left < 0 || right < 0) throw ValueError("splice: context must be non-negative");
  const Index T = spec.dim(0), F = spec.dim(1);
  if (T < 1) throw ValueError("splice: empty spectrogram");
  const Index ctx = left + 1 + right;
  Tensor<double> out = Tensor<double>::zeros({T, ctx, F});
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < ctx; ++j) {
      Index src = t - left + j;
      src = std::min(T - 1, std::max(Index(0), src));  // edge replication
      out.raw().segment((t * ctx + j) * F, F) = spec.raw().segment(src * F, F);
    }
  return out;
}

Tensor<double> downsample_frames(const Tensor<double>& seq, Index factor) {
  if (factor < 1) throw ValueError(str("downsample: factor must be >= 1, got ", factor));
  if (seq.rank() < 1) throw ShapeError("downsample: rank-0 tensor");
  const Index T = seq.dim(0);
  const Index kept = (T + factor - 1) / factor;
  const Index stride = seq.size() / T;
  Dims od = seq.dims();
  od[0] = kept;
  Tensor<double> out = Tensor<double>::zeros(od);
  for (Index i = 0; i < kept; ++i)
    out.raw().segment(i * stride, stride) = seq.raw().segment(i * factor * stride, stride);
  return out;
}

FeatureSequence make_features(const Waveform& w) {
  FeatureSequence fs;
  fs.frames = downsample_frames(splice(cmvn(spectrogram(w))));
  fs.frame_period = 0.01 * 8;
  return fs;
}

void save_features(const std::string& path, const FeatureSequence& fs) {
  write_tensor(path, fs.frames, TensorDType::F32);
}

Tensor<float> load_features(const std::string& path) {
  Tensor<float> t = read_tensor<float>(path);
  if (t.rank() != 3)
    throw IoError(str("feature file ", path, " is not rank 3: ",
                      dims_to_string(t.dims())));
  return t;
}

}  // namespace sbs
