#pragma once

#include <string>
#include <vector>

#include "sbs/tensor.hpp"

namespace sbs {

/// PCM audio decoded to reals in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;
};

/// 16-bit PCM mono WAV (canonical RIFF form).
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

/// Log-magnitude spectrogram: Hamming-windowed frames of `window_ms` every
/// `hop_ms`, zero-padded to `fft_size`, magnitude of the non-negative
/// frequency bins, log-floored at 1e-10. Output is [T0, fft_size/2 + 1].
Tensor<double> spectrogram(const Waveform& w, double window_ms = 25.0,
                           double hop_ms = 10.0, Index fft_size = 512);

/// Per-utterance mean/variance normalization of every spectral bin.
Tensor<double> cmvn(const Tensor<double>& spec);

/// Stacks [left + 1 + right] consecutive frames around each frame,
/// replicating the edge frames at the boundaries: [T0,F] -> [T0, L+1+R, F].
Tensor<double> splice(const Tensor<double>& spec, Index left = 10, Index right = 5);

/// Keeps spliced frames at indices 0, factor, 2*factor, ...
Tensor<double> downsample_frames(const Tensor<double>& seq, Index factor = 8);

/// Spliced, downsampled feature frames plus their period in seconds.
struct FeatureSequence {
  Tensor<double> frames;  // [T, 16, 257]
  double frame_period = 0.08;
};

/// Full chain: spectrogram, CMVN, splicing, temporal downsampling.
FeatureSequence make_features(const Waveform& w);

/// Feature files are rank-3 tensor containers in the 32-bit interchange dtype.
void save_features(const std::string& path, const FeatureSequence& fs);
Tensor<float> load_features(const std::string& path);

}  // namespace sbs
