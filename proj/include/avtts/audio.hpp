// Copyright (c) 2026 The avtts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Feature extraction and waveform rendering: STFT, log-mel spectrogram,
// YIN-style F0, frame energy, Griffin-Lim, and an acoustic speaker
// fingerprint. All functions are pure and reentrant.

#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "avtts/rng.hpp"

namespace avtts {

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AudioConfig {
  int sample_rate = 22050;
  int fft_size = 1024;
  int hop = 256;
  int win_length = 1024;
  int mel_bins = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;
  double f0_min = 60.0;
  double f0_max = 500.0;
  double voicing_threshold = 0.45;

  void validate() const {
    if (hop <= 0 || hop >= fft_size) throw AudioError("AudioConfig: hop must be in (0, fft_size)");
    if (win_length > fft_size || win_length <= 0) throw AudioError("AudioConfig: win_length must be in (0, fft_size]");
    if (fmax > sample_rate / 2.0 || fmin < 0 || fmin >= fmax) throw AudioError("AudioConfig: need 0 <= fmin < fmax <= sr/2");
    if (mel_bins <= 0) throw AudioError("AudioConfig: mel_bins must be positive");
    if (f0_min <= 0 || f0_min >= f0_max) throw AudioError("AudioConfig: invalid F0 band");
  }

  int bins() const noexcept { return fft_size / 2 + 1; }
};

// Frame count with centered frames: 1 + floor(n / hop).
inline std::size_t frame_count(std::size_t samples, const AudioConfig& cfg) {
  return 1 + samples / static_cast<std::size_t>(cfg.hop);
}

// Row-major frames x columns matrix.
struct FrameMatrix {
  std::size_t frames = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float& at(std::size_t t, std::size_t c) { return data[t * cols + c]; }
  float at(std::size_t t, std::size_t c) const { return data[t * cols + c]; }
};

// Natural-log mel magnitudes, frames x mel_bins.
using MelSpectrogram = FrameMatrix;

struct FramePitch {
  std::vector<float> hz;
  std::vector<std::uint8_t> voiced;
};

struct FrameEnergy {
  std::vector<float> values;
};

namespace dsp {

using Complex = std::complex<double>;

// Periodic Hann window of `win` samples, zero-padded to `n` and centered.
inline std::vector<double> hann_window(int win, int n) {
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  const int off = (n - win) / 2;
  for (int i = 0; i < win; ++i) w[off + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  return w;
}

inline double hz_to_mel(double f) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return f < min_log_hz ? f / f_sp : min_log_mel + std::log(f / min_log_hz) / logstep;
}

inline double mel_to_hz(double m) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return m < min_log_mel ? m * f_sp : min_log_hz * std::exp(logstep * (m - min_log_mel));
}

// Slaney-scale, area-normalized triangular filters: mel_bins x bins.
inline Eigen::MatrixXd mel_filterbank(const AudioConfig& cfg) {
  const int nb = cfg.bins();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.mel_bins, nb);
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(static_cast<std::size_t>(cfg.mel_bins + 2));
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(pts.size() - 1));
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double f0 = pts[m], f1 = pts[m + 1], f2 = pts[m + 2];
    const double enorm = 2.0 / (f2 - f0);
    for (int k = 0; k < nb; ++k) {
      const double f = double(k) * cfg.sample_rate / cfg.fft_size;
      const double v = std::max(0.0, std::min((f - f0) / (f1 - f0), (f2 - f) / (f2 - f1)));
      w(m, k) = v * enorm;
    }
  }
  return w;
}

// Reflect padding by `pad` on both sides; falls back to zeros when the
// signal is too short to reflect.
inline std::vector<double> center_pad(const std::vector<float>& x, int pad) {
  const std::size_t n = x.size();
  std::vector<double> out(n + 2 * static_cast<std::size_t>(pad), 0.0);
  for (std::size_t i = 0; i < n; ++i) out[pad + i] = x[i];
  if (n > static_cast<std::size_t>(pad)) {
    for (int i = 1; i <= pad; ++i) {
      out[pad - i] = x[static_cast<std::size_t>(i)];
      out[pad + n - 1 + i] = x[n - 1 - static_cast<std::size_t>(i)];
    }
  }
  return out;
}

// Complex half spectra, frames x bins (row-major).
struct Stft {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<Complex> data;
};

inline Stft stft(const std::vector<float>& x, const AudioConfig& cfg) {
  const int n = cfg.fft_size;
  const auto padded = center_pad(x, n / 2);
  const auto window = hann_window(cfg.win_length, n);
  Stft s;
  s.frames = frame_count(x.size(), cfg);
  s.bins = static_cast<std::size_t>(cfg.bins());
  s.data.resize(s.frames * s.bins);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<Complex> spec;
  for (std::size_t t = 0; t < s.frames; ++t) {
    const std::size_t start = t * static_cast<std::size_t>(cfg.hop);
    for (int i = 0; i < n; ++i) frame[i] = padded[start + i] * window[i];
    fft.fwd(spec, frame);
    std::copy_n(spec.begin(), s.bins, s.data.begin() + t * s.bins);
  }
  return s;
}

// Inverse STFT by weighted overlap-add; output has (frames - 1) * hop
// samples (center padding removed).
inline std::vector<double> istft(const Stft& s, const AudioConfig& cfg) {
  const int n = cfg.fft_size;
  const auto window = hann_window(cfg.win_length, n);
  const std::size_t total = (s.frames - 1) * cfg.hop + n;
  std::vector<double> y(total, 0.0), wsum(total, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> spec(s.bins);
  std::vector<double> frame;
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::copy_n(s.data.begin() + t * s.bins, s.bins, spec.begin());
    fft.inv(frame, spec, n);
    const std::size_t start = t * static_cast<std::size_t>(cfg.hop);
    for (int i = 0; i < n; ++i) {
      y[start + i] += frame[i] * window[i];
      wsum[start + i] += window[i] * window[i];
    }
  }
  const std::size_t out_len = (s.frames - 1) * cfg.hop;
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + n / 2;
    out[i] = wsum[j] > 1e-10 ? y[j] / wsum[j] : 0.0;
  }
  return out;
}

inline Eigen::MatrixXd magnitudes(const Stft& s) {
  Eigen::MatrixXd mag(s.bins, s.frames);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t k = 0; k < s.bins; ++k) mag(k, t) = std::abs(s.data[t * s.bins + k]);
  return mag;
}

}  // namespace dsp

inline MelSpectrogram mel_from_magnitudes(const Eigen::MatrixXd& mag, const AudioConfig& cfg) {
  const Eigen::MatrixXd mel = dsp::mel_filterbank(cfg) * mag;
  MelSpectrogram out;
  out.frames = static_cast<std::size_t>(mag.cols());
  out.cols = static_cast<std::size_t>(cfg.mel_bins);
  out.data.resize(out.frames * out.cols);
  for (std::size_t t = 0; t < out.frames; ++t)
    for (std::size_t m = 0; m < out.cols; ++m)
      out.at(t, m) = static_cast<float>(std::log(std::max(mel(long(m), long(t)), cfg.log_floor)));
  return out;
}

inline MelSpectrogram mel_spectrogram(const std::vector<float>& samples, const AudioConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw AudioError("mel_spectrogram: empty audio");
  return mel_from_magnitudes(dsp::magnitudes(dsp::stft(samples, cfg)), cfg);
}

// Per-frame L2 norm of the STFT magnitude.
inline FrameEnergy extract_energy(const std::vector<float>& samples, const AudioConfig& cfg) {
  cfg.validate();
  FrameEnergy e;
  if (samples.empty()) return e;
  const auto s = dsp::stft(samples, cfg);
  e.values.resize(s.frames);
  for (std::size_t t = 0; t < s.frames; ++t) {
    double acc = 0;
    for (std::size_t k = 0; k < s.bins; ++k) acc += std::norm(s.data[t * s.bins + k]);
    e.values[t] = static_cast<float>(std::sqrt(acc));
  }
  return e;
}

namespace dsp {

// Cumulative-mean-normalized difference function over lags [0, max_lag]
// for one analysis window starting at `start`.
inline std::vector<double> yin_cmnd(const std::vector<double>& x, std::size_t start, std::size_t width,
                                    std::size_t max_lag) {
  const std::size_t integ = width - max_lag;
  std::vector<double> d(max_lag + 2, 0.0);
  for (std::size_t tau = 1; tau <= max_lag + 1 && tau < width; ++tau) {
    double acc = 0;
    const double* a = x.data() + start;
    const double* b = a + tau;
    for (std::size_t n = 0; n < integ; ++n) {
      const double diff = a[n] - b[n];
      acc += diff * diff;
    }
    d[tau] = acc;
  }
  std::vector<double> cmnd(d.size(), 1.0);
  double running = 0;
  for (std::size_t tau = 1; tau < d.size(); ++tau) {
    running += d[tau];
    cmnd[tau] = running > 0 ? d[tau] * double(tau) / running : 1.0;
  }
  return cmnd;
}

}  // namespace dsp

// YIN-style F0 per STFT frame. Unvoiced frames are linearly interpolated
// between voiced neighbours (held constant past the ends); a fully unvoiced
// signal gets the band midpoint everywhere.
inline FramePitch extract_f0(const std::vector<float>& samples, const AudioConfig& cfg) {
  cfg.validate();
  const std::size_t frames = frame_count(samples.size(), cfg);
  const std::size_t width = static_cast<std::size_t>(cfg.fft_size);
  const auto min_lag = static_cast<std::size_t>(std::floor(cfg.sample_rate / cfg.f0_max));
  const auto max_lag = static_cast<std::size_t>(std::ceil(cfg.sample_rate / cfg.f0_min));
  if (max_lag + 2 >= width) throw AudioError("extract_f0: analysis window too short for f0_min");

  std::vector<double> x(std::max(samples.size(), width), 0.0);
  std::copy(samples.begin(), samples.end(), x.begin());
  FramePitch out;
  out.hz.assign(frames, 0.0f);
  out.voiced.assign(frames, 0);
  for (std::size_t t = 0; t < frames; ++t) {
    // Window centered on the frame, shifted inward at the signal edges.
    const long center = static_cast<long>(t) * cfg.hop;
    const long start = std::clamp(center - long(width / 2), 0L, long(x.size() - width));
    const auto cmnd = dsp::yin_cmnd(x, static_cast<std::size_t>(start), width, max_lag);
    std::size_t best = min_lag;
    for (std::size_t tau = min_lag; tau <= max_lag; ++tau)
      if (cmnd[tau] < cmnd[best]) best = tau;
    if (cmnd[best] >= cfg.voicing_threshold) continue;
    const double accept = std::min(cfg.voicing_threshold, cmnd[best] + 0.1);
    std::size_t tau = min_lag;
    while (tau < max_lag && cmnd[tau] >= accept) ++tau;
    while (tau < max_lag && cmnd[tau + 1] < cmnd[tau]) ++tau;
    double refined = double(tau);
    if (tau > 1 && tau + 1 < cmnd.size()) {
      const double a = cmnd[tau - 1], b = cmnd[tau], c = cmnd[tau + 1];
      const double denom = a - 2 * b + c;
      if (denom > 1e-12) refined += 0.5 * (a - c) / denom;
    }
    out.hz[t] = static_cast<float>(std::clamp(cfg.sample_rate / refined, cfg.f0_min, cfg.f0_max));
    out.voiced[t] = 1;
  }

  std::vector<std::size_t> voiced_idx;
  for (std::size_t t = 0; t < frames; ++t)
    if (out.voiced[t]) voiced_idx.push_back(t);
  if (voiced_idx.empty()) {
    std::fill(out.hz.begin(), out.hz.end(), static_cast<float>(0.5 * (cfg.f0_min + cfg.f0_max)));
    return out;
  }
  for (std::size_t t = 0; t < voiced_idx.front(); ++t) out.hz[t] = out.hz[voiced_idx.front()];
  for (std::size_t t = voiced_idx.back() + 1; t < frames; ++t) out.hz[t] = out.hz[voiced_idx.back()];
  for (std::size_t i = 0; i + 1 < voiced_idx.size(); ++i) {
    const std::size_t a = voiced_idx[i], b = voiced_idx[i + 1];
    for (std::size_t t = a + 1; t < b; ++t) {
      const double w = double(t - a) / double(b - a);
      out.hz[t] = static_cast<float>((1 - w) * out.hz[a] + w * out.hz[b]);
    }
  }
  return out;
}

// Non-negative least squares min ||W s - m||, s >= 0, column-wise, by
// accelerated projected gradient. W is sparse (filterbank rows overlap only
// their neighbours), so the gradient is applied as W^T (W y - m).
inline Eigen::MatrixXd nnls_columns(const Eigen::MatrixXd& w, const Eigen::MatrixXd& m, int iters = 300) {
  const Eigen::SparseMatrix<double> ws = w.sparseView();
  const Eigen::SparseMatrix<double> wt = ws.transpose();
  // Largest eigenvalue of W^T W by power iteration.
  Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()).normalized();
  double lipschitz = 1.0;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd nv = wt * (ws * v);
    lipschitz = nv.norm();
    if (lipschitz <= 0) break;
    v = nv / lipschitz;
  }
  const double step = 1.0 / std::max(lipschitz, 1e-12);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(w.cols(), m.cols());
  Eigen::MatrixXd y = s;
  double tk = 1.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::MatrixXd next = (y - step * (wt * (ws * y - m))).cwiseMax(0.0);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    y = next + ((tk - 1.0) / tn) * (next - s);
    s = std::move(next);
    tk = tn;
  }
  return s;
}

// Renders a log-mel spectrogram to audio: mel -> linear magnitude by NNLS
// against the filterbank, then `iters` rounds of (fast) Griffin-Lim phase
// recovery from a seeded random phase.
inline std::vector<float> griffin_lim(const MelSpectrogram& mel, const AudioConfig& cfg, int iters = 60,
                                      std::uint64_t seed = 0) {
  cfg.validate();
  if (mel.frames == 0 || mel.cols != static_cast<std::size_t>(cfg.mel_bins))
    throw AudioError("griffin_lim: mel must have " + std::to_string(cfg.mel_bins) + " bins and >= 1 frame");
  Eigen::MatrixXd target(mel.cols, mel.frames);
  for (std::size_t t = 0; t < mel.frames; ++t)
    for (std::size_t m = 0; m < mel.cols; ++m) target(long(m), long(t)) = std::exp(double(mel.at(t, m)));
  const Eigen::MatrixXd mag = nnls_columns(dsp::mel_filterbank(cfg), target);
  if (mel.frames == 1) return {};

  dsp::Stft spec;
  spec.frames = mel.frames;
  spec.bins = static_cast<std::size_t>(cfg.bins());
  spec.data.resize(spec.frames * spec.bins);
  Rng rng(seed);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t k = 0; k < spec.bins; ++k)
      spec.data[t * spec.bins + k] = std::polar(mag(long(k), long(t)), 2.0 * std::numbers::pi * rng.uniform());

  const double momentum = 0.99;
  std::vector<dsp::Complex> prev(spec.data.size(), 0.0);
  std::vector<float> audio;
  for (int it = 0; it < iters; ++it) {
    const auto y = dsp::istft(spec, cfg);
    audio.assign(y.begin(), y.end());
    const auto rebuilt = dsp::stft(audio, cfg);
    for (std::size_t i = 0; i < spec.data.size(); ++i) {
      const dsp::Complex est = rebuilt.data[i];
      dsp::Complex dir = est - (momentum / (1.0 + momentum)) * prev[i];
      prev[i] = est;
      const double a = std::abs(dir);
      const std::size_t k = i % spec.bins, t = i / spec.bins;
      spec.data[i] = a > 1e-16 ? mag(long(k), long(t)) * dir / a : dsp::Complex(mag(long(k), long(t)), 0.0);
    }
  }
  const auto y = dsp::istft(spec, cfg);
  return std::vector<float>(y.begin(), y.end());
}

inline constexpr int kSpeakerEmbeddingDim = 256;
inline constexpr std::uint64_t kFingerprintSeed = 0x5eaced5eedULL;

// 256-d unit vector from per-bin mel mean and standard deviation (each
// block centered across bins) projected by a fixed seeded Gaussian matrix.
inline std::vector<float> speaker_fingerprint(const std::vector<float>& samples, const AudioConfig& cfg,
                                              std::uint64_t seed = kFingerprintSeed) {
  if (samples.size() < static_cast<std::size_t>(cfg.sample_rate / 2))
    throw AudioError("speaker_fingerprint: need at least 0.5 s of audio, got " +
                     std::to_string(double(samples.size()) / cfg.sample_rate) + " s");
  const auto mel = mel_spectrogram(samples, cfg);
  const std::size_t bins = mel.cols;
  std::vector<double> feat(2 * bins, 0.0);
  for (std::size_t m = 0; m < bins; ++m) {
    double mean = 0;
    for (std::size_t t = 0; t < mel.frames; ++t) mean += mel.at(t, m);
    mean /= double(mel.frames);
    double var = 0;
    for (std::size_t t = 0; t < mel.frames; ++t) var += (mel.at(t, m) - mean) * (mel.at(t, m) - mean);
    feat[m] = mean;
    feat[bins + m] = std::sqrt(var / double(mel.frames));
  }
  // Center each block so the shared log-level offset does not dominate.
  for (std::size_t block = 0; block < 2; ++block) {
    double avg = 0;
    for (std::size_t m = 0; m < bins; ++m) avg += feat[block * bins + m];
    avg /= double(bins);
    for (std::size_t m = 0; m < bins; ++m) feat[block * bins + m] -= avg;
  }
  Rng rng(seed);
  std::vector<double> e(kSpeakerEmbeddingDim, 0.0);
  for (std::size_t i = 0; i < feat.size(); ++i)
    for (int j = 0; j < kSpeakerEmbeddingDim; ++j) e[j] += feat[i] * rng.normal();
  double norm = 0;
  for (double v : e) norm += v * v;
  norm = std::sqrt(norm);
  if (norm <= 0) throw AudioError("speaker_fingerprint: degenerate features");
  std::vector<float> out(kSpeakerEmbeddingDim);
  for (int j = 0; j < kSpeakerEmbeddingDim; ++j) out[j] = static_cast<float>(e[j] / norm);
  return out;
}

}  // namespace avtts
