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

// Closed-form test signals and reference measurements.

#pragma once

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "avtts/audio.hpp"

namespace avtts::signals {

inline constexpr double kRate = 22050.0;

inline std::vector<float> sine(double hz, double seconds, double amp) {
  std::vector<float> x(static_cast<std::size_t>(seconds * kRate));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(amp * std::sin(2 * std::numbers::pi * hz * double(i) / kRate));
  return x;
}

// Linear chirp from f0 to f1 over the whole duration.
inline std::vector<float> chirp(double f0, double f1, double seconds, double amp) {
  std::vector<float> x(static_cast<std::size_t>(seconds * kRate));
  const double k = (f1 - f0) / seconds;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = double(i) / kRate;
    x[i] = float(amp * std::sin(2 * std::numbers::pi * (f0 * t + 0.5 * k * t * t)));
  }
  return x;
}

// Sum of `harmonics` partials with 1/h amplitudes, peak-normalized to amp.
inline std::vector<float> harmonic(double hz, double seconds, double amp, int harmonics) {
  std::vector<double> y(static_cast<std::size_t>(seconds * kRate), 0.0);
  for (int h = 1; h <= harmonics; ++h) {
    if (h * hz >= kRate / 2) break;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += std::sin(2 * std::numbers::pi * h * hz * double(i) / kRate) / h;
  }
  double peak = 1e-12;
  for (double v : y) peak = std::max(peak, std::abs(v));
  std::vector<float> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = float(amp * y[i] / peak);
  return x;
}

// Frequency of the largest FFT bin over the whole signal.
inline double dominant_frequency(const std::vector<float>& x, double rate) {
  std::vector<double> buf(x.begin(), x.end());
  std::vector<std::complex<double>> spec;
  Eigen::FFT<double> fft;
  fft.fwd(spec, buf);
  std::size_t best = 1;
  for (std::size_t k = 1; k < buf.size() / 2; ++k)
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  return double(best) * rate / double(buf.size());
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb + 1e-300);
}

// Mean per-frame Pearson correlation over the frames both inputs share.
inline double mean_frame_correlation(const avtts::MelSpectrogram& a, const avtts::MelSpectrogram& b) {
  const std::size_t frames = std::min(a.frames, b.frames);
  double acc = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> ra(a.cols), rb(b.cols);
    for (std::size_t m = 0; m < a.cols; ++m) ra[m] = a.at(t, m), rb[m] = b.at(t, m);
    acc += pearson(ra, rb);
  }
  return acc / double(frames);
}

}  // namespace avtts::signals
