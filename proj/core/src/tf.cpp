#include "hfo/tf.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/fft.hpp"

namespace hfo {

static constexpr double kOmega0 = 6.0;  // Morlet cycles

std::vector<double> log_spaced_freqs(double f_min, double f_max, int n) {
  if (n < 2) throw ValidationError("need at least 2 frequencies");
  if (!(f_min > 0.0 && f_min < f_max)) throw ValidationError("need 0 < f_min < f_max");
  std::vector<double> freqs(static_cast<std::size_t>(n));
  const double ratio = std::log(f_max / f_min);
  for (int j = 0; j < n; ++j) {
    freqs[std::size_t(j)] = f_min * std::exp(ratio * double(j) / double(n - 1));
  }
  return freqs;
}

MorletPlan make_morlet_plan(std::size_t window_len, double fs, const TfConfig& cfg) {
  if (window_len == 0) throw ValidationError("empty window");
  if (!(fs > 2.0 * cfg.f_max)) {
    throw ValidationError("sample rate " + format_double(fs) + " Hz violates Nyquist for f_max " +
                          format_double(cfg.f_max) + " Hz");
  }
  MorletPlan plan;
  plan.n = window_len;
  plan.fs = fs;
  plan.freqs = log_spaced_freqs(cfg.f_min, cfg.f_max, cfg.n_freqs);

  const double s_max = kOmega0 * fs / (2.0 * std::numbers::pi * cfg.f_min);
  plan.pad = std::size_t(std::ceil(4.0 * s_max));
  plan.fft_n = next_pow2(window_len + 2 * plan.pad);

  plan.filters.resize(plan.freqs.size());
  for (std::size_t j = 0; j < plan.freqs.size(); ++j) {
    const double s = kOmega0 * fs / (2.0 * std::numbers::pi * plan.freqs[j]);
    auto& gain = plan.filters[j];
    gain.assign(plan.fft_n, 0.0);
    // Positive-frequency Gaussian only: the analytic wavelet kills the
    // negative half, and the factor 2 makes a unit sine peak at height 1.
    for (std::size_t k = 0; k <= plan.fft_n / 2; ++k) {
      const double w = 2.0 * std::numbers::pi * double(k) / double(plan.fft_n);
      const double d = s * w - kOmega0;
      gain[k] = 2.0 * std::exp(-0.5 * d * d);
    }
  }
  return plan;
}

Tensor apply_morlet(const MorletPlan& plan, const std::vector<double>& window) {
  if (window.size() != plan.n) {
    throw ValidationError("window length " + std::to_string(window.size()) +
                          " does not match plan length " + std::to_string(plan.n));
  }
  std::vector<std::complex<double>> spec(plan.fft_n, {0.0, 0.0});
  for (std::size_t i = 0; i < plan.n; ++i) spec[plan.pad + i] = window[i];
  fft(spec, false);

  Tensor out({plan.freqs.size(), plan.n});
  std::vector<std::complex<double>> y(plan.fft_n);
  for (std::size_t j = 0; j < plan.freqs.size(); ++j) {
    const auto& gain = plan.filters[j];
    for (std::size_t k = 0; k < plan.fft_n; ++k) y[k] = spec[k] * gain[k];
    fft(y, true);
    double* row = out.data() + j * plan.n;
    for (std::size_t t = 0; t < plan.n; ++t) row[t] = std::abs(y[plan.pad + t]);
  }
  return out;
}

Tensor morlet_scalogram(const std::vector<double>& window, double fs, double f_min, double f_max,
                        int n_freqs) {
  TfConfig cfg;
  cfg.f_min = f_min;
  cfg.f_max = f_max;
  cfg.n_freqs = n_freqs;
  return apply_morlet(make_morlet_plan(window.size(), fs, cfg), window);
}

Tensor resize_bilinear(const Tensor& m, int out_h, int out_w) {
  if (m.rank() != 2) throw ValidationError("resize expects a matrix");
  if (out_h < 1 || out_w < 1) throw ValidationError("output dims must be positive");
  const std::size_t h = m.dim(0), w = m.dim(1);
  Tensor out({std::size_t(out_h), std::size_t(out_w)});
  for (int r = 0; r < out_h; ++r) {
    const double sy = (out_h == 1 || h == 1) ? 0.0 : double(r) * double(h - 1) / double(out_h - 1);
    const std::size_t y0 = std::min(std::size_t(sy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - double(y0);
    for (int c = 0; c < out_w; ++c) {
      const double sx =
          (out_w == 1 || w == 1) ? 0.0 : double(c) * double(w - 1) / double(out_w - 1);
      const std::size_t x0 = std::min(std::size_t(sx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - double(x0);
      const double top = m[y0 * w + x0] * (1.0 - fx) + m[y0 * w + x1] * fx;
      const double bot = m[y1 * w + x0] * (1.0 - fx) + m[y1 * w + x1] * fx;
      out[std::size_t(r) * std::size_t(out_w) + std::size_t(c)] = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

TFImage normalize(const Tensor& resized, const std::vector<double>& freqs_ascending,
                  const std::vector<double>& times_ms) {
  if (resized.rank() != 2) throw ValidationError("normalize expects a matrix");
  const std::size_t h = resized.dim(0), w = resized.dim(1);
  if (freqs_ascending.size() != h || times_ms.size() != w) {
    throw ValidationError("axis lengths do not match matrix dims");
  }
  if (!resized.all_finite()) throw ValidationError("non-finite value in scalogram");

  std::vector<double> logged(resized.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < resized.size(); ++i) {
    logged[i] = std::log1p(resized[i]);
    lo = std::min(lo, logged[i]);
    hi = std::max(hi, logged[i]);
  }

  TFImage img;
  img.norm_min = lo;
  img.norm_max = hi;
  img.values = Tensor({h, w});
  const double span = hi - lo;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      // Row flip puts the top frequency first.
      double v = (span > 0.0) ? (logged[(h - 1 - r) * w + c] - lo) / span : 0.0;
      img.values[r * w + c] = v;
    }
  }
  img.freq_axis.assign(freqs_ascending.rbegin(), freqs_ascending.rend());
  img.time_axis = times_ms;
  return img;
}

static std::vector<double> resample_axis(const std::vector<double>& axis, int out_n,
                                         bool log_space) {
  std::vector<double> out(static_cast<std::size_t>(out_n));
  const std::size_t n = axis.size();
  for (int i = 0; i < out_n; ++i) {
    const double s =
        (out_n == 1 || n == 1) ? 0.0 : double(i) * double(n - 1) / double(out_n - 1);
    const std::size_t i0 = std::min(std::size_t(s), n - 1);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double f = s - double(i0);
    if (log_space) {
      out[std::size_t(i)] = std::exp(std::log(axis[i0]) * (1.0 - f) + std::log(axis[i1]) * f);
    } else {
      out[std::size_t(i)] = axis[i0] * (1.0 - f) + axis[i1] * f;
    }
  }
  return out;
}

TFImage plan_window_to_image(const MorletPlan& plan, const std::vector<double>& window,
                             const TfConfig& cfg) {
  Tensor raw = apply_morlet(plan, window);
  Tensor resized = resize_bilinear(raw, cfg.out_size, cfg.out_size);
  std::vector<double> sample_times(plan.n);
  for (std::size_t t = 0; t < plan.n; ++t) sample_times[t] = double(t) / plan.fs * 1000.0;
  std::vector<double> freqs = resample_axis(plan.freqs, cfg.out_size, true);
  std::vector<double> times = resample_axis(sample_times, cfg.out_size, false);
  return normalize(resized, freqs, times);
}

TFImage window_to_image(const std::vector<double>& window, double fs, const TfConfig& cfg) {
  return plan_window_to_image(make_morlet_plan(window.size(), fs, cfg), window, cfg);
}

void write_tf_pgm(const std::filesystem::path& path, const TFImage& image) {
  const std::size_t h = image.values.dim(0), w = image.values.dim(1);
  std::string out = "P5\n# norm_min=" + format_double(image.norm_min) +
                    " norm_max=" + format_double(image.norm_max) + "\n" + std::to_string(w) + " " +
                    std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    long v = std::lround(std::clamp(image.values[i], 0.0, 1.0) * 255.0);
    out.push_back(char(static_cast<unsigned char>(v)));
  }
  write_file_atomic(path, out);

  CsvTable axes;
  axes.header = {"index", "freq_hz", "time_ms"};
  for (std::size_t i = 0; i < image.freq_axis.size(); ++i) {
    axes.rows.push_back({std::to_string(i), format_double(image.freq_axis[i]),
                         format_double(image.time_axis[i])});
  }
  std::filesystem::path sidecar = path;
  sidecar += ".axes.csv";
  write_csv(sidecar, axes);
}

}  // namespace hfo
