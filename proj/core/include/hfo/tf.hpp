#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

struct TfConfig {
  double f_min = 10.0;   // Hz
  double f_max = 290.0;  // Hz
  int n_freqs = 64;      // log-spaced rows before resize
  int out_size = 64;     // square output
};

// values row 0 holds the highest frequency; time ascends across columns.
struct TFImage {
  Tensor values;                  // (out, out), entries in [0,1]
  std::vector<double> freq_axis;  // Hz, descending to match rows
  std::vector<double> time_axis;  // ms from window start, ascending
  double norm_min = 0.0;          // min-max constants of the log1p image
  double norm_max = 0.0;
};

std::vector<double> log_spaced_freqs(double f_min, double f_max, int n);

// Frequency-domain analytic Morlet bank shared across windows of one length.
struct MorletPlan {
  std::size_t n = 0;    // window length in samples
  std::size_t fft_n = 0;
  std::size_t pad = 0;  // zero samples on each side against wraparound
  double fs = 0.0;
  std::vector<double> freqs;            // ascending
  std::vector<std::vector<double>> filters;  // per freq, gain over fft bins
};

MorletPlan make_morlet_plan(std::size_t window_len, double fs, const TfConfig& cfg);

// Rows follow plan.freqs (ascending); magnitude, not power.
Tensor apply_morlet(const MorletPlan& plan, const std::vector<double>& window);

Tensor morlet_scalogram(const std::vector<double>& window, double fs, double f_min = 10.0,
                        double f_max = 290.0, int n_freqs = 64);

// Corner-aligned bilinear resampling.
Tensor resize_bilinear(const Tensor& m, int out_h, int out_w);

// log1p then per-image min-max to [0,1]; constant images map to zeros.
// freqs come in ascending and end up flipped so row 0 is the top frequency.
TFImage normalize(const Tensor& resized, const std::vector<double>& freqs_ascending,
                  const std::vector<double>& times_ms);

// window samples -> TFImage through the full transform chain.
TFImage window_to_image(const std::vector<double>& window, double fs, const TfConfig& cfg);
TFImage plan_window_to_image(const MorletPlan& plan, const std::vector<double>& window,
                             const TfConfig& cfg);

// P5 8-bit PGM with a norm-constant comment, plus <path>.axes.csv.
void write_tf_pgm(const std::filesystem::path& path, const TFImage& image);

}  // namespace hfo
