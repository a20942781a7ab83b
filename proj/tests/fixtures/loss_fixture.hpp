#pragma once

// Random composite-loss fixtures and a loop-based reference for every term.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "acoustic_items.hpp"
#include "abtts/dsp.hpp"
#include "abtts/training.hpp"

namespace abtts::testing {

inline Tensor random3(int B, int L, int D, std::mt19937_64& rng, double lo, double hi) {
  return reshape(random_matrix(B * L, D, rng, lo, hi), {B, L, D});
}

struct LossFixture {
  acoustic::TrainOutput pred;
  training::LossTargets targets;
};

/// Predictions and targets of random shapes, garbage in padded positions.
inline LossFixture random_loss_fixture(std::mt19937_64& rng, int n_blocks) {
  std::uniform_int_distribution<int> bd(1, 3), nd(1, 6), td(1, 14), md(1, 9), sd(1, 5);
  const int B = bd(rng), M = md(rng), S = sd(rng), P = sd(rng);
  LossFixture f;
  for (int b = 0; b < B; ++b) {
    f.targets.phone_lengths.push_back(nd(rng));
    f.targets.frame_lengths.push_back(td(rng));
  }
  const int N = *std::max_element(f.targets.phone_lengths.begin(), f.targets.phone_lengths.end());
  const int T = *std::max_element(f.targets.frame_lengths.begin(), f.targets.frame_lengths.end());
  f.targets.mel = random3(B, T, M, rng, -8, 2);
  f.targets.pitch = random_matrix(B, N, rng, -1, 1);
  f.targets.log_duration = random_matrix(B, N, rng, 0, 2);
  for (int k = 0; k < n_blocks; ++k) f.pred.mel_blocks.push_back(random3(B, T, M, rng, -8, 2));
  f.pred.pitch_pred = random_matrix(B, N, rng, -1, 1);
  f.pred.log_duration_pred = random_matrix(B, N, rng, 0, 2);
  f.pred.gst_pred = random_matrix(B, S, rng, -1, 1);
  f.pred.gst_ref = random_matrix(B, S, rng, -1, 1);
  f.pred.prosody_pred = random3(B, N, P, rng, -1, 1);
  f.pred.prosody_ref = random3(B, N, P, rng, -1, 1);
  f.pred.phone_lengths = f.targets.phone_lengths;
  f.pred.frame_lengths = f.targets.frame_lengths;
  return f;
}

/// Masked mean |a - b| over the first len[b] rows of each item of [B, L, D].
inline double naive_l1(const Tensor& a, const Tensor& t, const std::vector<int>& len) {
  const int B = a.dim(0), L = a.dim(1), D = a.numel() / (B * L);
  const auto av = a.values(), tv = t.values();
  double s = 0.0, n = 0.0;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < len[b]; ++i)
      for (int j = 0; j < D; ++j) {
        const std::size_t k = (static_cast<std::size_t>(b) * L + i) * D + j;
        s += std::abs(av[k] - tv[k]);
        n += 1.0;
      }
  return s / n;
}

struct NaiveLoss {
  double l_gst, l_phone, l_pitch, l_dur, l_mel, l_ssim;
};

inline NaiveLoss naive_loss(const LossFixture& f) {
  NaiveLoss o{};
  const auto& p = f.pred;
  const auto& t = f.targets;
  const int B = t.mel.dim(0), T = t.mel.dim(1), M = t.mel.dim(2);
  o.l_gst = naive_l1(reshape(p.gst_pred, {B, 1, p.gst_pred.dim(1)}), reshape(p.gst_ref, {B, 1, p.gst_ref.dim(1)}),
                     std::vector<int>(B, 1));
  o.l_phone = naive_l1(p.prosody_pred, p.prosody_ref, t.phone_lengths);
  const int N = t.pitch.dim(1);
  o.l_pitch = naive_l1(reshape(p.pitch_pred, {B, N, 1}), reshape(t.pitch, {B, N, 1}), t.phone_lengths);
  o.l_dur = naive_l1(reshape(p.log_duration_pred, {B, N, 1}), reshape(t.log_duration, {B, N, 1}), t.phone_lengths);
  o.l_mel = 0.0;
  for (const auto& m : p.mel_blocks) o.l_mel += naive_l1(m, t.mel, t.frame_lengths);
  double s = 0.0;
  const auto pv = p.mel_blocks.back().values(), tv = t.mel.values();
  for (int b = 0; b < B; ++b) {
    const int Tb = t.frame_lengths[b];
    const auto off = static_cast<std::ptrdiff_t>(b) * T * M;
    s += dsp::ssim(std::span<const double>(pv.data() + off, static_cast<std::size_t>(Tb) * M),
                   std::span<const double>(tv.data() + off, static_cast<std::size_t>(Tb) * M), Tb, M);
  }
  o.l_ssim = 1.0 - s / B;
  return o;
}

}  // namespace abtts::testing
