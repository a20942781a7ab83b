#pragma once

// Signal kernels: log-mel extraction, autocorrelation F0, phone-level pitch,
// SSIM, windowed-sinc resampling, alignment files, PCM WAV I/O.

#include <complex>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "abtts/tensor.hpp"

namespace abtts::dsp {

inline constexpr int kMelSampleRate = 16000;
inline constexpr double kFrameSeconds = 0.050;
inline constexpr double kHopSeconds = 0.0125;
inline constexpr int kNumMels = 80;
inline constexpr double kLogFloor = 1e-5;

enum class Padding { none, reflect_center };

struct MelConfig {
  int sample_rate = kMelSampleRate;
  int n_fft = 800;  // 50 ms at 16 kHz
  int hop = 200;    // 12.5 ms at 16 kHz
  int n_mels = kNumMels;
  double fmin = 0.0;
  double fmax = 8000.0;
  Padding padding = Padding::reflect_center;
};

/// Row-major [n_frames x n_mels] log-mel energies.
struct MelSpec {
  int n_frames = 0;
  int n_mels = kNumMels;
  int sample_rate = kMelSampleRate;
  double frame_len_s = kFrameSeconds;
  double hop_s = kHopSeconds;
  Padding padding = Padding::reflect_center;
  std::vector<double> values;

  double at(int frame, int mel) const { return values[static_cast<std::size_t>(frame) * n_mels + mel]; }
};

/// floor((n + 2*pad - n_fft) / hop) + 1, pad = n_fft/2 under reflect_center.
int frame_count(int n_samples, const MelConfig& cfg = {});

/// Triangular mel filters, each normalised to unit area in Hz: row-major
/// [n_mels x (n_fft/2 + 1)].
std::vector<double> mel_filterbank(const MelConfig& cfg = {});
/// Centre frequency (Hz) of each mel band.
std::vector<double> mel_band_centres(const MelConfig& cfg = {});

using Complex = std::complex<double>;

/// [n_frames x (n_fft/2 + 1)] complex spectra of Hann-windowed frames.
std::vector<Complex> stft(std::span<const double> wave, const MelConfig& cfg);
/// Weighted overlap-add inverse of `stft`, trimmed to `n_samples`.
std::vector<double> istft(std::span<const Complex> spec, int n_frames, int n_samples, const MelConfig& cfg);
std::vector<double> hann_window(int n);
/// Padding, framing and the Hann window of `stft` as one sparse operator:
/// [n_samples] -> [n_frames * n_fft]. Used to backpropagate through the mel.
SparseMap frame_map(int n_samples, const MelConfig& cfg = {});

/// Waves at other rates are resampled to cfg.sample_rate first.
MelSpec compute_mel(std::span<const double> wave, int sample_rate, const MelConfig& cfg = {});

// ---------------------------------------------------------------------------

struct F0Config {
  double min_hz = 50.0;
  double max_hz = 600.0;
  double voicing_threshold = 0.6;
  double silence_rms = 1e-4;
};

/// Per-frame F0 in Hz, 0 for unvoiced, on the mel hop grid.
struct PitchTrack {
  std::vector<double> f0;
  double hop_s = kHopSeconds;
};

PitchTrack extract_f0(std::span<const double> wave, int sample_rate, const F0Config& cfg = {}, const MelConfig& mel = {});

struct PhonePitch {
  std::vector<double> log_f0;  // mean log-Hz over voiced frames, 0 if none
  std::vector<bool> voiced;
};

PhonePitch phone_pitch(const PitchTrack& track, std::span<const int> durations);

/// Speaker-level statistics over voiced phones.
struct PitchStats {
  double mean = 0.0;
  double stddev = 1.0;
};
PitchStats fit_pitch_stats(std::span<const PhonePitch> phones);
/// Normalised values; unvoiced phones stay 0.
std::vector<double> normalize_pitch(const PhonePitch& p, const PitchStats& stats);

// ---------------------------------------------------------------------------

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Normalised 2-D Gaussian (side x side) used by both SSIM routes.
std::vector<double> gaussian_window(int side, double sigma);
/// Window side actually used for an image: the configured size, shrunk to
/// the largest odd value that fits.
int ssim_window_side(int rows, int cols, const SsimConfig& cfg = {});
double ssim(std::span<const double> a, std::span<const double> b, int rows, int cols, const SsimConfig& cfg = {});
double ssim(const MelSpec& a, const MelSpec& b, const SsimConfig& cfg = {});

// ---------------------------------------------------------------------------

/// Polyphase Kaiser-windowed sinc resampler for rational rate ratios.
class Resampler {
 public:
  Resampler(int from_hz, int to_hz, int zero_crossings = 32);
  int output_length(int n_in) const;
  std::vector<double> apply(std::span<const double> x) const;
  /// The same filter as a fixed sparse operator for autograd.
  SparseMap sparse_map(int n_in) const;

 private:
  int from_, to_, up_, down_, half_width_;
  std::vector<std::vector<double>> phases_;  // [up][2*half_width]

  template <typename F>
  void for_each_output(int n_in, F&& f) const;
};

std::vector<double> resample(std::span<const double> wave, int from_hz, int to_hz);

// ---------------------------------------------------------------------------

struct AlignmentRow {
  std::string phone;
  int start_frame = 0;
  int end_frame = 0;
};

using Alignment = std::map<std::string, std::vector<AlignmentRow>>;

/// `utt_id<TAB>phone<TAB>start_frame<TAB>end_frame`; rows of one utterance
/// must start at frame 0 and be contiguous.
Alignment load_alignment(const std::string& path);
void write_alignment(const std::string& path, const Alignment& alignment);
std::vector<int> alignment_durations(const std::vector<AlignmentRow>& rows);
/// Uniformly random composition of n_frames into n_phones parts, each >= 1.
std::vector<int> synth_alignment(int n_phones, int n_frames, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct Wave {
  std::vector<double> samples;
  int sample_rate = 0;
};

/// PCM 16-bit mono; multi-channel input is averaged.
Wave read_wav(const std::string& path);
void write_wav(const std::string& path, std::span<const double> samples, int sample_rate);
std::vector<std::uint8_t> encode_wav(std::span<const double> samples, int sample_rate);

}  // namespace abtts::dsp
