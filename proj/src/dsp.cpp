#include "abtts/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "abtts/error.hpp"

namespace abtts::dsp {

namespace {

struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW planning is not thread-safe; execution with new-array calls is.
const FftPlans& plans_for(int n) {
  static std::mutex mu;
  static std::map<int, FftPlans> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_1d(n, out, in, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  return cache.emplace(n, p).first->second;
}

struct FftBuffers {
  explicit FftBuffers(int n) : real(fftw_alloc_real(n)), spec(fftw_alloc_complex(n / 2 + 1)) {}
  ~FftBuffers() {
    fftw_free(real);
    fftw_free(spec);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;
  double* real;
  fftw_complex* spec;
};

int reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<int>(i < n ? i : period - i);
}

int pad_of(const MelConfig& cfg) { return cfg.padding == Padding::reflect_center ? cfg.n_fft / 2 : 0; }

std::vector<double> padded_signal(std::span<const double> wave, const MelConfig& cfg) {
  const int pad = pad_of(cfg);
  const long n = static_cast<long>(wave.size());
  std::vector<double> out(wave.size() + 2 * static_cast<std::size_t>(pad));
  for (long i = 0; i < static_cast<long>(out.size()); ++i) out[i] = wave[reflect_index(i - pad, n)];
  return out;
}

}  // namespace

SparseMap frame_map(int n_samples, const MelConfig& cfg) {
  const int n_frames = frame_count(n_samples, cfg);
  if (n_frames < 1) throw DataError("frame_map: " + std::to_string(n_samples) + " samples give no frames");
  const int pad = pad_of(cfg);
  const auto win = hann_window(cfg.n_fft);
  SparseMap m;
  m.in_len = n_samples;
  m.out_len = n_frames * cfg.n_fft;
  m.row_start.reserve(m.out_len + 1);
  m.row_start.push_back(0);
  for (int f = 0; f < n_frames; ++f)
    for (int i = 0; i < cfg.n_fft; ++i) {
      const long src = static_cast<long>(f) * cfg.hop + i - pad;
      m.idx.push_back(reflect_index(src, n_samples));
      m.weight.push_back(win[i]);
      m.row_start.push_back(static_cast<int>(m.idx.size()));
    }
  return m;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> mel_points(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) pts[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  return pts;
}

}  // namespace

int frame_count(int n_samples, const MelConfig& cfg) {
  const int padded = n_samples + 2 * pad_of(cfg);
  if (padded < cfg.n_fft) return 0;
  return (padded - cfg.n_fft) / cfg.hop + 1;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

std::vector<double> mel_filterbank(const MelConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const auto pts = mel_points(cfg);
  std::vector<double> fb(static_cast<std::size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = pts[m], centre = pts[m + 1], right = pts[m + 2];
    const double height = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > left && f <= centre) w = (f - left) / (centre - left);
      else if (f > centre && f < right) w = (right - f) / (right - centre);
      fb[static_cast<std::size_t>(m) * bins + k] = w * height;
    }
  }
  return fb;
}

std::vector<double> mel_band_centres(const MelConfig& cfg) {
  const auto pts = mel_points(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

std::vector<Complex> stft(std::span<const double> wave, const MelConfig& cfg) {
  const int n_frames = frame_count(static_cast<int>(wave.size()), cfg);
  const int bins = cfg.n_fft / 2 + 1;
  const auto x = padded_signal(wave, cfg);
  const auto win = hann_window(cfg.n_fft);
  const FftPlans& plans = plans_for(cfg.n_fft);
  FftBuffers buf(cfg.n_fft);
  std::vector<Complex> out(static_cast<std::size_t>(n_frames) * bins);
  for (int f = 0; f < n_frames; ++f) {
    const double* src = x.data() + static_cast<std::size_t>(f) * cfg.hop;
    for (int i = 0; i < cfg.n_fft; ++i) buf.real[i] = src[i] * win[i];
    fftw_execute_dft_r2c(plans.forward, buf.real, buf.spec);
    for (int k = 0; k < bins; ++k) out[static_cast<std::size_t>(f) * bins + k] = {buf.spec[k][0], buf.spec[k][1]};
  }
  return out;
}

std::vector<double> istft(std::span<const Complex> spec, int n_frames, int n_samples, const MelConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const int pad = pad_of(cfg);
  const auto win = hann_window(cfg.n_fft);
  const FftPlans& plans = plans_for(cfg.n_fft);
  FftBuffers buf(cfg.n_fft);
  const std::size_t total = static_cast<std::size_t>(n_frames - 1) * cfg.hop + cfg.n_fft;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  for (int f = 0; f < n_frames; ++f) {
    for (int k = 0; k < bins; ++k) {
      buf.spec[k][0] = spec[static_cast<std::size_t>(f) * bins + k].real();
      buf.spec[k][1] = spec[static_cast<std::size_t>(f) * bins + k].imag();
    }
    fftw_execute_dft_c2r(plans.inverse, buf.spec, buf.real);
    const std::size_t off = static_cast<std::size_t>(f) * cfg.hop;
    for (int i = 0; i < cfg.n_fft; ++i) {
      acc[off + i] += buf.real[i] / cfg.n_fft * win[i];
      norm[off + i] += win[i] * win[i];
    }
  }
  std::vector<double> out(n_samples, 0.0);
  for (int i = 0; i < n_samples; ++i) {
    const std::size_t j = static_cast<std::size_t>(i + pad);
    if (j < total && norm[j] > 1e-8) out[i] = acc[j] / norm[j];
  }
  return out;
}

MelSpec compute_mel(std::span<const double> wave, int sample_rate, const MelConfig& cfg) {
  if (sample_rate <= 0) throw DataError("compute_mel: non-positive sample rate");
  if (sample_rate != cfg.sample_rate) {
    const auto resampled = resample(wave, sample_rate, cfg.sample_rate);
    return compute_mel(resampled, cfg.sample_rate, cfg);
  }
  if (static_cast<int>(wave.size()) < cfg.n_fft)
    throw DataError("compute_mel: " + std::to_string(wave.size()) + " samples is shorter than one " +
                    std::to_string(cfg.n_fft) + "-sample frame");
  const int bins = cfg.n_fft / 2 + 1;
  const auto spec = stft(wave, cfg);
  const int n_frames = static_cast<int>(spec.size() / bins);
  const auto fb = mel_filterbank(cfg);
  MelSpec mel;
  mel.n_frames = n_frames;
  mel.n_mels = cfg.n_mels;
  mel.sample_rate = cfg.sample_rate;
  mel.frame_len_s = static_cast<double>(cfg.n_fft) / cfg.sample_rate;
  mel.hop_s = static_cast<double>(cfg.hop) / cfg.sample_rate;
  mel.padding = cfg.padding;
  mel.values.resize(static_cast<std::size_t>(n_frames) * cfg.n_mels);
  std::vector<double> mag(bins);
  for (int f = 0; f < n_frames; ++f) {
    for (int k = 0; k < bins; ++k) mag[k] = std::abs(spec[static_cast<std::size_t>(f) * bins + k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double* row = fb.data() + static_cast<std::size_t>(m) * bins;
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += row[k] * mag[k];
      mel.values[static_cast<std::size_t>(f) * cfg.n_mels + m] = std::log(std::max(e, kLogFloor));
    }
  }
  return mel;
}

// ---------------------------------------------------------------------------

PitchTrack extract_f0(std::span<const double> wave, int sample_rate, const F0Config& cfg, const MelConfig& mel) {
  if (sample_rate != mel.sample_rate) {
    const auto resampled = resample(wave, sample_rate, mel.sample_rate);
    return extract_f0(resampled, mel.sample_rate, cfg, mel);
  }
  PitchTrack track;
  track.hop_s = static_cast<double>(mel.hop) / mel.sample_rate;
  if (wave.empty()) return track;
  const int n_frames = frame_count(static_cast<int>(wave.size()), mel);
  const auto x = padded_signal(wave, mel);
  const int N = mel.n_fft;
  const int lag_min = static_cast<int>(std::floor(sample_rate / cfg.max_hz));
  const int lag_max = std::min(N - 2, static_cast<int>(std::ceil(sample_rate / cfg.min_hz)));
  track.f0.assign(n_frames, 0.0);
  std::vector<double> prefix(N + 1), r(lag_max + 2, 0.0);
  for (int f = 0; f < n_frames; ++f) {
    const double* s = x.data() + static_cast<std::size_t>(f) * mel.hop;
    prefix[0] = 0.0;
    for (int i = 0; i < N; ++i) prefix[i + 1] = prefix[i] + s[i] * s[i];
    if (std::sqrt(prefix[N] / N) < cfg.silence_rms) continue;
    for (int lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
      double dot = 0.0;
      for (int i = 0; i + lag < N; ++i) dot += s[i] * s[i + lag];
      const double e0 = prefix[N - lag], e1 = prefix[N] - prefix[lag];
      r[lag] = (e0 > 0 && e1 > 0) ? dot / std::sqrt(e0 * e1) : 0.0;
    }
    double best = 0.0;
    for (int lag = lag_min; lag <= lag_max; ++lag) best = std::max(best, r[lag]);
    if (best < cfg.voicing_threshold) continue;
    // Smallest-lag local peak close to the global one avoids octave errors.
    int chosen = -1;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
        chosen = lag;
        break;
      }
    }
    if (chosen < 0) continue;
    double lag = chosen;
    const double a = r[chosen - 1], b = r[chosen], c = r[chosen + 1];
    const double denom = a - 2 * b + c;
    if (std::fabs(denom) > 1e-12) lag += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    const double hz = sample_rate / lag;
    if (hz >= cfg.min_hz && hz <= cfg.max_hz) track.f0[f] = hz;
  }
  return track;
}

PhonePitch phone_pitch(const PitchTrack& track, std::span<const int> durations) {
  const long total = std::accumulate(durations.begin(), durations.end(), 0L);
  if (total != static_cast<long>(track.f0.size()))
    throw DataError("phone_pitch: durations sum to " + std::to_string(total) + " but the track has " +
                    std::to_string(track.f0.size()) + " frames");
  PhonePitch out;
  std::size_t t = 0;
  for (int d : durations) {
    if (d < 0) throw DataError("phone_pitch: negative duration");
    double sum = 0.0;
    int voiced = 0;
    for (int i = 0; i < d; ++i, ++t) {
      if (track.f0[t] > 0) {
        sum += std::log(track.f0[t]);
        ++voiced;
      }
    }
    out.log_f0.push_back(voiced ? sum / voiced : 0.0);
    out.voiced.push_back(voiced > 0);
  }
  return out;
}

PitchStats fit_pitch_stats(std::span<const PhonePitch> phones) {
  double sum = 0.0, sq = 0.0;
  long n = 0;
  for (const auto& p : phones)
    for (std::size_t i = 0; i < p.log_f0.size(); ++i)
      if (p.voiced[i]) {
        sum += p.log_f0[i];
        sq += p.log_f0[i] * p.log_f0[i];
        ++n;
      }
  PitchStats s;
  if (n == 0) return s;
  s.mean = sum / n;
  const double var = sq / n - s.mean * s.mean;
  s.stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
  return s;
}

std::vector<double> normalize_pitch(const PhonePitch& p, const PitchStats& stats) {
  std::vector<double> out(p.log_f0.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (p.voiced[i]) out[i] = (p.log_f0[i] - stats.mean) / stats.stddev;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> gaussian_window(int side, double sigma) {
  std::vector<double> g1(side);
  const double c = (side - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < side; ++i) s += (g1[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma)));
  for (double& v : g1) v /= s;
  std::vector<double> w(static_cast<std::size_t>(side) * side);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) w[static_cast<std::size_t>(i) * side + j] = g1[i] * g1[j];
  return w;
}

int ssim_window_side(int rows, int cols, const SsimConfig& cfg) {
  int side = std::min({cfg.window, rows, cols});
  if (side % 2 == 0) --side;
  if (side < 1) throw ShapeError("ssim: empty image");
  return side;
}

double ssim(std::span<const double> a, std::span<const double> b, int rows, int cols, const SsimConfig& cfg) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(rows) * cols)
    throw ShapeError("ssim: shape mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  const int side = ssim_window_side(rows, cols, cfg);
  const auto w = gaussian_window(side, cfg.sigma);
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double range = std::max(*amax, *bmax) - std::min(*amin, *bmin);
  const double c1 = (cfg.k1 * range) * (cfg.k1 * range), c2 = (cfg.k2 * range) * (cfg.k2 * range);
  const int ho = rows - side + 1, wo = cols - side + 1;
  double total = 0.0;
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int p = 0; p < side; ++p)
        for (int q = 0; q < side; ++q) {
          const double g = w[static_cast<std::size_t>(p) * side + q];
          const double va = a[static_cast<std::size_t>(i + p) * cols + j + q];
          const double vb = b[static_cast<std::size_t>(i + p) * cols + j + q];
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double num = (2 * ma * mb + c1) * (2 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += den > 0 ? num / den : 1.0;
    }
  return total / (static_cast<double>(ho) * wo);
}

double ssim(const MelSpec& a, const MelSpec& b, const SsimConfig& cfg) {
  if (a.n_frames != b.n_frames || a.n_mels != b.n_mels)
    throw ShapeError("ssim: mel shapes " + std::to_string(a.n_frames) + "x" + std::to_string(a.n_mels) + " vs " +
                     std::to_string(b.n_frames) + "x" + std::to_string(b.n_mels));
  return ssim(a.values, b.values, a.n_frames, a.n_mels, cfg);
}

// ---------------------------------------------------------------------------

Resampler::Resampler(int from_hz, int to_hz, int zero_crossings) : from_(from_hz), to_(to_hz) {
  if (from_hz <= 0 || to_hz <= 0) throw DataError("resample: sample rates must be positive");
  const int g = std::gcd(from_hz, to_hz);
  up_ = to_hz / g;
  down_ = from_hz / g;
  const double cutoff = 0.95 * std::min(1.0, static_cast<double>(to_hz) / from_hz);
  half_width_ = static_cast<int>(std::ceil(zero_crossings / cutoff));
  const double beta = 8.0;
  const double i0b = std::cyl_bessel_i(0.0, beta);
  phases_.assign(up_, std::vector<double>(2 * static_cast<std::size_t>(half_width_)));
  for (int p = 0; p < up_; ++p) {
    const double frac = static_cast<double>(p) / up_;
    for (int j = -half_width_ + 1; j <= half_width_; ++j) {
      const double d = frac - j;
      const double u = d / half_width_;
      double win = 0.0;
      if (std::fabs(u) < 1.0) win = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - u * u)) / i0b;
      const double xarg = cutoff * d;
      const double sinc = std::fabs(xarg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * xarg) / (std::numbers::pi * xarg);
      phases_[p][j + half_width_ - 1] = cutoff * sinc * win;
    }
  }
}

int Resampler::output_length(int n_in) const {
  return static_cast<int>((static_cast<long long>(n_in) * to_ + from_ / 2) / from_);
}

template <typename F>
void Resampler::for_each_output(int n_in, F&& f) const {
  const int n_out = output_length(n_in);
  for (int n = 0; n < n_out; ++n) {
    const long long pos = static_cast<long long>(n) * down_;
    const long long base = pos / up_;
    const auto& taps = phases_[pos % up_];
    f(n, base - half_width_ + 1, taps);
  }
}

std::vector<double> Resampler::apply(std::span<const double> x) const {
  if (from_ == to_) return {x.begin(), x.end()};
  const int n_in = static_cast<int>(x.size());
  std::vector<double> y(output_length(n_in), 0.0);
  for_each_output(n_in, [&](int n, long long first, const std::vector<double>& taps) {
    double s = 0.0;
    for (std::size_t j = 0; j < taps.size(); ++j) {
      const long long k = first + static_cast<long long>(j);
      if (k >= 0 && k < n_in) s += taps[j] * x[k];
    }
    y[n] = s;
  });
  return y;
}

SparseMap Resampler::sparse_map(int n_in) const {
  SparseMap m;
  m.in_len = n_in;
  m.out_len = output_length(n_in);
  m.row_start.push_back(0);
  for_each_output(n_in, [&](int, long long first, const std::vector<double>& taps) {
    if (from_ == to_) {
      m.idx.push_back(static_cast<int>(m.row_start.size() - 1));
      m.weight.push_back(1.0);
    } else {
      for (std::size_t j = 0; j < taps.size(); ++j) {
        const long long k = first + static_cast<long long>(j);
        if (k >= 0 && k < n_in) {
          m.idx.push_back(static_cast<int>(k));
          m.weight.push_back(taps[j]);
        }
      }
    }
    m.row_start.push_back(static_cast<int>(m.idx.size()));
  });
  return m;
}

std::vector<double> resample(std::span<const double> wave, int from_hz, int to_hz) {
  if (from_hz <= 0 || to_hz <= 0) throw DataError("resample: sample rates must be positive");
  if (from_hz == to_hz) return {wave.begin(), wave.end()};
  return Resampler(from_hz, to_hz).apply(wave);
}

// ---------------------------------------------------------------------------

Alignment load_alignment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open alignment file " + path);
  Alignment out;
  std::string line, last_utt;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 4) throw DataError(where + ": expected 4 tab-separated fields");
    AlignmentRow row;
    row.phone = f[1];
    try {
      row.start_frame = std::stoi(f[2]);
      row.end_frame = std::stoi(f[3]);
    } catch (const std::exception&) {
      throw DataError(where + ": frame indices must be integers");
    }
    if (row.end_frame < row.start_frame) throw DataError(where + ": end before start");
    auto& rows = out[f[0]];
    if (!rows.empty() && last_utt != f[0]) throw DataError(where + ": rows of utterance " + f[0] + " are not contiguous in the file");
    const int expected = rows.empty() ? 0 : rows.back().end_frame;
    if (row.start_frame > expected) throw DataError(where + ": gap before row (expected start " + std::to_string(expected) + ")");
    if (row.start_frame < expected) throw DataError(where + ": overlaps previous row (expected start " + std::to_string(expected) + ")");
    rows.push_back(row);
    last_utt = f[0];
  }
  return out;
}

void write_alignment(const std::string& path, const Alignment& alignment) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write alignment file " + path);
  for (const auto& [utt, rows] : alignment)
    for (const auto& r : rows) out << utt << '\t' << r.phone << '\t' << r.start_frame << '\t' << r.end_frame << '\n';
}

std::vector<int> alignment_durations(const std::vector<AlignmentRow>& rows) {
  std::vector<int> d;
  d.reserve(rows.size());
  for (const auto& r : rows) d.push_back(r.end_frame - r.start_frame);
  return d;
}

std::vector<int> synth_alignment(int n_phones, int n_frames, std::uint64_t seed) {
  if (n_phones <= 0 || n_frames < n_phones)
    throw DataError("synth_alignment: cannot split " + std::to_string(n_frames) + " frames into " + std::to_string(n_phones) +
                    " non-empty phones");
  std::mt19937_64 rng(seed);
  std::vector<int> cuts(n_frames - 1);
  std::iota(cuts.begin(), cuts.end(), 1);
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(n_phones - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<int> d;
  int prev = 0;
  for (int c : cuts) {
    d.push_back(c - prev);
    prev = c;
  }
  d.push_back(n_frames - prev);
  return d;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
std::uint32_t get_u32(const std::uint8_t* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24); }
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

std::vector<std::uint8_t> encode_wav(std::span<const double> samples, int sample_rate) {
  std::vector<std::uint8_t> b;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  b.reserve(44 + data_bytes);
  for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, 1);
  put_u32(b, static_cast<std::uint32_t>(sample_rate));
  put_u32(b, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(b, 2);
  put_u16(b, 16);
  for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, data_bytes);
  for (double s : samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::min(32767L, std::lround(c * 32768.0)))));
  }
  return b;
}

void write_wav(const std::string& path, std::span<const double> samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Wave read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw DataError(path + ": not a RIFF/WAVE file");
  int channels = 0, bits = 0, format = 0;
  Wave w;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = get_u32(b.data() + pos + 4);
    const std::uint8_t* body = b.data() + pos + 8;
    if (pos + 8 + size > b.size()) throw DataError(path + ": truncated chunk");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      format = get_u16(body);
      channels = get_u16(body + 2);
      w.sample_rate = static_cast<int>(get_u32(body + 4));
      bits = get_u16(body + 14);
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (format != 1 || bits != 16 || channels < 1) throw DataError(path + ": only PCM 16-bit WAV is supported");
      const std::size_t frames = size / (2 * static_cast<std::size_t>(channels));
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c)
          s += static_cast<std::int16_t>(get_u16(body + 2 * (i * channels + c))) / 32768.0;
        w.samples[i] = s / channels;
      }
      return w;
    }
    pos += 8 + size + (size & 1);
  }
  throw DataError(path + ": no data chunk");
}

}  // namespace abtts::dsp
