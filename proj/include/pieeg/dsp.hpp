#pragma once

#include "pieeg/frame_codec.hpp"

#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace pieeg {

enum class FilterDesign { butterworth };

// Bandpass specification. `order` is the lowpass prototype order: the
// designed bandpass has 2*order poles realised as `order` biquads.
struct FilterSpec {
    double low_hz = 1.0;
    double high_hz = 30.0;
    int order = 4;
    FilterDesign design = FilterDesign::butterworth;

    void validate(double sample_rate) const;
};

struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    std::complex<double> response(double freq_hz, double sample_rate) const;
};

std::vector<Biquad> design_bandpass(const FilterSpec& spec, double sample_rate);
std::complex<double> cascade_response(std::span<const Biquad> sections, double freq_hz, double sample_rate);

// Causal cascaded-biquad filter (transposed direct form II).
class BandpassFilter {
public:
    BandpassFilter(const FilterSpec& spec, double sample_rate, bool prime_on_first_sample = false);

    double process(double x);
    void process(std::span<double> samples);
    void reset();

    const std::vector<Biquad>& sections() const { return sections_; }

private:
    struct State {
        double s1 = 0.0;
        double s2 = 0.0;
    };

    void prime(double x);

    std::vector<Biquad> sections_;
    std::vector<State> state_;
    bool prime_on_first_sample_;
    bool started_ = false;
};

// One-shot form of the streaming filter, starting from rest.
std::vector<double> bandpass(std::span<const double> samples, const FilterSpec& spec, double sample_rate);

enum class Taper { rectangular, hann };

std::string_view to_string(Taper taper);
Taper taper_from_string(std::string_view name);

struct WindowSpec {
    int length_samples = 250;
    int hop_samples = 62;
    Taper taper = Taper::rectangular;

    void validate() const;
    // One second of samples, hopped every quarter second.
    static WindowSpec default_for(int sample_rate);
};

struct TimedSample {
    std::int64_t t_ns = 0;
    double value = 0.0;
};

struct SampleChunk {
    std::vector<SampleVector> samples;
    // Set by sources that lost data before this chunk (hardware overrun).
    bool gap_before = false;
};

struct AnalysisWindow {
    std::int64_t t_end_ns = 0;
    std::uint64_t first_sample_index = 0;
    std::vector<double> samples;
};

// Ring buffer over one channel. After the first `length` samples, emits a
// window every `hop` samples, oldest sample first.
class SlidingWindow {
public:
    explicit SlidingWindow(const WindowSpec& spec);

    // Returns true when this sample completes a window; fetch it with snapshot().
    bool push(std::int64_t t_ns, double value);
    void snapshot(AnalysisWindow& out) const;
    std::vector<AnalysisWindow> push(std::span<const TimedSample> chunk);

    std::uint64_t samples_seen() const { return samples_seen_; }
    std::uint64_t windows_emitted() const { return windows_emitted_; }

private:
    WindowSpec spec_;
    std::vector<double> ring_;
    std::size_t head_ = 0; // next write position
    std::uint64_t samples_seen_ = 0;
    std::uint64_t windows_emitted_ = 0;
    std::int64_t last_t_ns_ = 0;
};

struct SpectrumFrame {
    std::int64_t t_end_ns = 0;
    double bin_hz = 0.0;
    std::vector<double> amplitudes_uv;
};

// Amplitude spectrum with taper gain correction: a sinusoid of peak A on an
// exact bin reads A in that bin; DC and Nyquist are not doubled.
class SpectrumAnalyzer {
public:
    SpectrumAnalyzer(int length, Taper taper);
    ~SpectrumAnalyzer();
    SpectrumAnalyzer(const SpectrumAnalyzer&) = delete;
    SpectrumAnalyzer& operator=(const SpectrumAnalyzer&) = delete;

    SpectrumFrame analyze(std::span<const double> window, double sample_rate, std::int64_t t_end_ns = 0);

    int length() const { return length_; }
    Taper taper() const { return taper_; }
    std::span<const double> taper_weights() const { return weights_; }

private:
    struct Plan;

    int length_;
    Taper taper_;
    std::vector<double> weights_;
    double weight_sum_ = 0.0;
    std::unique_ptr<Plan> plan_;
};

SpectrumFrame fft_amplitude(std::span<const double> window, Taper taper, double sample_rate,
                            std::int64_t t_end_ns = 0);

struct BandPeak {
    double peak_hz = 0.0;
    double peak_uv = 0.0;
};

// Maximum over bins whose centre lies in [low_hz, high_hz] (both inclusive),
// ties resolved toward the lower frequency.
BandPeak band_peak(const SpectrumFrame& spectrum, double low_hz, double high_hz);

// The whole feature path for one analysis channel: volts -> uV, bandpass,
// sliding window, amplitude spectrum.
class FeatureExtractor {
public:
    FeatureExtractor(const DeviceConfig& device, int channel, const FilterSpec& filter, const WindowSpec& window);

    // Appends completed spectra; when `trace` is given, also appends every
    // filtered sample of the analysis channel.
    void push(const SampleChunk& chunk, std::vector<SpectrumFrame>& spectra,
              std::vector<TimedSample>* trace = nullptr);

    std::uint64_t samples_seen() const { return window_.samples_seen(); }
    std::uint64_t windows_emitted() const { return window_.windows_emitted(); }
    const WindowSpec& window_spec() const { return window_spec_; }

private:
    int channel_;
    double sample_rate_;
    WindowSpec window_spec_;
    BandpassFilter filter_;
    SlidingWindow window_;
    SpectrumAnalyzer analyzer_;
    AnalysisWindow scratch_;
};

} // namespace pieeg
