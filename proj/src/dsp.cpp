#include "pieeg/dsp.hpp"

#include "pieeg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <fmt/format.h>

namespace pieeg {

namespace {

using cplx = std::complex<double>;

// FFTW planner calls are not thread-safe.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

void FilterSpec::validate(double sample_rate) const {
    const double nyquist = sample_rate / 2.0;
    if (!(low_hz > 0.0))
        throw ConfigError(fmt::format("filter low cutoff must be > 0 Hz, got {}", low_hz));
    if (!(low_hz < high_hz))
        throw ConfigError(fmt::format("filter low cutoff {} Hz must be below high cutoff {} Hz", low_hz, high_hz));
    if (!(high_hz < nyquist))
        throw ConfigError(fmt::format("filter cutoff {} Hz >= Nyquist {} Hz", high_hz, nyquist));
    if (order < 2 || order % 2 != 0)
        throw ConfigError(fmt::format("filter order must be even and >= 2, got {}", order));
}

cplx Biquad::response(double freq_hz, double sample_rate) const {
    const cplx zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate);
    const cplx zinv2 = zinv * zinv;
    return (b0 + b1 * zinv + b2 * zinv2) / (1.0 + a1 * zinv + a2 * zinv2);
}

cplx cascade_response(std::span<const Biquad> sections, double freq_hz, double sample_rate) {
    cplx h{1.0, 0.0};
    for (const auto& s : sections)
        h *= s.response(freq_hz, sample_rate);
    return h;
}

std::vector<Biquad> design_bandpass(const FilterSpec& spec, double sample_rate) {
    spec.validate(sample_rate);
    const double fs2 = 2.0 * sample_rate;
    const double w_lo = fs2 * std::tan(std::numbers::pi * spec.low_hz / sample_rate);
    const double w_hi = fs2 * std::tan(std::numbers::pi * spec.high_hz / sample_rate);
    const double bw = w_hi - w_lo;
    const double w0_sq = w_lo * w_hi;
    // Digital frequency that the prewarped geometric centre maps back to.
    const double f_center = sample_rate / std::numbers::pi * std::atan(std::sqrt(w0_sq) / fs2);

    const int n = spec.order;
    std::vector<Biquad> sections;
    sections.reserve(static_cast<std::size_t>(n));
    // Upper-half-plane prototype poles; conjugates yield the mirrored sections.
    for (int k = 0; k < n / 2; ++k) {
        const double theta = std::numbers::pi / 2.0 + std::numbers::pi * (2 * k + 1) / (2.0 * n);
        const cplx p = std::polar(1.0, theta);
        const cplx root = std::sqrt(p * p * bw * bw - 4.0 * w0_sq);
        for (const cplx s : {(p * bw + root) / 2.0, (p * bw - root) / 2.0}) {
            const cplx z = (fs2 + s) / (fs2 - s);
            Biquad bq;
            bq.b0 = 1.0;
            bq.b1 = 0.0;
            bq.b2 = -1.0;
            bq.a1 = -2.0 * z.real();
            bq.a2 = std::norm(z);
            const double g = 1.0 / std::abs(bq.response(f_center, sample_rate));
            bq.b0 *= g;
            bq.b2 *= g;
            sections.push_back(bq);
        }
    }
    return sections;
}

BandpassFilter::BandpassFilter(const FilterSpec& spec, double sample_rate, bool prime_on_first_sample)
    : sections_(design_bandpass(spec, sample_rate)), state_(sections_.size()),
      prime_on_first_sample_(prime_on_first_sample) {}

void BandpassFilter::reset() {
    std::fill(state_.begin(), state_.end(), State{});
    started_ = false;
}

// Steady state for a constant input x: every section has a zero at DC, so the
// first section outputs 0 and the rest stay at rest.
void BandpassFilter::prime(double x) {
    std::fill(state_.begin(), state_.end(), State{});
    if (state_.empty())
        return;
    const auto& s = sections_.front();
    state_.front().s2 = s.b2 * x;
    state_.front().s1 = s.b1 * x + s.b2 * x;
}

double BandpassFilter::process(double x) {
    if (!started_) {
        started_ = true;
        if (prime_on_first_sample_)
            prime(x);
    }
    double v = x;
    for (std::size_t i = 0; i < sections_.size(); ++i) {
        const auto& c = sections_[i];
        auto& st = state_[i];
        const double y = c.b0 * v + st.s1;
        st.s1 = c.b1 * v - c.a1 * y + st.s2;
        st.s2 = c.b2 * v - c.a2 * y;
        v = y;
    }
    return v;
}

void BandpassFilter::process(std::span<double> samples) {
    for (double& x : samples)
        x = process(x);
}

std::vector<double> bandpass(std::span<const double> samples, const FilterSpec& spec, double sample_rate) {
    BandpassFilter filter(spec, sample_rate);
    std::vector<double> out(samples.begin(), samples.end());
    filter.process(out);
    return out;
}

std::string_view to_string(Taper taper) {
    return taper == Taper::hann ? "hann" : "rectangular";
}

Taper taper_from_string(std::string_view name) {
    if (name == "rectangular")
        return Taper::rectangular;
    if (name == "hann")
        return Taper::hann;
    throw ConfigError(fmt::format("unknown taper '{}'", name));
}

void WindowSpec::validate() const {
    if (length_samples < 2)
        throw ConfigError(fmt::format("window length must be >= 2, got {}", length_samples));
    if (hop_samples < 1 || hop_samples > length_samples)
        throw ConfigError(fmt::format("window hop must be in [1, {}], got {}", length_samples, hop_samples));
}

WindowSpec WindowSpec::default_for(int sample_rate) {
    // Rounded up so that four hops never fall short of one second.
    return {sample_rate, (sample_rate + 3) / 4, Taper::rectangular};
}

SlidingWindow::SlidingWindow(const WindowSpec& spec) : spec_(spec) {
    spec_.validate();
    ring_.assign(static_cast<std::size_t>(spec_.length_samples), 0.0);
}

bool SlidingWindow::push(std::int64_t t_ns, double value) {
    if (samples_seen_ > 0 && t_ns <= last_t_ns_)
        throw StreamIntegrityError(
            fmt::format("non-monotone sample timestamp {} ns after {} ns", t_ns, last_t_ns_));
    last_t_ns_ = t_ns;
    ring_[head_] = value;
    head_ = (head_ + 1) % ring_.size();
    ++samples_seen_;
    const auto len = static_cast<std::uint64_t>(spec_.length_samples);
    if (samples_seen_ >= len && (samples_seen_ - len) % static_cast<std::uint64_t>(spec_.hop_samples) == 0) {
        ++windows_emitted_;
        return true;
    }
    return false;
}

void SlidingWindow::snapshot(AnalysisWindow& out) const {
    out.t_end_ns = last_t_ns_;
    out.first_sample_index = samples_seen_ - ring_.size();
    out.samples.resize(ring_.size());
    // head_ is the oldest sample once the ring is full.
    const auto split = ring_.begin() + static_cast<std::ptrdiff_t>(head_);
    auto it = std::copy(split, ring_.end(), out.samples.begin());
    std::copy(ring_.begin(), split, it);
}

std::vector<AnalysisWindow> SlidingWindow::push(std::span<const TimedSample> chunk) {
    std::vector<AnalysisWindow> windows;
    for (const auto& s : chunk) {
        if (push(s.t_ns, s.value)) {
            windows.emplace_back();
            snapshot(windows.back());
        }
    }
    return windows;
}

struct SpectrumAnalyzer::Plan {
    double* in = nullptr;
    fftw_complex* out = nullptr;
    fftw_plan plan = nullptr;

    explicit Plan(int n) {
        std::lock_guard lock(fftw_planner_mutex());
        in = fftw_alloc_real(static_cast<std::size_t>(n));
        out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        // ESTIMATE keeps the chosen algorithm, and so the rounding, identical run to run.
        plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    }
    ~Plan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
        fftw_free(in);
        fftw_free(out);
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
};

SpectrumAnalyzer::SpectrumAnalyzer(int length, Taper taper) : length_(length), taper_(taper) {
    if (length < 2)
        throw ConfigError(fmt::format("FFT length must be >= 2, got {}", length));
    weights_.resize(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i)
        weights_[i] = taper == Taper::hann ? 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / length)) : 1.0;
    for (double w : weights_)
        weight_sum_ += w;
    plan_ = std::make_unique<Plan>(length);
}

SpectrumAnalyzer::~SpectrumAnalyzer() = default;

SpectrumFrame SpectrumAnalyzer::analyze(std::span<const double> window, double sample_rate, std::int64_t t_end_ns) {
    if (window.size() != static_cast<std::size_t>(length_))
        throw ConfigError(fmt::format("window length {} does not match FFT length {}", window.size(), length_));
    for (int i = 0; i < length_; ++i)
        plan_->in[i] = window[i] * weights_[i];
    fftw_execute(plan_->plan);

    SpectrumFrame frame;
    frame.t_end_ns = t_end_ns;
    frame.bin_hz = sample_rate / length_;
    const int bins = length_ / 2 + 1;
    frame.amplitudes_uv.resize(static_cast<std::size_t>(bins));
    for (int k = 0; k < bins; ++k) {
        const double mag = std::hypot(plan_->out[k][0], plan_->out[k][1]);
        const bool unpaired = k == 0 || (length_ % 2 == 0 && k == length_ / 2);
        frame.amplitudes_uv[k] = (unpaired ? 1.0 : 2.0) * mag / weight_sum_;
    }
    return frame;
}

SpectrumFrame fft_amplitude(std::span<const double> window, Taper taper, double sample_rate, std::int64_t t_end_ns) {
    SpectrumAnalyzer analyzer(static_cast<int>(window.size()), taper);
    return analyzer.analyze(window, sample_rate, t_end_ns);
}

BandPeak band_peak(const SpectrumFrame& spectrum, double low_hz, double high_hz) {
    const std::size_t bins = spectrum.amplitudes_uv.size();
    const double nyquist = spectrum.bin_hz * static_cast<double>(bins > 0 ? bins - 1 : 0);
    if (!(low_hz >= 0.0 && low_hz < high_hz))
        throw ConfigError(fmt::format("invalid band [{}, {}] Hz", low_hz, high_hz));
    // Relative slack so that a bin centre computed as k*bin_hz counts as "on" the edge.
    const double eps = 1e-9 * std::max(spectrum.bin_hz, 1.0);
    if (high_hz > nyquist + eps)
        throw ConfigError(fmt::format("band edge {} Hz above Nyquist {} Hz", high_hz, nyquist));
    BandPeak best;
    bool found = false;
    for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * spectrum.bin_hz;
        if (f < low_hz - eps)
            continue;
        if (f > high_hz + eps)
            break;
        const double a = spectrum.amplitudes_uv[k];
        if (!found || a > best.peak_uv) {
            best = {f, a};
            found = true;
        }
    }
    if (!found)
        throw EmptyBandError(
            fmt::format("band [{}, {}] Hz contains no bin centre (bin width {} Hz)", low_hz, high_hz, spectrum.bin_hz));
    return best;
}

FeatureExtractor::FeatureExtractor(const DeviceConfig& device, int channel, const FilterSpec& filter,
                                   const WindowSpec& window)
    : channel_(channel), sample_rate_(device.sample_rate_sps), window_spec_(window),
      filter_(filter, device.sample_rate_sps, true), window_(window), analyzer_(window.length_samples, window.taper) {
    if (channel < 0 || channel >= device.channel_count)
        throw ConfigError(fmt::format("analysis channel {} out of range 0..{}", channel, device.channel_count - 1));
}

void FeatureExtractor::push(const SampleChunk& chunk, std::vector<SpectrumFrame>& spectra,
                            std::vector<TimedSample>* trace) {
    for (const auto& s : chunk.samples) {
        const double uv = filter_.process(s.volts[static_cast<std::size_t>(channel_)] * 1e6);
        if (trace)
            trace->push_back({s.t_ns, uv});
        if (window_.push(s.t_ns, uv)) {
            window_.snapshot(scratch_);
            spectra.push_back(analyzer_.analyze(scratch_.samples, sample_rate_, scratch_.t_end_ns));
        }
    }
}

} // namespace pieeg
