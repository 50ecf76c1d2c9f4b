#pragma once

#include "pieeg/actuation.hpp"
#include "pieeg/blink_detector.hpp"
#include "pieeg/dsp.hpp"
#include "pieeg/frame_codec.hpp"
#include "pieeg/signal_sim.hpp"
#include "pieeg/sources.hpp"

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pieeg {

enum class SourceKind { hardware, simulate, replay };

std::string_view to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view name);

struct SourceSpec {
    SourceKind kind = SourceKind::simulate;
    // 0 = as fast as possible; 1 = real time.
    double speed = 0.0;

    // simulate
    double duration_s = 22.0;
    BlinkScript script;
    std::optional<std::filesystem::path> script_path;
    NoiseModel noise;

    // replay
    std::filesystem::path replay_path;
    // Optional ground-truth labels for a recording (script text format).
    std::optional<std::filesystem::path> labels_path;

    // hardware
    HardwareOptions hardware;
};

struct SessionConfig {
    DeviceConfig device;
    SourceSpec source;
    int analysis_channel = 0; // Fz
    FilterSpec filter;
    // Absent: one second of samples at the source rate, quarter-second hop.
    std::optional<WindowSpec> window;
    std::vector<DetectorConfig> detectors = default_bank();
    PinMap pin_map = PinMap::defaults();
    std::optional<std::filesystem::path> record_path;
    bool gpio_output = false;

    // Throws ConfigError; a missing recording is a SourceError.
    void validate() const;
    WindowSpec window_for(int sample_rate) const {
        return window ? *window : WindowSpec::default_for(sample_rate);
    }
};

// Builds the configured source. Replay header problems surface here, before
// any processing starts.
std::unique_ptr<FrameSource> make_source(const SessionConfig& config);

// Detector bank shared between the processing stage and control intake.
// Every evaluate/apply holds the same lock, so commands apply in one total
// order and never interleave with a spectrum evaluation.
class SharedDetectorBank {
public:
    explicit SharedDetectorBank(const std::vector<DetectorConfig>& configs) : bank_(configs) {}

    void evaluate(const SpectrumFrame& spectrum, std::vector<DetectionEvent>& out) {
        std::lock_guard lock(mutex_);
        bank_.evaluate(spectrum, out);
    }
    DetectorConfig apply(const DetectorConfig& next) {
        std::lock_guard lock(mutex_);
        return bank_.update_config(next);
    }
    DetectorConfig config(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return bank_.config(id);
    }
    std::vector<DetectorConfig> configs() const {
        std::lock_guard lock(mutex_);
        return bank_.configs();
    }
    void reset_clocks() {
        std::lock_guard lock(mutex_);
        bank_.reset_clocks();
    }

private:
    mutable std::mutex mutex_;
    DetectorBank bank_;
};

struct LatencyEntry {
    std::string detector_id;
    std::int64_t blink_onset_ns = 0;
    std::int64_t event_t_ns = 0;
    // event_t_ns plus the measured wall-clock time from the triggering chunk
    // reaching the processing stage to the pin command leaving it.
    std::int64_t actuation_assert_ns = 0;
};

struct LatencyReport {
    std::vector<LatencyEntry> entries;
    double median_s = 0.0;      // event_t - onset
    double max_s = 0.0;
    double end_to_end_median_s = 0.0; // actuation_assert - onset
    double end_to_end_max_s = 0.0;
};

struct DetectionScore {
    std::string detector_id;
    int blinks = 0;
    int hits = 0;
    int false_events = 0;
    // Matched pairs in blink order: (label index, event index).
    std::vector<std::pair<std::size_t, std::size_t>> matches;
};

// Greedy in time order: each blink takes the first unused event of the
// detector with onset <= t <= onset + max_latency. An event is false when it
// lies more than false_margin from every blink pulse [onset, onset + duration].
DetectionScore score_detections(const std::vector<BlinkLabel>& labels, const std::vector<DetectionEvent>& events,
                                const std::string& detector_id, std::int64_t max_latency_ns = 1'500'000'000,
                                std::int64_t false_margin_ns = 1'000'000'000);

struct ProcessingDelay {
    std::string detector_id;
    std::int64_t event_t_ns = 0;
    std::int64_t processing_ns = 0;
};

LatencyReport build_latency_report(const std::vector<BlinkLabel>& labels, const std::vector<DetectionEvent>& events,
                                   const std::vector<ProcessingDelay>& delays);

struct SessionSummary {
    std::vector<DetectionEvent> events;
    std::vector<PulseInterval> pulses;
    std::map<std::string, int> events_per_detector;
    std::vector<BlinkLabel> labels;
    std::vector<ProcessingDelay> delays;
    std::optional<LatencyReport> latency;
    std::uint64_t frames = 0;
    std::uint64_t windows = 0;
    std::uint64_t gaps = 0;
    bool input_truncated = false;
    bool stopped_early = false;
    double wall_seconds = 0.0;
    DeviceConfig device;
};

// `detector_id,t_ns,peak_hz,peak_uv,threshold_uv` per line, shortest round-trip formatting.
void write_event_log(std::ostream& out, const std::vector<DetectionEvent>& events);
std::string event_log_text(const std::vector<DetectionEvent>& events);

// Hooks for the broadcast stage. Called from the processing thread; must not block.
class SessionObserver {
public:
    virtual ~SessionObserver() = default;
    // Filtered analysis-channel trace, already decimated to <= 50 points/s.
    virtual void on_samples(std::span<const TimedSample> samples) { (void)samples; }
    virtual void on_spectrum(const SpectrumFrame& spectrum) { (void)spectrum; }
    virtual void on_event(const DetectionEvent& event) { (void)event; }
    virtual void on_pin(const ActuatorCommand& command, bool asserted) {
        (void)command;
        (void)asserted;
    }
};

inline constexpr int kDisplayPointsPerSecond = 50;

// One processing run: source -> bounded queue -> dsp -> detectors -> pins.
class Session {
public:
    explicit Session(SessionConfig config, std::shared_ptr<SharedDetectorBank> bank = nullptr);

    // Blocks until the source is exhausted or request_stop() is called; the
    // queued frames are always drained through the detection path.
    SessionSummary run();
    void request_stop();

    void set_observer(SessionObserver* observer) { observer_ = observer; }
    void add_sink(ActuatorSink* sink) { extra_sinks_.push_back(sink); }
    const SessionConfig& config() const { return config_; }
    std::shared_ptr<SharedDetectorBank> bank() const { return bank_; }

private:
    SessionConfig config_;
    std::shared_ptr<SharedDetectorBank> bank_;
    SessionObserver* observer_ = nullptr;
    std::vector<ActuatorSink*> extra_sinks_;
    std::atomic<bool> stop_{false};
    std::mutex source_mutex_;
    FrameSource* source_ = nullptr;
};

struct CalibrationReport {
    double threshold_uv = 0.0;
    double noise_p99 = 0.0;
    double blink_median = 0.0;
    std::vector<double> noise_peaks;
    std::vector<double> blink_peaks;
};

inline constexpr double kCalibrationGuardS = 1.0;
inline constexpr double kMinQuietSeconds = 5.0;

// Band-peak statistics over windows that hold a whole labelled blink versus
// windows clear of every blink (plus a ringing guard after each pulse).
// threshold = noise_p99 + margin * (blink_median - noise_p99).
CalibrationReport calibrate_threshold(std::span<const TimedFrame> frames, const DeviceConfig& device,
                                      const std::vector<BlinkLabel>& labels, int channel, const FilterSpec& filter,
                                      const WindowSpec& window, double band_low_hz, double band_high_hz,
                                      double target_margin = 0.5);

// Reads a whole labelled source (simulation or replay with labels) and calibrates.
CalibrationReport calibrate_threshold(FrameSource& source, int channel, const FilterSpec& filter,
                                      const std::optional<WindowSpec>& window, double band_low_hz,
                                      double band_high_hz, double target_margin = 0.5);

// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

} // namespace pieeg
