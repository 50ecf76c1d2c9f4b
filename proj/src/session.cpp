#include "pieeg/session.hpp"

#include "pieeg/bounded_queue.hpp"
#include "pieeg/errors.hpp"
#include "pieeg/recording.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pieeg {

std::string_view to_string(SourceKind kind) {
    switch (kind) {
    case SourceKind::hardware: return "hardware";
    case SourceKind::replay: return "replay";
    case SourceKind::simulate: break;
    }
    return "simulate";
}

SourceKind source_kind_from_string(std::string_view name) {
    if (name == "hardware")
        return SourceKind::hardware;
    if (name == "simulate")
        return SourceKind::simulate;
    if (name == "replay")
        return SourceKind::replay;
    throw ConfigError(fmt::format("unknown source kind '{}'", name));
}

void SessionConfig::validate() const {
    device.validate();
    if (analysis_channel < 0 || analysis_channel >= device.channel_count)
        throw ConfigError(fmt::format("analysis_channel {} out of range 0..{}", analysis_channel,
                                      device.channel_count - 1));
    if (window)
        window->validate();
    for (const auto& d : detectors)
        d.validate();
    pin_map.validate();
    if (!(source.speed >= 0.0))
        throw ConfigError("speed must be >= 0");
    switch (source.kind) {
    case SourceKind::simulate:
        if (!(source.duration_s > 0.0))
            throw ConfigError("simulation duration must be > 0");
        if (source.script_path && !std::filesystem::exists(*source.script_path))
            throw ConfigError(fmt::format("script file {} does not exist", source.script_path->string()));
        source.noise.validate();
        break;
    case SourceKind::replay:
        if (!std::filesystem::exists(source.replay_path))
            throw SourceError(fmt::format("recording {} does not exist", source.replay_path.string()));
        if (source.labels_path && !std::filesystem::exists(*source.labels_path))
            throw ConfigError(fmt::format("label file {} does not exist", source.labels_path->string()));
        break;
    case SourceKind::hardware:
        break;
    }
}

std::unique_ptr<FrameSource> make_source(const SessionConfig& config) {
    const auto& src = config.source;
    switch (src.kind) {
    case SourceKind::simulate: {
        BlinkScript script = src.script;
        if (src.script_path) {
            script = load_script(*src.script_path);
            script.channel_gains = src.script.channel_gains;
        }
        return std::make_unique<SimulatedSource>(src.duration_s, config.device, script, src.noise, src.speed);
    }
    case SourceKind::replay: {
        std::optional<std::vector<BlinkLabel>> labels;
        if (src.labels_path) {
            const ReplayReader probe(src.replay_path);
            labels = labels_for(load_script(*src.labels_path), probe.device());
        }
        return std::make_unique<ReplaySource>(src.replay_path, src.speed, std::move(labels));
    }
    case SourceKind::hardware:
        return std::make_unique<Ads1299Source>(config.device, src.hardware);
    }
    throw ConfigError("unknown source kind");
}

DetectionScore score_detections(const std::vector<BlinkLabel>& labels, const std::vector<DetectionEvent>& events,
                                const std::string& detector_id, std::int64_t max_latency_ns,
                                std::int64_t false_margin_ns) {
    DetectionScore score;
    score.detector_id = detector_id;
    score.blinks = static_cast<int>(labels.size());

    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events[i].detector_id == detector_id)
            mine.push_back(i);
    std::vector<bool> used(mine.size(), false);

    for (std::size_t b = 0; b < labels.size(); ++b) {
        const std::int64_t onset = labels[b].onset_ns;
        for (std::size_t j = 0; j < mine.size(); ++j) {
            const std::int64_t t = events[mine[j]].t_ns;
            if (used[j] || t < onset)
                continue;
            if (t - onset > max_latency_ns)
                break;
            used[j] = true;
            score.matches.emplace_back(b, mine[j]);
            ++score.hits;
            break;
        }
    }

    for (std::size_t j = 0; j < mine.size(); ++j) {
        if (used[j])
            continue;
        const std::int64_t t = events[mine[j]].t_ns;
        bool near = false;
        for (const auto& l : labels) {
            const auto start = l.onset_ns;
            const auto end = l.onset_ns + static_cast<std::int64_t>(std::llround(l.event.duration_s * 1e9));
            const std::int64_t distance = t < start ? start - t : (t > end ? t - end : 0);
            if (distance <= false_margin_ns) {
                near = true;
                break;
            }
        }
        if (!near)
            ++score.false_events;
    }
    return score;
}

LatencyReport build_latency_report(const std::vector<BlinkLabel>& labels, const std::vector<DetectionEvent>& events,
                                   const std::vector<ProcessingDelay>& delays) {
    LatencyReport report;
    std::vector<std::string> ids;
    for (const auto& e : events)
        if (std::find(ids.begin(), ids.end(), e.detector_id) == ids.end())
            ids.push_back(e.detector_id);

    for (const auto& id : ids) {
        const auto score = score_detections(labels, events, id);
        for (const auto& [b, e] : score.matches) {
            LatencyEntry entry;
            entry.detector_id = id;
            entry.blink_onset_ns = labels[b].onset_ns;
            entry.event_t_ns = events[e].t_ns;
            entry.actuation_assert_ns = events[e].t_ns;
            for (const auto& d : delays)
                if (d.detector_id == id && d.event_t_ns == events[e].t_ns)
                    entry.actuation_assert_ns = events[e].t_ns + d.processing_ns;
            report.entries.push_back(entry);
        }
    }
    if (report.entries.empty())
        return report;

    std::vector<double> detect;
    std::vector<double> total;
    for (const auto& e : report.entries) {
        detect.push_back(static_cast<double>(e.event_t_ns - e.blink_onset_ns) * 1e-9);
        total.push_back(static_cast<double>(e.actuation_assert_ns - e.blink_onset_ns) * 1e-9);
    }
    report.median_s = percentile(detect, 50.0);
    report.max_s = *std::max_element(detect.begin(), detect.end());
    report.end_to_end_median_s = percentile(total, 50.0);
    report.end_to_end_max_s = *std::max_element(total.begin(), total.end());
    return report;
}

void write_event_log(std::ostream& out, const std::vector<DetectionEvent>& events) {
    for (const auto& e : events)
        out << fmt::format("{},{},{},{},{}\n", e.detector_id, e.t_ns, e.peak_hz, e.peak_uv, e.threshold_uv);
}

std::string event_log_text(const std::vector<DetectionEvent>& events) {
    std::ostringstream out;
    write_event_log(out, events);
    return out.str();
}

namespace {

class ObserverPinSink : public ActuatorSink {
public:
    ObserverPinSink(SessionObserver& observer, const PinMap& map) : observer_(observer), map_(map) {}

    void apply(const ActuatorCommand& command) override {
        const auto a = map_.for_pin(command.pin);
        const bool asserted = a && command.level == (a->active_level == ActiveLevel::high);
        observer_.on_pin(command, asserted);
    }

private:
    SessionObserver& observer_;
    const PinMap& map_;
};

} // namespace

Session::Session(SessionConfig config, std::shared_ptr<SharedDetectorBank> bank)
    : config_(std::move(config)), bank_(std::move(bank)) {}

void Session::request_stop() {
    stop_.store(true);
    std::lock_guard lock(source_mutex_);
    if (source_)
        source_->request_stop();
}

SessionSummary Session::run() {
    config_.validate();
    std::unique_ptr<FrameSource> source = make_source(config_);
    const DeviceConfig device = source->device();
    if (config_.analysis_channel >= device.channel_count)
        throw ConfigError(fmt::format("analysis_channel {} out of range", config_.analysis_channel));
    const WindowSpec window = config_.window_for(device.sample_rate_sps);
    FeatureExtractor features(device, config_.analysis_channel, config_.filter, window);

    if (!bank_)
        bank_ = std::make_shared<SharedDetectorBank>(config_.detectors);
    bank_->reset_clocks();

    PulseScheduler scheduler(config_.pin_map);
    MockSink pulse_log(config_.pin_map);
    scheduler.add_sink(&pulse_log);
    std::unique_ptr<GpioChardevSink> gpio;
    if (config_.gpio_output) {
        gpio = std::make_unique<GpioChardevSink>(config_.pin_map);
        scheduler.add_sink(gpio.get());
    }
    for (auto* sink : extra_sinks_)
        scheduler.add_sink(sink);
    std::unique_ptr<ObserverPinSink> observer_pins;
    if (observer_) {
        observer_pins = std::make_unique<ObserverPinSink>(*observer_, config_.pin_map);
        scheduler.add_sink(observer_pins.get());
    }

    std::unique_ptr<Recorder> recorder;
    if (config_.record_path)
        recorder = std::make_unique<Recorder>(*config_.record_path, device, source->session_id());

    {
        std::lock_guard lock(source_mutex_);
        source_ = source.get();
        if (stop_.load())
            source->request_stop();
    }

    SessionSummary summary;
    summary.device = device;
    const auto wall_start = std::chrono::steady_clock::now();
    const std::size_t batch_frames = static_cast<std::size_t>(std::max(1, device.sample_rate_sps / 100));
    BoundedQueue<FrameBatch> queue(64);
    std::exception_ptr producer_error;

    std::thread producer([&] {
        try {
            while (auto batch = source->read(batch_frames)) {
                if (recorder)
                    for (const auto& f : batch->frames)
                        recorder->append(f);
                if (!queue.push(std::move(*batch)))
                    break;
            }
            if (recorder)
                recorder->close();
        } catch (...) {
            producer_error = std::current_exception();
        }
        queue.close();
    });

    const int decimation = std::max(1, (device.sample_rate_sps + kDisplayPointsPerSecond - 1) / kDisplayPointsPerSecond);
    std::uint64_t trace_index = 0;
    SampleChunk chunk;
    std::vector<SpectrumFrame> spectra;
    std::vector<TimedSample> trace;
    std::vector<TimedSample> display;
    std::vector<DetectionEvent> fresh;

    try {
        while (auto batch = queue.pop()) {
            const auto arrival = std::chrono::steady_clock::now();
            if (batch->gap_before) {
                ++summary.gaps;
                spdlog::warn("source gap before frame at {} ns", batch->frames.front().t_ns);
            }
            chunk.samples.clear();
            chunk.gap_before = batch->gap_before;
            for (const auto& f : batch->frames)
                chunk.samples.push_back(to_sample_vector(f, device));
            summary.frames += batch->frames.size();

            spectra.clear();
            trace.clear();
            features.push(chunk, spectra, observer_ ? &trace : nullptr);
            if (observer_) {
                display.clear();
                for (const auto& s : trace)
                    if (trace_index++ % static_cast<std::uint64_t>(decimation) == 0)
                        display.push_back(s);
                if (!display.empty())
                    observer_->on_samples(display);
            }

            for (const auto& spectrum : spectra) {
                ++summary.windows;
                if (observer_)
                    observer_->on_spectrum(spectrum);
                fresh.clear();
                bank_->evaluate(spectrum, fresh);
                for (auto& e : fresh) {
                    if (observer_)
                        observer_->on_event(e);
                    scheduler.on_event(e);
                    const auto delay = std::chrono::steady_clock::now() - arrival;
                    summary.delays.push_back(
                        {e.detector_id, e.t_ns, std::chrono::duration_cast<std::chrono::nanoseconds>(delay).count()});
                    ++summary.events_per_detector[e.detector_id];
                    summary.events.push_back(std::move(e));
                }
            }
            if (!batch->frames.empty())
                scheduler.advance(batch->frames.back().t_ns);
        }
    } catch (...) {
        source->request_stop();
        queue.close();
        producer.join();
        std::lock_guard lock(source_mutex_);
        source_ = nullptr;
        throw;
    }
    producer.join();
    {
        std::lock_guard lock(source_mutex_);
        source_ = nullptr;
    }
    if (producer_error)
        std::rethrow_exception(producer_error);

    scheduler.flush();
    summary.pulses = pulse_log.log();
    summary.stopped_early = stop_.load();
    if (auto* replay = dynamic_cast<ReplaySource*>(source.get()))
        summary.input_truncated = replay->truncated();
    if (const auto* labels = source->labels()) {
        summary.labels = *labels;
        summary.latency = build_latency_report(summary.labels, summary.events, summary.delays);
    }
    summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return summary;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty())
        throw ConfigError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

CalibrationReport calibrate_threshold(std::span<const TimedFrame> frames, const DeviceConfig& device,
                                      const std::vector<BlinkLabel>& labels, int channel, const FilterSpec& filter,
                                      const WindowSpec& window, double band_low_hz, double band_high_hz,
                                      double target_margin) {
    if (labels.empty())
        throw CalibrationError("calibration needs at least one labelled blink", 0.0, 0.0);
    if (frames.empty())
        throw CalibrationError("calibration input is empty", 0.0, 0.0);

    const std::int64_t period = device.sample_period_ns();
    const double total_s = static_cast<double>(frames.size()) / device.sample_rate_sps;
    // Time covered by blink pulses (union), to check there is enough quiet signal.
    double blink_s = 0.0;
    double covered_until = -1e300;
    for (const auto& l : labels) {
        const double start = std::max(l.event.onset_s, covered_until);
        const double end = std::min(l.event.onset_s + l.event.duration_s, total_s);
        if (end > start)
            blink_s += end - start;
        covered_until = std::max(covered_until, l.event.onset_s + l.event.duration_s);
    }
    if (total_s - blink_s < kMinQuietSeconds)
        throw CalibrationError(fmt::format("calibration needs >= {} s of non-blink signal, got {:.2f} s",
                                           kMinQuietSeconds, total_s - blink_s),
                               0.0, 0.0);

    FeatureExtractor features(device, channel, filter, window);
    SampleChunk chunk;
    chunk.samples.reserve(frames.size());
    for (const auto& f : frames)
        chunk.samples.push_back(to_sample_vector(f, device));
    std::vector<SpectrumFrame> spectra;
    features.push(chunk, spectra);

    const auto guard_ns = static_cast<std::int64_t>(kCalibrationGuardS * 1e9);
    CalibrationReport report;
    for (const auto& s : spectra) {
        const std::int64_t t_end = s.t_end_ns;
        const std::int64_t t_start = t_end - (window.length_samples - 1) * period;
        bool whole_blink = false;
        bool touched = false;
        for (const auto& l : labels) {
            const auto dur = static_cast<std::int64_t>(std::llround(l.event.duration_s * 1e9));
            if (l.onset_ns >= t_start && l.onset_ns + dur <= t_end)
                whole_blink = true;
            if (l.onset_ns <= t_end && l.onset_ns + dur + guard_ns >= t_start)
                touched = true;
        }
        const double peak = band_peak(s, band_low_hz, band_high_hz).peak_uv;
        if (whole_blink)
            report.blink_peaks.push_back(peak);
        else if (!touched)
            report.noise_peaks.push_back(peak);
    }
    if (report.blink_peaks.empty())
        throw CalibrationError("no analysis window contains a whole labelled blink", 0.0, 0.0);
    if (report.noise_peaks.empty())
        throw CalibrationError("no analysis window is clear of blinks", 0.0, 0.0);

    report.noise_p99 = percentile(report.noise_peaks, 99.0);
    report.blink_median = percentile(report.blink_peaks, 50.0);
    if (report.blink_median <= report.noise_p99)
        throw CalibrationError(fmt::format("calibration infeasible: blink median {:.3f} uV <= noise p99 {:.3f} uV",
                                           report.blink_median, report.noise_p99),
                               report.noise_p99, report.blink_median);
    report.threshold_uv = report.noise_p99 + target_margin * (report.blink_median - report.noise_p99);
    return report;
}

CalibrationReport calibrate_threshold(FrameSource& source, int channel, const FilterSpec& filter,
                                      const std::optional<WindowSpec>& window, double band_low_hz,
                                      double band_high_hz, double target_margin) {
    const auto* labels = source.labels();
    if (!labels)
        throw CalibrationError("calibration source carries no blink labels", 0.0, 0.0);
    std::vector<TimedFrame> frames;
    while (auto batch = source.read(4096))
        frames.insert(frames.end(), batch->frames.begin(), batch->frames.end());
    const DeviceConfig& device = source.device();
    return calibrate_threshold(frames, device, *labels, channel, filter,
                               window ? *window : WindowSpec::default_for(device.sample_rate_sps), band_low_hz,
                               band_high_hz, target_margin);
}

} // namespace pieeg
