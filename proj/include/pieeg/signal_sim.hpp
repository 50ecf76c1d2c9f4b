#pragma once

#include "pieeg/frame_codec.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

namespace pieeg {

struct BlinkEvent {
    double onset_s = 0.0;
    double duration_s = 0.3;
    double amplitude_uv = 100.0;

    bool operator==(const BlinkEvent&) const = default;
};

struct BlinkScript {
    std::vector<BlinkEvent> events;
    // Per-channel scaling of the artifact; a blink shows up on every channel.
    std::array<double, kChannelCount> channel_gains{1, 1, 1, 1, 1, 1, 1, 1};

    void validate() const;
};

struct NoiseModel {
    double white_rms_uv = 0.8;
    double pink_rms_uv = 2.0;
    double mains_hz = 0.0;
    double mains_amplitude_uv = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
    static NoiseModel silent(std::uint64_t seed = 1) { return {0.0, 0.0, 0.0, 0.0, seed}; }
};

// Ground truth for one scripted blink, carried alongside (never inside) the frames.
struct BlinkLabel {
    std::int64_t onset_sample = 0;
    std::int64_t onset_ns = 0;
    BlinkEvent event;
};

// Label track for a script at a device's rate: onset_sample is the first
// sample at or after the scripted onset.
std::vector<BlinkLabel> labels_for(const BlinkScript& script, const DeviceConfig& device);

// `count` blinks spaced 1/rate_hz apart from start_s, each lasting
// min(0.3 s, 0.8/rate_hz). Rates above 8 Hz are rejected.
BlinkScript blink_rate_script(double rate_hz, int count, double start_s, double amplitude_uv);

// Text format: one `onset_s,duration_s,amplitude_uv` per line, `#` starts a comment.
BlinkScript parse_script(std::istream& in);
BlinkScript load_script(const std::filesystem::path& path);
void write_script(std::ostream& out, const std::vector<BlinkEvent>& events);
void write_labels(std::ostream& out, const std::vector<BlinkLabel>& labels);

// Raised-cosine pulse value at time t (seconds), 0 outside [onset, onset + duration].
double blink_pulse_uv(const BlinkEvent& event, double t_s);

// Pull-based synthetic source. Emits round(duration_s * rate) frames of
// noise + scripted blinks quantized through the device's code scale.
// Output is a pure function of the constructor arguments.
class Simulator {
public:
    Simulator(double duration_s, DeviceConfig device, BlinkScript script, NoiseModel noise);

    std::optional<TimedFrame> next();

    std::int64_t total_frames() const { return total_frames_; }
    std::int64_t emitted() const { return index_; }
    const DeviceConfig& device() const { return device_; }
    const std::vector<BlinkLabel>& labels() const { return labels_; }

private:
    struct PinkState {
        std::array<double, 16> rows{};
        double sum = 0.0;
    };

    double noise_uv(int channel, double t_s);

    DeviceConfig device_;
    BlinkScript script_;
    NoiseModel noise_;
    std::int64_t total_frames_ = 0;
    std::int64_t index_ = 0;
    std::size_t first_live_event_ = 0;
    std::vector<BlinkLabel> labels_;
    std::array<std::mt19937_64, kChannelCount> rngs_;
    std::array<PinkState, kChannelCount> pink_{};
    std::normal_distribution<double> unit_normal_{0.0, 1.0};
};

// Convenience for tests and calibration: drain a simulator completely.
std::vector<TimedFrame> generate(double duration_s, const DeviceConfig& device, const BlinkScript& script,
                                 const NoiseModel& noise, std::vector<BlinkLabel>* labels = nullptr);

} // namespace pieeg
