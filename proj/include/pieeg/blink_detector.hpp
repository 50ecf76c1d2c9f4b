#pragma once

#include "pieeg/dsp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pieeg {

// Band and threshold for one detector. An absent threshold is the
// "uncalibrated" sentinel: such a detector cannot be enabled.
struct DetectorConfig {
    std::string detector_id;
    double band_low_hz = 0.0;
    double band_high_hz = 0.0;
    std::optional<double> threshold_uv;
    double refractory_s = 1.0;
    bool enabled = false;

    // Throws ConfigError with the reason; messages are shown to operators verbatim.
    void validate() const;
    bool operator==(const DetectorConfig&) const = default;
};

struct DetectionEvent {
    std::string detector_id;
    std::int64_t t_ns = 0;
    double peak_hz = 0.0;
    double peak_uv = 0.0;
    double threshold_uv = 0.0;

    bool operator==(const DetectionEvent&) const = default;
};

// bandA 3-7 Hz and bandB 1-3 Hz, uncalibrated and disabled.
std::vector<DetectorConfig> default_bank();

// Level trigger with refractory hold-off over a stream of spectra.
class Detector {
public:
    explicit Detector(DetectorConfig config);

    std::optional<DetectionEvent> evaluate(const SpectrumFrame& spectrum);

    // Applies from the next spectrum on; keeps the refractory clock. On a
    // rejected config the previous one stays active and ConfigError propagates.
    const DetectorConfig& update_config(const DetectorConfig& next);

    const DetectorConfig& config() const { return config_; }
    std::optional<std::int64_t> last_event_ns() const { return last_event_ns_; }
    void reset_clock();

private:
    DetectorConfig config_;
    std::optional<std::int64_t> last_event_ns_;
    std::optional<std::int64_t> last_seen_ns_;
};

// All detectors evaluate every spectrum of the single analysis channel.
class DetectorBank {
public:
    DetectorBank() = default;
    explicit DetectorBank(const std::vector<DetectorConfig>& configs);

    void evaluate(const SpectrumFrame& spectrum, std::vector<DetectionEvent>& out);

    // Replaces the config with the same detector_id. Unknown ids -> ConfigError.
    const DetectorConfig& update_config(const DetectorConfig& next);
    const DetectorConfig& config(const std::string& detector_id) const;
    std::vector<DetectorConfig> configs() const;
    void reset_clocks();

private:
    Detector& find(const std::string& detector_id);
    std::vector<Detector> detectors_;
};

} // namespace pieeg
