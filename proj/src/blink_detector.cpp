#include "pieeg/blink_detector.hpp"

#include "pieeg/errors.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pieeg {

void DetectorConfig::validate() const {
    if (detector_id.empty())
        throw ConfigError("detector_id must not be empty");
    if (!std::isfinite(band_low_hz) || !std::isfinite(band_high_hz))
        throw ConfigError("band edges must be finite");
    if (band_low_hz < 0.0)
        throw ConfigError("band low edge must be >= 0");
    if (!(band_low_hz < band_high_hz))
        throw ConfigError("low ≥ high");
    if (threshold_uv && !(*threshold_uv > 0.0))
        throw ConfigError("threshold must be > 0 uV");
    if (!(refractory_s >= 0.0) || !std::isfinite(refractory_s))
        throw ConfigError("refractory must be >= 0 s");
    if (enabled && !threshold_uv)
        throw ConfigError("threshold not calibrated; set a threshold before enabling");
}

std::vector<DetectorConfig> default_bank() {
    return {
        {"bandA", 3.0, 7.0, std::nullopt, 1.0, false},
        {"bandB", 1.0, 3.0, std::nullopt, 1.0, false},
    };
}

Detector::Detector(DetectorConfig config) : config_(std::move(config)) {
    config_.validate();
}

void Detector::reset_clock() {
    last_event_ns_.reset();
    last_seen_ns_.reset();
}

std::optional<DetectionEvent> Detector::evaluate(const SpectrumFrame& spectrum) {
    if (!config_.enabled)
        return std::nullopt;
    if (last_seen_ns_ && spectrum.t_end_ns < *last_seen_ns_)
        throw StreamIntegrityError(fmt::format("detector {}: spectrum at {} ns arrived after {} ns",
                                               config_.detector_id, spectrum.t_end_ns, *last_seen_ns_));
    last_seen_ns_ = spectrum.t_end_ns;

    const BandPeak peak = band_peak(spectrum, config_.band_low_hz, config_.band_high_hz);
    const double threshold = *config_.threshold_uv;
    if (peak.peak_uv < threshold)
        return std::nullopt;
    const auto refractory_ns = static_cast<std::int64_t>(std::llround(config_.refractory_s * 1e9));
    if (last_event_ns_ && spectrum.t_end_ns - *last_event_ns_ < refractory_ns)
        return std::nullopt;

    last_event_ns_ = spectrum.t_end_ns;
    return DetectionEvent{config_.detector_id, spectrum.t_end_ns, peak.peak_hz, peak.peak_uv, threshold};
}

const DetectorConfig& Detector::update_config(const DetectorConfig& next) {
    next.validate();
    if (next.detector_id != config_.detector_id)
        throw ConfigError(fmt::format("cannot rename detector {} to {}", config_.detector_id, next.detector_id));
    config_ = next;
    return config_;
}

DetectorBank::DetectorBank(const std::vector<DetectorConfig>& configs) {
    for (const auto& c : configs) {
        for (const auto& d : detectors_)
            if (d.config().detector_id == c.detector_id)
                throw ConfigError(fmt::format("duplicate detector_id {}", c.detector_id));
        detectors_.emplace_back(c);
    }
}

void DetectorBank::evaluate(const SpectrumFrame& spectrum, std::vector<DetectionEvent>& out) {
    for (auto& d : detectors_)
        if (auto e = d.evaluate(spectrum))
            out.push_back(std::move(*e));
}

namespace {

template <typename Range>
auto& find_detector(Range& detectors, const std::string& detector_id) {
    for (auto& d : detectors)
        if (d.config().detector_id == detector_id)
            return d;
    throw ConfigError(fmt::format("unknown detector '{}'", detector_id));
}

} // namespace

Detector& DetectorBank::find(const std::string& detector_id) {
    return find_detector(detectors_, detector_id);
}

const DetectorConfig& DetectorBank::update_config(const DetectorConfig& next) {
    return find(next.detector_id).update_config(next);
}

const DetectorConfig& DetectorBank::config(const std::string& detector_id) const {
    return find_detector(detectors_, detector_id).config();
}

std::vector<DetectorConfig> DetectorBank::configs() const {
    std::vector<DetectorConfig> out;
    out.reserve(detectors_.size());
    for (const auto& d : detectors_)
        out.push_back(d.config());
    return out;
}

void DetectorBank::reset_clocks() {
    for (auto& d : detectors_)
        d.reset_clock();
}

} // namespace pieeg
