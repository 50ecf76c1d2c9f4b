#include "pieeg/config_json.hpp"

#include "pieeg/errors.hpp"

#include <fstream>

#include <fmt/format.h>

namespace pieeg {

namespace {

template <typename T>
void read_if(const Json& j, const char* key, T& out) {
    if (!j.contains(key) || j.at(key).is_null())
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
    }
}

void require_object(const Json& j, const char* what) {
    if (!j.is_object())
        throw ConfigError(fmt::format("{} must be a JSON object", what));
}

Json optional_path(const std::optional<std::filesystem::path>& p) {
    return p ? Json(p->string()) : Json(nullptr);
}

} // namespace

Json to_json(const DeviceConfig& device) {
    Json j;
    j["sample_rate_sps"] = device.sample_rate_sps;
    j["gain"] = device.gain;
    j["vref_volts"] = device.vref_volts;
    j["channel_count"] = device.channel_count;
    j["metadata"] = Json::object();
    for (const auto& [k, v] : device.metadata)
        j["metadata"][k] = v;
    return j;
}

Json to_json(const FilterSpec& filter) {
    return Json{{"low_hz", filter.low_hz}, {"high_hz", filter.high_hz}, {"order", filter.order},
                {"design", "butterworth"}};
}

Json to_json(const WindowSpec& window) {
    return Json{{"length_samples", window.length_samples},
                {"hop_samples", window.hop_samples},
                {"taper", std::string(to_string(window.taper))}};
}

Json to_json(const DetectorConfig& detector) {
    Json j;
    j["detector_id"] = detector.detector_id;
    j["band_low_hz"] = detector.band_low_hz;
    j["band_high_hz"] = detector.band_high_hz;
    j["threshold_uv"] = detector.threshold_uv ? Json(*detector.threshold_uv) : Json(nullptr);
    j["refractory_s"] = detector.refractory_s;
    j["enabled"] = detector.enabled;
    return j;
}

Json to_json(const DetectionEvent& event) {
    Json j;
    j["detector_id"] = event.detector_id;
    j["t_ns"] = event.t_ns;
    j["peak_hz"] = event.peak_hz;
    j["peak_uv"] = event.peak_uv;
    j["threshold_uv"] = event.threshold_uv;
    return j;
}

Json to_json(const PinMap& map) {
    Json j = Json::object();
    for (const auto& [id, a] : map.entries)
        j[id] = Json{{"pin", a.pin},
                     {"pulse_ms", a.pulse_ms},
                     {"active_level", a.active_level == ActiveLevel::high ? "high" : "low"}};
    return j;
}

Json to_json(const SourceSpec& source) {
    Json j;
    j["kind"] = std::string(to_string(source.kind));
    j["speed"] = source.speed;
    j["duration_s"] = source.duration_s;
    Json script = Json::array();
    for (const auto& e : source.script.events)
        script.push_back(Json{{"onset_s", e.onset_s}, {"duration_s", e.duration_s}, {"amplitude_uv", e.amplitude_uv}});
    j["script"] = script;
    j["channel_gains"] = source.script.channel_gains;
    j["script_path"] = optional_path(source.script_path);
    j["noise"] = Json{{"white_rms_uv", source.noise.white_rms_uv},
                      {"pink_rms_uv", source.noise.pink_rms_uv},
                      {"mains_hz", source.noise.mains_hz},
                      {"mains_amplitude_uv", source.noise.mains_amplitude_uv},
                      {"seed", source.noise.seed}};
    j["replay_path"] = source.replay_path.string();
    j["labels_path"] = optional_path(source.labels_path);
    j["hardware"] = Json{{"spi_device", source.hardware.spi_device},
                         {"spi_hz", source.hardware.spi_hz},
                         {"gpio_chip", source.hardware.gpio_chip},
                         {"drdy_bcm_line", source.hardware.drdy_bcm_line}};
    return j;
}

Json to_json(const SessionConfig& config) {
    Json j;
    j["device"] = to_json(config.device);
    j["source"] = to_json(config.source);
    j["analysis_channel"] = config.analysis_channel;
    j["filter"] = to_json(config.filter);
    j["window"] = config.window ? to_json(*config.window) : Json(nullptr);
    j["detectors"] = Json::array();
    for (const auto& d : config.detectors)
        j["detectors"].push_back(to_json(d));
    j["pin_map"] = to_json(config.pin_map);
    j["record_path"] = optional_path(config.record_path);
    j["gpio_output"] = config.gpio_output;
    return j;
}

Json to_json(const SpectrumFrame& spectrum) {
    Json j;
    j["t_end_ns"] = spectrum.t_end_ns;
    j["bin_hz"] = spectrum.bin_hz;
    j["amplitudes_uv"] = spectrum.amplitudes_uv;
    return j;
}

DeviceConfig device_from_json(const Json& j, DeviceConfig base) {
    require_object(j, "device");
    read_if(j, "sample_rate_sps", base.sample_rate_sps);
    read_if(j, "gain", base.gain);
    read_if(j, "vref_volts", base.vref_volts);
    read_if(j, "channel_count", base.channel_count);
    read_if(j, "metadata", base.metadata);
    return base;
}

FilterSpec filter_from_json(const Json& j, FilterSpec base) {
    require_object(j, "filter");
    read_if(j, "low_hz", base.low_hz);
    read_if(j, "high_hz", base.high_hz);
    read_if(j, "order", base.order);
    std::string design = "butterworth";
    read_if(j, "design", design);
    if (design != "butterworth")
        throw ConfigError(fmt::format("unsupported filter design '{}'", design));
    return base;
}

WindowSpec window_from_json(const Json& j, WindowSpec base) {
    require_object(j, "window");
    read_if(j, "length_samples", base.length_samples);
    read_if(j, "hop_samples", base.hop_samples);
    std::string taper(to_string(base.taper));
    read_if(j, "taper", taper);
    base.taper = taper_from_string(taper);
    return base;
}

DetectorConfig detector_from_json(const Json& j, DetectorConfig base) {
    require_object(j, "detector");
    read_if(j, "detector_id", base.detector_id);
    read_if(j, "band_low_hz", base.band_low_hz);
    read_if(j, "band_high_hz", base.band_high_hz);
    if (j.contains("threshold_uv")) {
        if (j.at("threshold_uv").is_null())
            base.threshold_uv.reset();
        else
            read_if(j, "threshold_uv", base.threshold_uv.emplace());
    }
    read_if(j, "refractory_s", base.refractory_s);
    read_if(j, "enabled", base.enabled);
    return base;
}

PinMap pin_map_from_json(const Json& j) {
    require_object(j, "pin_map");
    PinMap map;
    for (const auto& [id, entry] : j.items()) {
        require_object(entry, "pin_map entry");
        PinAssignment a;
        read_if(entry, "pin", a.pin);
        read_if(entry, "pulse_ms", a.pulse_ms);
        std::string level = "high";
        read_if(entry, "active_level", level);
        if (level != "high" && level != "low")
            throw ConfigError(fmt::format("pin_map {}: active_level must be high or low", id));
        a.active_level = level == "high" ? ActiveLevel::high : ActiveLevel::low;
        map.entries[id] = a;
    }
    return map;
}

SourceSpec source_from_json(const Json& j, SourceSpec base) {
    require_object(j, "source");
    std::string kind(to_string(base.kind));
    read_if(j, "kind", kind);
    base.kind = source_kind_from_string(kind);
    read_if(j, "speed", base.speed);
    read_if(j, "duration_s", base.duration_s);
    if (j.contains("script") && j.at("script").is_array()) {
        base.script.events.clear();
        for (const auto& e : j.at("script")) {
            BlinkEvent ev;
            read_if(e, "onset_s", ev.onset_s);
            read_if(e, "duration_s", ev.duration_s);
            read_if(e, "amplitude_uv", ev.amplitude_uv);
            base.script.events.push_back(ev);
        }
    }
    read_if(j, "channel_gains", base.script.channel_gains);
    if (j.contains("script_path"))
        base.script_path = j.at("script_path").is_null()
                               ? std::nullopt
                               : std::optional<std::filesystem::path>(j.at("script_path").get<std::string>());
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        require_object(n, "noise");
        read_if(n, "white_rms_uv", base.noise.white_rms_uv);
        read_if(n, "pink_rms_uv", base.noise.pink_rms_uv);
        read_if(n, "mains_hz", base.noise.mains_hz);
        read_if(n, "mains_amplitude_uv", base.noise.mains_amplitude_uv);
        read_if(n, "seed", base.noise.seed);
    }
    std::string replay = base.replay_path.string();
    read_if(j, "replay_path", replay);
    base.replay_path = replay;
    if (j.contains("labels_path"))
        base.labels_path = j.at("labels_path").is_null()
                               ? std::nullopt
                               : std::optional<std::filesystem::path>(j.at("labels_path").get<std::string>());
    if (j.contains("hardware")) {
        const auto& h = j.at("hardware");
        require_object(h, "hardware");
        read_if(h, "spi_device", base.hardware.spi_device);
        read_if(h, "spi_hz", base.hardware.spi_hz);
        read_if(h, "gpio_chip", base.hardware.gpio_chip);
        read_if(h, "drdy_bcm_line", base.hardware.drdy_bcm_line);
    }
    base.script.validate();
    return base;
}

SessionConfig session_from_json(const Json& j, SessionConfig base) {
    require_object(j, "session config");
    try {
        if (j.contains("device"))
            base.device = device_from_json(j.at("device"), base.device);
        if (j.contains("source"))
            base.source = source_from_json(j.at("source"), base.source);
        read_if(j, "analysis_channel", base.analysis_channel);
        if (j.contains("filter"))
            base.filter = filter_from_json(j.at("filter"), base.filter);
        if (j.contains("window")) {
            if (j.at("window").is_null())
                base.window.reset();
            else
                base.window = window_from_json(j.at("window"),
                                               base.window.value_or(WindowSpec::default_for(base.device.sample_rate_sps)));
        }
        if (j.contains("detectors")) {
            if (!j.at("detectors").is_array())
                throw ConfigError("detectors must be an array");
            base.detectors.clear();
            for (const auto& d : j.at("detectors"))
                base.detectors.push_back(detector_from_json(d));
        }
        if (j.contains("pin_map"))
            base.pin_map = pin_map_from_json(j.at("pin_map"));
        if (j.contains("record_path"))
            base.record_path = j.at("record_path").is_null()
                                   ? std::nullopt
                                   : std::optional<std::filesystem::path>(j.at("record_path").get<std::string>());
        read_if(j, "gpio_output", base.gpio_output);
    } catch (const Json::exception& e) {
        throw ConfigError(fmt::format("session config: {}", e.what()));
    }
    return base;
}

SessionConfig load_session_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open config file {}", path.string()));
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(fmt::format("config file {}: {}", path.string(), e.what()));
    }
    return session_from_json(j);
}

} // namespace pieeg
