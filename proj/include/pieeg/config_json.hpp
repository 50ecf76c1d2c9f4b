#pragma once

#include "pieeg/actuation.hpp"
#include "pieeg/blink_detector.hpp"
#include "pieeg/dsp.hpp"
#include "pieeg/frame_codec.hpp"
#include "pieeg/session.hpp"

#include <filesystem>

#include <nlohmann/json.hpp>

namespace pieeg {

// Insertion-ordered so that wire messages read in the documented field order.
using Json = nlohmann::ordered_json;

Json to_json(const DeviceConfig& device);
Json to_json(const FilterSpec& filter);
Json to_json(const WindowSpec& window);
Json to_json(const DetectorConfig& detector);
Json to_json(const DetectionEvent& event);
Json to_json(const PinMap& map);
Json to_json(const SourceSpec& source);
Json to_json(const SessionConfig& config);
Json to_json(const SpectrumFrame& spectrum);

// Readers start from the defaults and override the keys present. Wrong
// types or values raise ConfigError.
DeviceConfig device_from_json(const Json& j, DeviceConfig base = {});
FilterSpec filter_from_json(const Json& j, FilterSpec base = {});
WindowSpec window_from_json(const Json& j, WindowSpec base = {});
DetectorConfig detector_from_json(const Json& j, DetectorConfig base = {});
PinMap pin_map_from_json(const Json& j);
SourceSpec source_from_json(const Json& j, SourceSpec base = {});
SessionConfig session_from_json(const Json& j, SessionConfig base = {});

SessionConfig load_session_config(const std::filesystem::path& path);

} // namespace pieeg
