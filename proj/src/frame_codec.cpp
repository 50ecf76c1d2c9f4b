#include "pieeg/frame_codec.hpp"

#include "pieeg/errors.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pieeg {

bool is_supported_rate(int sps) {
    return std::find(kSupportedRates.begin(), kSupportedRates.end(), sps) != kSupportedRates.end();
}

bool is_supported_gain(int gain) {
    return std::find(kSupportedGains.begin(), kSupportedGains.end(), gain) != kSupportedGains.end();
}

void DeviceConfig::validate() const {
    if (!is_supported_rate(sample_rate_sps))
        throw ConfigError(fmt::format("sample rate {} SPS not in {{250..16000}}", sample_rate_sps));
    if (!is_supported_gain(gain))
        throw ConfigError(fmt::format("gain {} not in {{1,2,4,6,8,12,24}}", gain));
    if (channel_count != kChannelCount)
        throw ConfigError(fmt::format("channel_count must be {}, got {}", kChannelCount, channel_count));
    if (!(vref_volts > 0.0))
        throw ConfigError(fmt::format("vref_volts must be > 0, got {}", vref_volts));
}

namespace {

std::uint32_t read_be24(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 16) | (std::uint32_t{p[1]} << 8) | std::uint32_t{p[2]};
}

void write_be24(std::uint8_t* p, std::uint32_t v) {
    p[0] = static_cast<std::uint8_t>((v >> 16) & 0xFF);
    p[1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
    p[2] = static_cast<std::uint8_t>(v & 0xFF);
}

std::int32_t sign_extend24(std::uint32_t v) {
    return (v & 0x800000u) ? static_cast<std::int32_t>(v) - (1 << 24) : static_cast<std::int32_t>(v);
}

} // namespace

RawFrame decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kFrameBytes)
        throw FormatError(fmt::format("malformed frame: expected {} bytes, got {}", kFrameBytes, bytes.size()));
    RawFrame frame;
    frame.status = read_be24(bytes.data());
    for (int k = 0; k < kChannelCount; ++k)
        frame.channel_raw[k] = sign_extend24(read_be24(bytes.data() + 3 + 3 * k));
    return frame;
}

FrameBytes encode_frame(const RawFrame& frame) {
    if (frame.status > 0xFFFFFFu)
        throw RangeError(fmt::format("status word 0x{:X} exceeds 24 bits", frame.status));
    FrameBytes out{};
    write_be24(out.data(), frame.status);
    for (int k = 0; k < kChannelCount; ++k) {
        const std::int32_t code = frame.channel_raw[k];
        if (code < kCodeMin || code > kCodeMax)
            throw RangeError(fmt::format("channel {} code {} outside 24-bit signed range", k, code));
        write_be24(out.data() + 3 + 3 * k, static_cast<std::uint32_t>(code) & 0xFFFFFFu);
    }
    return out;
}

std::int32_t volts_to_raw(double volts, const DeviceConfig& config) {
    const double counts = std::nearbyint(volts * config.gain * kFullScaleCounts / config.vref_volts);
    return static_cast<std::int32_t>(std::clamp(counts, double{kCodeMin}, double{kCodeMax}));
}

SampleVector to_sample_vector(const TimedFrame& frame, const DeviceConfig& config) {
    SampleVector out;
    out.t_ns = frame.t_ns;
    for (int k = 0; k < kChannelCount; ++k)
        out.volts[k] = raw_to_volts(frame.frame.channel_raw[k], config);
    return out;
}

} // namespace pieeg
