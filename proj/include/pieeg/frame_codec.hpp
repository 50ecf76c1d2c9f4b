#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>

namespace pieeg {

inline constexpr int kChannelCount = 8;
inline constexpr std::size_t kFrameBytes = 27;
inline constexpr std::int32_t kCodeMin = -(1 << 23);
inline constexpr std::int32_t kCodeMax = (1 << 23) - 1;
inline constexpr double kFullScaleCounts = 8388608.0; // 2^23

inline constexpr std::array<int, 7> kSupportedRates = {250, 500, 1000, 2000, 4000, 8000, 16000};
inline constexpr std::array<int, 7> kSupportedGains = {1, 2, 4, 6, 8, 12, 24};

bool is_supported_rate(int sps);
bool is_supported_gain(int gain);

// Acquisition parameters of the shield. Governs code <-> volts conversion.
struct DeviceConfig {
    int sample_rate_sps = 250;
    int gain = 24;
    double vref_volts = 4.5;
    int channel_count = kChannelCount;
    std::map<std::string, std::string> metadata;

    // Throws ConfigError naming the first violated invariant.
    void validate() const;

    double lsb_volts() const { return vref_volts / (gain * kFullScaleCounts); }
    double full_scale_volts() const { return vref_volts / gain; }
    // Interval between samples; exact for every supported rate.
    std::int64_t sample_period_ns() const { return 1'000'000'000LL / sample_rate_sps; }
};

// One ADS1299 data frame: 24-bit status word + 8 sign-extended channel codes.
struct RawFrame {
    std::uint32_t status = 0;
    std::array<std::int32_t, kChannelCount> channel_raw{};

    bool operator==(const RawFrame&) const = default;
};

struct TimedFrame {
    std::int64_t t_ns = 0;
    RawFrame frame;

    bool operator==(const TimedFrame&) const = default;
};

struct SampleVector {
    std::int64_t t_ns = 0;
    std::array<double, kChannelCount> volts{};
};

using FrameBytes = std::array<std::uint8_t, kFrameBytes>;

// Layout: bytes 0-2 status, then channel k at bytes 3+3k..5+3k, all big-endian,
// channels two's complement. Any 27 bytes decode; other lengths throw FormatError.
RawFrame decode_frame(std::span<const std::uint8_t> bytes);

// Throws RangeError if a channel code leaves the signed 24-bit range or the
// status word does not fit 24 bits.
FrameBytes encode_frame(const RawFrame& frame);

inline double raw_to_volts(std::int32_t code, const DeviceConfig& config) {
    return static_cast<double>(code) * config.vref_volts / (config.gain * kFullScaleCounts);
}

// Nearest code for a voltage, saturating at the 24-bit rails.
std::int32_t volts_to_raw(double volts, const DeviceConfig& config);

SampleVector to_sample_vector(const TimedFrame& frame, const DeviceConfig& config);

} // namespace pieeg
