#pragma once

#include "pieeg/frame_codec.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

namespace pieeg {

// On-disk layout, all integers little-endian:
//   header (32 bytes): "PIEG", version u8 = 1, channel_count u8, gain u8, pad u8,
//                      sample_rate_sps u32, vref_microvolts u32, session_id u64, 8 zero bytes
//   record (44 bytes): t_ns u64, status u32, 8 x channel code i32
inline constexpr std::size_t kHeaderBytes = 32;
inline constexpr std::size_t kRecordBytes = 44;
inline constexpr std::uint8_t kFormatVersion = 1;

struct RecordingHeader {
    std::uint8_t version = kFormatVersion;
    std::uint8_t channel_count = kChannelCount;
    std::uint8_t gain = 24;
    std::uint32_t sample_rate_sps = 250;
    std::uint32_t vref_microvolts = 4'500'000;
    std::uint64_t session_id = 0;

    static RecordingHeader from_device(const DeviceConfig& device, std::uint64_t session_id);
    DeviceConfig device() const;
    bool operator==(const RecordingHeader&) const = default;
};

std::array<std::uint8_t, kHeaderBytes> encode_header(const RecordingHeader& header);
// Checks magic, version, channel count, rate and gain; FormatError otherwise.
RecordingHeader decode_header(std::span<const std::uint8_t> bytes);

std::array<std::uint8_t, kRecordBytes> encode_record(const TimedFrame& frame);
TimedFrame decode_record(std::span<const std::uint8_t> bytes);

// Appends frames to a recording. Write failures raise SourceError; whatever
// reached the disk is still a valid prefix.
class Recorder {
public:
    Recorder(const std::filesystem::path& path, const DeviceConfig& device, std::uint64_t session_id);
    ~Recorder();
    Recorder(const Recorder&) = delete;
    Recorder& operator=(const Recorder&) = delete;

    void append(const TimedFrame& frame);
    void close();

    std::uint64_t frames_written() const { return frames_written_; }

private:
    void check(const char* what);

    std::filesystem::path path_;
    std::ofstream out_;
    std::uint64_t frames_written_ = 0;
};

void record(std::span<const TimedFrame> frames, const DeviceConfig& device, const std::filesystem::path& path,
            std::uint64_t session_id = 0);

// Sequential reader. A trailing partial record ends the stream with
// truncated() set; header problems throw FormatError from the constructor.
class ReplayReader {
public:
    explicit ReplayReader(const std::filesystem::path& path);

    const RecordingHeader& header() const { return header_; }
    DeviceConfig device() const { return header_.device(); }

    std::optional<TimedFrame> next();
    bool truncated() const { return truncated_; }
    std::uint64_t frames_read() const { return frames_read_; }

private:
    std::ifstream in_;
    RecordingHeader header_;
    std::uint64_t frames_read_ = 0;
    bool truncated_ = false;
    bool done_ = false;
};

} // namespace pieeg
