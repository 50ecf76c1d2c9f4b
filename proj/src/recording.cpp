#include "pieeg/recording.hpp"

#include "pieeg/errors.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pieeg {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'P', 'I', 'E', 'G'};

template <typename T>
void put_le(std::uint8_t* p, T value) {
    auto v = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i)
        p[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
}

template <typename T>
T get_le(const std::uint8_t* p) {
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::make_unsigned_t<T>>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace

RecordingHeader RecordingHeader::from_device(const DeviceConfig& device, std::uint64_t session_id) {
    device.validate();
    RecordingHeader h;
    h.channel_count = static_cast<std::uint8_t>(device.channel_count);
    h.gain = static_cast<std::uint8_t>(device.gain);
    h.sample_rate_sps = static_cast<std::uint32_t>(device.sample_rate_sps);
    h.vref_microvolts = static_cast<std::uint32_t>(std::llround(device.vref_volts * 1e6));
    h.session_id = session_id;
    return h;
}

DeviceConfig RecordingHeader::device() const {
    DeviceConfig d;
    d.sample_rate_sps = static_cast<int>(sample_rate_sps);
    d.gain = gain;
    d.vref_volts = vref_microvolts * 1e-6;
    d.channel_count = channel_count;
    return d;
}

std::array<std::uint8_t, kHeaderBytes> encode_header(const RecordingHeader& header) {
    std::array<std::uint8_t, kHeaderBytes> out{};
    std::memcpy(out.data(), kMagic.data(), kMagic.size());
    out[4] = header.version;
    out[5] = header.channel_count;
    out[6] = header.gain;
    out[7] = 0;
    put_le<std::uint32_t>(out.data() + 8, header.sample_rate_sps);
    put_le<std::uint32_t>(out.data() + 12, header.vref_microvolts);
    put_le<std::uint64_t>(out.data() + 16, header.session_id);
    return out;
}

RecordingHeader decode_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes)
        throw FormatError(fmt::format("recording header truncated: {} of {} bytes", bytes.size(), kHeaderBytes));
    if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw FormatError("unsupported recording format: bad magic");
    RecordingHeader h;
    h.version = bytes[4];
    h.channel_count = bytes[5];
    h.gain = bytes[6];
    h.sample_rate_sps = get_le<std::uint32_t>(bytes.data() + 8);
    h.vref_microvolts = get_le<std::uint32_t>(bytes.data() + 12);
    h.session_id = get_le<std::uint64_t>(bytes.data() + 16);
    if (h.version != kFormatVersion)
        throw FormatError(fmt::format("unsupported recording format version {}", h.version));
    if (h.channel_count != kChannelCount)
        throw FormatError(fmt::format("recording has {} channels, expected {}", h.channel_count, kChannelCount));
    if (!is_supported_rate(static_cast<int>(h.sample_rate_sps)))
        throw FormatError(fmt::format("recording sample rate {} SPS unsupported", h.sample_rate_sps));
    if (!is_supported_gain(h.gain))
        throw FormatError(fmt::format("recording gain {} unsupported", h.gain));
    if (h.vref_microvolts == 0)
        throw FormatError("recording reference voltage is zero");
    return h;
}

std::array<std::uint8_t, kRecordBytes> encode_record(const TimedFrame& frame) {
    std::array<std::uint8_t, kRecordBytes> out{};
    put_le<std::int64_t>(out.data(), frame.t_ns);
    put_le<std::uint32_t>(out.data() + 8, frame.frame.status);
    for (int k = 0; k < kChannelCount; ++k)
        put_le<std::int32_t>(out.data() + 12 + 4 * k, frame.frame.channel_raw[k]);
    return out;
}

TimedFrame decode_record(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kRecordBytes)
        throw FormatError(fmt::format("record must be {} bytes, got {}", kRecordBytes, bytes.size()));
    TimedFrame f;
    f.t_ns = get_le<std::int64_t>(bytes.data());
    f.frame.status = get_le<std::uint32_t>(bytes.data() + 8);
    for (int k = 0; k < kChannelCount; ++k)
        f.frame.channel_raw[k] = get_le<std::int32_t>(bytes.data() + 12 + 4 * k);
    return f;
}

Recorder::Recorder(const std::filesystem::path& path, const DeviceConfig& device, std::uint64_t session_id)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_)
        throw SourceError(fmt::format("cannot open recording {} for writing", path.string()));
    const auto header = encode_header(RecordingHeader::from_device(device, session_id));
    out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
    check("header");
}

Recorder::~Recorder() {
    if (out_.is_open()) {
        out_.flush();
        out_.close();
    }
}

void Recorder::check(const char* what) {
    if (!out_)
        throw SourceError(fmt::format("writing {} to {} failed after {} frames", what, path_.string(),
                                      frames_written_));
}

void Recorder::append(const TimedFrame& frame) {
    const auto rec = encode_record(frame);
    out_.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    check("record");
    ++frames_written_;
}

void Recorder::close() {
    if (!out_.is_open())
        return;
    out_.flush();
    check("final flush");
    out_.close();
}

void record(std::span<const TimedFrame> frames, const DeviceConfig& device, const std::filesystem::path& path,
            std::uint64_t session_id) {
    Recorder rec(path, device, session_id);
    for (const auto& f : frames)
        rec.append(f);
    rec.close();
}

ReplayReader::ReplayReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_)
        throw SourceError(fmt::format("cannot open recording {}", path.string()));
    std::array<std::uint8_t, kHeaderBytes> buf{};
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    header_ = decode_header(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(in_.gcount())));
}

std::optional<TimedFrame> ReplayReader::next() {
    if (done_)
        return std::nullopt;
    std::array<std::uint8_t, kRecordBytes> buf{};
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got < kRecordBytes) {
        done_ = true;
        if (got > 0) {
            truncated_ = true;
            spdlog::warn("recording truncated: {} trailing bytes after {} complete records", got, frames_read_);
        }
        return std::nullopt;
    }
    ++frames_read_;
    return decode_record(buf);
}

} // namespace pieeg
