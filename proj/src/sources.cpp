#include "pieeg/sources.hpp"

#include "pieeg/errors.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>

#include <fcntl.h>
#include <linux/gpio.h>
#include <linux/spi/spidev.h>
#include <poll.h>
#include <sys/ioctl.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pieeg {

void Pacer::anchor(std::int64_t t_ns) {
    if (started_)
        return;
    started_ = true;
    origin_ns_ = t_ns;
    wall_origin_ = std::chrono::steady_clock::now();
}

void Pacer::wait_until(std::int64_t t_ns, const std::atomic<bool>& stop) {
    if (speed_ <= 0.0)
        return;
    anchor(t_ns);
    const auto offset = std::chrono::nanoseconds(
        static_cast<std::int64_t>(static_cast<double>(t_ns - origin_ns_) / speed_));
    const auto due = wall_origin_ + offset;
    // Sleep in slices so a stop request is honoured promptly.
    while (!stop.load()) {
        const auto left = due - std::chrono::steady_clock::now();
        if (left <= std::chrono::nanoseconds::zero())
            return;
        std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(left, std::chrono::milliseconds(50)));
    }
}

SimulatedSource::SimulatedSource(double duration_s, const DeviceConfig& device, const BlinkScript& script,
                                 const NoiseModel& noise, double speed)
    : sim_(duration_s, device, script, noise), pacer_(speed), session_id_(noise.seed) {}

std::optional<FrameBatch> SimulatedSource::read(std::size_t max_frames) {
    if (stop_requested())
        return std::nullopt;
    FrameBatch batch;
    batch.frames.reserve(max_frames);
    while (batch.frames.size() < max_frames) {
        auto f = sim_.next();
        if (!f)
            break;
        batch.frames.push_back(*f);
    }
    if (batch.frames.empty())
        return std::nullopt;
    pacer_.anchor(batch.frames.front().t_ns);
    pacer_.wait_until(batch.frames.back().t_ns, stop_);
    return batch;
}

ReplaySource::ReplaySource(const std::filesystem::path& path, double speed,
                           std::optional<std::vector<BlinkLabel>> labels)
    : reader_(path), device_(reader_.device()), pacer_(speed), labels_(std::move(labels)) {}

std::optional<FrameBatch> ReplaySource::read(std::size_t max_frames) {
    if (stop_requested())
        return std::nullopt;
    FrameBatch batch;
    batch.frames.reserve(max_frames);
    while (batch.frames.size() < max_frames) {
        auto f = reader_.next();
        if (!f)
            break;
        batch.frames.push_back(*f);
    }
    if (batch.frames.empty())
        return std::nullopt;
    pacer_.anchor(batch.frames.front().t_ns);
    pacer_.wait_until(batch.frames.back().t_ns, stop_);
    return batch;
}

namespace {

namespace op {
constexpr std::uint8_t kReset = 0x06;
constexpr std::uint8_t kStart = 0x08;
constexpr std::uint8_t kRdatac = 0x10;
constexpr std::uint8_t kSdatac = 0x11;
constexpr std::uint8_t kWreg = 0x40;
} // namespace op

namespace reg {
constexpr std::uint8_t kConfig1 = 0x01;
constexpr std::uint8_t kConfig2 = 0x02;
constexpr std::uint8_t kConfig3 = 0x03;
constexpr std::uint8_t kCh1Set = 0x05;
constexpr std::uint8_t kMisc1 = 0x15;
} // namespace reg

std::uint8_t rate_bits(int sps) {
    switch (sps) {
    case 16000: return 0;
    case 8000: return 1;
    case 4000: return 2;
    case 2000: return 3;
    case 1000: return 4;
    case 500: return 5;
    default: return 6;
    }
}

std::uint8_t gain_bits(int gain) {
    switch (gain) {
    case 1: return 0;
    case 2: return 1;
    case 4: return 2;
    case 6: return 3;
    case 8: return 4;
    case 12: return 5;
    default: return 6;
    }
}

} // namespace

Ads1299Source::Ads1299Source(const DeviceConfig& device, const HardwareOptions& options)
    : device_(device), options_(options) {
    device_.validate();
    spi_fd_ = ::open(options_.spi_device.c_str(), O_RDWR | O_CLOEXEC);
    if (spi_fd_ < 0)
        throw SourceError(fmt::format("cannot open SPI device {}: {}", options_.spi_device, std::strerror(errno)));

    std::uint8_t mode = SPI_MODE_1;
    std::uint8_t bits = 8;
    if (::ioctl(spi_fd_, SPI_IOC_WR_MODE, &mode) < 0 || ::ioctl(spi_fd_, SPI_IOC_WR_BITS_PER_WORD, &bits) < 0 ||
        ::ioctl(spi_fd_, SPI_IOC_WR_MAX_SPEED_HZ, &options_.spi_hz) < 0) {
        ::close(spi_fd_);
        throw SourceError(fmt::format("SPI setup on {} failed: {}", options_.spi_device, std::strerror(errno)));
    }

    const int chip = ::open(options_.gpio_chip.c_str(), O_RDONLY | O_CLOEXEC);
    if (chip < 0) {
        ::close(spi_fd_);
        throw SourceError(fmt::format("cannot open {}: {}", options_.gpio_chip, std::strerror(errno)));
    }
    gpioevent_request req{};
    req.lineoffset = static_cast<__u32>(options_.drdy_bcm_line);
    req.handleflags = GPIOHANDLE_REQUEST_INPUT;
    req.eventflags = GPIOEVENT_REQUEST_FALLING_EDGE;
    std::snprintf(req.consumer_label, sizeof(req.consumer_label), "pieeg-drdy");
    const int rc = ::ioctl(chip, GPIO_GET_LINEEVENT_IOCTL, &req);
    ::close(chip);
    if (rc < 0) {
        ::close(spi_fd_);
        throw SourceError(fmt::format("cannot claim DRDY line {}: {}", options_.drdy_bcm_line, std::strerror(errno)));
    }
    drdy_fd_ = req.fd;

    command(op::kReset);
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    command(op::kSdatac);
    write_register(reg::kConfig1, static_cast<std::uint8_t>(0x90 | rate_bits(device_.sample_rate_sps)));
    write_register(reg::kConfig2, 0xC0);
    write_register(reg::kConfig3, 0xEC);
    write_register(reg::kMisc1, 0x20); // SRB1: all inverting inputs to the reference electrode
    for (std::uint8_t ch = 0; ch < kChannelCount; ++ch)
        write_register(static_cast<std::uint8_t>(reg::kCh1Set + ch),
                       static_cast<std::uint8_t>(gain_bits(device_.gain) << 4));
    command(op::kStart);
    command(op::kRdatac);

    origin_ = std::chrono::steady_clock::now();
    session_id_ = static_cast<std::uint64_t>(std::chrono::system_clock::now().time_since_epoch().count());
}

Ads1299Source::~Ads1299Source() {
    if (spi_fd_ >= 0) {
        try {
            command(op::kSdatac);
        } catch (const Error&) {
        }
        ::close(spi_fd_);
    }
    if (drdy_fd_ >= 0)
        ::close(drdy_fd_);
}

void Ads1299Source::command(std::uint8_t opcode) {
    spi_ioc_transfer xfer{};
    xfer.tx_buf = reinterpret_cast<std::uintptr_t>(&opcode);
    xfer.len = 1;
    if (::ioctl(spi_fd_, SPI_IOC_MESSAGE(1), &xfer) < 0)
        throw SourceError(fmt::format("SPI command 0x{:02X} failed: {}", opcode, std::strerror(errno)));
}

void Ads1299Source::write_register(std::uint8_t address, std::uint8_t value) {
    std::array<std::uint8_t, 3> tx = {static_cast<std::uint8_t>(op::kWreg | address), 0x00, value};
    spi_ioc_transfer xfer{};
    xfer.tx_buf = reinterpret_cast<std::uintptr_t>(tx.data());
    xfer.len = static_cast<__u32>(tx.size());
    if (::ioctl(spi_fd_, SPI_IOC_MESSAGE(1), &xfer) < 0)
        throw SourceError(fmt::format("WREG 0x{:02X} failed: {}", address, std::strerror(errno)));
}

FrameBytes Ads1299Source::transfer_frame() {
    FrameBytes tx{};
    FrameBytes rx{};
    spi_ioc_transfer xfer{};
    xfer.tx_buf = reinterpret_cast<std::uintptr_t>(tx.data());
    xfer.rx_buf = reinterpret_cast<std::uintptr_t>(rx.data());
    xfer.len = static_cast<__u32>(kFrameBytes);
    if (::ioctl(spi_fd_, SPI_IOC_MESSAGE(1), &xfer) < 0)
        throw SourceError(fmt::format("SPI frame read failed: {}", std::strerror(errno)));
    return rx;
}

std::optional<FrameBatch> Ads1299Source::read(std::size_t max_frames) {
    FrameBatch batch;
    batch.gap_before = std::exchange(pending_gap_, false);
    if (carry_)
        batch.frames.push_back(*std::exchange(carry_, std::nullopt));
    const std::int64_t period = device_.sample_period_ns();
    while (batch.frames.size() < max_frames) {
        if (stop_requested())
            break;
        pollfd pfd{drdy_fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, 100);
        if (ready < 0 && errno != EINTR)
            throw SourceError(fmt::format("DRDY poll failed: {}", std::strerror(errno)));
        if (ready <= 0)
            continue;
        gpioevent_data ev{};
        if (::read(drdy_fd_, &ev, sizeof(ev)) != static_cast<ssize_t>(sizeof(ev)))
            throw SourceError("short read on DRDY event line");

        const auto bytes = transfer_frame();
        std::int64_t t_ns =
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - origin_).count();
        bool gap = false;
        if (last_t_ns_ >= 0) {
            // The ADC cannot be paused; a late read means samples were overwritten.
            gap = t_ns - last_t_ns_ > 2 * period;
            if (gap)
                spdlog::warn("acquisition overrun: {:.1f} ms since previous frame",
                             static_cast<double>(t_ns - last_t_ns_) / 1e6);
            t_ns = std::max(t_ns, last_t_ns_ + 1);
        }
        last_t_ns_ = t_ns;
        const TimedFrame frame{t_ns, decode_frame(bytes)};
        if (gap && !batch.frames.empty()) {
            carry_ = frame;
            pending_gap_ = true;
            break;
        }
        batch.gap_before = batch.gap_before || gap;
        batch.frames.push_back(frame);
    }
    if (batch.frames.empty())
        return std::nullopt;
    return batch;
}

} // namespace pieeg
