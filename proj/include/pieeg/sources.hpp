#pragma once

#include "pieeg/frame_codec.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/signal_sim.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pieeg {

struct FrameBatch {
    std::vector<TimedFrame> frames;
    // The source lost frames before this batch (hardware overrun).
    bool gap_before = false;
};

class FrameSource {
public:
    virtual ~FrameSource() = default;

    virtual const DeviceConfig& device() const = 0;
    virtual std::uint64_t session_id() const = 0;
    // Up to max_frames frames; nullopt once the stream is exhausted or stopped.
    virtual std::optional<FrameBatch> read(std::size_t max_frames) = 0;
    // Ground-truth blink labels, when the source knows them.
    virtual const std::vector<BlinkLabel>* labels() const { return nullptr; }

    void request_stop() { stop_.store(true); }
    bool stop_requested() const { return stop_.load(); }

protected:
    std::atomic<bool> stop_{false};
};

// Holds delivery back to the recorded timeline scaled by 1/speed.
// speed 0 disables pacing.
class Pacer {
public:
    explicit Pacer(double speed) : speed_(speed) {}

    // Ties the first timeline instant to the current wall time; later calls are no-ops.
    void anchor(std::int64_t t_ns);

    void wait_until(std::int64_t t_ns, const std::atomic<bool>& stop);

private:
    double speed_;
    bool started_ = false;
    std::int64_t origin_ns_ = 0;
    std::chrono::steady_clock::time_point wall_origin_;
};

class SimulatedSource : public FrameSource {
public:
    SimulatedSource(double duration_s, const DeviceConfig& device, const BlinkScript& script, const NoiseModel& noise,
                    double speed = 0.0);

    const DeviceConfig& device() const override { return sim_.device(); }
    std::uint64_t session_id() const override { return session_id_; }
    std::optional<FrameBatch> read(std::size_t max_frames) override;
    const std::vector<BlinkLabel>* labels() const override { return &sim_.labels(); }

private:
    Simulator sim_;
    Pacer pacer_;
    std::uint64_t session_id_;
};

class ReplaySource : public FrameSource {
public:
    explicit ReplaySource(const std::filesystem::path& path, double speed = 0.0,
                          std::optional<std::vector<BlinkLabel>> labels = std::nullopt);

    const DeviceConfig& device() const override { return device_; }
    std::uint64_t session_id() const override { return reader_.header().session_id; }
    std::optional<FrameBatch> read(std::size_t max_frames) override;
    const std::vector<BlinkLabel>* labels() const override { return labels_ ? &*labels_ : nullptr; }

    bool truncated() const { return reader_.truncated(); }

private:
    ReplayReader reader_;
    DeviceConfig device_;
    Pacer pacer_;
    std::optional<std::vector<BlinkLabel>> labels_;
};

struct HardwareOptions {
    std::string spi_device = "/dev/spidev0.0";
    std::uint32_t spi_hz = 2'000'000;
    std::string gpio_chip = "/dev/gpiochip0";
    int drdy_bcm_line = 26;
};

// ADS1299 on the shield: SPI mode 1, continuous read mode, DRDY falling edge
// on a GPIO line. Frame arrival times are stamped on the steady clock.
class Ads1299Source : public FrameSource {
public:
    Ads1299Source(const DeviceConfig& device, const HardwareOptions& options);
    ~Ads1299Source() override;
    Ads1299Source(const Ads1299Source&) = delete;
    Ads1299Source& operator=(const Ads1299Source&) = delete;

    const DeviceConfig& device() const override { return device_; }
    std::uint64_t session_id() const override { return session_id_; }
    std::optional<FrameBatch> read(std::size_t max_frames) override;

private:
    void command(std::uint8_t opcode);
    void write_register(std::uint8_t address, std::uint8_t value);
    FrameBytes transfer_frame();

    DeviceConfig device_;
    HardwareOptions options_;
    int spi_fd_ = -1;
    int drdy_fd_ = -1;
    std::uint64_t session_id_ = 0;
    std::chrono::steady_clock::time_point origin_;
    std::int64_t last_t_ns_ = -1;
    bool pending_gap_ = false;
    std::optional<TimedFrame> carry_;
};

} // namespace pieeg
