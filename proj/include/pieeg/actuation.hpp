#pragma once

#include "pieeg/blink_detector.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pieeg {

enum class ActiveLevel { high, low };

struct PinAssignment {
    int pin = 0; // board (physical header) numbering
    int pulse_ms = 500;
    ActiveLevel active_level = ActiveLevel::high;

    bool operator==(const PinAssignment&) const = default;
};

struct PinMap {
    std::map<std::string, PinAssignment> entries;

    void validate() const;
    const PinAssignment& route(const std::string& detector_id) const;
    std::optional<PinAssignment> for_pin(int pin) const;

    // bandA -> pin 31, bandB -> pin 35, 500 ms, active high.
    static PinMap defaults();
};

// `level` is the electrical level written to the pin.
struct ActuatorCommand {
    int pin = 0;
    bool level = false;
    std::int64_t t_ns = 0;
    std::string cause;

    bool operator==(const ActuatorCommand&) const = default;
};

// Assert at event.t_ns, release pulse_ms later. Throws RoutingError for
// unmapped detectors.
std::pair<ActuatorCommand, ActuatorCommand> dispatch(const DetectionEvent& event, const PinMap& map);

struct PulseInterval {
    int pin = 0;
    std::int64_t assert_ns = 0;
    std::int64_t release_ns = 0;
    std::string cause;
    int triggers = 1;

    bool operator==(const PulseInterval&) const = default;
};

class ActuatorSink {
public:
    virtual ~ActuatorSink() = default;
    virtual void apply(const ActuatorCommand& command) = 0;
};

// Records commands as per-pin intervals. Overlapping assert/release pairs on
// one pin merge into their union.
class MockSink : public ActuatorSink {
public:
    explicit MockSink(PinMap map);

    void apply(const ActuatorCommand& command) override;

    // Closed intervals in assert order.
    std::vector<PulseInterval> log() const;
    std::vector<PulseInterval> query(int pin, std::int64_t from_ns, std::int64_t to_ns) const;
    bool active(int pin) const;

private:
    struct PinTrack {
        int outstanding = 0;
        std::int64_t last_t_ns = 0;
        bool seen = false;
        PulseInterval open;
    };

    PinMap map_;
    mutable std::mutex mutex_;
    std::map<int, PinTrack> tracks_;
    std::vector<PulseInterval> closed_;
};

std::vector<PulseInterval> mock_sink_timeline(const std::vector<ActuatorCommand>& commands, const PinMap& map);

// Plain-text export: `pin,assert_ns,release_ns,cause` per line.
void write_pulse_log(std::ostream& out, const std::vector<PulseInterval>& log);

// Turns events into time-ordered commands. A pin that is already driven has
// its release deadline extended instead of being re-asserted.
class PulseScheduler {
public:
    explicit PulseScheduler(PinMap map);

    void add_sink(ActuatorSink* sink) { sinks_.push_back(sink); }

    void on_event(const DetectionEvent& event);
    // Releases every pulse whose deadline is <= now_ns.
    void advance(std::int64_t now_ns);
    void flush();

    const PinMap& pin_map() const { return map_; }

private:
    void emit(const ActuatorCommand& command);

    PinMap map_;
    std::vector<ActuatorSink*> sinks_;
    struct Pending {
        std::int64_t release_ns = 0;
        std::string cause;
    };
    std::map<int, Pending> active_;
};

// Board-numbered Raspberry Pi header pin to BCM GPIO line; nullopt for power/ground pins.
std::optional<int> board_to_bcm(int board_pin);

// Drives pins through the Linux GPIO character device. Needs the real board.
class GpioChardevSink : public ActuatorSink {
public:
    GpioChardevSink(const PinMap& map, const std::string& chip_path = "/dev/gpiochip0");
    ~GpioChardevSink() override;
    GpioChardevSink(const GpioChardevSink&) = delete;
    GpioChardevSink& operator=(const GpioChardevSink&) = delete;

    void apply(const ActuatorCommand& command) override;

private:
    std::map<int, int> line_fds_; // board pin -> line handle fd
};

} // namespace pieeg
