#include "pieeg/actuation.hpp"

#include "pieeg/errors.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <ostream>
#include <set>

#include <fcntl.h>
#include <linux/gpio.h>
#include <sys/ioctl.h>
#include <unistd.h>

#include <fmt/format.h>

namespace pieeg {

void PinMap::validate() const {
    std::set<int> pins;
    for (const auto& [id, a] : entries) {
        if (a.pulse_ms <= 0)
            throw ConfigError(fmt::format("pin map {}: pulse_ms must be > 0, got {}", id, a.pulse_ms));
        if (!pins.insert(a.pin).second)
            throw ConfigError(fmt::format("pin map: pin {} assigned more than once", a.pin));
    }
}

const PinAssignment& PinMap::route(const std::string& detector_id) const {
    auto it = entries.find(detector_id);
    if (it == entries.end())
        throw RoutingError(fmt::format("no pin mapped for detector '{}'", detector_id));
    return it->second;
}

std::optional<PinAssignment> PinMap::for_pin(int pin) const {
    for (const auto& [id, a] : entries)
        if (a.pin == pin)
            return a;
    return std::nullopt;
}

PinMap PinMap::defaults() {
    PinMap map;
    map.entries["bandA"] = {31, 500, ActiveLevel::high};
    map.entries["bandB"] = {35, 500, ActiveLevel::high};
    return map;
}

std::pair<ActuatorCommand, ActuatorCommand> dispatch(const DetectionEvent& event, const PinMap& map) {
    const PinAssignment& a = map.route(event.detector_id);
    const bool on = a.active_level == ActiveLevel::high;
    const std::int64_t release = event.t_ns + static_cast<std::int64_t>(a.pulse_ms) * 1'000'000;
    return {ActuatorCommand{a.pin, on, event.t_ns, event.detector_id},
            ActuatorCommand{a.pin, !on, release, event.detector_id}};
}

MockSink::MockSink(PinMap map) : map_(std::move(map)) {}

void MockSink::apply(const ActuatorCommand& command) {
    const auto assignment = map_.for_pin(command.pin);
    if (!assignment)
        throw RoutingError(fmt::format("command for unmapped pin {}", command.pin));
    const bool asserting = command.level == (assignment->active_level == ActiveLevel::high);

    std::lock_guard lock(mutex_);
    PinTrack& track = tracks_[command.pin];
    if (track.seen && command.t_ns < track.last_t_ns)
        throw SequencingError(fmt::format("pin {}: command at {} ns precedes {} ns", command.pin, command.t_ns,
                                          track.last_t_ns));
    track.seen = true;
    track.last_t_ns = command.t_ns;

    if (asserting) {
        if (track.outstanding == 0)
            track.open = PulseInterval{command.pin, command.t_ns, command.t_ns, command.cause, 0};
        ++track.open.triggers;
        ++track.outstanding;
        return;
    }
    if (track.outstanding == 0)
        throw SequencingError(fmt::format("pin {}: release at {} ns without an assert", command.pin, command.t_ns));
    if (--track.outstanding == 0) {
        track.open.release_ns = command.t_ns;
        closed_.push_back(track.open);
    }
}

std::vector<PulseInterval> MockSink::log() const {
    std::lock_guard lock(mutex_);
    auto out = closed_;
    std::stable_sort(out.begin(), out.end(),
                     [](const PulseInterval& a, const PulseInterval& b) { return a.assert_ns < b.assert_ns; });
    return out;
}

std::vector<PulseInterval> MockSink::query(int pin, std::int64_t from_ns, std::int64_t to_ns) const {
    std::vector<PulseInterval> out;
    for (const auto& p : log())
        if (p.pin == pin && p.release_ns >= from_ns && p.assert_ns <= to_ns)
            out.push_back(p);
    return out;
}

bool MockSink::active(int pin) const {
    std::lock_guard lock(mutex_);
    auto it = tracks_.find(pin);
    return it != tracks_.end() && it->second.outstanding > 0;
}

std::vector<PulseInterval> mock_sink_timeline(const std::vector<ActuatorCommand>& commands, const PinMap& map) {
    MockSink sink(map);
    for (const auto& c : commands)
        sink.apply(c);
    return sink.log();
}

void write_pulse_log(std::ostream& out, const std::vector<PulseInterval>& log) {
    for (const auto& p : log)
        out << fmt::format("{},{},{},{}\n", p.pin, p.assert_ns, p.release_ns, p.cause);
}

PulseScheduler::PulseScheduler(PinMap map) : map_(std::move(map)) {
    map_.validate();
}

void PulseScheduler::emit(const ActuatorCommand& command) {
    for (auto* sink : sinks_)
        sink->apply(command);
}

void PulseScheduler::advance(std::int64_t now_ns) {
    // Release in deadline order so sinks see a time-ordered stream.
    for (;;) {
        auto due = active_.end();
        for (auto it = active_.begin(); it != active_.end(); ++it)
            if (it->second.release_ns <= now_ns && (due == active_.end() || it->second.release_ns < due->second.release_ns))
                due = it;
        if (due == active_.end())
            return;
        const int pin = due->first;
        const auto assignment = map_.for_pin(pin);
        const bool on = assignment->active_level == ActiveLevel::high;
        const ActuatorCommand release{pin, !on, due->second.release_ns, due->second.cause};
        active_.erase(due);
        emit(release);
    }
}

void PulseScheduler::on_event(const DetectionEvent& event) {
    auto [on, off] = dispatch(event, map_);
    advance(event.t_ns);
    auto it = active_.find(on.pin);
    if (it != active_.end()) {
        it->second.release_ns = std::max(it->second.release_ns, off.t_ns);
        return;
    }
    active_[on.pin] = Pending{off.t_ns, off.cause};
    emit(on);
}

void PulseScheduler::flush() {
    advance(std::numeric_limits<std::int64_t>::max());
}

std::optional<int> board_to_bcm(int board_pin) {
    static const std::map<int, int> table = {
        {3, 2},   {5, 3},   {7, 4},   {8, 14},  {10, 15}, {11, 17}, {12, 18}, {13, 27}, {15, 22}, {16, 23},
        {18, 24}, {19, 10}, {21, 9},  {22, 25}, {23, 11}, {24, 8},  {26, 7},  {27, 0},  {28, 1},  {29, 5},
        {31, 6},  {32, 12}, {33, 13}, {35, 19}, {36, 16}, {37, 26}, {38, 20}, {40, 21},
    };
    auto it = table.find(board_pin);
    if (it == table.end())
        return std::nullopt;
    return it->second;
}

GpioChardevSink::GpioChardevSink(const PinMap& map, const std::string& chip_path) {
    map.validate();
    const int chip = ::open(chip_path.c_str(), O_RDONLY | O_CLOEXEC);
    if (chip < 0)
        throw SourceError(fmt::format("cannot open {}: {}", chip_path, std::strerror(errno)));
    try {
        for (const auto& [id, a] : map.entries) {
            const auto line = board_to_bcm(a.pin);
            if (!line)
                throw ConfigError(fmt::format("board pin {} is not a GPIO line", a.pin));
            gpiohandle_request req{};
            req.lineoffsets[0] = static_cast<__u32>(*line);
            req.flags = GPIOHANDLE_REQUEST_OUTPUT;
            req.default_values[0] = a.active_level == ActiveLevel::high ? 0 : 1;
            req.lines = 1;
            std::snprintf(req.consumer_label, sizeof(req.consumer_label), "pieeg-%s", id.c_str());
            if (::ioctl(chip, GPIO_GET_LINEHANDLE_IOCTL, &req) < 0)
                throw SourceError(fmt::format("cannot claim GPIO line {} (pin {}): {}", *line, a.pin,
                                              std::strerror(errno)));
            line_fds_[a.pin] = req.fd;
        }
    } catch (...) {
        ::close(chip);
        for (auto& [pin, fd] : line_fds_)
            ::close(fd);
        throw;
    }
    ::close(chip);
}

GpioChardevSink::~GpioChardevSink() {
    for (auto& [pin, fd] : line_fds_)
        ::close(fd);
}

void GpioChardevSink::apply(const ActuatorCommand& command) {
    auto it = line_fds_.find(command.pin);
    if (it == line_fds_.end())
        throw RoutingError(fmt::format("pin {} not claimed", command.pin));
    gpiohandle_data data{};
    data.values[0] = command.level ? 1 : 0;
    if (::ioctl(it->second, GPIOHANDLE_SET_LINE_VALUES_IOCTL, &data) < 0)
        throw SourceError(fmt::format("GPIO write on pin {} failed: {}", command.pin, std::strerror(errno)));
}

} // namespace pieeg
