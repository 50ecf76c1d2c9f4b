#include "pieeg/signal_sim.hpp"

#include "pieeg/errors.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace pieeg {

void BlinkScript::validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (!(e.duration_s > 0.0))
            throw ConfigError(fmt::format("blink {}: duration_s must be > 0, got {}", i, e.duration_s));
        if (!(e.amplitude_uv >= 0.0))
            throw ConfigError(fmt::format("blink {}: amplitude_uv must be >= 0, got {}", i, e.amplitude_uv));
        if (i > 0 && !(e.onset_s > events[i - 1].onset_s))
            throw ConfigError(fmt::format("blink {}: onsets must be strictly increasing ({} after {})", i,
                                          e.onset_s, events[i - 1].onset_s));
    }
    for (int k = 0; k < kChannelCount; ++k)
        if (!(channel_gains[k] >= 0.0))
            throw ConfigError(fmt::format("channel_gains[{}] must be >= 0", k));
}

void NoiseModel::validate() const {
    if (!(white_rms_uv >= 0.0) || !(pink_rms_uv >= 0.0) || !(mains_amplitude_uv >= 0.0))
        throw ConfigError("noise amplitudes must be >= 0");
    if (mains_hz != 0.0 && mains_hz != 50.0 && mains_hz != 60.0)
        throw ConfigError(fmt::format("mains_hz must be 0, 50 or 60, got {}", mains_hz));
}

std::vector<BlinkLabel> labels_for(const BlinkScript& script, const DeviceConfig& device) {
    std::vector<BlinkLabel> out;
    out.reserve(script.events.size());
    for (const auto& e : script.events) {
        BlinkLabel l;
        l.onset_sample = static_cast<std::int64_t>(std::ceil(e.onset_s * device.sample_rate_sps - 1e-9));
        l.onset_ns = l.onset_sample * device.sample_period_ns();
        l.event = e;
        out.push_back(l);
    }
    return out;
}

BlinkScript blink_rate_script(double rate_hz, int count, double start_s, double amplitude_uv) {
    if (!(rate_hz > 0.0))
        throw ConfigError("blink rate must be > 0");
    if (count < 1)
        throw ConfigError("blink count must be >= 1");
    if (rate_hz > 8.0)
        throw ConfigError(fmt::format("blink rate {} Hz is physically implausible (max 8 Hz)", rate_hz));
    BlinkScript script;
    const double duration = std::min(0.3, 0.8 / rate_hz);
    for (int i = 0; i < count; ++i)
        script.events.push_back({start_s + i / rate_hz, duration, amplitude_uv});
    return script;
}

BlinkScript parse_script(std::istream& in) {
    BlinkScript script;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        std::istringstream fields(line);
        BlinkEvent e;
        char c1 = 0;
        char c2 = 0;
        if (!(fields >> e.onset_s >> c1 >> e.duration_s >> c2 >> e.amplitude_uv) || c1 != ',' || c2 != ',')
            throw FormatError(fmt::format("script line {}: expected onset_s,duration_s,amplitude_uv", line_no));
        script.events.push_back(e);
    }
    script.validate();
    return script;
}

BlinkScript load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open script file {}", path.string()));
    return parse_script(in);
}

void write_script(std::ostream& out, const std::vector<BlinkEvent>& events) {
    out << "# onset_s,duration_s,amplitude_uv\n";
    for (const auto& e : events)
        out << fmt::format("{},{},{}\n", e.onset_s, e.duration_s, e.amplitude_uv);
}

void write_labels(std::ostream& out, const std::vector<BlinkLabel>& labels) {
    std::vector<BlinkEvent> events;
    events.reserve(labels.size());
    for (const auto& l : labels)
        events.push_back(l.event);
    write_script(out, events);
}

double blink_pulse_uv(const BlinkEvent& event, double t_s) {
    const double x = (t_s - event.onset_s) / event.duration_s;
    if (x < 0.0 || x > 1.0)
        return 0.0;
    return event.amplitude_uv * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * x));
}

Simulator::Simulator(double duration_s, DeviceConfig device, BlinkScript script, NoiseModel noise)
    : device_(std::move(device)), script_(std::move(script)), noise_(noise) {
    if (!(duration_s > 0.0))
        throw ConfigError("simulation duration must be > 0");
    device_.validate();
    script_.validate();
    noise_.validate();

    std::vector<double> beyond;
    for (const auto& e : script_.events)
        if (e.onset_s >= duration_s)
            beyond.push_back(e.onset_s);
    if (!beyond.empty())
        throw ConfigError(fmt::format("script events beyond {} s duration: onsets {}", duration_s,
                                      fmt::join(beyond, ", ")));

    const double rate = device_.sample_rate_sps;
    total_frames_ = std::llround(duration_s * rate);
    labels_ = labels_for(script_, device_);

    for (int k = 0; k < kChannelCount; ++k) {
        std::seed_seq seq{static_cast<std::uint32_t>(noise_.seed & 0xFFFFFFFFu),
                          static_cast<std::uint32_t>(noise_.seed >> 32), static_cast<std::uint32_t>(k)};
        rngs_[k].seed(seq);
        auto& pink = pink_[k];
        for (auto& row : pink.rows) {
            row = unit_normal_(rngs_[k]);
            pink.sum += row;
        }
    }
}

double Simulator::noise_uv(int channel, double t_s) {
    auto& rng = rngs_[channel];
    double v = 0.0;
    // Draw order is fixed regardless of which amplitudes are zero so that
    // toggling one noise term does not reshuffle the others.
    const double white = unit_normal_(rng);
    auto& pink = pink_[channel];
    if (index_ > 0) {
        const int row = std::countr_zero(static_cast<std::uint64_t>(index_));
        if (row < static_cast<int>(pink.rows.size())) {
            pink.sum -= pink.rows[row];
            pink.rows[row] = unit_normal_(rng);
            pink.sum += pink.rows[row];
        }
    }
    const double pink_white = unit_normal_(rng);
    v += noise_.white_rms_uv * white;
    v += noise_.pink_rms_uv * (pink.sum + pink_white) / std::sqrt(static_cast<double>(pink.rows.size() + 1));
    if (noise_.mains_hz > 0.0)
        v += noise_.mains_amplitude_uv * std::sin(2.0 * std::numbers::pi * noise_.mains_hz * t_s);
    return v;
}

std::optional<TimedFrame> Simulator::next() {
    if (index_ >= total_frames_)
        return std::nullopt;

    const double t_s = static_cast<double>(index_) / device_.sample_rate_sps;
    double artifact_uv = 0.0;
    const auto& events = script_.events;
    while (first_live_event_ < events.size() &&
           events[first_live_event_].onset_s + events[first_live_event_].duration_s < t_s)
        ++first_live_event_;
    for (std::size_t i = first_live_event_; i < events.size() && events[i].onset_s <= t_s; ++i)
        artifact_uv += blink_pulse_uv(events[i], t_s);

    TimedFrame out;
    out.t_ns = index_ * device_.sample_period_ns();
    out.frame.status = 0xC00000u;
    for (int k = 0; k < kChannelCount; ++k) {
        const double uv = noise_uv(k, t_s) + script_.channel_gains[k] * artifact_uv;
        out.frame.channel_raw[k] = volts_to_raw(uv * 1e-6, device_);
    }
    ++index_;
    return out;
}

std::vector<TimedFrame> generate(double duration_s, const DeviceConfig& device, const BlinkScript& script,
                                 const NoiseModel& noise, std::vector<BlinkLabel>* labels) {
    Simulator sim(duration_s, device, script, noise);
    std::vector<TimedFrame> frames;
    frames.reserve(static_cast<std::size_t>(sim.total_frames()));
    while (auto f = sim.next())
        frames.push_back(*f);
    if (labels)
        *labels = sim.labels();
    return frames;
}

} // namespace pieeg
