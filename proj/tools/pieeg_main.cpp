// pieeg command line: simulate, replay, acquire, serve, calibrate.

#include "pieeg/config_json.hpp"
#include "pieeg/control.hpp"
#include "pieeg/errors.hpp"
#include "pieeg/session.hpp"
#include "pieeg/stream_server.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

using namespace pieeg;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kSource = 2, kFormat = 3 };

struct Options {
    std::optional<std::string> config_path;
    std::optional<int> rate;
    std::optional<int> gain;
    std::optional<int> channel;
    std::string detector = "bandA";
    std::optional<std::string> band;
    std::optional<double> threshold;
    std::optional<double> refractory;
    std::optional<int> pin;
    std::optional<std::string> record;
    std::optional<std::string> script;
    std::optional<double> speed;
    std::optional<double> duration;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> labels;
    std::string events_path = "-";
    std::optional<std::string> pulses_path;
    bool gpio = false;
    bool verbose = false;

    // serve
    std::uint16_t port = 8089;
    std::string bind = "127.0.0.1";
    std::optional<std::string> assets;
    bool autostart = false;

    // calibrate
    double margin = 0.5;
    std::optional<std::string> output;

    // replay / serve input
    std::string input;
};

std::pair<double, double> parse_band(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw ConfigError(fmt::format("--band expects LO:HI, got '{}'", text));
    try {
        std::size_t used_lo = 0;
        std::size_t used_hi = 0;
        const std::string lo = text.substr(0, colon);
        const std::string hi = text.substr(colon + 1);
        const double l = std::stod(lo, &used_lo);
        const double h = std::stod(hi, &used_hi);
        if (used_lo != lo.size() || used_hi != hi.size())
            throw std::invalid_argument("trailing text");
        return {l, h};
    } catch (const std::logic_error&) {
        throw ConfigError(fmt::format("--band expects LO:HI, got '{}'", text));
    }
}

DetectorConfig& find_detector(SessionConfig& cfg, const std::string& id) {
    for (auto& d : cfg.detectors)
        if (d.detector_id == id)
            return d;
    throw ConfigError(fmt::format("unknown detector '{}'", id));
}

SessionConfig build_config(const Options& o, SourceKind kind) {
    SessionConfig cfg;
    if (o.config_path)
        cfg = load_session_config(*o.config_path);
    cfg.source.kind = kind;
    if (o.rate)
        cfg.device.sample_rate_sps = *o.rate;
    if (o.gain)
        cfg.device.gain = *o.gain;
    if (o.channel)
        cfg.analysis_channel = *o.channel;
    if (o.speed)
        cfg.source.speed = *o.speed;
    if (o.duration)
        cfg.source.duration_s = *o.duration;
    if (o.seed)
        cfg.source.noise.seed = *o.seed;
    if (o.script) {
        cfg.source.script_path = *o.script;
        cfg.source.script = load_script(*o.script);
    }
    if (kind == SourceKind::simulate && !o.script && !o.config_path) {
        // Ten 100 uV blinks at 1 Hz from t = 6 s.
        cfg.source.script = blink_rate_script(1.0, 10, 6.0, 100.0);
    }
    if (o.labels)
        cfg.source.labels_path = *o.labels;
    if (o.record)
        cfg.record_path = *o.record;
    if (o.gpio)
        cfg.gpio_output = true;
    if (!o.input.empty())
        cfg.source.replay_path = o.input;

    if (o.band || o.threshold || o.refractory || o.pin) {
        auto& d = find_detector(cfg, o.detector);
        if (o.band)
            std::tie(d.band_low_hz, d.band_high_hz) = parse_band(*o.band);
        if (o.threshold) {
            d.threshold_uv = *o.threshold;
            d.enabled = true;
        }
        if (o.refractory)
            d.refractory_s = *o.refractory;
        if (o.pin)
            cfg.pin_map.entries[o.detector].pin = *o.pin;
    }
    cfg.validate();
    return cfg;
}

// Blocks SIGINT/SIGTERM in every thread; a watcher thread turns them into stop requests.
class SignalWatch {
public:
    SignalWatch() {
        sigemptyset(&set_);
        sigaddset(&set_, SIGINT);
        sigaddset(&set_, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    }
    ~SignalWatch() { disarm(); }

    void arm(std::function<void()> on_signal, std::optional<double> deadline_s = std::nullopt) {
        thread_ = std::thread([this, on_signal = std::move(on_signal), deadline_s] {
            const auto start = std::chrono::steady_clock::now();
            timespec slice{0, 100'000'000};
            while (!done_) {
                if (sigtimedwait(&set_, nullptr, &slice) > 0) {
                    spdlog::info("signal received, stopping");
                    on_signal();
                    return;
                }
                if (deadline_s &&
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= *deadline_s) {
                    on_signal();
                    return;
                }
            }
        });
    }
    void disarm() {
        done_ = true;
        if (thread_.joinable())
            thread_.join();
    }

private:
    sigset_t set_;
    std::atomic<bool> done_{false};
    std::thread thread_;
};

void write_to(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    if (path == "-") {
        writer(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw SourceError(fmt::format("cannot write {}", path));
    writer(out);
}

void report(const SessionSummary& s) {
    for (const auto& [id, n] : s.events_per_detector)
        spdlog::info("{}: {} events", id, n);
    spdlog::info("{} frames, {} windows, {:.2f} s wall", s.frames, s.windows, s.wall_seconds);
    if (s.input_truncated)
        spdlog::warn("input ended with a partial record; it was ignored");
    if (s.gaps > 0)
        spdlog::warn("{} timestamp gaps in the input", s.gaps);
    if (s.latency && !s.latency->entries.empty())
        spdlog::info("latency median {:.3f} s, max {:.3f} s", s.latency->median_s, s.latency->max_s);
}

int run_session(const Options& o, SourceKind kind) {
    const auto cfg = build_config(o, kind);
    bool any_enabled = false;
    for (const auto& d : cfg.detectors)
        any_enabled = any_enabled || d.enabled;
    if (!any_enabled)
        spdlog::warn("no detector is enabled; run `pieeg calibrate` or pass --threshold");

    SignalWatch signals;
    Session session(cfg);
    std::optional<double> deadline;
    if (kind == SourceKind::hardware && o.duration)
        deadline = *o.duration;
    signals.arm([&] { session.request_stop(); }, deadline);
    const auto summary = session.run();
    signals.disarm();

    report(summary);
    write_to(o.events_path, [&](std::ostream& out) { write_event_log(out, summary.events); });
    if (o.pulses_path)
        write_to(*o.pulses_path, [&](std::ostream& out) { write_pulse_log(out, summary.pulses); });
    return kOk;
}

int run_calibrate(const Options& o) {
    const auto kind = o.input.empty() ? SourceKind::simulate : SourceKind::replay;
    auto cfg = build_config(o, kind);
    if (kind == SourceKind::replay && !cfg.source.labels_path)
        throw ConfigError("calibrating a recording needs --labels");
    for (auto& d : cfg.detectors) {
        auto source = make_source(cfg);
        const auto r = calibrate_threshold(*source, cfg.analysis_channel, cfg.filter, cfg.window, d.band_low_hz,
                                           d.band_high_hz, o.margin);
        spdlog::info("{}: noise p99 {:.3f} uV, blink median {:.3f} uV, threshold {:.3f} uV", d.detector_id,
                     r.noise_p99, r.blink_median, r.threshold_uv);
        d.threshold_uv = r.threshold_uv;
        d.enabled = true;
    }
    const auto text = to_json(cfg).dump(2) + "\n";
    if (o.output) {
        write_to(*o.output, [&](std::ostream& out) { out << text; });
        spdlog::info("calibrated configuration written to {}", *o.output);
    } else {
        std::cout << text;
    }
    return kOk;
}

int run_serve(const Options& o) {
    const auto kind = o.input.empty() ? SourceKind::simulate : SourceKind::replay;
    auto cfg = build_config(o, kind);
    // A scope is only useful in real time unless asked otherwise.
    if (!o.speed && !o.config_path)
        cfg.source.speed = 1.0;

    SignalWatch signals;
    LiveSession live(cfg);
    ServerOptions so;
    so.bind_address = o.bind;
    so.port = o.port;
    if (o.assets)
        so.assets_dir = *o.assets;
    StreamServer server(live, so);
    live.set_observer(&server);
    live.set_on_finished([&] { server.broadcast_status(); });
    server.start();
    std::cerr << fmt::format("serving on http://{}:{}/ (websocket /stream)\n", o.bind, server.port());
    if (o.autostart) {
        const auto r = live.start();
        if (!r.ok)
            throw ConfigError(r.reason);
    }

    std::atomic<bool> quit{false};
    signals.arm([&] { quit = true; });
    while (!quit)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    live.stop();
    live.wait();
    server.stop();
    if (const auto err = live.last_error())
        spdlog::warn("last run failed: {}", *err);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PiEEG blink-to-GPIO pipeline"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config_path, "JSON session configuration; flags override it");
        cmd->add_option("--rate", o.rate, "Sample rate in SPS");
        cmd->add_option("--gain", o.gain, "PGA gain");
        cmd->add_option("--channel", o.channel, "Analysis channel index (0 = Fz)");
        cmd->add_option("--detector", o.detector, "Detector that --band/--threshold/--refractory/--pin apply to");
        cmd->add_option("--band", o.band, "Detector band as LO:HI in Hz");
        cmd->add_option("--threshold", o.threshold, "Detector threshold in uV; enables the detector");
        cmd->add_option("--refractory", o.refractory, "Detector refractory period in seconds");
        cmd->add_option("--pin", o.pin, "Output pin (board numbering) for the detector");
        cmd->add_option("--record", o.record, "Record every input frame to this file");
        cmd->add_flag("--gpio", o.gpio, "Drive the real GPIO lines");
        cmd->add_option("--events", o.events_path, "Event log output ('-' for stdout)");
        cmd->add_option("--pulses", o.pulses_path, "Pulse log output");
        cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");
    };
    auto add_sim = [&](CLI::App* cmd) {
        cmd->add_option("--script", o.script, "Blink script (onset_s,duration_s,amplitude_uv per line)");
        cmd->add_option("--duration", o.duration, "Duration in seconds");
        cmd->add_option("--seed", o.seed, "Noise seed");
    };
    auto add_speed = [&](CLI::App* cmd) {
        cmd->add_option("--speed", o.speed, "Pacing: 0 = as fast as possible, 1 = real time")->check(CLI::NonNegativeNumber);
    };

    auto* simulate = app.add_subcommand("simulate", "Run the pipeline on synthetic EEG");
    add_common(simulate);
    add_sim(simulate);
    add_speed(simulate);

    auto* replay = app.add_subcommand("replay", "Run the pipeline on a recording");
    add_common(replay);
    add_speed(replay);
    replay->add_option("file", o.input, "Recording to replay")->required();
    replay->add_option("--labels", o.labels, "Ground-truth blink script for scoring");

    auto* acquire = app.add_subcommand("acquire", "Run the pipeline on the ADS1299 shield");
    add_common(acquire);
    acquire->add_option("--duration", o.duration, "Stop after this many seconds");

    auto* serve = app.add_subcommand("serve", "Run the stream server for the scope UI");
    add_common(serve);
    add_sim(serve);
    add_speed(serve);
    serve->add_option("file", o.input, "Recording to serve instead of the simulator");
    serve->add_option("--port", o.port, "TCP port");
    serve->add_option("--bind", o.bind, "Bind address");
    serve->add_option("--assets", o.assets, "Directory of static UI files");
    serve->add_flag("--autostart", o.autostart, "Start the session immediately");

    auto* calibrate = app.add_subcommand("calibrate", "Derive detector thresholds from labelled data");
    add_common(calibrate);
    add_sim(calibrate);
    calibrate->add_option("file", o.input, "Recording to calibrate on instead of the simulator");
    calibrate->add_option("--labels", o.labels, "Blink script labelling the recording");
    calibrate->add_option("--margin", o.margin, "Fraction of the noise-to-blink gap added to the noise p99")
        ->check(CLI::Range(0.0, 1.0));
    calibrate->add_option("--output", o.output, "Write the calibrated configuration here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfig;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("pieeg"));
    spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (simulate->parsed())
            return run_session(o, SourceKind::simulate);
        if (replay->parsed())
            return run_session(o, SourceKind::replay);
        if (acquire->parsed())
            return run_session(o, SourceKind::hardware);
        if (serve->parsed())
            return run_serve(o);
        return run_calibrate(o);
    } catch (const FormatError& e) {
        spdlog::error("{}", e.what());
        return kFormat;
    } catch (const SourceError& e) {
        spdlog::error("{}", e.what());
        return kSource;
    } catch (const StreamIntegrityError& e) {
        spdlog::error("{}", e.what());
        return kSource;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return kConfig;
    }
}
