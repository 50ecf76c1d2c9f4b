#include "catch_amalgamated.hpp"

#include "pieeg/config_json.hpp"
#include "pieeg/control.hpp"
#include "pieeg/errors.hpp"
#include "pieeg/recording.hpp"
#include "pieeg/session.hpp"
#include "support/temp_dir.hpp"

#include <fstream>
#include <sstream>

using namespace pieeg;

namespace {

constexpr std::int64_t kSec = 1'000'000'000;

SessionConfig standard(std::uint64_t seed, double threshold_a, double threshold_b) {
    SessionConfig c;
    c.source.kind = SourceKind::simulate;
    c.source.duration_s = 22.0;
    c.source.script = blink_rate_script(1.0, 10, 6.0, 100.0);
    c.source.noise.seed = seed;
    c.detectors = default_bank();
    c.detectors[0].threshold_uv = threshold_a;
    c.detectors[0].enabled = true;
    c.detectors[1].threshold_uv = threshold_b;
    c.detectors[1].enabled = true;
    return c;
}

BlinkLabel label_at(double onset_s, double duration_s = 0.3) {
    BlinkLabel l;
    l.onset_ns = static_cast<std::int64_t>(onset_s * 1e9);
    l.onset_sample = static_cast<std::int64_t>(onset_s * 250);
    l.event = {onset_s, duration_s, 100.0};
    return l;
}

DetectionEvent ev(const std::string& id, double t_s) {
    return {id, static_cast<std::int64_t>(t_s * 1e9), 5.0, 50.0, 10.0};
}

} // namespace

TEST_CASE("percentile interpolates linearly") {
    CHECK(percentile({1.0}, 99.0) == 1.0);
    CHECK(percentile({3.0, 1.0, 2.0}, 50.0) == 2.0);
    CHECK(percentile({0.0, 10.0}, 99.0) == Catch::Approx(9.9));
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 0.0) == 1.0);
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 100.0) == 4.0);
    CHECK_THROWS_AS(percentile({}, 50.0), ConfigError);
}

TEST_CASE("scoring matches each blink to the first event within the latency budget") {
    const std::vector<BlinkLabel> labels = {label_at(2.0), label_at(3.0), label_at(4.0)};
    const std::vector<DetectionEvent> events = {ev("bandA", 2.8), ev("bandA", 2.9), ev("bandA", 3.9),
                                                ev("bandB", 3.1), ev("bandA", 10.0)};
    const auto a = score_detections(labels, events, "bandA");
    CHECK(a.blinks == 3);
    CHECK(a.hits == 2);
    // 2.9 s is a spare event next to a blink; 10.0 s is far from everything.
    CHECK(a.false_events == 1);
    REQUIRE(a.matches.size() == 2);
    CHECK(a.matches[0] == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(a.matches[1] == std::pair<std::size_t, std::size_t>{1, 2});

    const auto b = score_detections(labels, events, "bandB");
    CHECK(b.hits == 1);
    CHECK(b.false_events == 0);
}

TEST_CASE("latency report statistics") {
    const std::vector<BlinkLabel> labels = {label_at(2.0), label_at(3.0), label_at(4.0)};
    const std::vector<DetectionEvent> events = {ev("bandA", 2.5), ev("bandA", 3.75), ev("bandA", 5.0)};
    const std::vector<ProcessingDelay> delays = {{"bandA", events[0].t_ns, 2'000'000},
                                                 {"bandA", events[1].t_ns, 4'000'000}};
    const auto r = build_latency_report(labels, events, delays);
    REQUIRE(r.entries.size() == 3);
    CHECK(r.median_s == Catch::Approx(0.75));
    CHECK(r.max_s == Catch::Approx(1.0));
    CHECK(r.entries[0].actuation_assert_ns == events[0].t_ns + 2'000'000);
    CHECK(r.entries[2].actuation_assert_ns == events[2].t_ns);
    for (const auto& e : r.entries) {
        CHECK(e.actuation_assert_ns >= e.event_t_ns);
        CHECK(e.event_t_ns >= e.blink_onset_ns);
    }
    CHECK(r.end_to_end_max_s == Catch::Approx(1.0));
    CHECK(r.end_to_end_median_s == Catch::Approx(0.754));
}

TEST_CASE("event log text format") {
    const std::vector<DetectionEvent> events = {{"bandA", 2'500'000'000, 5.0, 131.2, 100.0}};
    CHECK(event_log_text(events) == "bandA,2500000000,5,131.2,100\n");
}

TEST_CASE("quiet simulation with high thresholds produces nothing") {
    SessionConfig c;
    c.source.duration_s = 1.0;
    c.source.script = {};
    for (auto& d : c.detectors) {
        d.threshold_uv = 1e6;
        d.enabled = true;
    }
    Session s(c);
    const auto summary = s.run();
    CHECK(summary.events.empty());
    CHECK(summary.pulses.empty());
    CHECK(summary.frames == 250);
    CHECK(summary.windows == 1);
}

TEST_CASE("every sample reaches the hop schedule") {
    for (int rate : {250, 1000}) {
        SessionConfig c;
        c.device.sample_rate_sps = rate;
        c.source.duration_s = 7.3;
        c.source.script = {};
        Session s(c);
        const auto summary = s.run();
        const auto frames = static_cast<std::int64_t>(std::llround(7.3 * rate));
        const auto w = WindowSpec::default_for(rate);
        CHECK(summary.frames == static_cast<std::uint64_t>(frames));
        CHECK(summary.windows == static_cast<std::uint64_t>((frames - w.length_samples) / w.hop_samples + 1));
    }
}

TEST_CASE("simulated session detects blinks and pulses the mapped pins") {
    Session s(standard(3, 8.0, 15.0));
    const auto summary = s.run();
    REQUIRE(summary.labels.size() == 10);
    const auto a = score_detections(summary.labels, summary.events, "bandA");
    const auto b = score_detections(summary.labels, summary.events, "bandB");
    CHECK(a.hits >= 8);
    CHECK(b.hits >= 8);
    REQUIRE(summary.latency);
    CHECK(summary.latency->median_s <= 1.0);
    CHECK(summary.latency->max_s <= 1.5);
    for (const auto& p : summary.pulses)
        CHECK((p.cause == "bandA" ? p.pin == 31 : p.pin == 35));
    CHECK(summary.events_per_detector.at("bandA") == static_cast<int>(std::count_if(
              summary.events.begin(), summary.events.end(), [](const auto& e) { return e.detector_id == "bandA"; })));
}

TEST_CASE("recording during a run then replaying gives the same events") {
    test::TempDir dir;
    auto live_cfg = standard(4, 8.0, 15.0);
    live_cfg.record_path = dir.path() / "run.pieeg";
    const auto live = Session(live_cfg).run();
    CHECK(std::filesystem::file_size(dir.path() / "run.pieeg") == 32 + 44 * live.frames);

    auto replay_cfg = standard(4, 8.0, 15.0);
    replay_cfg.source.kind = SourceKind::replay;
    replay_cfg.source.replay_path = dir.path() / "run.pieeg";
    const auto replay = Session(replay_cfg).run();
    CHECK(event_log_text(replay.events) == event_log_text(live.events));
    CHECK(replay.pulses == live.pulses);
    CHECK(ReplayReader(dir.path() / "run.pieeg").header().session_id == 4);
}

TEST_CASE("replay of a malformed file fails before processing") {
    test::TempDir dir;
    const auto path = dir.path() / "bad.pieeg";
    std::ofstream(path) << "not a recording at all, clearly";
    SessionConfig c;
    c.source.kind = SourceKind::replay;
    c.source.replay_path = path;
    CHECK_THROWS_AS(Session(c).run(), FormatError);
}

TEST_CASE("session config validation") {
    SessionConfig c;
    CHECK_NOTHROW(c.validate());
    c.analysis_channel = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.source.kind = SourceKind::replay;
    c.source.replay_path = "/definitely/not/here.pieeg";
    CHECK_THROWS_AS(c.validate(), SourceError);
    c = {};
    c.source.script_path = "/definitely/not/here.txt";
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stop request drains and ends a paced run") {
    SessionConfig c;
    c.source.duration_s = 30.0;
    c.source.speed = 1.0;
    Session s(c);
    std::thread stopper([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        s.request_stop();
    });
    const auto start = std::chrono::steady_clock::now();
    const auto summary = s.run();
    stopper.join();
    CHECK(summary.stopped_early);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));
    CHECK(summary.frames < 250 * 30);
}

TEST_CASE("calibration on a zero-noise simulation") {
    DeviceConfig d;
    std::vector<BlinkLabel> labels;
    const auto script = blink_rate_script(1.0, 10, 6.0, 100.0);
    const auto frames = generate(22.0, d, script, NoiseModel::silent(), &labels);
    const auto w = WindowSpec::default_for(250);
    const auto r = calibrate_threshold(frames, d, labels, 0, {}, w, 3.0, 7.0);
    CHECK(r.threshold_uv > 0.0);
    CHECK(r.threshold_uv < r.blink_median);
    CHECK_FALSE(r.blink_peaks.empty());
    CHECK_FALSE(r.noise_peaks.empty());
    for (double p : r.blink_peaks)
        CHECK(r.threshold_uv < p + 1e-9);
    CHECK(r.threshold_uv == Catch::Approx(r.noise_p99 + 0.5 * (r.blink_median - r.noise_p99)));

    const auto edge = calibrate_threshold(frames, d, labels, 0, {}, w, 3.0, 7.0, 0.0);
    CHECK(edge.threshold_uv == edge.noise_p99);
}

TEST_CASE("calibration input requirements") {
    DeviceConfig d;
    const auto w = WindowSpec::default_for(250);
    std::vector<BlinkLabel> labels;
    auto frames = generate(10.0, d, {}, NoiseModel{}, &labels);
    CHECK_THROWS_AS(calibrate_threshold(frames, d, labels, 0, {}, w, 3.0, 7.0), CalibrationError);

    const auto short_script = blink_rate_script(1.0, 3, 1.0, 100.0);
    frames = generate(4.5, d, short_script, NoiseModel{}, &labels);
    CHECK_THROWS_AS(calibrate_threshold(frames, d, labels, 0, {}, w, 3.0, 7.0), CalibrationError);

    // Blinks far too small to separate from the background.
    const auto faint = blink_rate_script(1.0, 10, 6.0, 0.01);
    NoiseModel loud;
    loud.white_rms_uv = 20.0;
    frames = generate(22.0, d, faint, loud, &labels);
    try {
        calibrate_threshold(frames, d, labels, 0, {}, w, 3.0, 7.0);
        FAIL("expected CalibrationError");
    } catch (const CalibrationError& e) {
        CHECK(e.blink_median() <= e.noise_p99());
    }
}

TEST_CASE("calibration through a source") {
    const auto cfg = standard(2, 1.0, 1.0);
    SimulatedSource src(cfg.source.duration_s, cfg.device, cfg.source.script, cfg.source.noise);
    const auto r = calibrate_threshold(src, 0, {}, std::nullopt, 3.0, 7.0);
    CHECK(r.threshold_uv > r.noise_p99);
    CHECK(r.threshold_uv < r.blink_median);
}

TEST_CASE("session config JSON round trip keeps every field") {
    auto c = standard(9, 12.5, 20.0);
    c.device.metadata["montage"] = "Fz";
    c.analysis_channel = 3;
    c.filter = {0.5, 40.0, 6};
    c.window = WindowSpec{500, 100, Taper::hann};
    c.pin_map.entries["bandA"].pulse_ms = 250;
    c.pin_map.entries["bandB"].active_level = ActiveLevel::low;
    c.record_path = "/tmp/x.pieeg";
    c.source.noise.mains_hz = 50.0;
    c.source.noise.mains_amplitude_uv = 3.0;
    const auto j = to_json(c);
    const auto back = session_from_json(Json::parse(j.dump()));
    CHECK(to_json(back).dump() == j.dump());
    CHECK(back.detectors[0].threshold_uv == 12.5);
    CHECK(back.window->taper == Taper::hann);
    CHECK(back.pin_map.entries.at("bandB").active_level == ActiveLevel::low);
}

TEST_CASE("session config JSON defaults, nulls and errors") {
    const auto c = session_from_json(Json::parse(R"({"device":{"gain":12}})"));
    CHECK(c.device.gain == 12);
    CHECK(c.device.sample_rate_sps == 250);
    CHECK(c.detectors.size() == 2);
    CHECK_FALSE(c.window.has_value());

    const auto j = to_json(SessionConfig{});
    CHECK(j["detectors"][0]["threshold_uv"].is_null());
    CHECK(j["window"].is_null());

    CHECK_THROWS_AS(session_from_json(Json::parse(R"({"device":{"gain":"high"}})")), ConfigError);
    CHECK_THROWS_AS(session_from_json(Json::parse(R"({"source":{"kind":"tape"}})")), ConfigError);
    CHECK_THROWS_AS(session_from_json(Json::parse(R"({"filter":{"design":"chebyshev"}})")), ConfigError);
    CHECK_THROWS_AS(session_from_json(Json::parse("[1,2]")), ConfigError);

    test::TempDir dir;
    std::ofstream(dir.path() / "c.json") << R"({"analysis_channel": 2})";
    CHECK(load_session_config(dir.path() / "c.json").analysis_channel == 2);
    std::ofstream(dir.path() / "bad.json") << "{not json";
    CHECK_THROWS_AS(load_session_config(dir.path() / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_session_config(dir.path() / "missing.json"), ConfigError);
}

TEST_CASE("event JSON uses the wire field order") {
    const DetectionEvent e{"bandA", 2'500'000'000, 5.0, 131.2, 100.0};
    CHECK(to_json(e).dump() ==
          R"({"detector_id":"bandA","t_ns":2500000000,"peak_hz":5.0,"peak_uv":131.2,"threshold_uv":100.0})");
}

TEST_CASE("control message parsing") {
    auto c = parse_control(Json::parse(
        R"({"kind":"control","cmd":"set_threshold","detector_id":"bandA","threshold_uv":100.0,"cmd_seq":3})"));
    CHECK(c.kind == ControlKind::set_threshold);
    CHECK(c.threshold_uv == 100.0);
    CHECK(c.cmd_seq == 3);

    c = parse_control(Json::parse(R"({"cmd":"set_band","detector_id":"bandB","low_hz":1,"high_hz":4})"));
    CHECK(c.kind == ControlKind::set_band);
    CHECK(c.high_hz == 4.0);
    CHECK_FALSE(c.cmd_seq);

    c = parse_control(Json::parse(R"({"cmd":"enable_detector","detector_id":"bandA"})"));
    CHECK(c.enabled);
    c = parse_control(Json::parse(R"({"cmd":"select_source","source":{"kind":"simulate","duration_s":5}})"));
    REQUIRE(c.source);
    CHECK(c.source->duration_s == 5.0);

    CHECK_THROWS_AS(parse_control(Json::parse(R"({"cmd":"explode"})")), ConfigError);
    CHECK_THROWS_AS(parse_control(Json::parse(R"({"cmd":"set_threshold","detector_id":"bandA"})")), ConfigError);
    CHECK_THROWS_AS(parse_control(Json::parse(R"({"cmd":"set_threshold","detector_id":"bandA","threshold_uv":"x"})")),
                    ConfigError);
    CHECK_THROWS_AS(parse_control(Json::parse(R"({"kind":"event","cmd":"start"})")), ConfigError);
}

TEST_CASE("live session applies detector commands and guards source changes") {
    SessionConfig cfg;
    cfg.source.duration_s = 3.0;
    LiveSession live(cfg);

    ControlCommand enable;
    enable.kind = ControlKind::enable_detector;
    enable.detector_id = "bandA";
    const auto early = live.apply(enable);
    CHECK_FALSE(early.ok);
    CHECK(early.reason.find("not calibrated") != std::string::npos);

    ControlCommand thr;
    thr.kind = ControlKind::set_threshold;
    thr.detector_id = "bandA";
    thr.threshold_uv = 120.0;
    const auto ok = live.apply(thr);
    CHECK(ok.ok);
    CHECK(ok.applied["threshold_uv"] == 120.0);
    CHECK(live.status()["config"]["detectors"][0]["threshold_uv"] == 120.0);
    CHECK(live.apply(enable).ok);

    ControlCommand band;
    band.kind = ControlKind::set_band;
    band.detector_id = "bandA";
    band.low_hz = 7.0;
    band.high_hz = 3.0;
    const auto rejected = live.apply(band);
    CHECK_FALSE(rejected.ok);
    CHECK(rejected.reason == "low ≥ high");
    CHECK(live.status()["config"]["detectors"][0]["band_low_hz"] == 3.0);

    ControlCommand unknown = thr;
    unknown.detector_id = "bandQ";
    CHECK_FALSE(live.apply(unknown).ok);

    ControlCommand select;
    select.kind = ControlKind::select_source;
    select.source = SourceSpec{};
    select.source->duration_s = 2.0;
    CHECK(live.apply(select).ok);

    CHECK(live.start().ok);
    CHECK_FALSE(live.start().ok);
    CHECK_FALSE(live.apply(select).ok);
    live.wait();
    CHECK_FALSE(live.running());
    REQUIRE(live.last_summary());
    CHECK(live.last_summary()->frames == 500);
    CHECK_FALSE(live.stop().ok);

    // Restart after a finished run.
    CHECK(live.start().ok);
    live.wait();
    CHECK(live.status()["runs"] == 2);
}
