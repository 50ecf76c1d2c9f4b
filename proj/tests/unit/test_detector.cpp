#include "catch_amalgamated.hpp"

#include "pieeg/blink_detector.hpp"
#include "pieeg/errors.hpp"

#include <algorithm>
#include <random>

using namespace pieeg;

namespace {

constexpr std::int64_t kSec = 1'000'000'000;

// 1 Hz bins, value `uv` at 5 Hz and zero elsewhere.
SpectrumFrame peak_at_5hz(std::int64_t t_ns, double uv) {
    SpectrumFrame s;
    s.t_end_ns = t_ns;
    s.bin_hz = 1.0;
    s.amplitudes_uv.assign(126, 0.0);
    s.amplitudes_uv[5] = uv;
    return s;
}

DetectorConfig armed(double threshold, double refractory = 1.0) {
    DetectorConfig c{"bandA", 3.0, 7.0, threshold, refractory, true};
    return c;
}

} // namespace

TEST_CASE("level trigger examples") {
    Detector d(armed(100.0));
    const auto e = d.evaluate(peak_at_5hz(kSec, 120.0));
    REQUIRE(e);
    CHECK(e->detector_id == "bandA");
    CHECK(e->t_ns == kSec);
    CHECK(e->peak_hz == 5.0);
    CHECK(e->peak_uv == 120.0);
    CHECK(e->threshold_uv == 100.0);

    Detector quiet(armed(100.0));
    CHECK_FALSE(quiet.evaluate(peak_at_5hz(kSec, 80.0)));

    Detector exact(armed(100.0));
    CHECK(exact.evaluate(peak_at_5hz(kSec, 100.0)));
}

TEST_CASE("refractory hold-off") {
    Detector d(armed(100.0, 1.0));
    CHECK(d.evaluate(peak_at_5hz(kSec, 150.0)));
    CHECK_FALSE(d.evaluate(peak_at_5hz(kSec + kSec / 4, 150.0)));
    CHECK_FALSE(d.evaluate(peak_at_5hz(kSec + kSec - 1, 150.0)));
    CHECK(d.evaluate(peak_at_5hz(2 * kSec, 150.0)));
}

TEST_CASE("default bank is two uncalibrated, disabled detectors") {
    const auto bank = default_bank();
    REQUIRE(bank.size() == 2);
    CHECK(bank[0].detector_id == "bandA");
    CHECK(bank[0].band_low_hz == 3.0);
    CHECK(bank[0].band_high_hz == 7.0);
    CHECK(bank[1].detector_id == "bandB");
    CHECK(bank[1].band_low_hz == 1.0);
    CHECK(bank[1].band_high_hz == 3.0);
    for (const auto& c : bank) {
        CHECK_FALSE(c.enabled);
        CHECK_FALSE(c.threshold_uv.has_value());
        CHECK(c.refractory_s == 1.0);
    }
    DetectorBank b(bank);
    std::vector<DetectionEvent> out;
    for (int i = 0; i < 10; ++i)
        b.evaluate(peak_at_5hz(i * kSec, 1e6), out);
    CHECK(out.empty());
}

TEST_CASE("disabled detector neither fires nor advances its clock") {
    auto cfg = armed(100.0);
    cfg.enabled = false;
    Detector d(cfg);
    CHECK_FALSE(d.evaluate(peak_at_5hz(kSec, 500.0)));
    CHECK_FALSE(d.last_event_ns());
    cfg.enabled = true;
    d.update_config(cfg);
    CHECK(d.evaluate(peak_at_5hz(kSec + 1, 500.0)));
}

TEST_CASE("config validation reasons") {
    auto c = armed(100.0);
    c.band_low_hz = 7.0;
    c.band_high_hz = 3.0;
    try {
        c.validate();
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()) == "low ≥ high");
    }
    c = armed(0.0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = armed(-5.0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = armed(100.0, -1.0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = armed(100.0);
    c.threshold_uv.reset();
    CHECK_THROWS_WITH(c.validate(), Catch::Matchers::ContainsSubstring("not calibrated"));
    c.enabled = false;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("update_config applies forward only and keeps the prior config on rejection") {
    Detector d(armed(100.0, 0.0));
    CHECK(d.evaluate(peak_at_5hz(1 * kSec, 150.0)));
    auto raised = armed(200.0, 0.0);
    CHECK(d.update_config(raised) == raised);
    CHECK_FALSE(d.evaluate(peak_at_5hz(2 * kSec, 150.0)));

    auto bad = raised;
    bad.threshold_uv = 0.0;
    CHECK_THROWS_AS(d.update_config(bad), ConfigError);
    CHECK(d.config() == raised);

    auto renamed = raised;
    renamed.detector_id = "other";
    CHECK_THROWS_AS(d.update_config(renamed), ConfigError);
}

TEST_CASE("band change takes effect at the next spectrum") {
    DetectorBank bank({armed(100.0, 0.0)});
    std::vector<DetectionEvent> out;
    bank.evaluate(peak_at_5hz(kSec, 150.0), out);
    CHECK(out.size() == 1);
    auto low = armed(100.0, 0.0);
    low.band_low_hz = 1.0;
    low.band_high_hz = 3.0;
    bank.update_config(low);
    CHECK(out.size() == 1);
    bank.evaluate(peak_at_5hz(2 * kSec, 150.0), out);
    CHECK(out.size() == 1);
    CHECK(bank.config("bandA").band_high_hz == 3.0);
    CHECK_THROWS_AS(bank.config("bandZ"), ConfigError);
}

TEST_CASE("refractory clock survives config updates") {
    Detector d(armed(100.0, 1.0));
    CHECK(d.evaluate(peak_at_5hz(kSec, 150.0)));
    d.update_config(armed(50.0, 1.0));
    CHECK_FALSE(d.evaluate(peak_at_5hz(kSec + kSec / 2, 150.0)));
}

TEST_CASE("out-of-order spectra are rejected") {
    Detector d(armed(100.0));
    d.evaluate(peak_at_5hz(2 * kSec, 10.0));
    CHECK_THROWS_AS(d.evaluate(peak_at_5hz(kSec, 10.0)), StreamIntegrityError);
}

TEST_CASE("detector properties over random spectrum sequences") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_real_distribution<double> amp(0.0, 200.0);
        std::vector<SpectrumFrame> seq;
        std::int64_t t = 0;
        for (int i = 0; i < 60; ++i) {
            t += std::uniform_int_distribution<std::int64_t>(1, kSec / 2)(rng);
            auto s = peak_at_5hz(t, 0.0);
            for (int k = 0; k < 20; ++k)
                s.amplitudes_uv[k] = amp(rng);
            seq.push_back(s);
        }
        const double t1 = std::uniform_real_distribution<double>(1.0, 150.0)(rng);
        const double t2 = t1 + std::uniform_real_distribution<double>(0.0, 50.0)(rng);
        const double refr = std::uniform_real_distribution<double>(0.0, 2.0)(rng);

        auto run = [&](double thr, double refractory) {
            Detector d(armed(thr, refractory));
            std::vector<DetectionEvent> out;
            for (const auto& s : seq)
                if (auto e = d.evaluate(s))
                    out.push_back(*e);
            return out;
        };

        const auto events = run(t1, refr);
        for (std::size_t i = 0; i < events.size(); ++i) {
            CHECK(events[i].peak_uv >= events[i].threshold_uv);
            CHECK(events[i].peak_hz >= 3.0);
            CHECK(events[i].peak_hz <= 7.0);
            if (i > 0)
                CHECK(events[i].t_ns - events[i - 1].t_ns >= static_cast<std::int64_t>(refr * 1e9));
        }
        CHECK(run(t1, refr) == events);

        // With no refractory the event set shrinks as the threshold rises.
        const auto lo = run(t1, 0.0);
        const auto hi = run(t2, 0.0);
        for (const auto& e : hi) {
            const bool found = std::any_of(lo.begin(), lo.end(), [&](const auto& x) { return x.t_ns == e.t_ns; });
            CHECK(found);
        }
    }
}
