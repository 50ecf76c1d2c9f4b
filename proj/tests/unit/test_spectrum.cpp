#include "catch_amalgamated.hpp"

#include "pieeg/dsp.hpp"
#include "pieeg/errors.hpp"
#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace pieeg;

namespace {

std::vector<double> random_window(std::mt19937_64& rng, int n, double scale = 50.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> x(n);
    for (auto& v : x)
        v = d(rng);
    return x;
}

SpectrumFrame spectrum_from(std::vector<double> amps, double bin_hz) {
    SpectrumFrame s;
    s.bin_hz = bin_hz;
    s.amplitudes_uv = std::move(amps);
    return s;
}

} // namespace

TEST_CASE("zero window gives a zero spectrum of length n/2 + 1") {
    for (int n : {250, 256, 251}) {
        const std::vector<double> x(n, 0.0);
        for (auto taper : {Taper::rectangular, Taper::hann}) {
            const auto s = fft_amplitude(x, taper, 250.0);
            CHECK(s.amplitudes_uv.size() == static_cast<std::size_t>(n / 2 + 1));
            CHECK(s.bin_hz == Catch::Approx(250.0 / n));
            for (double a : s.amplitudes_uv)
                CHECK(a == 0.0);
        }
    }
}

TEST_CASE("exact-bin 5 Hz 100 uV tone reads 100 uV in its bin only") {
    const auto x = oracle::tone(5.0, 100.0, 250.0, 250, 0.4);
    const auto s = fft_amplitude(x, Taper::rectangular, 250.0, 123);
    CHECK(s.t_end_ns == 123);
    REQUIRE(s.amplitudes_uv.size() == 126);
    CHECK(std::abs(s.amplitudes_uv[5] - 100.0) <= 0.1);
    for (std::size_t k = 0; k < s.amplitudes_uv.size(); ++k)
        if (k != 5)
            CHECK(s.amplitudes_uv[k] < 1.0);
}

TEST_CASE("hann taper keeps the exact-bin amplitude convention") {
    const auto x = oracle::tone(12.0, 40.0, 250.0, 250);
    const auto s = fft_amplitude(x, Taper::hann, 250.0);
    CHECK(s.amplitudes_uv[12] == Catch::Approx(40.0).epsilon(1e-9));
}

TEST_CASE("DC and Nyquist are not doubled") {
    const int n = 256;
    std::vector<double> dc(n, 7.0);
    CHECK(fft_amplitude(dc, Taper::rectangular, 256.0).amplitudes_uv[0] == Catch::Approx(7.0));
    std::vector<double> nyq(n);
    for (int i = 0; i < n; ++i)
        nyq[i] = (i % 2 == 0 ? 3.0 : -3.0);
    CHECK(fft_amplitude(nyq, Taper::rectangular, 256.0).amplitudes_uv[n / 2] == Catch::Approx(3.0));
}

TEST_CASE("spectrum matches a direct DFT on random windows") {
    std::mt19937_64 rng(1234);
    for (int n : {250, 256, 125, 63}) {
        for (auto taper : {Taper::rectangular, Taper::hann}) {
            const auto x = random_window(rng, n);
            const auto got = fft_amplitude(x, taper, 250.0).amplitudes_uv;
            const auto want = oracle::dft_amplitude(x, taper == Taper::hann);
            REQUIRE(got.size() == want.size());
            for (std::size_t k = 0; k < got.size(); ++k)
                CHECK(got[k] == Catch::Approx(want[k]).epsilon(1e-9).margin(1e-9));
        }
    }
}

TEST_CASE("taper weights are the periodic hann") {
    SpectrumAnalyzer a(64, Taper::hann);
    const auto w = a.taper_weights();
    for (int i = 0; i < 64; ++i)
        CHECK(w[i] == Catch::Approx(oracle::periodic_hann(i, 64)).margin(1e-15));
    SpectrumAnalyzer r(64, Taper::rectangular);
    for (double v : r.taper_weights())
        CHECK(v == 1.0);
}

TEST_CASE("Parseval holds within 1e-6 relative") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = std::uniform_int_distribution<int>(16, 1024)(rng);
        const auto taper = trial % 2 ? Taper::hann : Taper::rectangular;
        const auto x = random_window(rng, n, 1.0 + trial);
        SpectrumAnalyzer a(n, taper);
        const auto amps = a.analyze(x, 250.0).amplitudes_uv;
        const auto w = a.taper_weights();
        double time_energy = 0.0;
        for (int i = 0; i < n; ++i)
            time_energy += (w[i] * x[i]) * (w[i] * x[i]);
        const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        const double freq_energy = oracle::energy_from_amplitudes(amps, n, wsum);
        CHECK(std::abs(freq_energy - time_energy) <= 1e-6 * time_energy);
    }
}

TEST_CASE("amplitude spectrum is linear in scale") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_window(rng, 250);
        const double k = std::uniform_real_distribution<double>(-10.0, 10.0)(rng);
        auto y = x;
        for (auto& v : y)
            v *= k;
        const auto sx = fft_amplitude(x, Taper::hann, 250.0).amplitudes_uv;
        const auto sy = fft_amplitude(y, Taper::hann, 250.0).amplitudes_uv;
        for (std::size_t i = 0; i < sx.size(); ++i)
            CHECK(sy[i] == Catch::Approx(std::abs(k) * sx[i]).epsilon(1e-9).margin(1e-9));
    }
}

TEST_CASE("analyzer rejects a window of the wrong length") {
    SpectrumAnalyzer a(250, Taper::rectangular);
    const std::vector<double> x(249, 0.0);
    CHECK_THROWS_AS(a.analyze(x, 250.0), ConfigError);
}

TEST_CASE("band peak examples") {
    const auto zero = spectrum_from(std::vector<double>(126, 0.0), 1.0);
    const auto z = band_peak(zero, 3.0, 7.0);
    CHECK(z.peak_hz == 3.0);
    CHECK(z.peak_uv == 0.0);

    const auto x = oracle::tone(5.0, 100.0, 250.0, 250);
    const auto s = fft_amplitude(x, Taper::rectangular, 250.0);
    const auto a = band_peak(s, 3.0, 7.0);
    CHECK(a.peak_hz == Catch::Approx(5.0));
    CHECK(a.peak_uv == Catch::Approx(100.0).epsilon(1e-3));
    CHECK(band_peak(s, 1.0, 3.0).peak_uv < 1.0);
}

TEST_CASE("band edges are inclusive and ties go to the lower bin") {
    std::vector<double> amps(126, 0.0);
    amps[3] = 10.0;
    amps[7] = 20.0;
    const auto s = spectrum_from(amps, 1.0);
    CHECK(band_peak(s, 3.0, 7.0).peak_hz == 7.0);
    CHECK(band_peak(s, 3.0, 6.0).peak_hz == 3.0);
    CHECK(band_peak(s, 3.0, 6.0).peak_uv == 10.0);
    CHECK(band_peak(s, 4.0, 6.9).peak_uv == 0.0);

    amps[5] = 20.0;
    const auto tie = spectrum_from(amps, 1.0);
    CHECK(band_peak(tie, 3.0, 7.0).peak_hz == 5.0);

    // Bin centres computed as k * bin_hz with bin_hz = 250/256 still land on
    // an inclusive edge given as that same product.
    std::vector<double> fine(129, 0.0);
    fine[10] = 1.0;
    const double bin = 250.0 / 256.0;
    const auto f = spectrum_from(fine, bin);
    CHECK(band_peak(f, 10 * bin, 12 * bin).peak_uv == 1.0);
    CHECK(band_peak(f, 8 * bin, 10 * bin).peak_uv == 1.0);
}

TEST_CASE("band peak errors") {
    const auto s = spectrum_from(std::vector<double>(126, 1.0), 1.0);
    CHECK_THROWS_AS(band_peak(s, 3.2, 3.8), EmptyBandError);
    CHECK_THROWS_AS(band_peak(s, 7.0, 3.0), ConfigError);
    CHECK_THROWS_AS(band_peak(s, -1.0, 3.0), ConfigError);
    CHECK_THROWS_AS(band_peak(s, 3.0, 200.0), ConfigError);
}

TEST_CASE("band peak is monotone under band inclusion") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = random_window(rng, 250);
        const auto s = fft_amplitude(x, Taper::rectangular, 250.0);
        const auto whole = band_peak(s, 0.0, 125.0);
        std::uniform_real_distribution<double> edge(0.0, 125.0);
        double a = edge(rng);
        double b = edge(rng);
        if (a > b)
            std::swap(a, b);
        if (std::floor(b) < std::ceil(a))
            continue;
        const auto sub = band_peak(s, a, b);
        CHECK(whole.peak_uv >= sub.peak_uv);
        CHECK(sub.peak_hz >= a - 1e-9);
        CHECK(sub.peak_hz <= b + 1e-9);
    }
}

TEST_CASE("sliding window first fill and overlap") {
    SlidingWindow w({256, 64, Taper::rectangular});
    std::vector<TimedSample> chunk;
    for (int i = 0; i < 256; ++i)
        chunk.push_back({i * 1000LL, static_cast<double>(i)});
    auto out = w.push(chunk);
    REQUIRE(out.size() == 1);
    CHECK(out[0].t_end_ns == 255000);
    CHECK(out[0].first_sample_index == 0);
    CHECK(out[0].samples.front() == 0.0);
    CHECK(out[0].samples.back() == 255.0);

    chunk.clear();
    for (int i = 256; i < 320; ++i)
        chunk.push_back({i * 1000LL, static_cast<double>(i)});
    const auto more = w.push(chunk);
    REQUIRE(more.size() == 1);
    CHECK(more[0].t_end_ns == 319000);
    CHECK(more[0].first_sample_index == 64);
    const std::vector<double> shared_a(out[0].samples.begin() + 64, out[0].samples.end());
    const std::vector<double> shared_b(more[0].samples.begin(), more[0].samples.begin() + 192);
    CHECK(shared_a == shared_b);

    chunk.clear();
    for (int i = 320; i < 383; ++i)
        chunk.push_back({i * 1000LL, static_cast<double>(i)});
    CHECK(w.push(chunk).empty());
}

TEST_CASE("sliding window follows the hop schedule for any chunking") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const int length = std::uniform_int_distribution<int>(2, 300)(rng);
        const int hop = std::uniform_int_distribution<int>(1, length)(rng);
        const int total = std::uniform_int_distribution<int>(0, 2000)(rng);
        SlidingWindow w({length, hop, Taper::rectangular});
        std::vector<AnalysisWindow> got;
        int pos = 0;
        while (pos < total) {
            const int k = std::min(total - pos, std::uniform_int_distribution<int>(1, 50)(rng));
            std::vector<TimedSample> chunk;
            for (int i = pos; i < pos + k; ++i)
                chunk.push_back({static_cast<std::int64_t>(i), static_cast<double>(i)});
            auto out = w.push(chunk);
            got.insert(got.end(), out.begin(), out.end());
            pos += k;
        }
        const int expected = total < length ? 0 : (total - length) / hop + 1;
        REQUIRE(static_cast<int>(got.size()) == expected);
        CHECK(w.samples_seen() == static_cast<std::uint64_t>(total));
        for (int i = 0; i < expected; ++i) {
            const int first = i * hop;
            CHECK(got[i].first_sample_index == static_cast<std::uint64_t>(first));
            CHECK(got[i].t_end_ns == first + length - 1);
            for (int j = 0; j < length; ++j)
                REQUIRE(got[i].samples[j] == static_cast<double>(first + j));
        }
    }
}

TEST_CASE("sliding window rejects non-monotone timestamps") {
    SlidingWindow w({4, 2, Taper::rectangular});
    w.push(10, 1.0);
    CHECK_THROWS_AS(w.push(10, 1.0), StreamIntegrityError);
    CHECK_THROWS_AS(w.push(5, 1.0), StreamIntegrityError);
    CHECK_NOTHROW(w.push(11, 1.0));
}

TEST_CASE("window spec validation and defaults") {
    CHECK_THROWS_AS((WindowSpec{10, 11, Taper::rectangular}.validate()), ConfigError);
    CHECK_THROWS_AS((WindowSpec{1, 1, Taper::rectangular}.validate()), ConfigError);
    CHECK_THROWS_AS((WindowSpec{10, 0, Taper::rectangular}.validate()), ConfigError);
    const auto d = WindowSpec::default_for(250);
    CHECK(d.length_samples == 250);
    CHECK(d.hop_samples == 63);
    CHECK(d.taper == Taper::rectangular);
    CHECK(WindowSpec::default_for(16000).hop_samples == 4000);
    CHECK(taper_from_string("hann") == Taper::hann);
    CHECK_THROWS_AS(taper_from_string("kaiser"), ConfigError);
}

TEST_CASE("feature extractor output does not depend on chunking") {
    DeviceConfig d;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 20e-6);
    std::vector<SampleVector> samples(1500);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i].t_ns = static_cast<std::int64_t>(i) * d.sample_period_ns();
        for (auto& v : samples[i].volts)
            v = n(rng);
    }
    auto run = [&](int chunk_len) {
        FeatureExtractor fx(d, 2, {}, WindowSpec::default_for(250));
        std::vector<SpectrumFrame> spectra;
        for (std::size_t pos = 0; pos < samples.size(); pos += chunk_len) {
            SampleChunk c;
            c.samples.assign(samples.begin() + pos,
                             samples.begin() + std::min(samples.size(), pos + chunk_len));
            fx.push(c, spectra);
        }
        return spectra;
    };
    const auto a = run(1);
    const auto b = run(37);
    REQUIRE(a.size() == (1500 - 250) / 63 + 1);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].t_end_ns == b[i].t_end_ns);
        CHECK(a[i].amplitudes_uv == b[i].amplitudes_uv);
    }
}
