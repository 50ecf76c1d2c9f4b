#pragma once

#include "pieeg/config_json.hpp"
#include "pieeg/session.hpp"

#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace pieeg {

enum class ControlKind { set_threshold, set_band, set_refractory, enable_detector, start, stop, select_source };

std::string_view to_string(ControlKind kind);

struct ControlCommand {
    ControlKind kind = ControlKind::start;
    std::string detector_id;
    double threshold_uv = 0.0;
    double low_hz = 0.0;
    double high_hz = 0.0;
    double refractory_s = 0.0;
    bool enabled = true;
    std::optional<SourceSpec> source;
    std::optional<std::int64_t> cmd_seq;
};

// Accepts {"kind":"control","cmd":"set_threshold","detector_id":..,"threshold_uv":..}
// and the analogous set_band (low_hz/high_hz), set_refractory (refractory_s),
// enable_detector (enabled), start, stop, select_source (source) forms.
// Throws ConfigError naming the offending field.
ControlCommand parse_control(const Json& j);

struct ControlResult {
    bool ok = false;
    std::string reason;
    Json applied;
};

// Something a control channel can drive: a status snapshot plus commands.
class ControlTarget {
public:
    virtual ~ControlTarget() = default;
    virtual Json status() const = 0;
    virtual ControlResult apply(const ControlCommand& command) = 0;
};

// Owns the configuration between runs and one background Session while
// running. Detector changes go through the shared bank, so a running session
// picks them up at the next spectrum.
class LiveSession : public ControlTarget {
public:
    explicit LiveSession(SessionConfig config);
    ~LiveSession() override;

    LiveSession(const LiveSession&) = delete;
    LiveSession& operator=(const LiveSession&) = delete;

    Json status() const override;
    ControlResult apply(const ControlCommand& command) override;

    // Must be set before start().
    void set_observer(SessionObserver* observer) { observer_ = observer; }
    // Called from the run thread when a run finishes on its own or fails.
    void set_on_finished(std::function<void()> callback) { on_finished_ = std::move(callback); }

    ControlResult start();
    ControlResult stop();
    bool running() const;
    // Blocks until the current run (if any) has finished.
    void wait();

    std::optional<SessionSummary> last_summary() const;
    std::optional<std::string> last_error() const;
    SessionConfig config() const;

private:
    mutable std::mutex mutex_;
    std::condition_variable finished_cv_;
    SessionConfig config_;
    std::shared_ptr<SharedDetectorBank> bank_;
    SessionObserver* observer_ = nullptr;
    std::function<void()> on_finished_;
    std::unique_ptr<Session> session_;
    std::thread thread_;
    bool running_ = false;
    std::optional<SessionSummary> summary_;
    std::optional<std::string> error_;
    std::uint64_t runs_ = 0;
};

} // namespace pieeg
