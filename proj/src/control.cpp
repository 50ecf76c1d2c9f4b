#include "pieeg/control.hpp"

#include "pieeg/errors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pieeg {

std::string_view to_string(ControlKind kind) {
    switch (kind) {
    case ControlKind::set_threshold: return "set_threshold";
    case ControlKind::set_band: return "set_band";
    case ControlKind::set_refractory: return "set_refractory";
    case ControlKind::enable_detector: return "enable_detector";
    case ControlKind::start: return "start";
    case ControlKind::stop: return "stop";
    case ControlKind::select_source: return "select_source";
    }
    return "unknown";
}

namespace {

template <typename T>
T field(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null())
        throw ConfigError(fmt::format("control: missing field '{}'", key));
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(fmt::format("control: field '{}' has the wrong type", key));
    }
}

} // namespace

ControlCommand parse_control(const Json& j) {
    if (!j.is_object())
        throw ConfigError("control: message must be a JSON object");
    if (j.contains("kind") && j.at("kind") != "control")
        throw ConfigError("control: kind must be \"control\"");

    ControlCommand c;
    if (j.contains("cmd_seq") && !j.at("cmd_seq").is_null())
        c.cmd_seq = field<std::int64_t>(j, "cmd_seq");

    const auto cmd = field<std::string>(j, "cmd");
    if (cmd == "set_threshold") {
        c.kind = ControlKind::set_threshold;
        c.detector_id = field<std::string>(j, "detector_id");
        c.threshold_uv = field<double>(j, "threshold_uv");
    } else if (cmd == "set_band") {
        c.kind = ControlKind::set_band;
        c.detector_id = field<std::string>(j, "detector_id");
        c.low_hz = field<double>(j, "low_hz");
        c.high_hz = field<double>(j, "high_hz");
    } else if (cmd == "set_refractory") {
        c.kind = ControlKind::set_refractory;
        c.detector_id = field<std::string>(j, "detector_id");
        c.refractory_s = field<double>(j, "refractory_s");
    } else if (cmd == "enable_detector") {
        c.kind = ControlKind::enable_detector;
        c.detector_id = field<std::string>(j, "detector_id");
        c.enabled = j.contains("enabled") ? field<bool>(j, "enabled") : true;
    } else if (cmd == "start") {
        c.kind = ControlKind::start;
    } else if (cmd == "stop") {
        c.kind = ControlKind::stop;
    } else if (cmd == "select_source") {
        c.kind = ControlKind::select_source;
        if (!j.contains("source"))
            throw ConfigError("control: missing field 'source'");
        c.source = source_from_json(j.at("source"));
    } else {
        throw ConfigError(fmt::format("control: unknown cmd '{}'", cmd));
    }
    return c;
}

LiveSession::LiveSession(SessionConfig config) : config_(std::move(config)) {
    config_.validate();
    bank_ = std::make_shared<SharedDetectorBank>(config_.detectors);
}

LiveSession::~LiveSession() {
    stop();
    wait();
}

bool LiveSession::running() const {
    std::lock_guard lock(mutex_);
    return running_;
}

SessionConfig LiveSession::config() const {
    std::lock_guard lock(mutex_);
    return config_;
}

std::optional<SessionSummary> LiveSession::last_summary() const {
    std::lock_guard lock(mutex_);
    return summary_;
}

std::optional<std::string> LiveSession::last_error() const {
    std::lock_guard lock(mutex_);
    return error_;
}

Json LiveSession::status() const {
    std::lock_guard lock(mutex_);
    SessionConfig shown = config_;
    shown.detectors = bank_->configs();
    Json j;
    j["running"] = running_;
    j["runs"] = runs_;
    j["error"] = error_ ? Json(*error_) : Json(nullptr);
    j["config"] = to_json(shown);
    return j;
}

ControlResult LiveSession::start() {
    std::thread finished;
    {
        std::lock_guard lock(mutex_);
        if (running_)
            return {false, "session already running", {}};
        finished = std::move(thread_);
    }
    // The finished run may still be inside its completion callback.
    if (finished.joinable())
        finished.join();

    std::lock_guard lock(mutex_);
    if (running_ || thread_.joinable())
        return {false, "session already running", {}};

    SessionConfig cfg = config_;
    cfg.detectors = bank_->configs();
    try {
        cfg.validate();
    } catch (const Error& e) {
        return {false, e.what(), {}};
    }
    session_ = std::make_unique<Session>(cfg, bank_);
    session_->set_observer(observer_);
    running_ = true;
    error_.reset();
    ++runs_;
    thread_ = std::thread([this] {
        std::optional<SessionSummary> summary;
        std::optional<std::string> error;
        try {
            summary = session_->run();
        } catch (const std::exception& e) {
            error = e.what();
            spdlog::error("session run failed: {}", e.what());
        }
        std::function<void()> callback;
        {
            std::lock_guard inner(mutex_);
            summary_ = std::move(summary);
            error_ = std::move(error);
            running_ = false;
            callback = on_finished_;
        }
        finished_cv_.notify_all();
        if (callback)
            callback();
    });
    return {true, "", Json{{"running", true}}};
}

ControlResult LiveSession::stop() {
    std::lock_guard lock(mutex_);
    if (!running_)
        return {false, "session not running", {}};
    session_->request_stop();
    return {true, "", Json{{"running", false}}};
}

void LiveSession::wait() {
    std::unique_lock lock(mutex_);
    finished_cv_.wait(lock, [this] { return !running_; });
    if (thread_.joinable()) {
        std::thread t = std::move(thread_);
        lock.unlock();
        t.join();
    }
}

ControlResult LiveSession::apply(const ControlCommand& command) {
    switch (command.kind) {
    case ControlKind::start: return start();
    case ControlKind::stop: return stop();
    case ControlKind::select_source: {
        std::lock_guard lock(mutex_);
        if (running_)
            return {false, "stop the session before selecting a source", {}};
        SessionConfig next = config_;
        next.source = *command.source;
        try {
            next.validate();
        } catch (const Error& e) {
            return {false, e.what(), {}};
        }
        config_ = std::move(next);
        return {true, "", to_json(config_.source)};
    }
    default: break;
    }

    std::lock_guard lock(mutex_);
    DetectorConfig next;
    try {
        next = bank_->config(command.detector_id);
    } catch (const Error& e) {
        return {false, e.what(), {}};
    }
    switch (command.kind) {
    case ControlKind::set_threshold: next.threshold_uv = command.threshold_uv; break;
    case ControlKind::set_band:
        next.band_low_hz = command.low_hz;
        next.band_high_hz = command.high_hz;
        break;
    case ControlKind::set_refractory: next.refractory_s = command.refractory_s; break;
    case ControlKind::enable_detector: next.enabled = command.enabled; break;
    default: break;
    }
    try {
        next = bank_->apply(next);
    } catch (const Error& e) {
        return {false, e.what(), {}};
    }
    for (auto& d : config_.detectors)
        if (d.detector_id == next.detector_id)
            d = next;
    return {true, "", to_json(next)};
}

} // namespace pieeg
