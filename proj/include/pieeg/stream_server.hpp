#pragma once

#include "pieeg/config_json.hpp"
#include "pieeg/control.hpp"
#include "pieeg/session.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace pieeg {

struct ServerOptions {
    // Loopback only unless explicitly widened; there is no authentication.
    std::string bind_address = "127.0.0.1";
    std::uint16_t port = 8089; // 0 picks a free port
    std::optional<std::filesystem::path> assets_dir;
    // Per client: queued samples/spectrum messages beyond this are dropped.
    std::size_t max_lossy_backlog = 32;
    // SO_SNDBUF for client sockets; 0 keeps the OS default.
    int send_buffer_bytes = 0;
};

struct ServerStats {
    std::uint64_t clients_accepted = 0;
    std::uint64_t lossy_dropped = 0;
    std::uint64_t commands_applied = 0;
};

// One port: websocket at /stream, GET /healthz, static files under /.
// Observer callbacks may come from any thread; all socket work and control
// handling run on the server's single I/O thread, which is what serializes
// commands from different clients.
class StreamServer : public SessionObserver {
public:
    StreamServer(ControlTarget& target, ServerOptions options);
    ~StreamServer() override;
    StreamServer(const StreamServer&) = delete;
    StreamServer& operator=(const StreamServer&) = delete;

    // Binds and starts the I/O thread. ConfigError if the address or port is unavailable.
    void start();
    void stop();

    std::uint16_t port() const;
    std::size_t client_count() const;
    ServerStats stats() const;

    // Sends a fresh status snapshot to every client.
    void broadcast_status();

    void on_samples(std::span<const TimedSample> samples) override;
    void on_spectrum(const SpectrumFrame& spectrum) override;
    void on_event(const DetectionEvent& event) override;
    void on_pin(const ActuatorCommand& command, bool asserted) override;

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

} // namespace pieeg
