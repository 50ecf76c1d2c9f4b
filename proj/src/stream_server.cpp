#include "pieeg/stream_server.hpp"

#include "pieeg/errors.hpp"

#include <atomic>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pieeg {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

// A message body shared by every recipient; each connection adds its own seq.
struct Payload {
    std::string kind;
    std::string rest; // payload fields after the seq, including the closing brace
    bool lossy = false;
};

std::shared_ptr<const Payload> make_payload(std::string kind, const Json& fields, bool lossy) {
    auto p = std::make_shared<Payload>();
    p->kind = std::move(kind);
    p->lossy = lossy;
    if (fields.empty()) {
        p->rest = "}";
    } else {
        const std::string body = fields.dump();
        p->rest = "," + body.substr(1);
    }
    return p;
}

std::string mime_type(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".html" || ext == ".htm")
        return "text/html";
    if (ext == ".js" || ext == ".mjs")
        return "application/javascript";
    if (ext == ".css")
        return "text/css";
    if (ext == ".json")
        return "application/json";
    if (ext == ".svg")
        return "image/svg+xml";
    if (ext == ".png")
        return "image/png";
    if (ext == ".ico")
        return "image/x-icon";
    if (ext == ".map" || ext == ".txt")
        return "text/plain";
    return "application/octet-stream";
}

class WsClient;

} // namespace

struct StreamServer::Impl : std::enable_shared_from_this<StreamServer::Impl> {
    Impl(ControlTarget& t, ServerOptions o) : target(t), options(std::move(o)), acceptor(io) {}

    ControlTarget& target;
    ServerOptions options;
    net::io_context io;
    tcp::acceptor acceptor;
    std::thread thread;
    std::set<std::shared_ptr<WsClient>> clients; // io thread only
    std::atomic<std::size_t> client_count{0};
    std::atomic<std::uint64_t> accepted{0};
    std::atomic<std::uint64_t> dropped{0};
    std::atomic<std::uint64_t> commands{0};
    std::uint16_t bound_port = 0;
    bool running = false;

    void do_accept();
    void publish(std::shared_ptr<const Payload> payload);
    std::shared_ptr<const Payload> status_payload();
    void remove(const std::shared_ptr<WsClient>& client);
    void handle_control(WsClient& from, const std::string& text);
};

namespace {

class WsClient : public std::enable_shared_from_this<WsClient> {
public:
    WsClient(beast::tcp_stream&& stream, StreamServer::Impl& server) : ws_(std::move(stream)), server_(server) {}

    void run(http::request<http::string_body> request) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.text(true);
        ws_.async_accept(request, beast::bind_front_handler(&WsClient::on_accept, shared_from_this()));
    }

    void send(std::shared_ptr<const Payload> payload) {
        if (!open_)
            return;
        if (payload->lossy) {
            if (lossy_queued_ >= server_.options.max_lossy_backlog) {
                ++server_.dropped;
                return;
            }
            ++lossy_queued_;
        }
        std::string text = fmt::format("{{\"kind\":\"{}\",\"seq\":{}{}", payload->kind, ++seq_, payload->rest);
        queue_.push_back({std::move(text), payload->lossy});
        if (!writing_)
            do_write();
    }

    void close() {
        if (!open_)
            return;
        open_ = false;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
        beast::get_lowest_layer(ws_).close();
    }

private:
    struct Queued {
        std::string text;
        bool lossy;
    };

    void on_accept(beast::error_code ec) {
        if (ec) {
            spdlog::debug("websocket handshake failed: {}", ec.message());
            return;
        }
        if (server_.options.send_buffer_bytes > 0) {
            beast::error_code ignored;
            beast::get_lowest_layer(ws_).socket().set_option(
                net::socket_base::send_buffer_size(server_.options.send_buffer_bytes), ignored);
        }
        open_ = true;
        ++server_.accepted;
        // Snapshot first, then join the broadcast set: nothing can precede it.
        send(server_.status_payload());
        server_.clients.insert(shared_from_this());
        server_.client_count = server_.clients.size();
        do_read();
    }

    void do_read() {
        ws_.async_read(buffer_, beast::bind_front_handler(&WsClient::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            fail();
            return;
        }
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        server_.handle_control(*this, text);
        do_read();
    }

    void do_write() {
        if (queue_.empty() || !open_) {
            writing_ = false;
            return;
        }
        writing_ = true;
        ws_.async_write(net::buffer(queue_.front().text),
                        beast::bind_front_handler(&WsClient::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (queue_.front().lossy)
            --lossy_queued_;
        queue_.pop_front();
        if (ec) {
            fail();
            return;
        }
        do_write();
    }

    void fail() {
        close();
        writing_ = false;
        server_.remove(shared_from_this());
    }

    websocket::stream<beast::tcp_stream> ws_;
    StreamServer::Impl& server_;
    beast::flat_buffer buffer_;
    std::deque<Queued> queue_;
    std::size_t lossy_queued_ = 0;
    std::uint64_t seq_ = 0;
    bool writing_ = false;
    bool open_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, StreamServer::Impl& server) : stream_(std::move(socket)), server_(server) {}

    void run() { do_read(); }

private:
    void do_read() {
        request_ = {};
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, request_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            beast::error_code ignored;
            stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
            return;
        }
        if (websocket::is_upgrade(request_)) {
            if (request_.target() == "/stream") {
                stream_.expires_never();
                std::make_shared<WsClient>(std::move(stream_), server_)->run(std::move(request_));
                return;
            }
            respond(http::status::not_found, "text/plain", "no websocket endpoint here\n");
            return;
        }
        handle();
    }

    void handle() {
        if (request_.method() != http::verb::get && request_.method() != http::verb::head) {
            respond(http::status::method_not_allowed, "text/plain", "GET only\n");
            return;
        }
        std::string target(request_.target());
        if (auto q = target.find('?'); q != std::string::npos)
            target.erase(q);
        if (target == "/healthz") {
            respond(http::status::ok, "text/plain", "ok");
            return;
        }
        if (!server_.options.assets_dir || target.empty() || target[0] != '/' ||
            target.find("..") != std::string::npos) {
            respond(http::status::not_found, "text/plain", "not found\n");
            return;
        }
        if (target.back() == '/')
            target += "index.html";
        const auto path = *server_.options.assets_dir / target.substr(1);
        std::ifstream in(path, std::ios::binary);
        if (!in || std::filesystem::is_directory(path)) {
            respond(http::status::not_found, "text/plain", "not found\n");
            return;
        }
        std::ostringstream body;
        body << in.rdbuf();
        respond(http::status::ok, mime_type(path), body.str());
    }

    void respond(http::status status, const std::string& type, std::string body) {
        auto res = std::make_shared<http::response<http::string_body>>(status, request_.version());
        res->set(http::field::server, "pieeg");
        res->set(http::field::content_type, type);
        res->keep_alive(request_.keep_alive());
        if (request_.method() != http::verb::head)
            res->body() = std::move(body);
        res->prepare_payload();
        response_ = res;
        http::async_write(stream_, *res,
                          beast::bind_front_handler(&HttpSession::on_write, shared_from_this(), res->need_eof()));
    }

    void on_write(bool close, beast::error_code ec, std::size_t) {
        response_.reset();
        if (ec || close) {
            beast::error_code ignored;
            stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
            return;
        }
        do_read();
    }

    beast::tcp_stream stream_;
    StreamServer::Impl& server_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> request_;
    std::shared_ptr<void> response_;
};

} // namespace

void StreamServer::Impl::do_accept() {
    acceptor.async_accept(net::make_strand(io), [self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (ec != net::error::operation_aborted)
                spdlog::warn("accept failed: {}", ec.message());
            if (!self->acceptor.is_open())
                return;
        } else {
            std::make_shared<HttpSession>(std::move(socket), *self)->run();
        }
        self->do_accept();
    });
}

void StreamServer::Impl::publish(std::shared_ptr<const Payload> payload) {
    net::post(io, [self = shared_from_this(), payload = std::move(payload)] {
        // Copy: a failed send may remove the client from the set.
        const auto targets = self->clients;
        for (const auto& c : targets)
            c->send(payload);
    });
}

std::shared_ptr<const Payload> StreamServer::Impl::status_payload() {
    Json fields = target.status();
    fields["commands_applied"] = commands.load();
    return make_payload("status", fields, false);
}

void StreamServer::Impl::remove(const std::shared_ptr<WsClient>& client) {
    clients.erase(client);
    client_count = clients.size();
}

void StreamServer::Impl::handle_control(WsClient& from, const std::string& text) {
    Json ack;
    Json message;
    try {
        message = Json::parse(text);
    } catch (const Json::parse_error& e) {
        ack["cmd_seq"] = nullptr;
        ack["ok"] = false;
        ack["reason"] = fmt::format("malformed JSON: {}", e.what());
        from.send(make_payload("ack", ack, false));
        return;
    }

    const std::uint64_t order = ++commands;
    ControlCommand command;
    ControlResult result;
    try {
        command = parse_control(message);
        result = target.apply(command);
    } catch (const Error& e) {
        result = {false, e.what(), {}};
    }
    if (command.cmd_seq)
        ack["cmd_seq"] = *command.cmd_seq;
    else if (message.is_object() && message.contains("cmd_seq"))
        ack["cmd_seq"] = message["cmd_seq"];
    else
        ack["cmd_seq"] = order;
    ack["ok"] = result.ok;
    if (message.is_object() && message.contains("cmd") && message["cmd"].is_string())
        ack["cmd"] = message["cmd"];
    if (result.ok)
        ack["applied"] = result.applied;
    else
        ack["reason"] = result.reason;
    from.send(make_payload("ack", ack, false));

    if (result.ok) {
        const auto status = status_payload();
        const auto targets = clients;
        for (const auto& c : targets)
            c->send(status);
    }
}

StreamServer::StreamServer(ControlTarget& target, ServerOptions options)
    : impl_(std::make_shared<Impl>(target, std::move(options))) {}

StreamServer::~StreamServer() { stop(); }

void StreamServer::start() {
    auto& s = *impl_;
    if (s.running)
        return;
    beast::error_code ec;
    const auto address = net::ip::make_address(s.options.bind_address, ec);
    if (ec)
        throw ConfigError(fmt::format("invalid bind address '{}': {}", s.options.bind_address, ec.message()));
    const tcp::endpoint endpoint(address, s.options.port);
    auto fail = [&](const char* what) {
        throw ConfigError(fmt::format("cannot {} {}:{}: {}", what, s.options.bind_address, s.options.port, ec.message()));
    };
    s.acceptor.open(endpoint.protocol(), ec);
    if (ec)
        fail("open");
    s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
    s.acceptor.bind(endpoint, ec);
    if (ec)
        fail("bind");
    s.acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec)
        fail("listen on");
    s.bound_port = s.acceptor.local_endpoint().port();
    s.do_accept();
    s.running = true;
    s.thread = std::thread([impl = impl_] {
        auto guard = net::make_work_guard(impl->io);
        impl->io.run();
    });
    spdlog::info("stream server listening on {}:{}", s.options.bind_address, s.bound_port);
}

void StreamServer::stop() {
    auto& s = *impl_;
    if (!s.running)
        return;
    s.running = false;
    net::post(s.io, [impl = impl_] {
        beast::error_code ec;
        impl->acceptor.close(ec);
        for (const auto& c : impl->clients)
            c->close();
        impl->clients.clear();
        impl->client_count = 0;
        impl->io.stop();
    });
    if (s.thread.joinable())
        s.thread.join();
}

std::uint16_t StreamServer::port() const { return impl_->bound_port; }

std::size_t StreamServer::client_count() const { return impl_->client_count.load(); }

ServerStats StreamServer::stats() const {
    return {impl_->accepted.load(), impl_->dropped.load(), impl_->commands.load()};
}

void StreamServer::broadcast_status() {
    net::post(impl_->io, [impl = impl_] {
        const auto status = impl->status_payload();
        const auto targets = impl->clients;
        for (const auto& c : targets)
            c->send(status);
    });
}

void StreamServer::on_samples(std::span<const TimedSample> samples) {
    if (impl_->client_count.load() == 0 || samples.empty())
        return;
    Json t = Json::array();
    Json uv = Json::array();
    for (const auto& s : samples) {
        t.push_back(s.t_ns);
        uv.push_back(s.value);
    }
    impl_->publish(make_payload("samples", Json{{"t_ns", std::move(t)}, {"uv", std::move(uv)}}, true));
}

void StreamServer::on_spectrum(const SpectrumFrame& spectrum) {
    if (impl_->client_count.load() == 0)
        return;
    impl_->publish(make_payload("spectrum", to_json(spectrum), true));
}

void StreamServer::on_event(const DetectionEvent& event) {
    impl_->publish(make_payload("event", to_json(event), false));
}

void StreamServer::on_pin(const ActuatorCommand& command, bool asserted) {
    Json fields;
    fields["pin"] = command.pin;
    fields["level"] = command.level;
    fields["active"] = asserted;
    fields["t_ns"] = command.t_ns;
    fields["cause"] = command.cause;
    impl_->publish(make_payload("pin_state", fields, false));
}

} // namespace pieeg
