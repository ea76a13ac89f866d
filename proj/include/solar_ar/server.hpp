#pragma once

// Websocket front end of a Session. Network I/O runs on its own thread;
// client messages land in a bounded FIFO that the tick owner drains at
// each tick boundary, then the tick's frame and scene are broadcast.

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "solar_ar/error.hpp"
#include "solar_ar/session.hpp"
#include "solar_ar/wire.hpp"

namespace solar_ar {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port"; the port may be 0 for an ephemeral one.
inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) throw Error(ErrorCode::kParse, "expected host:port, got '" + s + "'");
  Endpoint e{s.substr(0, colon), 0};
  try {
    std::size_t used = 0;
    const int port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "bad port in '" + s + "'");
  }
  return e;
}

class WireServer;

namespace server_detail {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  static constexpr std::size_t kMaxPendingWrites = 64;

  Connection(tcp::socket socket, WireServer& server) : ws_(std::move(socket)), server_(server) {}

  void run() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] {
      self->ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      self->ws_.async_accept([self](beast::error_code ec) { self->on_accept(ec); });
    });
  }

  /// Thread-safe; drops the message when the client is too far behind.
  void send(std::shared_ptr<const std::string> msg) {
    net::post(ws_.get_executor(), [self = shared_from_this(), msg = std::move(msg)] {
      if (self->closed_ || self->queue_.size() >= kMaxPendingWrites) return;
      self->queue_.push_back(msg);
      if (self->accepted_ && self->queue_.size() == 1) self->write_next();
    });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      if (self->closed_) return;
      self->closed_ = true;
      self->ws_.async_close(websocket::close_code::going_away, [self](beast::error_code) {});
    });
  }

  /// Drops the socket; pending operations complete with an error.
  void abort() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->closed_ = true;
      self->queue_.clear();
      beast::get_lowest_layer(self->ws_).close();
    });
  }

 private:
  void on_accept(beast::error_code ec);
  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }
  void on_read(beast::error_code ec);

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  WireServer& server_;
  bool accepted_ = false;  // writes wait for the handshake
  bool closed_ = false;
};

}  // namespace server_detail

class WireServer {
 public:
  static constexpr std::size_t kDefaultQueueCapacity = 1024;

  WireServer(Session& session, const Endpoint& at, std::size_t queue_capacity = kDefaultQueueCapacity)
      : session_(session), acceptor_(ioc_), capacity_(queue_capacity) {
    beast::error_code ec;
    const auto address = net::ip::make_address(at.host == "localhost" ? "127.0.0.1" : at.host, ec);
    if (ec) throw Error(ErrorCode::kIo, "bad listen address " + at.host);
    const tcp::endpoint ep{address, at.port};
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot listen on " + at.host + ":" + std::to_string(at.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
  }

  ~WireServer() { stop(); }

  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  std::uint16_t port() const { return port_; }

  void start() {
    do_accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    if (!thread_.joinable()) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      for_each_connection([](auto& c) { c.close(); });
    });
    // Give the close handshakes a moment, then drop whatever is left so the
    // loop runs out of work.
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    for_each_connection([](auto& c) { c.abort(); });
    thread_.join();
  }

  std::size_t queued() const {
    std::lock_guard lock(mutex_);
    return inbox_.size();
  }

  std::size_t connections() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& weak : connections_) n += weak.expired() ? 0 : 1;
    return n;
  }

  /// Applies every queued client message in arrival order, ticks the session
  /// and broadcasts the frame and scene messages.
  TickResult tick(double t) {
    std::deque<Inbound> batch;
    {
      std::lock_guard lock(mutex_);
      batch.swap(inbox_);
    }
    std::vector<std::weak_ptr<server_detail::Connection>> touch_origins;
    for (auto& in : batch) {
      std::visit(
          [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, TouchMessage>) {
              TouchEvent ev = m.event;
              ev.t = t;
              session_.enqueue_touch(ev);
              touch_origins.push_back(in.from);
            } else if constexpr (std::is_same_v<T, SetModeMessage>) {
              try {
                session_.set_mode(m.mode);
              } catch (const Error& e) {
                reply(in.from, WireError{"mode", e.what()});
              }
            } else {
              session_.set_time_scale(m.value);
            }
          },
          in.message);
    }
    TickResult r = session_.tick(t);
    for (const RejectedTouch& rej : r.rejected) {
      if (rej.index < touch_origins.size()) reply(touch_origins[rej.index], WireError{"touch", rej.reason});
    }
    broadcast(std::make_shared<const std::string>(frame_message(r)));
    broadcast(std::make_shared<const std::string>(scene_message(r)));
    return r;
  }

 private:
  friend class server_detail::Connection;

  struct Inbound {
    ClientMessage message;
    std::weak_ptr<server_detail::Connection> from;
  };

  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto c = std::make_shared<server_detail::Connection>(std::move(socket), *this);
      {
        std::lock_guard lock(mutex_);
        std::erase_if(connections_, [](const auto& w) { return w.expired(); });
        connections_.push_back(c);
      }
      c->run();
      do_accept();
    });
  }

  void on_text(const std::shared_ptr<server_detail::Connection>& from, std::string_view text) {
    auto parsed = parse_client_message(text);
    if (auto* err = std::get_if<WireError>(&parsed)) {
      from->send(std::make_shared<const std::string>(error_message(*err)));
      return;
    }
    std::lock_guard lock(mutex_);
    if (inbox_.size() >= capacity_) {
      from->send(std::make_shared<const std::string>(error_message({"busy", "input queue full"})));
      return;
    }
    inbox_.push_back({std::get<ClientMessage>(std::move(parsed)), from});
  }

  void reply(const std::weak_ptr<server_detail::Connection>& to, const WireError& e) {
    if (auto c = to.lock()) c->send(std::make_shared<const std::string>(error_message(e)));
  }

  void broadcast(const std::shared_ptr<const std::string>& msg) {
    for_each_connection([&](auto& c) { c.send(msg); });
  }

  template <typename F>
  void for_each_connection(F f) {
    std::lock_guard lock(mutex_);
    for (const auto& weak : connections_)
      if (auto c = weak.lock()) f(*c);
  }

  Session& session_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::thread thread_;
  std::uint16_t port_ = 0;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<Inbound> inbox_;
  std::vector<std::weak_ptr<server_detail::Connection>> connections_;
};

namespace server_detail {

inline void Connection::on_accept(beast::error_code ec) {
  if (ec) {
    closed_ = true;
    queue_.clear();
    return;
  }
  accepted_ = true;
  if (!queue_.empty()) write_next();
  do_read();
}

inline void Connection::on_read(beast::error_code ec) {
  if (ec) {
    closed_ = true;
    return;
  }
  const std::string text = beast::buffers_to_string(buffer_.data());
  buffer_.consume(buffer_.size());
  server_.on_text(shared_from_this(), text);
  do_read();
}

}  // namespace server_detail

}  // namespace solar_ar
