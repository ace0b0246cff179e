// Copyright 2026 The mixedlane Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mixedlane/live_session.hpp"

namespace mixedlane {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

/// Mutex-guarded FIFO between the network thread and the simulation loop.
template <class T>
class MessageQueue {
 public:
  void push(T v) {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(v));
  }
  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::deque<T> q_;
};

struct ServerOptions {
  std::string address{"127.0.0.1"};
  unsigned short port{8765};
  SessionOptions session{};
};

/// WebSocket front end for one SessionCore. The network runs on its own
/// thread; the simulation loop runs on the caller's thread in run().
class LiveServer {
 public:
  LiveServer(Scenario scenario, ServerOptions opts, ScenarioResolver resolver = {}, RunEndHandler on_end = {})
      : scenario_(std::move(scenario)),
        opts_(std::move(opts)),
        core_(opts_.session, std::move(resolver), std::move(on_end)),
        acceptor_(ioc_) {
    const tcp::endpoint ep(net::ip::make_address(opts_.address), opts_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void stop() {
    stop_ = true;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      if (auto c = client_.lock()) c->close();
    });
  }

  /// Serves until stop().
  void run() {
    accept();
    std::thread io([this] { ioc_.run(); });
    const auto t0 = std::chrono::steady_clock::now();
    const auto now = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    while (!stop_) {
      for (Inbound& in : inbox_.drain()) {
        if (in.kind == Inbound::kOpen) {
          if (connected_) {
            send(in.conn, SessionCore::error_frame("session busy"), true);
            continue;
          }
          connected_ = in.conn;
          // A client reconnecting to a live run resumes it; otherwise a new run starts.
          if (!core_.active()) core_.start(scenario_, now());
          send(in.conn, core_.hello(), false);
        } else if (in.kind == Inbound::kClose) {
          if (connected_ == in.conn) connected_.reset();
        } else if (in.conn == connected_) {
          for (auto& f : core_.handle(in.text, now())) send(in.conn, f, false);
        }
      }
      for (auto& f : core_.advance(now())) {
        if (connected_) send(connected_, f, false);
      }
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
    ioc_.stop();
    io.join();
  }

 private:
  class Connection;
  using ConnPtr = std::shared_ptr<Connection>;

  struct Inbound {
    enum Kind { kOpen, kText, kClose } kind{kText};
    ConnPtr conn;
    std::string text;
  };

  class Connection : public std::enable_shared_from_this<Connection> {
   public:
    Connection(tcp::socket socket, MessageQueue<Inbound>& inbox) : ws_(std::move(socket)), inbox_(inbox) {}

    void start() {
      ws_.text(true);
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->inbox_.push({Inbound::kOpen, self, {}});
        self->read();
      });
    }

    /// Thread-safe: hops onto the socket's executor.
    void send(std::string text, bool close_after) {
      net::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text), close_after]() mutable {
        self->outbox_.push_back(std::move(text));
        if (close_after) self->close_after_write_ = true;
        if (self->outbox_.size() == 1) self->write();
      });
    }

    void close() {
      beast::error_code ec;
      ws_.next_layer().close(ec);
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->inbox_.push({Inbound::kClose, self, {}});
          return;
        }
        self->inbox_.push({Inbound::kText, self, beast::buffers_to_string(self->buffer_.data())});
        self->buffer_.consume(self->buffer_.size());
        self->read();
      });
    }

    void write() {
      ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return;
        self->outbox_.pop_front();
        if (!self->outbox_.empty()) {
          self->write();
        } else if (self->close_after_write_) {
          self->ws_.async_close(websocket::close_code::try_again_later, [self](beast::error_code) {});
        }
      });
    }

    websocket::stream<tcp::socket> ws_;
    MessageQueue<Inbound>& inbox_;
    beast::flat_buffer buffer_;
    std::deque<std::string> outbox_;
    bool close_after_write_{false};
  };

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto conn = std::make_shared<Connection>(std::move(socket), inbox_);
      client_ = conn;
      conn->start();
      accept();
    });
  }

  void send(const ConnPtr& conn, const nlohmann::ordered_json& frame, bool close_after) {
    conn->send(frame.dump(), close_after);
  }

  Scenario scenario_;
  ServerOptions opts_;
  SessionCore core_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  MessageQueue<Inbound> inbox_;
  ConnPtr connected_;
  std::weak_ptr<Connection> client_;
  std::atomic<bool> stop_{false};
};

}  // namespace mixedlane
