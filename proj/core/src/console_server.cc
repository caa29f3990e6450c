// Copyright 2026 The otfleet Authors
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

#include "otfleet/console_server.h"

#include <atomic>
#include <deque>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "otfleet/error.h"

namespace otfleet {
namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

}  // namespace

// All handlers run on the single io thread, so session state needs no locks.
struct ConsoleServer::Impl {
  class Session;

  Impl(ConsoleHub& hub, Options options)
      : hub(hub), options(std::move(options)), acceptor(ioc), timer(ioc) {}

  void Accept();
  void ScheduleFrame();

  ConsoleHub& hub;
  Options options;
  net::io_context ioc;
  tcp::acceptor acceptor;
  net::steady_timer timer;
  std::thread thread;
  std::set<std::shared_ptr<Session>> sessions;
  std::atomic<std::size_t> num_connections{0};
  std::uint16_t bound_port = 0;
  bool started = false;
};

class ConsoleServer::Impl::Session
    : public std::enable_shared_from_this<Session> {
 public:
  Session(Impl& server, tcp::socket socket)
      : server_(server), ws_(std::move(socket)) {}

  void Run() {
    ws_.set_option(
        websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      self->OnAccept(ec);
    });
  }

  void Send(std::string message) {
    if (!open_) return;
    queue_.push_back(std::move(message));
    if (queue_.size() == 1) Write();
  }

  // Server shutdown: unregister the operator and drop the socket.
  void Shutdown() {
    Closed();
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void OnAccept(beast::error_code ec) {
    if (ec) return;
    const ConsoleHub::Opened opened = server_.hub.Open();
    operator_id_ = opened.operator_id;
    open_ = true;
    server_.sessions.insert(shared_from_this());
    ++server_.num_connections;
    Send(opened.hello);
    Read();
  }

  void Read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec,
                                                        std::size_t) {
      self->OnRead(ec);
    });
  }

  void OnRead(beast::error_code ec) {
    if (ec) {
      Closed();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    for (std::string& reply : server_.hub.Handle(operator_id_, text)) {
      Send(std::move(reply));
    }
    Read();
  }

  void Write() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec,
                                                std::size_t) {
                      self->OnWrite(ec);
                    });
  }

  void OnWrite(beast::error_code ec) {
    if (ec) {
      Closed();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) Write();
  }

  void Closed() {
    if (!open_) return;
    open_ = false;
    queue_.clear();
    server_.hub.Close(operator_id_);
    --server_.num_connections;
    server_.sessions.erase(shared_from_this());
  }

  Impl& server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  int operator_id_ = -1;
  bool open_ = false;
};

void ConsoleServer::Impl::Accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Session>(*this, std::move(socket))->Run();
    Accept();
  });
}

void ConsoleServer::Impl::ScheduleFrame() {
  timer.expires_after(options.frame_period);
  timer.async_wait([this](beast::error_code ec) {
    if (ec) return;
    const std::vector<std::string> frames = hub.Poll();
    // Send may erase a session on a failed write in a later handler, never
    // synchronously, so iterating over a copy is only defensive.
    const auto targets = sessions;
    for (const auto& s : targets) {
      for (const std::string& f : frames) s->Send(f);
    }
    ScheduleFrame();
  });
}

ConsoleServer::ConsoleServer(ConsoleHub& hub, Options options)
    : impl_(std::make_unique<Impl>(hub, std::move(options))) {}

ConsoleServer::~ConsoleServer() { Stop(); }

void ConsoleServer::Start() {
  if (impl_->started) return;
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.address, ec);
  if (ec) {
    throw Error(ErrorCode::kConfig,
                "bad listen address " + impl_->options.address);
  }
  const tcp::endpoint endpoint(address, impl_->options.port);
  auto fail = [&](std::string_view what) {
    throw Error(ErrorCode::kIo, std::string(what) + " " +
                                    impl_->options.address + ":" +
                                    std::to_string(impl_->options.port) +
                                    ": " + ec.message());
  };
  impl_->acceptor.open(endpoint.protocol(), ec);
  if (ec) fail("cannot open");
  impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  impl_->acceptor.bind(endpoint, ec);
  if (ec) fail("cannot bind");
  impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) fail("cannot listen on");
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
  impl_->Accept();
  impl_->ScheduleFrame();
  impl_->started = true;
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void ConsoleServer::Stop() {
  if (!impl_->started) return;
  impl_->started = false;
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    impl_->timer.cancel();
    const auto sessions = impl_->sessions;
    for (const auto& s : sessions) s->Shutdown();
    impl_->ioc.stop();
  });
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::uint16_t ConsoleServer::port() const { return impl_->bound_port; }

std::size_t ConsoleServer::connections() const {
  return impl_->num_connections.load();
}

}  // namespace otfleet
