// Copyright 2026 the coldboot authors
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

#ifndef COLDBOOT_NET_HPP_
#define COLDBOOT_NET_HPP_

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "coldboot/wire.hpp"

namespace coldboot {

inline std::pair<std::string, uint16_t> split_endpoint(const std::string& endpoint) {
  size_t colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint must be host:port, got " + endpoint);
  return {endpoint.substr(0, colon), static_cast<uint16_t>(std::stoul(endpoint.substr(colon + 1)))};
}

// Blocking TCP stream with framed send/recv.
class TcpConn {
 public:
  TcpConn() = default;
  explicit TcpConn(int fd) : fd_(fd) {}
  TcpConn(TcpConn&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  TcpConn& operator=(TcpConn&& o) noexcept {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
    return *this;
  }
  TcpConn(const TcpConn&) = delete;
  TcpConn& operator=(const TcpConn&) = delete;
  ~TcpConn() { close(); }

  static TcpConn connect(const std::string& endpoint) {
    auto [host, port] = split_endpoint(endpoint);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw ConfigError("bad host address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw IoError("connect to " + endpoint + " failed");
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpConn(fd);
  }

  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void send_frame(std::string_view body) {
    if (body.size() > kMaxFrameBytes) throw WireError("frame too large");
    std::string hdr;
    put_u32(hdr, static_cast<uint32_t>(body.size()));
    send_all(hdr);
    send_all(body);
  }

  // Returns false on clean EOF before any byte of the frame.
  bool recv_frame(std::string& body) {
    std::string hdr(4, '\0');
    size_t got = recv_some(hdr.data(), 4);
    if (got == 0) return false;
    if (got < 4) recv_exact(hdr.data() + got, 4 - got);
    ByteReader r(hdr);
    uint32_t len = r.u32();
    if (len > kMaxFrameBytes) throw WireError("frame length " + std::to_string(len) + " too large");
    body.resize(len);
    if (len > 0) recv_exact(body.data(), len);
    return true;
  }

 private:
  void send_all(std::string_view data) {
    size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n <= 0) throw IoError("send failed");
      off += static_cast<size_t>(n);
    }
  }

  size_t recv_some(char* buf, size_t len) {
    ssize_t n = ::recv(fd_, buf, len, 0);
    if (n < 0) throw IoError("recv failed");
    return static_cast<size_t>(n);
  }

  void recv_exact(char* buf, size_t len) {
    size_t off = 0;
    while (off < len) {
      ssize_t n = ::recv(fd_, buf + off, len - off, 0);
      if (n <= 0) throw IoError("connection closed mid-frame");
      off += static_cast<size_t>(n);
    }
  }

  int fd_ = -1;
};

// Thread-per-connection framed request/response server. The handler maps a
// request frame (kind + payload) to a response frame; it runs on the
// connection's thread and must be thread-safe across connections.
class FramedServer {
 public:
  using Handler = std::function<WireResponse(MsgKind, std::string_view)>;

  FramedServer(const std::string& bind_host, Handler handler) : handler_(std::move(handler)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = 0;  // ephemeral
    if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("bad bind host: " + bind_host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw IoError("bind failed");
    if (::listen(listen_fd_, 64) != 0) throw IoError("listen failed");
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
    endpoint_ = bind_host + ":" + std::to_string(port_);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~FramedServer() { stop(); }
  FramedServer(const FramedServer&) = delete;
  FramedServer& operator=(const FramedServer&) = delete;

  uint16_t port() const { return port_; }
  const std::string& endpoint() const { return endpoint_; }

  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : conn_threads_)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) break;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard<std::mutex> lk(mu_);
      conn_fds_.push_back(fd);
      conn_threads_.emplace_back([this, fd] { serve_conn(fd); });
    }
  }

  void serve_conn(int fd) {
    TcpConn conn(fd);  // owns fd from here
    try {
      std::string req;
      while (conn.recv_frame(req)) {
        if (req.empty()) throw WireError("empty frame");
        auto kind = static_cast<MsgKind>(static_cast<uint8_t>(req[0]));
        WireResponse resp;
        try {
          resp = handler_(kind, std::string_view(req).substr(1));
        } catch (const Error& e) {
          resp = WireResponse::err(e.category(), e.message());
        } catch (const std::exception& e) {
          resp = WireResponse::err("internal", e.what());
        }
        std::string body;
        body.push_back(static_cast<char>(resp.status));
        body.append(resp.payload);
        conn.send_frame(body);
      }
    } catch (const std::exception&) {
      // connection torn down mid-frame; drop it
    }
  }

  Handler handler_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::string endpoint_;
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> conn_threads_;
  std::atomic<bool> stopping_{false};
};

// Persistent client connection issuing framed request/response pairs.
// Thread-safe; requests are serialized on the single connection.
class FramedClient {
 public:
  explicit FramedClient(std::string endpoint) : endpoint_(std::move(endpoint)) {}

  const std::string& endpoint() const { return endpoint_; }

  std::string request(MsgKind kind, std::string_view payload) {
    std::lock_guard<std::mutex> lk(mu_);
    if (!conn_.valid()) conn_ = TcpConn::connect(endpoint_);
    std::string body;
    body.push_back(static_cast<char>(kind));
    body.append(payload);
    std::string resp;
    try {
      conn_.send_frame(body);
      if (!conn_.recv_frame(resp)) throw IoError("server closed connection");
    } catch (const IoError&) {
      conn_.close();
      throw;
    }
    if (resp.empty()) throw WireError("empty response frame");
    auto status = static_cast<WireStatus>(static_cast<uint8_t>(resp[0]));
    std::string p = resp.substr(1);
    if (status != WireStatus::kOk) throw_wire_error(p);
    return p;
  }

 private:
  std::string endpoint_;
  std::mutex mu_;
  TcpConn conn_;
};

}  // namespace coldboot

#endif  // COLDBOOT_NET_HPP_
