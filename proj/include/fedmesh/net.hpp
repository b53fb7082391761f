#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fedmesh::net {

using Millis = std::chrono::milliseconds;

struct HostPort {
  std::string host;
  int port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

// "host:port"; throws ValidationError when malformed.
HostPort parse_host_port(const std::string& text);

// Owns a file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  // Half-close the write side, then wake any reader blocked on this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(Socket s) : sock_(std::move(s)) {}

  // Throws NetworkError (refused/unreachable) or TimeoutError.
  static TcpStream connect(const HostPort& to, Millis timeout);

  // Per-operation receive timeout; zero means block indefinitely.
  void set_read_timeout(Millis timeout);

  void write_all(std::span<const std::uint8_t> bytes);
  void write_all(const std::string& text);
  // Reads exactly out.size() bytes. Returns false on clean EOF before the
  // first byte; throws TruncationError on EOF mid-way, TimeoutError on
  // timeout.
  bool read_exact(std::span<std::uint8_t> out);
  // Reads up to out.size() bytes; 0 on EOF.
  std::size_t read_some(std::span<std::uint8_t> out);

  bool valid() const { return sock_.valid(); }
  void close() { sock_.close(); }
  void shutdown() { sock_.shutdown(); }

 private:
  Socket sock_;
};

class TcpListener {
 public:
  TcpListener() = default;
  // Port 0 binds an ephemeral port; port() reports the actual one.
  static TcpListener bind(const HostPort& at, int backlog = 16);

  int port() const { return port_; }
  const std::string& host() const { return host_; }
  bool valid() const { return sock_.valid(); }

  // Waits up to `timeout` for a connection; returns an invalid stream on
  // timeout.
  TcpStream accept(Millis timeout);
  void close() { sock_.close(); }

 private:
  Socket sock_;
  std::string host_;
  int port_ = 0;
};

// Returns a port that was free at the time of the call (bind 0, read, close).
int probe_free_port(const std::string& host = "127.0.0.1");

}  // namespace fedmesh::net
