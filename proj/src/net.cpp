#include "fedmesh/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "fedmesh/error.hpp"

namespace fedmesh::net {

namespace {

std::string errno_text() { return std::strerror(errno); }

sockaddr_in resolve(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(hp.port));
  const std::string host = hp.host.empty() || hp.host == "localhost" ? "127.0.0.1" : hp.host;
  if (host == "0.0.0.0" || host == "*") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw NetworkError(fmt::format("cannot resolve host '{}'", hp.host));
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

// Returns false on timeout.
bool wait_fd(int fd, short events, Millis timeout) {
  pollfd pfd{fd, events, 0};
  const int ms = timeout.count() <= 0 ? -1 : static_cast<int>(timeout.count());
  for (;;) {
    const int rc = ::poll(&pfd, 1, ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw NetworkError("poll: " + errno_text());
  }
}

}  // namespace

HostPort parse_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw ValidationError(fmt::format("expected HOST:PORT, got '{}'", text));
  }
  HostPort hp;
  hp.host = text.substr(0, colon);
  try {
    std::size_t used = 0;
    hp.port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("bad port in '{}'", text));
  }
  if (hp.port < 0 || hp.port > 65535) {
    throw ValidationError(fmt::format("port out of range in '{}'", text));
  }
  if (hp.host.empty()) hp.host = "127.0.0.1";
  return hp;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

TcpStream TcpStream::connect(const HostPort& to, Millis timeout) {
  const sockaddr_in addr = resolve(to);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw NetworkError("socket: " + errno_text());
  const int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr));
  if (rc != 0 && errno != EINPROGRESS) {
    throw NetworkError(fmt::format("connect {}: {}", to.str(), errno_text()));
  }
  if (rc != 0) {
    if (!wait_fd(s.fd(), POLLOUT, timeout)) {
      throw TimeoutError(fmt::format("connect {}: timed out", to.str()));
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      throw NetworkError(fmt::format("connect {}: {}", to.str(), std::strerror(err)));
    }
  }
  ::fcntl(s.fd(), F_SETFL, flags);
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return TcpStream(std::move(s));
}

void TcpStream::set_read_timeout(Millis timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

void TcpStream::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(sock_.fd(), bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw NetworkError("send: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

void TcpStream::write_all(const std::string& text) {
  write_all(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::size_t TcpStream::read_some(std::span<std::uint8_t> out) {
  for (;;) {
    const ssize_t n = ::recv(sock_.fd(), out.data(), out.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) throw TimeoutError("recv: timed out");
    throw NetworkError("recv: " + errno_text());
  }
}

bool TcpStream::read_exact(std::span<std::uint8_t> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const std::size_t n = read_some(out.subspan(got));
    if (n == 0) {
      if (got == 0) return false;
      throw TruncationError(fmt::format("stream closed after {} of {} bytes", got, out.size()));
    }
    got += n;
  }
  return true;
}

TcpListener TcpListener::bind(const HostPort& at, int backlog) {
  const sockaddr_in addr = resolve(at);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw NetworkError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw NetworkError(fmt::format("bind {}: {}", at.str(), errno_text()));
  }
  if (::listen(s.fd(), backlog) != 0) {
    throw NetworkError(fmt::format("listen {}: {}", at.str(), errno_text()));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  TcpListener l;
  l.sock_ = std::move(s);
  l.host_ = at.host.empty() ? "127.0.0.1" : at.host;
  l.port_ = ntohs(bound.sin_port);
  return l;
}

TcpStream TcpListener::accept(Millis timeout) {
  if (!wait_fd(sock_.fd(), POLLIN, timeout)) return TcpStream();
  const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) {
    if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) return TcpStream();
    throw NetworkError("accept: " + errno_text());
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return TcpStream(Socket(fd));
}

int probe_free_port(const std::string& host) {
  auto l = TcpListener::bind({host, 0});
  return l.port();
}

}  // namespace fedmesh::net
