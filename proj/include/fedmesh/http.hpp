#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <thread>

#include "fedmesh/error.hpp"
#include "fedmesh/net.hpp"

// HTTP/1.1 subset: request line, headers, Content-Length body. No chunked
// transfer coding, no keep-alive (every exchange is one connection).
namespace fedmesh::http {

class HttpParseError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

struct Request {
  std::string method;
  std::string target;
  std::string version;
  std::map<std::string, std::string> headers;  // keys lower-cased
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

std::string_view reason_phrase(int status);

// Parses everything before the blank line (request line + headers).
Request parse_request_head(std::string_view head);

// Reads one request. Throws HttpParseError on malformed input, TimeoutError,
// or TruncationError when the peer hangs up early.
Request read_request(net::TcpStream& stream, std::size_t max_body = 64u << 20);

std::string format_response(const Response& r);
std::string format_request(const std::string& method, const std::string& path,
                           const std::string& host, const std::string& body);

struct Url {
  std::string host;
  int port = 80;
  std::string path = "/";
};

// http://host[:port][/path]
Url parse_url(const std::string& url);

// One request/response exchange. Throws NetworkError / TimeoutError.
Response send_request(const net::HostPort& to, const std::string& method,
                      const std::string& path, const std::string& body,
                      net::Millis timeout);

using Handler = std::function<Response(const Request&)>;

// Handles one accepted connection: read, dispatch, reply, close. Malformed
// requests get a 400 without reaching the handler.
void serve_connection(net::TcpStream stream, const Handler& handler, net::Millis read_timeout);

// Background accept loop; connections are handled one at a time.
class Server {
 public:
  Server(net::TcpListener listener, Handler handler);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  int port() const { return port_; }
  void stop();

 private:
  net::TcpListener listener_;
  Handler handler_;
  int port_ = 0;
  std::atomic<bool> running_{true};
  std::thread worker_;
};

}  // namespace fedmesh::http
