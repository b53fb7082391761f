#include "fedmesh/http.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>
#include <json.hpp>

namespace fedmesh::http {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool is_token(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '!' || c == '#' || c == '$' ||
           c == '%' || c == '&' || c == '\'' || c == '*' || c == '+' || c == '.' ||
           c == '^' || c == '`' || c == '|' || c == '~';
  });
}

constexpr std::size_t kMaxHead = 16 * 1024;

// Reads until CRLFCRLF; returns head and any body bytes already received.
std::pair<std::string, std::string> read_head(net::TcpStream& stream) {
  std::string buf;
  std::uint8_t chunk[4096];
  for (;;) {
    const auto pos = buf.find("\r\n\r\n");
    if (pos != std::string::npos) return {buf.substr(0, pos), buf.substr(pos + 4)};
    if (buf.size() > kMaxHead) throw HttpParseError("request head too large");
    const std::size_t n = stream.read_some(chunk);
    if (n == 0) {
      if (buf.empty()) throw TruncationError("connection closed before request");
      throw HttpParseError("connection closed inside request head");
    }
    buf.append(reinterpret_cast<const char*>(chunk), n);
  }
}

std::size_t content_length(const std::map<std::string, std::string>& headers) {
  auto it = headers.find("content-length");
  if (it == headers.end()) return 0;
  const std::string& v = it->second;
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw HttpParseError("bad Content-Length");
  }
  return std::stoull(v);
}

}  // namespace

std::string_view reason_phrase(int status) {
  switch (status) {
    case 200: return "OK";
    case 400: return "Bad Request";
    case 404: return "Not Found";
    case 405: return "Method Not Allowed";
    case 409: return "Conflict";
    case 413: return "Payload Too Large";
    case 500: return "Internal Server Error";
    default: return "Unknown";
  }
}

Request parse_request_head(std::string_view head) {
  Request req;
  const auto eol = head.find("\r\n");
  const std::string_view line = head.substr(0, eol);
  const auto sp1 = line.find(' ');
  const auto sp2 = sp1 == std::string_view::npos ? sp1 : line.find(' ', sp1 + 1);
  if (sp1 == std::string_view::npos || sp2 == std::string_view::npos ||
      line.find(' ', sp2 + 1) != std::string_view::npos) {
    throw HttpParseError("malformed request line");
  }
  req.method = std::string(line.substr(0, sp1));
  req.target = std::string(line.substr(sp1 + 1, sp2 - sp1 - 1));
  req.version = std::string(line.substr(sp2 + 1));
  if (!is_token(req.method) || req.target.empty() || req.target.front() != '/' ||
      (req.version != "HTTP/1.1" && req.version != "HTTP/1.0")) {
    throw HttpParseError("malformed request line");
  }
  std::string_view rest = eol == std::string_view::npos ? std::string_view{} : head.substr(eol + 2);
  while (!rest.empty()) {
    const auto e = rest.find("\r\n");
    const std::string_view h = rest.substr(0, e);
    rest = e == std::string_view::npos ? std::string_view{} : rest.substr(e + 2);
    if (h.empty()) break;  // blank line ends the head
    const auto colon = h.find(':');
    if (colon == std::string_view::npos || !is_token(h.substr(0, colon))) {
      throw HttpParseError("malformed header line");
    }
    req.headers[lower(std::string(h.substr(0, colon)))] = std::string(trim(h.substr(colon + 1)));
  }
  if (req.headers.count("transfer-encoding")) {
    throw HttpParseError("transfer-encoding is not supported");
  }
  return req;
}

Request read_request(net::TcpStream& stream, std::size_t max_body) {
  auto [head, body] = read_head(stream);
  Request req = parse_request_head(head);
  const std::size_t len = content_length(req.headers);
  if (len > max_body) throw HttpParseError("request body too large");
  if (body.size() > len) body.resize(len);
  std::string rest(len - body.size(), '\0');
  if (!rest.empty()) {
    std::span<std::uint8_t> out(reinterpret_cast<std::uint8_t*>(rest.data()), rest.size());
    if (!stream.read_exact(out)) throw TruncationError("connection closed inside body");
  }
  req.body = std::move(body) + rest;
  return req;
}

std::string format_response(const Response& r) {
  return fmt::format(
      "HTTP/1.1 {} {}\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
      r.status, reason_phrase(r.status), r.content_type, r.body.size(), r.body);
}

std::string format_request(const std::string& method, const std::string& path,
                           const std::string& host, const std::string& body) {
  return fmt::format(
      "{} {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n"
      "Content-Length: {}\r\nConnection: close\r\n\r\n{}",
      method, path, host, body.size(), body);
}

Url parse_url(const std::string& url) {
  constexpr std::string_view scheme = "http://";
  std::string_view rest = url;
  if (rest.substr(0, scheme.size()) == scheme) rest.remove_prefix(scheme.size());
  Url out;
  const auto slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  if (slash != std::string_view::npos) out.path = std::string(rest.substr(slash));
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    out.host = std::string(authority.substr(0, colon));
    try {
      out.port = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("bad port in URL '{}'", url));
    }
  } else {
    out.host = std::string(authority);
  }
  if (out.host.empty()) throw ValidationError(fmt::format("URL '{}' has no host", url));
  return out;
}

Response send_request(const net::HostPort& to, const std::string& method,
                      const std::string& path, const std::string& body,
                      net::Millis timeout) {
  auto stream = net::TcpStream::connect(to, timeout);
  stream.set_read_timeout(timeout);
  stream.write_all(format_request(method, path, to.str(), body));

  std::string buf;
  std::uint8_t chunk[4096];
  std::size_t header_end = std::string::npos;
  std::size_t expected = std::string::npos;
  for (;;) {
    if (header_end == std::string::npos) {
      header_end = buf.find("\r\n\r\n");
      if (header_end != std::string::npos) {
        const auto head = lower(buf.substr(0, header_end));
        const auto cl = head.find("content-length:");
        if (cl != std::string::npos) {
          expected = std::stoull(head.substr(cl + 15));
        }
      }
    }
    if (header_end != std::string::npos && expected != std::string::npos &&
        buf.size() >= header_end + 4 + expected) {
      break;
    }
    const std::size_t n = stream.read_some(chunk);
    if (n == 0) break;
    buf.append(reinterpret_cast<const char*>(chunk), n);
  }
  if (header_end == std::string::npos) throw ProtocolError("malformed HTTP response");
  Response resp;
  const auto sp = buf.find(' ');
  if (sp == std::string::npos || sp > header_end) throw ProtocolError("malformed status line");
  try {
    resp.status = std::stoi(buf.substr(sp + 1, 3));
  } catch (const std::exception&) {
    throw ProtocolError("malformed status code");
  }
  resp.body = buf.substr(header_end + 4);
  if (expected != std::string::npos && resp.body.size() > expected) resp.body.resize(expected);
  return resp;
}

void serve_connection(net::TcpStream stream, const Handler& handler, net::Millis read_timeout) {
  stream.set_read_timeout(read_timeout);
  Response resp;
  try {
    Request req = read_request(stream);
    resp = handler(req);
  } catch (const HttpParseError& e) {
    resp = {400, nlohmann::json{{"status", "error"}, {"error", e.what()}}.dump()};
  } catch (const TruncationError&) {
    return;
  } catch (const TimeoutError&) {
    return;
  } catch (const NetworkError&) {
    return;
  }
  try {
    stream.write_all(format_response(resp));
  } catch (const NetworkError&) {
  }
}

Server::Server(net::TcpListener listener, Handler handler)
    : listener_(std::move(listener)), handler_(std::move(handler)), port_(listener_.port()) {
  worker_ = std::thread([this] {
    while (running_.load()) {
      auto stream = listener_.accept(net::Millis(50));
      if (!stream.valid()) continue;
      serve_connection(std::move(stream), handler_, net::Millis(5000));
    }
  });
}

Server::~Server() { stop(); }

void Server::stop() {
  running_.store(false);
  if (worker_.joinable()) worker_.join();
  listener_.close();
}

}  // namespace fedmesh::http
