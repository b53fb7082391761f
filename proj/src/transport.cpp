#include "fedmesh/transport.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "fedmesh/error.hpp"

namespace fedmesh {

void Mailbox::push(Incoming in) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(in));
  }
  cv_.notify_one();
}

std::optional<Incoming> Mailbox::pop(net::Millis timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [this] { return !queue_.empty(); })) return std::nullopt;
  Incoming in = std::move(queue_.front());
  queue_.pop_front();
  return in;
}

TcpTransport::TcpTransport(int my_id, net::TcpListener listener, std::vector<Peer> neighbors)
    : my_id_(my_id), listener_(std::move(listener)), neighbors_(std::move(neighbors)) {}

TcpTransport::~TcpTransport() {
  for (auto& [id, link] : links_) {
    link->stream.shutdown();
    if (link->reader.joinable()) link->reader.join();
  }
}

void TcpTransport::connect(net::Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  auto remaining = [&] {
    return std::chrono::duration_cast<net::Millis>(deadline - std::chrono::steady_clock::now());
  };

  std::size_t expected_inbound = 0;
  for (const auto& peer : neighbors_) {
    if (peer.node_id > my_id_) ++expected_inbound;
  }
  // Dial lower ids. They may not be listening yet, so retry until the deadline.
  for (const auto& peer : neighbors_) {
    if (peer.node_id > my_id_) continue;
    for (;;) {
      try {
        auto stream = net::TcpStream::connect(peer.endpoint, net::Millis(1000));
        const auto hello = encode_frame(Hello{static_cast<std::uint16_t>(my_id_)});
        stream.write_all(hello);
        auto link = std::make_unique<Link>();
        link->stream = std::move(stream);
        links_[peer.node_id] = std::move(link);
        break;
      } catch (const Error&) {
        if (remaining().count() <= 0) {
          throw TimeoutError(fmt::format("node {}: could not reach neighbor {} at {}", my_id_,
                                         peer.node_id, peer.endpoint.str()));
        }
        std::this_thread::sleep_for(net::Millis(50));
      }
    }
  }
  // Accept higher ids; identify each by its HELLO.
  std::size_t inbound = 0;
  while (inbound < expected_inbound) {
    if (remaining().count() <= 0) {
      std::vector<int> missing;
      for (const auto& peer : neighbors_) {
        if (peer.node_id > my_id_ && !links_.count(peer.node_id)) missing.push_back(peer.node_id);
      }
      throw TimeoutError(fmt::format("node {}: neighbors {} never connected", my_id_,
                                     fmt::join(missing, ",")));
    }
    auto stream = listener_.accept(std::min(remaining(), net::Millis(200)));
    if (!stream.valid()) continue;
    stream.set_read_timeout(net::Millis(5000));
    std::optional<PeerMessage> first;
    try {
      first = read_frame(stream);
    } catch (const Error&) {
      continue;
    }
    const auto* hello = first ? std::get_if<Hello>(&*first) : nullptr;
    if (!hello) continue;
    const int from = hello->node_id;
    const bool expected = std::any_of(neighbors_.begin(), neighbors_.end(), [&](const Peer& p) {
      return p.node_id == from && from > my_id_;
    });
    if (!expected || links_.count(from)) continue;
    stream.set_read_timeout(net::Millis(0));
    auto link = std::make_unique<Link>();
    link->stream = std::move(stream);
    links_[from] = std::move(link);
    ++inbound;
  }
  listener_.close();
  for (auto& [id, link] : links_) start_reader(id);
}

void TcpTransport::start_reader(int peer) {
  Link* link = links_.at(peer).get();
  link->reader = std::thread([this, peer, link] {
    struct Done {
      Link* l;
      ~Done() { l->finished.store(true); }
    } done{link};
    for (;;) {
      try {
        auto msg = read_frame(link->stream);
        if (!msg) {
          mailbox_.push({peer, std::nullopt, {}});
          return;
        }
        const bool bye = std::holds_alternative<Bye>(*msg);
        mailbox_.push({peer, std::move(msg), {}});
        if (bye) return;
      } catch (const std::exception& e) {
        mailbox_.push({peer, std::nullopt, e.what()});
        return;
      }
    }
  });
}

std::size_t TcpTransport::send(int neighbor, const PeerMessage& msg) {
  auto it = links_.find(neighbor);
  if (it == links_.end()) {
    throw NetworkError(fmt::format("node {}: no link to {}", my_id_, neighbor));
  }
  const auto frame = encode_frame(msg);
  it->second->stream.write_all(frame);
  return frame.size();
}

std::optional<Incoming> TcpTransport::receive(net::Millis timeout) {
  return mailbox_.pop(timeout);
}

void TcpTransport::close() {
  if (closed_) return;
  closed_ = true;
  for (auto& [id, link] : links_) {
    try {
      link->stream.write_all(encode_frame(Bye{}));
    } catch (const Error&) {
    }
  }
  // Give neighbors a moment to finish their last sends and say BYE.
  const auto deadline = std::chrono::steady_clock::now() + net::Millis(2000);
  auto all_finished = [this] {
    return std::all_of(links_.begin(), links_.end(),
                       [](const auto& kv) { return kv.second->finished.load(); });
  };
  while (!all_finished() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(net::Millis(5));
  }
  for (auto& [id, link] : links_) {
    link->stream.shutdown();
    if (link->reader.joinable()) link->reader.join();
    link->stream.close();
  }
  listener_.close();
}

class MemoryTransport final : public PeerTransport {
 public:
  MemoryTransport(MemoryHub& hub, int my_id, std::vector<int> neighbors)
      : hub_(hub), my_id_(my_id), neighbors_(std::move(neighbors)) {}

  void connect(net::Millis) override {}

  std::size_t send(int neighbor, const PeerMessage& msg) override {
    if (std::find(neighbors_.begin(), neighbors_.end(), neighbor) == neighbors_.end()) {
      throw NetworkError(fmt::format("node {}: no link to {}", my_id_, neighbor));
    }
    const auto frame = encode_frame(msg);
    auto decoded = decode_frame(frame);
    hub_.boxes_.at(neighbor)->push({my_id_, std::move(decoded.message), {}});
    return frame.size();
  }

  std::optional<Incoming> receive(net::Millis timeout) override {
    return hub_.boxes_.at(my_id_)->pop(timeout);
  }

  void close() override {
    if (closed_) return;
    closed_ = true;
    for (int n : neighbors_) hub_.boxes_.at(n)->push({my_id_, Bye{}, {}});
  }

 private:
  MemoryHub& hub_;
  int my_id_;
  std::vector<int> neighbors_;
  bool closed_ = false;
};

MemoryHub::MemoryHub(int n) {
  for (int i = 0; i < n; ++i) boxes_.push_back(std::make_unique<Mailbox>());
}

std::unique_ptr<PeerTransport> MemoryHub::endpoint(int my_id, std::vector<int> neighbors) {
  return std::make_unique<MemoryTransport>(*this, my_id, std::move(neighbors));
}

}  // namespace fedmesh
