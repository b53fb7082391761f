#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedmesh/net.hpp"
#include "fedmesh/protocol.hpp"

namespace fedmesh {

// One event from a neighbor link: a decoded message, or the link closing.
struct Incoming {
  int from = -1;
  std::optional<PeerMessage> message;  // nullopt: link closed
  std::string error;                   // set when the link failed
};

// Thread-safe FIFO shared by link readers and the training context.
class Mailbox {
 public:
  void push(Incoming in);
  // nullopt on timeout.
  std::optional<Incoming> pop(net::Millis timeout);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Incoming> queue_;
};

// Neighbor links for one node. send() returns the bytes put on the wire.
class PeerTransport {
 public:
  virtual ~PeerTransport() = default;
  virtual void connect(net::Millis timeout) = 0;
  virtual std::size_t send(int neighbor, const PeerMessage& msg) = 0;
  virtual std::optional<Incoming> receive(net::Millis timeout) = 0;
  // Sends BYE to every neighbor and tears links down.
  virtual void close() = 0;
};

// Real sockets. Each node listens on its peer port; for every edge the
// higher id dials the lower id and introduces itself with HELLO.
class TcpTransport final : public PeerTransport {
 public:
  struct Peer {
    int node_id;
    net::HostPort endpoint;
  };

  TcpTransport(int my_id, net::TcpListener listener, std::vector<Peer> neighbors);
  ~TcpTransport() override;

  void connect(net::Millis timeout) override;
  std::size_t send(int neighbor, const PeerMessage& msg) override;
  std::optional<Incoming> receive(net::Millis timeout) override;
  void close() override;

 private:
  struct Link {
    net::TcpStream stream;
    std::thread reader;
    std::atomic<bool> finished{false};
  };
  void start_reader(int peer);

  int my_id_;
  net::TcpListener listener_;
  std::vector<Peer> neighbors_;
  std::map<int, std::unique_ptr<Link>> links_;
  Mailbox mailbox_;
  bool closed_ = false;
};

// In-process channels carrying the same encoded frames.
class MemoryHub {
 public:
  explicit MemoryHub(int n);
  std::unique_ptr<PeerTransport> endpoint(int my_id, std::vector<int> neighbors);

 private:
  friend class MemoryTransport;
  std::vector<std::unique_ptr<Mailbox>> boxes_;
};

}  // namespace fedmesh
