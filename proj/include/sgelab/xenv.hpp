#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgelab/envs.hpp"

namespace sgelab {

// Wire protocol: one JSON object per line, UTF-8, keys sorted, no floats.
// Real-valued fields travel as integers scaled by kWireScale.
inline constexpr int64_t kWireScale = 1000000;

inline int64_t to_fixed(double v) {
  return static_cast<int64_t>(std::llround(v * static_cast<double>(kWireScale)));
}
inline double from_fixed(int64_t v) {
  return static_cast<double>(v) / static_cast<double>(kWireScale);
}

struct DecodeError : std::runtime_error {
  explicit DecodeError(size_t offset, const std::string& what)
      : std::runtime_error("decode error at byte " + std::to_string(offset) +
                           ": " + what),
        offset(offset) {}
  size_t offset;
};

struct BindFailure : std::runtime_error {
  explicit BindFailure(const std::string& what) : std::runtime_error(what) {}
};
struct ConnectFailure : std::runtime_error {
  explicit ConnectFailure(const std::string& what) : std::runtime_error(what) {}
};
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// A protocol message: request counter, request/response kind, and the
// kind-specific payload fields (already fixed-point encoded).
struct WireMessage {
  uint64_t id = 0;
  std::string kind;
  nlohmann::json body = nlohmann::json::object();

  bool operator==(const WireMessage& o) const {
    return id == o.id && kind == o.kind && body == o.body;
  }
};

// nlohmann::json with the default object type keeps keys in lexicographic
// order, so dump() is already canonical.
inline std::string encode_message(const WireMessage& m) {
  nlohmann::json j = m.body;
  j["id"] = m.id;
  j["kind"] = m.kind;
  return j.dump() + "\n";
}

inline WireMessage decode_message(const std::string& line) {
  if (line.empty() || line == "\n") throw DecodeError(0, "empty line");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(e.byte > 0 ? e.byte - 1 : 0, e.what());
  }
  if (!j.is_object()) throw DecodeError(0, "not an object");
  if (!j.contains("id") || !j["id"].is_number_unsigned())
    throw DecodeError(0, "missing id");
  if (!j.contains("kind") || !j["kind"].is_string())
    throw DecodeError(0, "missing kind");
  WireMessage m;
  m.id = j["id"].get<uint64_t>();
  m.kind = j["kind"].get<std::string>();
  j.erase("id");
  j.erase("kind");
  m.body = std::move(j);
  return m;
}

// --- payload helpers -------------------------------------------------------

inline nlohmann::json obs_to_json(const Observation& o) {
  nlohmann::json j;
  j["step_index"] = o.step_index;
  std::vector<int64_t> f;
  f.reserve(o.features.size());
  for (double v : o.features) f.push_back(to_fixed(v));
  j["features"] = f;
  j["raw_feedback"] = o.raw_feedback;
  return j;
}

inline Observation obs_from_json(const nlohmann::json& j) {
  Observation o;
  o.step_index = j.at("step_index").get<int>();
  for (int64_t v : j.at("features").get<std::vector<int64_t>>())
    o.features.push_back(from_fixed(v));
  o.raw_feedback = j.at("raw_feedback").get<std::vector<int>>();
  return o;
}

inline nlohmann::json spec_to_json(const EnvSpec& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["vocab"] = s.vocab;
  j["strategy_len"] = s.strategy_len;
  j["remainder_len"] = s.remainder_len;
  j["horizon"] = s.horizon;
  j["obs_dim"] = s.obs_dim;
  j["train_tasks"] = s.train_tasks;
  j["test_tasks"] = s.test_tasks;
  j["scale"] = kWireScale;
  return j;
}

inline EnvSpec spec_from_json(const nlohmann::json& j) {
  EnvSpec s;
  s.name = j.at("name").get<std::string>();
  s.vocab = j.at("vocab").get<int>();
  s.strategy_len = j.at("strategy_len").get<int>();
  s.remainder_len = j.at("remainder_len").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.obs_dim = j.at("obs_dim").get<int>();
  s.train_tasks = j.at("train_tasks").get<int>();
  s.test_tasks = j.at("test_tasks").get<int>();
  return s;
}

// --- socket plumbing -------------------------------------------------------

namespace detail {

class LineSocket {
 public:
  explicit LineSocket(int fd) : fd_(fd) {}
  LineSocket(const LineSocket&) = delete;
  ~LineSocket() { close(); }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }
  void shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }
  int fd() const { return fd_; }

  bool write_all(const std::string& data) {
    size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n <= 0) return false;
      off += static_cast<size_t>(n);
    }
    return true;
  }

  // Reads up to and including the next newline; false on EOF/error.
  bool read_line(std::string& out) {
    out.clear();
    while (true) {
      size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        out = buf_.substr(0, nl + 1);
        buf_.erase(0, nl + 1);
        return true;
      }
      char chunk[4096];
      ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n <= 0) return false;
      buf_.append(chunk, static_cast<size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

}  // namespace detail

// --- server ----------------------------------------------------------------

// One environment instance per connection; requests on a connection are
// served strictly in order.
class EnvServer {
 public:
  EnvServer(const Env& prototype, const std::string& host, int port)
      : prototype_(prototype.clone()) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw BindFailure("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw BindFailure("bad bind address: " + host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) <
            0 ||
        ::listen(listen_fd_, 16) < 0) {
      ::close(listen_fd_);
      throw BindFailure("cannot bind " + host + ":" + std::to_string(port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~EnvServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto& s : connections_) s->shutdown_both();
    }
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) break;
      auto sock = std::make_shared<detail::LineSocket>(fd);
      std::lock_guard<std::mutex> lock(mu_);
      connections_.push_back(sock);
      workers_.emplace_back([this, sock] { serve_connection(*sock); });
    }
  }

  void serve_connection(detail::LineSocket& sock) {
    std::unique_ptr<Env> env = prototype_->clone();
    bool has_episode = false;
    std::string line;
    while (sock.read_line(line)) {
      WireMessage req;
      try {
        req = decode_message(line);
      } catch (const DecodeError& e) {
        WireMessage err;
        err.id = 0;
        err.kind = "error";
        err.body["code"] = 400;
        err.body["message"] = std::string(e.what());
        if (!sock.write_all(encode_message(err))) return;
        continue;  // malformed line does not kill the connection
      }
      WireMessage resp = handle(*env, has_episode, req);
      if (!sock.write_all(encode_message(resp))) return;
      if (stopping_) return;  // finish the in-flight request, then leave
    }
  }

  static WireMessage error_response(uint64_t id, int code,
                                    const std::string& message) {
    WireMessage m;
    m.id = id;
    m.kind = "error";
    m.body["code"] = code;
    m.body["message"] = message;
    return m;
  }

  WireMessage handle(Env& env, bool& has_episode, const WireMessage& req) {
    WireMessage resp;
    resp.id = req.id;
    try {
      if (req.kind == "spec") {
        resp.kind = "spec";
        resp.body["spec"] = spec_to_json(env.spec());
      } else if (req.kind == "tasks") {
        std::string sp = req.body.at("split").get<std::string>();
        if (sp != "train" && sp != "test")
          return error_response(req.id, 400, "unknown split");
        resp.kind = "tasks";
        std::vector<int> ids;
        for (const Goal& g :
             env.tasks(sp == "train" ? Split::kTrain : Split::kTest))
          ids.push_back(g.task_id);
        resp.body["tasks"] = ids;
      } else if (req.kind == "reset") {
        int task_id = req.body.at("task_id").get<int>();
        uint64_t seed = req.body.at("seed").get<uint64_t>();
        Split split = task_id < env.spec().train_tasks ? Split::kTrain
                                                       : Split::kTest;
        Observation obs = env.reset(Goal{task_id, split}, seed);
        has_episode = true;
        resp.kind = "reset";
        resp.body["obs"] = obs_to_json(obs);
      } else if (req.kind == "step") {
        if (!has_episode)
          return error_response(req.id, 409, "step before reset");
        std::vector<int> action = req.body.at("action").get<std::vector<int>>();
        StepOutcome out = env.step(action);
        resp.kind = "step";
        resp.body["obs"] = obs_to_json(out.obs);
        resp.body["reward"] = to_fixed(out.reward);
        resp.body["done"] = out.done;
        resp.body["outcome"] = out.outcome;
      } else {
        return error_response(req.id, 400, "unknown kind: " + req.kind);
      }
    } catch (const UnknownTask& e) {
      return error_response(req.id, 400, e.what());
    } catch (const EpisodeFinished& e) {
      return error_response(req.id, 409, e.what());
    } catch (const MalformedAction& e) {
      return error_response(req.id, 400, e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response(req.id, 400, e.what());
    }
    return resp;
  }

  std::unique_ptr<Env> prototype_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<std::shared_ptr<detail::LineSocket>> connections_;
  std::vector<std::thread> workers_;
};

inline std::unique_ptr<EnvServer> serve(const Env& prototype,
                                        const std::string& host, int port) {
  return std::make_unique<EnvServer>(prototype, host, port);
}

// --- client ----------------------------------------------------------------

// Environment backed by a server connection. Satisfies the same reset/step
// determinism contract as the local environments. Not usable from two
// threads at once; clone() opens its own connection.
class RemoteEnv : public Env {
 public:
  RemoteEnv(const std::string& host, int port) : host_(host), port_(port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ConnectFailure("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw ConnectFailure("bad address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
      ::close(fd);
      throw ConnectFailure("cannot connect to " + host + ":" +
                           std::to_string(port));
    }
    sock_ = std::make_unique<detail::LineSocket>(fd);
    WireMessage req;
    req.kind = "spec";
    WireMessage resp = roundtrip(req);
    spec_ = spec_from_json(resp.body.at("spec"));
  }

  Observation reset(const Goal& goal, uint64_t seed) override {
    WireMessage req;
    req.kind = "reset";
    req.body["task_id"] = goal.task_id;
    req.body["seed"] = seed;
    WireMessage resp = roundtrip(req);
    return obs_from_json(resp.body.at("obs"));
  }

  StepOutcome step(const std::vector<int>& action_tokens) override {
    WireMessage req;
    req.kind = "step";
    req.body["action"] = action_tokens;
    WireMessage resp = roundtrip(req);
    StepOutcome out;
    out.obs = obs_from_json(resp.body.at("obs"));
    out.reward = from_fixed(resp.body.at("reward").get<int64_t>());
    out.done = resp.body.at("done").get<bool>();
    out.outcome = resp.body.at("outcome").get<OutcomeId>();
    return out;
  }

  std::vector<int> remote_tasks(Split split) {
    WireMessage req;
    req.kind = "tasks";
    req.body["split"] = split_name(split);
    WireMessage resp = roundtrip(req);
    return resp.body.at("tasks").get<std::vector<int>>();
  }

  // State classification needs the hidden instance internals; the protocol
  // deliberately reports outcomes only through step responses.
  OutcomeId outcome_class(const std::vector<int>&) const override {
    throw ProtocolError("outcome_class is not served remotely");
  }
  int designated_strategy_token(int) const override {
    throw ProtocolError("base-policy hooks are not served remotely");
  }
  int intent_of_token(int) const override {
    throw ProtocolError("base-policy hooks are not served remotely");
  }
  std::vector<int> faithful_tokens(int, int) const override {
    throw ProtocolError("base-policy hooks are not served remotely");
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<RemoteEnv>(host_, port_);
  }

 private:
  WireMessage roundtrip(WireMessage req) {
    req.id = ++next_id_;
    if (!sock_->write_all(encode_message(req)))
      throw ProtocolError("connection lost while sending");
    std::string line;
    if (!sock_->read_line(line))
      throw ProtocolError("connection closed by server");
    WireMessage resp = decode_message(line);
    if (resp.id != req.id)
      throw ProtocolError("response id mismatch: sent " +
                          std::to_string(req.id) + ", got " +
                          std::to_string(resp.id));
    if (resp.kind == "error")
      throw ProtocolError("server error " +
                          std::to_string(resp.body.at("code").get<int>()) +
                          ": " +
                          resp.body.at("message").get<std::string>());
    return resp;
  }

  std::string host_;
  int port_;
  uint64_t next_id_ = 0;
  std::unique_ptr<detail::LineSocket> sock_;
};

inline std::unique_ptr<RemoteEnv> connect_env(const std::string& host,
                                              int port) {
  return std::make_unique<RemoteEnv>(host, port);
}

}  // namespace sgelab
