#pragma once

// Authorization-gated inference. A grants table maps users to the secured tasks
// they may unlock; the key distributor hands out exactly those keys; inference
// predicts each granted task from the input stamped with that task's key alone.
//
// Wire protocol (one JSON document per line, both directions):
//   request  {"user": "...", "sample_index": 12}
//            {"user": "...", "sample": [...]}      (raw upload, when enabled)
//   response {"tasks": [{"prediction": 1, "revealed": true, "task": 0}, ...]}
//            {"error": "bad_request: ..."} | {"error": "unknown_sample: ..."}

#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/eval.hpp"
#include "mtk/nn.hpp"
#include "mtk/trigger.hpp"

namespace mtk {

struct GrantsTable {
  std::map<std::string, std::set<std::size_t>> users;
};

inline GrantsTable grants_from_json(const nlohmann::json& j) {
  try {
    GrantsTable g;
    for (const auto& [user, tasks] : j.at("users").items()) {
      auto list = tasks.get<std::vector<std::size_t>>();
      g.users[user] = std::set<std::size_t>(list.begin(), list.end());
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed grants file: ") + e.what());
  }
}

inline nlohmann::json to_json(const GrantsTable& g) {
  nlohmann::json users = nlohmann::json::object();
  for (const auto& [user, tasks] : g.users) users[user] = std::vector<std::size_t>(tasks.begin(), tasks.end());
  return {{"users", users}};
}

/// Every granted task must have a key in the deployed key set.
inline void validate_grants(const GrantsTable& grants, const std::vector<TriggerKey>& keys) {
  for (const auto& [user, tasks] : grants.users)
    for (std::size_t t : tasks) {
      bool found = false;
      for (const auto& k : keys) found = found || k.task == t;
      require(found, "user '" + user + "' is granted task " + std::to_string(t) + ", which has no key");
    }
}

/// Keys for exactly the user's granted tasks; unknown users get none.
inline std::vector<TriggerKey> authorize(const std::string& user, const GrantsTable& grants,
                                         const std::vector<TriggerKey>& keys) {
  std::vector<TriggerKey> out;
  auto it = grants.users.find(user);
  if (it == grants.users.end()) return out;
  for (const auto& k : keys)
    if (it->second.count(k.task)) out.push_back(k);
  return out;
}

struct TaskPrediction {
  std::size_t task = 0;
  std::size_t prediction = 0;
  bool revealed = false;

  friend bool operator==(const TaskPrediction&, const TaskPrediction&) = default;
};

struct InferenceResponse {
  std::vector<TaskPrediction> tasks;

  friend bool operator==(const InferenceResponse&, const InferenceResponse&) = default;
};

/// Unprotected tasks and non-granted secured tasks are predicted from plain x;
/// each granted secured task from x carrying only its own key. `revealed` depends
/// only on the task metadata and the granted keys.
inline InferenceResponse infer(const Evaluator& net, std::span<const float> x, const std::vector<TriggerKey>& granted,
                               const std::vector<TaskSpec>& tasks) {
  require(tasks.size() == net.task_count(), "task list does not match the model heads");
  InferenceResponse r;
  for (const auto& t : tasks) {
    const TriggerKey* key = nullptr;
    for (const auto& k : granted)
      if (k.task == t.id) key = &k;
    const bool revealed = !t.secured || key != nullptr;
    r.tasks.push_back({t.id, predict_under(net, x, t.id, t.secured ? key : nullptr), revealed});
  }
  return r;
}

inline nlohmann::json to_json(const InferenceResponse& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& p : r.tasks) tasks.push_back({{"task", p.task}, {"prediction", p.prediction}, {"revealed", p.revealed}});
  return {{"tasks", tasks}};
}

/// Holds the deployed model, the distributor's dataset, grants and keys; all
/// immutable, so `handle` is safe to call from many threads.
class InferenceService {
 public:
  InferenceService(const Model& model, MultiTaskDataset data, GrantsTable grants, std::vector<TriggerKey> keys,
                   bool allow_upload = false)
      : net_(model.spec, model.params),
        data_(std::move(data)),
        grants_(std::move(grants)),
        keys_(std::move(keys)),
        allow_upload_(allow_upload) {
    require(data_.shape() == model.spec.input, "served dataset does not match the model input");
    validate_key_set(keys_, data_.tasks());
    validate_grants(grants_, keys_);
  }

  const MultiTaskDataset& data() const noexcept { return data_; }

  InferenceResponse infer_sample(const std::string& user, std::size_t index) const {
    require(index < data_.size(), "sample index out of range");
    return infer(net_, data_.image(index), authorize(user, grants_, keys_), data_.tasks());
  }

  /// One request line in, one response line out (no trailing newline).
  std::string handle(std::string_view line) const {
    auto error = [](const std::string& kind, const std::string& detail) {
      return nlohmann::json{{"error", kind + ": " + detail}}.dump();
    };
    nlohmann::json req = nlohmann::json::parse(line, nullptr, false);
    if (req.is_discarded()) return error("bad_request", "not valid JSON");
    if (!req.is_object()) return error("bad_request", "request must be a JSON object");
    if (!req.contains("user") || !req["user"].is_string()) return error("bad_request", "missing string field 'user'");
    const auto user = req["user"].get<std::string>();
    if (req.contains("sample")) {
      if (!allow_upload_) return error("bad_request", "raw sample upload is disabled");
      const auto& s = req["sample"];
      if (!s.is_array() || s.size() != data_.shape().size())
        return error("bad_request", "'sample' must hold " + std::to_string(data_.shape().size()) + " numbers");
      std::vector<float> x;
      x.reserve(s.size());
      for (const auto& v : s) {
        if (!v.is_number()) return error("bad_request", "'sample' must hold numbers");
        double d = v.get<double>();
        if (!(d >= 0.0 && d <= 1.0)) return error("bad_request", "'sample' values must lie in [0,1]");
        x.push_back(static_cast<float>(d));
      }
      return to_json(infer(net_, x, authorize(user, grants_, keys_), data_.tasks())).dump();
    }
    if (!req.contains("sample_index") || !req["sample_index"].is_number_integer())
      return error("bad_request", "missing integer field 'sample_index'");
    const auto index = req["sample_index"].get<std::int64_t>();
    if (index < 0 || static_cast<std::uint64_t>(index) >= data_.size())
      return error("unknown_sample", "no sample " + std::to_string(index));
    return to_json(infer_sample(user, static_cast<std::size_t>(index))).dump();
  }

 private:
  Evaluator net_;
  MultiTaskDataset data_;
  GrantsTable grants_;
  std::vector<TriggerKey> keys_;
  bool allow_upload_;
};

namespace detail {

inline int open_socket(const std::string& host, std::uint16_t port, bool listen_mode) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (listen_mode) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw Error("cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (listen_mode) {
      int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 128) == 0) break;
    } else if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      break;
    }
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error(std::string(listen_mode ? "cannot listen on " : "cannot connect to ") + host + ":" + service);
  return fd;
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

/// Line-delimited JSON over TCP; one thread per connection.
class TcpServer {
 public:
  static constexpr std::size_t kMaxLine = 1 << 22;

  TcpServer(const InferenceService& service, const std::string& host, std::uint16_t port)
      : service_(service), listen_fd_(detail::open_socket(host, port, true)) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  ~TcpServer() { stop(); }

  std::uint16_t port() const noexcept { return port_; }

  /// Accepts connections until stop() is called.
  void run() {
    while (!stopping_) {
      int client = ::accept(listen_fd_, nullptr, nullptr);
      if (client < 0) {
        if (stopping_) break;
        continue;
      }
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(client);
        break;
      }
      clients_.insert(client);
      workers_.emplace_back([this, client] { serve_connection(client); });
    }
  }

  void start() {
    acceptor_ = std::thread([this] { run(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(mu_);
      for (int fd : clients_) ::shutdown(fd, SHUT_RDWR);
      workers.swap(workers_);
    }
    for (auto& w : workers) w.join();
    ::close(listen_fd_);
  }

 private:
  void serve_connection(int fd) {
    std::string pending;
    char buf[65536];
    bool open = true;
    while (open) {
      ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n <= 0) break;
      pending.append(buf, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
        std::string_view line(pending.data() + start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (!detail::send_all(fd, service_.handle(line) + "\n")) {
          open = false;
          break;
        }
      }
      pending.erase(0, start);
      if (pending.size() > kMaxLine) {
        detail::send_all(fd, nlohmann::json{{"error", "bad_request: line too long"}}.dump() + "\n");
        break;
      }
    }
    std::lock_guard lock(mu_);
    clients_.erase(fd);
    ::close(fd);
  }

  const InferenceService& service_;
  int listen_fd_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::set<int> clients_;
  std::vector<std::thread> workers_;
};

/// Sends each line and reads one response line per request.
inline std::vector<std::string> request_lines(const std::string& host, std::uint16_t port,
                                              const std::vector<std::string>& lines) {
  int fd = detail::open_socket(host, port, false);
  std::string payload;
  for (const auto& l : lines) payload += l + "\n";
  if (!detail::send_all(fd, payload)) {
    ::close(fd);
    throw Error("failed to send request");
  }
  std::vector<std::string> out;
  std::string pending;
  char buf[65536];
  while (out.size() < lines.size()) {
    ssize_t n = ::recv(fd, buf, sizeof buf, 0);
    if (n <= 0) break;
    pending.append(buf, static_cast<std::size_t>(n));
    for (std::size_t nl; (nl = pending.find('\n')) != std::string::npos;) {
      out.push_back(pending.substr(0, nl));
      pending.erase(0, nl + 1);
    }
  }
  ::close(fd);
  if (out.size() != lines.size()) throw Error("connection closed before every response arrived");
  return out;
}

}  // namespace mtk
