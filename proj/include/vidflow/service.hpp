#pragma once

// HTTP + WebSocket front end for a Session. Everything runs on one
// io_context thread, so engine mutations are serialized by construction.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include "vidflow/engine.hpp"

namespace vidflow::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::filesystem::path media_root = ".";
  std::optional<std::filesystem::path> ui_root;
  std::chrono::milliseconds tick_interval{20};
  SessionOptions session;
};

inline std::string mime_type(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  if (ext == ".m3u8") return "application/vnd.apple.mpegurl";
  if (ext == ".ts") return "video/mp2t";
  if (ext == ".mp4") return "video/mp4";
  if (ext == ".m4s") return "video/iso.segment";
  if (ext == ".json") return "application/json";
  if (ext == ".ndjson") return "application/x-ndjson";
  if (ext == ".csv") return "text/csv";
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

/// Joins a URL path under `root`, refusing anything that escapes it.
inline std::optional<std::filesystem::path> safe_join(const std::filesystem::path& root, std::string_view rel) {
  std::filesystem::path p;
  std::size_t start = 0;
  while (start <= rel.size()) {
    std::size_t end = rel.find('/', start);
    std::string_view part = rel.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    if (part == "..") return std::nullopt;
    if (!part.empty() && part != ".") p /= std::string(part);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return root / p;
}

struct Target {
  std::string path;
  std::map<std::string, std::string> query;
};

inline Target split_target(std::string_view t) {
  Target out;
  auto q = t.find('?');
  out.path = std::string(t.substr(0, q));
  if (q == std::string_view::npos) return out;
  std::string_view rest = t.substr(q + 1);
  while (!rest.empty()) {
    auto amp = rest.find('&');
    std::string_view kv = rest.substr(0, amp);
    auto eq = kv.find('=');
    out.query[std::string(kv.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(kv.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return out;
}

class Server;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& s, Server& server) : ws_(std::move(s)), server_(server) {}

  void start(http::request<http::string_body> req);
  void send(std::string text) {
    queue_.push_back(std::move(text));
    if (queue_.size() == 1 && open_) write_next();
  }

 private:
  void read_next();
  void write_next() {
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server& server_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  bool open_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& s, Server& server) : stream_(std::move(s)), server_(server) {}
  void start() { read_next(); }

 private:
  void read_next() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->on_request();
    });
  }
  void on_request();
  void close() {
    beast::error_code ec;
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  beast::tcp_stream stream_;
  Server& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<http::response<http::string_body>> res_;
};

class Server {
 public:
  Server(std::unique_ptr<Session> session, ServiceOptions opts)
      : opts_(std::move(opts)), session_(std::move(session)), acceptor_(ioc_), timer_(ioc_) {
    tcp::endpoint ep(asio::ip::make_address(opts_.address), opts_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    session_->drain();
  }
  ~Server() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  /// Serves on the calling thread until stop().
  void run() {
    accept();
    schedule_tick();
    ioc_.run();
  }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { run(); });
  }

  void stop() {
    asio::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      timer_.cancel();
      ioc_.stop();
    });
    if (thread_.joinable()) thread_.join();
  }

  double now_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_).count();
  }

  // Called on the io thread only.
  void attach(const std::shared_ptr<WsSession>& ws) {
    clients_.insert(ws);
    ws->send(bus_message("spec_loaded", std::nullopt, {{"spec", to_json(session_->spec())}}).dump());
    for (const auto& p : session_->spec().players)
      if (p.playlist() && session_->manifest_epoch(p.name) > 0) {
        auto e = session_->manifest_epoch(p.name);
        ws->send(bus_message("manifest_epoch", p.name,
                             {{"epoch", e}, {"duration", session_->playlist(p.name)->duration_seconds()},
                              {"url", "/players/" + p.name + "/manifest.m3u8?epoch=" + std::to_string(e)}})
                     .dump());
      }
    Value snap = session_->runtime().snapshot();
    for (auto it = snap.begin(); it != snap.end(); ++it)
      ws->send(bus_message("signal_update", std::nullopt, {{"name", it.key()}, {"value", it.value()}}).dump());
  }
  void detach(const std::shared_ptr<WsSession>& ws) { clients_.erase(ws); }

  void on_bus_text(const std::shared_ptr<WsSession>& from, const std::string& text) {
    try {
      session_->handle(BusMessage::parse(text), now_ms());
    } catch (const Error& e) {
      from->send(bus_message("error", std::nullopt, {{"message", e.what()}}).dump());
    }
    flush();
  }

  void flush() {
    for (const auto& m : session_->drain()) {
      std::string text = m.dump();
      for (const auto& c : clients_) c->send(text);
    }
  }

  http::response<http::string_body> route(const http::request<http::string_body>& req) {
    Target t = split_target(std::string_view(req.target().data(), req.target().size()));
    auto reply = [&](http::status st, std::string body, std::string type) {
      http::response<http::string_body> res{st, req.version()};
      res.set(http::field::server, "vidflow");
      res.set(http::field::content_type, type);
      res.keep_alive(req.keep_alive());
      res.body() = std::move(body);
      res.prepare_payload();
      return res;
    };
    auto error = [&](http::status st, const std::string& msg) {
      return reply(st, Value{{"error", msg}}.dump() + "\n", "application/json");
    };
    try {
      const auto method = req.method();
      if (t.path.rfind("/players/", 0) == 0) {
        std::string rest = t.path.substr(9);
        auto slash = rest.find('/');
        if (slash == std::string::npos || method != http::verb::get) return error(http::status::not_found, "not found");
        std::string name = rest.substr(0, slash), what = rest.substr(slash + 1);
        if (what == "manifest.m3u8") {
          std::optional<std::uint64_t> epoch;
          if (auto e = t.query.find("epoch"); e != t.query.end()) epoch = std::stoull(e->second);
          auto res = reply(http::status::ok, session_->manifest(name, epoch, "/media/"), "application/vnd.apple.mpegurl");
          res.set(http::field::cache_control, "no-store");
          res.set("X-Manifest-Epoch", std::to_string(session_->manifest_epoch(name)));
          return res;
        }
        if (what == "overlays") {
          long frame = t.query.count("frame") ? std::stol(t.query["frame"]) : 0;
          if (frame < 0) return error(http::status::bad_request, "frame must be >= 0");
          return reply(http::status::ok, to_json(session_->overlays(name, frame)).dump(), "application/json");
        }
        return error(http::status::not_found, "not found");
      }
      if (t.path == "/spec" && method == http::verb::get) return reply(http::status::ok, serialize_spec(session_->spec()), "application/json");
      if (t.path == "/spec" && method == http::verb::post) {
        Spec spec = parse_spec(req.body());
        auto next = std::make_unique<Session>(std::move(spec), opts_.session, now_ms());
        session_ = std::move(next);
        flush();
        return reply(http::status::ok, Value{{"ok", true}}.dump() + "\n", "application/json");
      }
      if (t.path == "/events" && method == http::verb::post) {
        Value ev = parse_json_text(req.body());
        session_->inject_event(ev, now_ms());
        flush();
        return reply(http::status::ok, Value{{"ok", true}}.dump() + "\n", "application/json");
      }
      if (t.path == "/signals" && method == http::verb::get)
        return reply(http::status::ok, session_->runtime().snapshot().dump(), "application/json");
      if (method != http::verb::get && method != http::verb::head) return error(http::status::method_not_allowed, "method not allowed");
      if (t.path.rfind("/media/", 0) == 0) return file(req, opts_.media_root, t.path.substr(7));
      if (opts_.ui_root) return file(req, *opts_.ui_root, t.path == "/" ? "index.html" : t.path.substr(1));
      return error(http::status::not_found, "not found");
    } catch (const UnknownPlayer& e) {
      return error(http::status::not_found, e.what());
    } catch (const StaleEpoch& e) {
      return error(http::status::conflict, e.what());
    } catch (const OutOfRange& e) {
      return error(http::status::not_found, e.what());
    } catch (const std::invalid_argument&) {
      return error(http::status::bad_request, "malformed query parameter");
    } catch (const std::out_of_range&) {
      return error(http::status::bad_request, "malformed query parameter");
    } catch (const Error& e) {
      return error(http::status::bad_request, e.what());
    }
  }

 private:
  friend class HttpSession;

  http::response<http::string_body> file(const http::request<http::string_body>& req, const std::filesystem::path& root,
                                         std::string_view rel) {
    auto path = safe_join(root, rel);
    http::response<http::string_body> res{http::status::not_found, req.version()};
    res.keep_alive(req.keep_alive());
    if (!path || !std::filesystem::is_regular_file(*path)) {
      res.set(http::field::content_type, "application/json");
      res.body() = Value{{"error", "not found"}}.dump() + "\n";
    } else {
      res.result(http::status::ok);
      res.set(http::field::content_type, mime_type(*path));
      res.set(http::field::access_control_allow_origin, "*");
      if (req.method() != http::verb::head) res.body() = read_file(*path);
    }
    res.prepare_payload();
    return res;
  }

  void accept() {
    acceptor_.async_accept(ioc_, [this](beast::error_code ec, tcp::socket s) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(s), *this)->start();
      accept();
    });
  }

  void schedule_tick() {
    timer_.expires_after(opts_.tick_interval);
    timer_.async_wait([this](beast::error_code ec) {
      if (ec) return;
      session_->tick(now_ms());
      flush();
      schedule_tick();
    });
  }

  ServiceOptions opts_;
  std::unique_ptr<Session> session_;
  asio::io_context ioc_{1};
  tcp::acceptor acceptor_;
  asio::steady_timer timer_;
  std::set<std::shared_ptr<WsSession>> clients_;
  std::thread thread_;
  std::chrono::steady_clock::time_point epoch_ = std::chrono::steady_clock::now();
};

inline void HttpSession::on_request() {
  if (websocket::is_upgrade(req_)) {
    if (split_target(std::string_view(req_.target().data(), req_.target().size())).path != "/bus") return close();
    std::make_shared<WsSession>(stream_.release_socket(), server_)->start(std::move(req_));
    return;
  }
  res_ = std::make_shared<http::response<http::string_body>>(server_.route(req_));
  http::async_write(stream_, *res_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec || self->res_->need_eof()) return self->close();
    self->read_next();
  });
}

inline void WsSession::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->server_.attach(self);
    self->read_next();
  });
}

inline void WsSession::read_next() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->server_.detach(self);
      return;
    }
    std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    self->server_.on_bus_text(self, text);
    self->read_next();
  });
}

}  // namespace vidflow::service
