#include "acpolicy/api.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <iostream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <openssl/rand.h>

#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"
#include "acpolicy/sim.hpp"

namespace acpolicy::api {

using nlohmann::json;
namespace fs = std::filesystem;

std::string random_token(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) {
    throw Error("system random source failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * bytes);
  for (unsigned char c : buf) {
    out += hex[c >> 4];
    out += hex[c & 0xF];
  }
  return out;
}

namespace {

// Thrown inside handlers; rendered as {code, message, field?}.
struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::string field;
};

std::string hash_token(const std::string& token) { return sim::sha256_hex(token); }

std::string amount(double x) { return money::rounded(x, 4); }

struct Caller {
  std::optional<OccupantId> occupant;
  bool admin = false;
};

struct Entry {
  mutable std::shared_mutex mutex;
  std::condition_variable_any changed;
  std::unique_ptr<EventLog> log;
  std::unique_ptr<Session> session;
  std::string admin_hash;
  std::map<std::string, OccupantId> occupant_by_hash;

  void load_access() {
    const auto& access = session->state().access();
    admin_hash = access.value("admin", std::string());
    occupant_by_hash.clear();
    if (access.contains("occupants")) {
      for (const auto& [occ, h] : access.at("occupants").items()) {
        occupant_by_hash[h.get<std::string>()] = occ;
      }
    }
  }

  Caller identify(const std::string& token) const {
    Caller c;
    if (token.empty()) return c;
    const auto h = hash_token(token);
    if (!admin_hash.empty() && h == admin_hash) c.admin = true;
    if (auto it = occupant_by_hash.find(h); it != occupant_by_hash.end()) c.occupant = it->second;
    return c;
  }
};

std::string bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  if (header.rfind(prefix, 0) == 0) return header.substr(prefix.size());
  if (req.has_param("token")) return req.get_param_value("token");
  return {};
}

json outcome_views(const Round& r) {
  json out = json::array();
  for (auto kind : r.feasible_outcomes()) {
    out.push_back({{"kind", to_string(kind)},
                   {"setpoint", r.costs.at(kind).outcome.setpoint},
                   {"incremental_cost", amount(r.costs.incremental(kind))}});
  }
  return out;
}

std::optional<std::size_t> index_of_occupant(const SessionConfig& cfg, const OccupantId& occ) {
  const auto it = std::find(cfg.occupancy.begin(), cfg.occupancy.end(), occ);
  if (it == cfg.occupancy.end()) return std::nullopt;
  return static_cast<std::size_t>(it - cfg.occupancy.begin());
}

json round_view(const SessionState& state, const Caller& caller) {
  json doc = {{"session_id", state.id()},
              {"phase", to_string(state.phase())},
              {"current_temp", state.current_temp()},
              {"last_seq", state.last_seq()},
              {"round", nullptr}};
  const Round* r = state.current_round();
  if (!r) return doc;
  std::size_t manual = 0;
  for (const auto& [occ, rep] : r->reports) manual += rep.source == ReportSource::Manual;
  json round = {{"index", r->index},
                {"T0", r->T0},
                {"phase", to_string(r->phase)},
                {"state", r->decision ? "decided" : "open"},
                {"opened_at", r->opened_at_ms},
                {"deadline", r->deadline_ms},
                {"outcomes", outcome_views(*r)},
                {"reports_submitted", manual}};
  if (caller.occupant) {
    json you = {{"occupant", *caller.occupant}, {"reported", false}};
    if (auto it = r->reports.find(*caller.occupant); it != r->reports.end()) {
      you["reported"] = it->second.source == ReportSource::Manual;
      you["type"] = it->second.type.id();
    }
    round["you"] = you;
  }
  if (r->decision) {
    const auto& d = *r->decision;
    json decision = {{"outcome", to_string(d.outcome.kind)}, {"setpoint", d.outcome.setpoint}};
    if (d.payments) {
      if (caller.occupant) {
        if (auto i = index_of_occupant(state.config(), *caller.occupant)) {
          decision["payment"] = amount((*d.payments)[*i]);
        }
      }
      if (caller.admin) {
        json all = json::object();
        for (std::size_t i = 0; i < state.config().occupancy.size(); ++i) {
          all[state.config().occupancy[i]] = amount((*d.payments)[i]);
        }
        decision["payments"] = all;
      }
    }
    round["decision"] = decision;
  }
  doc["round"] = round;
  return doc;
}

// Public projection of one event for a caller; nullopt hides it. Types and
// payments are private to their occupant (and the admin).
std::optional<json> project(const SessionEvent& e, const SessionState& state, const Caller& caller) {
  const auto& p = e.payload;
  auto mine = [&](const std::string& occ) { return caller.admin || caller.occupant == occ; };
  json data;
  switch (e.kind) {
    case EventKind::SessionCreated:
      data = {{"session_id", p.at("session_id")},
              {"occupancy", p.at("config").at("occupancy")}};
      break;
    case EventKind::RoundOpened:
      data = {{"round", p.at("round")},
              {"T0", p.at("T0")},
              {"phase", p.at("phase")},
              {"opened_at", p.at("opened_at")},
              {"deadline", p.at("deadline")}};
      break;
    case EventKind::ReportSubmitted:
    case EventKind::ReportDefaulted: {
      const auto occ = p.at("occupant").get<std::string>();
      data = {{"round", p.at("round")}, {"occupant", occ}};
      if (mine(occ)) data["type"] = p.at("type");
      break;
    }
    case EventKind::RoundDecided: {
      data = {{"round", p.at("round")},
              {"outcome", p.at("outcome")},
              {"setpoint", p.at("setpoint")},
              {"phase_after", p.at("phase_after")}};
      if (!p.at("payments").is_null()) {
        const auto& occupancy = state.config().occupancy;
        json all = json::object();
        for (std::size_t i = 0; i < occupancy.size(); ++i) {
          const auto t = amount(money::parse(p.at("payments").at(i).get<std::string>()));
          if (caller.occupant == occupancy[i]) data["payment"] = t;
          all[occupancy[i]] = t;
        }
        if (caller.admin) data["payments"] = all;
      }
      break;
    }
    case EventKind::LedgerPosted: {
      const auto occ = p.at("occupant").get<std::string>();
      if (!mine(occ)) return std::nullopt;
      data = {{"round", p.at("round")},
              {"occupant", occ},
              {"amount", amount(money::parse(p.at("amount").get<std::string>()))},
              {"balance", amount(money::parse(p.at("balance").get<std::string>()))},
              {"reason", p.at("reason")}};
      break;
    }
  }
  return json{{"seq", e.seq}, {"kind", to_string(e.kind)}, {"at", e.at_ms}, {"data", data}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const HttpError& e) {
  json body = {{"code", e.code}, {"message", e.message}};
  if (!e.field.empty()) body["field"] = e.field;
  send_json(res, e.status, body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw HttpError{400, "bad_request", std::string("body is not valid JSON: ") + e.what(), ""};
  }
}

std::int64_t int_param(const httplib::Request& req, const char* key, std::int64_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw HttpError{400, "bad_request", std::string("'") + key + "' must be a nonnegative integer", key};
  }
}

}  // namespace

struct Server::Impl {
  ServerOptions options;
  SystemClock system_clock;
  const Clock* clock;
  httplib::Server http;
  mutable std::shared_mutex sessions_mutex;
  std::map<std::string, std::unique_ptr<Entry>> sessions;
  std::atomic<bool> stopping{false};
  std::thread ticker;
  std::mutex ticker_mutex;
  std::condition_variable ticker_cv;

  explicit Impl(ServerOptions opts)
      : options(std::move(opts)), clock(options.clock ? options.clock : &system_clock) {
    if (!options.data_dir.empty()) {
      fs::create_directories(options.data_dir);
      reload();
    }
    routes();
  }

  ~Impl() { stop(); }

  void reload() {
    std::vector<fs::path> logs;
    for (const auto& f : fs::directory_iterator(options.data_dir)) {
      if (f.path().extension() == ".jsonl") logs.push_back(f.path());
    }
    std::sort(logs.begin(), logs.end());
    for (const auto& path : logs) {
      const auto events = read_event_log(path);
      if (events.empty()) continue;
      auto entry = std::make_unique<Entry>();
      entry->log = std::make_unique<EventLog>(path);
      entry->session = std::make_unique<Session>(Session::replay(events, *clock, entry->log.get()));
      entry->load_access();
      sessions[entry->session->state().id()] = std::move(entry);
    }
  }

  void stop() {
    stopping = true;
    {
      std::lock_guard lock(ticker_mutex);
      ticker_cv.notify_all();
    }
    {
      std::shared_lock lock(sessions_mutex);
      for (auto& [id, e] : sessions) e->changed.notify_all();
    }
    if (http.is_running()) http.stop();
    if (ticker.joinable()) ticker.join();
  }

  void start_ticker() {
    if (options.tick_ms <= 0 || ticker.joinable()) return;
    ticker = std::thread([this] {
      std::unique_lock lock(ticker_mutex);
      while (!stopping) {
        ticker_cv.wait_for(lock, std::chrono::milliseconds(options.tick_ms));
        if (stopping) break;
        std::shared_lock all(sessions_mutex);
        for (auto& [id, e] : sessions) {
          std::unique_lock w(e->mutex);
          try {
            if (e->session->close_if_due()) e->session->open_round();
          } catch (const std::exception& ex) {
            std::cerr << "session " << id << ": " << ex.what() << '\n';
          }
          e->changed.notify_all();
        }
      }
    });
  }

  Entry& find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError{404, "not_found", "no session '" + id + "'", ""};
    return *it->second;
  }

  // Wraps a handler with exception-to-response mapping.
  template <class F>
  httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_error(res, e);
      } catch (const ConfigError& e) {
        send_error(res, {400, "invalid_config", e.what(), e.field()});
      } catch (const LateReport& e) {
        send_error(res, {409, "round_closed", e.what(), ""});
      } catch (const RoundStateError& e) {
        send_error(res, {409, "round_state", e.what(), ""});
      } catch (const MembershipError& e) {
        send_error(res, {403, "not_a_member", e.what(), ""});
      } catch (const std::exception& e) {
        send_error(res, {500, "internal", e.what(), ""});
      }
    };
  }

  void routes() {
    http.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"version", "0.3.0"}});
    }));

    http.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      create(req, res);
    }));

    http.Get("/sessions/:id/round", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      std::shared_lock lock(e.mutex);
      send_json(res, 200, round_view(e.session->state(), e.identify(bearer(req))));
    }));

    http.Post("/sessions/:id/reports", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      const json body = parse_body(req);
      int type_id = 0;
      try {
        type_id = body.at("type").get<int>();
      } catch (const json::exception&) {
        throw HttpError{400, "bad_request", "'type' must be an integer 1..9", "type"};
      }
      if (type_id < 1 || type_id > kTypeCount) {
        throw HttpError{400, "bad_request", "'type' must be an integer 1..9", "type"};
      }
      std::unique_lock lock(e.mutex);
      const Caller caller = e.identify(bearer(req));
      if (!caller.occupant) throw HttpError{401, "unauthorized", "occupant token required", ""};
      const auto& rep = e.session->submit_report(*caller.occupant, ComfortType::from_id(type_id));
      const Round* r = e.session->state().current_round();
      e.changed.notify_all();
      send_json(res, 200,
                {{"round", r->index},
                 {"occupant", *caller.occupant},
                 {"type", rep.type.id()},
                 {"recorded_at", rep.at_ms}});
    }));

    http.Get("/sessions/:id/ledger", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      std::shared_lock lock(e.mutex);
      const Caller caller = e.identify(bearer(req));
      if (!caller.occupant) throw HttpError{401, "unauthorized", "occupant token required", ""};
      json entries = json::array();
      for (const auto& l : e.session->state().ledger()) {
        if (l.occupant != *caller.occupant) continue;
        entries.push_back({{"round", l.round},
                           {"amount", amount(l.amount)},
                           {"payment", amount(-l.amount)},
                           {"reason", to_string(l.reason)},
                           {"balance", amount(l.balance)}});
      }
      send_json(res, 200,
                {{"occupant", *caller.occupant},
                 {"entries", entries},
                 {"balance", amount(e.session->ledger_balance(*caller.occupant))}});
    }));

    http.Get("/sessions/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      const auto after = static_cast<std::uint64_t>(int_param(req, "after", 0));
      const auto wait = std::min(int_param(req, "wait_ms", 0), options.max_wait_ms);
      std::shared_lock lock(e.mutex);
      const Caller caller = e.identify(bearer(req));
      if (wait > 0) {
        e.changed.wait_for(lock, std::chrono::milliseconds(wait), [&] {
          return stopping || e.session->state().last_seq() > after;
        });
      }
      send_json(res, 200, events_after(e, caller, after));
    }));

    http.Get("/sessions/:id/events/stream", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry* e = &find(req.path_params.at("id"));
      auto cursor = std::make_shared<std::uint64_t>(
          static_cast<std::uint64_t>(int_param(req, "after", 0)));
      if (req.has_header("Last-Event-ID")) {
        try {
          *cursor = std::stoull(req.get_header_value("Last-Event-ID"));
        } catch (const std::exception&) {
        }
      }
      Caller caller;
      {
        std::shared_lock lock(e->mutex);
        caller = e->identify(bearer(req));
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, e, cursor, caller](std::size_t, httplib::DataSink& sink) {
            std::string chunk;
            {
              std::shared_lock lock(e->mutex);
              e->changed.wait_for(lock, std::chrono::seconds(15), [&] {
                return stopping || e->session->state().last_seq() > *cursor;
              });
              if (stopping) {
                sink.done();
                return false;
              }
              const auto batch = events_after(*e, caller, *cursor);
              for (const auto& ev : batch.at("events")) {
                chunk += "id: " + std::to_string(ev.at("seq").get<std::uint64_t>()) + "\n";
                chunk += "event: " + ev.at("kind").get<std::string>() + "\n";
                chunk += "data: " + ev.dump() + "\n\n";
              }
              *cursor = batch.at("last_seq").get<std::uint64_t>();
            }
            if (chunk.empty()) chunk = ": keep-alive\n\n";
            return sink.write(chunk.data(), chunk.size());
          });
    }));

    http.Post("/sessions/:id/admin/open-round", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      std::unique_lock lock(e.mutex);
      const Caller caller = require_admin(e, req);
      e.session->open_round();
      e.changed.notify_all();
      send_json(res, 200, round_view(e.session->state(), caller));
    }));

    http.Post("/sessions/:id/admin/close-round", guarded([this](const httplib::Request& req, httplib::Response& res) {
      Entry& e = find(req.path_params.at("id"));
      const json body = parse_body(req);
      const bool open_next = body.value("open_next", true);
      std::unique_lock lock(e.mutex);
      const Caller caller = require_admin(e, req);
      const std::size_t closed = e.session->close_round().index;
      json decided = round_view(e.session->state(), caller);
      if (open_next) e.session->open_round();
      e.changed.notify_all();
      send_json(res, 200,
                {{"closed", closed},
                 {"decided", decided.at("round")},
                 {"current", round_view(e.session->state(), caller)}});
    }));
  }

  static Caller require_admin(const Entry& e, const httplib::Request& req) {
    Caller c = e.identify(bearer(req));
    if (!c.admin) throw HttpError{401, "unauthorized", "admin token required", ""};
    return c;
  }

  static json events_after(const Entry& e, const Caller& caller, std::uint64_t after) {
    const auto& state = e.session->state();
    json list = json::array();
    for (const auto& ev : e.session->events()) {
      if (ev.seq <= after) continue;
      if (auto v = project(ev, state, caller)) list.push_back(std::move(*v));
    }
    return {{"events", list}, {"last_seq", state.last_seq()}};
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const json config_doc = body.contains("config") ? body.at("config") : body;
    SessionConfig config = SessionConfig::from_json(config_doc);
    const bool open_first = body.value("open_first_round", true);

    const std::string id = random_token(16);
    const std::string admin = random_token(16);
    json tokens = json::object();
    json access = {{"admin", hash_token(admin)}, {"occupants", json::object()}};
    for (const auto& occ : config.occupancy) {
      const auto t = random_token(16);
      tokens[occ] = t;
      access["occupants"][occ] = hash_token(t);
    }

    auto entry = std::make_unique<Entry>();
    if (!options.data_dir.empty()) {
      entry->log = std::make_unique<EventLog>(options.data_dir / (id + ".jsonl"));
    }
    entry->session = std::make_unique<Session>(
        Session::create(id, std::move(config), *clock, entry->log.get(), std::move(access)));
    if (open_first) entry->session->open_round();
    entry->load_access();
    const json view = round_view(entry->session->state(), Caller{std::nullopt, true});
    {
      std::unique_lock lock(sessions_mutex);
      sessions[id] = std::move(entry);
    }
    send_json(res, 201,
              {{"session_id", id},
               {"admin_token", admin},
               {"occupant_tokens", tokens},
               {"round", view.at("round")}});
  }
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Server::~Server() = default;

bool Server::listen(const std::string& host, int port) {
  if (port < 0 || port > 65535) return false;
  impl_->start_ticker();
  return impl_->http.listen(host, port);
}

int Server::bind_any(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool Server::listen_after_bind() {
  impl_->start_ticker();
  return impl_->http.listen_after_bind();
}

void Server::stop() { impl_->stop(); }

bool Server::running() const { return impl_->http.is_running(); }

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

std::size_t Server::session_count() const {
  std::shared_lock lock(impl_->sessions_mutex);
  return impl_->sessions.size();
}

}  // namespace acpolicy::api
