#include "acpolicy/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"
#include "acpolicy/serialization.hpp"

namespace acpolicy {

using nlohmann::json;

namespace {

constexpr std::array<EventKind, 6> kKinds = {
    EventKind::SessionCreated, EventKind::RoundOpened,  EventKind::ReportSubmitted,
    EventKind::ReportDefaulted, EventKind::RoundDecided, EventKind::LedgerPosted};

EventKind kind_from(const std::string& s, std::uint64_t seq) {
  for (auto k : kKinds) {
    if (to_string(k) == s) return k;
  }
  throw ReplayError("unknown event kind '" + s + "'", seq);
}

Phase phase_from(const std::string& s) {
  return s == "FairAllocation" ? Phase::FairAllocation : Phase::PreferenceCollection;
}

const TypeCounts kNoCounts{};

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::SessionCreated: return "SessionCreated";
    case EventKind::RoundOpened: return "RoundOpened";
    case EventKind::ReportSubmitted: return "ReportSubmitted";
    case EventKind::ReportDefaulted: return "ReportDefaulted";
    case EventKind::RoundDecided: return "RoundDecided";
    case EventKind::LedgerPosted: return "LedgerPosted";
  }
  return "?";
}

json SessionEvent::to_json() const {
  return {{"seq", seq}, {"kind", to_string(kind)}, {"at", at_ms}, {"payload", payload}};
}

std::string SessionEvent::to_line() const { return to_json().dump(); }

SessionEvent SessionEvent::from_json(const json& doc, std::uint64_t seq_hint) {
  try {
    SessionEvent e;
    e.seq = doc.at("seq").get<std::uint64_t>();
    e.kind = kind_from(doc.at("kind").get<std::string>(), e.seq);
    e.at_ms = doc.at("at").get<std::int64_t>();
    e.payload = doc.at("payload");
    return e;
  } catch (const json::exception& ex) {
    throw ReplayError(std::string("malformed event: ") + ex.what(), seq_hint);
  }
}

// ---------------------------------------------------------------- state

bool SessionState::is_member(const OccupantId& occupant) const {
  if (!config_) return false;
  const auto& occ = config_->occupancy;
  return std::find(occ.begin(), occ.end(), occupant) != occ.end();
}

double SessionState::balance(const OccupantId& occupant) const {
  if (!is_member(occupant)) throw MembershipError("unknown occupant '" + occupant + "'");
  const auto it = balances_.find(occupant);
  return it == balances_.end() ? 0.0 : it->second;
}

const TypeCounts& SessionState::counts(const OccupantId& occupant, int temperature) const {
  const auto it = counts_.find(occupant);
  if (it == counts_.end()) return kNoCounts;
  const auto jt = it->second.find(temperature);
  return jt == it->second.end() ? kNoCounts : jt->second;
}

TypeDistribution SessionState::prior(const OccupantId& occupant, int temperature) const {
  return smoothed(counts(occupant, temperature), config_->smoothing);
}

JointPrior SessionState::joint_prior(int temperature) const {
  JointPrior out;
  for (const auto& occ : config_->occupancy) out.push_back(prior(occ, temperature));
  return out;
}

void SessionState::apply(const SessionEvent& event) {
  if (event.seq != last_seq_ + 1) {
    throw ReplayError("expected sequence " + std::to_string(last_seq_ + 1) + ", found " +
                          std::to_string(event.seq),
                      event.seq);
  }
  if (created_ == (event.kind == EventKind::SessionCreated)) {
    throw ReplayError(created_ ? "session created twice" : "first event must be SessionCreated",
                      event.seq);
  }
  try {
    const auto& p = event.payload;
    switch (event.kind) {
      case EventKind::SessionCreated: apply_created(p); break;
      case EventKind::RoundOpened: apply_opened(p); break;
      case EventKind::ReportSubmitted: apply_report(p, event.at_ms, ReportSource::Manual); break;
      case EventKind::ReportDefaulted: apply_report(p, event.at_ms, ReportSource::Defaulted); break;
      case EventKind::RoundDecided: apply_decided(p); break;
      case EventKind::LedgerPosted: apply_ledger(p); break;
    }
  } catch (const ReplayError&) {
    throw;
  } catch (const json::exception& e) {
    throw ReplayError(std::string("malformed payload: ") + e.what(), event.seq);
  } catch (const std::exception& e) {
    throw ReplayError(e.what(), event.seq);
  }
  last_seq_ = event.seq;
}

void SessionState::apply_created(const json& p) {
  auto config = SessionConfig::from_json(p.at("config"));
  id_ = p.at("session_id").get<std::string>();
  access_ = p.value("access", json::object());
  phase_ = config.phase;
  T0_ = config.initial_temp;
  for (const auto& [occ, by_temp] : config.initial_priors.entries()) {
    for (const auto& [t, dist] : by_temp) {
      auto& c = counts_[occ][t];
      for (int k = 0; k < kTypeCount; ++k) c[k] = config.initial_prior_weight * dist[k];
    }
  }
  config_ = std::move(config);
  created_ = true;
}

void SessionState::apply_opened(const json& p) {
  if (!rounds_.empty() && !rounds_.back().decision) throw Error("previous round still open");
  const auto index = p.at("round").get<std::size_t>();
  if (index != rounds_.size()) throw Error("round index out of order");
  const int T0 = p.at("T0").get<int>();
  if (T0 != T0_) throw Error("round opened away from the current temperature");
  rounds_.push_back(Round{index, T0, phase_from(p.at("phase").get<std::string>()),
                          serial::costs_from_json(p.at("costs")),
                          p.at("opened_at").get<std::int64_t>(),
                          p.at("deadline").get<std::int64_t>(),
                          {},
                          std::nullopt});
}

void SessionState::apply_report(const json& p, std::int64_t at_ms, ReportSource source) {
  if (rounds_.empty() || rounds_.back().decision) throw Error("no open round");
  auto& round = rounds_.back();
  if (p.at("round").get<std::size_t>() != round.index) throw Error("report for another round");
  const auto occ = p.at("occupant").get<std::string>();
  if (!is_member(occ)) throw Error("report from unknown occupant '" + occ + "'");
  round.reports[occ] = RoundReport{ComfortType::from_id(p.at("type").get<int>()), at_ms, source};
}

void SessionState::apply_decided(const json& p) {
  if (rounds_.empty() || rounds_.back().decision) throw Error("no open round");
  auto& round = rounds_.back();
  if (p.at("round").get<std::size_t>() != round.index) throw Error("decision for another round");
  for (const auto& occ : config_->occupancy) {
    if (!round.reports.count(occ)) throw Error("decision before every report is in");
  }
  const Outcome outcome{outcome_kind_from_string(p.at("outcome").get<std::string>()),
                        p.at("setpoint").get<int>()};
  if (outcome.setpoint != round.T0 + setpoint_delta(outcome.kind) ||
      outcome.setpoint < config_->temp_lower || outcome.setpoint > config_->temp_upper) {
    throw Error("decided set-point outside the feasible range");
  }
  RoundDecision decision{outcome, serial::welfare_from_json(p.at("welfare")), std::nullopt,
                         std::nullopt};
  if (!p.at("payments").is_null()) {
    decision.payments = serial::amounts_from_json(p.at("payments"));
    if (decision.payments->size() != config_->occupancy.size()) {
      throw Error("payment vector size differs from occupancy");
    }
  }
  if (!p.at("params").is_null()) decision.params = serial::params_from_json(p.at("params"));

  if (p.contains("fairness") && !p.at("fairness").is_null()) {
    const auto& f = p.at("fairness");
    const int t = f.at("temperature").get<int>();
    fairness_.insert_or_assign(
        t, FairnessRecord{FairnessSolution::from_json(f.at("solution")), joint_prior(t),
                          round.index});
  }
  for (const auto& [occ, report] : round.reports) {
    if (report.source == ReportSource::Manual) {
      prior_update(counts_[occ][round.T0], report.type, config_->smoothing);
    }
  }
  round.decision = std::move(decision);
  if (round.phase == Phase::PreferenceCollection) ++sweep_position_;
  const Phase after = phase_from(p.at("phase_after").get<std::string>());
  if (after != phase_) {
    phase_ = after;
    fairness_.clear();
  }
  T0_ = outcome.setpoint;
}

void SessionState::apply_ledger(const json& p) {
  const auto round = p.at("round").get<std::size_t>();
  if (round >= rounds_.size() || !rounds_[round].decision) {
    throw Error("ledger entry for an undecided round");
  }
  const auto occ = p.at("occupant").get<std::string>();
  if (!is_member(occ)) throw Error("ledger entry for unknown occupant '" + occ + "'");
  const double amount = money::parse(p.at("amount").get<std::string>());
  const double balance = balances_[occ] + amount;
  if (money::exact(balance) != p.at("balance").get<std::string>()) {
    throw Error("ledger balance does not match the running sum");
  }
  const auto reason = p.at("reason").get<std::string>() == "Adjustment"
                          ? EntryReason::Adjustment
                          : EntryReason::MechanismPayment;
  balances_[occ] = balance;
  ledger_.push_back(LedgerEntry{occ, round, amount, reason, balance});
}

json SessionState::to_json() const {
  json rounds = json::array();
  for (const auto& r : rounds_) {
    json reports = json::object();
    for (const auto& [occ, rep] : r.reports) {
      reports[occ] = {{"type", rep.type.id()}, {"at", rep.at_ms}, {"source", to_string(rep.source)}};
    }
    json decision = nullptr;
    if (r.decision) {
      const auto& d = *r.decision;
      decision = {{"outcome", to_string(d.outcome.kind)},
                  {"setpoint", d.outcome.setpoint},
                  {"welfare", serial::welfare_to_json(d.welfare)},
                  {"payments", d.payments ? serial::amounts_to_json(*d.payments) : json(nullptr)},
                  {"params", d.params ? serial::params_to_json(*d.params) : json(nullptr)}};
    }
    rounds.push_back({{"index", r.index},
                      {"T0", r.T0},
                      {"phase", to_string(r.phase)},
                      {"costs", serial::costs_to_json(r.costs)},
                      {"opened_at", r.opened_at_ms},
                      {"deadline", r.deadline_ms},
                      {"reports", std::move(reports)},
                      {"decision", std::move(decision)}});
  }
  json ledger = json::array();
  for (const auto& e : ledger_) {
    ledger.push_back({{"occupant", e.occupant},
                      {"round", e.round},
                      {"amount", money::exact(e.amount)},
                      {"reason", to_string(e.reason)},
                      {"balance", money::exact(e.balance)}});
  }
  json balances = json::object();
  for (const auto& [occ, b] : balances_) balances[occ] = money::exact(b);
  json counts = json::object();
  for (const auto& [occ, by_temp] : counts_) {
    for (const auto& [t, c] : by_temp) counts[occ][std::to_string(t)] = c;
  }
  json fairness = json::object();
  for (const auto& [t, rec] : fairness_) {
    fairness[std::to_string(t)] = {{"solution", rec.solution.to_json()},
                                   {"priors_at_solve", rec.priors_at_solve},
                                   {"round", rec.round}};
  }
  return {{"created", created_},
          {"id", id_},
          {"config", config_ ? config_->to_json() : json(nullptr)},
          {"access", access_},
          {"phase", to_string(phase_)},
          {"T0", T0_},
          {"sweep_position", sweep_position_},
          {"last_seq", last_seq_},
          {"rounds", std::move(rounds)},
          {"ledger", std::move(ledger)},
          {"balances", std::move(balances)},
          {"counts", std::move(counts)},
          {"fairness", std::move(fairness)}};
}

ComfortType default_report(const SessionState& state, const OccupantId& occupant,
                           int temperature) {
  return distribution_mode(state.prior(occupant, temperature));
}

// ---------------------------------------------------------------- clocks and logs

std::int64_t SystemClock::now_ms() const {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

EventLog::EventLog(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::out | std::ios::app) {
  if (!out_) throw Error("cannot open event log " + path.string());
}

void EventLog::append(const SessionEvent& event) {
  out_ << event.to_line() << '\n';
  out_.flush();
  if (!out_) throw Error("cannot write event log " + path_.string());
}

std::vector<SessionEvent> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open event log " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<SessionEvent> events;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : text.size();
    if (line.empty()) continue;
    const std::uint64_t expected = events.empty() ? 1 : events.back().seq + 1;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      if (!complete) break;  // torn final write
      throw ReplayError("corrupt event record", expected);
    }
    events.push_back(SessionEvent::from_json(doc, expected));
  }
  return events;
}

// ---------------------------------------------------------------- engine

Session Session::create(std::string id, SessionConfig config, const Clock& clock, EventSink* sink,
                        json access) {
  config.energy.base_setpoint = config.base_setpoint;
  config.validate();
  Session s(clock, sink);
  s.emit(EventKind::SessionCreated,
         {{"session_id", std::move(id)}, {"config", config.to_json()}, {"access", std::move(access)}});
  return s;
}

Session Session::replay(std::span<const SessionEvent> events, const Clock& clock,
                        EventSink* sink) {
  Session s(clock, sink);
  for (const auto& e : events) {
    s.state_.apply(e);
    s.events_.push_back(e);
  }
  return s;
}

void Session::emit(EventKind kind, json payload) {
  SessionEvent e{state_.last_seq() + 1, kind, clock_->now_ms(), std::move(payload)};
  state_.apply(e);
  events_.push_back(e);
  if (sink_) sink_->append(e);
}

void Session::require_created() const {
  if (!state_.created()) throw RoundStateError("session has not been created");
}

CostVector round_costs(const SessionConfig& c, std::size_t index, int T0) {
  const auto feasible = feasible_outcomes(T0, c.temp_lower, c.temp_upper);
  if (c.cost_table) return c.cost_table->costs_for(index, T0, feasible, c.base_setpoint);
  EnergyModelConfig energy = c.energy;
  energy.base_setpoint = c.base_setpoint;
  return outcome_costs(T0, feasible, c.weather.for_round(index), energy);
}

const Round& Session::open_round() {
  require_created();
  const Round* current = state_.current_round();
  if (current && !current->decision) throw RoundStateError("previous round still open");
  const std::size_t index = state_.rounds().size();
  const int T0 = state_.current_temp();
  const CostVector costs = round_costs(state_.config(), index, T0);
  const auto now = clock_->now_ms();
  emit(EventKind::RoundOpened, {{"round", index},
                                {"T0", T0},
                                {"phase", to_string(state_.phase())},
                                {"costs", serial::costs_to_json(costs)},
                                {"opened_at", now},
                                {"deadline", now + state_.config().round_length_ms}});
  return state_.rounds().back();
}

const RoundReport& Session::submit_report(const OccupantId& occupant, ComfortType type) {
  require_created();
  if (!state_.is_member(occupant)) throw MembershipError("unknown occupant '" + occupant + "'");
  const Round* current = state_.current_round();
  if (!current) throw RoundStateError("no round has been opened");
  if (current->decision) {
    throw LateReport("round " + std::to_string(current->index) + " is already decided");
  }
  const auto it = current->reports.find(occupant);
  if (it != current->reports.end() && it->second.source == ReportSource::Manual &&
      it->second.type == type) {
    return it->second;
  }
  emit(EventKind::ReportSubmitted,
       {{"round", current->index}, {"occupant", occupant}, {"type", type.id()}});
  return state_.rounds().back().reports.at(occupant);
}

json Session::decide(const Round& round, const std::map<OccupantId, ComfortType>& types) const {
  const auto& cfg = state_.config();
  const std::size_t n = cfg.occupancy.size();
  std::vector<TypeReport> reports;
  for (const auto& occ : cfg.occupancy) reports.push_back({occ, types.at(occ)});
  const TypeProfile profile(reports);

  json payload = {{"round", round.index},
                  {"payments", nullptr},
                  {"params", nullptr},
                  {"fairness", nullptr}};
  Outcome outcome{OutcomeKind::Stay, round.T0};
  Phase after = round.phase;

  if (round.phase == Phase::PreferenceCollection) {
    const std::size_t pos = state_.sweep_position();
    const bool last = pos + 1 >= cfg.sweep.size();
    const int next = last ? cfg.sweep.back() : cfg.sweep[pos + 1];
    outcome = Outcome::at(static_cast<OutcomeKind>(next - round.T0 + 1), round.T0);
    if (last) after = Phase::FairAllocation;
  } else {
    outcome = select_outcome(profile, round.costs, cfg.valuations);
    const JointPrior joint = state_.joint_prior(round.T0);
    const SamplingPlan plan{cfg.psi_samples, cfg.seed + round.index};
    std::optional<MechanismParams> params;
    PaymentVector payments;
    if (cfg.payment_rule == PaymentRule::Standard && n >= 2) {
      params = MechanismParams::standard(n);
      payments = agv_payment_standard(profile, joint, round.costs, cfg.valuations, plan);
    } else {
      if (n == 1) {
        params = MechanismParams::standard(1);
      } else {
        const auto& records = state_.fairness();
        const auto it = records.find(round.T0);
        bool refresh = it == records.end();
        for (std::size_t i = 0; !refresh && i < n; ++i) {
          refresh = total_variation(joint[i], it->second.priors_at_solve[i]) > cfg.refresh_tv;
        }
        if (refresh) {
          const auto cache =
              build_moment_cache(joint, round.costs, cfg.valuations, cfg.moments, plan);
          const auto solution = optimize_fairness(cache);
          payload["fairness"] = {{"temperature", round.T0}, {"solution", solution.to_json()}};
          params = solution.params;
        } else {
          params = it->second.solution.params;
        }
      }
      payments =
          agv_payment_generalized(profile, joint, round.costs, cfg.valuations, *params, plan);
    }
    payload["params"] = serial::params_to_json(*params);
    payload["payments"] = serial::amounts_to_json(payments.amounts);
  }
  payload["outcome"] = to_string(outcome.kind);
  payload["setpoint"] = outcome.setpoint;
  payload["welfare"] =
      serial::welfare_to_json(welfare(profile, outcome, round.costs, cfg.valuations));
  payload["phase_after"] = to_string(after);
  return payload;
}

const Round& Session::close_round() {
  require_created();
  const Round* current = state_.current_round();
  if (!current || current->decision) throw RoundStateError("no open round to close");
  const auto& cfg = state_.config();

  std::map<OccupantId, ComfortType> types;
  std::vector<std::pair<OccupantId, ComfortType>> defaults;
  for (const auto& occ : cfg.occupancy) {
    const auto it = current->reports.find(occ);
    if (it != current->reports.end()) {
      types.emplace(occ, it->second.type);
    } else {
      const ComfortType t = default_report(state_, occ, current->T0);
      types.emplace(occ, t);
      defaults.emplace_back(occ, t);
    }
  }
  // Everything that can fail runs before the first event is emitted.
  json decided = decide(*current, types);
  const std::size_t index = current->index;

  for (const auto& [occ, t] : defaults) {
    emit(EventKind::ReportDefaulted, {{"round", index}, {"occupant", occ}, {"type", t.id()}});
  }
  emit(EventKind::RoundDecided, std::move(decided));
  const Round& round = state_.rounds()[index];
  if (round.decision->payments) {
    const auto& t = *round.decision->payments;
    for (std::size_t i = 0; i < cfg.occupancy.size(); ++i) {
      const auto& occ = cfg.occupancy[i];
      const double amount = -t[i];
      emit(EventKind::LedgerPosted,
           {{"round", index},
            {"occupant", occ},
            {"amount", money::exact(amount)},
            {"reason", to_string(EntryReason::MechanismPayment)},
            {"balance", money::exact(state_.balance(occ) + amount)}});
    }
  }
  return state_.rounds()[index];
}

bool Session::close_if_due() {
  const Round* current = state_.current_round();
  if (!current || current->decision || clock_->now_ms() < current->deadline_ms) return false;
  close_round();
  return true;
}

}  // namespace acpolicy
