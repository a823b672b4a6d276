#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "acpolicy/comfort.hpp"
#include "acpolicy/energy.hpp"
#include "acpolicy/fairness.hpp"
#include "acpolicy/mechanism.hpp"
#include "acpolicy/priors.hpp"

namespace acpolicy {

enum class Phase { PreferenceCollection, FairAllocation };
enum class PaymentRule { Generalized, Standard };
enum class ReportSource { Manual, Defaulted };
enum class RoundState { Open, Decided };
enum class EntryReason { MechanismPayment, Adjustment };

std::string_view to_string(Phase phase) noexcept;
std::string_view to_string(PaymentRule rule) noexcept;
std::string_view to_string(ReportSource source) noexcept;
std::string_view to_string(EntryReason reason) noexcept;

// Ten phase-1 rounds up and back down the range: two reports per
// temperature point.
inline const std::vector<int> kDefaultSweep = {22, 23, 24, 25, 26, 26, 25, 24, 23, 22};

struct SessionConfig {
  int temp_lower = 22;
  int temp_upper = 26;
  int step = 1;
  std::int64_t round_length_ms = 30 * 60 * 1000;
  Phase phase = Phase::PreferenceCollection;
  int base_setpoint = 22;
  int initial_temp = 22;
  double smoothing = kDefaultSmoothing;
  std::vector<OccupantId> occupancy;
  std::vector<int> sweep = kDefaultSweep;  // phase-1 T0 per round
  PaymentRule payment_rule = PaymentRule::Generalized;

  EnergyModelConfig energy;
  WeatherTrace weather = WeatherTrace::constant(30.0);
  std::optional<CostTable> cost_table;  // replaces the model when present
  ValuationTable valuations = ValuationTable::standard();

  // Seed priors, loaded as `initial_prior_weight` pseudo-observations.
  PriorSet initial_priors;
  double initial_prior_weight = 2.0;

  MomentMode moments = MomentMode::exhaustive();
  std::uint64_t psi_samples = 100000;  // only used beyond six occupants
  double refresh_tv = 0.05;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the field.
  void validate() const;

  // File references ("weather": {"csv": ...}, "cost_table": {"csv": ...},
  // "valuations": {"csv": ...}) resolve against `base_dir` and are
  // embedded, so to_json() is self-contained.
  static SessionConfig from_json(const nlohmann::json& doc,
                                 const std::filesystem::path& base_dir = {});
  static SessionConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct RoundReport {
  ComfortType type = ComfortType::from_index(0);
  std::int64_t at_ms = 0;
  ReportSource source = ReportSource::Manual;
};

struct RoundDecision {
  Outcome outcome;
  WelfareBreakdown welfare;
  std::optional<std::vector<double>> payments;  // t_i in occupancy order
  std::optional<MechanismParams> params;
};

struct Round {
  std::size_t index = 0;
  int T0 = 0;
  Phase phase = Phase::PreferenceCollection;
  CostVector costs;
  std::int64_t opened_at_ms = 0;
  std::int64_t deadline_ms = 0;
  std::map<OccupantId, RoundReport> reports;
  std::optional<RoundDecision> decision;

  RoundState state() const noexcept { return decision ? RoundState::Decided : RoundState::Open; }
  std::vector<OutcomeKind> feasible_outcomes() const { return costs.feasible_kinds(); }
};

struct LedgerEntry {
  OccupantId occupant;
  std::size_t round = 0;
  double amount = 0.0;  // negative = debit
  EntryReason reason = EntryReason::MechanismPayment;
  double balance = 0.0;
};

enum class EventKind {
  SessionCreated,
  RoundOpened,
  ReportSubmitted,
  ReportDefaulted,
  RoundDecided,
  LedgerPosted
};
std::string_view to_string(EventKind kind) noexcept;

struct SessionEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::SessionCreated;
  std::int64_t at_ms = 0;
  nlohmann::json payload;

  nlohmann::json to_json() const;
  // One line, no trailing newline.
  std::string to_line() const;
  // Throws ReplayError(seq_hint) on a malformed record.
  static SessionEvent from_json(const nlohmann::json& doc, std::uint64_t seq_hint);
};

struct FairnessRecord {
  FairnessSolution solution;
  JointPrior priors_at_solve;
  std::size_t round = 0;
};

// Everything a session knows, as a fold over its events.
class SessionState {
 public:
  bool created() const noexcept { return created_; }
  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const { return *config_; }
  const nlohmann::json& access() const noexcept { return access_; }
  Phase phase() const noexcept { return phase_; }
  int current_temp() const noexcept { return T0_; }
  std::uint64_t last_seq() const noexcept { return last_seq_; }

  const std::vector<Round>& rounds() const noexcept { return rounds_; }
  const Round* current_round() const {
    return rounds_.empty() ? nullptr : &rounds_.back();
  }
  const std::vector<LedgerEntry>& ledger() const noexcept { return ledger_; }
  const std::map<int, FairnessRecord>& fairness() const noexcept { return fairness_; }

  bool is_member(const OccupantId& occupant) const;
  // Throws MembershipError.
  double balance(const OccupantId& occupant) const;
  const TypeCounts& counts(const OccupantId& occupant, int temperature) const;
  TypeDistribution prior(const OccupantId& occupant, int temperature) const;
  JointPrior joint_prior(int temperature) const;
  // Rounds already decided in phase 1.
  std::size_t sweep_position() const noexcept { return sweep_position_; }

  // Throws ReplayError at the event's sequence number when the event does
  // not extend this state.
  void apply(const SessionEvent& event);

  // Canonical JSON (sorted keys, currency as decimal strings).
  nlohmann::json to_json() const;
  std::string serialize() const { return to_json().dump(); }

 private:
  void apply_created(const nlohmann::json& p);
  void apply_opened(const nlohmann::json& p);
  void apply_report(const nlohmann::json& p, std::int64_t at_ms, ReportSource source);
  void apply_decided(const nlohmann::json& p);
  void apply_ledger(const nlohmann::json& p);

  bool created_ = false;
  std::string id_;
  std::optional<SessionConfig> config_;
  nlohmann::json access_ = nlohmann::json::object();
  Phase phase_ = Phase::PreferenceCollection;
  int T0_ = 0;
  std::size_t sweep_position_ = 0;
  std::vector<Round> rounds_;
  std::vector<LedgerEntry> ledger_;
  std::map<OccupantId, double> balances_;
  std::map<OccupantId, std::map<int, TypeCounts>> counts_;
  std::map<int, FairnessRecord> fairness_;
  std::uint64_t last_seq_ = 0;
};

// Costs of round `round_index` at `T0`, from the cost table when the config
// has one, otherwise from the energy model and weather trace.
CostVector round_costs(const SessionConfig& config, std::size_t round_index, int T0);

// Mode of the smoothed prior; ties go to the lowest type id.
ComfortType default_report(const SessionState& state, const OccupantId& occupant, int temperature);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() const override;
};

// Logical time for simulations and tests. Safe to move from another thread.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start_ms = 0) : now_(start_ms) {}
  ManualClock(const ManualClock& other) : now_(other.now_.load()) {}
  std::int64_t now_ms() const override { return now_.load(); }
  void set(std::int64_t ms) { now_ = ms; }
  void advance(std::int64_t ms) { now_ += ms; }

 private:
  std::atomic<std::int64_t> now_;
};

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void append(const SessionEvent& event) = 0;
};

// Append-only JSONL file, flushed after every event.
class EventLog final : public EventSink {
 public:
  explicit EventLog(const std::filesystem::path& path);
  void append(const SessionEvent& event) override;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Reads a JSONL event log. A final line cut off mid-record (no trailing
// newline) is dropped; any other malformed line raises ReplayError.
std::vector<SessionEvent> read_event_log(const std::filesystem::path& path);

// The policy engine. Every mutation validates, emits one or more events
// and folds them into the state; nothing else changes state. Not
// thread-safe: callers serialize writers.
class Session {
 public:
  static Session create(std::string id, SessionConfig config, const Clock& clock,
                        EventSink* sink = nullptr,
                        nlohmann::json access = nlohmann::json::object());
  // Empty input gives a session that has not been created yet.
  static Session replay(std::span<const SessionEvent> events, const Clock& clock,
                        EventSink* sink = nullptr);

  const SessionState& state() const noexcept { return state_; }
  const std::vector<SessionEvent>& events() const noexcept { return events_; }

  // Throws RoundStateError when a round is still open.
  const Round& open_round();
  // Throws LateReport when the current round is decided, MembershipError
  // for unknown occupants, RoundStateError when no round exists.
  const RoundReport& submit_report(const OccupantId& occupant, ComfortType type);
  // Throws RoundStateError unless a round is open.
  const Round& close_round();
  // Closes an open round whose deadline has passed; returns whether it did.
  bool close_if_due();

  double ledger_balance(const OccupantId& occupant) const { return state_.balance(occupant); }

 private:
  Session(const Clock& clock, EventSink* sink) : clock_(&clock), sink_(sink) {}
  void emit(EventKind kind, nlohmann::json payload);
  void require_created() const;
  nlohmann::json decide(const Round& round, const std::map<OccupantId, ComfortType>& types) const;

  const Clock* clock_;
  EventSink* sink_;
  SessionState state_;
  std::vector<SessionEvent> events_;
};

}  // namespace acpolicy
