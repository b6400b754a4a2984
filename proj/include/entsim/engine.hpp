#pragma once

#include <any>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

// Deterministic single-threaded discrete-event core. One Simulator instance
// per trial; trials parallelize across independent instances.
namespace entsim::engine {

/// Simulated time in integer nanoseconds. Integer time keeps tie-breaking
/// and therefore whole-run reproducibility exact.
using SimTime = std::int64_t;

using EventKind = std::uint32_t;
using EntityId = std::uint32_t;
using EventSeq = std::uint64_t;

/// Discriminated event label: a kind plus a caller-defined subject
/// (entity, slot, request id...). Wait conditions match on whole tags.
struct EventTag {
  EventKind kind = 0;
  std::uint64_t subject = 0;

  friend bool operator==(const EventTag&, const EventTag&) = default;
};

struct Event {
  SimTime fire_at = 0;
  EventSeq seq = 0;  // scheduling order; (fire_at, seq) is a strict total order
  EventTag tag;
  EntityId source = 0;
  std::any payload;
  std::string detail;  // trace text, empty unless tracing
};

using EventHandler = std::function<void(const Event&)>;

/// AND/OR expression tree over event tags. A leaf is satisfied by one
/// matching event; duplicated tags need as many occurrences. Evaluation is
/// pure over the multiset of arrived events.
class WaitCondition {
 public:
  static WaitCondition single(EventTag tag);
  static WaitCondition all_of(WaitCondition a, WaitCondition b);
  static WaitCondition any_of(WaitCondition a, WaitCondition b);

  struct Node {
    enum class Op { Leaf, And, Or } op = Op::Leaf;
    EventTag tag;
    std::shared_ptr<const Node> left, right;
  };

  const std::shared_ptr<const Node>& root() const { return root_; }

 private:
  explicit WaitCondition(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
  std::shared_ptr<const Node> root_;
};

struct RunStats {
  std::uint64_t events_scheduled = 0;
  std::uint64_t events_processed = 0;
  std::uint64_t events_cancelled = 0;
  std::uint64_t events_pending = 0;
  SimTime final_clock = 0;
};

struct EventHandle {
  EventSeq seq = 0;
};

/// Deterministic substream of uniform and normal variates. The normal uses
/// an explicit Box-Muller transform so draws do not depend on the standard
/// library's distribution internals.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64();
  double uniform01();  // [0, 1)
  double normal(double mean, double stddev);
  std::uint32_t bits(int count);

 private:
  std::uint64_t state_;
};

/// Derives named per-entity substreams from one master seed, so adding an
/// entity never perturbs another entity's draws.
class RngPool {
 public:
  explicit RngPool(std::uint64_t master_seed) : master_(master_seed) {}

  std::uint64_t master_seed() const { return master_; }
  std::uint64_t derive_seed(std::string_view entity_name) const;
  RngStream stream(std::string_view entity_name) const;

 private:
  std::uint64_t master_;
};

using KindNamer = std::function<std::string(EventKind)>;

class Simulator {
 public:
  Simulator() = default;
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  SimTime now() const { return now_; }

  EntityId register_entity(std::string name);
  const std::string& entity_name(EntityId id) const;

  /// Enqueues an event; fire_at must not precede the current clock.
  EventHandle schedule(SimTime fire_at, EventTag tag, EntityId source, std::any payload,
                       EventHandler handler);
  EventHandle schedule(SimTime fire_at, EventTag tag, EntityId source, std::any payload,
                       EventHandler handler, std::string detail);
  void cancel(EventHandle handle);

  /// One-shot wait over future events; the continuation receives the leaf
  /// events in tree order (AND gathers every constituent payload).
  void await(WaitCondition condition, std::function<void(const std::vector<Event>&)> continuation);

  /// Persistent subscription to every future event with the given tag.
  std::uint64_t subscribe(EventTag tag, EventHandler handler);
  void unsubscribe(std::uint64_t subscription_id);

  /// Processes events with fire_at <= t_end in (fire_at, seq) order.
  /// Handler exceptions abort the run with the offending event identified.
  RunStats run_until(SimTime t_end);

  /// Makes run_until return after the current event; pending events stay queued.
  void stop() { stopped_ = true; }
  bool stopped() const { return stopped_; }

  void set_trace(std::ostream* sink, KindNamer namer);
  bool tracing() const { return trace_sink_ != nullptr; }

 private:
  struct Scheduled {
    Event event;
    EventHandler handler;
    bool cancelled = false;
  };
  struct Waiter {
    std::shared_ptr<const WaitCondition::Node> root;
    std::vector<const WaitCondition::Node*> leaves;  // in-order
    std::vector<Event> matched;                      // parallel to leaves; seq 0 = empty
    std::vector<bool> filled;
    std::function<void(const std::vector<Event>&)> continuation;
    bool done = false;
  };
  struct Subscription {
    std::uint64_t id = 0;
    EventTag tag;
    EventHandler handler;
    bool active = true;
  };

  void dispatch(const Event& event);
  static bool tree_satisfied(const WaitCondition::Node* node,
                             const std::vector<const WaitCondition::Node*>& leaves,
                             const std::vector<bool>& filled);

  SimTime now_ = 0;
  SimTime horizon_ = 0;
  EventSeq next_seq_ = 1;
  std::uint64_t next_subscription_ = 1;
  bool stopped_ = false;
  std::vector<Scheduled> heap_;  // min-heap on (fire_at, seq)
  std::vector<Waiter> waiters_;
  std::vector<Subscription> subscriptions_;
  std::vector<std::string> entity_names_;
  RunStats stats_;
  std::ostream* trace_sink_ = nullptr;
  KindNamer kind_namer_;
};

}  // namespace entsim::engine
