#include "entsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace entsim::engine {

namespace {

// splitmix64; also used to whiten derived seeds.
std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

}  // namespace

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal(double mean, double stddev) {
  // Box-Muller, cosine branch only; u1 kept strictly positive for the log.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t RngStream::bits(int count) {
  if (count < 1 || count > 32) throw std::invalid_argument("rng: bits count out of range");
  return static_cast<std::uint32_t>(next_u64() >> (64 - count));
}

std::uint64_t RngPool::derive_seed(std::string_view entity_name) const {
  std::uint64_t state = master_ ^ fnv1a64(entity_name);
  splitmix64(state);
  return splitmix64(state);
}

RngStream RngPool::stream(std::string_view entity_name) const {
  return RngStream(derive_seed(entity_name));
}

WaitCondition WaitCondition::single(EventTag tag) {
  auto node = std::make_shared<Node>();
  node->op = Node::Op::Leaf;
  node->tag = tag;
  return WaitCondition(std::move(node));
}

WaitCondition WaitCondition::all_of(WaitCondition a, WaitCondition b) {
  auto node = std::make_shared<Node>();
  node->op = Node::Op::And;
  node->left = a.root_;
  node->right = b.root_;
  return WaitCondition(std::move(node));
}

WaitCondition WaitCondition::any_of(WaitCondition a, WaitCondition b) {
  auto node = std::make_shared<Node>();
  node->op = Node::Op::Or;
  node->left = a.root_;
  node->right = b.root_;
  return WaitCondition(std::move(node));
}

EntityId Simulator::register_entity(std::string name) {
  entity_names_.push_back(std::move(name));
  return static_cast<EntityId>(entity_names_.size() - 1);
}

const std::string& Simulator::entity_name(EntityId id) const {
  static const std::string unknown = "?";
  return id < entity_names_.size() ? entity_names_[id] : unknown;
}

EventHandle Simulator::schedule(SimTime fire_at, EventTag tag, EntityId source,
                                std::any payload, EventHandler handler) {
  return schedule(fire_at, tag, source, std::move(payload), std::move(handler), {});
}

EventHandle Simulator::schedule(SimTime fire_at, EventTag tag, EntityId source,
                                std::any payload, EventHandler handler, std::string detail) {
  if (fire_at < now_) {
    throw std::logic_error("engine: cannot schedule an event in the past");
  }
  const EventSeq seq = next_seq_++;
  Scheduled item;
  item.event = Event{fire_at, seq, tag, source, std::move(payload), std::move(detail)};
  item.handler = std::move(handler);
  heap_.push_back(std::move(item));
  std::push_heap(heap_.begin(), heap_.end(), [](const Scheduled& a, const Scheduled& b) {
    return std::tie(a.event.fire_at, a.event.seq) > std::tie(b.event.fire_at, b.event.seq);
  });
  ++stats_.events_scheduled;
  return EventHandle{seq};
}

void Simulator::cancel(EventHandle handle) {
  for (auto& item : heap_) {
    if (item.event.seq == handle.seq && !item.cancelled) {
      item.cancelled = true;
      ++stats_.events_cancelled;
      return;
    }
  }
}

void Simulator::await(WaitCondition condition,
                      std::function<void(const std::vector<Event>&)> continuation) {
  Waiter waiter;
  waiter.root = condition.root();
  // In-order leaf collection fixes the deterministic assignment order.
  std::function<void(const WaitCondition::Node*)> collect = [&](const WaitCondition::Node* node) {
    if (!node) return;
    if (node->op == WaitCondition::Node::Op::Leaf) {
      waiter.leaves.push_back(node);
      return;
    }
    collect(node->left.get());
    collect(node->right.get());
  };
  collect(waiter.root.get());
  waiter.matched.resize(waiter.leaves.size());
  waiter.filled.assign(waiter.leaves.size(), false);
  waiter.continuation = std::move(continuation);
  waiters_.push_back(std::move(waiter));
}

std::uint64_t Simulator::subscribe(EventTag tag, EventHandler handler) {
  subscriptions_.push_back({next_subscription_, tag, std::move(handler), true});
  return next_subscription_++;
}

void Simulator::unsubscribe(std::uint64_t subscription_id) {
  for (auto& sub : subscriptions_) {
    if (sub.id == subscription_id) sub.active = false;
  }
}

bool Simulator::tree_satisfied(const WaitCondition::Node* node,
                               const std::vector<const WaitCondition::Node*>& leaves,
                               const std::vector<bool>& filled) {
  if (!node) return false;
  switch (node->op) {
    case WaitCondition::Node::Op::Leaf: {
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i] == node) return filled[i];
      }
      return false;
    }
    case WaitCondition::Node::Op::And:
      return tree_satisfied(node->left.get(), leaves, filled) &&
             tree_satisfied(node->right.get(), leaves, filled);
    case WaitCondition::Node::Op::Or:
      return tree_satisfied(node->left.get(), leaves, filled) ||
             tree_satisfied(node->right.get(), leaves, filled);
  }
  return false;
}

void Simulator::dispatch(const Event& event) {
  if (trace_sink_) {
    const std::string kind_name =
        kind_namer_ ? kind_namer_(event.tag.kind) : std::to_string(event.tag.kind);
    (*trace_sink_) << event.fire_at << ',' << event.seq << ',' << kind_name << ','
                   << entity_name(event.source) << ',' << event.detail << '\n';
  }

  // Subscriptions fire in registration order; new ones registered by a
  // handler only see later events. Handlers are copied out before the call:
  // a handler may register more and grow the container under us.
  const std::size_t sub_count = subscriptions_.size();
  for (std::size_t i = 0; i < sub_count; ++i) {
    if (subscriptions_[i].active && subscriptions_[i].tag == event.tag &&
        subscriptions_[i].handler) {
      const EventHandler handler = subscriptions_[i].handler;
      handler(event);
    }
  }

  const std::size_t waiter_count = waiters_.size();
  for (std::size_t w = 0; w < waiter_count; ++w) {
    bool progressed = false;
    {
      Waiter& waiter = waiters_[w];
      if (waiter.done) continue;
      for (std::size_t i = 0; i < waiter.leaves.size(); ++i) {
        if (!waiter.filled[i] && waiter.leaves[i]->tag == event.tag) {
          waiter.filled[i] = true;
          waiter.matched[i] = event;
          progressed = true;
          break;
        }
      }
    }
    if (progressed &&
        tree_satisfied(waiters_[w].root.get(), waiters_[w].leaves, waiters_[w].filled)) {
      waiters_[w].done = true;
      std::vector<Event> gathered;
      for (std::size_t i = 0; i < waiters_[w].leaves.size(); ++i) {
        if (waiters_[w].filled[i]) gathered.push_back(waiters_[w].matched[i]);
      }
      const auto continuation = std::move(waiters_[w].continuation);
      continuation(gathered);
    }
  }
  std::erase_if(waiters_, [](const Waiter& w) { return w.done; });
}

RunStats Simulator::run_until(SimTime t_end) {
  if (t_end < now_) {
    throw std::logic_error("engine: run_until target precedes the current clock");
  }
  stopped_ = false;
  const auto later = [](const Scheduled& a, const Scheduled& b) {
    return std::tie(a.event.fire_at, a.event.seq) > std::tie(b.event.fire_at, b.event.seq);
  };
  while (!heap_.empty() && !stopped_) {
    if (heap_.front().event.fire_at > t_end) break;
    std::pop_heap(heap_.begin(), heap_.end(), later);
    Scheduled item = std::move(heap_.back());
    heap_.pop_back();
    if (item.cancelled) continue;
    now_ = item.event.fire_at;
    ++stats_.events_processed;
    try {
      if (item.handler) item.handler(item.event);
      dispatch(item.event);
    } catch (const std::exception& e) {
      throw std::runtime_error("engine: handler failed at t=" +
                               std::to_string(item.event.fire_at) + " seq=" +
                               std::to_string(item.event.seq) + ": " + e.what());
    }
  }
  if (!stopped_) now_ = std::max(now_, t_end);
  stats_.events_pending = 0;
  for (const auto& item : heap_) {
    if (!item.cancelled) ++stats_.events_pending;
  }
  stats_.final_clock = now_;
  return stats_;
}

void Simulator::set_trace(std::ostream* sink, KindNamer namer) {
  trace_sink_ = sink;
  kind_namer_ = std::move(namer);
}

}  // namespace entsim::engine
