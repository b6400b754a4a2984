#include "entsim/protocols.hpp"

#include <algorithm>
#include <stdexcept>

namespace entsim::proto {

namespace {

std::string correction_detail(std::uint64_t request_id, int hop, int x, int z) {
  return std::to_string(request_id) + "," + std::to_string(hop) + "," + std::to_string(x) +
         "," + std::to_string(z);
}

}  // namespace

std::string event_kind_name(engine::EventKind kind) {
  switch (kind) {
    case kDistillResolved:
      return "distill_resolved";
    case kRequestCompleted:
      return "request_completed";
    default:
      return net::Network::event_kind_name(kind);
  }
}

std::optional<int> select_best_pair(std::span<const PairCandidate> candidates) {
  if (candidates.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].estimated_fidelity > candidates[best].estimated_fidelity) best = i;
  }
  return candidates[best].pair_id;
}

Orchestrator::Orchestrator(engine::Simulator& sim, net::Network& network)
    : sim_(sim), net_(network) {
  entity_ = sim_.register_entity("orchestrator");
  for (int node = 0; node < net_.num_nodes(); ++node) {
    switch_rngs_.push_back(net_.rng_stream("swap." + std::to_string(node)));
    sim_.subscribe({net::kClassicalDelivery, static_cast<std::uint64_t>(node)},
                   [this](const engine::Event& event) { on_classical(event); });
  }
  for (int link = 0; link < net_.num_links(); ++link) {
    link_rngs_.push_back(net_.rng_stream("distill.link." + std::to_string(link)));
    for (int conn : net_.link_connections(link)) {
      sim_.subscribe({net::kPairArrival, static_cast<std::uint64_t>(conn)},
                     [this, conn](const engine::Event&) { on_pair_arrival(conn); });
    }
  }
  end_rng_ = net_.rng_stream("distill.e2e");
}

void Orchestrator::submit(SwapRequest request) {
  if (request.destination_node < 0) request.destination_node = net_.num_nodes() - 1;
  if (request.source_node != 0 || request.destination_node != net_.num_nodes() - 1) {
    throw std::invalid_argument("protocols: requests run end to end on the chain");
  }
  if (request.distillation_rounds < 0) {
    throw std::invalid_argument("protocols: purification rounds must be non-negative");
  }
  if (request.distillation_rounds > 0 && net_.connections_per_link() < 2) {
    throw std::invalid_argument("protocols: purification needs at least four memory positions");
  }
  queue_.push_back(request);
  if (!active_) start_next_request();
}

void Orchestrator::start_next_request() {
  active_ = queue_.front();
  queue_.pop_front();
  record_ = TrialRecord{};
  record_.request_id = active_->request_id;
  links_.assign(net_.num_links(), LinkProgress{});
  kept_end_pair_ = -1;
  end_rounds_done_ = 0;
  end_in_flight_ = false;
  begin_cascade();
  pump();
}

int Orchestrator::link_target_rounds() const {
  return active_->ordering == Ordering::PurifyThenSwap ? active_->distillation_rounds : 0;
}

int Orchestrator::end_target_rounds() const {
  return active_->ordering == Ordering::SwapThenPurify ? active_->distillation_rounds : 0;
}

SimTime Orchestrator::chain_round_trip_ns() const {
  SimTime one_way = 0;
  for (int link = 0; link < net_.num_links(); ++link) one_way += net_.classical_delay_ns(link);
  return 2 * one_way;
}

void Orchestrator::begin_cascade() {
  cascade_ = Cascade{};
  cascade_.epoch = next_epoch_++;
  building_ = true;
}

void Orchestrator::restart_cascade() {
  if (cascade_.virtual_pair != -1 && net_.pair(cascade_.virtual_pair).active) {
    count_consumed(cascade_.virtual_pair);
    net_.release_pair(cascade_.virtual_pair, sim_.now());
  }
  begin_cascade();
}

void Orchestrator::count_consumed(int pair_id) {
  if (net_.pair(pair_id).origin_conn >= 0) ++record_.pairs_consumed;
}

void Orchestrator::on_pair_arrival(int) {
  if (active_) pump();
}

void Orchestrator::pump() {
  if (!active_) return;
  bool changed = true;
  while (changed && active_) {
    changed = progress_links();
    if (active_ && advance_cascade()) changed = true;
  }
}

bool Orchestrator::progress_links() {
  if (link_target_rounds() == 0) return false;
  bool changed = false;
  for (int link = 0; link < net_.num_links(); ++link) {
    if (progress_one_link(link)) changed = true;
  }
  return changed;
}

bool Orchestrator::progress_one_link(int link) {
  LinkProgress& lp = links_[link];
  const SimTime now = sim_.now();

  // Heal references to pairs that were consumed, discarded or expired.
  if (lp.ready != -1) {
    const net::PairRecord& p = net_.pair(lp.ready);
    if (p.active && now > std::min(p.left_deadline, p.right_deadline)) {
      count_consumed(lp.ready);
      net_.release_pair(lp.ready, now);
    }
    if (!net_.pair(lp.ready).active) lp = LinkProgress{};
  }
  if (lp.kept != -1) {
    const net::PairRecord& p = net_.pair(lp.kept);
    if (p.active && !p.pending && now > std::min(p.left_deadline, p.right_deadline)) {
      count_consumed(lp.kept);
      net_.release_pair(lp.kept, now);
    }
    if (!net_.pair(lp.kept).active) lp = LinkProgress{};
  }

  if (lp.ready != -1 || lp.in_flight) return false;

  if (lp.kept == -1) {
    const std::vector<int> candidates = usable_link_pairs(link, -1);
    if (candidates.empty()) return false;
    lp.kept = candidates.front();
    lp.rounds_done = 0;
  }
  if (lp.rounds_done >= link_target_rounds()) {
    lp.ready = lp.kept;
    return true;
  }
  const std::vector<int> sacrifices = usable_link_pairs(link, lp.kept);
  if (sacrifices.empty()) return false;
  initiate_link_distill(link, lp.kept, sacrifices.front());
  return true;
}

std::vector<int> Orchestrator::usable_link_pairs(int link, int exclude_pair) {
  const SimTime now = sim_.now();
  std::vector<int> out;
  for (int conn : net_.link_connections(link)) {
    const std::optional<int> held = net_.connection_pair(conn);
    if (!held || *held == exclude_pair) continue;
    // A parked end-to-end pair awaiting purification is not link inventory
    // (it is the pair itself on a direct two-node chain).
    if (*held == kept_end_pair_) continue;
    const net::PairRecord& p = net_.pair(*held);
    if (!p.active || p.pending) continue;
    if (now > std::min(p.left_deadline, p.right_deadline)) {
      count_consumed(*held);
      net_.release_pair(*held, now);  // expired: discard, source regenerates
      if (links_[link].kept == *held || links_[link].ready == *held) links_[link] = LinkProgress{};
      continue;
    }
    out.push_back(*held);
  }
  return out;
}

bool Orchestrator::link_input_ready(int link) {
  if (link_target_rounds() > 0) {
    progress_one_link(link);
    return links_[link].ready != -1;
  }
  const std::vector<int> candidates = usable_link_pairs(link, -1);
  if (active_->policy == SlotPolicy::BestFidelity) {
    // Route selection waits until every parallel connection has delivered.
    return static_cast<int>(candidates.size()) == net_.connections_per_link();
  }
  return !candidates.empty();
}

int Orchestrator::take_link_input(int link) {
  const SimTime now = sim_.now();
  if (link_target_rounds() > 0) {
    const int id = links_[link].ready;
    if (id == -1) return -1;
    links_[link] = LinkProgress{};
    return id;
  }
  const std::vector<int> candidates = usable_link_pairs(link, -1);
  if (candidates.empty()) return -1;
  switch (active_->policy) {
    case SlotPolicy::OldestFirst: {
      int best = candidates.front();
      for (int id : candidates) {
        if (net_.pair(id).left_stored_at < net_.pair(best).left_stored_at) best = id;
      }
      return best;
    }
    case SlotPolicy::NewestFirst: {
      int best = candidates.front();
      for (int id : candidates) {
        if (net_.pair(id).left_stored_at > net_.pair(best).left_stored_at) best = id;
      }
      return best;
    }
    case SlotPolicy::BestFidelity: {
      std::vector<PairCandidate> scored;
      scored.reserve(candidates.size());
      for (int id : candidates) {
        scored.push_back({id, net_.estimated_fidelity(net_.pair(id), now)});
      }
      return select_best_pair(scored).value_or(-1);
    }
  }
  return -1;
}

bool Orchestrator::advance_cascade() {
  if (!active_ || !building_) return false;
  const int num_switches = net_.num_nodes() - 2;
  const SimTime now = sim_.now();

  if (num_switches == 0) {
    if (!link_input_ready(0)) return false;
    const int input = take_link_input(0);
    if (input == -1) return false;
    return advance_completion(input);
  }

  const int s = cascade_.next_switch;
  if (s > num_switches) return false;  // swaps done, corrections in flight
  if (s > 1 && !cascade_.gate_open) return false;

  if (s > 1) {
    const net::PairRecord& vp = net_.pair(cascade_.virtual_pair);
    if (!vp.active || now > std::min(vp.left_deadline, vp.right_deadline)) {
      restart_cascade();
      return true;
    }
  }
  if (s == 1 && !link_input_ready(0)) return false;
  if (!link_input_ready(s)) return false;

  const int left_input = (s == 1) ? take_link_input(0) : cascade_.virtual_pair;
  if (left_input == -1) return false;
  const int right_input = take_link_input(s);
  if (right_input == -1) return false;
  perform_swap(s, left_input, right_input);
  return true;
}

void Orchestrator::perform_swap(int node, int left_input, int right_input) {
  count_consumed(left_input);
  count_consumed(right_input);
  cascade_.virtual_pair = net_.swap_merge(left_input, right_input, sim_.now());
  cascade_.next_switch = node + 1;
  cascade_.gate_open = false;
  ++record_.swaps_performed;

  // The measurement outcome is heralded into the composed state; the
  // parities still travel to the destination to model the latency.
  const int x = static_cast<int>(switch_rngs_[node].bits(1));
  const int z = static_cast<int>(switch_rngs_[node].bits(1));
  CorrectionMsg msg;
  msg.request_id = active_->request_id;
  msg.epoch = cascade_.epoch;
  msg.hop = node;
  msg.x = x;
  msg.z = z;
  msg.destination = active_->destination_node;
  net_.send_classical(node, net::Side::Left,
                      {node + 1, msg, correction_detail(msg.request_id, node, x, z)});
}

void Orchestrator::on_classical(const engine::Event& event) {
  if (!event.payload.has_value()) return;
  const auto* msg = std::any_cast<CorrectionMsg>(&event.payload);
  if (msg == nullptr) return;
  const int node = static_cast<int>(event.tag.subject);
  if (!active_ || msg->request_id != active_->request_id) return;

  if (node != msg->destination) {
    // Relay toward the destination; a relay from the immediate left
    // neighbor also opens this switch's swap gate.
    if (building_ && msg->epoch == cascade_.epoch && cascade_.next_switch == node &&
        msg->hop == node - 1) {
      cascade_.gate_open = true;
    }
    net_.send_classical(node, net::Side::Left,
                        {node + 1, *msg,
                         correction_detail(msg->request_id, msg->hop, msg->x, msg->z)});
    pump();
    return;
  }

  if (!building_ || msg->epoch != cascade_.epoch) return;  // stale copy
  ++cascade_.corrections_received;
  cascade_.net_correction.absorb(msg->x, msg->z);
  if (cascade_.corrections_received == net_.num_nodes() - 2) {
    advance_completion(cascade_.virtual_pair);
  }
  pump();
}

bool Orchestrator::advance_completion(int result_pair) {
  const SimTime now = sim_.now();
  building_ = false;
  ++record_.end_to_end_copies;

  const net::PairRecord& result = net_.pair(result_pair);
  if (!result.active || now > std::min(result.left_deadline, result.right_deadline)) {
    if (result.active) {
      count_consumed(result_pair);
      net_.release_pair(result_pair, now);
    }
    begin_cascade();
    return true;
  }

  if (end_target_rounds() == 0) {
    finalize_delivery(result_pair);
    return true;
  }

  if (kept_end_pair_ != -1) {
    const net::PairRecord& kept = net_.pair(kept_end_pair_);
    if (!kept.active || now > std::min(kept.left_deadline, kept.right_deadline)) {
      if (kept.active) {
        count_consumed(kept_end_pair_);
        net_.release_pair(kept_end_pair_, now);
      }
      kept_end_pair_ = -1;
      end_rounds_done_ = 0;
    }
  }

  if (kept_end_pair_ == -1) {
    kept_end_pair_ = result_pair;
    begin_cascade();
    return true;
  }
  initiate_end_distill(kept_end_pair_, result_pair);
  return true;
}

void Orchestrator::initiate_link_distill(int link, int kept, int sacrifice) {
  const SimTime now = sim_.now();
  const bell::BellState keep_state = net_.lambda_decayed_to(net_.pair(kept), now);
  const bell::BellState sacrifice_state = net_.lambda_decayed_to(net_.pair(sacrifice), now);
  const bell::PurificationOutcome outcome = bell::dejmps_round(keep_state, sacrifice_state);
  const bool success = link_rngs_[link].uniform01() < outcome.success_probability;

  net_.touch_for_purification(kept, now);
  net_.touch_for_purification(sacrifice, now);
  net_.apply_purification(kept, outcome.post_state, now);
  count_consumed(sacrifice);
  net_.release_pair(sacrifice, now);
  net_.set_pending(kept, true);
  links_[link].in_flight = true;
  ++record_.distillation_attempts;

  // Outcome comparison costs one classical round trip on the link.
  const SimTime resolve_at = now + 2 * net_.classical_delay_ns(link);
  const std::uint64_t request_id = active_->request_id;
  sim_.schedule(resolve_at, {kDistillResolved, static_cast<std::uint64_t>(link)}, entity_, {},
                [this, link, kept, success, request_id](const engine::Event&) {
                  if (!active_ || active_->request_id != request_id) {
                    net_.set_pending(kept, false);  // outcome still lands physically
                    return;
                  }
                  resolve_distill(false, link, kept, success);
                },
                success ? "link success" : "link failure");
}

void Orchestrator::initiate_end_distill(int kept, int sacrifice) {
  const SimTime now = sim_.now();
  const bell::BellState keep_state = net_.lambda_decayed_to(net_.pair(kept), now);
  const bell::BellState sacrifice_state = net_.lambda_decayed_to(net_.pair(sacrifice), now);
  const bell::PurificationOutcome outcome = bell::dejmps_round(keep_state, sacrifice_state);
  const bool success = end_rng_.uniform01() < outcome.success_probability;

  net_.touch_for_purification(kept, now);
  net_.touch_for_purification(sacrifice, now);
  net_.apply_purification(kept, outcome.post_state, now);
  count_consumed(sacrifice);
  net_.release_pair(sacrifice, now);
  net_.set_pending(kept, true);
  end_in_flight_ = true;
  ++record_.distillation_attempts;

  const SimTime resolve_at = now + chain_round_trip_ns();
  const std::uint64_t request_id = active_->request_id;
  sim_.schedule(resolve_at, {kDistillResolved, 0xe2e}, entity_, {},
                [this, kept, success, request_id](const engine::Event&) {
                  if (!active_ || active_->request_id != request_id) {
                    net_.set_pending(kept, false);
                    return;
                  }
                  resolve_distill(true, -1, kept, success);
                },
                success ? "end success" : "end failure");
}

void Orchestrator::resolve_distill(bool end_stage, int link, int kept, bool success) {
  if (!active_) return;
  net_.set_pending(kept, false);
  if (end_stage) {
    end_in_flight_ = false;
    if (success) {
      ++record_.distillation_successes;
      ++end_rounds_done_;
      if (end_rounds_done_ >= end_target_rounds()) {
        finalize_delivery(kept);
        return;
      }
    } else {
      record_.distillation_clean = false;
      count_consumed(kept);
      net_.release_pair(kept, sim_.now());
      kept_end_pair_ = -1;
      end_rounds_done_ = 0;
    }
    if (!building_) begin_cascade();
    pump();
    return;
  }

  links_[link].in_flight = false;
  if (success) {
    ++record_.distillation_successes;
    ++links_[link].rounds_done;
    if (links_[link].rounds_done >= link_target_rounds()) {
      links_[link].ready = links_[link].kept;
    }
  } else {
    record_.distillation_clean = false;
    count_consumed(kept);
    net_.release_pair(kept, sim_.now());
    links_[link] = LinkProgress{};
  }
  pump();
}

void Orchestrator::finalize_delivery(int pair_id) {
  const SimTime now = sim_.now();
  const net::PairRecord& pair = net_.pair(pair_id);
  if (!pair.active || now > std::min(pair.left_deadline, pair.right_deadline)) {
    if (pair.active) {
      count_consumed(pair_id);
      net_.release_pair(pair_id, now);
    }
    kept_end_pair_ = -1;
    end_rounds_done_ = 0;
    begin_cascade();
    pump();
    return;
  }
  count_consumed(pair_id);
  const bell::BellState final_state = net_.consume_delivered(pair_id, now);
  record_.completed = true;
  record_.end_to_end_fidelity = bell::fidelity_to_phi_plus(final_state);
  record_.completion_time_ns = now;
  finish_record();
}

void Orchestrator::finish_record() {
  records_.push_back(record_);
  const std::uint64_t finished_id = record_.request_id;
  active_.reset();
  building_ = false;
  kept_end_pair_ = -1;
  end_rounds_done_ = 0;
  end_in_flight_ = false;
  sim_.schedule(sim_.now(), {kRequestCompleted, finished_id}, entity_, {},
                [this](const engine::Event&) {
                  if (!queue_.empty()) {
                    start_next_request();
                  } else if (stop_when_idle_) {
                    sim_.stop();
                  }
                },
                "request " + std::to_string(finished_id));
}

void Orchestrator::finalize_incomplete() {
  if (active_) {
    record_.completed = false;
    records_.push_back(record_);
    active_.reset();
  }
  while (!queue_.empty()) {
    TrialRecord unserved;
    unserved.request_id = queue_.front().request_id;
    unserved.completed = false;
    records_.push_back(unserved);
    queue_.pop_front();
  }
}

}  // namespace entsim::proto
