#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entsim/bell.hpp"
#include "entsim/engine.hpp"
#include "entsim/netmodel.hpp"

// Entanglement-distribution protocol stack: sequential swapping along the
// chain, hop-by-hop corrections finalized at the destination, purification
// before swapping (per link) or after (end to end), and slot policies for
// picking among candidate pairs.
namespace entsim::proto {

using engine::SimTime;

enum : engine::EventKind {
  kDistillResolved = 10,
  kRequestCompleted = 11,
};

std::string event_kind_name(engine::EventKind kind);

/// Accumulated heralded measurement outcome; only parities matter.
struct PauliCorrection {
  int x_parity = 0;
  int z_parity = 0;

  void absorb(int x, int z) {
    x_parity ^= (x & 1);
    z_parity ^= (z & 1);
  }
  bool is_identity() const { return x_parity == 0 && z_parity == 0; }
};

enum class SlotPolicy { OldestFirst, NewestFirst, BestFidelity };

/// PurifyThenSwap boosts every link before swapping; SwapThenPurify builds
/// whole end-to-end copies and purifies at the end nodes.
enum class Ordering { PurifyThenSwap, SwapThenPurify };

struct SwapRequest {
  std::uint64_t request_id = 0;
  int source_node = 0;
  int destination_node = -1;  // -1 = last node of the chain
  SlotPolicy policy = SlotPolicy::OldestFirst;
  Ordering ordering = Ordering::PurifyThenSwap;
  int distillation_rounds = 0;
};

struct TrialRecord {
  std::uint64_t request_id = 0;
  bool completed = false;
  double end_to_end_fidelity = 0.0;
  SimTime completion_time_ns = 0;
  int swaps_performed = 0;
  int distillation_attempts = 0;
  int distillation_successes = 0;
  int pairs_consumed = 0;      // physical link pairs used up by the request
  int end_to_end_copies = 0;   // completed swap cascades
  bool distillation_clean = true;  // no failed purification before delivery
};

struct PairCandidate {
  int pair_id = -1;
  double estimated_fidelity = 0.0;
};

/// Argmax by estimated fidelity; ties and equal values resolve to the
/// lowest index. Empty input reports no pair available.
std::optional<int> select_best_pair(std::span<const PairCandidate> candidates);

/// Runs end-to-end entanglement requests over one network, one at a time in
/// FIFO order. Owns the swap/correct/purify state machines.
class Orchestrator {
 public:
  Orchestrator(engine::Simulator& sim, net::Network& network);

  void submit(SwapRequest request);

  /// Flushes a still-running request as incomplete (horizon reached).
  void finalize_incomplete();

  const std::vector<TrialRecord>& records() const { return records_; }
  bool idle() const { return !active_.has_value() && queue_.empty(); }

  /// Stop the engine once the last queued request finishes (default on).
  void set_stop_when_idle(bool stop) { stop_when_idle_ = stop; }

 private:
  struct LinkProgress {
    int kept = -1;
    int ready = -1;
    int rounds_done = 0;
    bool in_flight = false;
  };

  struct Cascade {
    int epoch = 0;
    int next_switch = 1;
    bool gate_open = true;  // left neighbor has swapped (or none exists)
    int virtual_pair = -1;
    int corrections_received = 0;
    PauliCorrection net_correction;
  };

  struct CorrectionMsg {
    std::uint64_t request_id = 0;
    int epoch = 0;
    int hop = 0;  // node index of the swapping switch
    int x = 0;
    int z = 0;
    int destination = 0;
  };

  void start_next_request();
  void pump();
  bool progress_links();
  bool progress_one_link(int link);
  bool advance_cascade();
  bool advance_completion(int result_pair);
  void restart_cascade();
  void begin_cascade();
  void initiate_link_distill(int link, int kept, int sacrifice);
  void initiate_end_distill(int kept, int sacrifice);
  void resolve_distill(bool end_stage, int link, int kept, bool success);
  void finalize_delivery(int pair_id);
  void finish_record();
  void on_pair_arrival(int conn);
  void on_classical(const engine::Event& event);
  void perform_swap(int node, int left_input, int right_input);
  bool link_input_ready(int link);
  int take_link_input(int link);
  std::vector<int> usable_link_pairs(int link, int exclude_pair);
  void count_consumed(int pair_id);
  int link_target_rounds() const;
  int end_target_rounds() const;
  SimTime chain_round_trip_ns() const;

  engine::Simulator& sim_;
  net::Network& net_;
  std::deque<SwapRequest> queue_;
  std::optional<SwapRequest> active_;
  std::vector<TrialRecord> records_;
  TrialRecord record_;
  std::vector<LinkProgress> links_;
  Cascade cascade_;
  bool building_ = false;
  int next_epoch_ = 1;
  int kept_end_pair_ = -1;
  int end_rounds_done_ = 0;
  bool end_in_flight_ = false;
  bool stop_when_idle_ = true;
  std::vector<engine::RngStream> switch_rngs_;  // per node
  std::vector<engine::RngStream> link_rngs_;
  engine::RngStream end_rng_{1};
  engine::EntityId entity_ = 0;
};

}  // namespace entsim::proto
