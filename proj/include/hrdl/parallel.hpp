#pragma once

// Single-sample hierarchy-stack inference. Sequential and parallel modes
// compute every hierarchy into its own slot and then add the slots in
// hierarchy order, so both modes produce the same bits.

#include <atomic>
#include <memory>
#include <thread>
#include <vector>

#include "hrdl/models.hpp"

namespace hrdl {

enum class InferMode { sequential, parallel };

inline InferMode infer_mode_from_string(const std::string& s) {
  if (s == "sequential") return InferMode::sequential;
  if (s == "parallel") return InferMode::parallel;
  throw Error("unknown inference mode: " + s);
}

inline const char* to_string(InferMode m) {
  return m == InferMode::sequential ? "sequential" : "parallel";
}

/// Runs a HierarchyStack one sample at a time. In parallel mode hierarchy 0
/// runs on the calling thread and each further hierarchy has a persistent
/// worker. Workers spin briefly, then block, between calls.
class StackRunner {
 public:
  StackRunner(const HierarchyStack& stack, InferMode mode)
      : stack_(&stack), mode_(mode), slots_(stack.hierarchies.size()) {
    stack.validate();
    for (auto& s : slots_) s = std::make_unique<Slot>();
    if (mode_ == InferMode::parallel)
      for (std::size_t j = 1; j < slots_.size(); ++j)
        workers_.emplace_back([this, j] { worker_loop(j); });
  }

  StackRunner(const StackRunner&) = delete;
  StackRunner& operator=(const StackRunner&) = delete;

  ~StackRunner() {
    if (!workers_.empty()) {
      stop_.store(true, std::memory_order_relaxed);
      generation_.fetch_add(1, std::memory_order_release);
      generation_.notify_all();
      for (auto& w : workers_) w.join();
    }
  }

  InferMode mode() const { return mode_; }

  /// `window` holds the stack's frame count of frames, newest last.
  Vec6 infer(std::span<const JointFrame* const> window, const MDState& md) {
    if (window.size() != stack_->frames()) throw Error("infer: window size does not match model");
    if (md.size() != stack_->thresholds.size())
      throw Error("infer: MD state does not match the model's threshold set");
    if (mode_ == InferMode::sequential || workers_.empty()) {
      for (std::size_t j = 0; j < slots_.size(); ++j) run(j, window, md);
    } else {
      window_ = window;
      md_ = &md;
      done_.store(0, std::memory_order_relaxed);
      generation_.fetch_add(1, std::memory_order_release);
      generation_.notify_all();
      run(0, window, md);
      const auto need = static_cast<unsigned>(workers_.size());
      for (unsigned spins = 0; done_.load(std::memory_order_acquire) != need; ++spins)
        if (spins > 4096) std::this_thread::yield();
    }
    Vec6 out = slots_[0]->out;
    for (std::size_t j = 1; j < slots_.size(); ++j)
      for (std::size_t k = 0; k < kJoints; ++k) out[k] += slots_[j]->out[k];
    return out;
  }

 private:
  struct alignas(64) Slot {
    MlpEstimator::Scratch scratch;
    Vec6 out{};
  };

  void run(std::size_t j, std::span<const JointFrame* const> window, const MDState& md) {
    stack_->hierarchies[j].infer(window, md, slots_[j]->scratch, slots_[j]->out);
  }

  void worker_loop(std::size_t j) {
    std::uint64_t seen = 0;
    for (;;) {
      std::uint64_t g = generation_.load(std::memory_order_acquire);
      for (unsigned spins = 0; g == seen; ++spins) {
        if (spins < 20000) {
          g = generation_.load(std::memory_order_acquire);
        } else {
          generation_.wait(seen, std::memory_order_acquire);
          g = generation_.load(std::memory_order_acquire);
        }
      }
      seen = g;
      if (stop_.load(std::memory_order_relaxed)) return;
      run(j, window_, *md_);
      done_.fetch_add(1, std::memory_order_release);
    }
  }

  const HierarchyStack* stack_;
  InferMode mode_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::vector<std::thread> workers_;
  alignas(64) std::atomic<std::uint64_t> generation_{0};
  alignas(64) std::atomic<unsigned> done_{0};
  std::atomic<bool> stop_{false};
  std::span<const JointFrame* const> window_;
  const MDState* md_ = nullptr;
};

/// Runs a stack over a dataset frame by frame through the single-sample path.
inline Matrix predict_streaming(const HierarchyStack& stack, const Dataset& d, InferMode mode) {
  StackRunner runner(stack, mode);
  Matrix Y(6, static_cast<Eigen::Index>(d.size()));
  std::vector<const JointFrame*> win;
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    const auto r = d.trajectory(i);
    MDState md(stack.thresholds.size());
    for (std::size_t n = r.begin; n < r.end; ++n) {
      md_update_inplace(md, d.frames[n].dq, stack.thresholds);
      window_at(d, n, stack.frames(), r.begin, win);
      const Vec6 y = runner.infer(win, md);
      for (std::size_t k = 0; k < kJoints; ++k)
        Y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = y[k];
    }
  }
  return Y;
}

}  // namespace hrdl
