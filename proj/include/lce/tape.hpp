#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lce/tensor.hpp"

namespace lce {

// Reverse-mode tape. Ops record themselves on the thread's active tape while
// a TapeT<T>::Scope is alive. A tape is single-owner: one recording thread,
// adjoints replayed by backward() in reverse record order.
template <class T>
class TapeT {
 public:
  // Backward closure: given d(loss)/d(out), return d(loss)/d(parent_i) for
  // every parent (aligned with the parents vector; untracked slots may hold
  // empty tensors). Closures capture input values by copy, so replay is
  // independent of later in-place mutation (optimizer steps).
  using BackwardFn = std::function<std::vector<TensorT<T>>(const TensorT<T>&)>;

  TapeT() : gen_(next_gen()) {}

  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  class Scope {
   public:
    explicit Scope(TapeT& tape) : prev_(current_) { current_ = &tape; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* prev_;
  };

  // temporarily disables recording (oracle evaluations, cached forwards)
  class Pause {
   public:
    Pause() : prev_(current_) { current_ = nullptr; }
    ~Pause() { current_ = prev_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    TapeT* prev_;
  };

  static TapeT* current() { return current_; }

  // Node id of t on this tape. Registers t as a leaf when it requires grad;
  // returns -1 for constants.
  int track(const TensorT<T>& t) {
    auto& impl = *t.impl();
    if (impl.tape_gen == gen_ && impl.node >= 0) return impl.node;
    if (!impl.requires_grad) return -1;
    int id = new_node(t.shape());
    impl.tape_gen = gen_;
    impl.node = id;
    leaves_.push_back({id, t.impl()});
    return id;
  }

  bool any_tracked(std::initializer_list<int> ids) const {
    for (int id : ids)
      if (id >= 0) return true;
    return false;
  }

  // Marks out as the result of a recorded op.
  void record(TensorT<T>& out, std::vector<int> parents, BackwardFn fn) {
    int id = new_node(out.shape());
    out.impl()->tape_gen = gen_;
    out.impl()->node = id;
    records_.push_back({id, std::move(parents), std::move(fn)});
  }

  void clear() {
    records_.clear();
    leaves_.clear();
    nodes_.clear();
    gen_ = next_gen();
  }

  size_t num_records() const { return records_.size(); }

  // Runs the adjoint pass from a scalar loss. Leaf gradients accumulate into
  // each leaf's grad buffer; repeated calls keep accumulating until cleared.
  void backward(const TensorT<T>& loss) {
    LCE_CHECK(loss.numel() == 1, "backward needs a scalar loss, got ",
              shape_str(loss.shape()));
    auto& impl = *loss.impl();
    LCE_CHECK(impl.tape_gen == gen_ && impl.node >= 0,
              "loss is not recorded on this tape");
    std::vector<TensorT<T>> node_grads(nodes_.size());
    std::vector<bool> has(nodes_.size(), false);
    node_grads[impl.node] = TensorT<T>::ones(loss.shape());
    has[impl.node] = true;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!has[it->out]) continue;
      std::vector<TensorT<T>> gs = it->backward(node_grads[it->out]);
      LCE_CHECK(gs.size() == it->parents.size(), "backward arity mismatch");
      for (size_t i = 0; i < gs.size(); ++i) {
        int p = it->parents[i];
        if (p < 0) continue;
        accumulate(node_grads, has, p, gs[i]);
      }
    }
    for (auto& [id, leaf] : leaves_) {
      if (!has[id]) continue;
      auto& g = node_grads[id];
      if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), T(0));
      const T* src = g.data();
      for (size_t i = 0; i < leaf->grad.size(); ++i) leaf->grad[i] += src[i];
    }
  }

 private:
  struct Record {
    int out;
    std::vector<int> parents;
    BackwardFn backward;
  };

  static std::uint64_t next_gen() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  int new_node(const Shape& shape) {
    nodes_.push_back(shape);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(std::vector<TensorT<T>>& grads, std::vector<bool>& has, int id,
                  const TensorT<T>& g) {
    LCE_CHECK(g.shape() == nodes_[id], "gradient shape ", shape_str(g.shape()),
              " does not match node shape ", shape_str(nodes_[id]));
    if (!has[id]) {
      grads[id] = g.clone();
      has[id] = true;
      return;
    }
    T* dst = grads[id].data();
    const T* src = g.data();
    const index_t n = g.numel();
    for (index_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  std::uint64_t gen_;
  std::vector<Shape> nodes_;
  std::vector<Record> records_;
  std::vector<std::pair<int, std::shared_ptr<TensorImpl<T>>>> leaves_;

  static thread_local TapeT* current_;
};

template <class T>
thread_local TapeT<T>* TapeT<T>::current_ = nullptr;

template <class T>
void backward(const TensorT<T>& loss, TapeT<T>& tape) {
  tape.backward(loss);
}

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace lce
