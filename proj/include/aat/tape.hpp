#pragma once

#include <functional>
#include <vector>

#include "aat/encoder.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Reverse-mode tape over Tensor2 values.  Gate scalars are the only leaves;
// model weights enter operations as captured constants, so no gradient
// buffer ever exists for them.  Build the forward pass, finalize, then call
// backward_gating on a scalar loss node.
class GradTape {
 public:
  using NodeId = int;

  NodeId leaf(float value);
  NodeId constant(Tensor2 value);

  // y = sigmoid(tau * a), elementwise
  NodeId sigmoid_scale(NodeId a, float tau);
  // y = x * w (+ bias), weights constant
  NodeId linear(NodeId x, const Tensor2* w, const std::vector<float>* bias);
  NodeId matmul(NodeId a, NodeId b);
  // y = scale * a * b^T
  NodeId matmul_nt(NodeId a, NodeId b, float scale);
  NodeId add(NodeId a, NodeId b);
  NodeId add_bias(NodeId x, const std::vector<float>* bias);
  NodeId layer_norm(NodeId x, const std::vector<float>* gain, const std::vector<float>* bias,
                    float eps = 1e-5f);
  NodeId softmax_rows(NodeId x);
  // Attention manipulation; `beta` must be a 1x1 node.
  NodeId manipulate(NodeId a, NodeId beta);
  NodeId gelu(NodeId x);
  NodeId row(NodeId x, int index);
  NodeId l2_normalize_row(NodeId x);
  NodeId stack_rows(const std::vector<NodeId>& rows);
  // Symmetric InfoNCE between image embedding rows and constant text rows.
  NodeId contrastive(NodeId images, const Tensor2* texts, float scale);

  const Tensor2& value(NodeId id) const { return nodes_[std::size_t(id)].value; }
  const Tensor2& grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[std::size_t(id)].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

  void finalize() { finalized_ = true; }
  bool finalized() const { return finalized_; }

  friend std::vector<float> backward_gating(GradTape& tape, GradTape::NodeId loss);

 private:
  struct Node {
    Tensor2 value;
    std::vector<NodeId> parents;
    bool requires_grad = false;
    std::function<void(GradTape&)> backward;
  };

  NodeId push(Node n);
  void accumulate(NodeId id, const Tensor2& g);
  Tensor2& grad_ref(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor2> grads_;
  std::vector<char> grad_set_;
  std::vector<NodeId> leaves_;
  bool finalized_ = false;
};

// Gradient of a scalar loss with respect to every leaf, in registration
// order.  Leaves the loss never touched get gradient zero.
std::vector<float> backward_gating(GradTape& tape, GradTape::NodeId loss);

// Tape mirror of encode_image: betas[layer * heads + head] are 1x1 nodes.
GradTape::NodeId encode_image_tape(GradTape& tape, const Tensor2& tokens,
                                   const EncoderWeights& w,
                                   const std::vector<GradTape::NodeId>& betas);

}  // namespace aat
