#include "aat/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace aat {

GradTape::NodeId GradTape::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

Tensor2& GradTape::grad_ref(NodeId id) {
  Tensor2& g = grads_[std::size_t(id)];
  if (!grad_set_[std::size_t(id)]) {
    const Tensor2& v = nodes_[std::size_t(id)].value;
    g = Tensor2(v.rows, v.cols);
    grad_set_[std::size_t(id)] = 1;
  }
  return g;
}

void GradTape::accumulate(NodeId id, const Tensor2& g) {
  if (!nodes_[std::size_t(id)].requires_grad) return;
  add_inplace(grad_ref(id), g);
}

const Tensor2& GradTape::grad(NodeId id) const {
  if (grads_.size() != nodes_.size() || !grad_set_[std::size_t(id)])
    throw std::logic_error("gradient not populated for this node");
  return grads_[std::size_t(id)];
}

GradTape::NodeId GradTape::leaf(float value) {
  Node n;
  n.value = Tensor2(1, 1);
  n.value.at(0, 0) = value;
  n.requires_grad = true;
  const NodeId id = push(std::move(n));
  leaves_.push_back(id);
  return id;
}

GradTape::NodeId GradTape::constant(Tensor2 value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

GradTape::NodeId GradTape::sigmoid_scale(NodeId a, float tau) {
  const Tensor2& x = value(a);
  Node n;
  n.value = Tensor2(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i)
    n.value.data[i] = 1.0f / (1.0f + std::exp(-tau * x.data[i]));
  n.parents = {a};
  n.requires_grad = requires_grad(a);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, a, tau](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& y = t.value(id);
    Tensor2 da(y.rows, y.cols);
    for (std::size_t i = 0; i < y.size(); ++i)
      da.data[i] = g.data[i] * tau * y.data[i] * (1.0f - y.data[i]);
    t.accumulate(a, da);
  };
  return id;
}

GradTape::NodeId GradTape::linear(NodeId x, const Tensor2* w, const std::vector<float>* bias) {
  Tensor2 y = aat::matmul(value(x), *w);
  if (bias) add_row_inplace(y, *bias);
  Node n;
  n.value = std::move(y);
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x, w](GradTape& t) {
    if (!t.requires_grad(x)) return;
    t.accumulate(x, aat::matmul_nt(t.grads_[std::size_t(id)], *w));
  };
  return id;
}

GradTape::NodeId GradTape::matmul(NodeId a, NodeId b) {
  Node n;
  n.value = aat::matmul(value(a), value(b));
  n.parents = {a, b};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, a, b](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    if (t.requires_grad(a)) t.accumulate(a, aat::matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, aat::matmul_tn(t.value(a), g));
  };
  return id;
}

GradTape::NodeId GradTape::matmul_nt(NodeId a, NodeId b, float scale) {
  Node n;
  n.value = aat::matmul_nt(value(a), value(b), scale);
  n.parents = {a, b};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, a, b, scale](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    if (t.requires_grad(a)) {
      Tensor2 da = aat::matmul(g, t.value(b));
      for (float& v : da.data) v *= scale;
      t.accumulate(a, da);
    }
    if (t.requires_grad(b)) {
      Tensor2 db = aat::matmul_tn(g, t.value(a));
      for (float& v : db.data) v *= scale;
      t.accumulate(b, db);
    }
  };
  return id;
}

GradTape::NodeId GradTape::add(NodeId a, NodeId b) {
  Node n;
  n.value = aat::add(value(a), value(b));
  n.parents = {a, b};
  n.requires_grad = requires_grad(a) || requires_grad(b);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, a, b](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    t.accumulate(a, g);
    t.accumulate(b, g);
  };
  return id;
}

GradTape::NodeId GradTape::add_bias(NodeId x, const std::vector<float>* bias) {
  Tensor2 y = value(x);
  add_row_inplace(y, *bias);
  Node n;
  n.value = std::move(y);
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x](GradTape& t) {
    t.accumulate(x, t.grads_[std::size_t(id)]);
  };
  return id;
}

GradTape::NodeId GradTape::layer_norm(NodeId x, const std::vector<float>* gain,
                                      const std::vector<float>* bias, float eps) {
  const Tensor2& in = value(x);
  Tensor2 xhat(in.rows, in.cols);
  std::vector<float> inv_sigma(std::size_t(in.rows));
  Tensor2 out(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) {
    const float* r = in.row(i);
    double mean = 0.0;
    for (int j = 0; j < in.cols; ++j) mean += double(r[j]);
    mean /= double(in.cols);
    double var = 0.0;
    for (int j = 0; j < in.cols; ++j) {
      const double d = double(r[j]) - mean;
      var += d * d;
    }
    var /= double(in.cols);
    const float inv = float(1.0 / std::sqrt(var + double(eps)));
    inv_sigma[std::size_t(i)] = inv;
    const float mu = float(mean);
    float* xh = xhat.row(i);
    float* o = out.row(i);
    for (int j = 0; j < in.cols; ++j) {
      xh[j] = (r[j] - mu) * inv;
      o[j] = xh[j] * (*gain)[std::size_t(j)] + (*bias)[std::size_t(j)];
    }
  }
  Node n;
  n.value = std::move(out);
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x, gain, xhat = std::move(xhat),
                                      inv_sigma = std::move(inv_sigma)](GradTape& t) {
    if (!t.requires_grad(x)) return;
    const Tensor2& g = t.grads_[std::size_t(id)];
    Tensor2 dx(g.rows, g.cols);
    for (int i = 0; i < g.rows; ++i) {
      const float* gr = g.row(i);
      const float* xh = xhat.row(i);
      float* d = dx.row(i);
      double sum_gh = 0.0, sum_ghx = 0.0;
      for (int j = 0; j < g.cols; ++j) {
        const float gh = gr[j] * (*gain)[std::size_t(j)];
        sum_gh += double(gh);
        sum_ghx += double(gh) * double(xh[j]);
      }
      const float mean_gh = float(sum_gh / double(g.cols));
      const float mean_ghx = float(sum_ghx / double(g.cols));
      const float inv = inv_sigma[std::size_t(i)];
      for (int j = 0; j < g.cols; ++j) {
        const float gh = gr[j] * (*gain)[std::size_t(j)];
        d[j] = inv * (gh - mean_gh - xh[j] * mean_ghx);
      }
    }
    t.accumulate(x, dx);
  };
  return id;
}

GradTape::NodeId GradTape::softmax_rows(NodeId x) {
  Node n;
  n.value = aat::softmax_rows(value(x));
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x](GradTape& t) {
    if (!t.requires_grad(x)) return;
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& p = t.value(id);
    Tensor2 dx(g.rows, g.cols);
    for (int i = 0; i < g.rows; ++i) {
      const float* gr = g.row(i);
      const float* pr = p.row(i);
      float* d = dx.row(i);
      double inner = 0.0;
      for (int j = 0; j < g.cols; ++j) inner += double(gr[j]) * double(pr[j]);
      const float in_f = float(inner);
      for (int j = 0; j < g.cols; ++j) d[j] = pr[j] * (gr[j] - in_f);
    }
    t.accumulate(x, dx);
  };
  return id;
}

GradTape::NodeId GradTape::manipulate(NodeId a, NodeId beta) {
  const Tensor2& in = value(a);
  if (in.rows != in.cols) throw std::invalid_argument("manipulate: matrix must be square");
  if (value(beta).rows != 1 || value(beta).cols != 1)
    throw std::invalid_argument("manipulate: beta must be a scalar node");
  const float b = value(beta).at(0, 0);

  Tensor2 out(in.rows, in.cols);
  std::vector<float> inv_mass(std::size_t(in.rows));  // 1/s_i, 0 marks a degenerate row
  for (int i = 0; i < in.rows; ++i) {
    const float* r = in.row(i);
    float* o = out.row(i);
    o[0] = r[0];
    double s = double(r[0]);
    for (int j = 1; j < in.cols; ++j) {
      o[j] = r[j] * b;
      s += double(o[j]);
    }
    if (s < 1e-12) {
      for (int j = 0; j < in.cols; ++j) o[j] = 0.0f;
      o[0] = 1.0f;
      inv_mass[std::size_t(i)] = 0.0f;
      continue;
    }
    const float inv = float(1.0 / s);
    inv_mass[std::size_t(i)] = inv;
    for (int j = 0; j < in.cols; ++j) o[j] *= inv;
  }

  Node n;
  n.value = std::move(out);
  n.parents = {a, beta};
  n.requires_grad = requires_grad(a) || requires_grad(beta);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, a, beta, b, inv_mass = std::move(inv_mass)](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& in = t.value(a);
    const Tensor2& out = t.value(id);
    const int nrows = in.rows, ncols = in.cols;

    if (t.requires_grad(a)) {
      // dL/da_ik = (c_k / s_i) * (g_ik - sum_j g_ij out_ij), c_0 = 1, c_k = beta
      Tensor2 da(nrows, ncols);
      for (int i = 0; i < nrows; ++i) {
        const float inv = inv_mass[std::size_t(i)];
        if (inv == 0.0f) continue;  // degenerate row: constant one-hot
        const float* gr = g.row(i);
        const float* orow = out.row(i);
        float* d = da.row(i);
        double w = 0.0;
        for (int j = 0; j < ncols; ++j) w += double(gr[j]) * double(orow[j]);
        const float wf = float(w);
        d[0] = inv * (gr[0] - wf);
        const float binv = b * inv;
        for (int j = 1; j < ncols; ++j) d[j] = binv * (gr[j] - wf);
      }
      t.accumulate(a, da);
    }

    if (t.requires_grad(beta)) {
      // d out_i0 / d beta = -a_i0 r_i / s_i^2, d out_ij / d beta = a_ij a_i0 / s_i^2
      double db = 0.0;
      for (int i = 0; i < nrows; ++i) {
        const float inv = inv_mass[std::size_t(i)];
        if (inv == 0.0f) continue;
        const float* gr = g.row(i);
        const float* ar = in.row(i);
        double r = 0.0;
        for (int j = 1; j < ncols; ++j) r += double(ar[j]);
        const double a0 = double(ar[0]);
        const double inv2 = double(inv) * double(inv);
        db -= double(gr[0]) * a0 * r * inv2;
        double acc = 0.0;
        for (int j = 1; j < ncols; ++j) acc += double(gr[j]) * double(ar[j]);
        db += acc * a0 * inv2;
      }
      Tensor2 gb(1, 1);
      gb.at(0, 0) = float(db);
      t.accumulate(beta, gb);
    }
  };
  return id;
}

GradTape::NodeId GradTape::gelu(NodeId x) {
  Node n;
  n.value = aat::gelu(value(x));
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x](GradTape& t) {
    if (!t.requires_grad(x)) return;
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& in = t.value(x);
    Tensor2 dx(g.rows, g.cols);
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx.data[i] = g.data[i] * gelu_grad_scalar(in.data[i]);
    t.accumulate(x, dx);
  };
  return id;
}

GradTape::NodeId GradTape::row(NodeId x, int index) {
  const Tensor2& in = value(x);
  if (index < 0 || index >= in.rows) throw std::invalid_argument("row: index out of range");
  Tensor2 y(1, in.cols);
  for (int j = 0; j < in.cols; ++j) y.at(0, j) = in.at(index, j);
  Node n;
  n.value = std::move(y);
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x, index](GradTape& t) {
    if (!t.requires_grad(x)) return;
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& in = t.value(x);
    Tensor2 dx(in.rows, in.cols);
    for (int j = 0; j < in.cols; ++j) dx.at(index, j) = g.at(0, j);
    t.accumulate(x, dx);
  };
  return id;
}

GradTape::NodeId GradTape::l2_normalize_row(NodeId x) {
  const Tensor2& in = value(x);
  if (in.rows != 1) throw std::invalid_argument("l2_normalize_row: expected a single row");
  Tensor2 y = in;
  const double norm = l2_normalize(y.row(0), y.cols);
  Node n;
  n.value = std::move(y);
  n.parents = {x};
  n.requires_grad = requires_grad(x);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, x, norm](GradTape& t) {
    if (!t.requires_grad(x)) return;
    const Tensor2& g = t.grads_[std::size_t(id)];
    const Tensor2& y = t.value(id);
    Tensor2 dx(1, g.cols);
    if (norm == 0.0) {
      dx = g;
    } else {
      const double gy = dot64(g.row(0), y.row(0), g.cols);
      const float inv = float(1.0 / norm);
      const float gyf = float(gy);
      for (int j = 0; j < g.cols; ++j) dx.at(0, j) = (g.at(0, j) - y.at(0, j) * gyf) * inv;
    }
    t.accumulate(x, dx);
  };
  return id;
}

GradTape::NodeId GradTape::stack_rows(const std::vector<NodeId>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const int cols = value(rows[0]).cols;
  Tensor2 y(int(rows.size()), cols);
  bool any = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor2& r = value(rows[i]);
    if (r.rows != 1 || r.cols != cols)
      throw std::invalid_argument("stack_rows: rows must be 1 x cols");
    for (int j = 0; j < cols; ++j) y.at(int(i), j) = r.at(0, j);
    any = any || requires_grad(rows[i]);
  }
  Node n;
  n.value = std::move(y);
  n.parents = rows;
  n.requires_grad = any;
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, rows](GradTape& t) {
    const Tensor2& g = t.grads_[std::size_t(id)];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!t.requires_grad(rows[i])) continue;
      Tensor2 gr(1, g.cols);
      for (int j = 0; j < g.cols; ++j) gr.at(0, j) = g.at(int(i), j);
      t.accumulate(rows[i], gr);
    }
  };
  return id;
}

GradTape::NodeId GradTape::contrastive(NodeId images, const Tensor2* texts, float scale) {
  const Tensor2& img = value(images);
  const int b = img.rows;
  if (b < 2) throw std::invalid_argument("contrastive: need at least two pairs");
  if (texts->rows != b || texts->cols != img.cols)
    throw std::invalid_argument("contrastive: text matrix shape mismatch");

  Tensor2 logits = aat::matmul_nt(img, *texts, scale);
  Tensor2 p = aat::softmax_rows(logits);
  Tensor2 q = aat::softmax_rows(transpose(logits));

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    // log-sum-exp per row and per column, in double
    const float* lr = logits.row(i);
    float mr = lr[0];
    for (int j = 0; j < b; ++j) mr = std::max(mr, lr[j]);
    double sr = 0.0;
    for (int j = 0; j < b; ++j) sr += std::exp(double(lr[j]) - double(mr));
    loss += double(mr) + std::log(sr) - double(lr[i]);

    float mc = logits.at(0, i);
    for (int j = 0; j < b; ++j) mc = std::max(mc, logits.at(j, i));
    double sc = 0.0;
    for (int j = 0; j < b; ++j) sc += std::exp(double(logits.at(j, i)) - double(mc));
    loss += double(mc) + std::log(sc) - double(logits.at(i, i));
  }
  loss *= 0.5 / double(b);

  Tensor2 v(1, 1);
  v.at(0, 0) = float(loss);
  Node n;
  n.value = std::move(v);
  n.parents = {images};
  n.requires_grad = requires_grad(images);
  const NodeId id = push(std::move(n));
  nodes_[std::size_t(id)].backward = [id, images, texts, scale, b, p = std::move(p),
                                      q = std::move(q)](GradTape& t) {
    if (!t.requires_grad(images)) return;
    const float gscale = t.grads_[std::size_t(id)].at(0, 0);
    Tensor2 dlogits(b, b);
    const float w = gscale * 0.5f / float(b);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        const float delta = i == j ? 1.0f : 0.0f;
        dlogits.at(i, j) = w * ((p.at(i, j) - delta) + (q.at(j, i) - delta));
      }
    Tensor2 dimg = aat::matmul(dlogits, *texts);
    for (float& x : dimg.data) x *= scale;
    t.accumulate(images, dimg);
  };
  return id;
}

std::vector<float> backward_gating(GradTape& tape, GradTape::NodeId loss) {
  if (!tape.finalized()) throw std::logic_error("backward_gating: tape not finalized");
  if (loss < 0 || std::size_t(loss) >= tape.nodes_.size())
    throw std::invalid_argument("backward_gating: bad loss node");
  const Tensor2& lv = tape.nodes_[std::size_t(loss)].value;
  if (lv.rows != 1 || lv.cols != 1)
    throw std::invalid_argument("backward_gating: loss is not a scalar");

  tape.grads_.assign(tape.nodes_.size(), Tensor2());
  tape.grad_set_.assign(tape.nodes_.size(), 0);
  tape.grad_ref(loss).at(0, 0) = 1.0f;

  for (GradTape::NodeId id = loss; id >= 0; --id) {
    GradTape::Node& n = tape.nodes_[std::size_t(id)];
    if (!n.requires_grad || !tape.grad_set_[std::size_t(id)]) continue;
    if (n.backward) n.backward(tape);
  }

  std::vector<float> out;
  out.reserve(tape.leaves_.size());
  for (GradTape::NodeId leaf : tape.leaves_) {
    if (tape.grad_set_[std::size_t(leaf)])
      out.push_back(tape.grads_[std::size_t(leaf)].at(0, 0));
    else
      out.push_back(0.0f);
  }
  return out;
}

GradTape::NodeId encode_image_tape(GradTape& tape, const Tensor2& tokens,
                                   const EncoderWeights& w,
                                   const std::vector<GradTape::NodeId>& betas) {
  const EncoderSpec& spec = w.spec;
  if (tokens.rows != spec.tokens || tokens.cols != spec.token_dim)
    throw std::invalid_argument("encode_image_tape: token grid does not match the spec");
  if (betas.size() != std::size_t(spec.layers) * std::size_t(spec.heads))
    throw std::invalid_argument("encode_image_tape: one beta node per head required");

  GradTape::NodeId x = tape.constant(tokens);
  const float scale = 1.0f / std::sqrt(float(spec.head_dim));
  for (int layer = 0; layer < spec.layers; ++layer) {
    const LayerWeights& lw = w.layers[std::size_t(layer)];
    const GradTape::NodeId h = tape.layer_norm(x, &lw.ln1.gain, &lw.ln1.bias);
    GradTape::NodeId merged = -1;
    for (int head = 0; head < spec.heads; ++head) {
      const HeadWeights& hw = lw.heads[std::size_t(head)];
      const GradTape::NodeId q = tape.linear(h, &hw.wq, &hw.bq);
      const GradTape::NodeId k = tape.linear(h, &hw.wk, &hw.bk);
      const GradTape::NodeId v = tape.linear(h, &hw.wv, &hw.bv);
      const GradTape::NodeId scores = tape.matmul_nt(q, k, scale);
      const GradTape::NodeId attn = tape.softmax_rows(scores);
      const GradTape::NodeId gated =
          tape.manipulate(attn, betas[std::size_t(layer) * std::size_t(spec.heads) +
                                      std::size_t(head)]);
      const GradTape::NodeId y = tape.matmul(gated, v);
      const GradTape::NodeId yo = tape.linear(y, &hw.wo, nullptr);
      merged = head == 0 ? yo : tape.add(merged, yo);
    }
    merged = tape.add_bias(merged, &lw.attn_bias);
    x = tape.add(x, merged);

    const GradTape::NodeId f = tape.layer_norm(x, &lw.ln2.gain, &lw.ln2.bias);
    GradTape::NodeId inner = tape.linear(f, &lw.w1, &lw.b1);
    inner = tape.gelu(inner);
    const GradTape::NodeId ffn = tape.linear(inner, &lw.w2, &lw.b2);
    x = tape.add(x, ffn);
  }

  GradTape::NodeId cls = tape.row(x, 0);
  cls = tape.layer_norm(cls, &w.ln_final.gain, &w.ln_final.bias);
  const GradTape::NodeId e = tape.linear(cls, &w.proj, nullptr);
  return tape.l2_normalize_row(e);
}

}  // namespace aat
