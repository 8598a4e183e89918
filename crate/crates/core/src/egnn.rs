//! SE(3)-equivariant graph convolution.
//!
//! Each layer computes, per edge `(i, k)`:
//!
//! ```text
//! raw_ik    = φ_m(h_i, h_k, ‖x_k − x_i‖^p)          9 invariant scalars
//! coeff_ik  = φ_x(raw_ik)                            3 invariant scalars
//! F_ik      = (a, b, c) local frame of (x_i, x_k)
//! x_i'      = x_i + 1/|N(i)| Σ_k exp(−‖x_k − x_i‖) (coeff·F_ik)
//! h_i'      = φ_h(h_i, Σ_k raw_ik)
//! ```
//!
//! Frames are built from coordinates relative to the current centroid, so
//! the coordinate update commutes with rotations and translations. Edges
//! whose centered endpoints are collinear with the centroid use a fallback
//! frame, which is not rotation-equivariant.

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Vec3, DESCRIPTOR_DIM};
use crate::graph::{EdgeIndex, NeighborList};
use crate::nn::{Bound, Mlp, ParamStore, Tape, Tensor, Var};

/// Raw message width.
pub const MESSAGE_DIM: usize = 9;
/// Hidden width inside φ_m, φ_x and φ_h.
pub const EGNN_HIDDEN: usize = 32;
/// Cross products shorter than this select the fallback frame.
pub const DEGENERATE_CROSS: f64 = 1e-9;

/// Orthonormal right-handed triad attached to an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
}

/// Unit axis along the smallest-magnitude component of `a`.
fn fallback_axis(a: Vec3) -> Vec3 {
    let (ax, ay, az) = (libm::fabs(a.x), libm::fabs(a.y), libm::fabs(a.z));
    if ax <= ay && ax <= az {
        Vec3::new(1.0, 0.0, 0.0)
    } else if ay <= az {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    }
}

/// Frame of the pair `(xi, xk)`: `a` along `xi − xk`, `b` along `xi × xk`,
/// `c = a × b`. Returns the frame and whether the fallback was used.
pub fn build_local_frame(xi: Vec3, xk: Vec3) -> Result<(LocalFrame, bool)> {
    let d = xi - xk;
    let dn = d.norm();
    if !(dn > 1e-12) {
        return Err(Error::InvalidArgument("frame endpoints coincide".into()));
    }
    let a = d.scale(1.0 / dn);
    let cr = xi.cross(xk);
    let (b_raw, degenerate) = if cr.norm() < DEGENERATE_CROSS {
        (a.cross(fallback_axis(a)), true)
    } else {
        (cr, false)
    };
    let b = b_raw.scale(1.0 / b_raw.norm());
    Ok((LocalFrame { a, b, c: a.cross(b) }, degenerate))
}

/// Invariant edge message: nine raw scalars and the three frame coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMessage {
    pub raw: [f64; MESSAGE_DIM],
    pub coeffs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgnnLayer {
    pub phi_m: Mlp,
    pub phi_x: Mlp,
    pub phi_h: Mlp,
}

impl EgnnLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rng: &mut R) -> Self {
        let d = DESCRIPTOR_DIM;
        Self {
            phi_m: Mlp::kaiming(store, &alloc::format!("{name}.phi_m"), &[2 * d + 1, EGNN_HIDDEN, MESSAGE_DIM], rng),
            phi_x: Mlp::kaiming(store, &alloc::format!("{name}.phi_x"), &[MESSAGE_DIM, EGNN_HIDDEN, 3], rng),
            phi_h: Mlp::kaiming(store, &alloc::format!("{name}.phi_h"), &[d + MESSAGE_DIM, EGNN_HIDDEN, d], rng),
        }
    }

    /// Records one layer. Returns updated `(h, x)` and the number of edges
    /// that used the fallback frame.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &Bound,
        h: Var,
        x: Var,
        edges: &EdgeIndex,
        distance_power: f64,
    ) -> Result<(Var, Var, usize)> {
        let n = tape.value(x).rows();
        check_edges(tape.value(x), edges)?;
        let msg = record_messages(tape, params, self, h, x, edges, distance_power)?;
        let (frames, degenerate) = record_frames(tape, x, edges);
        let x_new = record_coordinate_update(tape, x, &msg, &frames, edges, n);
        let h_new = record_hidden_update(tape, params, self, h, msg.raw, edges, n)?;
        Ok((h_new, x_new, degenerate))
    }
}

fn check_edges(x: &Tensor, edges: &EdgeIndex) -> Result<()> {
    if let Some(i) = edges.inv_degree.iter().position(|&d| d == 0.0) {
        return Err(Error::EmptyNeighborhood(i));
    }
    for (&i, &k) in edges.centers.iter().zip(edges.neighbors.iter()) {
        let d2: f64 = (0..3).map(|c| (x.get(i, c) - x.get(k, c)) * (x.get(i, c) - x.get(k, c))).sum();
        if !(d2 > 1e-24) {
            return Err(Error::CoincidentEdge(i, k));
        }
    }
    Ok(())
}

/// Tape handles of the per-edge messages.
pub struct MessageVars {
    pub raw: Var,
    pub coeffs: Var,
    /// `‖x_k − x_i‖` per edge (`E×1`).
    pub dist: Var,
}

/// Tape handles of the per-edge frame axes (`E×3` each).
pub struct FrameVars {
    pub a: Var,
    pub b: Var,
    pub c: Var,
}

pub fn record_messages(
    tape: &mut Tape,
    params: &Bound,
    layer: &EgnnLayer,
    h: Var,
    x: Var,
    edges: &EdgeIndex,
    distance_power: f64,
) -> Result<MessageVars> {
    let hi = tape.gather(h, edges.centers.clone());
    let hk = tape.gather(h, edges.neighbors.clone());
    let xi = tape.gather(x, edges.centers.clone());
    let xk = tape.gather(x, edges.neighbors.clone());
    let delta = tape.sub(xk, xi);
    let dist = tape.row_norm(delta);
    let dfeat = tape.powf(dist, distance_power);
    let input = tape.concat_cols(&[hi, hk, dfeat]);
    let raw = layer.phi_m.record(tape, params, input)?;
    let coeffs = layer.phi_x.record(tape, params, raw)?;
    Ok(MessageVars { raw, coeffs, dist })
}

pub fn record_frames(tape: &mut Tape, x: Var, edges: &EdgeIndex) -> (FrameVars, usize) {
    let n = tape.value(x).rows();
    let mean_w = tape.constant(Tensor::filled(1, n, 1.0 / n as f64));
    let centroid = tape.matmul(mean_w, x);
    let xc = tape.sub_row(x, centroid);
    let xi = tape.gather(xc, edges.centers.clone());
    let xk = tape.gather(xc, edges.neighbors.clone());
    let d = tape.sub(xi, xk);
    let dn = tape.row_norm(d);
    let inv_dn = tape.recip(dn);
    let a = tape.mul_col(d, inv_dn);
    let cr = tape.cross(xi, xk);
    let crn = tape.row_norm(cr);
    let mask: Vec<bool> = tape.value(crn).data().iter().map(|&v| v < DEGENERATE_CROSS).collect();
    let degenerate = mask.iter().filter(|&&m| m).count();
    let b_raw = if degenerate == 0 {
        cr
    } else {
        let av = tape.value(a);
        let mut axes = Tensor::zeros(av.rows(), 3);
        for r in 0..av.rows() {
            let e = fallback_axis(Vec3::new(av.get(r, 0), av.get(r, 1), av.get(r, 2)));
            axes.row_slice_mut(r).copy_from_slice(&e.to_array());
        }
        let axes = tape.constant(axes);
        let fb = tape.cross(a, axes);
        let mask: Rc<[bool]> = mask.into();
        tape.select(mask, fb, cr)
    };
    let bn = tape.row_norm(b_raw);
    let inv_bn = tape.recip(bn);
    let b = tape.mul_col(b_raw, inv_bn);
    let c = tape.cross(a, b);
    (FrameVars { a, b, c }, degenerate)
}

pub fn record_coordinate_update(
    tape: &mut Tape,
    x: Var,
    msg: &MessageVars,
    frames: &FrameVars,
    edges: &EdgeIndex,
    n: usize,
) -> Var {
    let ca = tape.slice_cols(msg.coeffs, 0, 1);
    let cb = tape.slice_cols(msg.coeffs, 1, 1);
    let cc = tape.slice_cols(msg.coeffs, 2, 1);
    let va = tape.mul_col(frames.a, ca);
    let vb = tape.mul_col(frames.b, cb);
    let vc = tape.mul_col(frames.c, cc);
    let vab = tape.add(va, vb);
    let v = tape.add(vab, vc);
    let neg = tape.scale(msg.dist, -1.0);
    let w = tape.exp(neg);
    let weighted = tape.mul_col(v, w);
    let summed = tape.segment_sum(weighted, edges.centers.clone(), n);
    let inv_deg = tape.constant(Tensor::column(&edges.inv_degree));
    let update = tape.mul_col(summed, inv_deg);
    tape.add(x, update)
}

pub fn record_hidden_update(
    tape: &mut Tape,
    params: &Bound,
    layer: &EgnnLayer,
    h: Var,
    raw: Var,
    edges: &EdgeIndex,
    n: usize,
) -> Result<Var> {
    let msum = tape.segment_sum(raw, edges.centers.clone(), n);
    let input = tape.concat_cols(&[h, msum]);
    layer.phi_h.record(tape, params, input)
}

/// Nodes carry invariant hidden features `h` (`N×32`) and equivariant
/// coordinate embeddings `x` (`N×3`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    pub node_features: Tensor,
    pub coord_embeddings: Tensor,
    pub neighbors: NeighborList,
}

impl FeatureGraph {
    pub fn new(node_features: Tensor, coord_embeddings: Tensor, neighbors: NeighborList) -> Result<Self> {
        let n = neighbors.node_count();
        if node_features.rows() != n || coord_embeddings.rows() != n || coord_embeddings.cols() != 3 {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("{n} rows, coordinates {n}x3"),
                found: alloc::format!(
                    "features {}x{}, coordinates {}x{}",
                    node_features.rows(),
                    node_features.cols(),
                    coord_embeddings.rows(),
                    coord_embeddings.cols()
                ),
            });
        }
        Ok(Self {
            node_features,
            coord_embeddings,
            neighbors,
        })
    }

    fn coord(&self, i: usize) -> Vec3 {
        let r = self.coord_embeddings.row_slice(i);
        Vec3::new(r[0], r[1], r[2])
    }
}

/// Message of a single edge evaluated on plain values.
pub fn compute_message(
    store: &ParamStore,
    hi: &[f64],
    hk: &[f64],
    xi: Vec3,
    xk: Vec3,
    layer: &EgnnLayer,
    distance_power: f64,
) -> Result<EdgeMessage> {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let h = tape.constant(Tensor::from_rows(&[hi, hk]));
    let x = tape.constant(Tensor::from_rows(&[xi.to_array(), xk.to_array()]));
    let edges = EdgeIndex {
        centers: alloc::vec![0usize].into(),
        neighbors: alloc::vec![1usize].into(),
        inv_degree: alloc::vec![1.0, 0.0],
    };
    let m = record_messages(&mut tape, &params, layer, h, x, &edges, distance_power)?;
    tape.ensure_finite()?;
    let mut out = EdgeMessage {
        raw: [0.0; MESSAGE_DIM],
        coeffs: [0.0; 3],
    };
    out.raw.copy_from_slice(tape.value(m.raw).data());
    out.coeffs.copy_from_slice(tape.value(m.coeffs).data());
    Ok(out)
}

/// Messages for every edge of `graph`, in edge order.
pub fn compute_messages(store: &ParamStore, graph: &FeatureGraph, layer: &EgnnLayer, distance_power: f64) -> Result<Vec<EdgeMessage>> {
    let edges = graph.neighbors.edges();
    check_edges(&graph.coord_embeddings, &edges)?;
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let h = tape.constant(graph.node_features.clone());
    let x = tape.constant(graph.coord_embeddings.clone());
    let m = record_messages(&mut tape, &params, layer, h, x, &edges, distance_power)?;
    tape.ensure_finite()?;
    let (raw, coeffs) = (tape.value(m.raw), tape.value(m.coeffs));
    Ok((0..raw.rows())
        .map(|e| {
            let mut msg = EdgeMessage {
                raw: [0.0; MESSAGE_DIM],
                coeffs: [0.0; 3],
            };
            msg.raw.copy_from_slice(raw.row_slice(e));
            msg.coeffs.copy_from_slice(coeffs.row_slice(e));
            msg
        })
        .collect())
}

/// Frames for every edge, built on centroid-relative coordinates.
pub fn compute_frames(graph: &FeatureGraph) -> Result<Vec<(LocalFrame, bool)>> {
    let n = graph.neighbors.node_count();
    let centroid = (0..n).fold(Vec3::ZERO, |acc, i| acc + graph.coord(i)).scale(1.0 / n as f64);
    let mut out = Vec::with_capacity(graph.neighbors.edge_count());
    for i in 0..n {
        for &k in graph.neighbors.neighbors(i) {
            out.push(build_local_frame(graph.coord(i) - centroid, graph.coord(k) - centroid).map_err(|_| Error::CoincidentEdge(i, k))?);
        }
    }
    Ok(out)
}

/// `x_i + 1/|N(i)| Σ_k exp(−‖x_k − x_i‖)(c_a a + c_b b + c_c c)`.
pub fn update_coordinates(graph: &FeatureGraph, messages: &[EdgeMessage], frames: &[LocalFrame]) -> Result<Tensor> {
    let e_count = graph.neighbors.edge_count();
    if messages.len() != e_count || frames.len() != e_count {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} messages and {} frames for {e_count} edges",
            messages.len(),
            frames.len()
        )));
    }
    let mut out = graph.coord_embeddings.clone();
    let mut e = 0;
    for i in 0..graph.neighbors.node_count() {
        let nb = graph.neighbors.neighbors(i);
        let mut acc = Vec3::ZERO;
        for &k in nb {
            let (m, f) = (&messages[e], &frames[e]);
            let w = libm::exp(-(graph.coord(k) - graph.coord(i)).norm());
            let v = f.a.scale(m.coeffs[0]) + f.b.scale(m.coeffs[1]) + f.c.scale(m.coeffs[2]);
            acc = acc + v.scale(w);
            e += 1;
        }
        if !nb.is_empty() {
            let upd = acc.scale(1.0 / nb.len() as f64);
            for (c, v) in upd.to_array().iter().enumerate() {
                out.set(i, c, out.get(i, c) + v);
            }
        }
    }
    Ok(out)
}

/// `φ_h(h_i, Σ_k raw_ik)` for every node.
pub fn update_hidden(store: &ParamStore, graph: &FeatureGraph, messages: &[EdgeMessage], layer: &EgnnLayer) -> Result<Tensor> {
    let n = graph.neighbors.node_count();
    if messages.len() != graph.neighbors.edge_count() {
        return Err(Error::InvalidArgument("one message per edge required".into()));
    }
    let mut sums = Tensor::zeros(n, MESSAGE_DIM);
    let mut e = 0;
    for i in 0..n {
        for _ in graph.neighbors.neighbors(i) {
            for (s, v) in sums.row_slice_mut(i).iter_mut().zip(&messages[e].raw) {
                *s += v;
            }
            e += 1;
        }
    }
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let h = tape.constant(graph.node_features.clone());
    let m = tape.constant(sums);
    let input = tape.concat_cols(&[h, m]);
    let out = layer.phi_h.record(&mut tape, &params, input)?;
    tape.ensure_finite()?;
    Ok(tape.value(out).clone())
}

/// Output of [`run_egnn_stack`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackOutput {
    pub graph: FeatureGraph,
    /// Fallback-frame edges summed over layers.
    pub degenerate_edges: usize,
}

/// Applies `layers` in order on the fixed neighbor structure of `graph`.
pub fn run_egnn_stack(store: &ParamStore, graph: &FeatureGraph, layers: &[EgnnLayer], distance_power: f64) -> Result<StackOutput> {
    let edges = graph.neighbors.edges();
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let mut h = tape.constant(graph.node_features.clone());
    let mut x = tape.constant(graph.coord_embeddings.clone());
    let mut degenerate = 0;
    for layer in layers {
        let (hn, xn, d) = layer.record(&mut tape, &params, h, x, &edges, distance_power)?;
        h = hn;
        x = xn;
        degenerate += d;
    }
    tape.ensure_finite()?;
    Ok(StackOutput {
        graph: FeatureGraph {
            node_features: tape.value(h).clone(),
            coord_embeddings: tape.value(x).clone(),
            neighbors: graph.neighbors.clone(),
        },
        degenerate_edges: degenerate,
    })
}

/// Mean of neighbor coordinate embeddings per node (`N×3`).
pub fn mean_coord_embedding(graph: &FeatureGraph) -> Tensor {
    let n = graph.neighbors.node_count();
    let mut out = Tensor::zeros(n, 3);
    for i in 0..n {
        let nb = graph.neighbors.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let s = nb.iter().fold(Vec3::ZERO, |acc, &k| acc + graph.coord(k)).scale(1.0 / nb.len() as f64);
        out.row_slice_mut(i).copy_from_slice(&s.to_array());
    }
    out
}

/// Tape version of [`mean_coord_embedding`].
pub fn record_mean_coord_embedding(tape: &mut Tape, x: Var, edges: &EdgeIndex) -> Var {
    let n = tape.value(x).rows();
    let xk = tape.gather(x, edges.neighbors.clone());
    let s = tape.segment_sum(xk, edges.centers.clone(), n);
    let inv = tape.constant(Tensor::column(&edges.inv_degree));
    tape.mul_col(s, inv)
}
