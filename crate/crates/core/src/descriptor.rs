//! Learned per-point descriptors from neighborhood offsets, or ingestion of
//! externally computed descriptors.
//!
//! Layer `l` maps node `i` to the mean over its neighbors `k` of
//! `f_l(h_k, x_k − x_i)`. The first layer has no incoming feature and sees the
//! relative coordinates only.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, DESCRIPTOR_DIM};
use crate::graph::{EdgeIndex, NeighborList};
use crate::nn::{Activation, Bound, MlpLayer, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStack {
    layers: Vec<MlpLayer>,
}

impl DescriptorStack {
    /// Checks that layer 0 consumes 3 inputs and layer `l > 0` consumes the
    /// previous width plus 3.
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("descriptor stack needs at least one layer".into()));
        }
        let mut expect = 3;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != expect {
                return Err(Error::InvalidArgument(alloc::format!(
                    "descriptor layer {i} takes {} inputs, expected {expect}",
                    l.in_dim
                )));
            }
            expect = l.out_dim + 3;
        }
        Ok(Self { layers })
    }

    /// `num_layers` layers of width 32: ReLU on all but the last.
    pub fn standard<R: Rng>(store: &mut ParamStore, num_layers: usize, rng: &mut R) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|i| {
                let in_dim = if i == 0 { 3 } else { DESCRIPTOR_DIM + 3 };
                let act = if i + 1 == num_layers { Activation::None } else { Activation::Relu };
                MlpLayer::kaiming(store, &alloc::format!("descriptor.{i}"), in_dim, DESCRIPTOR_DIM, act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Records the stack for `coords` (`N×3`) on the given edges.
    pub fn record(&self, tape: &mut Tape, params: &Bound, coords: &Tensor, edges: &EdgeIndex) -> Result<Var> {
        if let Some(i) = edges.inv_degree.iter().position(|&d| d == 0.0) {
            return Err(Error::EmptyNeighborhood(i));
        }
        let n = coords.rows();
        let rel = relative_offsets(coords, edges);
        let rel = tape.constant(rel);
        let inv_deg = tape.constant(Tensor::column(&edges.inv_degree));
        let mut h: Option<Var> = None;
        for layer in &self.layers {
            let input = match h {
                None => rel,
                Some(h) => {
                    let hk = tape.gather(h, edges.neighbors.clone());
                    tape.concat_cols(&[hk, rel])
                }
            };
            let per_edge = layer.record(tape, params, input)?;
            let summed = tape.segment_sum(per_edge, edges.centers.clone(), n);
            h = Some(tape.mul_col(summed, inv_deg));
        }
        Ok(h.expect("non-empty stack"))
    }
}

/// `x_k − x_i` for every edge `(i, k)`.
pub fn relative_offsets(coords: &Tensor, edges: &EdgeIndex) -> Tensor {
    let mut rel = Tensor::zeros(edges.centers.len(), 3);
    for (e, (&i, &k)) in edges.centers.iter().zip(edges.neighbors.iter()).enumerate() {
        for c in 0..3 {
            rel.set(e, c, coords.get(k, c) - coords.get(i, c));
        }
    }
    rel
}

pub fn coords_tensor(pc: &PointCloud) -> Tensor {
    let mut t = Tensor::zeros(pc.len(), 3);
    for (r, p) in pc.points().iter().enumerate() {
        t.row_slice_mut(r).copy_from_slice(&p.to_array());
    }
    t
}

/// Descriptor matrix (`N×out`) for `pc` on neighbor structure `nbrs`.
pub fn compute_descriptors(store: &ParamStore, pc: &PointCloud, nbrs: &NeighborList, stack: &DescriptorStack) -> Result<Tensor> {
    if nbrs.node_count() != pc.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "neighbor list covers {} nodes, cloud has {}",
            nbrs.node_count(),
            pc.len()
        )));
    }
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let out = stack.record(&mut tape, &params, &coords_tensor(pc), &nbrs.edges())?;
    tape.ensure_finite()?;
    Ok(tape.value(out).clone())
}

/// Attaches externally computed descriptors (row-major `count×dim`).
pub fn ingest_descriptors(pc: &PointCloud, dim: usize, values: &[f32]) -> Result<PointCloud> {
    if dim != DESCRIPTOR_DIM {
        return Err(Error::InvalidArgument(alloc::format!(
            "descriptor dimension {dim} is not supported, expected {DESCRIPTOR_DIM}"
        )));
    }
    if !values.len().is_multiple_of(dim) || values.len() / dim != pc.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} descriptor rows for {} points",
            values.len() / dim,
            pc.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("descriptor values must be finite".into()));
    }
    let rows = values
        .chunks_exact(dim)
        .map(|c| {
            let mut row = [0.0f32; DESCRIPTOR_DIM];
            row.copy_from_slice(c);
            row
        })
        .collect();
    pc.clone().with_descriptors(rows)
}

/// Attached descriptors widened to `f64`, if any.
pub fn descriptor_tensor(pc: &PointCloud) -> Option<Tensor> {
    pc.descriptors().map(|rows| {
        Tensor::from_vec(
            rows.len(),
            DESCRIPTOR_DIM,
            rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quaternion, RigidTransform, Vec3};
    use crate::graph::build_knn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Per-node loop reference of the layered mean aggregation.
    fn oracle(store: &ParamStore, stack: &DescriptorStack, pc: &PointCloud, nbrs: &NeighborList) -> Vec<Vec<f64>> {
        let pts = pc.points();
        let mut h: Vec<Vec<f64>> = alloc::vec![Vec::new(); pts.len()];
        for layer in stack.layers() {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            let mut next = Vec::new();
            for i in 0..pts.len() {
                let mut acc = alloc::vec![0.0; layer.out_dim];
                for &k in nbrs.neighbors(i) {
                    let mut input = h[k].clone();
                    let d = pts[k] - pts[i];
                    input.extend_from_slice(&[d.x, d.y, d.z]);
                    for o in 0..layer.out_dim {
                        let mut s = b.get(0, o);
                        for (j, v) in input.iter().enumerate() {
                            s += w.get(o, j) * v;
                        }
                        if layer.activation == Activation::Relu {
                            s = s.max(0.0);
                        }
                        acc[o] += s;
                    }
                }
                let n = nbrs.degree(i) as f64;
                next.push(acc.into_iter().map(|v| v / n).collect());
            }
            h = next;
        }
        h
    }

    #[test]
    fn symmetric_neighborhood_averages_to_zero() {
        let mut store = ParamStore::new();
        let l = MlpLayer::with_values(&mut store, "id", Tensor::identity(3), Tensor::zeros(1, 3), Activation::None);
        let stack = DescriptorStack::new(alloc::vec![l]).unwrap();
        let pc = PointCloud::new(alloc::vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]).unwrap();
        let nbrs = NeighborList::from_lists(&[alloc::vec![1, 2], alloc::vec![0], alloc::vec![0]], 2).unwrap();
        let d = compute_descriptors(&store, &pc, &nbrs, &stack).unwrap();
        assert_eq!(d.row_slice(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn coincident_points_give_constant_descriptor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let stack = DescriptorStack::standard(&mut store, 2, &mut rng).unwrap();
        let b0 = stack.layers()[0].bias;
        store.get_mut(b0).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let pc = PointCloud::new(alloc::vec![Vec3::new(0.5, 0.5, 0.5); 5]).unwrap();
        let nbrs = build_knn(&pc, 2).unwrap();
        let d = compute_descriptors(&store, &pc, &nbrs, &stack).unwrap();
        for r in 1..5 {
            assert_eq!(d.row_slice(r), d.row_slice(0));
        }
    }

    #[test]
    fn matches_per_node_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let stack = DescriptorStack::standard(&mut store, 2, &mut rng).unwrap();
        let pc = random_cloud(60, &mut rng);
        let nbrs = build_knn(&pc, 6).unwrap();
        let d = compute_descriptors(&store, &pc, &nbrs, &stack).unwrap();
        let o = oracle(&store, &stack, &pc, &nbrs);
        for i in 0..pc.len() {
            for c in 0..DESCRIPTOR_DIM {
                assert!((d.get(i, c) - o[i][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_invariant_but_rotation_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let stack = DescriptorStack::standard(&mut store, 2, &mut rng).unwrap();
        let pc = random_cloud(40, &mut rng);
        let nbrs = build_knn(&pc, 5).unwrap();
        let base = compute_descriptors(&store, &pc, &nbrs, &stack).unwrap();
        let shifted = pc.transformed(&RigidTransform::translation(Vec3::new(4.0, -8.0, 2.0)));
        let moved = compute_descriptors(&store, &shifted, &nbrs, &stack).unwrap();
        for (a, b) in base.data().iter().zip(moved.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let rot = RigidTransform::new(Quaternion::new(0.8, 0.3, -0.4, 0.2), Vec3::ZERO).unwrap();
        let rotated = compute_descriptors(&store, &pc.transformed(&rot), &nbrs, &stack).unwrap();
        let diff = base.data().iter().zip(rotated.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn permutation_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let stack = DescriptorStack::standard(&mut store, 2, &mut rng).unwrap();
        let pc = random_cloud(30, &mut rng);
        let nbrs = build_knn(&pc, 4).unwrap();
        let base = compute_descriptors(&store, &pc, &nbrs, &stack).unwrap();
        let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
        let mut inv = alloc::vec![0; 30];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pp = pc.permuted(&perm);
        let lists: Vec<Vec<usize>> = perm.iter().map(|&old| nbrs.neighbors(old).iter().map(|&k| inv[k]).collect()).collect();
        let pn = NeighborList::from_lists(&lists, 4).unwrap();
        let out = compute_descriptors(&store, &pp, &pn, &stack).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..DESCRIPTOR_DIM {
                assert!((out.get(new, c) - base.get(old, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let stack = DescriptorStack::standard(&mut store, 2, &mut rng).unwrap();
        let pc = PointCloud::new(alloc::vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let nbrs = NeighborList::from_lists(&[alloc::vec![1], alloc::vec![]], 1).unwrap();
        assert_eq!(compute_descriptors(&store, &pc, &nbrs, &stack), Err(Error::EmptyNeighborhood(1)));
    }

    #[test]
    fn ingest_checks_shape() {
        let pc = PointCloud::new(alloc::vec![Vec3::ZERO; 4]).unwrap();
        let ok = ingest_descriptors(&pc, 32, &[0.5f32; 4 * 32]).unwrap();
        assert_eq!(ok.descriptors().unwrap().len(), 4);
        assert!(ingest_descriptors(&pc, 32, &[0.5f32; 5 * 32]).is_err());
        assert!(ingest_descriptors(&pc, 16, &[0.5f32; 4 * 16]).is_err());
        let t = descriptor_tensor(&ok).unwrap();
        assert_eq!(t.shape(), [4, 32]);
    }
}
