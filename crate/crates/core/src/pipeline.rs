//! End-to-end model: descriptors, equivariant layers, compression,
//! matching and pose decoding, with training and inference drivers.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{pose_from_tape, DecoderHead, Pooling, PoseVars};
use crate::descriptor::{coords_tensor, descriptor_tensor, DescriptorStack};
use crate::egnn::{record_mean_coord_embedding, EgnnLayer};
use crate::error::{Error, Result};
use crate::geometry::{canonical_normalization, ray_length_order, voxel_downsample, Normalization, PointCloud, RigidTransform, Vec3};
use crate::graph::{build_ball_query, build_knn, NeighborList};
use crate::lrft::Lrft;
use crate::matcher::{
    effective_rank_fallback, record_projection, record_rank_regularizer, record_similarity, verify_submatrices, RankFallback,
    SimilarityMatrix, DET_TOL,
};
use crate::nn::{adam_step, AdamConfig, AdamState, Bound, ParamStore, Tape, Tensor, Var};
use crate::objective::{record_rotation_loss, record_translation_loss, total_loss, LossBreakdown, DEFAULT_BETA};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborMode {
    /// Points within `radius`, nearest first, at most `max_neighbors`.
    Ball { radius: f64, max_neighbors: usize },
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Points per frame after preprocessing (`N`).
    pub num_points: usize,
    pub neighbor_mode: NeighborMode,
    pub descriptor_layers: usize,
    pub egnn_layers: usize,
    pub lrft_rank: usize,
    /// Rows after compression (`N′`).
    pub lrft_out: usize,
    /// Standard deviation of `A`; `None` means `√r`.
    pub lrft_init_std: Option<f64>,
    /// Standard deviation of the noise added to the constant `B` entries.
    pub lrft_b_jitter: f64,
    pub beta: f64,
    /// Target of the Frobenius regularizer; `None` means `r`.
    pub reg_target: Option<f64>,
    pub distance_power: f64,
    pub decoder_hidden: Vec<usize>,
    pub pooling: Pooling,
    pub det_tol: f64,
    /// Voxel size used when a raw cloud has more than `num_points` points.
    pub voxel: f64,
    /// When window verification rejects every row, keep the rows that
    /// passed normalization instead of failing the pair.
    pub keep_rows_when_all_rejected: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_points: 1024,
            neighbor_mode: NeighborMode::Ball {
                radius: 0.3,
                max_neighbors: 16,
            },
            descriptor_layers: 2,
            egnn_layers: 4,
            lrft_rank: 35,
            lrft_out: 128,
            lrft_init_std: None,
            lrft_b_jitter: 1e-4,
            beta: DEFAULT_BETA,
            reg_target: None,
            distance_power: 0.5,
            decoder_hidden: vec![256, 64],
            pooling: Pooling::Mean,
            det_tol: DET_TOL,
            voxel: 0.05,
            keep_rows_when_all_rejected: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument(m));
        let (n, r, m) = (self.num_points, self.lrft_rank, self.lrft_out);
        if n < 2 {
            return bad("num_points must be at least 2".into());
        }
        if r == 0 || r > n.min(m) {
            return bad(alloc::format!("lrft rank {r} must be in 1..=min({n}, {m})"));
        }
        if m < 7 {
            return bad(alloc::format!("lrft output rows {m} must be at least 7 for window verification"));
        }
        if self.descriptor_layers == 0 {
            return bad("descriptor_layers must be at least 1".into());
        }
        match self.neighbor_mode {
            NeighborMode::Ball { radius, max_neighbors } if !(radius > 0.0) || max_neighbors == 0 => {
                return bad("ball query needs a positive radius and neighbor cap".into())
            }
            NeighborMode::Knn { k } if k == 0 || k >= n => return bad(alloc::format!("k must be in 1..{n}")),
            _ => {}
        }
        if !(self.beta >= 0.0) || !(self.distance_power > 0.0) || !(self.voxel > 0.0) || !(self.lrft_b_jitter >= 0.0) {
            return bad("beta, distance_power, voxel and lrft_b_jitter must be non-negative (power and voxel positive)".into());
        }
        Ok(())
    }

    pub fn reg_target(&self) -> f64 {
        self.reg_target.unwrap_or(self.lrft_rank as f64)
    }

    pub fn build_neighbors(&self, pc: &PointCloud) -> Result<NeighborList> {
        match self.neighbor_mode {
            NeighborMode::Ball { radius, max_neighbors } => build_ball_query(pc, radius, max_neighbors),
            NeighborMode::Knn { k } => build_knn(pc, k),
        }
    }
}

/// One frame ready for the network: ordered, normalized points and their graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub cloud: PointCloud,
    pub coords: Tensor,
    pub neighbors: NeighborList,
    pub descriptors: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub src: PreparedFrame,
    pub tar: PreparedFrame,
    pub normalization: Normalization,
    /// Ground truth in the canonical frame, when known.
    pub gt: Option<RigidTransform>,
}

/// Reduces a raw cloud to exactly `n` points ordered by descending ray
/// length from the origin. Clouds with more than `n` points are voxel
/// filtered first (unless they carry descriptors or the filter would leave
/// fewer than `n`), then strided.
pub fn select_points(pc: &PointCloud, n: usize, voxel: f64) -> Result<PointCloud> {
    if pc.len() < n {
        return Err(Error::InvalidArgument(alloc::format!("cloud has {} points, need at least {n}", pc.len())));
    }
    let mut work = pc.clone();
    if work.len() > n && work.descriptors().is_none() {
        let v = voxel_downsample(&work, voxel)?;
        if v.len() >= n {
            work = v;
        }
    }
    let order = ray_length_order(&work, Vec3::ZERO);
    let picked: Vec<usize> = if order.len() == n {
        order
    } else {
        (0..n).map(|k| order[k * order.len() / n]).collect()
    };
    Ok(work.permuted(&picked))
}

impl PreparedFrame {
    fn new(config: &ModelConfig, cloud: PointCloud) -> Result<Self> {
        let neighbors = config.build_neighbors(&cloud)?;
        Ok(Self {
            coords: coords_tensor(&cloud),
            descriptors: descriptor_tensor(&cloud),
            neighbors,
            cloud,
        })
    }
}

/// Orders, normalizes (by the source) and builds graphs for a raw pair.
/// `gt` maps raw source onto raw target.
pub fn prepare_pair(config: &ModelConfig, src: &PointCloud, tar: &PointCloud, gt: Option<&RigidTransform>) -> Result<PreparedPair> {
    let src = select_points(src, config.num_points, config.voxel)?;
    let tar = select_points(tar, config.num_points, config.voxel)?;
    let normalization = canonical_normalization(&src)?;
    Ok(PreparedPair {
        src: PreparedFrame::new(config, normalization.apply_cloud(&src))?,
        tar: PreparedFrame::new(config, normalization.apply_cloud(&tar))?,
        normalization,
        gt: gt.map(|g| normalization.to_canonical(g)),
    })
}

/// Tape handles of one frame's features.
pub struct FrameVars {
    /// `N×35` stacked hidden features and mean coordinate embeddings.
    pub stacked: Var,
    /// `N′×35` after compression.
    pub compressed: Var,
    pub degenerate_edges: usize,
}

pub struct LossVars {
    pub rot: Var,
    pub trans: Var,
    pub reg: Var,
    pub total: Var,
}

pub struct ForwardVars {
    pub src: FrameVars,
    pub tar: FrameVars,
    /// Verified, row-normalized similarity (invalid rows zero).
    pub similarity: Var,
    pub row_valid: Vec<bool>,
    /// Rows that passed window verification (before any fallback).
    pub verified_rows: usize,
    pub pose: PoseVars,
    pub loss: Option<LossVars>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub descriptor: DescriptorStack,
    pub egnn: Vec<EgnnLayer>,
    pub lrft: Lrft,
    pub decoder: DecoderHead,
}

/// Result of registering one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Pose in the source's canonical frame.
    pub normalized: RigidTransform,
    /// Pose between the raw input frames.
    pub raw: RigidTransform,
    pub similarity: SimilarityMatrix,
    pub rank: RankFallback,
    /// Rows that passed window verification; zero means the pose was
    /// decoded from the unverified rows.
    pub verified_rows: usize,
    pub src_provenance: Vec<usize>,
    pub tar_provenance: Vec<usize>,
    pub degenerate_edges: usize,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let descriptor = DescriptorStack::standard(&mut store, config.descriptor_layers, &mut rng)?;
        let egnn = (0..config.egnn_layers)
            .map(|l| EgnnLayer::new(&mut store, &alloc::format!("egnn.{l}"), &mut rng))
            .collect();
        let std = config.lrft_init_std.unwrap_or_else(|| libm::sqrt(config.lrft_rank as f64));
        let lrft = Lrft::init(&mut store, config.num_points, config.lrft_rank, config.lrft_out, std, &mut rng)?;
        if config.lrft_b_jitter > 0.0 {
            let normal = rand_distr::Normal::new(0.0, config.lrft_b_jitter).expect("validated jitter");
            for v in store.get_mut(lrft.b).data_mut() {
                *v += rand_distr::Distribution::sample(&normal, &mut rng);
            }
        }
        let decoder = DecoderHead::new(&mut store, &config.decoder_hidden, config.pooling, &mut rng);
        Ok(Self {
            config,
            store,
            descriptor,
            egnn,
            lrft,
            decoder,
        })
    }

    pub fn prepare(&self, src: &PointCloud, tar: &PointCloud, gt: Option<&RigidTransform>) -> Result<PreparedPair> {
        prepare_pair(&self.config, src, tar, gt)
    }

    pub fn record_frame(&self, tape: &mut Tape, params: &Bound, frame: &PreparedFrame) -> Result<FrameVars> {
        let edges = frame.neighbors.edges();
        let mut h = match &frame.descriptors {
            Some(d) => tape.constant(d.clone()),
            None => self.descriptor.record(tape, params, &frame.coords, &edges)?,
        };
        let mut x = tape.constant(frame.coords.clone());
        let mut degenerate_edges = 0;
        for layer in &self.egnn {
            let (hn, xn, d) = layer.record(tape, params, h, x, &edges, self.config.distance_power)?;
            h = hn;
            x = xn;
            degenerate_edges += d;
        }
        let xm = record_mean_coord_embedding(tape, x, &edges);
        let stacked = tape.concat_cols(&[h, xm]);
        let compressed = self.lrft.record(tape, params, stacked)?;
        Ok(FrameVars {
            stacked,
            compressed,
            degenerate_edges,
        })
    }

    /// Records the full forward pass; the loss terms are recorded when the
    /// pair carries a ground truth.
    pub fn record_forward(&self, tape: &mut Tape, params: &Bound, pair: &PreparedPair) -> Result<ForwardVars> {
        let src = self.record_frame(tape, params, &pair.src)?;
        let tar = self.record_frame(tape, params, &pair.tar)?;
        let sim = record_similarity(tape, src.compressed, tar.compressed)?;
        let unverified = SimilarityMatrix {
            values: tape.value(sim.normalized).clone(),
            row_valid: sim.row_valid,
            effective_rank_target: self.config.lrft_rank,
        };
        let verified = verify_submatrices(&unverified, self.config.det_tol)?;
        let verified_rows = verified.valid_count();
        let row_valid = if verified_rows == 0 && self.config.keep_rows_when_all_rejected {
            unverified.row_valid
        } else {
            verified.row_valid
        };
        let keep = tape.constant(crate::matcher::mask_column(&row_valid));
        let similarity = tape.mul_col(sim.normalized, keep);
        let (ps, pt) = record_projection(tape, similarity, src.compressed, tar.compressed);
        let pose = self.decoder.record(tape, params, ps, pt, &row_valid)?;
        let loss = match &pair.gt {
            Some(gt) => {
                let r_hat = tape.quat_to_mat(pose.quaternion);
                let rot = record_rotation_loss(tape, r_hat, &gt.matrix());
                let trans = record_translation_loss(tape, pose.translation, gt.translation);
                let reg = record_rank_regularizer(tape, similarity, self.config.reg_target());
                let rt = tape.add(rot, trans);
                let wreg = tape.scale(reg, self.config.beta);
                let total = tape.add(rt, wreg);
                Some(LossVars { rot, trans, reg, total })
            }
            None => None,
        };
        Ok(ForwardVars {
            src,
            tar,
            similarity,
            row_valid,
            verified_rows,
            pose,
            loss,
        })
    }

    fn breakdown(&self, tape: &Tape, l: &LossVars) -> Result<LossBreakdown> {
        let v = |x: Var| tape.value(x).item();
        total_loss(v(l.rot), v(l.trans), v(l.reg), self.config.beta)
    }

    /// Loss of a pair with a ground truth.
    pub fn loss(&self, pair: &PreparedPair) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let fwd = self.record_forward(&mut tape, &params, pair)?;
        tape.ensure_finite()?;
        let l = fwd.loss.ok_or_else(|| Error::InvalidArgument("pair has no ground truth".into()))?;
        self.breakdown(&tape, &l)
    }

    /// Loss and one gradient per parameter (zero where unused).
    pub fn loss_and_grads(&self, pair: &PreparedPair) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, true);
        let fwd = self.record_forward(&mut tape, &params, pair)?;
        let l = fwd.loss.ok_or_else(|| Error::InvalidArgument("pair has no ground truth".into()))?;
        let mut grads = tape.backward(l.total)?;
        let breakdown = self.breakdown(&tape, &l)?;
        let out = params
            .vars()
            .iter()
            .zip(self.store.values())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        Ok((breakdown, out))
    }

    pub fn register(&self, pair: &PreparedPair) -> Result<Registration> {
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape, false);
        let fwd = self.record_forward(&mut tape, &params, pair)?;
        tape.ensure_finite()?;
        let normalized = pose_from_tape(&tape, &fwd.pose)?;
        let similarity = SimilarityMatrix {
            values: tape.value(fwd.similarity).clone(),
            row_valid: fwd.row_valid,
            effective_rank_target: self.config.lrft_rank,
        };
        let rank = effective_rank_fallback(&similarity, self.config.lrft_rank);
        let prov = |f: &FrameVars| crate::data::compute_provenance(tape.value(f.stacked), tape.value(f.compressed));
        Ok(Registration {
            raw: pair.normalization.to_raw(&normalized),
            normalized,
            rank,
            verified_rows: fwd.verified_rows,
            src_provenance: prov(&fwd.src)?,
            tar_provenance: prov(&fwd.tar)?,
            degenerate_edges: fwd.src.degenerate_edges + fwd.tar.degenerate_edges,
            similarity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Pairs whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    /// Global gradient-norm cap; zero disables clipping.
    pub grad_clip: f64,
    /// Seeds the per-epoch pair order; `None` keeps the dataset order.
    pub shuffle_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 1,
            grad_clip: 0.0,
            shuffle_seed: None,
        }
    }
}

/// Mean losses over the pairs of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub rot: f64,
    pub trans: f64,
    pub reg: f64,
    pub total: f64,
    /// Pairs skipped because no similarity row survived or the pose
    /// output underflowed.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub state: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig) -> Self {
        Self {
            config,
            state: AdamState::new(model.store.values()),
            epoch: 0,
        }
    }

    /// Pair order of the next epoch.
    pub fn epoch_order(&self, count: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..count).collect();
        if let Some(seed) = self.config.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(self.epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    fn apply(&mut self, model: &mut Model, grads: &mut [Tensor], count: usize) {
        let inv = 1.0 / count as f64;
        let mut sq = 0.0;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| {
                *v *= inv;
                sq += *v * *v;
            });
        }
        let norm = libm::sqrt(sq);
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let s = self.config.grad_clip / norm;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
        }
        adam_step(model.store.values_mut(), grads, &mut self.state, &self.config.adam);
    }

    /// One pass over `pairs`; returns the mean pre-update losses.
    pub fn train_epoch(&mut self, model: &mut Model, pairs: &[PreparedPair]) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let batch = self.config.batch_size.max(1);
        let mut sums = [0.0; 4];
        let mut used = 0usize;
        let mut skipped = 0usize;
        let mut acc: Option<Vec<Tensor>> = None;
        let mut in_batch = 0usize;
        for idx in self.epoch_order(pairs.len()) {
            let (loss, grads) = match model.loss_and_grads(&pairs[idx]) {
                Ok(v) => v,
                Err(Error::NoValidRows) | Err(Error::QuaternionUnderflow(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => {
                    return Err(Error::Diverged {
                        epoch,
                        pair: idx,
                        detail: e.to_string(),
                    })
                }
            };
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    pair: idx,
                    detail: "non-finite loss or gradient".to_string(),
                });
            }
            for (s, v) in sums.iter_mut().zip([loss.rot, loss.trans, loss.reg, loss.total]) {
                *s += v;
            }
            used += 1;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => a.iter_mut().zip(&grads).for_each(|(x, g)| x.add_assign(g)),
            }
            in_batch += 1;
            if in_batch == batch {
                let mut g = acc.take().expect("accumulated gradients");
                self.apply(model, &mut g, in_batch);
                in_batch = 0;
            }
        }
        if let Some(mut g) = acc.take() {
            self.apply(model, &mut g, in_batch);
        }
        self.epoch = epoch;
        let d = used.max(1) as f64;
        Ok(EpochStats {
            epoch,
            rot: sums[0] / d,
            trans: sums[1] / d,
            reg: sums[2] / d,
            total: sums[3] / d,
            skipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene_pair, GeneratorConfig};

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_points: 64,
            neighbor_mode: NeighborMode::Knn { k: 6 },
            egnn_layers: 2,
            lrft_rank: 8,
            lrft_out: 16,
            decoder_hidden: vec![32],
            ..ModelConfig::default()
        }
    }

    fn small_pair(seed: u64) -> (PointCloud, PointCloud, RigidTransform) {
        let g = GeneratorConfig {
            num_points: 64,
            ..GeneratorConfig::default()
        };
        let p = generate_scene_pair(&g, seed).unwrap();
        (p.src, p.tar, p.gt)
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            lrft_rank: 200,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            lrft_out: 5,
            lrft_rank: 5,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn select_points_orders_and_strides() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let pc = PointCloud::new(pts).unwrap();
        let out = select_points(&pc, 5, 1e-6).unwrap();
        let xs: Vec<f64> = out.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, [9.0, 7.0, 5.0, 3.0, 1.0]);
        assert!(select_points(&pc, 11, 0.1).is_err());
        let merged = select_points(&pc, 4, 2.0).unwrap();
        assert_eq!(merged.len(), 4);
    }

    #[test]
    fn forward_produces_unit_pose_and_finite_loss() {
        let model = Model::new(small_config(), 1).unwrap();
        let (s, t, gt) = small_pair(2);
        let pair = model.prepare(&s, &t, Some(&gt)).unwrap();
        let l = model.loss(&pair).unwrap();
        assert!(l.total.is_finite() && l.total > 0.0);
        let reg = model.register(&pair).unwrap();
        assert!((reg.normalized.rotation.norm() - 1.0).abs() < 1e-12);
        assert_eq!(reg.src_provenance.len(), 16);
        assert!(reg.src_provenance.iter().all(|&i| i < 64));
        let back = pair.normalization.to_canonical(&reg.raw);
        for (a, b) in back.to_array().iter().zip(reg.normalized.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_b_leaves_every_row_identical() {
        let cfg = ModelConfig {
            lrft_b_jitter: 0.0,
            keep_rows_when_all_rejected: false,
            ..small_config()
        };
        let model = Model::new(cfg, 1).unwrap();
        let (s, t, gt) = small_pair(2);
        let pair = model.prepare(&s, &t, Some(&gt)).unwrap();
        assert_eq!(model.loss(&pair), Err(Error::NoValidRows));
    }

    #[test]
    fn training_reduces_loss_on_one_pair() {
        let mut model = Model::new(small_config(), 3).unwrap();
        let (s, t, gt) = small_pair(4);
        let pairs = [model.prepare(&s, &t, Some(&gt)).unwrap()];
        let mut trainer = Trainer::new(
            &model,
            TrainConfig {
                adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
                ..TrainConfig::default()
            },
        );
        let first = trainer.train_epoch(&mut model, &pairs).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = trainer.train_epoch(&mut model, &pairs).unwrap();
        }
        assert_eq!(last.epoch, 31);
        assert!(last.rot + last.trans < 0.5 * (first.rot + first.trans), "{first:?} {last:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut model = Model::new(small_config(), 5).unwrap();
            let pairs: Vec<PreparedPair> = (0..3)
                .map(|s| {
                    let (a, b, g) = small_pair(s);
                    model.prepare(&a, &b, Some(&g)).unwrap()
                })
                .collect();
            let mut trainer = Trainer::new(
                &model,
                TrainConfig {
                    shuffle_seed: Some(9),
                    batch_size: 2,
                    ..TrainConfig::default()
                },
            );
            let a = trainer.train_epoch(&mut model, &pairs).unwrap();
            let b = trainer.train_epoch(&mut model, &pairs).unwrap();
            (a.total.to_bits(), b.total.to_bits(), model.store)
        };
        assert_eq!(run(), run());
    }
}
