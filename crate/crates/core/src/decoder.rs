//! Pose head: pools the concatenated projected features over valid rows and
//! regresses a unit quaternion and a translation.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, RigidTransform, Vec3};
use crate::lrft::STACKED_DIM;
use crate::nn::{Bound, Mlp, ParamStore, Tape, Tensor, Var};

/// Raw quaternion outputs with a norm below this are rejected.
pub const QUAT_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl core::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown pooling '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHead {
    pub mlp: Mlp,
    pub pooling: Pooling,
}

/// Tape handles of a decoded pose.
pub struct PoseVars {
    /// `1×4` unit quaternion with `w ≥ 0`.
    pub quaternion: Var,
    /// `1×3`
    pub translation: Var,
    /// `1×70` pooled features.
    pub pooled: Var,
}

impl DecoderHead {
    /// `70 → hidden… → 7`, ReLU between layers.
    pub fn new<R: Rng>(store: &mut ParamStore, hidden: &[usize], pooling: Pooling, rng: &mut R) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(2 * STACKED_DIM);
        widths.extend_from_slice(hidden);
        widths.push(7);
        Self {
            mlp: Mlp::kaiming(store, "decoder", &widths, rng),
            pooling,
        }
    }

    pub fn standard<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        Self::new(store, &[256, 64], Pooling::Mean, rng)
    }

    pub fn record(&self, tape: &mut Tape, params: &Bound, proj_src: Var, proj_tar: Var, row_valid: &[bool]) -> Result<PoseVars> {
        let n = tape.value(proj_src).rows();
        if tape.value(proj_tar).rows() != n || row_valid.len() != n {
            return Err(Error::InvalidArgument("projected features and mask disagree in length".into()));
        }
        let v = row_valid.iter().filter(|&&b| b).count();
        if v == 0 {
            return Err(Error::NoValidRows);
        }
        let cat = tape.concat_cols(&[proj_src, proj_tar]);
        let pooled = match self.pooling {
            Pooling::Mean => {
                let w: Vec<f64> = row_valid.iter().map(|&b| if b { 1.0 / v as f64 } else { 0.0 }).collect();
                let w = tape.constant(Tensor::row(&w));
                tape.matmul(w, cat)
            }
            Pooling::Max => tape.col_max_masked(cat, row_valid),
        };
        let out = self.mlp.record(tape, params, pooled)?;
        let q_raw = tape.slice_cols(out, 0, 4);
        let norm = tape.row_norm(q_raw);
        let nv = tape.value(norm).item();
        if !(nv >= QUAT_NORM_FLOOR) {
            return Err(Error::QuaternionUnderflow(nv));
        }
        let inv = tape.recip(norm);
        let mut quaternion = tape.mul_col(q_raw, inv);
        if tape.value(q_raw).get(0, 0) < 0.0 {
            quaternion = tape.scale(quaternion, -1.0);
        }
        let translation = tape.slice_cols(out, 4, 3);
        Ok(PoseVars {
            quaternion,
            translation,
            pooled,
        })
    }
}

/// Reads a decoded pose off the tape.
pub fn pose_from_tape(tape: &Tape, pose: &PoseVars) -> Result<RigidTransform> {
    let q = tape.value(pose.quaternion).data();
    let t = tape.value(pose.translation).data();
    RigidTransform::new(Quaternion::new(q[0], q[1], q[2], q[3]), Vec3::new(t[0], t[1], t[2]))
}

/// Plain-value pose decoding.
pub fn decode_pose(store: &ParamStore, head: &DecoderHead, proj_src: &Tensor, proj_tar: &Tensor, row_valid: &[bool]) -> Result<RigidTransform> {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let (s, t) = (tape.constant(proj_src.clone()), tape.constant(proj_tar.clone()));
    let pose = head.record(&mut tape, &params, s, t, row_valid)?;
    tape.ensure_finite()?;
    pose_from_tape(&tape, &pose)
}
