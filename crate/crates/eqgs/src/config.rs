//! Flat `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use eqgs_core::data::GeneratorConfig;
use eqgs_core::decoder::Pooling;
use eqgs_core::geometry::DESCRIPTOR_DIM;
use eqgs_core::nn::AdamConfig;
use eqgs_core::objective::ThresholdProfile;
use eqgs_core::pipeline::{ModelConfig, NeighborMode, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Indoor,
    Outdoor,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "indoor" => Ok(Profile::Indoor),
            "outdoor" => Ok(Profile::Outdoor),
            _ => Err(format!("unknown profile '{s}' (indoor|outdoor)")),
        }
    }
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Indoor => "indoor",
            Profile::Outdoor => "outdoor",
        }
    }

    fn thresholds(self) -> ThresholdProfile {
        match self {
            Profile::Indoor => ThresholdProfile::INDOOR,
            Profile::Outdoor => ThresholdProfile::OUTDOOR,
        }
    }

    fn voxel(self) -> f64 {
        match self {
            Profile::Indoor => 0.05,
            Profile::Outdoor => 0.30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborKind {
    #[default]
    Ball,
    Knn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub num_points: usize,
    pub neighbor_mode: NeighborKind,
    pub ball_radius: f64,
    /// Neighbor count for knn and the neighbor cap for ball queries.
    pub k: usize,
    pub descriptor_layers: usize,
    pub egnn_layers: usize,
    pub node_dim: usize,
    pub lrft_rank: usize,
    pub lrft_out: usize,
    pub lrft_init_std: Option<f64>,
    pub lrft_b_jitter: f64,
    pub beta: f64,
    pub reg_target: Option<f64>,
    pub distance_power: f64,
    pub decoder_hidden: Vec<usize>,
    pub pooling: Pooling,
    pub det_tol: f64,
    pub keep_rows_when_all_rejected: bool,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub shuffle: bool,
    pub profile: Profile,
    pub re_thresh: Option<f64>,
    pub te_thresh: Option<f64>,
    pub tau: Option<f64>,
    pub voxel: Option<f64>,
    pub overlap: f64,
    pub outlier_ratio: f64,
    pub noise_sigma: f64,
    pub max_angle: f64,
    pub max_translation: f64,
}

impl Default for Config {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            num_points: 1024,
            neighbor_mode: NeighborKind::Ball,
            ball_radius: 0.3,
            k: 16,
            descriptor_layers: 2,
            egnn_layers: 4,
            node_dim: DESCRIPTOR_DIM,
            lrft_rank: 35,
            lrft_out: 128,
            lrft_init_std: None,
            lrft_b_jitter: 1e-4,
            beta: 0.05,
            reg_target: None,
            distance_power: 0.5,
            decoder_hidden: vec![256, 64],
            pooling: Pooling::Mean,
            det_tol: 1e-6,
            keep_rows_when_all_rejected: true,
            lr: 1e-3,
            epochs: 50,
            seed: 0,
            batch_size: 1,
            grad_clip: 0.0,
            shuffle: true,
            profile: Profile::Indoor,
            re_thresh: None,
            te_thresh: None,
            tau: None,
            voxel: None,
            overlap: g.overlap,
            outlier_ratio: g.outlier_ratio,
            noise_sigma: g.noise_sigma,
            max_angle: g.max_angle_deg,
            max_translation: g.max_translation,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
}

fn opt(key: &str, v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl Config {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "num_points" => self.num_points = num(key, v)?,
            "neighbor_mode" => {
                self.neighbor_mode = match v {
                    "ball" => NeighborKind::Ball,
                    "knn" => NeighborKind::Knn,
                    _ => return Err(format!("unknown neighbor_mode '{v}' (ball|knn)")),
                }
            }
            "ball_radius" => self.ball_radius = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "descriptor_layers" => self.descriptor_layers = num(key, v)?,
            "egnn_layers" => self.egnn_layers = num(key, v)?,
            "node_dim" => self.node_dim = num(key, v)?,
            "lrft_rank" => self.lrft_rank = num(key, v)?,
            "lrft_out" => self.lrft_out = num(key, v)?,
            "lrft_init_std" => self.lrft_init_std = opt(key, v)?,
            "lrft_b_jitter" => self.lrft_b_jitter = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "reg_target" => self.reg_target = opt(key, v)?,
            "distance_power" => self.distance_power = num(key, v)?,
            "decoder_hidden" => {
                self.decoder_hidden = v
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "decoder_pool" => self.pooling = v.parse().map_err(|_| format!("unknown decoder_pool '{v}' (mean|max)"))?,
            "det_tol" => self.det_tol = num(key, v)?,
            "keep_rows_when_all_rejected" => self.keep_rows_when_all_rejected = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "grad_clip" => self.grad_clip = num(key, v)?,
            "shuffle" => self.shuffle = num(key, v)?,
            "profile" => self.profile = v.parse()?,
            "re_thresh" => self.re_thresh = opt(key, v)?,
            "te_thresh" => self.te_thresh = opt(key, v)?,
            "tau" => self.tau = opt(key, v)?,
            "voxel" => self.voxel = opt(key, v)?,
            "overlap" => self.overlap = num(key, v)?,
            "outlier_ratio" => self.outlier_ratio = num(key, v)?,
            "noise_sigma" => self.noise_sigma = num(key, v)?,
            "max_angle" => self.max_angle = num(key, v)?,
            "max_translation" => self.max_translation = num(key, v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(origin, i + 1, format!("expected 'key = value', found '{line}'")))?;
            self.set(k.trim(), v.trim()).map_err(|m| CliError::parse(origin, i + 1, m))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut c = Config::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
        }
        Ok(())
    }

    /// Every key, one per line, in a form [`Config::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        let o = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("num_points", self.num_points.to_string());
        kv(
            "neighbor_mode",
            match self.neighbor_mode {
                NeighborKind::Ball => "ball",
                NeighborKind::Knn => "knn",
            }
            .into(),
        );
        kv("ball_radius", self.ball_radius.to_string());
        kv("k", self.k.to_string());
        kv("descriptor_layers", self.descriptor_layers.to_string());
        kv("egnn_layers", self.egnn_layers.to_string());
        kv("node_dim", self.node_dim.to_string());
        kv("lrft_rank", self.lrft_rank.to_string());
        kv("lrft_out", self.lrft_out.to_string());
        kv("lrft_init_std", o(self.lrft_init_std));
        kv("lrft_b_jitter", self.lrft_b_jitter.to_string());
        kv("beta", self.beta.to_string());
        kv("reg_target", o(self.reg_target));
        kv("distance_power", self.distance_power.to_string());
        kv(
            "decoder_hidden",
            self.decoder_hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        kv(
            "decoder_pool",
            match self.pooling {
                Pooling::Mean => "mean",
                Pooling::Max => "max",
            }
            .into(),
        );
        kv("det_tol", self.det_tol.to_string());
        kv("keep_rows_when_all_rejected", self.keep_rows_when_all_rejected.to_string());
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("shuffle", self.shuffle.to_string());
        kv("profile", self.profile.name().into());
        kv("re_thresh", o(self.re_thresh));
        kv("te_thresh", o(self.te_thresh));
        kv("tau", o(self.tau));
        kv("voxel", o(self.voxel));
        kv("overlap", self.overlap.to_string());
        kv("outlier_ratio", self.outlier_ratio.to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("max_angle", self.max_angle.to_string());
        kv("max_translation", self.max_translation.to_string());
        s
    }

    pub fn thresholds(&self) -> ThresholdProfile {
        let base = self.profile.thresholds();
        ThresholdProfile {
            re_deg: self.re_thresh.unwrap_or(base.re_deg),
            te: self.te_thresh.unwrap_or(base.te),
            tau: self.tau.unwrap_or(base.tau),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        if self.node_dim != DESCRIPTOR_DIM {
            return Err(CliError::Usage(format!("node_dim must be {DESCRIPTOR_DIM}")));
        }
        let neighbor_mode = match self.neighbor_mode {
            NeighborKind::Ball => NeighborMode::Ball {
                radius: self.ball_radius,
                max_neighbors: self.k,
            },
            NeighborKind::Knn => NeighborMode::Knn { k: self.k },
        };
        let m = ModelConfig {
            num_points: self.num_points,
            neighbor_mode,
            descriptor_layers: self.descriptor_layers,
            egnn_layers: self.egnn_layers,
            lrft_rank: self.lrft_rank,
            lrft_out: self.lrft_out,
            lrft_init_std: self.lrft_init_std,
            lrft_b_jitter: self.lrft_b_jitter,
            beta: self.beta,
            reg_target: self.reg_target,
            distance_power: self.distance_power,
            decoder_hidden: self.decoder_hidden.clone(),
            pooling: self.pooling,
            det_tol: self.det_tol,
            voxel: self.voxel.unwrap_or(self.profile.voxel()),
            keep_rows_when_all_rejected: self.keep_rows_when_all_rejected,
        };
        m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(m)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            grad_clip: self.grad_clip,
            shuffle_seed: self.shuffle.then_some(self.seed),
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let g = GeneratorConfig {
            num_points: self.num_points,
            overlap: self.overlap,
            outlier_ratio: self.outlier_ratio,
            noise_sigma: self.noise_sigma,
            max_angle_deg: self.max_angle,
            max_translation: self.max_translation,
        };
        g.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_values() {
        let c = Config::default();
        let m = c.model_config().unwrap();
        assert_eq!(m, ModelConfig::default());
        assert_eq!(c.thresholds(), ThresholdProfile::INDOOR);
        assert_eq!((c.lr, c.beta, c.distance_power), (1e-3, 0.05, 0.5));
        let mut o = Config::default();
        o.set("profile", "outdoor").unwrap();
        assert_eq!(o.thresholds(), ThresholdProfile::OUTDOOR);
        assert_eq!(o.model_config().unwrap().voxel, 0.30);
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut c = Config::default();
        c.apply_text("# comment\nlr = 0.5  # trailing\n\nnum_points=256\nlrft_rank = 16\nlrft_init_std = 2.5\ndecoder_hidden = 8, 4\n", Path::new("c"))
            .unwrap();
        assert_eq!((c.lr, c.num_points, c.lrft_init_std), (0.5, 256, Some(2.5)));
        assert_eq!(c.decoder_hidden, vec![8, 4]);
        let mut back = Config::default();
        back.apply_text(&c.to_text(), Path::new("c")).unwrap();
        assert_eq!(back, c);
        c.apply_overrides(&["lr=0.25".into()]).unwrap();
        assert_eq!(c.lr, 0.25);
        assert!(c.apply_overrides(&["lr".into()]).is_err());
    }

    #[test]
    fn errors_carry_line_numbers_and_rank_is_checked() {
        let mut c = Config::default();
        match c.apply_text("lr = 1\nbogus = 2\n", Path::new("c")) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match c.apply_text("\n\nno equals sign\n", Path::new("c")) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        c.set("lrft_rank", "200").unwrap();
        assert!(c.model_config().is_err());
    }
}
