//! Datasets on disk: one PLY file per cloud plus `manifest.txt`.
//!
//! Manifest records are single lines of space-separated fields:
//! `id master_seed qw qx qy qz tx ty tz num_points overlap outlier_ratio
//! noise_sigma max_angle_deg max_translation`. Lines starting with `#` are
//! comments. Floats carry 17 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use eqgs_core::data::{generate_dataset_pair, recover_correspondences, GeneratorConfig, ScenePair};
use eqgs_core::geometry::{Quaternion, RigidTransform, Vec3};

use crate::error::{CliError, Result};
use crate::ply::{read_ply, write_ply};

pub const MANIFEST: &str = "manifest.txt";
const FIELDS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub id: usize,
    pub master_seed: u64,
    pub generator: GeneratorConfig,
    pub pair: ScenePair,
}

pub fn src_file(id: usize) -> String {
    format!("pair_{id:05}_src.ply")
}

pub fn tar_file(id: usize) -> String {
    format!("pair_{id:05}_tar.ply")
}

/// Draws pairs `0..count` from `master_seed` in parallel.
pub fn generate_dataset(generator: &GeneratorConfig, master_seed: u64, count: usize) -> Result<Vec<DatasetPair>> {
    (0..count)
        .into_par_iter()
        .map(|id| {
            Ok(DatasetPair {
                id,
                master_seed,
                generator: *generator,
                pair: generate_dataset_pair(generator, master_seed, id as u64)?,
            })
        })
        .collect()
}

pub fn manifest_line(p: &DatasetPair) -> String {
    let g = &p.generator;
    let mut s = format!("{} {}", p.id, p.master_seed);
    for v in p.pair.gt.to_array() {
        let _ = write!(s, " {v:.16e}");
    }
    let _ = write!(s, " {}", g.num_points);
    for v in [g.overlap, g.outlier_ratio, g.noise_sigma, g.max_angle_deg, g.max_translation] {
        let _ = write!(s, " {v:.16e}");
    }
    s
}

pub fn save_dataset(dir: &Path, pairs: &[DatasetPair]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    pairs.par_iter().try_for_each(|p| {
        write_ply(&dir.join(src_file(p.id)), &p.pair.src)?;
        write_ply(&dir.join(tar_file(p.id)), &p.pair.tar)
    })?;
    let mut manifest = String::from(
        "# id master_seed qw qx qy qz tx ty tz num_points overlap outlier_ratio noise_sigma max_angle_deg max_translation\n",
    );
    for p in pairs {
        manifest.push_str(&manifest_line(p));
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| CliError::io(path, e))
}

/// Parsed manifest record before the clouds are read.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: usize,
    pub master_seed: u64,
    pub gt: RigidTransform,
    pub generator: GeneratorConfig,
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| CliError::parse(origin, n, m);
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != FIELDS {
            return Err(err(format!("expected {FIELDS} fields, found {}", tok.len())));
        }
        let f = |k: usize| -> Result<f64> {
            tok[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("field {} is not a finite number: '{}'", k + 1, tok[k])))
        };
        let int = |k: usize| -> Result<u64> { tok[k].parse().map_err(|_| err(format!("field {} is not an integer: '{}'", k + 1, tok[k]))) };
        let q = Quaternion::new(f(2)?, f(3)?, f(4)?, f(5)?);
        let gt = RigidTransform::new(q, Vec3::new(f(6)?, f(7)?, f(8)?)).map_err(|e| err(e.to_string()))?;
        let generator = GeneratorConfig {
            num_points: int(9)? as usize,
            overlap: f(10)?,
            outlier_ratio: f(11)?,
            noise_sigma: f(12)?,
            max_angle_deg: f(13)?,
            max_translation: f(14)?,
        };
        out.push(ManifestRecord {
            id: int(0)? as usize,
            master_seed: int(1)?,
            gt,
            generator,
        });
    }
    Ok(out)
}

/// Loads every pair; `Ω` is recovered from the ground truth.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetPair>> {
    let path: PathBuf = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let records = parse_manifest(&text, &path)?;
    records
        .into_par_iter()
        .map(|r| {
            let src = read_ply(&dir.join(src_file(r.id)))?;
            let tar = read_ply(&dir.join(tar_file(r.id)))?;
            let g = r.generator;
            let gt_correspondences = recover_correspondences(&src, &tar, &r.gt, g.match_radius());
            Ok(DatasetPair {
                id: r.id,
                master_seed: r.master_seed,
                generator: g,
                pair: ScenePair {
                    src,
                    tar,
                    gt: r.gt,
                    gt_correspondences,
                    overlap_ratio: g.overlap,
                    outlier_ratio: g.outlier_ratio,
                    noise_sigma: g.noise_sigma,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_points: 64,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn round_trip_keeps_points_and_transforms() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate_dataset(&small(), 9, 3).unwrap();
        save_dataset(dir.path(), &pairs).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.pair.src, b.pair.src);
            assert_eq!(a.pair.tar, b.pair.tar);
            assert_eq!(a.pair.gt, b.pair.gt);
            assert_eq!(a.generator, b.generator);
        }
    }

    #[test]
    fn noiseless_round_trip_recovers_the_exact_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let g = GeneratorConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let pairs = generate_dataset(&g, 4, 2).unwrap();
        save_dataset(dir.path(), &pairs).unwrap();
        for (a, b) in pairs.iter().zip(load_dataset(dir.path()).unwrap()) {
            assert_eq!(a.pair.gt_correspondences, b.pair.gt_correspondences);
        }
    }

    #[test]
    fn short_record_reports_its_line() {
        let pairs = generate_dataset(&small(), 1, 2).unwrap();
        let good = manifest_line(&pairs[0]);
        let mut tok: Vec<&str> = good.split(' ').collect();
        tok.remove(3);
        let text = format!("# header\n{good}\n{}\n", tok.join(" "));
        match parse_manifest(&text, Path::new("m")) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_manifest(&good.replace(" 64 ", " x "), Path::new("m")).is_err());
    }
}
