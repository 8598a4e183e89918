//! Round-trip properties of the on-disk formats.

use std::path::Path;

use proptest::prelude::*;

use eqgs_core::geometry::{PointCloud, Vec3};

use crate::checkpoint::{decode_entries, encode_entries, Entry};
use crate::config::Config;
use crate::eqdf::{decode_eqdf, encode_eqdf, DescriptorFile};
use crate::ply::{format_ply, parse_ply};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

fn entry() -> impl Strategy<Value = Entry> {
    ("[a-z.]{1,12}", 0usize..3, 1usize..5, 1usize..5).prop_flat_map(|(name, rank, r, c)| {
        let shape = match rank {
            0 => vec![],
            1 => vec![r],
            _ => vec![r, c],
        };
        let n = shape.iter().product::<usize>();
        prop::collection::vec(any::<f64>(), n).prop_map(move |values| Entry {
            name: name.clone(),
            shape: shape.clone(),
            values,
        })
    })
}

proptest! {
    #[test]
    fn ply_round_trip_is_bit_exact(pts in prop::collection::vec((finite(), finite(), finite()), 1..40)) {
        let pc = PointCloud::new(pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect()).unwrap();
        let back = parse_ply(&format_ply(&pc), Path::new("p.ply")).unwrap();
        for (a, b) in pc.points().iter().zip(back.points()) {
            prop_assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
        }
    }

    #[test]
    fn checkpoint_entries_round_trip(entries in prop::collection::vec(entry(), 0..6)) {
        let back = decode_entries(&encode_entries(&entries), Path::new("c")).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.values), bits(&b.values));
        }
    }

    #[test]
    fn truncated_checkpoints_are_rejected(entries in prop::collection::vec(entry(), 1..4), cut in 1usize..64) {
        let bytes = encode_entries(&entries);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_entries(&bytes[..keep], Path::new("c")).is_err());
    }

    #[test]
    fn descriptor_files_round_trip(count in 1usize..20, dim in 1usize..8, seed in any::<u32>()) {
        let values = (0..count * dim).map(|i| (i as u32 ^ seed) as f32 * 1e-3).collect();
        let d = DescriptorFile { count, dim, values };
        prop_assert_eq!(decode_eqdf(&encode_eqdf(&d), Path::new("d")).unwrap(), d);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u32>(), lr in 1e-6..1.0f64, beta in 0.0..1.0f64, k in 1usize..64) {
        let mut c = Config::default();
        c.apply_overrides(&[format!("seed={seed}"), format!("lr={lr:e}"), format!("beta={beta:e}"), format!("k={k}")]).unwrap();
        let mut back = Config::default();
        back.apply_text(&c.to_text(), Path::new("c.cfg")).unwrap();
        prop_assert_eq!(back, c);
    }
}
