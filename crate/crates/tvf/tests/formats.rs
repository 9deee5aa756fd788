//! Archives, run configuration, dataset files and report encodings.

use proptest::prelude::*;
use tempfile::TempDir;
use tvf::archive::Archive;
use tvf::config::{parse_list, RunConfig, KEYS};
use tvf::dataset::{self, GenOptions};
use tvf::error::CliError;
use tvf::pgm;
use tvf::report::{gating_csv, parse_summary};
use tvf_core::{ParamSet, Tensor};

fn sample_set() -> ParamSet<f32> {
    let mut ps = ParamSet::new();
    ps.insert("a.w", Tensor::new(&[2, 3], vec![1.0, -2.5, 0.0, 3.25, f32::MIN_POSITIVE, -0.0]).unwrap(), true).unwrap();
    ps.insert("b", Tensor::new(&[1], vec![7.0]).unwrap(), false).unwrap();
    ps.insert("empty", Tensor::new(&[0, 4], vec![]).unwrap(), true).unwrap();
    ps
}

#[test]
fn archive_roundtrips_bits_flags_and_meta() {
    let a = Archive::new("params", sample_set()).with_meta("step", 12u64).with_meta("note", "x");
    let b = Archive::decode(&a.encode()).unwrap();
    assert_eq!(a, b);
    assert_eq!(b.params.tensor("a.w").unwrap().data()[5].to_bits(), (-0.0f32).to_bits());
    assert!(!b.params.get("b").unwrap().trainable);
    assert!(b.clone().expect_kind("latent").is_err());
}

#[test]
fn archive_header_is_one_json_line() {
    let bytes = Archive::new("params", sample_set()).encode();
    let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
    let head: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
    assert_eq!(head["format_version"], 1);
    assert_eq!(head["entries"][1]["offset"], 24);
    assert_eq!(bytes.len() - nl - 1, 4 * 7);
}

#[test]
fn corrupt_archives_are_rejected() {
    let good = Archive::new("params", sample_set()).encode();
    let mut short = good.clone();
    short.pop();
    let mut long = good.clone();
    long.push(0);
    let text = String::from_utf8_lossy(&good).into_owned();
    let version = text.replacen("\"format_version\":1", "\"format_version\":9", 1).into_bytes();
    for bad in [short, long, b"no newline".to_vec(), b"{}\n".to_vec(), version] {
        assert!(matches!(Archive::decode(&bad), Err(CliError::Usage(_))));
    }
    let dir = TempDir::new().unwrap();
    let err = Archive::read(dir.path().join("nope.ckpt"), "stage 0 checkpoint").unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("stage 0 checkpoint"));
}

proptest! {
    #[test]
    fn archive_roundtrip_any_values(vals in prop::collection::vec(any::<f32>(), 0..40), rows in 1usize..4) {
        let n = vals.len() / rows * rows;
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::new(&[rows, n / rows], vals[..n].to_vec()).unwrap(), true).unwrap();
        let back = Archive::decode(&Archive::new("k", ps.clone()).encode()).unwrap();
        let got: Vec<u32> = back.params.tensor("x").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = vals[..n].iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn config_defaults_parse_and_validate() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.usize("stage0.repeats").unwrap(), 8);
    assert_eq!(cfg.f64("stage2.lr").unwrap(), 2e-4);
    assert_eq!(cfg.resolved().lines().count(), KEYS.len());
    let m = cfg.model_config().unwrap();
    assert_eq!(m.latent_size, 16);
    assert_eq!(m.diffusion_steps, 100);
}

#[test]
fn config_text_overrides_with_comments() {
    let cfg = RunConfig::parse("# tiny\nseed = 9   # trailing\n\n diffusion.steps=20\n").unwrap();
    assert_eq!(cfg.u64("seed").unwrap(), 9);
    assert_eq!(cfg.model_config().unwrap().diffusion_steps, 20);
    assert_ne!(cfg.hash(), RunConfig::default().hash());
}

#[test]
fn config_hash_ignores_locations() {
    let mut a = RunConfig::default();
    let h = a.hash();
    a.set("paths.out", "/elsewhere").unwrap();
    assert_eq!(a.hash(), h);
    assert_eq!(h.len(), 64);
    a.set("stage1.lr", "0.01").unwrap();
    assert_ne!(a.hash(), h);
}

#[test]
fn config_errors_are_usage_errors() {
    for text in [
        "nope = 1",
        "seed 5",
        "seed = -1",
        "stage0.lr = nan",
        "model.groups = 3",
        "eval.view_counts = 0,2",
        "fusion.fov_deg = 170",
        "stage1.batch_size = 0",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
    assert_eq!(parse_list("1, 2,4").unwrap(), [1, 2, 4]);
    assert!(parse_list("1,,2").is_err());
}

#[test]
fn stage_configs_follow_keys() {
    let cfg = RunConfig::parse("stage1.clip_norm = 0\nseed = 4").unwrap();
    let s1 = cfg.stage_config(tvf_core::pipeline::Stage::Lifting).unwrap();
    assert_eq!(s1.clip_norm, None);
    assert_eq!(s1.seed, 4);
    assert_eq!(s1.repeats, 4);
    let s2 = cfg.stage_config(tvf_core::pipeline::Stage::Joint).unwrap();
    assert_eq!(s2.clip_norm, Some(1.0));
    assert_eq!((s2.w_diff, s2.w_mse), (1.0, 1.0));
}

fn options() -> GenOptions {
    GenOptions { objects: 3, eval_objects: 2, views: 5, seed: 4, grid: 8, fov_deg: 50.0 }
}

#[test]
fn dataset_roundtrip_and_tamper_detection() {
    let dir = TempDir::new().unwrap();
    let m = dataset::generate(&options(), dir.path(), 2).unwrap();
    let ds = dataset::load(dir.path(), 1).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.train.len(), 3);
    assert_eq!(ds.eval.len(), 2);
    assert_eq!(ds.train[1], tvf_core::synthetic::gen_object(m.train[1].seed));
    let lat = dir.path().join(dataset::LATENTS);
    let mut bytes = std::fs::read(&lat).unwrap();
    assert_eq!(bytes.len(), 5 * 5 * 4 * 8 * 8 * 4);
    bytes[100] ^= 1;
    std::fs::write(&lat, &bytes).unwrap();
    assert_eq!(dataset::load(dir.path(), 1).unwrap_err().exit_code(), 2);
    bytes.truncate(10);
    std::fs::write(&lat, &bytes).unwrap();
    assert_eq!(dataset::load(dir.path(), 1).unwrap_err().exit_code(), 2);
    std::fs::remove_file(&lat).unwrap();
    assert_eq!(dataset::load(dir.path(), 1).unwrap_err().exit_code(), 3);
}

#[test]
fn dataset_bytes_are_stable() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    dataset::generate(&options(), a.path(), 1).unwrap();
    dataset::generate(&options(), b.path(), 4).unwrap();
    for f in [dataset::MANIFEST, dataset::LATENTS] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn pgm_mapping_and_header() {
    assert_eq!(pgm::to_byte(-1.0), 0);
    assert_eq!(pgm::to_byte(1.0), 255);
    assert_eq!(pgm::to_byte(0.0), 128);
    assert_eq!(pgm::to_byte(-7.0), 0);
    assert_eq!(pgm::to_byte(f32::INFINITY), 255);
    let bytes = pgm::encode(&[-1.0, 1.0, 0.0, 0.5, 0.0, 0.0], 2, 3);
    assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
    assert_eq!(&bytes[11..13], &[0, 255]);
    assert_eq!(bytes.len(), 11 + 6);
}

#[test]
fn report_csv_roundtrip() {
    let g = gating_csv(&[(0.0, 0.5), (15.0, 0.25)]);
    assert_eq!(g, "delta_deg,mean_residual_norm\n0,0.5\n15,0.25\n");
    let csv = "kind,object,seed,condition,psnr,ssim,mse,config_hash\n\
               row,0,1,views1,10,0.2,0.1,h\n\
               summary,,,baseline,12.5,0.3,0.05,h\n\
               summary,,,views4,14,0.4,0.03,h\n";
    assert_eq!(parse_summary(csv), vec![("baseline".to_string(), 12.5, 0.3), ("views4".to_string(), 14.0, 0.4)]);
}

#[test]
fn exit_codes_by_error_kind() {
    assert_eq!(CliError::usage("x").exit_code(), 2);
    assert_eq!(CliError::Missing("x".into()).exit_code(), 3);
    let io = CliError::io("/p", std::io::Error::other("boom"));
    assert_eq!(io.exit_code(), 1);
    assert!(io.to_string().contains("/p"));
}
