//! Dataset directories: `manifest.json` plus `latents.bin`, the rendered
//! ring views of every object as concatenated little-endian `f32` grids of
//! shape `[4, grid, grid]`, training objects first.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tvf_core::camera::CameraPose;
use tvf_core::lifting::LATENT_CHANNELS;
use tvf_core::synthetic::{gen_object, object_seeds, ring_poses, SyntheticObject, ViewSet};

use crate::error::{CliError, CliResult};
use crate::parallel::map_ordered;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const LATENTS: &str = "latents.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub seed: u64,
    /// `[azimuth, elevation, radius]`, angles in degrees.
    pub poses: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub grid: usize,
    pub fov_deg: f64,
    pub views_per_object: usize,
    pub train: Vec<ObjectEntry>,
    pub eval: Vec<ObjectEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<SyntheticObject>,
    pub eval: Vec<SyntheticObject>,
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub objects: usize,
    pub eval_objects: usize,
    pub views: usize,
    pub seed: u64,
    pub grid: usize,
    pub fov_deg: f64,
}

fn entry(seed: u64, poses: &[CameraPose]) -> ObjectEntry {
    ObjectEntry { seed, poses: poses.iter().map(|p| [p.theta_deg(), p.phi_deg(), p.radius]).collect() }
}

fn render_all(
    seeds: &[u64],
    poses: &[CameraPose],
    grid: usize,
    fov: f64,
    threads: usize,
) -> CliResult<Vec<ViewSet<f32>>> {
    map_ordered(seeds, threads, |&s| ViewSet::render(&gen_object(s), poses, grid, fov).map_err(CliError::from))
}

fn encode_latents(sets: &[ViewSet<f32>], out: &mut Vec<u8>) {
    for set in sets {
        for v in &set.views {
            for x in v.grid.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

/// Generate and write a dataset directory.
pub fn generate(opts: &GenOptions, dir: &Path, threads: usize) -> CliResult<DatasetManifest> {
    if opts.objects == 0 {
        return Err(CliError::usage("--objects must be at least 1"));
    }
    if opts.views == 0 {
        return Err(CliError::usage("--views must be at least 1"));
    }
    let poses = ring_poses(opts.views)?;
    let train_seeds = object_seeds(opts.seed, 0, opts.objects);
    let eval_seeds = object_seeds(opts.seed, 1, opts.eval_objects);
    let train = render_all(&train_seeds, &poses, opts.grid, opts.fov_deg, threads)?;
    let eval = render_all(&eval_seeds, &poses, opts.grid, opts.fov_deg, threads)?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: opts.seed,
        grid: opts.grid,
        fov_deg: opts.fov_deg,
        views_per_object: opts.views,
        train: train_seeds.iter().map(|&s| entry(s, &poses)).collect(),
        eval: eval_seeds.iter().map(|&s| entry(s, &poses)).collect(),
    };
    let mut latents = Vec::new();
    encode_latents(&train, &mut latents);
    encode_latents(&eval, &mut latents);
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mpath = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&mpath, text).map_err(|e| CliError::io(&mpath, e))?;
    let lpath = dir.join(LATENTS);
    fs::write(&lpath, latents).map_err(|e| CliError::io(&lpath, e))?;
    Ok(manifest)
}

fn poses_of(e: &ObjectEntry) -> CliResult<Vec<CameraPose>> {
    e.poses.iter().map(|p| CameraPose::from_degrees(p[0], p[1], p[2]).map_err(CliError::from)).collect()
}

/// Load a dataset and check that every stored latent matches a fresh render
/// of its object.
pub fn load(dir: &Path, threads: usize) -> CliResult<Dataset> {
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(CliError::Missing(format!("{} (dataset manifest; run gen-data first)", mpath.display())));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("malformed dataset manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::usage(format!(
            "dataset format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let lpath = dir.join(LATENTS);
    if !lpath.exists() {
        return Err(CliError::Missing(format!("{} (dataset latents)", lpath.display())));
    }
    let bytes = fs::read(&lpath).map_err(|e| CliError::io(&lpath, e))?;
    let per_view = LATENT_CHANNELS * manifest.grid * manifest.grid * 4;
    let entries: Vec<&ObjectEntry> = manifest.train.iter().chain(&manifest.eval).collect();
    let expected: usize = entries.iter().map(|e| e.poses.len() * per_view).sum();
    if bytes.len() != expected {
        return Err(CliError::usage(format!(
            "{} holds {} bytes, manifest implies {expected}",
            lpath.display(),
            bytes.len()
        )));
    }
    let mut offsets = Vec::with_capacity(entries.len());
    let mut at = 0;
    for e in &entries {
        offsets.push(at);
        at += e.poses.len() * per_view;
    }
    let jobs: Vec<(usize, &ObjectEntry)> = offsets.into_iter().zip(entries.iter().copied()).collect();
    let objects = map_ordered(&jobs, threads, |&(off, e)| {
        let obj = gen_object(e.seed);
        let set = ViewSet::<f32>::render(&obj, &poses_of(e)?, manifest.grid, manifest.fov_deg)?;
        let mut fresh = Vec::with_capacity(e.poses.len() * per_view);
        encode_latents(std::slice::from_ref(&set), &mut fresh);
        if fresh[..] != bytes[off..off + fresh.len()] {
            return Err(CliError::usage(format!("stored latents of object seed {} do not match its render", e.seed)));
        }
        Ok(obj)
    })?;
    let (train, eval) = objects.split_at(manifest.train.len());
    Ok(Dataset { train: train.to_vec(), eval: eval.to_vec(), manifest })
}
