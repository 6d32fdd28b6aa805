//! Dataset container: a directory holding `manifest.json` and one raw
//! little-endian f32 file per sample with `x` (1 x H x W) followed by `y`
//! (3 x H x W), both row-major.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{GenerationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::geomodel::{make_layered_model, Grid2D};
use crate::obs::{assemble_observation, downsample, ObservationTriple};
use crate::resim::{calibrate_threshold, simulate, LeakConfig};
use crate::rng;
use crate::train::Pairs;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const RECORD_DIR: &str = "records";
/// Samples simulated between manifest writes.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    /// Byte offset inside the record file.
    pub offset: u64,
    pub shape: Vec<usize>,
}

impl ArrayEntry {
    fn bytes(&self) -> u64 {
        4 * self.shape.iter().product::<usize>() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: usize,
    pub seed: u64,
    /// Leak enabled for this run.
    pub leak: bool,
    pub leak_triggered: bool,
    /// Years.
    pub trigger_time: Option<f64>,
    /// Pa.
    pub p_threshold: f64,
    /// Seal rows on the simulation grid.
    pub seal_rows: Range<usize>,
    /// Measured SNR of y1 at simulation resolution; absent when undefined.
    pub snr_db: Option<f64>,
    pub mass_balance_error: f64,
    /// Relative path of the record file; absent when generation failed.
    pub file: Option<String>,
    pub x: ArrayEntry,
    pub y: ArrayEntry,
    pub sha256: Option<String>,
    pub error: Option<String>,
}

impl SampleRecord {
    pub fn is_ok(&self) -> bool {
        self.file.is_some() && self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub total: usize,
    pub leak: usize,
    pub no_leak: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub counts: Counts,
    pub grid: Grid2D,
    /// `[rows, cols]` of stored arrays.
    pub resolution: [usize; 2],
    pub channel_order: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: GenerationConfig,
    pub split: Option<SplitAssignment>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn validate(&self, origin: &Path) -> Result<()> {
        let bad = |m: String| Err(Error::format(origin, m));
        if self.version != FORMAT_VERSION {
            return bad(format!("format version {}, expected {FORMAT_VERSION}", self.version));
        }
        if self.config.hash() != self.config_hash {
            return bad("config hash does not match the stored config".into());
        }
        let c = self.counts;
        let leaks = self.records.iter().filter(|r| r.leak).count();
        if c.total != self.records.len() || c.leak != leaks || c.leak + c.no_leak != c.total {
            return bad(format!("counts {c:?} disagree with {} records ({leaks} leak)", self.records.len()));
        }
        let [h, w] = self.resolution;
        for (i, r) in self.records.iter().enumerate() {
            if r.id != i {
                return bad(format!("record {i} carries id {}", r.id));
            }
            if r.x.shape != [1, h, w] || r.y.shape != [3, h, w] || r.y.offset != r.x.bytes() {
                return bad(format!("record {i} has inconsistent array entries"));
            }
            if r.file.is_some() != r.sha256.is_some() {
                return bad(format!("record {i} lacks a checksum"));
            }
        }
        if let Some(s) = &self.split {
            let mut seen = vec![false; self.records.len()];
            for &id in s.train.iter().chain(&s.val).chain(&s.test) {
                if id >= seen.len() || std::mem::replace(&mut seen[id], true) {
                    return bad(format!("split references record {id} twice or out of range"));
                }
            }
        }
        Ok(())
    }

    /// Seal start row at stored resolution: rows above it lie entirely
    /// above the seal on the simulation grid.
    pub fn seal_rows_stored(&self, id: usize) -> Range<usize> {
        let f = self.grid.nz / self.resolution[0];
        let r = &self.records[id].seal_rows;
        r.start / f..r.end.div_ceil(f)
    }
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(dir: &Path, m: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let mut text = serde_json::to_vec_pretty(m)?;
    text.push(b'\n');
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// The manifest in `dir`, validated on its own; `None` if there is none.
fn read_manifest(dir: &Path) -> Result<Option<DatasetManifest>> {
    let path = dir.join(MANIFEST);
    let text = match fs::read(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    manifest.validate(&path)?;
    Ok(Some(manifest))
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest = read_manifest(dir)?.ok_or_else(|| Error::format(&path, "no manifest"))?;
        for r in manifest.records.iter().filter(|r| r.is_ok()) {
            let f = dir.join(r.file.as_deref().unwrap_or_default());
            let len = fs::metadata(&f).map_err(|e| Error::io(&f, e))?.len();
            if len != r.x.bytes() + r.y.bytes() {
                return Err(Error::format(&f, format!("expected {} bytes, found {len}", r.x.bytes() + r.y.bytes())));
            }
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_manifest(&self.dir, &self.manifest)
    }

    pub fn record(&self, id: usize) -> Result<&SampleRecord> {
        self.manifest
            .records
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no record {id} in a dataset of {}", self.manifest.records.len())))
    }

    /// Reads `(x, y)` for one record, checking its checksum.
    pub fn read_pair(&self, id: usize) -> Result<(Array3<f32>, Array3<f32>)> {
        let r = self.record(id)?;
        let file = r
            .file
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("record {id} failed to generate: {}", r.error.as_deref().unwrap_or("unknown"))))?;
        let path = self.dir.join(file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if r.sha256.as_deref() != Some(checksum(&bytes).as_str()) {
            return Err(Error::format(&path, "checksum mismatch"));
        }
        let read = |e: &ArrayEntry| -> Result<Array3<f32>> {
            let start = e.offset as usize;
            let chunk = bytes
                .get(start..start + e.bytes() as usize)
                .ok_or_else(|| Error::format(&path, "array extends past end of file"))?;
            let vals: Vec<f32> = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            Array3::from_shape_vec((e.shape[0], e.shape[1], e.shape[2]), vals).map_err(|err| Error::format(&path, err.to_string()))
        };
        Ok((read(&r.x)?, read(&r.y)?))
    }

    /// Checks every record's checksum.
    pub fn verify(&self) -> Result<()> {
        for r in self.manifest.records.iter().filter(|r| r.is_ok()) {
            self.read_pair(r.id)?;
        }
        Ok(())
    }

    pub fn pairs(&self, ids: &[usize]) -> Result<Pairs<f32>> {
        let mut out = Pairs::default();
        for &id in ids {
            let (x, y) = self.read_pair(id)?;
            out.x.push(x);
            out.y.push(y);
        }
        Ok(out)
    }

    pub fn split(&self) -> Result<&SplitAssignment> {
        self.manifest
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no split assignment"))
    }
}

/// Leak flags for `n` runs: exactly `round(fraction n)` set, in seeded
/// random order.
pub fn leak_flags(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let k = (fraction * n as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(&mut rng::stream(seed, rng::LEAK_FLAGS));
    flags
}

struct Generated {
    record: SampleRecord,
    bytes: Vec<u8>,
}

fn empty_record(id: usize, seed: u64, leak: bool, res: [usize; 2]) -> SampleRecord {
    let [h, w] = res;
    SampleRecord {
        id,
        seed,
        leak,
        leak_triggered: false,
        trigger_time: None,
        p_threshold: 0.0,
        seal_rows: 0..0,
        snr_db: None,
        mass_balance_error: 0.0,
        file: None,
        x: ArrayEntry { offset: 0, shape: vec![1, h, w] },
        y: ArrayEntry {
            offset: 4 * (h * w) as u64,
            shape: vec![3, h, w],
        },
        sha256: None,
        error: None,
    }
}

/// One pass through the loop: earth model, flow simulation, observation,
/// downsampling.
fn generate_one(gen: &GenerationConfig, id: usize, leak: bool) -> Result<Generated> {
    let seed = rng::mix(gen.seed, id as u64);
    let grid = gen.grid.grid()?;
    let model = make_layered_model(seed, grid, &gen.geo)?;
    let threshold = calibrate_threshold(&model, &gen.fluid, &gen.schedule, gen.leak.threshold_fraction)?;
    let leak_cfg = LeakConfig {
        enabled: leak,
        p_threshold: threshold,
        k_multiplier: gen.leak.k_multiplier,
    };
    let sim = simulate(&model, &gen.fluid, &gen.schedule, &leak_cfg)?;
    let [h, w] = gen.dataset.resolution;
    let obs = assemble_observation(
        &sim,
        &model,
        &gen.fluid,
        threshold.max(f64::MIN_POSITIVE),
        &gen.observation,
        (h, w),
        seed,
    )?;
    let x = downsample(sim.final_saturation(), (h, w))?;
    let mut record = empty_record(id, seed, leak, gen.dataset.resolution);
    record.leak_triggered = sim.leak_triggered;
    record.trigger_time = sim.trigger_time;
    record.p_threshold = threshold;
    record.seal_rows = model.seal_rows.clone();
    record.snr_db = obs.snr_db.is_finite().then_some(obs.snr_db);
    record.mass_balance_error = sim.mass_balance_error();
    let mut bytes = Vec::with_capacity(16 * h * w);
    let planes: [&Array2<f64>; 4] = [&x, &obs.y1_seismic, &obs.y2_well_sat, &obs.y3_well_pres];
    for p in planes {
        for &v in p.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(Generated { record, bytes })
}

/// Generates (or resumes) the dataset described by `cfg` in `dir`.
/// `progress` sees every record as it is committed.
pub fn generate_dataset(cfg: &RunConfig, dir: &Path, mut progress: impl FnMut(&SampleRecord)) -> Result<Dataset> {
    cfg.validate()?;
    let gen = cfg.generation();
    let hash = gen.hash();
    let n = gen.dataset.n_total;
    let flags = leak_flags(n, gen.dataset.leak_fraction, gen.seed);
    let rec_dir = dir.join(RECORD_DIR);
    fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;

    let mut manifest = match read_manifest(dir)? {
        Some(existing) if existing.config_hash == hash => existing,
        Some(_) => {
            return Err(Error::invalid(format!(
                "{} holds a dataset generated from a different config",
                dir.display()
            )))
        }
        None => DatasetManifest {
            version: FORMAT_VERSION,
            counts: Counts {
                total: n,
                leak: flags.iter().filter(|&&f| f).count(),
                no_leak: flags.iter().filter(|&&f| !f).count(),
            },
            grid: gen.grid.grid()?,
            resolution: gen.dataset.resolution,
            channel_order: ObservationTriple::CHANNELS.iter().map(|s| s.to_string()).collect(),
            seed: gen.seed,
            config_hash: hash,
            config: gen.clone(),
            split: None,
            records: (0..n)
                .map(|i| {
                    let mut r = empty_record(i, rng::mix(gen.seed, i as u64), flags[i], gen.dataset.resolution);
                    r.error = Some("not generated".into());
                    r
                })
                .collect(),
        },
    };
    let current = Dataset {
        dir: dir.to_path_buf(),
        manifest: manifest.clone(),
    };
    let pending: Vec<usize> = (0..n)
        .filter(|&i| !(manifest.records[i].is_ok() && current.read_pair(i).is_ok()))
        .collect();
    for chunk in pending.chunks(CHUNK) {
        let results: Vec<Result<Generated>> = chunk.par_iter().map(|&i| generate_one(&gen, i, flags[i])).collect();
        for (&i, res) in chunk.iter().zip(results) {
            let record = match res {
                Ok(mut g) => {
                    let name = format!("{RECORD_DIR}/{i:06}.f32");
                    let path = dir.join(&name);
                    fs::write(&path, &g.bytes).map_err(|e| Error::io(&path, e))?;
                    g.record.sha256 = Some(checksum(&g.bytes));
                    g.record.file = Some(name);
                    g.record
                }
                Err(e) => {
                    let mut r = empty_record(i, rng::mix(gen.seed, i as u64), flags[i], gen.dataset.resolution);
                    r.error = Some(e.to_string());
                    r
                }
            };
            progress(&record);
            manifest.records[i] = record;
        }
        write_manifest(dir, &manifest)?;
    }
    write_manifest(dir, &manifest)?;
    Dataset::open(dir)
}

/// Default `[train, val, test]`: 36 test samples (fewer for small sets),
/// and the rest split 96% / 4%.
pub fn default_split(n: usize) -> [usize; 3] {
    let test = 36.min(n / 5).max(1);
    let rest = n.saturating_sub(test);
    let val = ((0.04 * rest as f64).round() as usize).max(1).min(rest.saturating_sub(1));
    [rest - val, val, test]
}

/// Stratified seeded split of the successfully generated records; each
/// split keeps the overall leak fraction to within one sample.
pub fn split_dataset(manifest: &DatasetManifest, counts: [usize; 3], seed: u64) -> Result<SplitAssignment> {
    let ok: Vec<&SampleRecord> = manifest.records.iter().filter(|r| r.is_ok()).collect();
    let need: usize = counts.iter().sum();
    if need > ok.len() {
        return Err(Error::invalid(format!(
            "split {counts:?} needs {need} samples, only {} available",
            ok.len()
        )));
    }
    let mut r = rng::stream(seed, rng::SPLIT);
    let mut pos: Vec<usize> = ok.iter().filter(|r| r.leak).map(|r| r.id).collect();
    let mut neg: Vec<usize> = ok.iter().filter(|r| !r.leak).map(|r| r.id).collect();
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);
    let p = pos.len() as f64 / ok.len() as f64;
    let (mut pi, mut ni) = (0, 0);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &c in &counts {
        let mut k = (p * c as f64).round() as usize;
        k = k.min(pos.len() - pi);
        if c - k > neg.len() - ni {
            k = c - (neg.len() - ni);
        }
        let mut ids: Vec<usize> = pos[pi..pi + k].iter().chain(&neg[ni..ni + c - k]).copied().collect();
        pi += k;
        ni += c - k;
        ids.sort_unstable();
        out.push(ids);
    }
    let test = out.pop().expect("three splits");
    let val = out.pop().expect("three splits");
    let train = out.pop().expect("three splits");
    Ok(SplitAssignment { seed, train, val, test })
}
