//! Multi-visibility dataset generation from clear/depth pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_airlight, synthesize_haze, AirlightFamily, ScatteringParams};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{depth_to_range, CameraIntrinsics};
use crate::io::{self, SCHEMA_VERSION};
use crate::rng;

/// How each sample's airlight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AirlightSpec {
    Fixed([f64; 3]),
    Family(AirlightFamily),
    /// Uniformly random family, then jittered.
    AnyFamily,
}

impl AirlightSpec {
    fn draw(&self, sample_seed: u64) -> [f64; 3] {
        match *self {
            AirlightSpec::Fixed(a) => a,
            AirlightSpec::Family(f) => sample_airlight(f, sample_seed),
            AirlightSpec::AnyFamily => {
                let mut r = rng::stream(sample_seed, 0xF4);
                let family = AirlightFamily::ALL[r.gen_range(0..AirlightFamily::ALL.len())];
                sample_airlight(family, sample_seed)
            }
        }
    }
}

impl std::str::FromStr for AirlightSpec {
    type Err = Error;

    /// `random`, a family name, or an `r,g,b` triple.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("random") || s.eq_ignore_ascii_case("any") {
            return Ok(AirlightSpec::AnyFamily);
        }
        if s.contains(',') {
            let parts: Vec<f64> = s
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad airlight triple '{s}'")))?;
            let rgb: [f64; 3] = parts
                .try_into()
                .map_err(|_| Error::InvalidInput(format!("airlight needs 3 components, got '{s}'")))?;
            return Ok(AirlightSpec::Fixed(rgb));
        }
        s.parse().map(AirlightSpec::Family)
    }
}

/// Where depth comes from and how integer maps are scaled.
#[derive(Debug, Clone)]
pub struct DepthSource {
    pub dir: PathBuf,
    /// Metres per code for 16-bit PNGs without a sidecar.
    pub fallback_scale: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub clear_dir: PathBuf,
    pub depth: DepthSource,
    pub intrinsics: CameraIntrinsics,
    /// Relative visibilities in `(0, 1]`.
    pub scales: Vec<f64>,
    pub epsilon: f64,
    pub airlight: AirlightSpec,
    /// Reference distance for relative visibility. `None` uses each scene's
    /// maximum range.
    pub d_ref: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Also write an 8-bit PNG next to each PFM.
    pub png_preview: bool,
}

/// Per-sample metadata written next to each hazy image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub schema: String,
    pub id: String,
    #[serde(rename = "V_abs")]
    pub v_abs: f64,
    #[serde(rename = "V_rel")]
    pub v_rel: f64,
    #[serde(rename = "A")]
    pub airlight: [f64; 3],
    pub epsilon: f64,
    pub d_ref: f64,
    pub seed: u64,
    pub source_clear: PathBuf,
    pub source_depth: PathBuf,
}

impl SampleSidecar {
    pub fn params(&self) -> Result<ScatteringParams> {
        ScatteringParams::new(self.airlight, self.v_abs, self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Relative to the manifest's directory.
    pub hazy: PathBuf,
    /// Relative to the manifest's directory.
    pub sidecar: PathBuf,
    #[serde(flatten)]
    pub meta: SampleSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub intrinsics: CameraIntrinsics,
    pub scales: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub records: Vec<DatasetRecord>,
}

impl DatasetRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }
}

impl DatasetManifest {
    /// Number of samples emitted per relative visibility.
    pub fn counts_per_scale(&self) -> Vec<(f64, usize)> {
        self.scales
            .iter()
            .map(|&s| (s, self.records.iter().filter(|r| r.meta.v_rel == s).count()))
            .collect()
    }
}

const CLEAR_EXTS: &[&str] = &["png", "jpg", "jpeg", "pfm"];
const DEPTH_EXTS: &[&str] = &["png", "pfm"];

fn list_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !path.is_file() || !exts.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::InvalidInput(format!(
                "two inputs share the stem '{stem}': {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs clear images with depth maps by file stem.
pub fn pair_inputs(clear_dir: &Path, depth_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let clear = list_by_stem(clear_dir, CLEAR_EXTS)?;
    let depth = list_by_stem(depth_dir, DEPTH_EXTS)?;
    let mut offenders: Vec<String> = clear
        .iter()
        .filter(|(s, _)| !depth.contains_key(*s))
        .map(|(_, p)| format!("{} (no depth)", p.display()))
        .collect();
    offenders.extend(
        depth
            .iter()
            .filter(|(s, _)| !clear.contains_key(*s))
            .map(|(_, p)| format!("{} (no clear image)", p.display())),
    );
    if !offenders.is_empty() {
        return Err(Error::Unpaired(offenders));
    }
    Ok(clear
        .into_iter()
        .map(|(stem, c)| {
            let d = depth[&stem].clone();
            (stem, c, d)
        })
        .collect())
}

fn sample_id(stem: &str, v_rel: f64) -> String {
    format!("{stem}_vrel{v_rel:.3}")
}

/// Writes one hazy image and sidecar per (input pair, scale) and returns
/// the manifest, which is also saved as `manifest.json` in the output
/// directory.
pub fn make_visibility_dataset(config: &DatasetConfig) -> Result<DatasetManifest> {
    if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {}", config.epsilon)));
    }
    if let Some(s) = config.scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::Domain(format!("relative visibility {s} outside (0, 1]")));
    }
    let mut seen = std::collections::HashSet::new();
    for s in &config.scales {
        if !seen.insert(sample_id("", *s)) {
            return Err(Error::InvalidInput(format!("duplicate relative visibility {s}")));
        }
    }
    if let Some(d) = config.d_ref {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Domain(format!("d_ref must be positive, got {d}")));
        }
    }
    if let AirlightSpec::Fixed(a) = config.airlight {
        ScatteringParams::new(a, 1.0, config.epsilon)?;
    }
    config.intrinsics.validate()?;

    let pairs = pair_inputs(&config.clear_dir, &config.depth.dir)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let mut records = Vec::with_capacity(pairs.len() * config.scales.len());
    for (image_index, (stem, clear_path, depth_path)) in pairs.iter().enumerate() {
        if config.scales.is_empty() {
            break;
        }
        let clear = io::load_raster(clear_path)?;
        let depth = io::load_depth(depth_path, config.depth.fallback_scale)?;
        depth
            .ensure_dims(clear.height(), clear.width())
            .map_err(|e| Error::format(depth_path, e.to_string()))?;
        let range = depth_to_range(&depth, &config.intrinsics)?;
        let d_ref = match config.d_ref {
            Some(d) => d,
            None => scene_reference_distance(&range)
                .ok_or_else(|| Error::format(depth_path, "depth map has no valid (positive) pixels"))?,
        };

        for (scale_index, &v_rel) in config.scales.iter().enumerate() {
            let sample_index = (image_index * config.scales.len() + scale_index) as u64;
            let sample_seed = rng::derive_seed(config.seed, sample_index);
            let airlight = config.airlight.draw(sample_seed);
            let params = ScatteringParams::new(airlight, v_rel * d_ref, config.epsilon)?;
            let hazy = synthesize_haze(&clear, &range, &params)?;

            let id = sample_id(stem, v_rel);
            let hazy_path = config.out_dir.join(format!("{id}.pfm"));
            let sidecar_path = config.out_dir.join(format!("{id}.json"));
            io::save_raster_pfm(&hazy_path, &hazy)?;
            if config.png_preview {
                io::save_raster_png(&config.out_dir.join(format!("{id}.png")), &hazy)?;
            }
            let meta = SampleSidecar {
                schema: SCHEMA_VERSION.to_owned(),
                id,
                v_abs: params.visibility,
                v_rel,
                airlight,
                epsilon: config.epsilon,
                d_ref,
                seed: sample_seed,
                source_clear: clear_path.clone(),
                source_depth: depth_path.clone(),
            };
            io::write_json(&sidecar_path, &meta)?;
            records.push(DatasetRecord {
                hazy: hazy_path.strip_prefix(&config.out_dir).unwrap_or(&hazy_path).to_path_buf(),
                sidecar: sidecar_path.strip_prefix(&config.out_dir).unwrap_or(&sidecar_path).to_path_buf(),
                meta,
            });
        }
    }

    let manifest = DatasetManifest {
        schema: SCHEMA_VERSION.to_owned(),
        intrinsics: config.intrinsics,
        scales: config.scales.clone(),
        epsilon: config.epsilon,
        seed: config.seed,
        records,
    };
    io::write_json(&config.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Largest positive range in the scene.
pub fn scene_reference_distance(range: &ScalarField) -> Option<f64> {
    let m = range.max();
    (m > 0.0).then_some(m)
}
