//! Procedural dataset generation, splits, and the on-disk record format.
//!
//! Each instance is one binary record; a JSON manifest written last lists
//! classes, counts, seeds, and the hash of the resolved generation config.
//! Record layout (version 1, all multi-byte values little-endian): magic
//! `CLDS`, version u32, shape spec (class name, f64 params, seed u64),
//! image size u32, input count u32, supervision count u32, occupancy cells
//! u32, oracle count u32, then per view: camera (6 f64 + 2 u32), view seed
//! u64, image/mask/coords/depth as f32 arrays, then bit-packed occupancy
//! and f64 oracle points.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{render_view, sample_camera, CameraRanges, RenderSample};
use super::shapes::{build_shape, OccupancyData, ShapeClass, ShapeSpec};
use super::texture::{Texture, TextureMode};
use crate::canonical::ShapeOracle;
use crate::heads::camera::Camera;
use crate::parallel::{map_indexed, Parallelism};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CLDS";
const VERSION: u32 = 1;

/// Resolved generation configuration; hashed into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub classes: Vec<ShapeClass>,
    pub per_class: usize,
    pub seed: u64,
    pub input_views: usize,
    pub supervision_views: usize,
    pub occupancy_cells: usize,
    pub oracle_points: usize,
    pub camera: CameraRanges,
    pub texture_mode: TextureMode,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            classes: ShapeClass::ALL.to_vec(),
            per_class: 10,
            seed: 7,
            input_views: 4,
            supervision_views: 5,
            occupancy_cells: 16,
            oracle_points: 4096,
            camera: CameraRanges::default(),
            texture_mode: TextureMode::SymmetryInvariant,
        }
    }
}

impl SceneConfig {
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One generated scene with all ground truth kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub spec: ShapeSpec,
    pub image_size: usize,
    pub input_views: Vec<RenderSample>,
    pub supervision_views: Vec<RenderSample>,
    pub occupancy: OccupancyData,
    pub oracle_points: Vec<[f64; 3]>,
}

impl SceneInstance {
    pub fn oracle(&self) -> Result<ShapeOracle> {
        ShapeOracle::new(self.oracle_points.clone())
    }
}

/// splitmix-style stream derivation so per-instance work is order-free.
pub fn derive_seed(root: u64, a: u64, b: u64) -> u64 {
    let mut z = root
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates one instance deterministically from the config and its index.
pub fn generate_instance(config: &SceneConfig, class: ShapeClass, index: u64) -> Result<SceneInstance> {
    let class_id = class as u64;
    let spec_seed = derive_seed(config.seed, class_id, index);
    let spec = ShapeSpec::sample(class, spec_seed);
    let (sdf, oracle, occupancy) =
        build_shape(&spec, config.oracle_points, config.occupancy_cells)?;
    let texture = Texture::new(class, config.texture_mode, spec_seed);
    let mut cam_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec_seed, 0xca3a, 0));
    let total_views = config.input_views + config.supervision_views;
    let mut views = Vec::with_capacity(total_views);
    for v in 0..total_views {
        let camera = sample_camera(&mut cam_rng, &config.camera);
        let view_seed = derive_seed(spec_seed, 0x71e3, v as u64);
        views.push(render_view(&sdf, &texture, &camera, view_seed));
    }
    let supervision_views = views.split_off(config.input_views);
    Ok(SceneInstance {
        spec,
        image_size: config.camera.image_size,
        input_views: views,
        supervision_views,
        occupancy,
        oracle_points: oracle.points().to_vec(),
    })
}

/// All instances for a config, class-major then index order.
pub fn generate_dataset(config: &SceneConfig, par: Parallelism) -> Result<Vec<SceneInstance>> {
    let jobs: Vec<(ShapeClass, u64)> = config
        .classes
        .iter()
        .flat_map(|&c| (0..config.per_class as u64).map(move |i| (c, i)))
        .collect();
    let results = map_indexed(par, jobs.len(), |j| {
        let (class, index) = jobs[j];
        generate_instance(config, class, index)
    });
    results.into_iter().collect()
}

/// Index split by instance with (0.7, 0.1, 0.2) fractions per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_instances(config: &SceneConfig) -> DatasetSplit {
    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![] };
    let n = config.per_class;
    let n_train = (n as f64 * 0.7).floor() as usize;
    let n_val = (n as f64 * 0.1).floor() as usize;
    for (ci, _) in config.classes.iter().enumerate() {
        let base = ci * n;
        for i in 0..n {
            let idx = base + i;
            if i < n_train {
                split.train.push(idx);
            } else if i < n_train + n_val {
                split.val.push(idx);
            } else {
                split.test.push(idx);
            }
        }
    }
    split
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub classes: Vec<(String, usize)>,
    pub instance_count: usize,
    pub seed: u64,
    pub config: SceneConfig,
    pub config_hash: String,
    pub split: DatasetSplit,
    pub instances: Vec<String>,
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { bytes: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn str16(&mut self, s: &str) {
        self.bytes.extend_from_slice(&(s.len() as u16).to_le_bytes());
        self.bytes.extend_from_slice(s.as_bytes());
    }
}

fn encode_sample(w: &mut Writer, s: &RenderSample) {
    w.f64(s.camera.azimuth_deg);
    w.f64(s.camera.elevation_deg);
    w.f64(s.camera.distance);
    w.f64(s.camera.focal);
    for t in s.camera.translation {
        w.f64(t);
    }
    w.u32(s.camera.image_size.0 as u32);
    w.u32(s.camera.image_size.1 as u32);
    w.u64(s.view_seed);
    for &v in &s.image {
        w.f32(v);
    }
    for &m in &s.mask {
        w.f32(if m { 1.0 } else { 0.0 });
    }
    for &v in &s.gt_coords {
        w.f32(v);
    }
    for &v in &s.depth {
        w.f32(v);
    }
}

pub fn encode_instance(inst: &SceneInstance) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str16(inst.spec.class.name());
    w.u32(inst.spec.params.len() as u32);
    for &p in &inst.spec.params {
        w.f64(p);
    }
    w.u64(inst.spec.seed);
    w.u32(inst.image_size as u32);
    w.u32(inst.input_views.len() as u32);
    w.u32(inst.supervision_views.len() as u32);
    w.u32(inst.occupancy.cells as u32);
    w.u32(inst.oracle_points.len() as u32);
    for s in inst.input_views.iter().chain(&inst.supervision_views) {
        encode_sample(&mut w, s);
    }
    w.bytes.extend_from_slice(&inst.occupancy.pack_bits());
    for p in &inst.oracle_points {
        for &v in p {
            w.f64(v);
        }
    }
    w.bytes
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format { format: "CLDS", offset: self.offset as u64, detail: detail.into() }
    }
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str16(&mut self, what: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(format!("{what} is not utf-8")))
    }
}

fn decode_sample(r: &mut Reader) -> Result<RenderSample> {
    let azimuth_deg = r.f64("camera azimuth")?;
    let elevation_deg = r.f64("camera elevation")?;
    let distance = r.f64("camera distance")?;
    let focal = r.f64("camera focal")?;
    let translation = [
        r.f64("camera translation")?,
        r.f64("camera translation")?,
        r.f64("camera translation")?,
    ];
    let h = r.u32("image height")? as usize;
    let w = r.u32("image width")? as usize;
    let view_seed = r.u64("view seed")?;
    let n = h * w;
    let image = r.f32_vec(n * 3, "image")?;
    let mask_raw = r.f32_vec(n, "mask")?;
    let gt_coords = r.f32_vec(n * 3, "coords")?;
    let depth = r.f32_vec(n, "depth")?;
    Ok(RenderSample {
        camera: Camera {
            azimuth_deg,
            elevation_deg,
            distance,
            focal,
            translation,
            image_size: (h, w),
        },
        view_seed,
        image,
        mask: mask_raw.iter().map(|&m| m != 0.0).collect(),
        gt_coords,
        depth,
    })
}

pub fn decode_instance(bytes: &[u8]) -> Result<SceneInstance> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            format: "CLDS",
            offset: 0,
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            format: "CLDS",
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let class_name = r.str16("class name")?;
    let class = ShapeClass::from_name(&class_name)
        .ok_or_else(|| r.fail(format!("unknown class {class_name:?}")))?;
    let n_params = r.u32("param count")? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.f64("param")?);
    }
    let seed = r.u64("spec seed")?;
    let image_size = r.u32("image size")? as usize;
    let k_in = r.u32("input view count")? as usize;
    let k_sup = r.u32("supervision view count")? as usize;
    let occ_cells = r.u32("occupancy cells")? as usize;
    let oracle_count = r.u32("oracle count")? as usize;
    let mut input_views = Vec::with_capacity(k_in);
    for _ in 0..k_in {
        input_views.push(decode_sample(&mut r)?);
    }
    let mut supervision_views = Vec::with_capacity(k_sup);
    for _ in 0..k_sup {
        supervision_views.push(decode_sample(&mut r)?);
    }
    let occ_bytes = r.take((occ_cells * occ_cells * occ_cells).div_ceil(8), "occupancy")?;
    let occupancy = OccupancyData::unpack_bits(occ_cells, occ_bytes)?;
    let mut oracle_points = Vec::with_capacity(oracle_count);
    for _ in 0..oracle_count {
        oracle_points.push([
            r.f64("oracle point")?,
            r.f64("oracle point")?,
            r.f64("oracle point")?,
        ]);
    }
    if r.offset != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    Ok(SceneInstance {
        spec: ShapeSpec { class, params, seed },
        image_size,
        input_views,
        supervision_views,
        occupancy,
        oracle_points,
    })
}

pub fn instance_file_name(index: usize) -> String {
    format!("instance_{index:05}.clds")
}

/// Writes all instances plus the manifest (manifest last).
pub fn write_dataset(dir: &Path, config: &SceneConfig, instances: &[SceneInstance]) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let name = instance_file_name(i);
        let path = dir.join(&name);
        std::fs::write(&path, encode_instance(inst))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        files.push(name);
    }
    let manifest = Manifest {
        format: "CLDS".to_string(),
        version: VERSION,
        classes: config
            .classes
            .iter()
            .map(|c| (c.name().to_string(), config.per_class))
            .collect(),
        instance_count: instances.len(),
        seed: config.seed,
        config: config.clone(),
        config_hash: config.config_hash(),
        split: split_instances(config),
        instances: files,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let mut file =
        std::fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut json = String::new();
    file.read_to_string(&mut json)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&json)?)
}

pub fn read_instance(dir: &Path, manifest: &Manifest, index: usize) -> Result<SceneInstance> {
    let name = manifest
        .instances
        .get(index)
        .ok_or_else(|| Error::Data(format!("instance index {index} out of range")))?;
    let path: PathBuf = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_instance(&bytes)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<SceneInstance>)> {
    let manifest = read_manifest(dir)?;
    let mut instances = Vec::with_capacity(manifest.instances.len());
    for i in 0..manifest.instances.len() {
        instances.push(read_instance(dir, &manifest, i)?);
    }
    Ok((manifest, instances))
}
