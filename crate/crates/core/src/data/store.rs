use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::nncore::NdArray;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoredDType {
    F32,
    I64,
}

/// Manifest entry for one array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub dtype: StoredDType,
    pub shape: Vec<usize>,
    /// Row offsets along axis 0; chunk `i` holds rows
    /// `chunk_boundaries[i]..chunk_boundaries[i + 1]`.
    pub chunk_boundaries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub arrays: Vec<ArrayMeta>,
    pub env_config: EnvConfig,
    pub base_seed: u64,
    pub episode_seeds: Vec<u64>,
    pub created_by: String,
}

/// Demonstrations held in memory, with an on-disk chunked layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoStore {
    /// `[N, H, W, 3]`.
    pub images: Option<NdArray<f32>>,
    /// `[N, S]`.
    pub states: NdArray<f32>,
    /// `[N, A]`.
    pub actions: NdArray<f32>,
    /// `[N]`.
    pub rewards: NdArray<f32>,
    /// Cumulative step counts, strictly increasing, last equals N.
    pub episode_ends: Vec<i64>,
    pub env_config: EnvConfig,
    pub base_seed: u64,
    pub episode_seeds: Vec<u64>,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "demonstration store",
        detail: detail.into(),
    }
}

impl DemoStore {
    /// Checks every cross-array invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.episode_ends.is_empty() {
            return Err(Error::EmptyDataset("store has no episodes".into()));
        }
        if self.episode_ends.windows(2).any(|w| w[1] <= w[0]) || self.episode_ends[0] <= 0 {
            return Err(corrupt("episode_ends must be strictly increasing and positive"));
        }
        if *self.episode_ends.last().unwrap() as usize != n {
            return Err(corrupt(format!(
                "last episode end {} differs from N = {n}",
                self.episode_ends.last().unwrap()
            )));
        }
        if self.episode_seeds.len() != self.episode_ends.len() {
            return Err(corrupt("one seed per episode is required"));
        }
        let rows = |a: &NdArray<f32>| a.shape().first().copied().unwrap_or(0);
        for (name, a, rank) in [
            ("states", &self.states, 2),
            ("actions", &self.actions, 2),
            ("rewards", &self.rewards, 1),
        ] {
            if a.rank() != rank || rows(a) != n {
                return Err(corrupt(format!("{name} has shape {:?}, expected N = {n} rows", a.shape())));
            }
        }
        if let Some(img) = &self.images {
            if img.rank() != 4 || rows(img) != n || img.shape()[3] != 3 {
                return Err(corrupt(format!("images have shape {:?}", img.shape())));
            }
        }
        if self.actions.shape()[1] != self.env_config.action_dim()
            || self.states.shape()[1] != self.env_config.state_dim()
        {
            return Err(corrupt("state/action widths disagree with the env config"));
        }
        Ok(())
    }

    /// Total number of steps N.
    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episode_ends.len()
    }

    /// Row range of episode `e`.
    pub fn episode_range(&self, e: usize) -> std::ops::Range<usize> {
        let start = if e == 0 { 0 } else { self.episode_ends[e - 1] as usize };
        start..self.episode_ends[e] as usize
    }

    /// Episode containing row `i`.
    pub fn episode_of(&self, i: usize) -> Result<usize> {
        if i >= self.len() {
            return Err(Error::Index {
                what: "store row",
                index: i,
                len: self.len(),
            });
        }
        Ok(self.episode_ends.partition_point(|&end| end as usize <= i))
    }

    fn chunk_boundaries(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.episode_ends.iter().map(|&e| e as usize))
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        let bounds = self.chunk_boundaries();
        let meta = |name: &str, a: &NdArray<f32>| ArrayMeta {
            name: name.to_string(),
            dtype: StoredDType::F32,
            shape: a.shape().to_vec(),
            chunk_boundaries: bounds.clone(),
        };
        let mut arrays = Vec::new();
        if let Some(img) = &self.images {
            arrays.push(meta("images", img));
        }
        arrays.push(meta("states", &self.states));
        arrays.push(meta("actions", &self.actions));
        arrays.push(meta("rewards", &self.rewards));
        arrays.push(ArrayMeta {
            name: "episode_ends".into(),
            dtype: StoredDType::I64,
            shape: vec![self.episode_ends.len()],
            chunk_boundaries: vec![0, self.episode_ends.len()],
        });
        Manifest {
            format_version: FORMAT_VERSION,
            arrays,
            env_config: self.env_config.clone(),
            base_seed: self.base_seed,
            episode_seeds: self.episode_seeds.clone(),
            created_by: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
        }
    }

    /// Writes the store under `root`. A non-empty `root` is refused unless
    /// `force`, in which case it is replaced.
    pub fn save(&self, root: impl AsRef<Path>, force: bool) -> Result<()> {
        self.validate()?;
        let root = root.as_ref();
        if root.exists() {
            let non_empty = fs::read_dir(root)?.next().is_some();
            if non_empty && !force {
                return Err(Error::Config(format!(
                    "output directory {} exists and is not empty (use --force)",
                    root.display()
                )));
            }
            if non_empty {
                fs::remove_dir_all(root)?;
            }
        }
        fs::create_dir_all(root)?;
        let manifest = self.manifest();
        for meta in &manifest.arrays {
            let dir = root.join(&meta.name);
            fs::create_dir_all(&dir)?;
            if meta.name == "episode_ends" {
                let bytes: Vec<u8> = self.episode_ends.iter().flat_map(|v| v.to_le_bytes()).collect();
                fs::write(dir.join("0.bin"), bytes)?;
                continue;
            }
            let array = self.array(&meta.name).expect("manifest lists only stored arrays");
            let row = array.row_len();
            for (i, w) in meta.chunk_boundaries.windows(2).enumerate() {
                let mut f = BufWriter::new(fs::File::create(dir.join(format!("{i}.bin")))?);
                for v in &array.data()[w[0] * row..w[1] * row] {
                    f.write_all(&v.to_le_bytes())?;
                }
                f.flush()?;
            }
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(root.join(MANIFEST), text)?;
        Ok(())
    }

    fn array(&self, name: &str) -> Option<&NdArray<f32>> {
        match name {
            "images" => self.images.as_ref(),
            "states" => Some(&self.states),
            "actions" => Some(&self.actions),
            "rewards" => Some(&self.rewards),
            _ => None,
        }
    }

    pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
        let text = fs::read_to_string(root.as_ref().join(MANIFEST))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = Self::read_manifest(root)?;
        let mut images = None;
        let (mut states, mut actions, mut rewards, mut ends) = (None, None, None, None);
        for meta in &manifest.arrays {
            let dir = root.join(&meta.name);
            let total: usize = meta.shape.iter().product();
            let bounds = &meta.chunk_boundaries;
            let rows = meta.shape.first().copied().unwrap_or(0);
            if bounds.first() != Some(&0) || bounds.last() != Some(&rows) || bounds.windows(2).any(|w| w[1] < w[0]) {
                return Err(corrupt(format!("bad chunk boundaries for {}", meta.name)));
            }
            let mut bytes = Vec::new();
            for i in 0..bounds.len() - 1 {
                fs::File::open(dir.join(format!("{i}.bin")))?.read_to_end(&mut bytes)?;
            }
            let width = match meta.dtype {
                StoredDType::F32 => 4,
                StoredDType::I64 => 8,
            };
            if bytes.len() != total * width {
                return Err(corrupt(format!(
                    "{} holds {} bytes, expected {}",
                    meta.name,
                    bytes.len(),
                    total * width
                )));
            }
            match (meta.name.as_str(), meta.dtype) {
                ("episode_ends", StoredDType::I64) => {
                    ends = Some(
                        bytes
                            .chunks_exact(8)
                            .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                            .collect::<Vec<_>>(),
                    );
                }
                (name, StoredDType::F32) => {
                    let data = bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    let a = NdArray::new(meta.shape.clone(), data)?;
                    match name {
                        "images" => images = Some(a),
                        "states" => states = Some(a),
                        "actions" => actions = Some(a),
                        "rewards" => rewards = Some(a),
                        other => return Err(corrupt(format!("unknown array {other}"))),
                    }
                }
                (name, _) => return Err(corrupt(format!("unexpected dtype for {name}"))),
            }
        }
        let missing = |n: &str| corrupt(format!("manifest lacks array {n}"));
        let store = DemoStore {
            images,
            states: states.ok_or_else(|| missing("states"))?,
            actions: actions.ok_or_else(|| missing("actions"))?,
            rewards: rewards.ok_or_else(|| missing("rewards"))?,
            episode_ends: ends.ok_or_else(|| missing("episode_ends"))?,
            env_config: manifest.env_config,
            base_seed: manifest.base_seed,
            episode_seeds: manifest.episode_seeds,
        };
        store.validate()?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn toy(images: bool) -> DemoStore {
        let n = 5;
        DemoStore {
            images: images.then(|| NdArray::full([n, 3, 3, 3], 0.5)),
            states: NdArray::new([n, 4], (0..n * 4).map(|v| v as f32).collect()).unwrap(),
            actions: NdArray::new([n, 4], (0..n * 4).map(|v| (v % 4 == 0) as u8 as f32).collect()).unwrap(),
            rewards: NdArray::full([n], -0.01),
            episode_ends: vec![2, 5],
            env_config: EnvConfig::new(EnvKind::Grid, 5, 10),
            base_seed: 7,
            episode_seeds: vec![7, 6],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for images in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let s = toy(images);
            s.save(dir.path(), false).unwrap();
            assert_eq!(DemoStore::open(dir.path()).unwrap(), s);
            assert!(dir.path().join("states/1.bin").exists());
        }
    }

    #[test]
    fn refuses_non_empty_dir_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"x").unwrap();
        let s = toy(false);
        assert!(matches!(s.save(dir.path(), false), Err(Error::Config(_))));
        s.save(dir.path(), true).unwrap();
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn episode_lookup() {
        let s = toy(false);
        assert_eq!(s.episode_range(1), 2..5);
        assert_eq!(s.episode_of(1).unwrap(), 0);
        assert_eq!(s.episode_of(2).unwrap(), 1);
        assert!(matches!(s.episode_of(5), Err(Error::Index { .. })));
    }

    #[test]
    fn broken_invariants_rejected() {
        let mut s = toy(false);
        s.episode_ends = vec![3, 3];
        assert!(s.validate().is_err());
        let mut s = toy(false);
        s.episode_ends = vec![2, 4];
        assert!(s.validate().is_err());
    }

    #[test]
    fn truncated_chunk_rejected() {
        let dir = tempfile::tempdir().unwrap();
        toy(false).save(dir.path(), false).unwrap();
        fs::write(dir.path().join("actions/0.bin"), [0u8; 3]).unwrap();
        assert!(DemoStore::open(dir.path()).is_err());
    }
}
