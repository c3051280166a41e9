//! Labeled state collections and their on-disk cache.
//!
//! Cache layout: an 8-byte magic, a little-endian `u64` header length, a JSON
//! header describing the arrays, then every array as contiguous
//! little-endian `f64` values in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::oracle::ConceptId;
use crate::scene::{PointCloudObservation, PrivilegedObservation, SceneState, PRIVILEGED_DIM, SCENE_FLAT_DIM};

const MAGIC: &[u8; 8] = b"PCBDATA1";

/// One labeled state with its low-dimensional and (optionally) rendered
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub scene: SceneState,
    pub privileged: PrivilegedObservation,
    pub cloud: Option<PointCloudObservation>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub concept: ConceptId,
    pub records: Vec<Record>,
}

impl LabeledDataset {
    pub fn new(concept: ConceptId) -> Self {
        Self { concept, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    /// Positives divided by negatives (infinite when there are none).
    pub fn positive_ratio(&self) -> f64 {
        let p = self.positives();
        p as f64 / (self.len() - p) as f64
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn privileged_inputs(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| &r.privileged.features[..]).collect()
    }

    /// First `n` records.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            concept: self.concept,
            records: self.records[..n.min(self.len())].to_vec(),
        }
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f, seed)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, CacheHeader)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn write_to<W: Write>(&self, w: &mut W, seed: u64) -> Result<()> {
        let n = self.len();
        let points = match self.records.first().and_then(|r| r.cloud.as_ref()) {
            Some(c) => Some(c.anchor.len()),
            None => None,
        };
        for r in &self.records {
            match (&r.cloud, points) {
                (None, None) => {}
                (Some(c), Some(k)) if c.anchor.len() == k && c.moving.len() == k => {}
                _ => {
                    return Err(Error::InvalidInput(
                        "cached datasets need clouds of one size on every record or on none".into(),
                    ))
                }
            }
        }
        let mut arrays = vec![
            ArraySpec::new("scenes", vec![n, SCENE_FLAT_DIM]),
            ArraySpec::new("privileged", vec![n, PRIVILEGED_DIM]),
            ArraySpec::new("mask", vec![n, PRIVILEGED_DIM]),
            ArraySpec::new("labels", vec![n]),
        ];
        if let Some(k) = points {
            arrays.push(ArraySpec::new("clouds", vec![n, 2 * k, 4]));
        }
        let header = CacheHeader {
            format: "pcb-dataset".into(),
            version: 1,
            dtype: "f64le".into(),
            seed,
            concept: self.concept,
            count: n,
            arrays,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut put = |v: f64| w.write_all(&v.to_le_bytes());
        for r in &self.records {
            r.scene.to_flat().iter().try_for_each(|v| put(*v))?;
        }
        for r in &self.records {
            r.privileged.features.iter().try_for_each(|v| put(*v))?;
        }
        for r in &self.records {
            r.privileged.mask.iter().try_for_each(|m| put(if *m { 1.0 } else { 0.0 }))?;
        }
        for r in &self.records {
            put(f64::from(r.label))?;
        }
        if points.is_some() {
            for r in &self.records {
                for row in r.cloud.as_ref().unwrap().rows() {
                    row.iter().try_for_each(|v| put(*v))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, CacheHeader)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset cache file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: CacheHeader = serde_json::from_slice(&json)?;
        if header.format != "pcb-dataset" || header.version != 1 || header.dtype != "f64le" {
            return Err(Error::Format(format!("unsupported cache {} v{} {}", header.format, header.version, header.dtype)));
        }
        let n = header.count;
        let expect = |name: &str, shape: &[usize]| -> Result<()> {
            match header.arrays.iter().find(|a| a.name == name) {
                Some(a) if a.shape == shape => Ok(()),
                Some(a) => Err(Error::Format(format!("array {name} has shape {:?}, expected {shape:?}", a.shape))),
                None => Err(Error::Format(format!("missing array {name}"))),
            }
        };
        expect("scenes", &[n, SCENE_FLAT_DIM])?;
        expect("privileged", &[n, PRIVILEGED_DIM])?;
        expect("mask", &[n, PRIVILEGED_DIM])?;
        expect("labels", &[n])?;
        let points = header.arrays.iter().find(|a| a.name == "clouds").map(|a| a.shape.clone());
        if let Some(shape) = &points {
            if shape.len() != 3 || shape[0] != n || shape[2] != 4 || shape[1] % 2 != 0 {
                return Err(Error::Format(format!("bad cloud shape {shape:?}")));
            }
        }

        let mut take = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let scenes = take(n * SCENE_FLAT_DIM)?;
        let feats = take(n * PRIVILEGED_DIM)?;
        let masks = take(n * PRIVILEGED_DIM)?;
        let labels = take(n)?;
        let clouds = match &points {
            Some(shape) => Some(take(n * shape[1] * 4)?),
            None => None,
        };

        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let scene = SceneState::from_flat(&scenes[i * SCENE_FLAT_DIM..(i + 1) * SCENE_FLAT_DIM])?;
            let mut privileged = PrivilegedObservation {
                features: [0.0; PRIVILEGED_DIM],
                mask: [false; PRIVILEGED_DIM],
            };
            privileged.features.copy_from_slice(&feats[i * PRIVILEGED_DIM..(i + 1) * PRIVILEGED_DIM]);
            for (m, v) in privileged.mask.iter_mut().zip(&masks[i * PRIVILEGED_DIM..]) {
                *m = *v != 0.0;
            }
            let label = match labels[i] {
                0.0 => 0,
                1.0 => 1,
                v => return Err(Error::Format(format!("label {v} is not binary"))),
            };
            let cloud = match (&clouds, &points) {
                (Some(c), Some(shape)) => {
                    let k = shape[1] / 2;
                    let block = &c[i * shape[1] * 4..(i + 1) * shape[1] * 4];
                    let pts = |j: usize| Vec3::new(block[j * 4], block[j * 4 + 1], block[j * 4 + 2]);
                    Some(PointCloudObservation {
                        anchor: (0..k).map(pts).collect(),
                        moving: (k..2 * k).map(pts).collect(),
                    })
                }
                _ => None,
            };
            records.push(Record { scene, privileged, cloud, label });
        }
        Ok((Self { concept: header.concept, records }, header))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArraySpec {
    fn new(name: &str, shape: Vec<usize>) -> Self {
        Self { name: name.into(), shape }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub seed: u64,
    pub concept: ConceptId,
    pub count: usize,
    pub arrays: Vec<ArraySpec>,
}
