//! Single-file checkpoints.
//!
//! Layout: the magic line `NOVA-CHECKPOINT`, a line `version N`, a line
//! `header N` followed by N bytes of JSON (config, feature layout, metadata),
//! then the tensors. Each tensor is its name (u32 length + UTF-8), rank (u32),
//! dims (u64 each) and values as little-endian f64. Optimizer moments, when
//! saved, follow as tensors named `adam.m.<param>` and `adam.v.<param>`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::FeatureLayout;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Scalar, Tensor};
use crate::train::{Adam, TrainConfig};

pub const MAGIC: &str = "NOVA-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    /// Validation HR@10 of the saved parameters.
    pub best_metric: Option<f64>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    layout: FeatureLayout,
    meta: CheckpointMeta,
    optimizer: Option<AdamMeta>,
    tensors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub layout: FeatureLayout,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f64>)>,
    pub optimizer: Option<(AdamMeta, Vec<Tensor<f64>>, Vec<Tensor<f64>>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing header line"))?;
        let s = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
        self.pos += nl + 1;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f64>)> {
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f64>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, meta: CheckpointMeta, optimizer: Option<&Adam<T>>) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.cast()))
            .collect();
        let optimizer = optimizer.map(|adam| {
            let moments = |slots: &[Vec<T>]| {
                slots
                    .iter()
                    .zip(model.params.iter())
                    .map(|(s, (_, p))| {
                        let vals: Vec<f64> = s.iter().map(|x| x.as_f64()).collect();
                        Tensor::from_f64(p.shape(), &vals).expect("moment shape")
                    })
                    .collect()
            };
            let meta = AdamMeta {
                step: adam.step,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
            };
            (meta, moments(&adam.m), moments(&adam.v))
        });
        Self {
            model: model.config.clone(),
            layout: model.layout.clone(),
            meta,
            tensors,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            layout: self.layout.clone(),
            meta: self.meta.clone(),
            optimizer: self.optimizer.as_ref().map(|o| o.0.clone()),
            tensors: self.tensors.len(),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut out = Vec::new();
        let _ = write!(out, "{MAGIC}\nversion {VERSION}\nheader {}\n", json.len());
        out.extend(json.as_bytes());
        for (name, t) in &self.tensors {
            write_tensor(&mut out, name, t);
        }
        if let Some((_, m, v)) = &self.optimizer {
            for (kind, slots) in [("m", m), ("v", v)] {
                for ((name, _), t) in self.tensors.iter().zip(slots) {
                    write_tensor(&mut out, &format!("adam.{kind}.{name}"), t);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.line()? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r
            .line()?
            .strip_prefix("version ")
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| corrupt("bad version line"))?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let len = r
            .line()?
            .strip_prefix("header ")
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| corrupt("bad header line"))?;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let tensors = (0..header.tensors).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let optimizer = match header.optimizer {
            None => None,
            Some(meta) => {
                let mut read = |kind: &str| -> Result<Vec<Tensor<f64>>> {
                    tensors
                        .iter()
                        .map(|(name, p)| {
                            let (n, t) = r.tensor()?;
                            if n != format!("adam.{kind}.{name}") || t.shape() != p.shape() {
                                return Err(corrupt(format!("optimizer slot `{n}` does not match `{name}`")));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = read("m")?;
                let v = read("v")?;
                Some((meta, m, v))
            }
        };
        if r.pos != buf.len() {
            return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            model: header.model,
            layout: header.layout,
            meta: header.meta,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::new(self.model.clone(), self.layout.clone(), 0)?;
        if self.tensors.len() != model.params.len() {
            return Err(corrupt(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                model.params.len()
            )));
        }
        for (name, t) in &self.tensors {
            model.params.set(name, t.cast())?;
        }
        Ok(model)
    }

    pub fn to_adam<T: Scalar>(&self) -> Option<Adam<T>> {
        self.optimizer.as_ref().map(|(meta, m, v)| {
            let conv = |slots: &[Tensor<f64>]| {
                slots
                    .iter()
                    .map(|t| t.data().iter().map(|&x| T::of(x)).collect())
                    .collect()
            };
            Adam {
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
                step: meta.step,
                m: conv(m),
                v: conv(v),
            }
        })
    }
}
