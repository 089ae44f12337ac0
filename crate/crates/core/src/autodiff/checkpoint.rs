//! Named parameter storage and its on-disk text format.
//!
//! ```text
//! lada-checkpoint v1
//! meta <key> <value>
//! tensor <name> <d0,d1,...|->
//! <f64 bit patterns as 16 hex digits, space separated>
//! end
//! ```
//!
//! Values are written as raw IEEE-754 bit patterns so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "lada-checkpoint v1";

/// Insertion-ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid parameter name {name:?}")));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let slot = self.tensors.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(slot)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Parameters plus free-form metadata (encoder dimensions, config hash).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in self.params.iter() {
            let dims = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(out, "tensor {name} {dims} {}", u8::from(t.grad_enabled()));
            let hex: Vec<String> = t.values().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&hex.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Parse {
            line,
            detail: format!("checkpoint: {what}"),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(bad(1, "missing or unsupported version header")),
        }
        let mut ckpt = Checkpoint::default();
        while let Some((no, line)) = lines.next() {
            if line == "end" {
                return Ok(ckpt);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, dims, grad] = fields[..] else {
                    return Err(bad(no, "malformed tensor header"));
                };
                let shape: Vec<usize> = if dims == "-" {
                    vec![]
                } else {
                    dims.split(',')
                        .map(|d| d.parse().map_err(|_| bad(no, "bad dimension")))
                        .collect::<Result<_>>()?
                };
                let (vno, body) = lines.next().ok_or_else(|| bad(no, "missing values"))?;
                let values: Vec<f64> = body
                    .split_whitespace()
                    .map(|h| {
                        u64::from_str_radix(h, 16)
                            .map(f64::from_bits)
                            .map_err(|_| bad(vno, "bad value"))
                    })
                    .collect::<Result<_>>()?;
                let tensor = Tensor::new(shape, values)
                    .map_err(|e| bad(vno, &e.to_string()))?
                    .with_grad(grad == "1");
                ckpt.params.insert(name, tensor)?;
            } else {
                return Err(bad(no, "unexpected line"));
            }
        }
        Err(bad(text.lines().count(), "missing end marker"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
