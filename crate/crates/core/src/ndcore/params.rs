//! Named parameter storage, checkpoint files and the shared global copy
//! that asynchronous workers update.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes   "TNCKPT\0\0"
//! format version   u32       currently 1
//! param version    u64       update counter at save time
//! param count      u32
//! per parameter, in name order:
//!   name length    u32
//!   name           UTF-8 bytes
//!   ndim           u32
//!   dims           ndim x u64
//!   values         prod(dims) x f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::RwLock;

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TNCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Parameters keyed by dotted path, iterated in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
    version: u64,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, Param { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {name}")))?;
            if p.value.shape() != g.shape() {
                return Err(Error::shape("accumulate", p.value.shape(), g.shape()));
            }
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Places every parameter on `tape` as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.leaf(p.value.clone(), true)))
            .collect();
        Bound { vars }
    }

    /// Same as [`bind`](Self::bind) but as constants (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.constant(p.value.clone())))
            .collect();
        Bound { vars }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.num_values() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let fmt = r.u32()?;
        if fmt != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {fmt}")));
        }
        let version = r.u64()?;
        let count = r.u32()?;
        let mut ps = ParamSet {
            params: BTreeMap::new(),
            version,
        };
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            ps.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(ps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parameter name to tape variable, for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    /// Collects the gradients accumulated on `tape` for every bound parameter.
    /// Parameters the loss never reached get no entry.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        self.vars
            .iter()
            .filter_map(|(k, v)| tape.grad(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

/// Global parameters shared between asynchronous workers.
///
/// Readers take a full snapshot; writers add a scaled gradient. Both hold
/// the lock for the whole operation so a snapshot never observes a partially
/// applied update.
#[derive(Debug, Default)]
pub struct SharedParams {
    inner: RwLock<ParamSet>,
}

impl SharedParams {
    pub fn new(params: ParamSet) -> Self {
        Self {
            inner: RwLock::new(params),
        }
    }

    pub fn snapshot(&self) -> ParamSet {
        self.inner.read().expect("param lock poisoned").clone()
    }

    pub fn version(&self) -> u64 {
        self.inner.read().expect("param lock poisoned").version()
    }

    /// Accumulates `grads` and takes one SGD step, atomically. Returns the
    /// new version and, if asked, a snapshot taken under the same lock.
    pub fn apply_gradients(
        &self,
        grads: &Gradients,
        lr: f64,
        want_snapshot: bool,
    ) -> Result<(u64, Option<ParamSet>)> {
        let mut ps = self.inner.write().expect("param lock poisoned");
        ps.accumulate(grads)?;
        super::optim::sgd_step(&mut ps, lr);
        let snap = want_snapshot.then(|| ps.clone());
        Ok((ps.version(), snap))
    }

    pub fn into_inner(self) -> ParamSet {
        self.inner.into_inner().expect("param lock poisoned")
    }
}
