//! Versioned binary checkpoints of a [`Trainer`].
//!
//! Layout (little endian): 8-byte magic, `u32` format version, the training
//! configuration as `key = value` text, model dimensions, normalization
//! state, counters, named parameter tensors, optimizer moments, the cluster
//! indicator, the best validation snapshot and both histories.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::config::TrainConfig;
use crate::data::NormalizationState;
use crate::error::{Error, Result};
use crate::grouping::ClusterIndicator;
use crate::model::{ForecastModel, ModelDims};
use crate::nn::{Adam, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::training::{BestSnapshot, EpochRecord, IterationRecord, LossBundle, Trainer};

pub const MAGIC: &[u8; 8] = b"FFCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

/// Byte offset of the version field.
pub const VERSION_OFFSET: usize = 8;

const MAX_RANK: u32 = 8;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.write_u32::<LE>(v).unwrap();
    }

    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LE>(v).unwrap();
    }

    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LE>(v).unwrap();
    }

    fn opt_f64(&mut self, v: Option<f64>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.f64(x);
            }
            None => self.u8(0),
        }
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }

    fn store(&mut self, s: &ParamStore) {
        self.u64(s.len() as u64);
        for e in s.entries() {
            self.str(&e.name);
            self.u8(e.group.tag());
            self.tensor(&e.value);
        }
    }

    fn adam(&mut self, a: &Adam) {
        self.f64(a.lr);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.u64(a.steps);
        self.u64(a.params.len() as u64);
        for (k, id) in a.params.iter().enumerate() {
            self.u64(id.index() as u64);
            self.tensor(&a.first_moment[k]);
            self.tensor(&a.second_moment[k]);
        }
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::CorruptCheckpoint(what.to_string())
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.0.get_ref().len() - self.0.position() as usize
    }

    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(|_| corrupt("unexpected end of file"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LE>().map_err(|_| corrupt("unexpected end of file"))
    }

    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(|_| corrupt("unexpected end of file"))
    }

    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem_size.max(1)) > self.remaining() {
            return Err(corrupt(format!("length {n} exceeds file size")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(|_| corrupt("unexpected end of file"))
    }

    fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64()?)),
            t => Err(corrupt(format!("bad option tag {t}"))),
        }
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let mut buf = vec![0; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| corrupt("unexpected end of file"))?;
        String::from_utf8(buf).map_err(|_| corrupt("invalid UTF-8 text"))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank > MAX_RANK {
            return Err(corrupt(format!("tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflow"))?;
        if n.saturating_mul(8) > self.remaining() {
            return Err(corrupt("tensor data exceeds file size"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(&shape, data).map_err(corrupt)
    }

    fn store(&mut self) -> Result<ParamStore> {
        let n = self.len(1)?;
        let mut s = ParamStore::new();
        for _ in 0..n {
            let name = self.str()?;
            let tag = self.u8()?;
            let group = ParamGroup::from_tag(tag).ok_or_else(|| corrupt(format!("bad group tag {tag}")))?;
            let value = self.tensor()?;
            if s.find(&name).is_some() {
                return Err(corrupt(format!("duplicate parameter {name}")));
            }
            s.add(name, group, value);
        }
        Ok(s)
    }

    fn adam(&mut self, store: &ParamStore) -> Result<Adam> {
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let steps = self.u64()?;
        let n = self.len(1)?;
        let mut params = Vec::with_capacity(n);
        let mut first_moment = Vec::with_capacity(n);
        let mut second_moment = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = self.u64()? as usize;
            if idx >= store.len() {
                return Err(corrupt(format!("optimizer refers to parameter {idx}")));
            }
            let id = ParamId(idx);
            let (m, v) = (self.tensor()?, self.tensor()?);
            if m.shape() != store.get(id).shape() || v.shape() != m.shape() {
                return Err(corrupt("optimizer moment shape mismatch"));
            }
            params.push(id);
            first_moment.push(m);
            second_moment.push(v);
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            steps,
            params,
            first_moment,
            second_moment,
        })
    }
}

fn same_layout(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.entries()
            .iter()
            .zip(b.entries())
            .all(|(x, y)| x.name == y.name && x.group == y.group && x.value.shape() == y.value.shape())
}

pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(&t.config.to_kv_text());
    let d = t.model.dims;
    for v in [
        d.n_vars,
        d.window,
        d.horizon,
        d.hidden,
        d.embed_dim,
        d.clusters,
        d.top_n,
    ] {
        w.u64(v as u64);
    }
    w.u8(t.model.discriminator.is_some() as u8);
    match &t.normalization {
        Some(s) => {
            w.u8(1);
            w.u64(s.per_variable_min.len() as u64);
            s.per_variable_min.iter().for_each(|&v| w.f64(v));
            s.per_variable_max.iter().for_each(|&v| w.f64(v));
        }
        None => w.u8(0),
    }
    w.u64(t.epoch);
    w.u64(t.iteration);
    w.u64(t.batch_in_epoch);
    w.store(&t.model.store);
    w.tensor(t.indicator.matrix());
    w.adam(&t.opt_generator);
    match &t.opt_discriminator {
        Some(a) => {
            w.u8(1);
            w.adam(a);
        }
        None => w.u8(0),
    }
    match &t.best {
        Some(b) => {
            w.u8(1);
            w.u64(b.epoch);
            w.f64(b.val_mae);
            w.store(&b.params);
        }
        None => w.u8(0),
    }
    w.u64(t.history.len() as u64);
    for r in &t.history {
        w.u64(r.iteration);
        w.u64(r.epoch);
        let l = r.losses;
        for v in [l.l_forecast, l.l_cluster, l.l_ortho, l.l_adv, l.total_generator] {
            w.f64(v);
        }
        w.opt_f64(r.l_adv_discriminator);
    }
    w.u64(t.epoch_history.len() as u64);
    for r in &t.epoch_history {
        w.u64(r.epoch);
        w.opt_f64(r.val_mae);
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let mut r = Reader(Cursor::new(bytes));
    r.0.set_position(MAGIC.len() as u64);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config = TrainConfig::from_kv_text(&r.str()?)?;
    let mut dv = [0usize; 7];
    for v in dv.iter_mut() {
        *v = r.u64()? as usize;
    }
    let dims = ModelDims {
        n_vars: dv[0],
        window: dv[1],
        horizon: dv[2],
        hidden: dv[3],
        embed_dim: dv[4],
        clusters: dv[5],
        top_n: dv[6],
    };
    let with_disc = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(corrupt(format!("bad discriminator flag {t}"))),
    };
    let normalization = match r.u8()? {
        0 => None,
        1 => {
            let n = r.len(16)?;
            let mins = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let maxs = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Some(NormalizationState {
                per_variable_min: mins,
                per_variable_max: maxs,
            })
        }
        t => return Err(corrupt(format!("bad normalization flag {t}"))),
    };
    let (epoch, iteration, batch_in_epoch) = (r.u64()?, r.u64()?, r.u64()?);
    let store = r.store()?;
    let mut model =
        ForecastModel::new(dims, config.seed, with_disc).map_err(|e| corrupt(format!("dimensions: {e}")))?;
    if !same_layout(&model.store, &store) {
        return Err(corrupt("parameter layout does not match the recorded dimensions"));
    }
    model.store = store;
    let indicator = ClusterIndicator::new(r.tensor()?).map_err(|e| corrupt(format!("indicator: {e}")))?;
    if indicator.n() != dims.n_vars || indicator.k() != dims.clusters {
        return Err(corrupt("indicator shape does not match the recorded dimensions"));
    }
    let opt_generator = r.adam(&model.store)?;
    let opt_discriminator = match r.u8()? {
        0 => None,
        1 => Some(r.adam(&model.store)?),
        t => return Err(corrupt(format!("bad optimizer flag {t}"))),
    };
    let best = match r.u8()? {
        0 => None,
        1 => {
            let epoch = r.u64()?;
            let val_mae = r.f64()?;
            let params = r.store()?;
            if !same_layout(&model.store, &params) {
                return Err(corrupt("best snapshot layout mismatch"));
            }
            Some(BestSnapshot { epoch, val_mae, params })
        }
        t => return Err(corrupt(format!("bad snapshot flag {t}"))),
    };
    let n = r.len(57)?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let iteration = r.u64()?;
        let epoch = r.u64()?;
        let mut l = [0.0; 5];
        for v in l.iter_mut() {
            *v = r.f64()?;
        }
        history.push(IterationRecord {
            iteration,
            epoch,
            losses: LossBundle {
                l_forecast: l[0],
                l_cluster: l[1],
                l_ortho: l[2],
                l_adv: l[3],
                total_generator: l[4],
            },
            l_adv_discriminator: r.opt_f64()?,
        });
    }
    let n = r.len(9)?;
    let mut epoch_history = Vec::with_capacity(n);
    for _ in 0..n {
        epoch_history.push(EpochRecord {
            epoch: r.u64()?,
            val_mae: r.opt_f64()?,
        });
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Trainer {
        config,
        model,
        opt_generator,
        opt_discriminator,
        indicator,
        epoch,
        iteration,
        batch_in_epoch,
        history,
        epoch_history,
        best,
        normalization,
    })
}

/// Writes the checkpoint through a temporary sibling file and a rename.
pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(t)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
