//! Federated datasets: synthetic pools, Dirichlet partitioning with
//! controllable heterogeneity, perturbed copies differing in one sample, and
//! estimators for the gradient-noise and heterogeneity constants.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::linalg;
use crate::model::{ModelError, ModelSpec};
use crate::rng::{domain, Stream};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("pool of {got} samples cannot fill {m} shards of {n}")]
    InsufficientPool { got: usize, m: usize, n: usize },
    #[error("held-out pool is empty; cannot draw a replacement sample")]
    EmptyHeldOut,
    #[error("sample position ({agent}, {position}) outside {m} x {n} dataset")]
    BadIndex {
        agent: usize,
        position: usize,
        m: usize,
        n: usize,
    },
    #[error("no probe parameters supplied")]
    EmptyProbes,
    #[error("batch size {b} outside 1..={n}")]
    BatchOutOfRange { b: usize, n: usize },
    #[error("sample CSV parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no samples")]
    NoSamples,
    #[error("metadata error: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Class index for classification losses, real target otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Label<F: Scalar> {
    Class(usize),
    Value(F),
}

impl<F: Scalar> Label<F> {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Value(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F: Scalar> {
    pub features: Vec<F>,
    pub label: Label<F>,
}

/// Generation recipe recorded alongside the shards.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    pub alpha: f64,
}

/// `m` shards of exactly `n` samples each plus a held-out evaluation pool.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset<F: Scalar> {
    shards: Vec<Vec<Sample<F>>>,
    held_out: Vec<Sample<F>>,
    pub meta: DatasetMeta,
}

/// Read access shared by a dataset and its perturbed views, so a coupled run
/// can step both sides through one code path.
pub trait SampleAccess<F: Scalar> {
    fn agents(&self) -> usize;
    fn shard_len(&self) -> usize;
    fn sample(&self, agent: usize, idx: usize) -> &Sample<F>;
}

impl<F: Scalar> FederatedDataset<F> {
    pub fn from_parts(
        shards: Vec<Vec<Sample<F>>>,
        held_out: Vec<Sample<F>>,
        meta: DatasetMeta,
    ) -> Result<Self, DataError> {
        if shards.is_empty() {
            return Err(DataError::InvalidCounts("no shards".into()));
        }
        let n = shards[0].len();
        if n == 0 || shards.iter().any(|s| s.len() != n) {
            return Err(DataError::InvalidCounts(
                "shards must be nonempty and equally sized".into(),
            ));
        }
        Ok(FederatedDataset {
            shards,
            held_out,
            meta,
        })
    }

    pub fn shard(&self, k: usize) -> &[Sample<F>] {
        &self.shards[k]
    }

    pub fn held_out(&self) -> &[Sample<F>] {
        &self.held_out
    }

    /// All training samples in shard-major order.
    pub fn iter_all(&self) -> impl Iterator<Item = &Sample<F>> {
        self.shards.iter().flat_map(|s| s.iter())
    }

    pub fn total(&self) -> usize {
        self.agents() * self.shard_len()
    }

    /// Replace one entry, returning the previous sample. Used by tests to
    /// check that reverting a perturbation restores the dataset bit-for-bit.
    pub fn swap_sample(
        &mut self,
        agent: usize,
        position: usize,
        sample: Sample<F>,
    ) -> Result<Sample<F>, DataError> {
        let (m, n) = (self.agents(), self.shard_len());
        if agent >= m || position >= n {
            return Err(DataError::BadIndex {
                agent,
                position,
                m,
                n,
            });
        }
        Ok(std::mem::replace(&mut self.shards[agent][position], sample))
    }
}

impl<F: Scalar> SampleAccess<F> for FederatedDataset<F> {
    fn agents(&self) -> usize {
        self.shards.len()
    }
    fn shard_len(&self) -> usize {
        self.shards[0].len()
    }
    fn sample(&self, agent: usize, idx: usize) -> &Sample<F> {
        &self.shards[agent][idx]
    }
}

/// The perturbed dataset `S^(ij)`: shares all storage with the base dataset
/// except the single replaced entry.
#[derive(Debug, Clone)]
pub struct PerturbedPair<'a, F: Scalar> {
    pub base: &'a FederatedDataset<F>,
    /// Agent whose shard is perturbed (0-based).
    pub agent: usize,
    /// Position within the shard (0-based).
    pub position: usize,
    pub replacement: Sample<F>,
}

impl<'a, F: Scalar> SampleAccess<F> for PerturbedPair<'a, F> {
    fn agents(&self) -> usize {
        self.base.agents()
    }
    fn shard_len(&self) -> usize {
        self.base.shard_len()
    }
    fn sample(&self, agent: usize, idx: usize) -> &Sample<F> {
        if agent == self.agent && idx == self.position {
            &self.replacement
        } else {
            self.base.sample(agent, idx)
        }
    }
}

/// Construct `S^(ij)` with a replacement drawn uniformly from the held-out
/// pool (seeded).
pub fn make_perturbed<F: Scalar>(
    base: &FederatedDataset<F>,
    position: usize,
    agent: usize,
    seed: u64,
) -> Result<PerturbedPair<'_, F>, DataError> {
    let (m, n) = (base.agents(), base.shard_len());
    if agent >= m || position >= n {
        return Err(DataError::BadIndex {
            agent,
            position,
            m,
            n,
        });
    }
    if base.held_out.is_empty() {
        return Err(DataError::EmptyHeldOut);
    }
    let mut s = Stream::keyed(&[seed, domain::REPLACEMENT, agent as u64, position as u64]);
    let replacement = base.held_out[s.index(base.held_out.len())].clone();
    Ok(PerturbedPair {
        base,
        agent,
        position,
        replacement,
    })
}

/// Identity perturbation: the replacement equals the original sample, so the
/// coupled runs coincide. Debug aid for the stability pipeline.
pub fn make_identity_perturbed<F: Scalar>(
    base: &FederatedDataset<F>,
    position: usize,
    agent: usize,
) -> Result<PerturbedPair<'_, F>, DataError> {
    let (m, n) = (base.agents(), base.shard_len());
    if agent >= m || position >= n {
        return Err(DataError::BadIndex {
            agent,
            position,
            m,
            n,
        });
    }
    Ok(PerturbedPair {
        base,
        agent,
        position,
        replacement: base.sample(agent, position).clone(),
    })
}

/// Gaussian class-conditional pool: class means are seeded unit directions
/// scaled by `separation`, samples add standard normal noise.
pub fn synth_classification<F: Scalar>(
    seed: u64,
    total: usize,
    dim: usize,
    classes: usize,
    separation: f64,
) -> Result<Vec<Sample<F>>, DataError> {
    if classes < 2 || total < classes || dim == 0 {
        return Err(DataError::InvalidCounts(format!(
            "need total >= classes >= 2 and dim >= 1 (got total={total}, classes={classes}, dim={dim})"
        )));
    }
    let mut means = Vec::with_capacity(classes);
    let mut ms = Stream::keyed(&[seed, domain::SYNTH, 0]);
    for _ in 0..classes {
        let mut dir: Vec<f64> = (0..dim).map(|_| ms.normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            dir.iter_mut().for_each(|v| *v *= separation / norm);
        }
        means.push(dir);
    }
    let base = total / classes;
    let extra = total % classes;
    let mut pool = Vec::with_capacity(total);
    for (c, mean) in means.iter().enumerate() {
        let count = base + usize::from(c < extra);
        let mut cs = Stream::keyed(&[seed, domain::SYNTH, 1, c as u64]);
        for _ in 0..count {
            let features: Vec<F> = mean.iter().map(|&mu| F::lit(mu + cs.normal())).collect();
            pool.push(Sample {
                features,
                label: Label::Class(c),
            });
        }
    }
    Ok(pool)
}

fn class_of<F: Scalar>(s: &Sample<F>) -> usize {
    s.label.class().unwrap_or(0)
}

/// Partition a pool into `m` shards of exactly `n` samples with per-agent
/// class proportions drawn from a symmetric Dirichlet(alpha).
///
/// Small alpha concentrates each shard on few classes; large alpha
/// approaches uniform proportions. Samples are assigned without replacement;
/// when an over-subscribed class runs out, the shortfall is filled from the
/// remaining classes (the agent's own classes first). Leftover samples become
/// the held-out pool.
pub fn partition_dirichlet<F: Scalar>(
    pool: &[Sample<F>],
    m: usize,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<FederatedDataset<F>, DataError> {
    if m == 0 || n == 0 {
        return Err(DataError::InvalidCounts("need m >= 1 and n >= 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(DataError::InvalidCounts(format!("alpha must be > 0, got {alpha}")));
    }
    if pool.len() < m * n {
        return Err(DataError::InsufficientPool {
            got: pool.len(),
            m,
            n,
        });
    }
    let classes = pool.iter().map(class_of).max().unwrap_or(0) + 1;

    // Shuffle the index list of each class (Fisher-Yates).
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in pool.iter().enumerate() {
        by_class[class_of(s)].push(i);
    }
    for (c, list) in by_class.iter_mut().enumerate() {
        let mut st = Stream::keyed(&[seed, domain::PARTITION, 0, c as u64]);
        for i in (1..list.len()).rev() {
            list.swap(i, st.index(i + 1));
        }
    }
    // Consume from the back of each list.
    let mut cursor: Vec<usize> = by_class.iter().map(|l| l.len()).collect();

    let mut shards = Vec::with_capacity(m);
    for k in 0..m {
        let mut st = Stream::keyed(&[seed, domain::PARTITION, 1, k as u64]);
        let props = st.dirichlet_symmetric(alpha, classes);

        // Largest-remainder rounding of n * props to integer counts summing to n.
        let mut want: Vec<usize> = props.iter().map(|p| (p * n as f64).floor() as usize).collect();
        let mut short = n - want.iter().sum::<usize>().min(n);
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| {
            let ra = props[a] * n as f64 - want[a] as f64;
            let rb = props[b] * n as f64 - want[b] as f64;
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(classes * 2) {
            if short == 0 {
                break;
            }
            want[c] += 1;
            short -= 1;
        }

        let mut shard_idx: Vec<usize> = Vec::with_capacity(n);
        for c in 0..classes {
            let take = want[c].min(cursor[c]);
            for _ in 0..take {
                cursor[c] -= 1;
                shard_idx.push(by_class[c][cursor[c]]);
            }
        }
        // Fill any shortfall: the agent's own classes first, then the rest.
        if shard_idx.len() < n {
            let mut fill_order: Vec<usize> = (0..classes).collect();
            fill_order.sort_by(|&a, &b| {
                props[b].partial_cmp(&props[a]).unwrap().then(a.cmp(&b))
            });
            for &c in &fill_order {
                while shard_idx.len() < n && cursor[c] > 0 {
                    cursor[c] -= 1;
                    shard_idx.push(by_class[c][cursor[c]]);
                }
            }
        }
        debug_assert_eq!(shard_idx.len(), n, "pool accounting broke");
        shards.push(shard_idx.iter().map(|&i| pool[i].clone()).collect());
    }

    let mut held_out = Vec::new();
    for c in 0..classes {
        for &i in &by_class[c][..cursor[c]] {
            held_out.push(pool[i].clone());
        }
    }

    let dim = pool[0].features.len();
    FederatedDataset::from_parts(
        shards,
        held_out,
        DatasetMeta {
            seed,
            dim,
            classes,
            alpha,
        },
    )
}

/// Heterogeneity estimate: max over probes of
/// `(1/m) sum_k ||grad R_k(theta) - grad R(theta)||^2`.
///
/// A lower estimate of the assumption constant (the true supremum over all
/// parameters is not computable); probes should include trajectory snapshots.
pub fn estimate_heterogeneity<F: Scalar>(
    dataset: &FederatedDataset<F>,
    model: &ModelSpec<F>,
    probes: &[Vec<F>],
) -> Result<F, DataError> {
    if probes.is_empty() {
        return Err(DataError::EmptyProbes);
    }
    let m = dataset.agents();
    let mut worst = F::zero();
    for theta in probes {
        let shard_grads: Vec<Vec<F>> = (0..m)
            .map(|k| model.batch_grad(theta, dataset.shard(k).iter()))
            .collect::<Result<_, _>>()?;
        let global = linalg::mean_rows(&shard_grads);
        let mut acc = F::zero();
        for g in &shard_grads {
            acc += linalg::norm_sq(&linalg::sub(g, &global));
        }
        worst = worst.max(acc / F::from_usize(m).unwrap());
    }
    Ok(worst)
}

/// Gradient-noise estimate: max over probes and agents of the exact
/// single-sample variance, scaled by `1/b` for i.i.d. mini-batches.
pub fn estimate_gradient_noise<F: Scalar>(
    dataset: &FederatedDataset<F>,
    model: &ModelSpec<F>,
    probes: &[Vec<F>],
    batch: usize,
) -> Result<F, DataError> {
    if probes.is_empty() {
        return Err(DataError::EmptyProbes);
    }
    let n = dataset.shard_len();
    if batch == 0 || batch > n {
        return Err(DataError::BatchOutOfRange { b: batch, n });
    }
    let mut worst = F::zero();
    for theta in probes {
        for k in 0..dataset.agents() {
            let shard = dataset.shard(k);
            let mean = model.batch_grad(theta, shard.iter())?;
            let mut var = F::zero();
            for z in shard {
                let g = model.grad(theta, z)?;
                var += linalg::norm_sq(&linalg::sub(&g, &mean));
            }
            var /= F::from_usize(n).unwrap();
            worst = worst.max(var);
        }
    }
    Ok(worst / F::from_usize(batch).unwrap())
}

// ---------------------------------------------------------------------------
// CSV and directory serialization
// ---------------------------------------------------------------------------

fn format_sample<F: Scalar>(s: &Sample<F>) -> String {
    let mut line = String::new();
    for f in &s.features {
        let _ = write!(line, "{},", f);
    }
    match &s.label {
        Label::Class(c) => {
            let _ = write!(line, "{c}");
        }
        Label::Value(v) => {
            let _ = write!(line, "{v}");
        }
    }
    line
}

/// Parse samples from CSV text: `d` feature columns then one label column.
/// An integer label is a class index, anything else a real target.
pub fn parse_samples_csv<F: Scalar>(text: &str) -> Result<Vec<Sample<F>>, DataError> {
    let mut out: Vec<Sample<F>> = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(DataError::Parse {
                line: idx + 1,
                msg: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DataError::Parse {
                    line: idx + 1,
                    msg: format!("row has {} columns, expected {}", fields.len(), w),
                })
            }
            _ => {}
        }
        let mut features = Vec::with_capacity(fields.len() - 1);
        for f in &fields[..fields.len() - 1] {
            let v: f64 = f.parse().map_err(|_| DataError::Parse {
                line: idx + 1,
                msg: format!("not a numeric feature: {f:?}"),
            })?;
            features.push(F::lit(v));
        }
        let lab = fields[fields.len() - 1];
        let label = if let Ok(c) = lab.parse::<i64>() {
            if c < 0 {
                Label::Value(F::lit(c as f64))
            } else {
                Label::Class(c as usize)
            }
        } else {
            let v: f64 = lab.parse().map_err(|_| DataError::Parse {
                line: idx + 1,
                msg: format!("not a numeric label: {lab:?}"),
            })?;
            Label::Value(F::lit(v))
        };
        out.push(Sample { features, label });
    }
    if out.is_empty() {
        return Err(DataError::NoSamples);
    }
    Ok(out)
}

/// Load a sample pool from a CSV file.
pub fn load_csv<F: Scalar>(path: &Path) -> Result<Vec<Sample<F>>, DataError> {
    parse_samples_csv(&fs::read_to_string(path)?)
}

/// Write the dataset as a directory of per-shard CSV files plus a metadata
/// file (flat `key=value` lines).
pub fn save_dir<F: Scalar>(dataset: &FederatedDataset<F>, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    for k in 0..dataset.agents() {
        let mut text = String::new();
        for s in dataset.shard(k) {
            text.push_str(&format_sample(s));
            text.push('\n');
        }
        fs::write(dir.join(format!("shard_{k}.csv")), text)?;
    }
    let mut text = String::new();
    for s in dataset.held_out() {
        text.push_str(&format_sample(s));
        text.push('\n');
    }
    fs::write(dir.join("held_out.csv"), text)?;

    let meta = &dataset.meta;
    let text = format!(
        "seed={}\ndim={}\nclasses={}\nalpha={}\nagents={}\nshard_len={}\n",
        meta.seed,
        meta.dim,
        meta.classes,
        meta.alpha,
        dataset.agents(),
        dataset.shard_len()
    );
    fs::write(dir.join("meta.txt"), text)?;
    Ok(())
}

/// Load a dataset previously written by [`save_dir`].
pub fn load_dir<F: Scalar>(dir: &Path) -> Result<FederatedDataset<F>, DataError> {
    let meta_text = fs::read_to_string(dir.join("meta.txt"))?;
    let mut seed = None;
    let mut dim = None;
    let mut classes = None;
    let mut alpha = None;
    let mut agents = None;
    for line in meta_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Meta(format!("bad metadata line: {line:?}")))?;
        match k {
            "seed" => seed = v.parse().ok(),
            "dim" => dim = v.parse().ok(),
            "classes" => classes = v.parse().ok(),
            "alpha" => alpha = v.parse().ok(),
            "agents" => agents = v.parse().ok(),
            "shard_len" => {}
            other => return Err(DataError::Meta(format!("unknown metadata key {other:?}"))),
        }
    }
    let agents: usize = agents.ok_or_else(|| DataError::Meta("missing agents".into()))?;
    let mut shards = Vec::with_capacity(agents);
    for k in 0..agents {
        let text = fs::read_to_string(dir.join(format!("shard_{k}.csv")))?;
        shards.push(parse_samples_csv(&text)?);
    }
    let held_text = fs::read_to_string(dir.join("held_out.csv"))?;
    let held_out = match parse_samples_csv(&held_text) {
        Ok(s) => s,
        Err(DataError::NoSamples) => Vec::new(),
        Err(e) => return Err(e),
    };
    FederatedDataset::from_parts(
        shards,
        held_out,
        DatasetMeta {
            seed: seed.ok_or_else(|| DataError::Meta("missing seed".into()))?,
            dim: dim.ok_or_else(|| DataError::Meta("missing dim".into()))?,
            classes: classes.ok_or_else(|| DataError::Meta("missing classes".into()))?,
            alpha: alpha.ok_or_else(|| DataError::Meta("missing alpha".into()))?,
        },
    )
}
