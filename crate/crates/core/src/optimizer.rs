//! Round-synchronous decentralized SGD with multiple gossip steps, the
//! coupled twin run used by perturbed-dataset stability experiments, and the
//! centralized mini-batch baseline.
//!
//! Each round: every agent draws `b` sample indices i.i.d. uniform with
//! replacement from its shard, takes one stochastic gradient step, then the
//! whole network performs `Q` gossip averaging rounds. Index draws come from
//! counter streams keyed `(seed, agent, round)`, so a coupled run on the
//! perturbed dataset consumes exactly the same draws, and reruns are
//! bit-identical no matter how the caller schedules them.

use thiserror::Error;

use crate::data::{FederatedDataset, Sample, SampleAccess};
use crate::linalg;
use crate::metrics::{self, RoundRecord};
use crate::model::{ModelError, ModelSpec};
use crate::rng::{domain, Stream};
use crate::topology::{build_topology, GossipMatrix, TopologyError, TopologyKind};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Step-size schedule: `c / (t + 1)` decaying, or a constant (the theory
/// choice is `1 / beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule<F: Scalar> {
    Decaying { c: F },
    Constant { eta: F },
}

impl<F: Scalar> LrSchedule<F> {
    pub fn constant_from_beta(beta: F) -> Result<Self, OptError> {
        if beta <= F::zero() {
            return Err(OptError::InvalidConfig("beta must be positive".into()));
        }
        Ok(LrSchedule::Constant {
            eta: F::one() / beta,
        })
    }

    pub fn validate(&self) -> Result<(), OptError> {
        let ok = match self {
            LrSchedule::Decaying { c } => *c > F::zero(),
            LrSchedule::Constant { eta } => *eta > F::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(OptError::InvalidConfig(
                "learning-rate constants must be positive".into(),
            ))
        }
    }

    /// Step size for round `t` (0-based).
    pub fn eta(&self, t: usize) -> F {
        match self {
            LrSchedule::Decaying { c } => *c / F::from_usize(t + 1).unwrap(),
            LrSchedule::Constant { eta } => *eta,
        }
    }
}

/// Initial point; all agents share it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind<F: Scalar> {
    /// The default: every agent starts at the zero vector.
    Zeros,
    /// Shared Gaussian starting point drawn from its own seed, so a study
    /// can pin one initialization across runs.
    Gaussian { scale: F, seed: u64 },
}

/// Which per-round metrics to log. Weight distance is always tracked on
/// coupled runs; the flags below control the costlier dataset scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordSet {
    pub train_loss: bool,
    pub test_loss: bool,
    pub consensus_error: bool,
    pub gbar: bool,
}

impl RecordSet {
    pub fn all() -> Self {
        RecordSet {
            train_loss: true,
            test_loss: true,
            consensus_error: true,
            gbar: true,
        }
    }
    pub fn none() -> Self {
        RecordSet {
            train_loss: false,
            test_loss: false,
            consensus_error: false,
            gbar: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig<F: Scalar> {
    pub topology: TopologyKind<F>,
    pub model: ModelSpec<F>,
    /// Rounds T.
    pub rounds: usize,
    /// Gossip steps Q per round (0 admits pure local SGD for ablations).
    pub gossip_steps: usize,
    pub lr: LrSchedule<F>,
    /// Mini-batch size b; draws are i.i.d. with replacement.
    pub batch: usize,
    pub seed: u64,
    pub init: InitKind<F>,
    /// Log every `record_every` rounds (the initial and final states are
    /// always logged).
    pub record_every: usize,
    pub record: RecordSet,
}

impl<F: Scalar> RunConfig<F> {
    fn validate(&self, n: usize) -> Result<(), OptError> {
        if self.rounds == 0 {
            return Err(OptError::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.batch == 0 || self.batch > n {
            return Err(OptError::InvalidConfig(format!(
                "batch {} outside 1..={n}",
                self.batch
            )));
        }
        if self.record_every == 0 {
            return Err(OptError::InvalidConfig("record_every must be >= 1".into()));
        }
        self.lr.validate()
    }
}

/// Final state and per-round measurements of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome<F: Scalar> {
    /// Per-agent parameters after the last round (m x d).
    pub params: Vec<Vec<F>>,
    /// Snapshots at t = 0, the cadence grid, and t = T.
    pub records: Vec<RoundRecord<F>>,
    /// Averaged iterate after every round, `t = 0..=T`.
    pub mean_trajectory: Vec<Vec<F>>,
}

impl<F: Scalar> RunOutcome<F> {
    /// Averaged final iterate (the mean over agents).
    pub fn averaged(&self) -> Vec<F> {
        averaged_iterate(&self.params)
    }
}

/// Mean over agents of the parameter vectors.
pub fn averaged_iterate<F: Scalar>(params: &[Vec<F>]) -> Vec<F> {
    linalg::mean_rows(params)
}

/// The two coupled trajectories of a stability experiment.
#[derive(Debug, Clone)]
pub struct CoupledOutcome<F: Scalar> {
    pub primary: RunOutcome<F>,
    pub twin: RunOutcome<F>,
    /// `sum_k ||theta_k - theta_tilde_k||^2` at every round `0..=T`.
    pub weight_series: Vec<(usize, F)>,
    pub perturb_agent: usize,
    pub perturb_position: usize,
}

/// Centralized mini-batch SGD baseline.
#[derive(Debug, Clone)]
pub struct CentralOutcome<F: Scalar> {
    pub theta: Vec<F>,
    /// Parameter vector after every round, `t = 0..=T`.
    pub trajectory: Vec<Vec<F>>,
    pub records: Vec<RoundRecord<F>>,
}

/// Sample indices drawn by `agent` in `round`: `batch` i.i.d. uniform draws
/// with replacement from `0..n`. Pure function of the key, shared by runs,
/// coupled twins, and test oracles.
pub fn round_indices(seed: u64, agent: usize, round: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut st = Stream::keyed(&[seed, domain::SAMPLE_DRAW, agent as u64, round as u64]);
    (0..batch).map(|_| st.index(n)).collect()
}

/// Index draws of the centralized baseline (batch `count` over the pool).
pub fn central_round_indices(seed: u64, round: usize, count: usize, total: usize) -> Vec<usize> {
    let mut st = Stream::keyed(&[seed, domain::CENTRAL_DRAW, round as u64]);
    (0..count).map(|_| st.index(total)).collect()
}

/// One local SGD step: `theta - eta * mean_i grad(theta; shard[indices[i]])`.
pub fn local_update<F: Scalar, D: SampleAccess<F>>(
    model: &ModelSpec<F>,
    data: &D,
    agent: usize,
    theta: &[F],
    eta: F,
    indices: &[usize],
) -> Result<Vec<F>, OptError> {
    let g = model.batch_grad(theta, indices.iter().map(|&i| data.sample(agent, i)))?;
    let mut out = theta.to_vec();
    linalg::axpy(&mut out, -eta, &g);
    Ok(out)
}

fn initial_params<F: Scalar>(cfg: &RunConfig<F>, m: usize) -> Vec<Vec<F>> {
    let theta0 = match cfg.init {
        InitKind::Zeros => vec![F::zero(); cfg.model.dim],
        InitKind::Gaussian { scale, seed } => {
            let mut st = Stream::keyed(&[seed, domain::INIT]);
            (0..cfg.model.dim)
                .map(|_| scale * F::lit(st.normal()))
                .collect()
        }
    };
    vec![theta0; m]
}

fn should_record(cfg_every: usize, t: usize, rounds: usize) -> bool {
    t == 0 || t == rounds || t % cfg_every == 0
}

fn snapshot<F: Scalar, D: SampleAccess<F>>(
    cfg: &RunConfig<F>,
    data: &D,
    held_out: &[Sample<F>],
    params: &[Vec<F>],
    t: usize,
    eta: F,
    weight_distance: Option<F>,
) -> Result<RoundRecord<F>, OptError> {
    let theta_bar = averaged_iterate(params);
    let model = &cfg.model;
    let train_loss = if cfg.record.train_loss {
        let (m, n) = (data.agents(), data.shard_len());
        let mut acc = F::zero();
        for k in 0..m {
            for i in 0..n {
                acc += model.loss(&theta_bar, data.sample(k, i))?;
            }
        }
        Some(acc / F::from_usize(m * n).unwrap())
    } else {
        None
    };
    // Held-out risk of the deployed models: each agent serves its own
    // parameters, so the test loss is the per-agent mean (for a single
    // agent or the centralized baseline this is just the model's risk).
    let test_loss = if cfg.record.test_loss && !held_out.is_empty() {
        let mut acc = F::zero();
        for theta in params {
            acc += model.empirical_risk(theta, held_out.iter())?;
        }
        Some(acc / F::from_usize(params.len()).unwrap())
    } else {
        None
    };
    let consensus = if cfg.record.consensus_error {
        Some(metrics::consensus_error(params))
    } else {
        None
    };
    let gbar = if cfg.record.gbar {
        Some(
            metrics::empirical_gbar(model, &theta_bar, data)
                .map_err(|e| OptError::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };
    Ok(RoundRecord {
        t,
        train_loss,
        test_loss,
        consensus_error: consensus,
        weight_distance,
        gbar,
        eta,
    })
}

struct RunState<F: Scalar> {
    params: Vec<Vec<F>>,
    records: Vec<RoundRecord<F>>,
    mean_trajectory: Vec<Vec<F>>,
}

impl<F: Scalar> RunState<F> {
    fn into_outcome(self) -> RunOutcome<F> {
        RunOutcome {
            params: self.params,
            records: self.records,
            mean_trajectory: self.mean_trajectory,
        }
    }
}

fn run_generic<F: Scalar, D: SampleAccess<F>>(
    cfg: &RunConfig<F>,
    data: &D,
    held_out: &[Sample<F>],
    w: &GossipMatrix<F>,
) -> Result<RunOutcome<F>, OptError> {
    let m = data.agents();
    let n = data.shard_len();
    cfg.validate(n)?;

    let mut state = RunState {
        params: initial_params(cfg, m),
        records: Vec::new(),
        mean_trajectory: Vec::with_capacity(cfg.rounds + 1),
    };
    state.mean_trajectory.push(averaged_iterate(&state.params));
    state.records.push(snapshot(
        cfg,
        data,
        held_out,
        &state.params,
        0,
        cfg.lr.eta(0),
        None,
    )?);

    for t in 0..cfg.rounds {
        let eta = cfg.lr.eta(t);
        step_round(cfg, data, w, &mut state.params, t, eta)?;
        state.mean_trajectory.push(averaged_iterate(&state.params));
        if should_record(cfg.record_every, t + 1, cfg.rounds) {
            state
                .records
                .push(snapshot(cfg, data, held_out, &state.params, t + 1, eta, None)?);
        }
    }
    Ok(state.into_outcome())
}

/// Local updates on every agent, then `Q` gossip rounds.
fn step_round<F: Scalar, D: SampleAccess<F>>(
    cfg: &RunConfig<F>,
    data: &D,
    w: &GossipMatrix<F>,
    params: &mut Vec<Vec<F>>,
    t: usize,
    eta: F,
) -> Result<(), OptError> {
    let n = data.shard_len();
    let mut updated = Vec::with_capacity(params.len());
    for (k, theta) in params.iter().enumerate() {
        let idx = round_indices(cfg.seed, k, t, cfg.batch, n);
        updated.push(local_update(&cfg.model, data, k, theta, eta, &idx)?);
    }
    *params = w.multi_gossip(&updated, cfg.gossip_steps)?;
    Ok(())
}

/// Execute DSGD-MGS on a federated dataset.
pub fn dsgd_mgs_run<F: Scalar>(
    cfg: &RunConfig<F>,
    dataset: &FederatedDataset<F>,
) -> Result<RunOutcome<F>, OptError> {
    let w = build_topology(&cfg.topology, dataset.agents())?;
    run_generic(cfg, dataset, dataset.held_out(), &w)
}

/// Run the coupled pair of trajectories on `S` and `S^(ij)`, sharing every
/// sample-index draw. The per-round coupling is asserted, not assumed.
pub fn coupled_stability_run<'a, F: Scalar>(
    cfg: &RunConfig<F>,
    dataset: &FederatedDataset<F>,
    pair: &crate::data::PerturbedPair<'a, F>,
) -> Result<CoupledOutcome<F>, OptError> {
    let m = dataset.agents();
    let n = dataset.shard_len();
    cfg.validate(n)?;
    let w = build_topology(&cfg.topology, m)?;

    let mut primary = RunState {
        params: initial_params(cfg, m),
        records: Vec::new(),
        mean_trajectory: Vec::with_capacity(cfg.rounds + 1),
    };
    let mut twin = RunState {
        params: primary.params.clone(),
        records: Vec::new(),
        mean_trajectory: Vec::with_capacity(cfg.rounds + 1),
    };
    let mut weight_series = Vec::with_capacity(cfg.rounds + 1);

    let wd0 = metrics::weight_distance(&primary.params, &twin.params);
    weight_series.push((0, wd0));
    primary.mean_trajectory.push(averaged_iterate(&primary.params));
    twin.mean_trajectory.push(averaged_iterate(&twin.params));
    primary.records.push(snapshot(
        cfg,
        dataset,
        dataset.held_out(),
        &primary.params,
        0,
        cfg.lr.eta(0),
        Some(wd0),
    )?);

    for t in 0..cfg.rounds {
        let eta = cfg.lr.eta(t);
        let mut up_a = Vec::with_capacity(m);
        let mut up_b = Vec::with_capacity(m);
        for k in 0..m {
            let idx_a = round_indices(cfg.seed, k, t, cfg.batch, n);
            let idx_b = round_indices(cfg.seed, k, t, cfg.batch, n);
            // Coupling soundness: both runs must consume identical draws.
            assert_eq!(idx_a, idx_b, "coupled index streams diverged");
            up_a.push(local_update(&cfg.model, dataset, k, &primary.params[k], eta, &idx_a)?);
            up_b.push(local_update(&cfg.model, pair, k, &twin.params[k], eta, &idx_b)?);
        }
        primary.params = w.multi_gossip(&up_a, cfg.gossip_steps)?;
        twin.params = w.multi_gossip(&up_b, cfg.gossip_steps)?;

        let wd = metrics::weight_distance(&primary.params, &twin.params);
        weight_series.push((t + 1, wd));
        primary.mean_trajectory.push(averaged_iterate(&primary.params));
        twin.mean_trajectory.push(averaged_iterate(&twin.params));
        if should_record(cfg.record_every, t + 1, cfg.rounds) {
            primary.records.push(snapshot(
                cfg,
                dataset,
                dataset.held_out(),
                &primary.params,
                t + 1,
                eta,
                Some(wd),
            )?);
        }
    }

    Ok(CoupledOutcome {
        primary: primary.into_outcome(),
        twin: twin.into_outcome(),
        weight_series,
        perturb_agent: pair.agent,
        perturb_position: pair.position,
    })
}

/// Centralized mini-batch SGD over the pooled dataset: one parameter vector,
/// a per-round batch of `agents * cfg.batch` uniform draws, the same
/// schedules as the decentralized runs.
pub fn centralized_minibatch_sgd<F: Scalar>(
    cfg: &RunConfig<F>,
    pool: &[Sample<F>],
    agents: usize,
    held_out: &[Sample<F>],
) -> Result<CentralOutcome<F>, OptError> {
    if pool.is_empty() {
        return Err(OptError::InvalidConfig("empty pooled dataset".into()));
    }
    cfg.validate(pool.len())?;
    let batch = agents * cfg.batch;
    if batch == 0 {
        return Err(OptError::InvalidConfig("need at least one agent".into()));
    }

    let mut theta = initial_params(cfg, 1).pop().unwrap();
    let mut trajectory = Vec::with_capacity(cfg.rounds + 1);
    trajectory.push(theta.clone());
    let mut records = Vec::new();
    let snap = |theta: &Vec<F>, t: usize, eta: F| -> Result<RoundRecord<F>, OptError> {
        let train_loss = if cfg.record.train_loss {
            Some(cfg.model.empirical_risk(theta, pool.iter())?)
        } else {
            None
        };
        let test_loss = if cfg.record.test_loss && !held_out.is_empty() {
            Some(cfg.model.empirical_risk(theta, held_out.iter())?)
        } else {
            None
        };
        Ok(RoundRecord {
            t,
            train_loss,
            test_loss,
            consensus_error: None,
            weight_distance: None,
            gbar: None,
            eta,
        })
    };
    records.push(snap(&theta, 0, cfg.lr.eta(0))?);

    for t in 0..cfg.rounds {
        let eta = cfg.lr.eta(t);
        let idx = central_round_indices(cfg.seed, t, batch, pool.len());
        let g = cfg.model.batch_grad(&theta, idx.iter().map(|&i| &pool[i]))?;
        linalg::axpy(&mut theta, -eta, &g);
        trajectory.push(theta.clone());
        if should_record(cfg.record_every, t + 1, cfg.rounds) {
            records.push(snap(&theta, t + 1, eta)?);
        }
    }
    Ok(CentralOutcome {
        theta,
        trajectory,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        make_identity_perturbed, make_perturbed, partition_dirichlet, synth_classification,
        DatasetMeta, Label,
    };
    use crate::rng::Stream;

    fn quad_dataset(m: usize, n: usize, spread: f64) -> FederatedDataset<f64> {
        let mut st = Stream::keyed(&[500, m as u64, n as u64]);
        let shards = (0..m)
            .map(|k| {
                let center = k as f64 * spread;
                (0..n)
                    .map(|_| Sample {
                        features: vec![center + st.normal(), center - st.normal()],
                        label: Label::Value(0.0),
                    })
                    .collect()
            })
            .collect();
        let held = vec![Sample {
            features: vec![0.0, 0.0],
            label: Label::Value(0.0),
        }];
        FederatedDataset::from_parts(
            shards,
            held,
            DatasetMeta {
                seed: 0,
                dim: 2,
                classes: 1,
                alpha: 1.0,
            },
        )
        .unwrap()
    }

    fn quad_config(seed: u64) -> RunConfig<f64> {
        RunConfig {
            topology: TopologyKind::Ring,
            model: ModelSpec::quadratic_shared(vec![1.0, 1.0]),
            rounds: 30,
            gossip_steps: 1,
            lr: LrSchedule::Decaying { c: 0.5 },
            batch: 1,
            seed,
            init: InitKind::Zeros,
            record_every: 1,
            record: RecordSet::all(),
        }
    }

    #[test]
    fn lr_schedule_values() {
        let d: LrSchedule<f64> = LrSchedule::Decaying { c: 1.0 };
        assert_eq!(d.eta(0), 1.0);
        let d2: LrSchedule<f64> = LrSchedule::Decaying { c: 2.0 };
        assert_eq!(d2.eta(3), 0.5);
        let c = LrSchedule::constant_from_beta(4.0f64).unwrap();
        for t in 0..5 {
            assert_eq!(c.eta(t), 0.25);
        }
        assert!(LrSchedule::constant_from_beta(0.0f64).is_err());
        assert!((LrSchedule::Decaying { c: -1.0f64 }).validate().is_err());
    }

    #[test]
    fn local_update_zero_eta_is_identity() {
        let ds = quad_dataset(2, 4, 1.0);
        let model = ModelSpec::quadratic_shared(vec![1.0, 1.0]);
        let theta = vec![0.3, -0.4];
        let out = local_update(&model, &ds, 0, &theta, 0.0, &[1, 2]).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn local_update_full_batch_matches_closed_form_gd() {
        let ds = quad_dataset(1, 6, 0.0);
        let model = ModelSpec::quadratic_shared(vec![1.0, 1.0]);
        // Full batch: one exact gradient-descent step with eta = 1/beta = 1
        // lands on the shard mean.
        let all: Vec<usize> = (0..6).collect();
        let theta = vec![2.0, -1.0];
        let out = local_update(&model, &ds, 0, &theta, 1.0, &all).unwrap();
        let mean0: f64 = ds.shard(0).iter().map(|s| s.features[0]).sum::<f64>() / 6.0;
        let mean1: f64 = ds.shard(0).iter().map(|s| s.features[1]).sum::<f64>() / 6.0;
        assert!((out[0] - mean0).abs() < 1e-12);
        assert!((out[1] - mean1).abs() < 1e-12);
    }

    #[test]
    fn round_indices_deterministic() {
        let a = round_indices(9, 3, 17, 8, 100);
        let b = round_indices(9, 3, 17, 8, 100);
        assert_eq!(a, b);
        let c = round_indices(9, 3, 18, 8, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn run_is_deterministic() {
        let ds = quad_dataset(4, 8, 1.0);
        let cfg = quad_config(7);
        let a = dsgd_mgs_run(&cfg, &ds).unwrap();
        let b = dsgd_mgs_run(&cfg, &ds).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.mean_trajectory, b.mean_trajectory);
    }

    #[test]
    fn single_agent_reduces_to_sgd() {
        let ds = quad_dataset(1, 8, 0.0);
        let mut cfg = quad_config(3);
        cfg.topology = TopologyKind::FullyConnected;
        let out = dsgd_mgs_run(&cfg, &ds).unwrap();

        // Manual single-node SGD with the same draws.
        let model = ModelSpec::quadratic_shared(vec![1.0, 1.0]);
        let mut theta = vec![0.0, 0.0];
        for t in 0..cfg.rounds {
            let eta = cfg.lr.eta(t);
            let idx = round_indices(cfg.seed, 0, t, 1, 8);
            theta = local_update(&model, &ds, 0, &theta, eta, &idx).unwrap();
        }
        assert_eq!(out.params[0], theta);
    }

    #[test]
    fn zero_gossip_keeps_agents_independent() {
        let ds = quad_dataset(2, 8, 4.0);
        let mut cfg = quad_config(5);
        cfg.gossip_steps = 0;
        let out = dsgd_mgs_run(&cfg, &ds).unwrap();
        assert_ne!(out.params[0], out.params[1]);

        // Each agent equals its own isolated SGD run.
        let model = &cfg.model;
        for k in 0..2 {
            let mut theta = vec![0.0, 0.0];
            for t in 0..cfg.rounds {
                let idx = round_indices(cfg.seed, k, t, 1, 8);
                theta = local_update(model, &ds, k, &theta, cfg.lr.eta(t), &idx).unwrap();
            }
            assert_eq!(out.params[k], theta);
        }
    }

    #[test]
    fn fully_connected_mean_matches_centralized_fed_same_draws() {
        let ds = quad_dataset(4, 10, 2.0);
        let mut cfg = quad_config(11);
        cfg.topology = TopologyKind::FullyConnected;
        cfg.rounds = 50;
        let out = dsgd_mgs_run(&cfg, &ds).unwrap();

        // Oracle: centralized updates fed the union of the per-agent draws.
        let model = &cfg.model;
        let mut theta = vec![0.0, 0.0];
        for t in 0..cfg.rounds {
            let eta = cfg.lr.eta(t);
            let mut grad = vec![0.0, 0.0];
            for k in 0..4 {
                let idx = round_indices(cfg.seed, k, t, 1, 10);
                let g = model
                    .batch_grad(&theta, idx.iter().map(|&i| ds.sample(k, i)))
                    .unwrap();
                linalg::axpy(&mut grad, 0.25, &g);
            }
            linalg::axpy(&mut theta, -eta, &grad);
            let bar = &out.mean_trajectory[t + 1];
            for j in 0..2 {
                assert!(
                    (bar[j] - theta[j]).abs() < 1e-10,
                    "round {t} coord {j}: {} vs {}",
                    bar[j],
                    theta[j]
                );
            }
        }
    }

    #[test]
    fn averaged_iterate_cases() {
        assert_eq!(averaged_iterate(&[vec![1.0], vec![0.0]]), vec![0.5]);
        let all = vec![vec![2.0, 3.0]; 4];
        assert_eq!(averaged_iterate(&all), vec![2.0, 3.0]);
    }

    #[test]
    fn identity_perturbation_gives_zero_weight_distance() {
        let pool: Vec<Sample<f64>> = synth_classification(21, 120, 2, 2, 2.0).unwrap();
        let ds = partition_dirichlet(&pool, 4, 25, 0.5, 2).unwrap();
        let pair = make_identity_perturbed(&ds, 3, 1).unwrap();
        let mut cfg = quad_config(13);
        cfg.model = ModelSpec::logistic(2);
        cfg.rounds = 20;
        let coupled = coupled_stability_run(&cfg, &ds, &pair).unwrap();
        for &(_, wd) in &coupled.weight_series {
            assert_eq!(wd, 0.0);
        }
        assert_eq!(coupled.primary.params, coupled.twin.params);
    }

    #[test]
    fn weight_distance_zero_until_swapped_sample_first_drawn() {
        let pool: Vec<Sample<f64>> = synth_classification(22, 120, 2, 2, 2.0).unwrap();
        let ds = partition_dirichlet(&pool, 4, 25, 0.5, 3).unwrap();
        let (pos, agent) = (7usize, 2usize);
        let pair = make_perturbed(&ds, pos, agent, 77).unwrap();
        // Force a real difference; dataset draws could coincide by chance.
        if pair.replacement == *ds.sample(agent, pos) {
            panic!("replacement degenerate for this seed; pick another");
        }
        let mut cfg = quad_config(29);
        cfg.model = ModelSpec::logistic(2);
        cfg.rounds = 40;
        let coupled = coupled_stability_run(&cfg, &ds, &pair).unwrap();

        let first_draw = (0..cfg.rounds).find(|&t| {
            round_indices(cfg.seed, agent, t, cfg.batch, 25).contains(&pos)
        });
        match first_draw {
            Some(td) => {
                for &(t, wd) in &coupled.weight_series {
                    if t <= td {
                        assert_eq!(wd, 0.0, "round {t} before first draw at {td}");
                    }
                }
                assert!(
                    coupled.weight_series[td + 1].1 > 0.0,
                    "distance should appear once the swapped sample is used"
                );
            }
            None => {
                for &(_, wd) in &coupled.weight_series {
                    assert_eq!(wd, 0.0);
                }
            }
        }
    }

    #[test]
    fn centralized_eta_zero_and_determinism() {
        let pool: Vec<Sample<f64>> = synth_classification(1, 60, 2, 2, 1.0).unwrap();
        let mut cfg = quad_config(17);
        cfg.model = ModelSpec::logistic(2);
        cfg.lr = LrSchedule::Constant { eta: 1e-12 };
        let out = centralized_minibatch_sgd(&cfg, &pool, 4, &[]).unwrap();
        // Near-zero step keeps theta near the origin.
        assert!(out.theta.iter().all(|v| v.abs() < 1e-9));

        cfg.lr = LrSchedule::Decaying { c: 0.2 };
        let a = centralized_minibatch_sgd(&cfg, &pool, 4, &[]).unwrap();
        let b = centralized_minibatch_sgd(&cfg, &pool, 4, &[]).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn centralized_full_batch_matches_closed_form_gd() {
        // Quadratic pool, batch covering the entire pool via agents * batch:
        // deterministic gradient descent toward the pool mean.
        let mk = |t: f64| Sample {
            features: vec![t],
            label: Label::Value(0.0),
        };
        let pool = vec![mk(1.0), mk(3.0)];
        let cfg = RunConfig {
            topology: TopologyKind::FullyConnected,
            model: ModelSpec::quadratic_shared(vec![1.0]),
            rounds: 1,
            gossip_steps: 1,
            lr: LrSchedule::Constant { eta: 1.0 },
            batch: 1,
            seed: 0,
            init: InitKind::Zeros,
            record_every: 1,
            record: RecordSet::none(),
        };
        // One eta = 1/beta step from 0 with the exact full-batch gradient
        // (theta - 2) lands exactly on the mean 2. Draws are random, so feed
        // the full pool through a manual step instead.
        let g = cfg.model.batch_grad(&[0.0], pool.iter()).unwrap();
        let theta = 0.0 - 1.0 * g[0];
        assert!((theta - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_configs() {
        let ds = quad_dataset(2, 4, 1.0);
        let mut cfg = quad_config(1);
        cfg.batch = 5;
        assert!(matches!(
            dsgd_mgs_run(&cfg, &ds),
            Err(OptError::InvalidConfig(_))
        ));
        let mut cfg = quad_config(1);
        cfg.rounds = 0;
        assert!(dsgd_mgs_run(&cfg, &ds).is_err());
    }
}
