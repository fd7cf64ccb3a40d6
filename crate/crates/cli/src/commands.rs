//! The five subcommands: run, stability, sweep, bounds, validate.
//!
//! Output files are CSVs with the resolved configuration embedded as a
//! leading `# key=value` comment block; re-running any artifact's block
//! reproduces it byte for byte. Files are written to a temp name and renamed
//! so a failed run leaves no partial CSV behind.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use gossiplab::bounds::{self, BoundInputs, BoundReport, BoundsError};
use gossiplab::data::{make_identity_perturbed, make_perturbed};
use gossiplab::metrics::{powerlaw_fit, RoundRecord, ROUND_CSV_HEADER};
use gossiplab::optimizer::{
    centralized_minibatch_sgd, coupled_stability_run, dsgd_mgs_run, CoupledOutcome,
};
use gossiplab::topology::{matrix_from_csv, validate_gossip_matrix};
use gossiplab::Real;

use crate::config::{parse_kv, ConfigError, ExperimentConfig, PointOverrides};

#[derive(Debug)]
pub enum CliError {
    /// Configuration / input-file problems (exit code 2).
    Config(ConfigError),
    /// Everything that fails after configuration resolved (exit code 1).
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Write through a temp file so failures never leave partial CSVs.
fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("cannot rename into {}: {e}", path.display())))?;
    Ok(())
}

fn comment_block(block: &str) -> String {
    let mut out = String::new();
    for line in block.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Map items to results on `jobs` worker threads, preserving input order.
fn parallel_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let items: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let n = items.len();
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let next = AtomicUsize::new(0);
    let items_cells: Vec<std::sync::Mutex<Option<T>>> =
        items.into_iter().map(std::sync::Mutex::new).collect();
    let result_cells: Vec<std::sync::Mutex<&mut Option<R>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = items_cells[i].lock().unwrap().take().unwrap();
                let r = f(item);
                **result_cells[i].lock().unwrap() = Some(r);
            });
        }
    });
    drop(result_cells);
    results.into_iter().map(|r| r.unwrap()).collect()
}

fn records_csv(block: &str, records: &[RoundRecord<Real>]) -> String {
    let mut out = comment_block(block);
    out.push_str(ROUND_CSV_HEADER);
    out.push('\n');
    for r in records {
        if r.t == 0 {
            continue; // the initial state is not a round
        }
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// `run`: one trajectory CSV per seed.
pub fn cmd_run(cfg: &ExperimentConfig, jobs: usize) -> Result<(), CliError> {
    let seeds = cfg.seeds()?;
    let out_dir = cfg.out_dir();
    let block = cfg.resolved_block();
    let m = cfg.agents()?;

    let results = parallel_map(seeds, jobs, |seed| -> Result<(), CliError> {
        let dataset = cfg.dataset(seed, m)?;
        let run_cfg = cfg.run_config(seed, &dataset, &PointOverrides::default())?;
        let outcome = dsgd_mgs_run(&run_cfg, &dataset).map_err(CliError::runtime)?;
        let csv = records_csv(&block, &outcome.records);
        write_atomic(&out_dir.join(format!("run_seed{seed}.csv")), &csv)
    });
    results.into_iter().collect()
}

struct StabilityRow {
    q: usize,
    seed: u64,
    agent_1based: usize,
    index_1based: usize,
    final_wd: Real,
    exponent: Option<Real>,
}

fn coupled_for_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    q: usize,
) -> Result<(CoupledOutcome<Real>, usize, usize), CliError> {
    let m = cfg.agents()?;
    let n = cfg.shard_len()?;
    let dataset = cfg.dataset(seed, m)?;
    let (agent, position) = cfg.perturb_site(seed, m, n)?;
    let overrides = PointOverrides {
        gossip_steps: Some(q),
        ..Default::default()
    };
    let run_cfg = cfg.run_config(seed, &dataset, &overrides)?;
    let outcome = if cfg.identity_perturbation() {
        let pair = make_identity_perturbed(&dataset, position, agent).map_err(CliError::runtime)?;
        coupled_stability_run(&run_cfg, &dataset, &pair).map_err(CliError::runtime)?
    } else {
        let pair = make_perturbed(&dataset, position, agent, seed).map_err(CliError::runtime)?;
        coupled_stability_run(&run_cfg, &dataset, &pair).map_err(CliError::runtime)?
    };
    Ok((outcome, agent, position))
}

/// `stability`: coupled-run CSV per (Q, seed) plus a summary with the
/// perturbation site and power-law exponent, aggregated per Q.
pub fn cmd_stability(cfg: &ExperimentConfig, jobs: usize) -> Result<(), CliError> {
    let seeds = cfg.seeds()?;
    let qs = cfg.sweep_qs()?;
    let out_dir = cfg.out_dir();
    let block = cfg.resolved_block();

    let grid: Vec<(usize, u64)> = qs
        .iter()
        .flat_map(|&q| seeds.iter().map(move |&s| (q, s)))
        .collect();

    let rows = parallel_map(grid, jobs, |(q, seed)| -> Result<StabilityRow, CliError> {
        let (outcome, agent, position) = coupled_for_seed(cfg, seed, q)?;
        let csv = records_csv(&block, &outcome.primary.records);
        write_atomic(&out_dir.join(format!("stability_q{q}_seed{seed}.csv")), &csv)?;

        let series: Vec<(Real, Real)> = outcome
            .weight_series
            .iter()
            .map(|&(t, wd)| (t as Real, wd))
            .collect();
        let exponent = powerlaw_fit(&series).ok();
        Ok(StabilityRow {
            q,
            seed,
            agent_1based: agent + 1,
            index_1based: position + 1,
            final_wd: outcome.weight_series.last().unwrap().1,
            exponent,
        })
    });
    let rows: Vec<StabilityRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let mut summary = comment_block(&block);
    summary.push_str("q,seed,perturb_agent,perturb_index,final_weight_distance,powerlaw_exponent\n");
    for r in &rows {
        let _ = write!(
            summary,
            "{},{},{},{},{}",
            r.q, r.seed, r.agent_1based, r.index_1based, r.final_wd
        );
        match r.exponent {
            Some(e) => {
                let _ = writeln!(summary, ",{e}");
            }
            None => summary.push_str(",\n"),
        }
    }

    // Aggregate per Q; flag if the mean final distance fails to be
    // nonincreasing in Q.
    let mut aggregate = comment_block(&block);
    aggregate.push_str("q,seeds,mean_final_weight_distance,sd_final_weight_distance,mean_exponent\n");
    let mut means = Vec::new();
    for &q in &qs {
        let finals: Vec<Real> = rows.iter().filter(|r| r.q == q).map(|r| r.final_wd).collect();
        let exps: Vec<Real> = rows
            .iter()
            .filter(|r| r.q == q)
            .filter_map(|r| r.exponent)
            .collect();
        let (mean, sd) = mean_sd(&finals);
        means.push(mean);
        let mean_exp = if exps.is_empty() {
            String::new()
        } else {
            format!("{}", exps.iter().sum::<Real>() / exps.len() as Real)
        };
        let _ = writeln!(aggregate, "{q},{},{mean},{sd},{mean_exp}", finals.len());
    }
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let _ = writeln!(
        aggregate,
        "# q_monotonicity={}",
        if monotone { "ok" } else { "violated" }
    );

    write_atomic(&out_dir.join("stability_summary.csv"), &summary)?;
    write_atomic(&out_dir.join("stability_aggregate.csv"), &aggregate)
}

fn mean_sd(values: &[Real]) -> (Real, Real) {
    let n = values.len() as Real;
    if values.is_empty() {
        return (Real::NAN, Real::NAN);
    }
    let mean = values.iter().sum::<Real>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / (n - 1.0);
    (mean, var.sqrt())
}

struct PointResult {
    label: PointLabel,
    finals: Vec<(u64, Real, Real)>, // (seed, final train, final test)
}

#[derive(Clone)]
enum PointLabel {
    Decentralized {
        topology: String,
        q: usize,
        c: String,
        m: usize,
        b: usize,
    },
    Centralized {
        c: String,
        m: usize,
        b: usize,
    },
}

impl PointLabel {
    fn file_name(&self) -> String {
        match self {
            PointLabel::Decentralized { topology, q, c, m, b } => {
                format!("sweep_{topology}_q{q}_c{c}_m{m}_b{b}.csv")
            }
            PointLabel::Centralized { c, m, b } => format!("sweep_centralized_c{c}_m{m}_b{b}.csv"),
        }
    }

    fn row_prefix(&self) -> String {
        match self {
            PointLabel::Decentralized { topology, q, c, m, b } => {
                format!("dsgd_mgs,{topology},{q},{c},{m},{b}")
            }
            PointLabel::Centralized { c, m, b } => format!("centralized,,,{c},{m},{b}"),
        }
    }
}

fn final_losses(records: &[RoundRecord<Real>]) -> Result<(Real, Real), CliError> {
    let last = records
        .last()
        .ok_or_else(|| CliError::Runtime("run produced no records".into()))?;
    let train = last
        .train_loss
        .ok_or_else(|| CliError::Runtime("final record lacks train_loss".into()))?;
    let test = last
        .test_loss
        .ok_or_else(|| CliError::Runtime("final record lacks test_loss".into()))?;
    Ok((train, test))
}

/// `sweep`: grid over (topology, Q, c, m, b) x seeds with per-point files
/// and one aggregated comparison CSV, including the centralized baseline.
pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<(), CliError> {
    let seeds = cfg.seeds()?;
    let axes = cfg.sweep_axes()?;
    let out_dir = cfg.out_dir();
    let block = cfg.resolved_block();

    // Deterministic grid order.
    let mut points: Vec<PointLabel> = Vec::new();
    for topology in &axes.topologies {
        for &q in &axes.qs {
            for c in &axes.cs {
                for &m in &axes.ms {
                    for &b in &axes.bs {
                        points.push(PointLabel::Decentralized {
                            topology: topology.clone(),
                            q,
                            c: c.clone(),
                            m,
                            b,
                        });
                    }
                }
            }
        }
    }
    if axes.include_centralized {
        for c in &axes.cs {
            for &m in &axes.ms {
                for &b in &axes.bs {
                    points.push(PointLabel::Centralized {
                        c: c.clone(),
                        m,
                        b,
                    });
                }
            }
        }
    }

    let results = parallel_map(points, jobs, |label| -> Result<PointResult, CliError> {
        let mut finals = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let (train, test) = match &label {
                PointLabel::Decentralized { topology, q, c, m, b } => {
                    let dataset = cfg.dataset(seed, *m)?;
                    let c_val: Real = c.parse().map_err(|_| {
                        CliError::Config(ConfigError::BadValue {
                            key: "sweep_c".into(),
                            msg: format!("cannot parse {c:?}"),
                        })
                    })?;
                    let overrides = PointOverrides {
                        topology: Some(topology.clone()),
                        gossip_steps: Some(*q),
                        lr_c: Some(c_val),
                        batch: Some(*b),
                    };
                    let mut run_cfg = cfg.run_config(seed, &dataset, &overrides)?;
                    run_cfg.record.train_loss = true;
                    run_cfg.record.test_loss = true;
                    let outcome = dsgd_mgs_run(&run_cfg, &dataset).map_err(CliError::runtime)?;
                    final_losses(&outcome.records)?
                }
                PointLabel::Centralized { c, m, b } => {
                    let dataset = cfg.dataset(seed, *m)?;
                    let c_val: Real = c.parse().map_err(|_| {
                        CliError::Config(ConfigError::BadValue {
                            key: "sweep_c".into(),
                            msg: format!("cannot parse {c:?}"),
                        })
                    })?;
                    let overrides = PointOverrides {
                        lr_c: Some(c_val),
                        batch: Some(*b),
                        ..Default::default()
                    };
                    let mut run_cfg = cfg.run_config(seed, &dataset, &overrides)?;
                    run_cfg.record.train_loss = true;
                    run_cfg.record.test_loss = true;
                    let pool: Vec<_> = dataset.iter_all().cloned().collect();
                    let outcome =
                        centralized_minibatch_sgd(&run_cfg, &pool, *m, dataset.held_out())
                            .map_err(CliError::runtime)?;
                    final_losses(&outcome.records)?
                }
            };
            finals.push((seed, train, test));
        }
        Ok(PointResult { label, finals })
    });
    let results: Vec<PointResult> = results.into_iter().collect::<Result<_, _>>()?;

    // Per-point files.
    for p in &results {
        let mut text = comment_block(&block);
        text.push_str("seed,final_train_loss,final_test_loss\n");
        for &(seed, train, test) in &p.finals {
            let _ = writeln!(text, "{seed},{train},{test}");
        }
        write_atomic(&out_dir.join(p.label.file_name()), &text)?;
    }

    // Aggregated comparison.
    let mut agg = comment_block(&block);
    agg.push_str(
        "kind,topology,q,c,m,b,seeds,mean_final_train,sd_final_train,mean_final_test,sd_final_test\n",
    );
    for p in &results {
        let trains: Vec<Real> = p.finals.iter().map(|r| r.1).collect();
        let tests: Vec<Real> = p.finals.iter().map(|r| r.2).collect();
        let (mt, st) = mean_sd(&trains);
        let (me, se) = mean_sd(&tests);
        let _ = writeln!(
            agg,
            "{},{},{mt},{st},{me},{se}",
            p.label.row_prefix(),
            trains.len()
        );
    }
    write_atomic(&out_dir.join("sweep.csv"), &agg)
}

const BOUNDS_KEYS: &[&str] = &[
    "c",
    "beta",
    "n",
    "m",
    "T",
    "Q",
    "rho",
    "delta",
    "lambda_max_i_minus_w",
    "sigma2",
    "xi2",
    "mu",
    "delta2",
    "r0",
    "rs_star",
    "b",
    "gamma",
    "t0",
    "debug_lemma1",
];

fn parse_bound_inputs(text: &str) -> Result<(BoundInputs<Real>, bool), CliError> {
    let map = parse_kv(text, BOUNDS_KEYS).map_err(CliError::Config)?;
    let need = |key: &str| -> Result<&str, CliError> {
        map.get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Config(ConfigError::MissingKey(key.into())))
    };
    let num = |key: &str| -> Result<Real, CliError> {
        need(key)?.parse().map_err(|_| {
            CliError::Config(ConfigError::BadValue {
                key: key.into(),
                msg: format!("cannot parse {:?}", map[key]),
            })
        })
    };
    let int = |key: &str| -> Result<usize, CliError> {
        need(key)?.parse().map_err(|_| {
            CliError::Config(ConfigError::BadValue {
                key: key.into(),
                msg: format!("cannot parse {:?}", map[key]),
            })
        })
    };
    let inputs = BoundInputs {
        c: num("c")?,
        beta: num("beta")?,
        n: int("n")?,
        m: int("m")?,
        rounds: int("T")?,
        gossip_steps: int("Q")?,
        rho: num("rho")?,
        delta: num("delta")?,
        lambda_max_i_minus_w: num("lambda_max_i_minus_w")?,
        sigma2: num("sigma2")?,
        xi2: num("xi2")?,
        mu: num("mu")?,
        delta2: num("delta2")?,
        r0: num("r0")?,
        rs_star: num("rs_star")?,
        batch: int("b")?,
        gamma: num("gamma")?,
        t0: num("t0")?,
    };
    inputs.validate().map_err(|e| {
        CliError::Config(ConfigError::BadValue {
            key: "bound inputs".into(),
            msg: e.to_string(),
        })
    })?;
    let debug = map.get("debug_lemma1").map(String::as_str) == Some("true");
    Ok((inputs, debug))
}

fn sanitize(notes: &str) -> String {
    notes.replace(',', ";")
}

fn bound_row(name: &str, report: Result<BoundReport<Real>, BoundsError>) -> String {
    match report {
        Ok(r) => format!(
            "{name},{},{},{}\n",
            r.value,
            r.summary().label(),
            sanitize(&r.notes)
        ),
        Err(BoundsError::PlViolation) => format!("{name},,PL fails,requires mu > 0\n"),
        Err(e) => format!("{name},,error,{}\n", sanitize(&e.to_string())),
    }
}

/// `bounds`: evaluate every closed-form bound from a key=value input file
/// and emit one row per evaluator with value and provenance.
pub fn cmd_bounds(input_path: &Path, out_dir: Option<&Path>) -> Result<String, CliError> {
    let text = std::fs::read_to_string(input_path)
        .map_err(|e| CliError::Config(ConfigError::Io(input_path.display().to_string(), e)))?;
    let (inputs, debug_lemma1) = parse_bound_inputs(&text)?;

    let gbar = bounds::gbar_chain(&inputs)
        .map_err(CliError::runtime)?
        .value;
    let mut table = String::from("evaluator,value,provenance,notes\n");
    table.push_str(&bound_row("stability", bounds::stability_bound(&inputs)));
    table.push_str(&bound_row("gbar", bounds::gbar_chain(&inputs)));
    table.push_str(&bound_row(
        "optimization",
        bounds::optimization_bound_proxy(&inputs).map(|mut r| {
            if let Ok((q0, gt)) = bounds::q0_threshold(&inputs) {
                r.notes = format!("Q0={q0}; gamma_tilde={gt}");
            }
            r
        }),
    ));
    table.push_str(&bound_row(
        "generalization",
        bounds::generalization_bound(&inputs, gbar),
    ));
    table.push_str(&bound_row(
        "minibatch_generalization",
        bounds::minibatch_generalization_bound(&inputs, gbar),
    ));
    table.push_str(&bound_row("excess", bounds::excess_bound(&inputs, gbar)));
    let consensus = bounds::consensus_recursion_bound(0.0, inputs.c, &inputs);
    table.push_str(&format!(
        "consensus_recursion,{consensus},exact,one round from consensus at eta=c; x_t=0\n"
    ));
    table.push_str(&bound_row(
        "centralized_reference",
        Ok(bounds::centralized_reference_bound(
            inputs.c,
            inputs.beta,
            inputs.n,
            inputs.m,
            inputs.rounds,
        )),
    ));
    if debug_lemma1 {
        table.push_str(&bound_row(
            "lemma1_pre_optimization",
            bounds::lemma1_bound(&inputs, gbar, inputs.t0, inputs.gamma),
        ));
    }

    if let Some(dir) = out_dir {
        write_atomic(&dir.join("bounds.csv"), &table)?;
    }
    Ok(table)
}

/// `validate`: diagnostics report for a matrix CSV. Returns the report text
/// and whether every invariant passed.
pub fn cmd_validate(matrix_path: &Path) -> Result<(String, bool), CliError> {
    let text = std::fs::read_to_string(matrix_path)
        .map_err(|e| CliError::Config(ConfigError::Io(matrix_path.display().to_string(), e)))?;
    let rows = matrix_from_csv::<Real>(&text).map_err(|e| {
        CliError::Config(ConfigError::BadValue {
            key: "matrix".into(),
            msg: e.to_string(),
        })
    })?;
    let report = validate_gossip_matrix(&rows);
    let mut out = format!("matrix: {} x {}\n", report.m, report.m);
    for check in &report.checks {
        let _ = writeln!(
            out,
            "{}: {} (violation {:e})",
            check.name,
            if check.pass { "pass" } else { "FAIL" },
            check.violation
        );
    }
    let all = report.all_pass();
    let _ = writeln!(out, "result: {}", if all { "valid" } else { "invalid" });
    Ok((out, all))
}
