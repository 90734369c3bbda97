//! Federated averaging with full-batch local gradient steps.
//!
//! Each round broadcasts `u(t)`, every client runs `K` gradient steps on its
//! own loss from `w_{0,c} = u(t)`, the server averages the deltas
//! `Δu_c = w_{K,c} − u(t)` in client order and sets
//! `u(t+1) = u(t) + η_global Δu`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::model::{self, loss_from_predictions, preactivations, ModelParams};
use crate::numerics::{streams, CompensatedSum, DenseMatrix, RngStream};

/// Training stops with [`Error::Diverged`] once the residual exceeds this
/// multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordLevel {
    /// Per-round scalars only.
    LossOnly,
    /// Adds one record per (round, client, local step).
    Bounds,
    /// Adds every global and local weight matrix.
    FullStates,
}

impl RecordLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordLevel::LossOnly => "loss-only",
            RecordLevel::Bounds => "bounds",
            RecordLevel::FullStates => "full-states",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loss-only" => Some(RecordLevel::LossOnly),
            "bounds" => Some(RecordLevel::Bounds),
            "full-states" => Some(RecordLevel::FullStates),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub eta_local: f64,
    pub eta_global: f64,
    pub width: usize,
    pub sigma: f64,
    pub seed: u64,
    pub record_level: RecordLevel,
    /// Stop after the first round with `‖y − y(t)‖² ≤ eps · ‖y − y(0)‖²`.
    pub target_eps: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.local_steps == 0 || self.width == 0 {
            return Err(Error::Parameter("clients, local steps and width must all be at least 1".into()));
        }
        for (name, v) in [("eta_local", self.eta_local), ("eta_global", self.eta_global), ("sigma", self.sigma)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(eps) = self.target_eps {
            if !(eps > 0.0) {
                return Err(Error::Parameter(format!("target eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    pub fn init_stream(&self) -> RngStream {
        RngStream::new(self.seed, streams::INIT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// `‖y − y(t)‖₂²`, measured before the round's update.
    pub residual_sq: f64,
    pub loss: f64,
    /// `max_r ‖u_r(t) − u_r(0)‖₂`.
    pub max_global_move: f64,
    /// `‖U(t) − U(0)‖_F`.
    pub total_move_fro: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRecord {
    pub round: usize,
    pub client: usize,
    /// `k` in `0..=K`; step 0 is the broadcast model.
    pub local_step: usize,
    /// `‖y_c − y_c^{(k)}(t)‖₂`.
    pub local_residual: f64,
    /// `‖y_c(t) − y_c^{(k)}(t)‖₂`.
    pub local_deviation: f64,
    /// `max_r ‖w_{k,c,r}(t) − u_r(0)‖₂`.
    pub max_local_move: f64,
    /// `max_r ‖w_{k,c,r}(t) − u_r(t)‖₂`, movement since the broadcast.
    pub max_round_move: f64,
}

/// Weight matrices kept at [`RecordLevel::FullStates`].
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshots {
    /// `u(t)` for every recorded round.
    pub global: Vec<DenseMatrix>,
    /// `local[t][c][k - 1] = w_{k,c}(t)` for `k` in `1..=K`.
    pub local: Vec<Vec<Vec<DenseMatrix>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub config: TrainConfig,
    pub initial: ModelParams,
    pub final_weights: DenseMatrix,
    /// Rounds `0..=T'` where `T' ≤ T` is the last round reached.
    pub rounds: Vec<RoundRecord>,
    pub local: Vec<LocalRecord>,
    pub snapshots: Option<Snapshots>,
}

impl TrainTrace {
    pub fn initial_residual_sq(&self) -> f64 {
        self.rounds[0].residual_sq
    }

    pub fn final_residual_sq(&self) -> f64 {
        self.rounds[self.rounds.len() - 1].residual_sq
    }

    /// Number of completed global updates.
    pub fn completed_rounds(&self) -> usize {
        self.rounds.len() - 1
    }

    /// First round whose residual is at most `eps` times the initial one.
    pub fn rounds_to_reach(&self, eps: f64) -> Option<usize> {
        let target = eps * self.initial_residual_sq();
        self.rounds.iter().find(|r| r.residual_sq <= target).map(|r| r.round)
    }

    /// `w_{k,c}(t)`; `k = 0` is the broadcast `u(t)`.
    pub fn local_weights(&self, t: usize, c: usize, k: usize) -> Result<&DenseMatrix> {
        let snaps = self.require_snapshots()?;
        if k == 0 {
            return snaps.global.get(t).ok_or_else(|| missing(t));
        }
        snaps
            .local
            .get(t)
            .and_then(|clients| clients.get(c))
            .and_then(|steps| steps.get(k - 1))
            .ok_or_else(|| missing(t))
    }

    pub fn global_weights(&self, t: usize) -> Result<&DenseMatrix> {
        self.require_snapshots()?.global.get(t).ok_or_else(|| missing(t))
    }

    pub fn require_snapshots(&self) -> Result<&Snapshots> {
        self.snapshots.as_ref().ok_or_else(|| {
            Error::Contract(format!(
                "weight snapshots need record level full-states, trace was recorded at {}",
                self.config.record_level.as_str()
            ))
        })
    }

    pub fn require_local(&self) -> Result<&[LocalRecord]> {
        if self.config.record_level < RecordLevel::Bounds {
            return Err(Error::Contract(format!(
                "local records need record level bounds or higher, trace was recorded at {}",
                self.config.record_level.as_str()
            )));
        }
        Ok(&self.local)
    }
}

fn missing(t: usize) -> Error {
    Error::Contract(format!("no snapshot for round {t}"))
}

/// `max_r ‖a_r − b_r‖₂` over matching columns.
pub fn max_column_distance(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let mut sq = vec![0.0; a.cols()];
    for k in 0..a.rows() {
        for ((s, x), y) in sq.iter_mut().zip(a.row(k)).zip(b.row(k)) {
            *s += (x - y) * (x - y);
        }
    }
    libm::sqrt(sq.into_iter().fold(0.0, f64::max))
}

pub fn frobenius_distance(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let sum: CompensatedSum = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).collect();
    libm::sqrt(sum.total())
}

/// Summary of one local step as seen by [`local_run`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalStep {
    pub step: usize,
    pub local_residual: f64,
    pub local_deviation: f64,
    pub max_round_move: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalRun {
    pub final_weights: DenseMatrix,
    pub delta: DenseMatrix,
    /// Steps `0..=K`.
    pub steps: Vec<LocalStep>,
}

/// Predictions on `client` and the client gradient from one pass.
fn predict_and_gradient(params: &ModelParams, dataset: &Dataset, client: &[usize]) -> (Vec<f64>, DenseMatrix) {
    let (d, m) = (params.dim(), params.width());
    let scale = 1.0 / libm::sqrt(m as f64);
    let mut grad = DenseMatrix::zeros(d, m);
    let mut preds = Vec::with_capacity(client.len());
    for &i in client {
        let x = dataset.input(i);
        let z = preactivations(params.weights(), x);
        let out: CompensatedSum =
            z.iter().zip(params.signs()).map(|(&zr, &a)| if zr > 0.0 { a * zr } else { 0.0 }).collect();
        let f = out.total() * scale;
        preds.push(f);
        let residual = f - dataset.labels()[i];
        for (k, &xk) in x.iter().enumerate() {
            let coeff = residual * xk;
            for (g, &zr) in grad.row_mut(k).iter_mut().zip(&z) {
                if zr >= 0.0 {
                    *g += coeff;
                }
            }
        }
    }
    for k in 0..d {
        for (g, &a) in grad.row_mut(k).iter_mut().zip(params.signs()) {
            *g *= a * scale;
        }
    }
    (preds, grad)
}

/// Runs `K` local steps; `observe(k, w_k, y_c^{(k)})` sees every iterate
/// `k = 0..=K` with its predictions on the client's points.
fn local_steps_with<F>(
    start: &ModelParams,
    dataset: &Dataset,
    client: &[usize],
    client_id: usize,
    local_steps: usize,
    eta_local: f64,
    mut observe: Option<F>,
) -> Result<DenseMatrix>
where
    F: FnMut(usize, &DenseMatrix, &[f64]),
{
    let mut current = start.clone();
    for k in 0..local_steps {
        let (preds, grad) = predict_and_gradient(&current, dataset, client);
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::LocalDivergence { client: client_id, step: k });
        }
        if let Some(f) = observe.as_mut() {
            f(k, current.weights(), &preds);
        }
        let next = current.weights().add_scaled(-eta_local, &grad)?;
        if !next.all_finite() {
            return Err(Error::LocalDivergence { client: client_id, step: k + 1 });
        }
        current = current.with_weights(next)?;
    }
    if let Some(f) = observe.as_mut() {
        let preds = model::forward_all(&current, dataset, Some(client))?.values;
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::LocalDivergence { client: client_id, step: local_steps });
        }
        f(local_steps, current.weights(), &preds);
    }
    Ok(current.weights().clone())
}

fn check_client(dataset: &Dataset, client: &[usize]) -> Result<()> {
    if client.is_empty() {
        return Err(Error::Parameter("client index set is empty".into()));
    }
    if let Some(&i) = client.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Parameter(format!("index {i} out of range")));
    }
    Ok(())
}

/// `K` full-batch gradient steps on one client's loss starting from `start`.
pub fn local_run(
    start: &ModelParams,
    dataset: &Dataset,
    client: &[usize],
    local_steps: usize,
    eta_local: f64,
) -> Result<LocalRun> {
    if local_steps == 0 {
        return Err(Error::Parameter("need at least one local step".into()));
    }
    check_client(dataset, client)?;
    let labels: Vec<f64> = client.iter().map(|&i| dataset.labels()[i]).collect();
    let mut steps = Vec::with_capacity(local_steps + 1);
    let mut broadcast_preds: Vec<f64> = Vec::new();
    let final_weights = local_steps_with(
        start,
        dataset,
        client,
        0,
        local_steps,
        eta_local,
        Some(|k: usize, w: &DenseMatrix, preds: &[f64]| {
            if k == 0 {
                broadcast_preds = preds.to_vec();
            }
            steps.push(LocalStep {
                step: k,
                local_residual: distance(&labels, preds),
                local_deviation: distance(&broadcast_preds, preds),
                max_round_move: max_column_distance(w, start.weights()),
            });
        }),
    )?;
    let delta = final_weights.sub(start.weights())?;
    Ok(LocalRun { final_weights, delta, steps })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Entrywise mean of the client deltas, summed in client order.
pub fn aggregate(deltas: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = deltas.first().ok_or_else(|| Error::Parameter("need at least one client delta".into()))?;
    let mut sum = first.clone();
    for d in &deltas[1..] {
        sum.check_same_shape(d)?;
        for (s, v) in sum.as_mut_slice().iter_mut().zip(d.as_slice()) {
            *s += v;
        }
    }
    let count = deltas.len() as f64;
    sum.as_mut_slice().iter_mut().for_each(|s| *s /= count);
    Ok(sum)
}

/// `u(t+1) = u(t) + η_global Δu`.
pub fn global_step(weights: &DenseMatrix, delta: &DenseMatrix, eta_global: f64) -> Result<DenseMatrix> {
    weights.add_scaled(eta_global, delta)
}

/// Step sizes `η_local = c · λ / (κ K n²)` and `η_global = 1`.
pub fn prescribed_rates(lambda: f64, kappa: f64, n: usize, local_steps: usize, safety_c: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!("condition number must be >= 1, got {kappa}")));
    }
    if !(safety_c > 0.0 && safety_c <= 1.0) {
        return Err(Error::Parameter(format!("safety scale must lie in (0, 1], got {safety_c}")));
    }
    if n == 0 || local_steps == 0 {
        return Err(Error::Parameter("n and K must be positive".into()));
    }
    let n = n as f64;
    Ok((safety_c * lambda / (kappa * local_steps as f64 * n * n), 1.0))
}

/// Runs federated training from a fresh initialization drawn from the
/// config's seed.
pub fn train(config: &TrainConfig, dataset: &Dataset, partition: &ClientPartition) -> Result<TrainTrace> {
    let initial = model::init(config.width, dataset.dim(), config.sigma, &config.init_stream())?;
    train_from(config, dataset, partition, initial)
}

/// Runs federated training from the given initial parameters.
pub fn train_from(
    config: &TrainConfig,
    dataset: &Dataset,
    partition: &ClientPartition,
    initial: ModelParams,
) -> Result<TrainTrace> {
    config.validate()?;
    if partition.num_points() != dataset.len() {
        return Err(Error::Dimension(format!(
            "partition covers {} points, dataset has {}",
            partition.num_points(),
            dataset.len()
        )));
    }
    if partition.num_clients() != config.clients {
        return Err(Error::Parameter(format!(
            "partition has {} clients, config expects {}",
            partition.num_clients(),
            config.clients
        )));
    }
    if initial.dim() != dataset.dim() || initial.width() != config.width {
        return Err(Error::Shape("initial parameters do not match dataset and width".into()));
    }

    let level = config.record_level;
    let labels = dataset.labels();
    let u0 = initial.weights().clone();
    let mut trace = TrainTrace {
        config: config.clone(),
        initial: initial.clone(),
        final_weights: u0.clone(),
        rounds: Vec::with_capacity(config.rounds + 1),
        local: Vec::new(),
        snapshots: (level == RecordLevel::FullStates).then(|| Snapshots { global: Vec::new(), local: Vec::new() }),
    };
    let mut current = initial;

    for t in 0..=config.rounds {
        let preds = model::forward_all(&current, dataset, None)?.values;
        let report = loss_from_predictions(&preds, labels, partition);
        let record = RoundRecord {
            round: t,
            residual_sq: report.residual_sq,
            loss: report.total,
            max_global_move: max_column_distance(current.weights(), &u0),
            total_move_fro: frobenius_distance(current.weights(), &u0),
        };
        trace.rounds.push(record);
        if let Some(s) = trace.snapshots.as_mut() {
            s.global.push(current.weights().clone());
        }
        let initial_sq = trace.rounds[0].residual_sq;
        if !record.residual_sq.is_finite() || record.residual_sq > DIVERGENCE_FACTOR * initial_sq.max(f64::MIN_POSITIVE)
        {
            trace.final_weights = current.weights().clone();
            return Err(Error::Diverged {
                round: t,
                residual_sq: record.residual_sq,
                local: None,
                trace: alloc::boxed::Box::new(trace),
            });
        }
        if t == config.rounds || config.target_eps.is_some_and(|eps| record.residual_sq <= eps * initial_sq) {
            break;
        }

        let mut deltas = Vec::with_capacity(config.clients);
        let mut round_locals = Vec::new();
        for (c, client) in partition.clients().iter().enumerate() {
            let result = if level == RecordLevel::LossOnly {
                local_steps_with::<fn(usize, &DenseMatrix, &[f64])>(
                    &current,
                    dataset,
                    client,
                    c,
                    config.local_steps,
                    config.eta_local,
                    None,
                )
            } else {
                let client_labels: Vec<f64> = client.iter().map(|&i| labels[i]).collect();
                let mut broadcast_preds: Vec<f64> = Vec::new();
                let mut steps: Vec<DenseMatrix> = Vec::new();
                let u_t = current.weights();
                let local = &mut trace.local;
                let keep = level == RecordLevel::FullStates;
                let w = local_steps_with(
                    &current,
                    dataset,
                    client,
                    c,
                    config.local_steps,
                    config.eta_local,
                    Some(|k: usize, w: &DenseMatrix, p: &[f64]| {
                        if k == 0 {
                            broadcast_preds = p.to_vec();
                        } else if keep {
                            steps.push(w.clone());
                        }
                        local.push(LocalRecord {
                            round: t,
                            client: c,
                            local_step: k,
                            local_residual: distance(&client_labels, p),
                            local_deviation: distance(&broadcast_preds, p),
                            max_local_move: max_column_distance(w, &u0),
                            max_round_move: max_column_distance(w, u_t),
                        });
                    }),
                );
                if keep {
                    round_locals.push(steps);
                }
                w
            };
            let final_w = match result {
                Ok(w) => w,
                Err(Error::LocalDivergence { client, step }) => {
                    trace.final_weights = current.weights().clone();
                    return Err(Error::Diverged {
                        round: t,
                        residual_sq: record.residual_sq,
                        local: Some((client, step)),
                        trace: alloc::boxed::Box::new(trace),
                    });
                }
                Err(e) => return Err(e),
            };
            deltas.push(final_w.sub(current.weights())?);
        }
        if let Some(s) = trace.snapshots.as_mut() {
            s.local.push(round_locals);
        }
        let delta = aggregate(&deltas)?;
        current = current.with_weights(global_step(current.weights(), &delta, config.eta_global)?)?;
    }
    trace.final_weights = current.weights().clone();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, partition_iid, DistributionSpec};
    use crate::model::{client_gradient, init};

    fn setup(n: usize, d: usize, m: usize) -> (Dataset, ModelParams) {
        let ds = generate(&DistributionSpec::uniform_sphere(), n, d, &RngStream::new(1, streams::DATA)).unwrap();
        let p = init(m, d, 1.0, &RngStream::new(1, streams::INIT)).unwrap();
        (ds, p)
    }

    fn config(clients: usize, local_steps: usize, rounds: usize, eta_local: f64) -> TrainConfig {
        TrainConfig {
            clients,
            local_steps,
            rounds,
            eta_local,
            eta_global: 1.0,
            width: 256,
            sigma: 1.0,
            seed: 3,
            record_level: RecordLevel::Bounds,
            target_eps: None,
        }
    }

    #[test]
    fn one_local_step_is_one_gradient_step() {
        let (ds, p) = setup(6, 3, 64);
        let client = [0, 2, 4];
        let run = local_run(&p, &ds, &client, 1, 0.1).unwrap();
        let grad = client_gradient(&p, &ds, &client).unwrap();
        let expected = p.weights().add_scaled(-0.1, &grad).unwrap();
        assert_eq!(run.final_weights, expected);
        assert_eq!(run.steps.len(), 2);
        assert_eq!(run.steps[0].local_deviation, 0.0);
        let diff = run.delta.add_scaled(0.1, &grad).unwrap();
        assert!(diff.max_abs() < 1e-15);
    }

    #[test]
    fn fitted_client_does_not_move() {
        let (ds0, p) = setup(4, 3, 64);
        let fitted = model::forward_all(&p, &ds0, None).unwrap().values;
        if fitted.iter().any(|v| v.abs() > 1.0) {
            return;
        }
        let ds = Dataset::new(ds0.inputs().clone(), fitted).unwrap();
        let run = local_run(&p, &ds, &[0, 1, 2, 3], 3, 0.5).unwrap();
        assert!(run.delta.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_examples() {
        let a = DenseMatrix::from_rows(&[&[1.0, -2.0], &[0.5, 4.0]]).unwrap();
        assert_eq!(aggregate(core::slice::from_ref(&a)).unwrap(), a);
        let neg = a.scaled(-1.0);
        assert_eq!(aggregate(&[a.clone(), neg]).unwrap(), DenseMatrix::zeros(2, 2));
        let d = DenseMatrix::from_rows(&[&[0.1, 0.3], &[0.7, 1.1]]).unwrap();
        let mean = aggregate(&[d.clone(), d.clone(), d.clone()]).unwrap();
        assert!(mean.sub(&d).unwrap().max_abs() <= 1e-15);
        assert!(aggregate(&[]).is_err());
        assert!(matches!(aggregate(&[a, DenseMatrix::zeros(1, 2)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn global_step_examples() {
        let u = DenseMatrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[&[0.25, -0.5]]).unwrap();
        assert_eq!(global_step(&u, &DenseMatrix::zeros(1, 2), 0.7).unwrap(), u);
        assert_eq!(global_step(&u, &g, 2.0).unwrap(), DenseMatrix::from_rows(&[&[1.5, 1.0]]).unwrap());
    }

    #[test]
    fn prescribed_rates_examples() {
        let (eta, eta_g) = prescribed_rates(0.5, 2.0, 10, 5, 1.0).unwrap();
        assert!((eta - 5e-4).abs() < 1e-18);
        assert_eq!(eta_g, 1.0);
        let (half, _) = prescribed_rates(0.5, 2.0, 10, 5, 0.5).unwrap();
        assert_eq!(half, eta / 2.0);
        assert!(matches!(prescribed_rates(0.5, 2.0, 10, 5, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(prescribed_rates(0.0, 2.0, 10, 5, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(prescribed_rates(0.5, 0.5, 10, 5, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_rounds_records_only_the_start() {
        let (ds, _) = setup(8, 3, 16);
        let part = partition_iid(8, 2, &RngStream::new(0, streams::PARTITION)).unwrap();
        let trace = train(&config(2, 2, 0, 0.1), &ds, &part).unwrap();
        assert_eq!(trace.rounds.len(), 1);
        assert_eq!(trace.rounds[0].max_global_move, 0.0);
        assert!(trace.local.is_empty());
    }

    #[test]
    fn records_have_expected_shape() {
        let (ds, _) = setup(8, 3, 16);
        let part = partition_iid(8, 2, &RngStream::new(0, streams::PARTITION)).unwrap();
        let mut cfg = config(2, 3, 4, 0.1);
        cfg.record_level = RecordLevel::FullStates;
        let trace = train(&cfg, &ds, &part).unwrap();
        assert_eq!(trace.rounds.len(), 5);
        assert_eq!(trace.local.len(), 4 * 2 * 4);
        let snaps = trace.snapshots.as_ref().unwrap();
        assert_eq!(snaps.global.len(), 5);
        assert_eq!(snaps.local[0][1].len(), 3);
        assert_eq!(trace.global_weights(4).unwrap(), &trace.final_weights);
        assert_eq!(trace.local_weights(2, 1, 0).unwrap(), trace.global_weights(2).unwrap());
    }

    #[test]
    fn loss_only_hides_local_records() {
        let (ds, _) = setup(8, 3, 16);
        let part = partition_iid(8, 2, &RngStream::new(0, streams::PARTITION)).unwrap();
        let mut cfg = config(2, 2, 3, 0.1);
        cfg.record_level = RecordLevel::LossOnly;
        let trace = train(&cfg, &ds, &part).unwrap();
        assert!(matches!(trace.require_local(), Err(Error::Contract(_))));
        assert!(matches!(trace.require_snapshots(), Err(Error::Contract(_))));
        // Same trajectory as a recording run.
        cfg.record_level = RecordLevel::Bounds;
        let recorded = train(&cfg, &ds, &part).unwrap();
        assert_eq!(trace.rounds, recorded.rounds);
    }

    #[test]
    fn huge_step_diverges_with_partial_trace() {
        let (ds, _) = setup(8, 3, 16);
        let part = partition_iid(8, 2, &RngStream::new(0, streams::PARTITION)).unwrap();
        match train(&config(2, 2, 50, 1e6), &ds, &part) {
            Err(Error::Diverged { trace, .. }) => assert!(!trace.rounds.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_partition_is_rejected() {
        let (ds, _) = setup(8, 3, 16);
        let part = partition_iid(8, 2, &RngStream::new(0, streams::PARTITION)).unwrap();
        assert!(matches!(train(&config(3, 1, 1, 0.1), &ds, &part), Err(Error::Parameter(_))));
    }
}
