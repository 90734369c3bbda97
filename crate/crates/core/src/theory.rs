//! Closed-form convergence and generalization quantities, and audits that
//! compare recorded training traces against them.
//!
//! Audits never mutate a trace. High-probability statements are meant to be
//! judged across seeds with [`seed_majority`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{gram_pair, gram_perp, gram_round, pattern_sets, spectrum, GramKind, GramMatrix};
use crate::model::{self, preactivations, ModelParams};
use crate::numerics::{dot, solve_spd, CompensatedSum, DenseMatrix};
use crate::trainer::{max_column_distance, TrainTrace};

/// Absolute slack used by every `holds` decision.
pub const BOUND_SLACK: f64 = 1e-10;
/// Relative tolerance of the exact per-round residual identity.
pub const IDENTITY_TOL: f64 = 1e-8;

pub const GLOBAL_MOVEMENT_CONST: f64 = 8.0;
pub const LOCAL_MOVEMENT_CONST: f64 = 4.0;
pub const LOCAL_DEVIATION_CONST: f64 = 2.0;
pub const GRAM_DRIFT_CONST: f64 = 2.0;
pub const GRAM_PERP_CONST: f64 = 4.0;
/// Denominator of the per-term targets in the proof's dominance claims.
pub const CLAIM_DENOMINATOR: f64 = 40.0;
/// Default multiplier on the concentration term of the generalization bound.
pub const DEFAULT_GENERALIZATION_SLACK: f64 = 1.0;
/// Default allowance on top of `√(yᵀ(H∞)⁻¹y)` for the total weight movement,
/// as a fraction of that leading term.
pub const DEFAULT_RKHS_SLACK: f64 = 0.5;

/// Where in the trajectory a bound was checked; all `None` means global.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BoundContext {
    pub round: Option<usize>,
    pub client: Option<usize>,
    pub local_step: Option<usize>,
}

impl BoundContext {
    pub fn global() -> Self {
        Self::default()
    }

    pub fn round(t: usize) -> Self {
        Self { round: Some(t), ..Self::default() }
    }

    pub fn step(t: usize, client: Option<usize>, k: usize) -> Self {
        Self { round: Some(t), client, local_step: Some(k) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub theoretical: f64,
    pub measured: f64,
    /// `measured ≤ theoretical + BOUND_SLACK`.
    pub holds: bool,
    /// `theoretical − measured`.
    pub margin: f64,
    pub context: BoundContext,
    /// Leading constant the theoretical side was instantiated with.
    pub constant: f64,
}

impl BoundReport {
    pub fn new(name: &str, theoretical: f64, measured: f64, context: BoundContext, constant: f64) -> Self {
        Self {
            name: name.into(),
            theoretical,
            measured,
            holds: measured <= theoretical + BOUND_SLACK,
            margin: theoretical - measured,
            context,
            constant,
        }
    }
}

/// True when every report holds.
pub fn all_hold(reports: &[BoundReport]) -> bool {
    reports.iter().all(|r| r.holds)
}

/// At least four fifths of the seeds pass.
pub fn seed_majority(passes: &[bool]) -> bool {
    !passes.is_empty() && 5 * passes.iter().filter(|&&p| p).count() >= 4 * passes.len()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contraction {
    pub factor: f64,
    /// False when the step sizes push the factor out of `(0, 1)`.
    pub in_regime: bool,
}

/// Per-round contraction factor `1 − η_global η_local λ K / (2N)`.
pub fn contraction_factor(
    lambda: f64,
    eta_local: f64,
    eta_global: f64,
    local_steps: usize,
    clients: usize,
) -> Result<Contraction> {
    for (name, v) in [("lambda", lambda), ("eta_local", eta_local), ("eta_global", eta_global)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    if local_steps == 0 || clients == 0 {
        return Err(Error::Parameter("K and N must be positive".into()));
    }
    let factor = 1.0 - eta_global * eta_local * lambda * local_steps as f64 / (2.0 * clients as f64);
    Ok(Contraction { factor, in_regime: factor > 0.0 && factor < 1.0 })
}

/// Smallest `T` with `factor^T ≤ eps`.
pub fn rounds_to_eps(factor: f64, eps: f64) -> Result<u64> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Parameter(format!("factor must lie in (0, 1), got {factor}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Parameter(format!("eps must lie in (0, 1], got {eps}")));
    }
    if eps == 1.0 {
        return Ok(0);
    }
    let estimate = libm::ceil(libm::log(eps) / libm::log(factor));
    if !estimate.is_finite() || estimate > 9.0e15 {
        return Err(Error::Parameter(format!("factor {factor} needs too many rounds to reach {eps}")));
    }
    let mut t = estimate as u64;
    // Repair rounding in the logarithm ratio.
    while t > 0 && libm::pow(factor, (t - 1) as f64) <= eps {
        t -= 1;
    }
    while libm::pow(factor, t as f64) > eps {
        t += 1;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionAudit {
    pub reports: Vec<BoundReport>,
    /// Rounds skipped because the residual was already exactly zero.
    pub exact_fit_rounds: Vec<usize>,
    /// Fraction of non-skipped rounds that hold; 1 if none were audited.
    pub pass_fraction: f64,
}

/// Compares `residual_sq(t+1) / residual_sq(t)` with the contraction factor.
pub fn audit_contraction(trace: &TrainTrace, factor: f64) -> Result<ContractionAudit> {
    if trace.rounds.len() < 2 {
        return Err(Error::Contract("contraction audit needs at least two recorded rounds".into()));
    }
    let mut reports = Vec::new();
    let mut exact_fit_rounds = Vec::new();
    for pair in trace.rounds.windows(2) {
        let (before, after) = (pair[0], pair[1]);
        if before.residual_sq == 0.0 {
            exact_fit_rounds.push(before.round);
            continue;
        }
        reports.push(BoundReport::new(
            "contraction",
            factor,
            after.residual_sq / before.residual_sq,
            BoundContext::round(before.round),
            factor,
        ));
    }
    let pass_fraction =
        if reports.is_empty() { 1.0 } else { reports.iter().filter(|r| r.holds).count() as f64 / reports.len() as f64 };
    Ok(ContractionAudit { reports, exact_fit_rounds, pass_fraction })
}

/// Radius `D = 8 √n ‖y − y(0)‖₂ / (√m λ)` of the global weight movement.
pub fn global_movement_radius(n: usize, width: usize, lambda: f64, initial_residual: f64) -> f64 {
    GLOBAL_MOVEMENT_CONST * libm::sqrt(n as f64) * initial_residual / (libm::sqrt(width as f64) * lambda)
}

/// `4 √n ‖y_c^{(0)}(t) − y_c‖₂ / (√m λ)`, the movement allowed within a round.
pub fn local_movement_radius(n: usize, width: usize, lambda: f64, client_residual: f64) -> f64 {
    LOCAL_MOVEMENT_CONST * libm::sqrt(n as f64) * client_residual / (libm::sqrt(width as f64) * lambda)
}

/// `2 η_local n K ‖y_c(t) − y_c‖₂`.
pub fn local_deviation_radius(eta_local: f64, n: usize, local_steps: usize, client_residual: f64) -> f64 {
    LOCAL_DEVIATION_CONST * eta_local * n as f64 * local_steps as f64 * client_residual
}

/// Local records of one `(round, client)` block, with the residual at `k = 0`.
fn local_blocks(trace: &TrainTrace) -> Result<Vec<(f64, &[crate::trainer::LocalRecord])>> {
    let records = trace.require_local()?;
    let per_block = trace.config.local_steps + 1;
    if records.len() % per_block != 0 {
        return Err(Error::Contract("local records are not grouped by round and client".into()));
    }
    Ok(records.chunks(per_block).map(|block| (block[0].local_residual, block)).collect())
}

/// Global movement against `D` for every round, and the within-round movement
/// `max_r ‖w_{k,c,r}(t) − u_r(t)‖₂` for every recorded local step.
pub fn movement_bounds(trace: &TrainTrace, n: usize, lambda: f64) -> Result<Vec<BoundReport>> {
    let blocks = local_blocks(trace)?;
    let m = trace.config.width;
    let d = global_movement_radius(n, m, lambda, libm::sqrt(trace.initial_residual_sq()));
    let mut reports: Vec<BoundReport> = trace
        .rounds
        .iter()
        .map(|r| {
            BoundReport::new(
                "global_movement",
                d,
                r.max_global_move,
                BoundContext::round(r.round),
                GLOBAL_MOVEMENT_CONST,
            )
        })
        .collect();
    for (residual0, block) in blocks {
        let bound = local_movement_radius(n, m, lambda, residual0);
        for rec in block {
            reports.push(BoundReport::new(
                "local_movement",
                bound,
                rec.max_round_move,
                BoundContext::step(rec.round, Some(rec.client), rec.local_step),
                LOCAL_MOVEMENT_CONST,
            ));
        }
    }
    Ok(reports)
}

/// `‖y_c(t) − y_c^{(k)}(t)‖₂ ≤ 2 η_local n K ‖y_c(t) − y_c‖₂` for every local step.
pub fn local_deviation_bounds(trace: &TrainTrace, n: usize) -> Result<Vec<BoundReport>> {
    let blocks = local_blocks(trace)?;
    let (eta, k_steps) = (trace.config.eta_local, trace.config.local_steps);
    let mut reports = Vec::new();
    for (residual0, block) in blocks {
        let bound = local_deviation_radius(eta, n, k_steps, residual0);
        for rec in block {
            reports.push(BoundReport::new(
                "local_deviation",
                bound,
                rec.local_deviation,
                BoundContext::step(rec.round, Some(rec.client), rec.local_step),
                LOCAL_DEVIATION_CONST,
            ));
        }
    }
    Ok(reports)
}

fn locals_at(trace: &TrainTrace, t: usize, k: usize) -> Result<Vec<DenseMatrix>> {
    (0..trace.config.clients).map(|c| trace.local_weights(t, c, k).cloned()).collect()
}

/// `‖H(t,k) − H(0)‖_F ≤ 2n R` and `‖H(t,k)⊥‖_F ≤ 4n R` for every recorded
/// `(t, k)`, with `R` the largest distance from initialization of any global
/// or local weight column seen so far and `Q_i` built with that radius.
pub fn gram_drift_bounds(
    trace: &TrainTrace,
    dataset: &Dataset,
    partition: &ClientPartition,
) -> Result<Vec<BoundReport>> {
    let snaps = trace.require_snapshots()?;
    let u0 = trace.initial.weights();
    let n = dataset.len() as f64;
    let h0 = gram_pair(dataset, u0, u0)?;
    let mut radius: f64 = 0.0;
    let mut reports = Vec::new();
    for t in 0..snaps.local.len() {
        let global = trace.global_weights(t)?;
        radius = radius.max(max_column_distance(global, u0));
        for k in 0..=trace.config.local_steps {
            let locals = locals_at(trace, t, k)?;
            for w in &locals {
                radius = radius.max(max_column_distance(w, u0));
            }
            let h = gram_round(dataset, partition, global, &locals)?;
            let patterns = pattern_sets(u0, dataset, radius)?;
            let perp = gram_perp(dataset, partition, global, &locals, &patterns)?;
            let ctx = BoundContext::step(t, None, k);
            reports.push(BoundReport::new(
                "gram_drift",
                GRAM_DRIFT_CONST * n * radius,
                h.matrix.sub(&h0.matrix)?.frobenius_norm(),
                ctx,
                GRAM_DRIFT_CONST,
            ));
            reports.push(BoundReport::new(
                "gram_perp",
                GRAM_PERP_CONST * n * radius,
                perp.matrix.frobenius_norm(),
                ctx,
                GRAM_PERP_CONST,
            ));
        }
    }
    Ok(reports)
}

/// The exact split of one round's change in squared residual,
/// `‖y − y(t+1)‖² = ‖y − y(t)‖² + C₁ + C₂ + C₃ + C₄`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundDecomposition {
    pub round: usize,
    pub radius: f64,
    /// Main descent term built from `H(t,k)`.
    pub c1: f64,
    /// Correction for neurons outside the stable sets, built from `H(t,k)⊥`.
    pub c2: f64,
    /// `−2 ⟨y − y(t), v₂⟩`.
    pub c3: f64,
    /// `‖y(t+1) − y(t)‖²`.
    pub c4: f64,
    pub residual_sq_before: f64,
    pub residual_sq_after: f64,
    /// `|before + ΣC − after| / before`.
    pub identity_error: f64,
}

impl RoundDecomposition {
    /// `C₁ < 0` and `|C₂| + |C₃| + |C₄| ≤ |C₁|`.
    pub fn dominance_holds(&self) -> bool {
        self.c1 < 0.0 && self.c2.abs() + self.c3.abs() + self.c4.abs() <= self.c1.abs()
    }
}

/// Smallest radius that keeps every stable-set neuron on the same side for
/// both `u(t)` and `u(t+1)`: the larger of their distances from init.
pub fn round_radius(trace: &TrainTrace, t: usize) -> Result<f64> {
    let u0 = trace.initial.weights();
    let a = max_column_distance(trace.global_weights(t)?, u0);
    let b = max_column_distance(trace.global_weights(t + 1)?, u0);
    Ok(a.max(b))
}

/// `η_global η_local λ K ‖y − y(t)‖² / (40 N)`, the per-term target of the
/// dominance claims. Reported for comparison, not asserted.
pub fn claim_reference(trace: &TrainTrace, lambda: f64, residual_sq: f64) -> f64 {
    let c = &trace.config;
    c.eta_global * c.eta_local * lambda * c.local_steps as f64 * residual_sq / (CLAIM_DENOMINATOR * c.clients as f64)
}

/// Builds C₁…C₄ for round `t` from full-state snapshots. The identity is
/// exact whenever `radius` is at least [`round_radius`]; otherwise
/// stable-set neurons may flip and the check can fail.
pub fn decompose_round(
    trace: &TrainTrace,
    t: usize,
    dataset: &Dataset,
    partition: &ClientPartition,
    radius: f64,
) -> Result<RoundDecomposition> {
    let cfg = &trace.config;
    let initial = &trace.initial;
    let u0 = initial.weights();
    let u_t = trace.global_weights(t)?;
    let u_next = trace.global_weights(t + 1)?;
    let n = dataset.len();
    let labels = dataset.labels();

    let params_t = initial.with_weights(u_t.clone())?;
    let params_next = initial.with_weights(u_next.clone())?;
    let y_t = model::forward_all(&params_t, dataset, None)?.values;
    let y_next = model::forward_all(&params_next, dataset, None)?.values;
    let e: Vec<f64> = labels.iter().zip(&y_t).map(|(y, p)| y - p).collect();
    let patterns = pattern_sets(u0, dataset, radius)?;

    let mut s1 = CompensatedSum::new();
    let mut s2 = CompensatedSum::new();
    for k in 0..cfg.local_steps {
        let locals = locals_at(trace, t, k)?;
        // y_j − y_j^{(k)} with predictions from the owning client's iterate.
        let mut local_residual = vec![0.0; n];
        for (c, client) in partition.clients().iter().enumerate() {
            let params = initial.with_weights(locals[c].clone())?;
            let preds = model::forward_all(&params, dataset, Some(client))?.values;
            for (&j, p) in client.iter().zip(preds) {
                local_residual[j] = labels[j] - p;
            }
        }
        let h = gram_round(dataset, partition, u_t, &locals)?;
        let perp = gram_perp(dataset, partition, u_t, &locals, &patterns)?;
        s1.add(dot(&e, &h.matrix.matvec(&local_residual)?));
        s2.add(dot(&e, &perp.matrix.matvec(&local_residual)?));
    }
    let scale = 2.0 * cfg.eta_global * cfg.eta_local / cfg.clients as f64;
    let c1 = -scale * s1.total();
    let c2 = scale * s2.total();

    let v2 = unstable_update(initial, u_t, u_next, dataset, &patterns);
    let c3 = -2.0 * dot(&e, &v2);
    let c4: f64 = y_next.iter().zip(&y_t).map(|(a, b)| (a - b) * (a - b)).collect::<CompensatedSum>().total();

    let before: f64 = e.iter().map(|v| v * v).collect::<CompensatedSum>().total();
    let after: f64 = labels.iter().zip(&y_next).map(|(y, p)| (y - p) * (y - p)).collect::<CompensatedSum>().total();
    let gap = (before + c1 + c2 + c3 + c4 - after).abs();
    let identity_error = if before > 0.0 { gap / before } else { gap };
    if identity_error > IDENTITY_TOL {
        return Err(Error::InternalConsistency(format!(
            "round {t}: residual identity off by {identity_error:e} (radius {radius:e}, global movement {:e})",
            round_radius(trace, t).unwrap_or(f64::NAN)
        )));
    }
    Ok(RoundDecomposition {
        round: t,
        radius,
        c1,
        c2,
        c3,
        c4,
        residual_sq_before: before,
        residual_sq_after: after,
        identity_error,
    })
}

/// `v₂,i = (1/√m) Σ_{r ∈ Q̄_i} a_r (φ(u_r(t+1)ᵀx_i) − φ(u_r(t)ᵀx_i))`.
fn unstable_update(
    params: &ModelParams,
    u_t: &DenseMatrix,
    u_next: &DenseMatrix,
    dataset: &Dataset,
    patterns: &crate::kernel::PatternSets,
) -> Vec<f64> {
    let scale = 1.0 / libm::sqrt(params.width() as f64);
    (0..dataset.len())
        .map(|i| {
            let x = dataset.input(i);
            let before = preactivations(u_t, x);
            let after = preactivations(u_next, x);
            let sum: CompensatedSum = (0..params.width())
                .filter(|&r| !patterns.contains(i, r))
                .map(|r| params.signs()[r] * (after[r].max(0.0) - before[r].max(0.0)))
                .collect();
            sum.total() * scale
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralizationBound {
    /// `yᵀ(H∞)⁻¹y`.
    pub complexity: f64,
    /// `√(2 yᵀ(H∞)⁻¹y / n)`.
    pub leading: f64,
    /// `slack · √(ln(n / (λ δ)) / (2n))`.
    pub concentration: f64,
    pub total: f64,
    pub lambda_min: f64,
}

fn require_infinite(h_inf: &GramMatrix, labels: &[f64]) -> Result<()> {
    if h_inf.kind != GramKind::Infinite {
        return Err(Error::Contract(format!("expected the infinite-width kernel, got {}", h_inf.kind.as_str())));
    }
    if h_inf.size() != labels.len() {
        return Err(Error::Dimension(format!("kernel is {0}x{0}, got {1} labels", h_inf.size(), labels.len())));
    }
    Ok(())
}

/// `yᵀ(H∞)⁻¹y`, with a singular kernel reported as a degenerate spectrum.
pub fn rkhs_complexity(h_inf: &GramMatrix, labels: &[f64]) -> Result<f64> {
    require_infinite(h_inf, labels)?;
    let lambda_min = spectrum(h_inf)?.lambda_min;
    let alpha = solve_spd(&h_inf.matrix, labels).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::DegenerateSpectrum { lambda_min, near_parallel: None },
        other => other,
    })?;
    Ok(dot(labels, &alpha))
}

/// Population-loss bound `√(2yᵀ(H∞)⁻¹y/n) + slack · √(ln(n/(λδ))/(2n))`,
/// where `slack` instantiates the hidden constant of the concentration term.
pub fn generalization_bound(h_inf: &GramMatrix, labels: &[f64], delta: f64, slack: f64) -> Result<GeneralizationBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(slack >= 0.0) {
        return Err(Error::Parameter(format!("slack must be non-negative, got {slack}")));
    }
    let complexity = rkhs_complexity(h_inf, labels)?;
    let lambda_min = spectrum(h_inf)?.lambda_min;
    let n = labels.len() as f64;
    let leading = libm::sqrt(2.0 * complexity / n);
    let concentration = slack * libm::sqrt((libm::log(n / (lambda_min * delta)) / (2.0 * n)).max(0.0));
    Ok(GeneralizationBound { complexity, leading, concentration, total: leading + concentration, lambda_min })
}

/// Final `‖U(T) − U(0)‖_F` against `(1 + slack) √(yᵀ(H∞)⁻¹y)`.
pub fn movement_vs_rkhs(trace: &TrainTrace, h_inf: &GramMatrix, labels: &[f64], slack: f64) -> Result<BoundReport> {
    if !(slack >= 0.0) {
        return Err(Error::Parameter(format!("slack must be non-negative, got {slack}")));
    }
    let leading = libm::sqrt(rkhs_complexity(h_inf, labels)?);
    let last = trace.rounds[trace.rounds.len() - 1];
    Ok(BoundReport::new(
        "rkhs_movement",
        leading * (1.0 + slack),
        last.total_move_fro,
        BoundContext::round(last.round),
        1.0 + slack,
    ))
}
