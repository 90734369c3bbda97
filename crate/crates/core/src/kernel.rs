//! Gram matrices of the network: the infinite-width NTK, finite-width
//! empirical kernels (including the asymmetric global/local mix used during a
//! federated round), certified activation sets and drift measurements.
//!
//! Empirical entries are `x_iᵀx_j · count / m` where `count` is an integer
//! number of co-active neurons, so they are exact up to one multiplication.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dataset::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::model::preactivations;
use crate::numerics::{eigh_symmetric, DenseMatrix};

/// Smallest eigenvalue accepted by [`spectrum`].
pub const DEGENERATE_LAMBDA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramKind {
    Infinite,
    EmpiricalSymmetric,
    EmpiricalAsymmetric,
    Perp,
}

impl GramKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GramKind::Infinite => "infinite",
            GramKind::EmpiricalSymmetric => "empirical-symmetric",
            GramKind::EmpiricalAsymmetric => "empirical-asymmetric",
            GramKind::Perp => "perp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "infinite" => Some(GramKind::Infinite),
            "empirical-symmetric" => Some(GramKind::EmpiricalSymmetric),
            "empirical-asymmetric" => Some(GramKind::EmpiricalAsymmetric),
            "perp" => Some(GramKind::Perp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub matrix: DenseMatrix,
    pub kind: GramKind,
}

impl GramMatrix {
    pub fn new(matrix: DenseMatrix, kind: GramKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "Gram matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(Self { matrix, kind })
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Activation bits packed 64 neurons per word, one row per data point.
#[derive(Clone, Debug, PartialEq, Eq)]
struct BitRows {
    words: usize,
    bits: Vec<u64>,
}

impl BitRows {
    fn new(rows: usize, width: usize) -> Self {
        let words = width.div_ceil(64);
        Self { words, bits: vec![0; rows * words] }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn set(&mut self, i: usize, r: usize) {
        self.bits[i * self.words + r / 64] |= 1u64 << (r % 64);
    }

    fn get(&self, i: usize, r: usize) -> bool {
        self.bits[i * self.words + r / 64] >> (r % 64) & 1 == 1
    }
}

/// Rows of `1{w_rᵀx_i ≥ 0}` for the listed points.
fn activation_rows(
    weights: &DenseMatrix,
    dataset: &Dataset,
    points: impl Iterator<Item = usize>,
) -> Vec<(usize, Vec<u64>)> {
    let m = weights.cols();
    let words = m.div_ceil(64);
    points
        .map(|i| {
            let z = preactivations(weights, dataset.input(i));
            let mut row = vec![0u64; words];
            for (r, &zr) in z.iter().enumerate() {
                if zr >= 0.0 {
                    row[r / 64] |= 1u64 << (r % 64);
                }
            }
            (i, row)
        })
        .collect()
}

fn activation_table(weights: &DenseMatrix, dataset: &Dataset) -> BitRows {
    let mut table = BitRows::new(dataset.len(), weights.cols());
    for (i, row) in activation_rows(weights, dataset, 0..dataset.len()) {
        table.bits[i * table.words..(i + 1) * table.words].copy_from_slice(&row);
    }
    table
}

/// Right-hand table for a federated round: row `j` uses the weights of the
/// client owning point `j`.
fn round_table(dataset: &Dataset, partition: &ClientPartition, locals: &[DenseMatrix]) -> BitRows {
    let mut table = BitRows::new(dataset.len(), locals[0].cols());
    for (c, w) in locals.iter().enumerate() {
        for (j, row) in activation_rows(w, dataset, partition.client(c).iter().copied()) {
            table.bits[j * table.words..(j + 1) * table.words].copy_from_slice(&row);
        }
    }
    table
}

fn gram_from_tables(
    dataset: &Dataset,
    width: usize,
    left: &BitRows,
    right: &BitRows,
    excluded: Option<&BitRows>,
) -> DenseMatrix {
    let n = dataset.len();
    let inner = dataset.inner_products();
    let mut out = DenseMatrix::zeros(n, n);
    let mut masked = vec![0u64; left.words];
    for i in 0..n {
        let li = left.row(i);
        match excluded {
            // Neurons in Q_i are excluded from row i.
            Some(member) => {
                for ((dst, &l), &q) in masked.iter_mut().zip(li).zip(member.row(i)) {
                    *dst = l & !q;
                }
            }
            None => masked.copy_from_slice(li),
        }
        for j in 0..n {
            let count: u32 = masked.iter().zip(right.row(j)).map(|(a, b)| (a & b).count_ones()).sum();
            out[(i, j)] = inner[(i, j)] * count as f64 / width as f64;
        }
    }
    out
}

fn check_weights(dataset: &Dataset, w: &DenseMatrix, what: &str) -> Result<()> {
    if w.rows() != dataset.dim() {
        return Err(Error::Shape(format!("{what} weights have dimension {}, data has {}", w.rows(), dataset.dim())));
    }
    if w.cols() == 0 {
        return Err(Error::Shape(format!("{what} weights have zero width")));
    }
    Ok(())
}

/// Infinite-width NTK, `H∞_ij = x_iᵀx_j (π − arccos x_iᵀx_j) / (2π)`, which
/// is the closed form of `E_{w~N(0,I)}[x_iᵀx_j 1{wᵀx_i ≥ 0, wᵀx_j ≥ 0}]`.
pub fn ntk_infinity(dataset: &Dataset) -> GramMatrix {
    let n = dataset.len();
    let inner = dataset.inner_products();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = ntk_entry(inner[(i, j)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    GramMatrix { matrix: out, kind: GramKind::Infinite }
}

/// NTK value for a pair of unit vectors with inner product `rho`.
pub fn ntk_entry(rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    rho * (PI - libm::acos(rho)) / (2.0 * PI)
}

/// `H(w̃, ŵ)_ij = (1/m) x_iᵀx_j Σ_r 1{w̃_rᵀx_i ≥ 0, ŵ_rᵀx_j ≥ 0}`; the left
/// weights decide the row indicator, the right weights the column indicator.
pub fn gram_pair(dataset: &Dataset, left: &DenseMatrix, right: &DenseMatrix) -> Result<GramMatrix> {
    check_weights(dataset, left, "left")?;
    check_weights(dataset, right, "right")?;
    if left.cols() != right.cols() {
        return Err(Error::Shape(format!("left width {} differs from right width {}", left.cols(), right.cols())));
    }
    let lt = activation_table(left, dataset);
    let (kind, matrix) = if left == right {
        (GramKind::EmpiricalSymmetric, gram_from_tables(dataset, left.cols(), &lt, &lt, None))
    } else {
        let rt = activation_table(right, dataset);
        (GramKind::EmpiricalAsymmetric, gram_from_tables(dataset, left.cols(), &lt, &rt, None))
    };
    Ok(GramMatrix { matrix, kind })
}

fn check_round(
    dataset: &Dataset,
    partition: &ClientPartition,
    global: &DenseMatrix,
    locals: &[DenseMatrix],
) -> Result<()> {
    if partition.num_points() != dataset.len() {
        return Err(Error::Dimension("partition does not match dataset".into()));
    }
    if locals.len() != partition.num_clients() {
        return Err(Error::Parameter(format!(
            "{} local weight sets for {} clients",
            locals.len(),
            partition.num_clients()
        )));
    }
    check_weights(dataset, global, "global")?;
    for w in locals {
        check_weights(dataset, w, "local")?;
        if w.cols() != global.cols() {
            return Err(Error::Shape("local and global widths differ".into()));
        }
    }
    Ok(())
}

/// The combined round kernel `H(t,k)`: rows use the global weights `u(t)`,
/// column `j` uses the local weights of the client owning `j`.
pub fn gram_round(
    dataset: &Dataset,
    partition: &ClientPartition,
    global: &DenseMatrix,
    locals: &[DenseMatrix],
) -> Result<GramMatrix> {
    check_round(dataset, partition, global, locals)?;
    let left = activation_table(global, dataset);
    let right = round_table(dataset, partition, locals);
    let kind =
        if locals.iter().all(|w| w == global) { GramKind::EmpiricalSymmetric } else { GramKind::EmpiricalAsymmetric };
    Ok(GramMatrix { matrix: gram_from_tables(dataset, global.cols(), &left, &right, None), kind })
}

/// Neurons whose activation on each point is certified stable within radius
/// `R` of initialization: `r ∈ Q_i ⇔ |u_r(0)ᵀx_i| > R`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternSets {
    pub radius: f64,
    width: usize,
    member: BitRows,
}

impl PatternSets {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_points(&self) -> usize {
        self.member.bits.len() / self.member.words.max(1)
    }

    pub fn contains(&self, i: usize, r: usize) -> bool {
        self.member.get(i, r)
    }

    /// `|Q̄_i|`.
    pub fn complement_size(&self, i: usize) -> usize {
        self.width - self.member.row(i).iter().map(|w| w.count_ones() as usize).sum::<usize>()
    }
}

pub fn pattern_sets(init_weights: &DenseMatrix, dataset: &Dataset, radius: f64) -> Result<PatternSets> {
    if !(radius >= 0.0) {
        return Err(Error::Parameter(format!("radius must be non-negative, got {radius}")));
    }
    check_weights(dataset, init_weights, "initial")?;
    let m = init_weights.cols();
    let mut member = BitRows::new(dataset.len(), m);
    for i in 0..dataset.len() {
        let z = preactivations(init_weights, dataset.input(i));
        for (r, zr) in z.iter().enumerate() {
            if zr.abs() > radius {
                member.set(i, r);
            }
        }
    }
    Ok(PatternSets { radius, width: m, member })
}

/// `H(t,k)⊥`: like [`gram_round`] but row `i` only counts neurons in `Q̄_i`.
pub fn gram_perp(
    dataset: &Dataset,
    partition: &ClientPartition,
    global: &DenseMatrix,
    locals: &[DenseMatrix],
    patterns: &PatternSets,
) -> Result<GramMatrix> {
    check_round(dataset, partition, global, locals)?;
    if patterns.width() != global.cols() || patterns.num_points() != dataset.len() {
        return Err(Error::Shape(format!(
            "pattern sets cover {} points x {} neurons, expected {} x {}",
            patterns.num_points(),
            patterns.width(),
            dataset.len(),
            global.cols()
        )));
    }
    let left = activation_table(global, dataset);
    let right = round_table(dataset, partition, locals);
    Ok(GramMatrix {
        matrix: gram_from_tables(dataset, global.cols(), &left, &right, Some(&patterns.member)),
        kind: GramKind::Perp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition_number: f64,
}

/// Extreme eigenvalues and condition number of a symmetric Gram matrix.
pub fn spectrum(gram: &GramMatrix) -> Result<Spectrum> {
    match gram.kind {
        GramKind::Infinite | GramKind::EmpiricalSymmetric => {}
        other => {
            return Err(Error::Contract(format!("spectrum needs a symmetric kernel, got kind {}", other.as_str())))
        }
    }
    let eig = eigh_symmetric(&gram.matrix)?;
    let lambda_min = eig.values[0];
    let lambda_max = eig.values[eig.values.len() - 1];
    if lambda_min <= DEGENERATE_LAMBDA {
        return Err(Error::DegenerateSpectrum { lambda_min, near_parallel: None });
    }
    Ok(Spectrum { lambda_min, lambda_max, condition_number: lambda_max / lambda_min })
}

/// Spectrum of `H∞` for a dataset. Near-parallel inputs are reported as a
/// degenerate spectrum naming the pair; their true `λ_min` can sit well above
/// [`DEGENERATE_LAMBDA`] while still making the kernel numerically useless.
pub fn infinite_spectrum(dataset: &Dataset) -> Result<Spectrum> {
    if let Some(pair) = dataset.near_parallel_pair() {
        let h = ntk_infinity(dataset);
        let lambda_min = eigh_symmetric(&h.matrix)?.values[0];
        return Err(Error::DegenerateSpectrum { lambda_min, near_parallel: Some(pair) });
    }
    spectrum(&ntk_infinity(dataset))
}

/// `‖G_t − G_0‖_F`.
pub fn gram_drift(current: &GramMatrix, initial: &GramMatrix) -> Result<f64> {
    Ok(current.matrix.sub(&initial.matrix)?.frobenius_norm())
}
