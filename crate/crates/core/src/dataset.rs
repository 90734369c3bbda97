//! Training data on the unit sphere and its split across clients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, standard_normal, DenseMatrix, RngStream};

/// Allowed deviation of `‖x_i‖₂` from 1.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Pairs with `|x_iᵀx_j|` above this are treated as parallel.
pub const PARALLEL_TOL: f64 = 1.0 - 1e-9;

/// Points on the unit sphere with scalar labels in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: DenseMatrix,
    labels: Vec<f64>,
}

impl Dataset {
    /// Validates unit norms, label range and sizes.
    pub fn new(inputs: DenseMatrix, labels: Vec<f64>) -> Result<Self> {
        let (n, d) = (inputs.rows(), inputs.cols());
        if n == 0 {
            return Err(Error::Validation("dataset needs at least one point".into()));
        }
        if d < 2 {
            return Err(Error::Validation(format!("input dimension must be >= 2, got {d}")));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} inputs but {} labels", labels.len())));
        }
        for i in 0..n {
            let norm = norm2(inputs.row(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!("input {i} has norm {norm}, expected 1")));
            }
        }
        if let Some(i) = labels.iter().position(|y| !(y.abs() <= 1.0)) {
            return Err(Error::Validation(format!("label {i} = {} is outside [-1, 1]", labels[i])));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Matrix of pairwise inner products `x_iᵀx_j`.
    pub fn inner_products(&self) -> DenseMatrix {
        let n = self.len();
        let mut g = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.input(i), self.input(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// First pair `(i, j)`, `i < j`, with `|x_iᵀx_j| > PARALLEL_TOL`.
    pub fn near_parallel_pair(&self) -> Option<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .find(|&(i, j)| dot(self.input(i), self.input(j)).abs() > PARALLEL_TOL)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionKind {
    UniformSphere,
    /// Two antipodal clusters around a random center.
    TwoCluster,
    /// Data supplied from a file; cannot be generated.
    CustomLoaded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelRule {
    /// `y = clip(⟨x, v⟩, -1, 1)` with a Gaussian teacher `v`.
    LinearTeacher,
    /// `y = ±1` by cluster membership (by the sign of `⟨x, center⟩`).
    ClusterSign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub label_rule: LabelRule,
    /// Dirichlet concentration when partitioning in skewed mode.
    pub skew_alpha: Option<f64>,
}

impl DistributionSpec {
    pub fn uniform_sphere() -> Self {
        Self { kind: DistributionKind::UniformSphere, label_rule: LabelRule::LinearTeacher, skew_alpha: None }
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let norm = norm2(&v);
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Samples `n` unit-norm points with labels; near-parallel draws are redrawn.
pub fn generate(spec: &DistributionSpec, n: usize, d: usize, stream: &RngStream) -> Result<Dataset> {
    if d < 2 {
        return Err(Error::Parameter(format!(
            "input dimension must be >= 2, got {d}; the 1-d sphere only has two antipodal points"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one data point".into()));
    }
    let mut rng = stream.generator();
    let center = random_unit(&mut rng, d);
    let teacher: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut side: Vec<f64> = Vec::with_capacity(n);
    while points.len() < n {
        let (x, s) = match spec.kind {
            DistributionKind::UniformSphere => (random_unit(&mut rng, d), 1.0),
            DistributionKind::TwoCluster => {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let spread = 1.0 / libm::sqrt(d as f64);
                let raw = center.iter().map(|c| s * c + spread * standard_normal(&mut rng)).collect();
                (normalize(raw), s)
            }
            DistributionKind::CustomLoaded => {
                return Err(Error::Parameter("custom-loaded distributions are read from file, not generated".into()))
            }
        };
        if points.iter().all(|p| dot(p, &x).abs() <= PARALLEL_TOL) {
            points.push(x);
            side.push(s);
        }
    }

    let labels = points
        .iter()
        .zip(&side)
        .map(|(x, &s)| match spec.label_rule {
            LabelRule::LinearTeacher => dot(x, &teacher).clamp(-1.0, 1.0),
            LabelRule::ClusterSign => match spec.kind {
                DistributionKind::TwoCluster => s,
                _ => {
                    if dot(x, &center) >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            },
        })
        .collect();
    let inputs = DenseMatrix::new(n, d, points.concat())?;
    Dataset::new(inputs, labels)
}

/// Disjoint non-empty index sets `S_1 … S_N` covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientPartition {
    sets: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl ClientPartition {
    /// Validates the cover; each set is stored sorted.
    pub fn new(mut sets: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Validation("partition needs at least one client".into()));
        }
        let mut owner = vec![usize::MAX; n];
        for (c, set) in sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::Validation(format!("client {c} has no data")));
            }
            set.sort_unstable();
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::Validation(format!("index {i} out of range for n = {n}")));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::Validation(format!("index {i} assigned to clients {} and {c}", owner[i])));
                }
                owner[i] = c;
            }
        }
        if let Some(i) = owner.iter().position(|&c| c == usize::MAX) {
            return Err(Error::Validation(format!("index {i} belongs to no client")));
        }
        Ok(Self { sets, owner })
    }

    pub fn num_clients(&self) -> usize {
        self.sets.len()
    }

    pub fn num_points(&self) -> usize {
        self.owner.len()
    }

    pub fn client(&self, c: usize) -> &[usize] {
        &self.sets[c]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Client holding point `i`.
    pub fn owner(&self, i: usize) -> usize {
        self.owner[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Reorders clients: client `c` of the result is client `order[c]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.num_clients() {
            return Err(Error::Dimension("permutation length differs from client count".into()));
        }
        let sets = order
            .iter()
            .map(|&c| self.sets.get(c).cloned().ok_or_else(|| Error::Parameter(format!("client {c} does not exist"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sets, self.num_points())
    }
}

fn check_client_count(n: usize, clients: usize) -> Result<()> {
    if clients == 0 {
        return Err(Error::Parameter("need at least one client".into()));
    }
    if clients > n {
        return Err(Error::Parameter(format!("{clients} clients for only {n} points")));
    }
    Ok(())
}

/// Random balanced split: sizes differ by at most one.
pub fn partition_iid(n: usize, clients: usize, stream: &RngStream) -> Result<ClientPartition> {
    check_client_count(n, clients)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream.generator());
    let (base, extra) = (n / clients, n % clients);
    let mut sets = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = base + usize::from(c < extra);
        sets.push(idx[start..start + len].to_vec());
        start += len;
    }
    ClientPartition::new(sets, n)
}

/// Label-skewed split. Points are grouped into two classes by label sign and
/// each class is spread over clients with `Dirichlet(alpha)` proportions. Any
/// empty client then receives one point from the currently largest client.
pub fn partition_skewed(labels: &[f64], clients: usize, alpha: f64, stream: &RngStream) -> Result<ClientPartition> {
    let n = labels.len();
    check_client_count(n, clients)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("Dirichlet concentration must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Parameter(format!("{e}")))?;
    let mut rng = stream.generator();
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); clients];

    for positive in [false, true] {
        let mut members: Vec<usize> = (0..n).filter(|&i| (labels[i] >= 0.0) == positive).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            // Every gamma draw underflowed: put the class on one random client.
            weights = vec![0.0; clients];
            weights[rng.random_range(0..clients)] = 1.0;
        } else {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let count = members.len();
        let mut cumulative = 0.0;
        let mut start = 0;
        for (c, w) in weights.iter().enumerate() {
            cumulative += w;
            let end = if c + 1 == clients {
                count
            } else {
                (libm::round(cumulative * count as f64) as usize).clamp(start, count)
            };
            sets[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = sets.iter().position(Vec::is_empty) {
        let largest = (0..clients)
            .max_by(|&a, &b| sets[a].len().cmp(&sets[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = sets[largest].pop().expect("largest client is non-empty");
        sets[empty].push(moved);
    }
    ClientPartition::new(sets, n)
}
