//! Two-layer ReLU network `f(u, x) = m^{-1/2} Σ_r a_r max(u_rᵀx, 0)` with
//! trainable first layer `u` (stored `d × m`, one column per neuron) and frozen
//! output signs `a_r ∈ {−1, +1}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_from, norm2, CompensatedSum, DenseMatrix, RngStream};

/// Inputs passed to `forward` must have unit norm to this tolerance.
pub const INPUT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    weights: DenseMatrix,
    signs: Vec<f64>,
    sigma: f64,
}

impl ModelParams {
    pub fn new(weights: DenseMatrix, signs: Vec<f64>, sigma: f64) -> Result<Self> {
        if weights.cols() != signs.len() {
            return Err(Error::Dimension(format!("{} weight columns but {} signs", weights.cols(), signs.len())));
        }
        if weights.cols() == 0 {
            return Err(Error::Parameter("width must be at least 1".into()));
        }
        if let Some(r) = signs.iter().position(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::Validation(format!("sign {r} is {}, expected ±1", signs[r])));
        }
        if !weights.all_finite() {
            return Err(Error::Validation("weights must be finite".into()));
        }
        Ok(Self { weights, signs, sigma })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn width(&self) -> usize {
        self.weights.cols()
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    /// Same signs, different first layer.
    pub fn with_weights(&self, weights: DenseMatrix) -> Result<Self> {
        if weights.rows() != self.dim() || weights.cols() != self.width() {
            return Err(Error::Dimension(format!(
                "expected {}x{} weights, got {}x{}",
                self.dim(),
                self.width(),
                weights.rows(),
                weights.cols()
            )));
        }
        Ok(Self { weights, signs: self.signs.clone(), sigma: self.sigma })
    }
}

/// Network outputs on some set of points.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
}

/// Draws `u_r ~ N(0, σ² I)` (row-major) followed by uniform signs, all from
/// one stream.
pub fn init(m: usize, d: usize, sigma: f64, stream: &RngStream) -> Result<ModelParams> {
    if m == 0 {
        return Err(Error::Parameter("width m must be at least 1".into()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("init std must be positive, got {sigma}")));
    }
    let mut rng = stream.generator();
    let weights = gaussian_from(&mut rng, d, m, sigma)?;
    let signs = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    ModelParams::new(weights, signs, sigma)
}

/// Pre-activations `u_rᵀx` for every neuron.
pub fn preactivations(weights: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; weights.cols()];
    for (k, &xk) in x.iter().enumerate() {
        for (zr, &w) in z.iter_mut().zip(weights.row(k)) {
            *zr += xk * w;
        }
    }
    z
}

fn output_from_preactivations(z: &[f64], signs: &[f64]) -> f64 {
    let sum: CompensatedSum = z.iter().zip(signs).map(|(&zr, &a)| if zr > 0.0 { a * zr } else { 0.0 }).collect();
    sum.total() / libm::sqrt(signs.len() as f64)
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != params.dim() {
        return Err(Error::Shape(format!("input has dimension {}, model expects {}", x.len(), params.dim())));
    }
    let norm = norm2(x);
    if (norm - 1.0).abs() > INPUT_NORM_TOL {
        return Err(Error::Validation(format!("input norm {norm} is not 1")));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64> {
    check_input(params, x)?;
    Ok(output_from_preactivations(&preactivations(&params.weights, x), &params.signs))
}

/// Outputs on `indices` (all points when `None`), in the given order.
pub fn forward_all(params: &ModelParams, dataset: &Dataset, indices: Option<&[usize]>) -> Result<Prediction> {
    if dataset.dim() != params.dim() {
        return Err(Error::Shape(format!(
            "dataset dimension {} differs from model dimension {}",
            dataset.dim(),
            params.dim()
        )));
    }
    let values: Vec<f64> = match indices {
        Some(idx) => idx.iter().map(|&i| forward(params, dataset.input(i))).collect::<Result<_>>()?,
        None => (0..dataset.len()).map(|i| forward(params, dataset.input(i))).collect::<Result<_>>()?,
    };
    Ok(Prediction { values })
}

/// `∂L_c/∂u`, column `r` equal to
/// `m^{-1/2} Σ_{i∈S_c} (f(u,x_i) − y_i) a_r x_i 1{u_rᵀx_i ≥ 0}`.
pub fn client_gradient(params: &ModelParams, dataset: &Dataset, client: &[usize]) -> Result<DenseMatrix> {
    if client.is_empty() {
        return Err(Error::Parameter("client index set is empty".into()));
    }
    if dataset.dim() != params.dim() {
        return Err(Error::Shape("dataset and model dimensions differ".into()));
    }
    if let Some(&i) = client.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Parameter(format!("index {i} out of range")));
    }
    Ok(gradient_unchecked(params, dataset, client))
}

pub(crate) fn gradient_unchecked(params: &ModelParams, dataset: &Dataset, client: &[usize]) -> DenseMatrix {
    let (d, m) = (params.dim(), params.width());
    let mut grad = DenseMatrix::zeros(d, m);
    for &i in client {
        let x = dataset.input(i);
        let z = preactivations(&params.weights, x);
        let residual = output_from_preactivations(&z, &params.signs) - dataset.labels()[i];
        for (k, &xk) in x.iter().enumerate() {
            let coeff = residual * xk;
            for (g, &zr) in grad.row_mut(k).iter_mut().zip(&z) {
                if zr >= 0.0 {
                    *g += coeff;
                }
            }
        }
    }
    let scale = 1.0 / libm::sqrt(m as f64);
    for k in 0..d {
        for (g, &a) in grad.row_mut(k).iter_mut().zip(&params.signs) {
            *g *= a * scale;
        }
    }
    grad
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// `L_j = ½ Σ_{i∈S_j} (f(u,x_i) − y_i)²`.
    pub per_client: Vec<f64>,
    /// `L = (1/N) Σ_j L_j`.
    pub total: f64,
    /// `‖y − ŷ‖₂²` over all points.
    pub residual_sq: f64,
}

pub fn loss(params: &ModelParams, dataset: &Dataset, partition: &ClientPartition) -> Result<LossReport> {
    if partition.num_points() != dataset.len() {
        return Err(Error::Dimension(format!(
            "partition covers {} points, dataset has {}",
            partition.num_points(),
            dataset.len()
        )));
    }
    let pred = forward_all(params, dataset, None)?;
    Ok(loss_from_predictions(&pred.values, dataset.labels(), partition))
}

pub(crate) fn loss_from_predictions(pred: &[f64], labels: &[f64], partition: &ClientPartition) -> LossReport {
    let sq = |i: usize| (pred[i] - labels[i]) * (pred[i] - labels[i]);
    let per_client: Vec<f64> =
        partition.clients().iter().map(|set| 0.5 * set.iter().map(|&i| sq(i)).sum::<f64>()).collect();
    let total = per_client.iter().sum::<f64>() / partition.num_clients() as f64;
    let residual_sq = (0..labels.len()).map(sq).sum();
    LossReport { per_client, total, residual_sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::streams;

    fn single(w: &[f64], sign: f64) -> ModelParams {
        let weights = DenseMatrix::new(w.len(), 1, w.to_vec()).unwrap();
        ModelParams::new(weights, vec![sign], 1.0).unwrap()
    }

    #[test]
    fn forward_single_neuron() {
        assert_eq!(forward(&single(&[1.0, 0.0], 1.0), &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(forward(&single(&[-1.0, 0.0], 1.0), &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn opposite_signs_cancel() {
        let weights = DenseMatrix::from_rows(&[&[0.3, 0.3], &[-0.7, -0.7]]).unwrap();
        let p = ModelParams::new(weights, vec![1.0, -1.0], 1.0).unwrap();
        for x in [[1.0, 0.0], [0.0, -1.0], [0.6, 0.8]] {
            assert_eq!(forward(&p, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn forward_contract_errors() {
        let p = single(&[1.0, 0.0], 1.0);
        assert!(matches!(forward(&p, &[1.0, 0.0, 0.0]), Err(Error::Shape(_))));
        assert!(matches!(forward(&p, &[2.0, 0.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn init_is_deterministic_and_balanced() {
        let s = RngStream::new(1, streams::INIT);
        assert_eq!(init(16, 3, 1.0, &s).unwrap(), init(16, 3, 1.0, &s).unwrap());
        let p = init(10_000, 2, 1.0, &s).unwrap();
        // Binomial(1e4, 1/2) has standard deviation 0.005 on the fraction.
        let plus = p.signs().iter().filter(|&&a| a > 0.0).count() as f64 / 1e4;
        assert!((plus - 0.5).abs() < 0.02, "{plus}");
        assert!(matches!(init(0, 2, 1.0, &s), Err(Error::Parameter(_))));
        assert!(matches!(init(4, 2, 0.0, &s), Err(Error::Parameter(_))));
    }

    #[test]
    fn gradient_of_one_active_neuron() {
        let p = single(&[0.5, 0.5], -1.0);
        let x = [0.6, 0.8];
        let ds = Dataset::new(DenseMatrix::from_rows(&[&x]).unwrap(), vec![0.25]).unwrap();
        let f = forward(&p, &x).unwrap();
        let g = client_gradient(&p, &ds, &[0]).unwrap();
        for k in 0..2 {
            assert_eq!(g[(k, 0)], -(f - 0.25) * x[k]);
        }
        assert!(matches!(client_gradient(&p, &ds, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let p = init(32, 3, 1.0, &RngStream::new(4, streams::INIT)).unwrap();
        let ds0 = crate::dataset::generate(
            &crate::dataset::DistributionSpec::uniform_sphere(),
            5,
            3,
            &RngStream::new(4, streams::DATA),
        )
        .unwrap();
        let fitted = forward_all(&p, &ds0, None).unwrap().values;
        if fitted.iter().any(|v| v.abs() > 1.0) {
            return;
        }
        let ds = Dataset::new(ds0.inputs().clone(), fitted).unwrap();
        let g = client_gradient(&p, &ds, &[0, 1, 2, 3, 4]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_arithmetic() {
        // Two points fit by a zero network with labels 1, so residuals are (1, 1).
        let ds = Dataset::new(DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(), vec![1.0, 1.0]).unwrap();
        let p = single(&[-1.0, -1.0], 1.0);
        let two = ClientPartition::new(vec![vec![0], vec![1]], 2).unwrap();
        let r = loss(&p, &ds, &two).unwrap();
        assert_eq!(r.per_client, vec![0.5, 0.5]);
        assert_eq!(r.total, 0.5);
        assert_eq!(r.residual_sq, 2.0);

        let one = ClientPartition::new(vec![vec![0, 1]], 2).unwrap();
        let r = loss(&p, &ds, &one).unwrap();
        assert_eq!(r.total, r.residual_sq / 2.0);
    }

    #[test]
    fn empty_subset_gives_empty_prediction() {
        let ds = Dataset::new(DenseMatrix::from_rows(&[&[1.0, 0.0]]).unwrap(), vec![0.0]).unwrap();
        let p = single(&[1.0, 0.0], 1.0);
        assert!(forward_all(&p, &ds, Some(&[])).unwrap().values.is_empty());
    }
}
