//! The two-layer generator `g(u, W) = V φ(W u) / √k`.
//!
//! Only the first layer `W` (k×d) is trained. The input `u` (unit vector in
//! ℝ^d) and the output layer `V` (n×k) are drawn once and then frozen.
//!
//! Parameters are flattened row-major by neuron: entry `W[i, j]` sits at
//! index `i * d + j`. Jacobian columns follow the same layout, so block `i`
//! (columns `i*d .. (i+1)*d`) is `φ'(Wⁱu) V_i uᵀ / √k`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::{DipError, Result};
use crate::linalg;
use crate::rng::seeded_rng;

/// Distribution of the iid entries of the frozen output layer `V`.
///
/// Both choices have zero mean, unit variance (so the columns have identity
/// covariance) and bounded entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VDistribution {
    /// ±1 with equal probability, `D = 1`.
    #[default]
    Rademacher,
    /// Uniform on `[-√3, √3]`, `D = √3`.
    Uniform,
}

impl VDistribution {
    /// Entrywise bound `D`.
    pub fn bound(self) -> f64 {
        match self {
            VDistribution::Rademacher => 1.0,
            VDistribution::Uniform => 3f64.sqrt(),
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            VDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            VDistribution::Uniform => {
                let s = 3f64.sqrt();
                rng.random_range(-s..=s)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DipNetwork {
    /// Fixed input, `‖u‖ = 1` after random initialization.
    pub u: DVector<f64>,
    /// Trainable first layer, k×d.
    pub w: DMatrix<f64>,
    /// Frozen second layer, n×k.
    pub v: DMatrix<f64>,
    pub activation: ActivationSpec,
    /// Entrywise bound on `V`.
    pub d_bound: f64,
    pub v_distribution: VDistribution,
    /// Seed the network was drawn from, if any.
    pub seed: Option<u64>,
}

/// Random initialization.
///
/// Draw order from a single `ChaCha8Rng(seed)` stream: `u` (d normals, then
/// normalized), `W` row by row (k·d normals), `V` column by column (n·k draws).
pub fn init_network(
    k: usize,
    d: usize,
    n: usize,
    activation: ActivationSpec,
    seed: u64,
) -> Result<DipNetwork> {
    init_network_with(k, d, n, activation, VDistribution::Rademacher, seed)
}

pub fn init_network_with(
    k: usize,
    d: usize,
    n: usize,
    activation: ActivationSpec,
    v_distribution: VDistribution,
    seed: u64,
) -> Result<DipNetwork> {
    for (name, val) in [("k", k), ("d", d), ("n", n)] {
        if val == 0 {
            return Err(DipError::ZeroDimension(name));
        }
    }
    let mut rng = seeded_rng(seed);

    let mut u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    // A zero Gaussian vector has probability zero; redraw defensively anyway.
    while u.norm() == 0.0 {
        u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    }
    u.unscale_mut(u.norm());

    let w_rows: Vec<f64> = (0..k * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let w = DMatrix::from_row_slice(k, d, &w_rows);

    let v_cols: Vec<f64> = (0..n * k)
        .map(|_| v_distribution.sample(&mut rng))
        .collect();
    let v = DMatrix::from_column_slice(n, k, &v_cols);

    Ok(DipNetwork {
        u,
        w,
        v,
        activation,
        d_bound: v_distribution.bound(),
        v_distribution,
        seed: Some(seed),
    })
}

impl DipNetwork {
    /// Builds a network from explicit matrices. `D` is taken as `max |V_ij|`.
    pub fn from_parts(
        u: DVector<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        activation: ActivationSpec,
    ) -> Result<Self> {
        let net = DipNetwork {
            d_bound: v.amax(),
            u,
            w,
            v,
            activation,
            v_distribution: VDistribution::Rademacher,
            seed: None,
        };
        net.check_dimensions()?;
        Ok(net)
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w.len()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let (k, d, n) = (self.width(), self.input_dim(), self.output_dim());
        if k == 0 || d == 0 || n == 0 {
            return Err(DipError::ZeroDimension(if k == 0 {
                "k"
            } else if d == 0 {
                "d"
            } else {
                "n"
            }));
        }
        if self.u.len() != d || self.v.ncols() != k {
            return Err(DipError::DimensionMismatch(format!(
                "u has {} entries and V is {}x{}, but W is {k}x{d}",
                self.u.len(),
                self.v.nrows(),
                self.v.ncols()
            )));
        }
        Ok(())
    }

    /// Hidden pre-activations `z = W u`.
    pub fn preactivations(&self) -> DVector<f64> {
        &self.w * &self.u
    }

    pub fn forward(&self) -> DVector<f64> {
        self.forward_from_preactivations(&self.preactivations())
    }

    pub(crate) fn forward_from_preactivations(&self, z: &DVector<f64>) -> DVector<f64> {
        let act = z.map(|x| self.activation.value(x));
        let scale = 1.0 / (self.width() as f64).sqrt();
        &self.v * act * scale
    }

    /// Explicit n×(k·d) Jacobian with respect to the flattened `W`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (k, d, n) = (self.width(), self.input_dim(), self.output_dim());
        let z = self.preactivations();
        let scale = 1.0 / (k as f64).sqrt();
        let mut jac = DMatrix::zeros(n, k * d);
        for i in 0..k {
            let coef = self.activation.derivative(z[i]) * scale;
            if coef == 0.0 {
                continue;
            }
            for j in 0..d {
                let uj = self.u[j] * coef;
                let mut col = jac.column_mut(i * d + j);
                col.axpy(uj, &self.v.column(i), 0.0);
            }
        }
        jac
    }

    /// `H = J Jᵀ = (‖u‖²/k) Σᵢ φ'(Wⁱu)² V_i V_iᵀ`.
    pub fn jacobian_gram(&self) -> DMatrix<f64> {
        self.gram_from_preactivations(&self.preactivations())
    }

    pub(crate) fn gram_from_preactivations(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let weights = z.map(|x| self.activation.derivative(x));
        self.weighted_gram(&weights)
    }

    /// `(‖u‖²/k) Σᵢ cᵢ² V_i V_iᵀ`.
    fn weighted_gram(&self, coeffs: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.v.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= coeffs[i];
        }
        let factor = self.u.norm_squared() / self.width() as f64;
        (&scaled * scaled.transpose()) * factor
    }

    /// `σ_min(J)` through the n×n Gram eigenproblem; `J` is never formed.
    ///
    /// When `k·d < n` the Gram is singular and the result is (numerically) 0.
    pub fn sigma_min_jacobian(&self) -> Result<f64> {
        sigma_min_from_gram(&self.jacobian_gram())
    }

    /// Spectral norm `‖J(W) − J(W̃)‖` for another first layer `W̃`.
    pub fn jacobian_difference_norm(&self, other_w: &DMatrix<f64>) -> Result<f64> {
        if other_w.shape() != self.w.shape() {
            return Err(DipError::DimensionMismatch(format!(
                "W is {:?}, other is {:?}",
                self.w.shape(),
                other_w.shape()
            )));
        }
        let z = self.preactivations();
        let z_other = other_w * &self.u;
        let delta = z.zip_map(&z_other, |a, b| {
            self.activation.derivative(a) - self.activation.derivative(b)
        });
        let (_, hi) = linalg::symmetric_extremes(&self.weighted_gram(&delta))?;
        Ok(hi.max(0.0).sqrt())
    }

    pub fn to_snapshot(&self, include_matrices: bool) -> NetworkSnapshot {
        let matrices = (include_matrices || self.seed.is_none()).then(|| NetworkMatrices {
            u: self.u.iter().copied().collect(),
            w: self.w.transpose().iter().copied().collect(),
            v: self.v.transpose().iter().copied().collect(),
        });
        NetworkSnapshot {
            k: self.width(),
            d: self.input_dim(),
            n: self.output_dim(),
            seed: self.seed,
            activation: self.activation.name,
            v_distribution: self.v_distribution,
            matrices,
        }
    }
}

pub(crate) fn sigma_min_from_gram(h: &DMatrix<f64>) -> Result<f64> {
    let (lo, _) = linalg::symmetric_extremes(h)?;
    Ok(lo.max(0.0).sqrt())
}

/// Serializable description of a network: dimensions, seed and activation,
/// plus the raw matrices (row-major) when the network cannot be regenerated
/// from its seed or when explicitly requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub activation: ActivationKind,
    #[serde(default)]
    pub v_distribution: VDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<NetworkMatrices>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMatrices {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl NetworkSnapshot {
    pub fn restore(&self) -> Result<DipNetwork> {
        let activation = ActivationSpec::new(self.activation);
        match (&self.matrices, self.seed) {
            (Some(mats), seed) => {
                let (k, d, n) = (self.k, self.d, self.n);
                if mats.u.len() != d || mats.w.len() != k * d || mats.v.len() != n * k {
                    return Err(DipError::DimensionMismatch(
                        "snapshot matrices do not match the recorded dimensions".into(),
                    ));
                }
                Ok(DipNetwork {
                    u: DVector::from_vec(mats.u.clone()),
                    w: DMatrix::from_row_slice(k, d, &mats.w),
                    v: DMatrix::from_row_slice(n, k, &mats.v),
                    activation,
                    d_bound: self.v_distribution.bound(),
                    v_distribution: self.v_distribution,
                    seed,
                })
            }
            (None, Some(seed)) => init_network_with(
                self.k,
                self.d,
                self.n,
                activation,
                self.v_distribution,
                seed,
            ),
            (None, None) => Err(DipError::invalid(
                "snapshot",
                "needs either a seed or explicit matrices",
            )),
        }
    }
}
