//! Finite-sum problem instances evaluated by the simulator.
//!
//! A problem is a family of client objectives f_1 .. f_n over R^d together
//! with the constants the convergence checks consume: per-client smoothness
//! L_i, aggregate smoothness L, and a certified lower bound f_inf for the
//! mean objective f = (1/n) sum_i f_i. Instances are plain data (matrices
//! row-major) so they serialize to JSON and reload bit-for-bit.
//!
//! Everything is desk scale: construction rejects n or d above 10_000.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vector::Vector;

pub const DESK_SCALE_LIMIT: usize = 10_000;

// ---------------------------------------------------------------------------
// dense matrices

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, entries: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::InvalidProblem(format!(
                "matrix entries length {} does not match {rows}x{cols}",
                entries.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    /// `M x`, length `rows`.
    pub fn matvec(&self, x: &Vector) -> Vector {
        assert_eq!(x.dim(), self.cols, "matvec: dimension mismatch");
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(self.row(r).iter().zip(x.iter()).map(|(a, b)| a * b).sum());
        }
        Vector::from_vec(out)
    }

    /// `M^T w`, length `cols`.
    pub fn tr_matvec(&self, w: &Vector) -> Vector {
        assert_eq!(w.dim(), self.rows, "tr_matvec: dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let wr = w[r];
            for (c, v) in self.row(r).iter().enumerate() {
                out[c] += wr * v;
            }
        }
        Vector::from_vec(out)
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.entries.iter_mut().zip(other.entries.iter()) {
            *a += c * b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for a in self.entries.iter_mut() {
            *a *= c;
        }
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v * v).sum())
            .fold(0.0, f64::max)
    }

    fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }
}

/// `G^T G / rows + ridge * I`, computed symmetrically entry by entry so the
/// result is bitwise symmetric positive semidefinite (definite for ridge > 0).
fn gram_matrix(g: &DenseMatrix, ridge: f64) -> DenseMatrix {
    let d = g.cols;
    let mut entries = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            let mut acc = 0.0;
            for l in 0..g.rows {
                acc += g.get(l, j) * g.get(l, k);
            }
            entries[j * d + k] = acc / g.rows as f64 + if j == k { ridge } else { 0.0 };
        }
    }
    DenseMatrix { rows: d, cols: d, entries }
}

/// Largest eigenvalue of a symmetric matrix.
fn lambda_max(m: &DenseMatrix) -> f64 {
    let eig = m.to_nalgebra().symmetric_eigen();
    eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Solve `M x = rhs` for symmetric positive definite `M`.
fn solve_spd(m: &DenseMatrix, rhs: &Vector) -> Result<Vector> {
    let na = m.to_nalgebra();
    let b = nalgebra::DVector::from_row_slice(rhs.as_slice());
    let solution = nalgebra::Cholesky::new(na.clone())
        .map(|ch| ch.solve(&b))
        .or_else(|| na.lu().solve(&b))
        .ok_or_else(|| Error::InvalidProblem("aggregate curvature is singular".into()))?;
    Ok(Vector::from_vec(solution.iter().copied().collect()))
}

// ---------------------------------------------------------------------------
// problem instances

/// How an instance was generated; stored in the JSON file so a reloaded
/// instance carries its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum Provenance {
    Counterexample,
    RandomQuadratic { n: usize, d: usize, heterogeneity: f64, seed: u64 },
    RandomLogistic { n: usize, d: usize, samples_per_client: usize, seed: u64 },
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ProblemData {
    /// f_i(x) = 1/2 (x - b_i)^T A_i (x - b_i) with A_i symmetric PSD.
    /// `a_mean` and `c_mean` cache (1/n) sum A_i and (1/n) sum A_i b_i so the
    /// aggregate gradient has a route independent of the per-client one.
    Quadratic { a: Vec<DenseMatrix>, b: Vec<Vector>, a_mean: DenseMatrix, c_mean: Vector },
    /// f_i(x) = (1/m_i) sum_j log(1 + exp(-y_j <a_j, x>)) + (lambda/2)||x||^2
    /// with labels y_j in {-1, +1}. A client may hold zero rows.
    Logistic { features: Vec<DenseMatrix>, labels: Vec<Vec<f64>>, lambda: f64 },
}

/// A finite-sum instance with its certified constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    n: usize,
    d: usize,
    data: ProblemData,
    x0: Vector,
    l_i: Vec<f64>,
    l: f64,
    l_max: f64,
    f_inf: f64,
    minimizer: Option<Vector>,
    provenance: Provenance,
}

fn desk_scale_guard(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidProblem("need n >= 1 and d >= 1".into()));
    }
    if n > DESK_SCALE_LIMIT || d > DESK_SCALE_LIMIT {
        return Err(Error::DeskScale(format!(
            "n = {n}, d = {d} exceeds the supported limit of {DESK_SCALE_LIMIT}"
        )));
    }
    Ok(())
}

fn stable_softplus(t: f64) -> f64 {
    // log(1 + e^t) without overflow on either tail.
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn stable_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Problem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    /// Per-client smoothness constant (largest Hessian eigenvalue for
    /// quadratics, a certified upper bound for logistic clients).
    pub fn l_client(&self, i: usize) -> f64 {
        self.l_i[i]
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    /// Smoothness constant of the mean objective.
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Certified lower bound on f; exact minimum for quadratics.
    pub fn f_inf(&self) -> f64 {
        self.f_inf
    }

    /// Exact minimizer when one is known in closed form.
    pub fn minimizer(&self) -> Option<&Vector> {
        self.minimizer.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn client_loss(&self, i: usize, x: &Vector) -> f64 {
        assert!(i < self.n, "client index {i} out of range");
        match &self.data {
            ProblemData::Quadratic { a, b, .. } => {
                let diff = x.sub(&b[i]);
                0.5 * diff.dot(&a[i].matvec(&diff))
            }
            ProblemData::Logistic { features, labels, lambda } => {
                let ridge = 0.5 * lambda * x.norm_sq();
                let m = features[i].rows();
                if m == 0 {
                    return ridge;
                }
                let z = features[i].matvec(x);
                let data_term: f64 = (0..m)
                    .map(|j| stable_softplus(-labels[i][j] * z[j]))
                    .sum();
                data_term / m as f64 + ridge
            }
        }
    }

    pub fn client_grad(&self, i: usize, x: &Vector) -> Vector {
        assert!(i < self.n, "client index {i} out of range");
        match &self.data {
            ProblemData::Quadratic { a, b, .. } => a[i].matvec(&x.sub(&b[i])),
            ProblemData::Logistic { features, labels, lambda } => {
                let mut grad = x.scale(*lambda);
                let m = features[i].rows();
                if m > 0 {
                    let z = features[i].matvec(x);
                    let weights = Vector::from_vec(
                        (0..m)
                            .map(|j| {
                                let y = labels[i][j];
                                -y * stable_sigmoid(-y * z[j]) / m as f64
                            })
                            .collect(),
                    );
                    grad.axpy(1.0, &features[i].tr_matvec(&weights));
                }
                grad
            }
        }
    }

    /// Mean objective f(x), accumulated over clients in ascending order.
    pub fn loss(&self, x: &Vector) -> f64 {
        (0..self.n).map(|i| self.client_loss(i, x)).sum::<f64>() / self.n as f64
    }

    /// Mean gradient via a route independent of `client_grad`: cached
    /// aggregate matrices for quadratics, a flat pass with the regularizer
    /// applied once for logistic instances.
    pub fn grad(&self, x: &Vector) -> Vector {
        match &self.data {
            ProblemData::Quadratic { a_mean, c_mean, .. } => a_mean.matvec(x).sub(c_mean),
            ProblemData::Logistic { lambda, .. } => {
                let mut acc = Vector::zeros(self.d);
                for i in 0..self.n {
                    acc.axpy(1.0, &self.client_data_grad(i, x));
                }
                let mut grad = acc.scale(1.0 / self.n as f64);
                grad.axpy(*lambda, x);
                grad
            }
        }
    }

    fn client_data_grad(&self, i: usize, x: &Vector) -> Vector {
        match &self.data {
            ProblemData::Logistic { features, labels, .. } => {
                let m = features[i].rows();
                if m == 0 {
                    return Vector::zeros(self.d);
                }
                let z = features[i].matvec(x);
                let weights = Vector::from_vec(
                    (0..m)
                        .map(|j| {
                            let y = labels[i][j];
                            -y * stable_sigmoid(-y * z[j]) / m as f64
                        })
                        .collect(),
                );
                features[i].tr_matvec(&weights)
            }
            ProblemData::Quadratic { .. } => unreachable!("data grad is logistic-only"),
        }
    }

    /// Mean gradient as the order-fixed average of client gradients; this is
    /// the quantity a simulated round sees.
    pub fn grad_mean_of_clients(&self, x: &Vector) -> Vector {
        let grads: Vec<Vector> = (0..self.n).map(|i| self.client_grad(i, x)).collect();
        Vector::mean(&grads)
    }

    /// Classification accuracy over all rows; logistic instances only.
    pub fn accuracy(&self, x: &Vector) -> Option<f64> {
        match &self.data {
            ProblemData::Logistic { features, labels, .. } => {
                let mut total = 0usize;
                let mut correct = 0usize;
                for i in 0..self.n {
                    let m = features[i].rows();
                    if m == 0 {
                        continue;
                    }
                    let z = features[i].matvec(x);
                    for j in 0..m {
                        total += 1;
                        let predicted = if z[j] >= 0.0 { 1.0 } else { -1.0 };
                        if predicted == labels[i][j] {
                            correct += 1;
                        }
                    }
                }
                if total == 0 {
                    None
                } else {
                    Some(correct as f64 / total as f64)
                }
            }
            ProblemData::Quadratic { .. } => None,
        }
    }

    /// Replace the starting iterate.
    pub fn with_x0(mut self, x0: Vector) -> Result<Self> {
        if x0.dim() != self.d {
            return Err(Error::InvalidProblem(format!(
                "x0 has dimension {}, problem has d = {}",
                x0.dim(),
                self.d
            )));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidProblem("x0 must be finite".into()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Problem> {
        let file = std::fs::File::open(path)?;
        let problem: Problem = serde_json::from_reader(std::io::BufReader::new(file))?;
        problem.validate()?;
        Ok(problem)
    }

    /// Structural consistency of a deserialized instance.
    pub fn validate(&self) -> Result<()> {
        desk_scale_guard(self.n, self.d)?;
        let fail = |msg: &str| Err(Error::InvalidProblem(msg.into()));
        if self.x0.dim() != self.d || !self.x0.is_finite() {
            return fail("x0 has wrong dimension or non-finite entries");
        }
        if self.l_i.len() != self.n || self.l_i.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("per-client smoothness constants are inconsistent");
        }
        if !self.l.is_finite() || !self.l_max.is_finite() || !self.f_inf.is_finite() {
            return fail("aggregate constants must be finite");
        }
        match &self.data {
            ProblemData::Quadratic { a, b, a_mean, c_mean } => {
                if a.len() != self.n || b.len() != self.n {
                    return fail("quadratic client count mismatch");
                }
                for (ai, bi) in a.iter().zip(b.iter()) {
                    if ai.rows() != self.d || ai.cols() != self.d || bi.dim() != self.d {
                        return fail("quadratic client dimensions mismatch");
                    }
                }
                if a_mean.rows() != self.d || c_mean.dim() != self.d {
                    return fail("quadratic aggregate cache dimensions mismatch");
                }
            }
            ProblemData::Logistic { features, labels, lambda } => {
                if features.len() != self.n || labels.len() != self.n {
                    return fail("logistic client count mismatch");
                }
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return fail("logistic regularizer must be finite and nonnegative");
                }
                for (f, y) in features.iter().zip(labels.iter()) {
                    if f.cols() != self.d || f.rows() != y.len() {
                        return fail("logistic client dimensions mismatch");
                    }
                    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
                        return fail("logistic labels must be +1 or -1");
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// constructors

fn finalize_quadratic(
    a: Vec<DenseMatrix>,
    b: Vec<Vector>,
    x0: Vector,
    provenance: Provenance,
) -> Result<Problem> {
    let n = a.len();
    let d = x0.dim();
    let l_i: Vec<f64> = a.iter().map(lambda_max).collect();
    let mut a_mean = DenseMatrix::zeros(d, d);
    let mut c_mean = Vector::zeros(d);
    for (ai, bi) in a.iter().zip(b.iter()) {
        a_mean.add_scaled(1.0, ai);
        c_mean.axpy(1.0, &ai.matvec(bi));
    }
    a_mean.scale_in_place(1.0 / n as f64);
    c_mean = c_mean.scale(1.0 / n as f64);
    let l = lambda_max(&a_mean);
    let l_max = l_i.iter().fold(0.0, |m: f64, &v| m.max(v));
    // The aggregate minimum solves (sum A_i) x = sum A_i b_i.
    let minimizer = solve_spd(&a_mean, &c_mean)?;
    let data = ProblemData::Quadratic { a, b, a_mean, c_mean };
    let mut problem = Problem {
        n,
        d,
        data,
        x0,
        l_i,
        l,
        l_max,
        f_inf: 0.0,
        minimizer: Some(minimizer.clone()),
        provenance,
    };
    problem.f_inf = problem.loss(&minimizer);
    Ok(problem)
}

/// Two opposing one-dimensional parabolas, minimized at 3 and -3, starting
/// at x0 = 2. The mean objective is x^2/2 + 9/2 with minimizer 0, yet the
/// client gradients at x0 are -1 and 5: their plain normalizations cancel
/// exactly, which is the stall this instance exists to exhibit.
pub fn make_counterexample() -> Problem {
    let a = vec![
        DenseMatrix::from_row_major(1, 1, vec![1.0]).unwrap(),
        DenseMatrix::from_row_major(1, 1, vec![1.0]).unwrap(),
    ];
    let b = vec![Vector::from_vec(vec![3.0]), Vector::from_vec(vec![-3.0])];
    finalize_quadratic(a, b, Vector::from_vec(vec![2.0]), Provenance::Counterexample)
        .expect("counterexample construction is total")
}

/// Quadratic instance from explicit curvatures and centers: client i owns
/// 0.5 (x - b_i)' A_i (x - b_i). Each A_i must be symmetric positive
/// semidefinite with a nonsingular mean; constants and the minimizer are
/// derived the same way as for generated instances.
pub fn make_custom_quadratic(a: Vec<DenseMatrix>, b: Vec<Vector>, x0: Vector) -> Result<Problem> {
    let bad = |msg: String| Err(Error::InvalidProblem(msg));
    if a.is_empty() || a.len() != b.len() {
        return bad("need one curvature and one center per client".into());
    }
    let d = x0.dim();
    desk_scale_guard(a.len(), d)?;
    if !x0.is_finite() {
        return bad("starting iterate must be finite".into());
    }
    for (i, (ai, bi)) in a.iter().zip(b.iter()).enumerate() {
        if ai.rows() != d || ai.cols() != d || bi.dim() != d {
            return bad(format!("client {i} dimensions do not match the iterate"));
        }
        if !bi.is_finite() || ai.entries.iter().any(|v| !v.is_finite()) {
            return bad(format!("client {i} has non-finite entries"));
        }
        for r in 0..d {
            for c in 0..r {
                let (x, y) = (ai.get(r, c), ai.get(c, r));
                if (x - y).abs() > 1e-12 * (1.0 + x.abs() + y.abs()) {
                    return bad(format!("client {i} curvature is not symmetric"));
                }
            }
        }
    }
    finalize_quadratic(a, b, x0, Provenance::External)
}

/// Random symmetric positive definite quadratics.
///
/// All clients share a base curvature; `heterogeneity` scales both a
/// per-client curvature perturbation and the spread of the client offsets
/// b_i. At heterogeneity 0 every client is identical. Constants are computed
/// from the spectra: L_i exactly, L from the averaged curvature, f_inf by
/// solving the aggregate normal equations.
pub fn make_random_quadratic(n: usize, d: usize, heterogeneity: f64, seed: u64) -> Result<Problem> {
    desk_scale_guard(n, d)?;
    if !(heterogeneity.is_finite() && heterogeneity >= 0.0) {
        return Err(Error::InvalidProblem(format!(
            "heterogeneity must be finite and nonnegative, got {heterogeneity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_matrix = |rows: usize, cols: usize| {
        let entries = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        DenseMatrix { rows, cols, entries }
    };
    let base = gram_matrix(&draw_matrix(d, d), 0.5);
    let mut a = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ai = gram_matrix(&draw_matrix(d, d), 0.0);
        ai.scale_in_place(heterogeneity);
        ai.add_scaled(1.0, &base);
        a.push(ai);
    }
    let mut draw_vector = |dim: usize, scale: f64| {
        Vector::from_vec(
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect(),
        )
    };
    let b: Vec<Vector> = (0..n).map(|_| draw_vector(d, heterogeneity)).collect();
    let x0 = draw_vector(d, 1.0);
    finalize_quadratic(
        a,
        b,
        x0,
        Provenance::RandomQuadratic { n, d, heterogeneity, seed },
    )
}

/// Regularized logistic regression on synthetic linearly-separable-ish data.
///
/// Labels come from a hidden direction plus noise, so the data term is
/// nonzero at the optimum. L_i uses the standard bound
/// (1/4) max_j ||a_j||^2 + lambda, valid though loose; f_inf = 0 is certified
/// because both the data term and the ridge are nonnegative. A client may
/// hold zero rows, in which case its objective is the ridge alone.
pub fn make_logistic(n: usize, d: usize, samples_per_client: usize, seed: u64) -> Result<Problem> {
    desk_scale_guard(n, d)?;
    if samples_per_client > DESK_SCALE_LIMIT {
        return Err(Error::DeskScale(format!(
            "samples_per_client = {samples_per_client} exceeds {DESK_SCALE_LIMIT}"
        )));
    }
    let lambda = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let m = samples_per_client;
        let mut entries = Vec::with_capacity(m * d);
        let mut y = Vec::with_capacity(m);
        for _ in 0..m {
            let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let margin: f64 =
                row.iter().zip(hidden.iter()).map(|(a, w)| a * w).sum::<f64>() + 0.1 * noise;
            y.push(if margin >= 0.0 { 1.0 } else { -1.0 });
            entries.extend_from_slice(&row);
        }
        features.push(DenseMatrix { rows: m, cols: d, entries });
        labels.push(y);
    }
    let l_i: Vec<f64> = features
        .iter()
        .map(|f| 0.25 * f.max_row_norm_sq() + lambda)
        .collect();
    let l = l_i.iter().sum::<f64>() / n as f64;
    let l_max = l_i.iter().fold(0.0, |m: f64, &v| m.max(v));
    Ok(Problem {
        n,
        d,
        data: ProblemData::Logistic { features, labels, lambda },
        x0: Vector::zeros(d),
        l_i,
        l,
        l_max,
        f_inf: 0.0,
        minimizer: None,
        provenance: Provenance::RandomLogistic { n, d, samples_per_client, seed },
    })
}

/// Regularizer strength used by `make_logistic`; exposed for tests.
pub fn logistic_ridge(problem: &Problem) -> Option<f64> {
    match &problem.data {
        ProblemData::Logistic { lambda, .. } => Some(*lambda),
        ProblemData::Quadratic { .. } => None,
    }
}
