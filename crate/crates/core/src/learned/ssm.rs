use nalgebra::{DMatrix, DVector};

use crate::{Error, Execution, Result};

/// Taylor terms after scaling; with the scaled norm at most 1/2 the
/// truncation error is below 1e-22.
const TAYLOR_TERMS: usize = 18;

/// Continuous-time state-space parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SSMParams {
    /// `S × S` state transition.
    pub a: DMatrix<f64>,
    /// `S × C` input map.
    pub b: DMatrix<f64>,
    /// `1 × S` readout.
    pub cout: DMatrix<f64>,
    pub delta: f64,
    /// Input-dependent step `Δ_t = softplus(gate_w · g_t + gate_b)` when on.
    pub gate: bool,
    pub gate_w: DVector<f64>,
    pub gate_b: f64,
}

impl SSMParams {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            a: DMatrix::zeros(self.a.nrows(), self.a.ncols()),
            b: DMatrix::zeros(self.b.nrows(), self.b.ncols()),
            cout: DMatrix::zeros(1, self.cout.ncols()),
            delta: 0.0,
            gate: self.gate,
            gate_w: DVector::zeros(self.gate_w.len()),
            gate_b: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.state_dim();
        if self.a.ncols() != s || self.b.nrows() != s || self.cout.nrows() != 1 || self.cout.ncols() != s {
            return Err(Error::arg("inconsistent SSM dimensions"));
        }
        if self.gate_w.len() != self.input_dim() {
            return Err(Error::arg("gate weight length must match the input dimension"));
        }
        if !(self.delta > 0.0) && !self.gate {
            return Err(Error::arg(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite entry in {what}")))
    }
}

/// Intermediates of `exp(M)` kept for the reverse pass.
struct ExpTape {
    squarings: usize,
    x: DMatrix<f64>,
    /// Horner stages `Y_k`, index `k − 1`.
    horner: Vec<DMatrix<f64>>,
    /// Powers before each squaring.
    powers: Vec<DMatrix<f64>>,
    result: DMatrix<f64>,
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Scaling and squaring around a fixed-length Taylor polynomial evaluated in
/// Horner form: `Y_K = I + X/K`, `Y_k = I + (X/k) Y_{k+1}`, `exp(X) ≈ Y_1`.
fn expm_taped(m: &DMatrix<f64>) -> ExpTape {
    let n = m.nrows();
    let norm = one_norm(m);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as usize } else { 0 };
    let x = m / 2f64.powi(squarings as i32);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut horner = vec![DMatrix::zeros(n, n); TAYLOR_TERMS];
    horner[TAYLOR_TERMS - 1] = &eye + &x / TAYLOR_TERMS as f64;
    for k in (1..TAYLOR_TERMS).rev() {
        horner[k - 1] = &eye + (&x * &horner[k]) / k as f64;
    }
    let mut powers = Vec::with_capacity(squarings);
    let mut p = horner[0].clone();
    for _ in 0..squarings {
        let next = &p * &p;
        powers.push(p);
        p = next;
    }
    ExpTape { squarings, x, horner, powers, result: p }
}

/// Reverse pass of [`expm_taped`]: maps `∂L/∂exp(M)` to `∂L/∂M`.
fn expm_adjoint(tape: &ExpTape, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = upstream.clone();
    for p in tape.powers.iter().rev() {
        d = &d * p.transpose() + p.transpose() * &d;
    }
    // d is now ∂L/∂Y_1
    let mut dx = DMatrix::zeros(d.nrows(), d.ncols());
    let mut dy = d;
    for k in 1..TAYLOR_TERMS {
        let kf = k as f64;
        dx += &dy * tape.horner[k].transpose() / kf;
        dy = tape.x.transpose() * &dy / kf;
    }
    dx += &dy / TAYLOR_TERMS as f64;
    dx / 2f64.powi(tape.squarings as i32)
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    expm_taped(m).result
}

fn augmented(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let (s, c) = (a.nrows(), b.ncols());
    let mut m = DMatrix::zeros(s + c, s + c);
    m.view_mut((0, 0), (s, s)).copy_from(&(a * delta));
    m.view_mut((0, s), (s, c)).copy_from(&(b * delta));
    m
}

/// Zero-order-hold discretisation `Ā = exp(ΔA)`,
/// `B̄ = Σ_k (ΔA)^k / (k+1)! · ΔB`, read off the exponential of the
/// augmented matrix `[[ΔA, ΔB], [0, 0]]`. No inverse of `A` is needed.
pub fn ssm_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_finite(a, "A")?;
    check_finite(b, "B")?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Numeric(format!("delta must be finite and positive, got {delta}")));
    }
    if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
        return Err(Error::arg("A must be square with as many rows as B"));
    }
    let (s, c) = (a.nrows(), b.ncols());
    let e = expm(&augmented(a, b, delta));
    Ok((e.view((0, 0), (s, s)).into_owned(), e.view((0, s), (s, c)).into_owned()))
}

struct Discretized {
    tape: ExpTape,
    abar: DMatrix<f64>,
    bbar: DMatrix<f64>,
}

fn discretize_taped(a: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> Discretized {
    let (s, c) = (a.nrows(), b.ncols());
    let tape = expm_taped(&augmented(a, b, delta));
    let abar = tape.result.view((0, 0), (s, s)).into_owned();
    let bbar = tape.result.view((0, s), (s, c)).into_owned();
    Discretized { tape, abar, bbar }
}

/// Gradients of `(A, B, Δ)` from gradients of `(Ā, B̄)`.
fn discretize_adjoint(
    d: &Discretized,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    delta: f64,
    dabar: &DMatrix<f64>,
    dbbar: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let (s, c) = (a.nrows(), b.ncols());
    let mut up = DMatrix::zeros(s + c, s + c);
    up.view_mut((0, 0), (s, s)).copy_from(dabar);
    up.view_mut((0, s), (s, c)).copy_from(dbbar);
    let dm = expm_adjoint(&d.tape, &up);
    let dm11 = dm.view((0, 0), (s, s)).into_owned();
    let dm12 = dm.view((0, s), (s, c)).into_owned();
    let ddelta = dm11.dot(a) + dm12.dot(b);
    (dm11 * delta, dm12 * delta, ddelta)
}

/// Runs `h_t = Ā h_{t−1} + B̄ g_t`, `o_t = Cout h_t` from `h_0 = 0`.
/// Returns the states `h_1..h_T` and outputs.
pub fn ssm_scan(
    abar: &DMatrix<f64>,
    bbar: &DMatrix<f64>,
    cout: &DMatrix<f64>,
    inputs: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut h = DVector::zeros(abar.nrows());
    let mut states = Vec::with_capacity(inputs.len());
    let mut out = Vec::with_capacity(inputs.len());
    for g in inputs {
        h = abar * &h + bbar * g;
        out.push((cout * &h)[0]);
        states.push(h.clone());
    }
    (states, out)
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-patch outputs `o` (`N × T`) and their mean over patches.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmOutput {
    pub per_patch: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

/// Forward state needed by [`ssm_backward`].
pub(crate) struct SsmTape {
    shared: Option<Discretized>,
    patches: Vec<PatchTape>,
}

struct PatchTape {
    states: Vec<DVector<f64>>,
    /// Per-step discretisations and gate pre-activations when gated.
    steps: Vec<(Discretized, f64, f64)>,
}

fn check_inputs(g: &[Vec<DVector<f64>>], params: &SSMParams) -> Result<()> {
    params.validate()?;
    if g.is_empty() {
        return Err(Error::Empty("no patches to run".into()));
    }
    let t = g[0].len();
    for p in g {
        if p.len() != t {
            return Err(Error::arg("all patches need the same number of bins"));
        }
        if let Some(v) = p.iter().find(|v| v.len() != params.input_dim()) {
            return Err(Error::arg(format!("feature width {} does not match SSM input {}", v.len(), params.input_dim())));
        }
    }
    Ok(())
}

pub(crate) fn ssm_forward_taped(g: &[Vec<DVector<f64>>], params: &SSMParams, exec: Execution) -> Result<(SsmOutput, SsmTape)> {
    check_inputs(g, params)?;
    let shared = if params.gate { None } else { Some(discretize_taped(&params.a, &params.b, params.delta)) };
    let runs = exec.map(g, |inputs| match &shared {
        Some(d) => {
            let (states, out) = ssm_scan(&d.abar, &d.bbar, &params.cout, inputs);
            (PatchTape { states, steps: Vec::new() }, out)
        }
        None => {
            let mut h = DVector::zeros(params.state_dim());
            let mut states = Vec::with_capacity(inputs.len());
            let mut steps = Vec::with_capacity(inputs.len());
            let mut out = Vec::with_capacity(inputs.len());
            for x in inputs {
                let z = params.gate_w.dot(x) + params.gate_b;
                let delta = softplus(z).max(1e-12);
                let d = discretize_taped(&params.a, &params.b, delta);
                h = &d.abar * &h + &d.bbar * x;
                out.push((&params.cout * &h)[0]);
                states.push(h.clone());
                steps.push((d, z, delta));
            }
            (PatchTape { states, steps }, out)
        }
    });
    let t = g[0].len();
    let n = g.len() as f64;
    let mut pooled = vec![0.0; t];
    let mut patches = Vec::with_capacity(runs.len());
    let mut per_patch = Vec::with_capacity(runs.len());
    for (tape, out) in runs {
        pooled.iter_mut().zip(&out).for_each(|(p, o)| *p += o / n);
        per_patch.push(out);
        patches.push(tape);
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("SSM output is not finite".into()));
    }
    Ok((SsmOutput { per_patch, pooled }, SsmTape { shared, patches }))
}

/// Runs the SSM over every patch (`g[i][t]` is a `C`-vector).
pub fn ssm_forward(g: &[Vec<DVector<f64>>], params: &SSMParams) -> Result<SsmOutput> {
    Ok(ssm_forward_taped(g, params, Execution::default())?.0)
}

/// Gradients of the parameters and inputs given `∂L/∂pooled`.
pub(crate) fn ssm_backward(
    g: &[Vec<DVector<f64>>],
    params: &SSMParams,
    tape: &SsmTape,
    dpooled: &[f64],
    exec: Execution,
) -> (SSMParams, Vec<Vec<DVector<f64>>>) {
    let n = g.len() as f64;
    let (s, c) = (params.state_dim(), params.input_dim());
    let items: Vec<usize> = (0..g.len()).collect();
    let parts = exec.map(&items, |&i| {
        let inputs = &g[i];
        let pt = &tape.patches[i];
        let mut grad = params.zeros_like();
        let mut dabar = DMatrix::zeros(s, s);
        let mut dbbar = DMatrix::zeros(s, c);
        let mut dinputs = vec![DVector::zeros(c); inputs.len()];
        let mut dh_next = DVector::zeros(s);
        let zero = DVector::zeros(s);
        for t in (0..inputs.len()).rev() {
            let (abar, bbar) = match &tape.shared {
                Some(d) => (&d.abar, &d.bbar),
                None => (&pt.steps[t].0.abar, &pt.steps[t].0.bbar),
            };
            let dout = dpooled[t] / n;
            grad.cout += pt.states[t].transpose() * dout;
            let dh = params.cout.transpose() * dout + dh_next;
            let prev = if t > 0 { &pt.states[t - 1] } else { &zero };
            let da_t = &dh * prev.transpose();
            let db_t = &dh * inputs[t].transpose();
            dinputs[t] = bbar.transpose() * &dh;
            if tape.shared.is_some() {
                dabar += da_t;
                dbbar += db_t;
            } else {
                let (d, z, delta) = &pt.steps[t];
                let (ga, gb, gd) = discretize_adjoint(d, &params.a, &params.b, *delta, &da_t, &db_t);
                grad.a += ga;
                grad.b += gb;
                let dz = if *delta > 1e-12 { gd * sigmoid(*z) } else { 0.0 };
                grad.gate_w += &inputs[t] * dz;
                grad.gate_b += dz;
                dinputs[t] += &params.gate_w * dz;
            }
            dh_next = abar.transpose() * dh;
        }
        (grad, dabar, dbbar, dinputs)
    });
    let mut total = params.zeros_like();
    let mut dabar = DMatrix::zeros(s, s);
    let mut dbbar = DMatrix::zeros(s, c);
    let mut dg = Vec::with_capacity(parts.len());
    for (grad, da, db, di) in parts {
        total.a += grad.a;
        total.b += grad.b;
        total.cout += grad.cout;
        total.gate_w += grad.gate_w;
        total.gate_b += grad.gate_b;
        dabar += da;
        dbbar += db;
        dg.push(di);
    }
    if let Some(d) = &tape.shared {
        let (ga, gb, gd) = discretize_adjoint(d, &params.a, &params.b, params.delta, &dabar, &dbbar);
        total.a += ga;
        total.b += gb;
        total.delta = gd;
    }
    (total, dg)
}
