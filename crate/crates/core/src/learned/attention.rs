use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::{Error, Execution, Result};

/// Multi-head self-attention over patches. Each projection is stored as a
/// `C × C` matrix whose column block `h·d .. (h+1)·d` is head `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

impl AttentionParams {
    /// Query and key maps uniform in `±1/√C`; value and output maps start as
    /// the identity so a fresh block passes features through a softmax mix.
    pub fn init(channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || channels == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::arg(format!("{channels} channels cannot be split into {heads} heads")));
        }
        let bound = 1.0 / (channels as f64).sqrt();
        let mut uniform = || DMatrix::from_fn(channels, channels, |_, _| rng.random_range(-bound..bound));
        let (wq, wk) = (uniform(), uniform());
        Ok(Self { heads, wq, wk, wv: DMatrix::identity(channels, channels), wo: DMatrix::identity(channels, channels) })
    }

    pub fn channels(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.channels();
        Self {
            heads: self.heads,
            wq: DMatrix::zeros(c, c),
            wk: DMatrix::zeros(c, c),
            wv: DMatrix::zeros(c, c),
            wo: DMatrix::zeros(c, c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(Error::arg(format!("{c} channels cannot be split into {} heads", self.heads)));
        }
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            if m.nrows() != c || m.ncols() != c {
                return Err(Error::arg("attention projections must all be C x C"));
            }
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// `[patch][t]` channel vectors.
type Features = Vec<Vec<DVector<f64>>>;

/// Intermediates of one timestamp.
pub(crate) struct StepTape {
    f: DMatrix<f64>,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    /// Per-head attention weights `N × N`.
    weights: Vec<DMatrix<f64>>,
    concat: DMatrix<f64>,
}

fn step_forward(f: DMatrix<f64>, p: &AttentionParams) -> (DMatrix<f64>, StepTape) {
    let d = p.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let (q, k, v) = (&f * &p.wq, &f * &p.wk, &f * &p.wv);
    let n = f.nrows();
    let mut concat = DMatrix::zeros(n, p.channels());
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let cols = h * d;
        let qh = q.columns(cols, d);
        let kh = k.columns(cols, d);
        let a = softmax_rows(&((qh * kh.transpose()) * scale));
        concat.columns_mut(cols, d).copy_from(&(&a * v.columns(cols, d)));
        weights.push(a);
    }
    let g = &concat * &p.wo;
    (g, StepTape { f, q, k, v, weights, concat })
}

fn to_rows(vs: &[&DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(vs.len(), vs[0].len(), |i, j| vs[i][j])
}

/// Per-timestamp attention over patches; `f[i][t]` are `C`-vectors.
pub(crate) fn attention_forward_taped(
    f: &[Vec<DVector<f64>>],
    p: &AttentionParams,
    exec: Execution,
) -> Result<(Features, Vec<StepTape>)> {
    p.validate()?;
    if f.is_empty() {
        return Err(Error::Empty("attention needs at least one patch".into()));
    }
    let t = f[0].len();
    if f.iter().any(|x| x.len() != t) || f.iter().flatten().any(|v| v.len() != p.channels()) {
        return Err(Error::arg("feature shape does not match the attention block"));
    }
    let steps = exec.map_range(t, |ti| {
        let rows: Vec<&DVector<f64>> = f.iter().map(|patch| &patch[ti]).collect();
        step_forward(to_rows(&rows), p)
    });
    let mut out = vec![Vec::with_capacity(t); f.len()];
    let mut tapes = Vec::with_capacity(t);
    for (g, tape) in steps {
        for (i, o) in out.iter_mut().enumerate() {
            o.push(g.row(i).transpose());
        }
        tapes.push(tape);
    }
    Ok((out, tapes))
}

/// `g_t = SoftMax(Q_t K_tᵀ / √d) V_t` per head, heads concatenated and
/// multiplied by the output projection.
pub fn spatial_aggregate(f: &[Vec<DVector<f64>>], p: &AttentionParams) -> Result<Vec<Vec<DVector<f64>>>> {
    Ok(attention_forward_taped(f, p, Execution::default())?.0)
}

pub(crate) fn attention_backward(
    p: &AttentionParams,
    tapes: &[StepTape],
    dg: &[Vec<DVector<f64>>],
    exec: Execution,
) -> (AttentionParams, Vec<Vec<DVector<f64>>>) {
    let d = p.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let parts = exec.map_range(tapes.len(), |ti| {
        let tape = &tapes[ti];
        let rows: Vec<&DVector<f64>> = dg.iter().map(|patch| &patch[ti]).collect();
        let dgm = to_rows(&rows);
        let mut grad = p.zeros_like();
        grad.wo = tape.concat.transpose() * &dgm;
        let dconcat = &dgm * p.wo.transpose();
        let n = tape.f.nrows();
        let mut dq = DMatrix::zeros(n, p.channels());
        let mut dk = DMatrix::zeros(n, p.channels());
        let mut dv = DMatrix::zeros(n, p.channels());
        for h in 0..p.heads {
            let cols = h * d;
            let a = &tape.weights[h];
            let dout = dconcat.columns(cols, d);
            let da = dout * tape.v.columns(cols, d).transpose();
            dv.columns_mut(cols, d).copy_from(&(a.transpose() * dout));
            let mut ds = a.component_mul(&da);
            for (i, mut row) in ds.row_iter_mut().enumerate() {
                let dot: f64 = a.row(i).dot(&da.row(i));
                for (j, v) in row.iter_mut().enumerate() {
                    *v -= a[(i, j)] * dot;
                }
            }
            ds *= scale;
            dq.columns_mut(cols, d).copy_from(&(&ds * tape.k.columns(cols, d)));
            dk.columns_mut(cols, d).copy_from(&(ds.transpose() * tape.q.columns(cols, d)));
        }
        let ft = tape.f.transpose();
        grad.wq = &ft * &dq;
        grad.wk = &ft * &dk;
        grad.wv = &ft * &dv;
        let df = &dq * p.wq.transpose() + &dk * p.wk.transpose() + &dv * p.wv.transpose();
        (grad, df)
    });
    let mut total = p.zeros_like();
    let mut df = vec![Vec::with_capacity(tapes.len()); dg.len()];
    for (grad, dfm) in parts {
        total.wq += grad.wq;
        total.wk += grad.wk;
        total.wv += grad.wv;
        total.wo += grad.wo;
        for (i, out) in df.iter_mut().enumerate() {
            out.push(dfm.row(i).transpose());
        }
    }
    (total, df)
}
