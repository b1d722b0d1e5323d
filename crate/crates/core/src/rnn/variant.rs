use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::RnnError;

/// Largest state or gate count of any variant.
pub const MAX_SLOTS: usize = 4;

/// `(dP/dg, dP/ds)` for one element: `dg[l][j] = dP_l/dg_j`, `ds[l][i] = dP_l/ds_i`.
pub type Jacobians<F> = ([[F; MAX_SLOTS]; MAX_SLOTS], [[F; MAX_SLOTS]; MAX_SLOTS]);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellVariant {
    Elman,
    Lstm,
    Gru,
    Slstm,
}

impl CellVariant {
    pub const ALL: [CellVariant; 4] = [
        CellVariant::Elman,
        CellVariant::Lstm,
        CellVariant::Gru,
        CellVariant::Slstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellVariant::Elman => "elman",
            CellVariant::Lstm => "lstm",
            CellVariant::Gru => "gru",
            CellVariant::Slstm => "slstm",
        }
    }

    pub fn num_states(self) -> usize {
        match self {
            CellVariant::Elman | CellVariant::Gru => 1,
            CellVariant::Lstm => 2,
            CellVariant::Slstm => 4,
        }
    }

    pub fn num_gates(self) -> usize {
        match self {
            CellVariant::Elman => 1,
            _ => 4,
        }
    }

    /// GRU gate `n` ignores the hidden state.
    pub fn gate_uses_recurrent(self, gate: usize) -> bool {
        !(self == CellVariant::Gru && gate == 2)
    }

    /// GRU gate `g` ignores the input.
    pub fn gate_uses_input(self, gate: usize) -> bool {
        !(self == CellVariant::Gru && gate == 3)
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            CellVariant::Elman | CellVariant::Gru => &["h"],
            CellVariant::Lstm => &["h", "c"],
            CellVariant::Slstm => &["h", "c", "n", "m"],
        }
    }

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellVariant::Elman => &["g"],
            CellVariant::Lstm | CellVariant::Slstm => &["z", "f", "i", "o"],
            CellVariant::Gru => &["z", "r", "n", "g"],
        }
    }

    /// New states from previous states and gate pre-activations. Slots beyond
    /// the variant's counts are ignored and returned as zero.
    pub fn pointwise<F: Float>(self, s: &[F; MAX_SLOTS], g: &[F; MAX_SLOTS]) -> [F; MAX_SLOTS] {
        let zero = F::zero();
        match self {
            CellVariant::Elman => [g[0].tanh(), zero, zero, zero],
            CellVariant::Lstm => {
                let c = sigmoid(g[1]) * s[1] + sigmoid(g[2]) * g[0].tanh();
                [sigmoid(g[3]) * c.tanh(), c, zero, zero]
            }
            CellVariant::Gru => {
                let sz = sigmoid(g[0]);
                let u = (g[2] + sigmoid(g[1]) * g[3].tanh()).tanh();
                [sz * s[0] + (F::one() - sz) * u, zero, zero, zero]
            }
            CellVariant::Slstm => {
                let st = SlstmStep::new(s, g);
                let c = st.ef * s[1] + st.ei * g[0].tanh();
                let n = st.ef * s[2] + st.ei;
                [sigmoid(g[3]) * c / n, c, n, st.m]
            }
        }
    }

    pub fn jacobians<F: Float>(self, s: &[F; MAX_SLOTS], g: &[F; MAX_SLOTS]) -> Jacobians<F> {
        let zero = F::zero();
        let one = F::one();
        let mut dg = [[zero; MAX_SLOTS]; MAX_SLOTS];
        let mut ds = [[zero; MAX_SLOTS]; MAX_SLOTS];
        match self {
            CellVariant::Elman => {
                let h = g[0].tanh();
                dg[0][0] = one - h * h;
            }
            CellVariant::Lstm => {
                let (tz, sf, si, so) = (g[0].tanh(), sigmoid(g[1]), sigmoid(g[2]), sigmoid(g[3]));
                let c = sf * s[1] + si * tz;
                let tc = c.tanh();
                let dc = [
                    si * (one - tz * tz),
                    sf * (one - sf) * s[1],
                    si * (one - si) * tz,
                    zero,
                ];
                let dh_dc = so * (one - tc * tc);
                for j in 0..3 {
                    dg[1][j] = dc[j];
                    dg[0][j] = dh_dc * dc[j];
                }
                dg[0][3] = so * (one - so) * tc;
                ds[1][1] = sf;
                ds[0][1] = dh_dc * sf;
            }
            CellVariant::Gru => {
                let (sz, sr, tg) = (sigmoid(g[0]), sigmoid(g[1]), g[3].tanh());
                let u = (g[2] + sr * tg).tanh();
                let du = (one - sz) * (one - u * u);
                dg[0][0] = sz * (one - sz) * (s[0] - u);
                dg[0][1] = du * sr * (one - sr) * tg;
                dg[0][2] = du;
                dg[0][3] = du * sr * (one - tg * tg);
                ds[0][0] = sz;
            }
            CellVariant::Slstm => {
                let st = SlstmStep::new(s, g);
                let tz = g[0].tanh();
                let so = sigmoid(g[3]);
                let c = st.ef * s[1] + st.ei * tz;
                let n = st.ef * s[2] + st.ei;
                // Derivatives w.r.t. (f, i, m_prev).
                let da = [one - sigmoid(g[1]), zero, one];
                let di = [zero, one, zero];
                let dm = if st.forget_branch { da } else { di };
                let mut dc = [zero; 3];
                let mut dn = [zero; 3];
                for k in 0..3 {
                    let def = st.ef * (da[k] - dm[k]);
                    let dei = st.ei * (di[k] - dm[k]);
                    dc[k] = s[1] * def + tz * dei;
                    dn[k] = s[2] * def + dei;
                }
                let dh = |dcx: F, dnx: F| so * (dcx * n - c * dnx) / (n * n);
                let dcz = st.ei * (one - tz * tz);
                dg[1][0] = dcz;
                dg[0][0] = dh(dcz, zero);
                for (k, slot) in [(0, 1), (1, 2)] {
                    dg[1][slot] = dc[k];
                    dg[2][slot] = dn[k];
                    dg[3][slot] = dm[k];
                    dg[0][slot] = dh(dc[k], dn[k]);
                }
                dg[0][3] = so * (one - so) * c / n;
                ds[1][1] = st.ef;
                ds[2][2] = st.ef;
                ds[1][3] = dc[2];
                ds[2][3] = dn[2];
                ds[3][3] = dm[2];
                ds[0][1] = dh(st.ef, zero);
                ds[0][2] = dh(zero, st.ef);
                ds[0][3] = dh(dc[2], dn[2]);
            }
        }
        (dg, ds)
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellVariant {
    type Err = RnnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| RnnError::UnknownVariant(s.to_string()))
    }
}

pub fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// `log(sigmoid(x))` as `-softplus(-x)`.
pub fn log_sigmoid<F: Float>(x: F) -> F {
    let y = -x;
    -(y.max(F::zero()) + (-y.abs()).exp().ln_1p())
}

/// Exponent arguments of one sLSTM step: `(log σ(f) + m_prev - m, i - m)`.
pub fn slstm_exponents<F: Float>(f: F, i: F, m_prev: F) -> (F, F) {
    let a = log_sigmoid(f) + m_prev;
    let m = a.max(i);
    (a - m, i - m)
}

struct SlstmStep<F> {
    m: F,
    ef: F,
    ei: F,
    forget_branch: bool,
}

impl<F: Float> SlstmStep<F> {
    fn new(s: &[F; MAX_SLOTS], g: &[F; MAX_SLOTS]) -> Self {
        let a = log_sigmoid(g[1]) + s[3];
        let forget_branch = a >= g[2];
        let m = if forget_branch { a } else { g[2] };
        SlstmStep {
            m,
            ef: (a - m).exp(),
            ei: (g[2] - m).exp(),
            forget_branch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn numeric(v: CellVariant, s: &[f64; 4], g: &[f64; 4]) -> Jacobians<f64> {
        let h = 1e-6;
        let mut dg = [[0.0; 4]; 4];
        let mut ds = [[0.0; 4]; 4];
        for j in 0..v.num_gates() {
            let (mut gp, mut gm) = (*g, *g);
            gp[j] += h;
            gm[j] -= h;
            let (p, m) = (v.pointwise(s, &gp), v.pointwise(s, &gm));
            for l in 0..v.num_states() {
                dg[l][j] = (p[l] - m[l]) / (2.0 * h);
            }
        }
        for i in 0..v.num_states() {
            let (mut sp, mut sm) = (*s, *s);
            sp[i] += h;
            sm[i] -= h;
            let (p, m) = (v.pointwise(&sp, g), v.pointwise(&sm, g));
            for l in 0..v.num_states() {
                ds[l][i] = (p[l] - m[l]) / (2.0 * h);
            }
        }
        (dg, ds)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in CellVariant::ALL {
            for _ in 0..200 {
                let g: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
                let mut s: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                s[2] = rng.random_range(0.5..2.0);
                let (ag, as_) = v.jacobians(&s, &g);
                let (ng, ns) = numeric(v, &s, &g);
                for l in 0..4 {
                    for k in 0..4 {
                        assert!(
                            (ag[l][k] - ng[l][k]).abs() < 1e-8,
                            "{v} dg[{l}][{k}] {} vs {}",
                            ag[l][k],
                            ng[l][k]
                        );
                        assert!(
                            (as_[l][k] - ns[l][k]).abs() < 1e-8,
                            "{v} ds[{l}][{k}] {} vs {}",
                            as_[l][k],
                            ns[l][k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hand_values() {
        let z = [0.0; 4];
        let (dg, _) = CellVariant::Lstm.jacobians(&z, &z);
        assert_eq!(dg[1][0], 0.5);
        let g = [0.7, 0.0, 0.0, 0.0];
        let (dg, _) = CellVariant::Elman.jacobians(&z, &g);
        assert_eq!(dg[0][0], 1.0 - 0.7f64.tanh().powi(2));
        let s = [0.0, 0.8, 0.0, 0.0];
        let g = [0.1, 0.4, -0.2, 0.3];
        let (dg, _) = CellVariant::Lstm.jacobians(&s, &g);
        assert!((dg[1][1] - sigmoid(0.4) * (1.0 - sigmoid(0.4)) * 0.8).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0f64) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-12);
        assert_eq!(log_sigmoid(800.0f64), 0.0);
        let (a, b) = slstm_exponents(-50.0f64, 50.0, 0.0);
        assert!(a <= 0.0 && b == 0.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("LSTM".parse::<CellVariant>().unwrap(), CellVariant::Lstm);
        assert!("mamba".parse::<CellVariant>().is_err());
        assert!(!CellVariant::Gru.gate_uses_recurrent(2));
        assert!(!CellVariant::Gru.gate_uses_input(3));
    }
}
