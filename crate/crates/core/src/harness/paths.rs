//! Evaluation of every simulated and derived process on one realization.
//!
//! Counting, impulse and power-jump quantities are exact at any time (they
//! come from jump records and closed-form compensators); only the Levy
//! component itself is grid-bound.

use crate::harness::scenario::{PathRealization, Scenario};

/// Identifier of a column in the path store and the test suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    /// Background chain state (reported 1-based).
    ChainState,
    /// The Levy component.
    LevyComponent,
    /// The full process (Levy plus impulse sums).
    Full,
    /// Running sum of applied Levy jumps.
    JumpSum,
    /// Order-k power sum of Levy jumps (order 1 is the component itself).
    PowerSum(usize),
    /// Compensated order-k power process.
    PowerMart(usize),
    /// Count of chain jumps into a state.
    Count(usize),
    /// Its compensator.
    CountComp(usize),
    /// Compensated count.
    CountMart(usize),
    /// Order-l impulse power sum into a state.
    ImpulseSum(usize, usize),
    /// Compensated impulse power sum.
    ImpulseMart(usize, usize),
    /// Orthonormal power-jump basis element (by kept position, 1-based).
    BasisH(usize),
    /// Orthonormal impulse basis element for a state (kept position, 1-based).
    BasisG(usize, usize),
}

impl Process {
    /// Stable column name for the path store.
    pub fn name(&self) -> &'static str {
        match self {
            Process::ChainState => "J",
            Process::LevyComponent => "Xbar",
            Process::Full => "X",
            Process::JumpSum => "GammaSum",
            Process::PowerSum(_) => "Xpow",
            Process::PowerMart(_) => "XbarPow",
            Process::Count(_) => "Phi",
            Process::CountComp(_) => "phi",
            Process::CountMart(_) => "PhiBar",
            Process::ImpulseSum(_, _) => "Psi",
            Process::ImpulseMart(_, _) => "PsiBar",
            Process::BasisH(_) => "H",
            Process::BasisG(_, _) => "G",
        }
    }

    /// 1-based state column (0 when not applicable).
    pub fn state_column(&self) -> usize {
        match self {
            Process::Count(j) | Process::CountComp(j) | Process::CountMart(j) => j + 1,
            Process::ImpulseSum(i, _) | Process::ImpulseMart(i, _) | Process::BasisG(i, _) => i + 1,
            _ => 0,
        }
    }

    /// Order column (0 when not applicable).
    pub fn order_column(&self) -> usize {
        match self {
            Process::PowerSum(k) | Process::PowerMart(k) | Process::BasisH(k) => *k,
            Process::ImpulseSum(_, l) | Process::ImpulseMart(_, l) | Process::BasisG(_, l) => *l,
            _ => 0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Process::ChainState => "J".into(),
            Process::LevyComponent => "Xbar".into(),
            Process::Full => "X".into(),
            Process::JumpSum => "GammaSum".into(),
            Process::PowerSum(k) => format!("Xpow_{k}"),
            Process::PowerMart(k) => format!("XbarPow_{k}"),
            Process::Count(j) => format!("Phi_{}", j + 1),
            Process::CountComp(j) => format!("phi_{}", j + 1),
            Process::CountMart(j) => format!("PhiBar_{}", j + 1),
            Process::ImpulseSum(i, l) => format!("Psi_{}_{l}", i + 1),
            Process::ImpulseMart(i, l) => format!("PsiBar_{}_{l}", i + 1),
            Process::BasisH(k) => format!("H_{k}"),
            Process::BasisG(i, l) => format!("G_{}_{l}", i + 1),
        }
    }
}

/// Evaluator bound to one realization.
pub struct DerivedPath<'a> {
    pub scn: &'a Scenario,
    pub real: &'a PathRealization,
}

impl<'a> DerivedPath<'a> {
    pub fn new(scn: &'a Scenario, real: &'a PathRealization) -> Self {
        DerivedPath { scn, real }
    }

    pub fn xbar(&self, t: f64) -> f64 {
        self.real.levy.value_at(t)
    }

    fn jumps_until(&self, t: f64) -> usize {
        self.real.jump_times.partition_point(|&e| e <= t)
    }

    /// Order-k power sum of the Levy jumps up to t (k >= 2); order 1 is the
    /// component itself.
    pub fn power_sum(&self, k: usize, t: f64) -> f64 {
        if k == 1 {
            return self.xbar(t);
        }
        self.real.jump_power_prefix[k - 1][self.jumps_until(t)]
    }

    /// Compensator making the order-k power process a martingale. For k = 1
    /// it includes the drift.
    pub fn power_compensator(&self, k: usize, t: f64) -> f64 {
        let params = &self.scn.levy_params;
        let mut total = 0.0;
        for state in 0..self.scn.n_states() {
            let occ = self.real.chain.occupation(state, t);
            if occ != 0.0 {
                let mut rate = params.jump_rate * self.scn.gamma_moment(state, k);
                if k == 1 {
                    rate += params.drift[state];
                }
                total += occ * rate;
            }
        }
        total
    }

    pub fn power_mart(&self, k: usize, t: f64) -> f64 {
        if k == 1 {
            self.xbar(t) - self.power_compensator(1, t)
        } else {
            self.power_sum(k, t) - self.power_compensator(k, t)
        }
    }

    pub fn count(&self, j: usize, t: f64) -> f64 {
        self.real.counting.count(j, t)
    }

    pub fn count_comp(&self, j: usize, t: f64) -> f64 {
        self.real.counting.compensator(j, t)
    }

    pub fn count_mart(&self, j: usize, t: f64) -> f64 {
        self.real.counting.martingale(j, t)
    }

    pub fn impulse_sum(&self, i: usize, l: usize, t: f64) -> f64 {
        self.real.impulse.power_sum(i, l, t)
    }

    pub fn impulse_mart(&self, i: usize, l: usize, t: f64) -> f64 {
        self.impulse_sum(i, l, t) - self.scn.impulse_moment(i, l) * self.count_comp(i, t)
    }

    /// Full process: Levy component plus all first-order impulse sums.
    pub fn full(&self, t: f64) -> f64 {
        let mut x = self.xbar(t);
        for i in 0..self.scn.n_states() {
            x += self.impulse_sum(i, 1, t);
        }
        x
    }

    pub fn jump_sum(&self, t: f64) -> f64 {
        self.real.jump_power_prefix[0][self.jumps_until(t)]
    }

    /// Power-jump basis element by kept position (1-based).
    pub fn basis_h(&self, position: usize, t: f64) -> f64 {
        let coeffs = self.scn.h_coeffs();
        let row = &coeffs.rows[position - 1];
        let mut v = 0.0;
        for (k, &c) in row.iter().enumerate() {
            if c != 0.0 {
                v += c * self.power_mart(k + 1, t);
            }
        }
        v
    }

    /// Impulse basis element by state and kept position (1-based); panics if
    /// the state has no basis.
    pub fn basis_g(&self, i: usize, position: usize, t: f64) -> f64 {
        let coeffs = self.scn.impulse_coeffs[i]
            .as_ref()
            .expect("state has an impulse basis");
        let row = &coeffs.rows[position - 1];
        let mut v = 0.0;
        for (idx, &c) in row.iter().enumerate() {
            if c != 0.0 {
                let raw = if idx == 0 {
                    self.count_mart(i, t)
                } else {
                    self.impulse_mart(i, idx, t)
                };
                v += c * raw;
            }
        }
        v
    }

    pub fn value(&self, process: Process, t: f64) -> f64 {
        match process {
            Process::ChainState => (self.real.chain.state_at(t) + 1) as f64,
            Process::LevyComponent => self.xbar(t),
            Process::Full => self.full(t),
            Process::JumpSum => self.jump_sum(t),
            Process::PowerSum(k) => self.power_sum(k, t),
            Process::PowerMart(k) => self.power_mart(k, t),
            Process::Count(j) => self.count(j, t),
            Process::CountComp(j) => self.count_comp(j, t),
            Process::CountMart(j) => self.count_mart(j, t),
            Process::ImpulseSum(i, l) => self.impulse_sum(i, l, t),
            Process::ImpulseMart(i, l) => self.impulse_mart(i, l, t),
            Process::BasisH(k) => self.basis_h(k, t),
            Process::BasisG(i, l) => self.basis_g(i, l, t),
        }
    }

    /// Cross-sectional regression features at time t: state indicators,
    /// polynomials of the Levy component up to degree 3, counts, first-order
    /// impulse sums, plus the levels of every compensated regressor
    /// martingale. The last group keeps the conditional expectation of each
    /// catalog payoff inside the feature span, so the increment regressions
    /// stay unbiased.
    pub fn features(&self, t: f64, out: &mut Vec<f64>) {
        out.clear();
        let n = self.scn.n_states();
        let state = self.real.chain.state_at(t);
        for i in 0..n {
            out.push(if i == state { 1.0 } else { 0.0 });
        }
        let x = self.xbar(t);
        out.push(x);
        out.push(x * x);
        out.push(x * x * x);
        for j in 0..n {
            out.push(self.count(j, t));
        }
        for i in 0..n {
            out.push(self.impulse_sum(i, 1, t));
        }
        for k in 1..=self.scn.k_order() {
            out.push(self.power_mart(k, t));
        }
        for j in 0..n {
            out.push(self.count_mart(j, t));
        }
        for i in 0..n {
            for l in 1..=self.scn.l_order() {
                out.push(self.impulse_mart(i, l, t));
            }
        }
    }

    pub fn n_features(&self) -> usize {
        let n = self.scn.n_states();
        3 * n + 3 + self.scn.k_order() + n * (1 + self.scn.l_order())
    }

    /// Feature set interacted with martingale increments in the integrand
    /// regressions: the boundary catalog without the cubic term. Integrands
    /// of the payoff catalog are at most quadratic in the component, and
    /// noise on cubic-interacted coefficients amplifies in the tails of the
    /// component faster than any sample can pin down.
    pub fn interaction_features(&self, t: f64, out: &mut Vec<f64>) {
        out.clear();
        let n = self.scn.n_states();
        let state = self.real.chain.state_at(t);
        for i in 0..n {
            out.push(if i == state { 1.0 } else { 0.0 });
        }
        let x = self.xbar(t);
        out.push(x);
        out.push(x * x);
        for j in 0..n {
            out.push(self.count(j, t));
        }
        for i in 0..n {
            out.push(self.impulse_sum(i, 1, t));
        }
        for k in 1..=self.scn.k_order() {
            out.push(self.power_mart(k, t));
        }
        for j in 0..n {
            out.push(self.count_mart(j, t));
        }
        for i in 0..n {
            for l in 1..=self.scn.l_order() {
                out.push(self.impulse_mart(i, l, t));
            }
        }
    }

    pub fn n_interaction_features(&self) -> usize {
        self.n_features() - 1
    }

    /// Exact increments of the compensated regressor martingales over (a, b]:
    /// power orders 1..=k_order, counts, impulse orders 1..=l_order.
    pub fn martingale_increments(
        &self,
        a: f64,
        b: f64,
        k_order: usize,
        l_order: usize,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let n = self.scn.n_states();
        let params = &self.scn.levy_params;
        let ja = self.jumps_until(a);
        let jb = self.jumps_until(b);
        let mut occ = Vec::with_capacity(n);
        for state in 0..n {
            occ.push(self.real.chain.occupation_between(state, a, b));
        }
        for k in 1..=k_order {
            let jump_part = if k == 1 {
                self.xbar(b) - self.xbar(a)
            } else {
                self.real.jump_power_prefix[k - 1][jb] - self.real.jump_power_prefix[k - 1][ja]
            };
            let mut comp = 0.0;
            for state in 0..n {
                if occ[state] != 0.0 {
                    let mut rate = params.jump_rate * self.scn.gamma_moment(state, k);
                    if k == 1 {
                        rate += params.drift[state];
                    }
                    comp += occ[state] * rate;
                }
            }
            out.push(jump_part - comp);
        }
        for j in 0..n {
            let dn = self.count(j, b) - self.count(j, a);
            out.push(dn - self.real.counting.compensator_between(j, a, b));
        }
        for i in 0..n {
            let dcomp = self.real.counting.compensator_between(i, a, b);
            for l in 1..=l_order {
                let ds = self.impulse_sum(i, l, b) - self.impulse_sum(i, l, a);
                out.push(ds - self.scn.impulse_moment(i, l) * dcomp);
            }
        }
    }

    pub fn n_regressors(&self, k_order: usize, l_order: usize) -> usize {
        k_order + self.scn.n_states() * (1 + l_order)
    }

    /// Predictable-bracket increments of the regressor martingales over
    /// (a, b], in `martingale_increments` order. These are the measures under
    /// which the corresponding integrands are identified.
    pub fn bracket_increments(
        &self,
        a: f64,
        b: f64,
        k_order: usize,
        l_order: usize,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let n = self.scn.n_states();
        let params = &self.scn.levy_params;
        let mut occ = Vec::with_capacity(n);
        for state in 0..n {
            occ.push(self.real.chain.occupation_between(state, a, b));
        }
        for k in 1..=k_order {
            let mut w = 0.0;
            for state in 0..n {
                if occ[state] != 0.0 {
                    let mut rate = params.jump_rate * self.scn.gamma_moment(state, 2 * k);
                    if k == 1 {
                        let sigma = params.volatility[state];
                        rate += sigma * sigma;
                    }
                    w += occ[state] * rate;
                }
            }
            out.push(w);
        }
        for j in 0..n {
            out.push(self.real.counting.compensator_between(j, a, b));
        }
        for i in 0..n {
            let dcomp = self.real.counting.compensator_between(i, a, b);
            for l in 1..=l_order {
                out.push(self.scn.impulse_moment(i, 2 * l) * dcomp);
            }
        }
    }
}

/// Names of the regressor martingales in `martingale_increments` order.
pub fn regressor_labels(n_states: usize, k_order: usize, l_order: usize) -> Vec<String> {
    let mut labels = Vec::new();
    for k in 1..=k_order {
        labels.push(format!("XbarPow_{k}"));
    }
    for j in 0..n_states {
        labels.push(format!("PhiBar_{}", j + 1));
    }
    for i in 0..n_states {
        for l in 1..=l_order {
            labels.push(format!("PsiBar_{}_{l}", i + 1));
        }
    }
    labels
}
