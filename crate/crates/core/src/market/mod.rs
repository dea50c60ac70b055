//! DC-OPF market clearing with aggregator bids and locational prices.

mod network;

pub use network::{compute_ptdf, Generator, Line, Load, Network};

use serde::Serialize;
use thiserror::Error;

use crate::bidding::BidCurve;
use crate::solver::{solve_qp, QpProblem, QpSolution, QpStatus, SolveOptions, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("aggregator {agg} sits at unknown bus {bus}")]
    BadBus { agg: usize, bus: usize },
    #[error("expected {expected} bids, got {got}")]
    BidCount { expected: usize, got: usize },
    #[error("aggregator {agg} supplied {got} samples; at least 2 are needed")]
    TooFewSamples { agg: usize, got: usize },
    #[error("aggregator {agg} bounds are invalid: [{lo}, {hi}]")]
    BadBounds { agg: usize, lo: f64, hi: f64 },
    #[error("market infeasible at slot {slot}: load {load:.3} kW against generation range [{gen_min:.3}, {gen_max:.3}] kW or line limits")]
    Infeasible { slot: usize, load: f64, gen_min: f64, gen_max: f64 },
    #[error("market unbounded at slot {slot}")]
    Unbounded { slot: usize },
    #[error("segment re-selection did not settle after {iterations} solves at slot {slot}; last moves {moves:?}")]
    Oscillation { slot: usize, iterations: usize, moves: Vec<(usize, usize, usize)> },
    #[error("solver failed at slot {slot}: {source}")]
    Solver { slot: usize, source: SolverError },
}

/// One optimal clearing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingResult {
    pub slot: usize,
    pub dispatch: Vec<f64>,
    pub allocations: Vec<f64>,
    pub lambda: f64,
    pub line_duals_lower: Vec<f64>,
    pub line_duals_upper: Vec<f64>,
    pub lmps: Vec<f64>,
    pub objective: f64,
    pub flows: Vec<f64>,
    pub binding_lines: Vec<usize>,
    pub solver_iterations: usize,
    /// Solves spent by segment re-selection (1 when the first guess holds).
    pub refinements: usize,
}

/// `λ + Σ_l δ_bl (χ̲_l − χ̄_l)`.
pub fn lmp(lambda: f64, lower: &[f64], upper: &[f64], ptdf: &[Vec<f64>], bus: usize) -> f64 {
    lambda + ptdf.iter().zip(lower.iter().zip(upper)).map(|(row, (lo, up))| row[bus] * (lo - up)).sum::<f64>()
}

/// Network plus where each aggregator withdraws.
#[derive(Debug, Clone)]
pub struct Market {
    pub network: Network,
    pub agg_buses: Vec<usize>,
    pub options: SolveOptions,
}

/// How an aggregator's withdrawal enters the rows: `x_k = Σ coef·var`.
type Expr = Vec<(usize, f64)>;

struct Model {
    qp: QpProblem,
    balance: usize,
    /// Upper and lower row of each finite-limit line.
    line_rows: Vec<Option<(usize, usize)>>,
    allocs: Vec<Expr>,
}

impl Market {
    pub fn new(network: Network, agg_buses: Vec<usize>) -> Result<Self, MarketError> {
        for (agg, &bus) in agg_buses.iter().enumerate() {
            if bus >= network.buses {
                return Err(MarketError::BadBus { agg, bus });
            }
        }
        Ok(Self { network, agg_buses, options: SolveOptions::default() })
    }

    pub fn aggregators(&self) -> usize {
        self.agg_buses.len()
    }

    fn check_count(&self, got: usize) -> Result<(), MarketError> {
        if got != self.aggregators() {
            return Err(MarketError::BidCount { expected: self.aggregators(), got });
        }
        Ok(())
    }

    /// Starts a problem with generator variables `0..G` and `extra` more.
    fn base(&self, extra: usize) -> QpProblem {
        let gens = &self.network.generators;
        let mut qp = QpProblem::new(gens.len() + extra);
        for (i, g) in gens.iter().enumerate() {
            qp.set_bounds(i, g.p_min, g.p_max);
            qp.add_diag(i, 2.0 * g.a);
            qp.linear[i] = g.b;
            qp.constant += g.c;
        }
        qp
    }

    fn finish_model(&self, mut qp: QpProblem, allocs: Vec<Expr>, t: usize) -> Model {
        let net = &self.network;
        let mut bal: Vec<(usize, f64)> = (0..net.generators.len()).map(|i| (i, -1.0)).collect();
        bal.extend(allocs.iter().flatten().copied());
        let balance = qp.add_eq(&bal, -net.load_total(t));
        let line_rows = net
            .lines
            .iter()
            .zip(&net.ptdf)
            .map(|(line, row)| {
                if !line.limit.is_finite() {
                    return None;
                }
                let mut terms: Vec<(usize, f64)> =
                    net.generators.iter().enumerate().map(|(i, g)| (i, row[g.bus])).collect();
                for (k, e) in allocs.iter().enumerate() {
                    let d = row[self.agg_buses[k]];
                    terms.extend(e.iter().map(|&(j, c)| (j, -d * c)));
                }
                let fixed: f64 = net.loads.iter().map(|d| row[d.bus] * d.at(t)).sum();
                let up = qp.add_ineq(&terms, line.limit + fixed);
                let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, c)| (j, -c)).collect();
                let lo = qp.add_ineq(&neg, line.limit - fixed);
                Some((up, lo))
            })
            .collect();
        Model { qp, balance, line_rows, allocs }
    }

    fn solve(&self, model: &Model, t: usize) -> Result<(QpSolution, ClearingResult), MarketError> {
        let sol = solve_qp(&model.qp, &self.options).map_err(|source| MarketError::Solver { slot: t, source })?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                let gens = &self.network.generators;
                return Err(MarketError::Infeasible {
                    slot: t,
                    load: self.network.load_total(t),
                    gen_min: gens.iter().map(|g| g.p_min).sum(),
                    gen_max: gens.iter().map(|g| g.p_max).sum(),
                });
            }
            QpStatus::Unbounded => return Err(MarketError::Unbounded { slot: t }),
        }
        let net = &self.network;
        let ng = net.generators.len();
        let x = &sol.primal;
        let dispatch = x[..ng].to_vec();
        let allocations: Vec<f64> = model.allocs.iter().map(|e| e.iter().map(|&(j, c)| c * x[j]).sum()).collect();
        let lambda = sol.duals_eq[model.balance];
        let nl = net.lines.len();
        let (mut lower, mut upper) = (vec![0.0; nl], vec![0.0; nl]);
        for (l, rows) in model.line_rows.iter().enumerate() {
            if let Some((up, lo)) = *rows {
                upper[l] = sol.duals_ineq[up];
                lower[l] = sol.duals_ineq[lo];
            }
        }
        let lmps = self.agg_buses.iter().map(|&b| lmp(lambda, &lower, &upper, &net.ptdf, b)).collect();
        let flows: Vec<f64> = (0..nl).map(|l| net.line_flow(l, &dispatch, t, &self.agg_buses, &allocations)).collect();
        let binding_lines = (0..nl)
            .filter(|&l| (flows[l].abs() - net.lines[l].limit).abs() <= 1e-7 * (1.0 + net.lines[l].limit))
            .collect();
        let result = ClearingResult {
            slot: t,
            dispatch,
            allocations,
            lambda,
            line_duals_lower: lower,
            line_duals_upper: upper,
            lmps,
            objective: sol.objective,
            flows,
            binding_lines,
            solver_iterations: sol.iterations,
            refinements: 1,
        };
        Ok((sol, result))
    }

    /// Linearized clearing over sampled bids `(x, u(x))`; each aggregator's
    /// withdrawal is a convex combination of its samples.
    pub fn clear_p4(&self, samples: &[Vec<(f64, f64)>], t: usize) -> Result<ClearingResult, MarketError> {
        self.check_count(samples.len())?;
        let mut points: Vec<Vec<(f64, f64)>> = Vec::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            if s.len() < 2 {
                return Err(MarketError::TooFewSamples { agg: k, got: s.len() });
            }
            let mut p = s.clone();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            p.dedup_by(|a, b| a.0 == b.0);
            // a single point means a fixed zero withdrawal
            if p.len() == 1 {
                p.clear();
            }
            points.push(p);
        }
        let ng = self.network.generators.len();
        let total: usize = points.iter().map(Vec::len).sum();
        let mut qp = self.base(total);
        let mut allocs = Vec::with_capacity(points.len());
        let mut next = ng;
        let mut convex_rows = Vec::new();
        for p in &points {
            let vars: Vec<usize> = (next..next + p.len()).collect();
            next += p.len();
            for (&j, &(_, u)) in vars.iter().zip(p) {
                qp.set_bounds(j, 0.0, f64::INFINITY);
                qp.linear[j] = -u;
            }
            if !vars.is_empty() {
                convex_rows.push(vars.iter().map(|&j| (j, 1.0)).collect::<Vec<_>>());
            }
            allocs.push(vars.iter().zip(p).map(|(&j, &(x, _))| (j, x)).collect());
        }
        for row in convex_rows {
            qp.add_eq(&row, 1.0);
        }
        let model = self.finish_model(qp, allocs, t);
        Ok(self.solve(&model, t)?.1)
    }

    /// Exact clearing with each aggregator's active quadratic piece,
    /// starting from the segments holding the P4 allocations.
    pub fn refine_p5(&self, curves: &[BidCurve], p4: &ClearingResult, t: usize) -> Result<ClearingResult, MarketError> {
        self.check_count(curves.len())?;
        self.check_count(p4.allocations.len())?;
        let mut seg: Vec<Option<usize>> =
            curves.iter().zip(&p4.allocations).map(|(c, &x)| c.segment_index(x.clamp(0.0, c.domain_max))).collect();
        let total_segments: usize = curves.iter().map(|c| c.segments.len()).sum();
        let limit = (2 * total_segments).max(1);
        let mut iterations = 0;
        let mut solver_iters = 0;
        loop {
            iterations += 1;
            let mut res = self.solve_segments(curves, &seg, t)?;
            solver_iters += res.solver_iterations;
            let moves = self.segment_moves(curves, &seg, &res);
            if moves.is_empty() {
                res.solver_iterations = solver_iters;
                res.refinements = iterations;
                return Ok(res);
            }
            if iterations >= limit {
                return Err(MarketError::Oscillation { slot: t, iterations, moves });
            }
            log::debug!("slot {t}: segment moves {moves:?}");
            for &(k, _, to) in &moves {
                seg[k] = Some(to);
            }
        }
    }

    fn solve_segments(
        &self,
        curves: &[BidCurve],
        seg: &[Option<usize>],
        t: usize,
    ) -> Result<ClearingResult, MarketError> {
        let ng = self.network.generators.len();
        let active = seg.iter().filter(|s| s.is_some()).count();
        let mut qp = self.base(active);
        let mut allocs = Vec::with_capacity(curves.len());
        let mut j = ng;
        for (c, s) in curves.iter().zip(seg) {
            match s {
                None => allocs.push(Vec::new()),
                Some(s) => {
                    let piece = &c.segments[*s];
                    let (c0, c1, c2) = piece.coefficients();
                    qp.set_bounds(j, piece.x_lo, piece.x_hi);
                    qp.linear[j] = -c1;
                    qp.add_diag(j, -2.0 * c2);
                    qp.constant -= c0;
                    allocs.push(vec![(j, 1.0)]);
                    j += 1;
                }
            }
        }
        let model = self.finish_model(qp, allocs, t);
        Ok(self.solve(&model, t)?.1)
    }

    /// Aggregators whose allocation sits on a segment edge while the price
    /// says the optimum lies in the neighbour: `(agg, from, to)`.
    fn segment_moves(
        &self,
        curves: &[BidCurve],
        seg: &[Option<usize>],
        res: &ClearingResult,
    ) -> Vec<(usize, usize, usize)> {
        let mut moves = Vec::new();
        for (k, (c, s)) in curves.iter().zip(seg).enumerate() {
            let Some(s) = *s else { continue };
            let piece = &c.segments[s];
            let x = res.allocations[k];
            let price = res.lmps[k];
            let tx = 1e-9 * (1.0 + c.domain_max);
            let tp = 1e-9 * (1.0 + price.abs());
            if s + 1 < c.segments.len() && x >= piece.x_hi - tx && price < c.segments[s + 1].marginal_lo - tp {
                moves.push((k, s, s + 1));
            } else if s > 0 && x <= piece.x_lo + tx && price > c.segments[s - 1].marginal_hi() + tp {
                moves.push((k, s, s - 1));
            }
        }
        moves
    }

    /// P4 on `extra` samples beyond the curve anchors, then P5.
    pub fn clear(
        &self,
        curves: &[BidCurve],
        extra: usize,
        t: usize,
    ) -> Result<(ClearingResult, ClearingResult), MarketError> {
        let samples: Vec<Vec<(f64, f64)>> = curves.iter().map(|c| c.sample_with_extra(extra)).collect();
        let p4 = self.clear_p4(&samples, t)?;
        let p5 = self.refine_p5(curves, &p4, t)?;
        Ok((p4, p5))
    }

    /// Epigraph clearing of piecewise-linear concave bids: `τ_k` is capped
    /// by every affine piece of the curve.
    pub fn clear_p3_linear(&self, curves: &[BidCurve], t: usize) -> Result<ClearingResult, MarketError> {
        self.check_count(curves.len())?;
        let ng = self.network.generators.len();
        let live: Vec<usize> = (0..curves.len()).filter(|&k| !curves[k].is_degenerate()).collect();
        let mut qp = self.base(2 * live.len());
        let mut allocs = vec![Vec::new(); curves.len()];
        let mut epi_rows = Vec::new();
        for (i, &k) in live.iter().enumerate() {
            let (xv, tau) = (ng + 2 * i, ng + 2 * i + 1);
            qp.set_bounds(xv, 0.0, curves[k].domain_max);
            qp.linear[tau] = -1.0;
            for s in &curves[k].segments {
                // τ − m·x ≤ u_lo − m·x_lo
                epi_rows.push((vec![(tau, 1.0), (xv, -s.marginal_lo)], s.u_lo - s.marginal_lo * s.x_lo));
            }
            allocs[k] = vec![(xv, 1.0)];
        }
        for (row, rhs) in epi_rows {
            qp.add_ineq(&row, rhs);
        }
        let model = self.finish_model(qp, allocs, t);
        Ok(self.solve(&model, t)?.1)
    }

    /// Cost-only clearing with `x_k ∈ [lo_k, hi_k]`. A lower bound above
    /// the cap is clamped to the cap.
    pub fn clear_p3_bounds(&self, bounds: &[(f64, f64)], t: usize) -> Result<ClearingResult, MarketError> {
        self.check_count(bounds.len())?;
        let ng = self.network.generators.len();
        let mut qp = self.base(bounds.len());
        let mut allocs = Vec::with_capacity(bounds.len());
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi >= 0.0) || !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
                return Err(MarketError::BadBounds { agg: k, lo, hi });
            }
            let lo = if lo > hi {
                log::warn!("slot {t}: aggregator {k} lower bound {lo:.4} exceeds cap {hi:.4}; clamped");
                hi
            } else {
                lo
            };
            qp.set_bounds(ng + k, lo, hi);
            allocs.push(vec![(ng + k, 1.0)]);
        }
        let model = self.finish_model(qp, allocs, t);
        Ok(self.solve(&model, t)?.1)
    }

    /// Checks balance, line limits, dual signs, complementarity, and that
    /// prices follow from `λ` and the line duals.
    pub fn check_result(&self, r: &ClearingResult) -> Result<(), String> {
        let net = &self.network;
        let t = r.slot;
        let load = net.load_total(t) + r.allocations.iter().sum::<f64>();
        let imbalance = r.dispatch.iter().sum::<f64>() - load;
        if imbalance.abs() > 1e-8 * (1.0 + load.abs()) {
            return Err(format!("slot {t}: energy imbalance {imbalance:e}"));
        }
        for (l, line) in net.lines.iter().enumerate() {
            let f = r.flows[l];
            if f.abs() > line.limit + 1e-8 {
                return Err(format!("slot {t}: line {l} flow {f} exceeds {}", line.limit));
            }
            let (lo, up) = (r.line_duals_lower[l], r.line_duals_upper[l]);
            if lo < -1e-9 || up < -1e-9 {
                return Err(format!("slot {t}: negative line dual on line {l}"));
            }
            let dual_scale = 1e-7 * (1.0 + r.lambda.abs());
            if (up > dual_scale && f < line.limit - 1e-6 * (1.0 + line.limit))
                || (lo > dual_scale && f > -line.limit + 1e-6 * (1.0 + line.limit))
            {
                return Err(format!("slot {t}: line {l} has a dual but is not binding (flow {f})"));
            }
        }
        for (k, &b) in self.agg_buses.iter().enumerate() {
            let expect = lmp(r.lambda, &r.line_duals_lower, &r.line_duals_upper, &net.ptdf, b);
            if expect != r.lmps[k] {
                return Err(format!("slot {t}: lmp {k} is {} but duals give {expect}", r.lmps[k]));
            }
        }
        Ok(())
    }
}
