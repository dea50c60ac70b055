//! DC network data and injection-shift factors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MarketError;

/// Convex generator cost `a·p² + b·p + c` ($/slot with `p` in kW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        self.a * p * p + self.b * p + self.c
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.a * p + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Thermal limit in kW; non-finite means unconstrained.
    pub limit: f64,
    pub reactance: f64,
}

/// Fixed demand at a bus. The series is periodic in its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub series: Vec<f64>,
}

impl Load {
    pub fn at(&self, t: usize) -> f64 {
        self.series[t % self.series.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub buses: usize,
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub lines: Vec<Line>,
    /// `ptdf[l][b]`: flow on line `l` per kW injected at bus `b` and
    /// withdrawn at the slack bus.
    pub ptdf: Vec<Vec<f64>>,
}

impl Network {
    /// Validates the data and computes shift factors from reactances.
    pub fn new(
        buses: usize,
        slack_bus: usize,
        generators: Vec<Generator>,
        loads: Vec<Load>,
        lines: Vec<Line>,
    ) -> Result<Self, MarketError> {
        let mut net = Self { buses, slack_bus, generators, loads, lines, ptdf: Vec::new() };
        net.validate_data()?;
        net.ptdf = compute_ptdf(buses, slack_bus, &net.lines)?;
        Ok(net)
    }

    /// Like [`Network::new`] but with shift factors given verbatim.
    pub fn with_ptdf(
        buses: usize,
        slack_bus: usize,
        generators: Vec<Generator>,
        loads: Vec<Load>,
        lines: Vec<Line>,
        ptdf: Vec<Vec<f64>>,
    ) -> Result<Self, MarketError> {
        let net = Self { buses, slack_bus, generators, loads, lines, ptdf };
        net.validate_data()?;
        if net.ptdf.len() != net.lines.len() || net.ptdf.iter().any(|r| r.len() != buses) {
            return Err(MarketError::InvalidNetwork("ptdf must be lines x buses".into()));
        }
        if net.ptdf.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MarketError::InvalidNetwork("ptdf has non-finite entries".into()));
        }
        if net.ptdf.iter().any(|r| r[slack_bus] != 0.0) {
            return Err(MarketError::InvalidNetwork("slack bus column of the ptdf must be zero".into()));
        }
        Ok(net)
    }

    fn validate_data(&self) -> Result<(), MarketError> {
        let bad = |m: String| Err(MarketError::InvalidNetwork(m));
        if self.buses == 0 {
            return bad("network has no buses".into());
        }
        if self.slack_bus >= self.buses {
            return bad(format!("slack bus {} out of range", self.slack_bus));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= self.buses {
                return bad(format!("generator {i} at unknown bus {}", g.bus));
            }
            if !(g.a >= 0.0) || !g.b.is_finite() || !g.c.is_finite() {
                return bad(format!("generator {i} cost must be convex and finite"));
            }
            if !(g.p_min <= g.p_max) || !g.p_min.is_finite() || !g.p_max.is_finite() {
                return bad(format!("generator {i} has p_min {} > p_max {}", g.p_min, g.p_max));
            }
        }
        for (j, d) in self.loads.iter().enumerate() {
            if d.bus >= self.buses {
                return bad(format!("load {j} at unknown bus {}", d.bus));
            }
            if d.series.is_empty() || d.series.iter().any(|v| !v.is_finite()) {
                return bad(format!("load {j} has an empty or non-finite series"));
            }
        }
        for (l, line) in self.lines.iter().enumerate() {
            if line.from >= self.buses || line.to >= self.buses || line.from == line.to {
                return bad(format!("line {l} has invalid endpoints {} -> {}", line.from, line.to));
            }
            if !(line.limit > 0.0) {
                return bad(format!("line {l} limit must be positive"));
            }
            if line.reactance == 0.0 || !line.reactance.is_finite() {
                return bad(format!("line {l} reactance must be finite and nonzero"));
            }
        }
        Ok(())
    }

    /// Total fixed load at slot `t`.
    pub fn load_total(&self, t: usize) -> f64 {
        self.loads.iter().map(|d| d.at(t)).sum()
    }

    /// Flow on line `l` for the given injections and withdrawals.
    pub fn line_flow(&self, l: usize, dispatch: &[f64], t: usize, agg_buses: &[usize], allocations: &[f64]) -> f64 {
        let row = &self.ptdf[l];
        let gen: f64 = self.generators.iter().zip(dispatch).map(|(g, p)| row[g.bus] * p).sum();
        let load: f64 = self.loads.iter().map(|d| row[d.bus] * d.at(t)).sum();
        let agg: f64 = agg_buses.iter().zip(allocations).map(|(&b, x)| row[b] * x).sum();
        gen - load - agg
    }

    pub fn gen_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }
}

/// Shift factors w.r.t. the slack bus from line reactances.
pub fn compute_ptdf(buses: usize, slack: usize, lines: &[Line]) -> Result<Vec<Vec<f64>>, MarketError> {
    check_connected(buses, lines)?;
    let idx = |b: usize| if b < slack { b } else { b - 1 };
    let n = buses - 1;
    let mut b_red = DMatrix::<f64>::zeros(n, n);
    for line in lines {
        let y = 1.0 / line.reactance;
        for (u, v) in [(line.from, line.to), (line.to, line.from)] {
            if u != slack {
                b_red[(idx(u), idx(u))] += y;
                if v != slack {
                    b_red[(idx(u), idx(v))] -= y;
                }
            }
        }
    }
    let x = if n == 0 {
        DMatrix::zeros(0, 0)
    } else {
        b_red.try_inverse().ok_or_else(|| MarketError::InvalidNetwork("susceptance matrix is singular".into()))?
    };
    let theta = |bus: usize, inj: usize| -> f64 {
        if bus == slack || inj == slack {
            0.0
        } else {
            x[(idx(bus), idx(inj))]
        }
    };
    Ok(lines
        .iter()
        .map(|line| (0..buses).map(|b| (theta(line.from, b) - theta(line.to, b)) / line.reactance).collect())
        .collect())
}

fn check_connected(buses: usize, lines: &[Line]) -> Result<(), MarketError> {
    let mut adj = vec![Vec::new(); buses];
    for l in lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; buses];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(b) => Err(MarketError::InvalidNetwork(format!("bus {b} is not connected to bus 0"))),
        None => Ok(()),
    }
}
