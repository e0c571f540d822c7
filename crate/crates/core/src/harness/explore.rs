//! Tabulates the valid `(q, c)` region for several cluster sizes.

use serde::Serialize;

use crate::assignment::{AssignmentError, ClusterParams};
use crate::quorum::{constraint_region, RegionPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub n: usize,
    pub m: usize,
    pub f: usize,
    pub points: Vec<RegionPoint>,
}

impl Region {
    /// Points where the closed-form rule and the brute-force oracle disagree.
    pub fn mismatches(&self) -> Vec<RegionPoint> {
        self.points
            .iter()
            .filter(|p| p.valid_rule != p.valid_oracle)
            .copied()
            .collect()
    }

    /// ASCII grid: rows are `c` descending, columns are `q`.
    /// `M` and `R` mark the fixed MultiPaxos and RSPaxos points, `*` the
    /// other boundary points, `+` the rest of the valid region.
    pub fn grid(&self) -> String {
        let mut s = format!("n = {} (m = {}, f = {})\n", self.n, self.m, self.f);
        for c in (1..=self.m).rev() {
            s.push_str(&format!("c={c:<2}|"));
            for q in 1..=self.n {
                let p = self.points.iter().find(|p| p.q == q && p.c == c).expect("full grid");
                let ch = if p.multipaxos {
                    'M'
                } else if p.rspaxos {
                    'R'
                } else if p.candidate {
                    '*'
                } else if p.valid_rule {
                    '+'
                } else {
                    '.'
                };
                s.push(' ');
                s.push(ch);
            }
            s.push('\n');
        }
        s.push_str("    +");
        s.push_str(&"--".repeat(self.n));
        s.push_str("\n    q");
        for q in 1..=self.n {
            s.push_str(&format!("{:>2}", q % 10));
        }
        s.push('\n');
        s
    }
}

pub fn explore(n: usize) -> Result<Region, AssignmentError> {
    let params = ClusterParams::new(n)?;
    Ok(Region {
        n,
        m: params.m,
        f: params.f,
        points: constraint_region(&params),
    })
}
